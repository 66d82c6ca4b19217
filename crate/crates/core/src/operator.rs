//! Differentiable maps between grid-function spaces.

use crate::error::Result;
use crate::spectral::GridFunction;

/// An operator linearized at a fixed input.
pub trait Linearization {
    fn output(&self) -> &GridFunction;

    /// Directional derivative `DG(a) da`.
    fn jvp(&self, da: &GridFunction) -> Result<GridFunction>;

    /// Euclidean (nodal) adjoint of [`Linearization::jvp`].
    fn vjp(&self, du_bar: &GridFunction) -> Result<GridFunction>;
}

/// A differentiable map `a ↦ G(a)` evaluated on the grid of its input.
pub trait Operator: Send + Sync {
    fn in_channels(&self) -> usize;

    fn out_channels(&self) -> usize;

    fn linearize<'a>(&'a self, a: &GridFunction) -> Result<Box<dyn Linearization + 'a>>;

    /// Short description recorded in manifests.
    fn label(&self) -> String {
        "operator".into()
    }

    fn apply(&self, a: &GridFunction) -> Result<GridFunction> {
        Ok(self.linearize(a)?.output().clone())
    }
}
