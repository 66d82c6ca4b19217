//! Output and derivative losses on the grid, their reduced and mixed-resolution forms, and
//! relative error metrics.

use crate::basis::{Basis, ModeBasis};
use crate::error::{invalid, shape, Error, Result};
use crate::jacobian::{jacobian_in_bases, DiffMode, JacobianMatrix};
use crate::operator::Operator;
use crate::spectral::{apply_weight, GridFunction, GridSpec, SpectralWeight};

/// Discrete Gram matrix `𝐖` realizing the output norm on nodal values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum WeightVariant {
    /// `h^d F^{-1} (1 + |k|²)^s F`.
    Spectral { s: f64 },
    /// `h^d (I − Δ_h)` with the second-order periodic stencil.
    FiniteDifferenceH1,
    /// `h^d I`.
    LumpedL2,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightingTensor {
    pub variant: WeightVariant,
    pub grid: GridSpec,
}

impl WeightingTensor {
    pub fn new(variant: WeightVariant, grid: GridSpec) -> Result<Self> {
        if let WeightVariant::Spectral { s } = variant {
            if !(s.is_finite() && s >= 0.0) {
                return invalid("spectral weighting order must be nonnegative");
            }
        }
        Ok(Self { variant, grid })
    }

    pub fn spectral(s: f64, grid: GridSpec) -> Result<Self> {
        Self::new(WeightVariant::Spectral { s }, grid)
    }

    /// The diagonal Fourier weight of the spectral variant.
    pub fn spectral_weight(&self) -> Option<SpectralWeight> {
        match self.variant {
            WeightVariant::Spectral { s } => Some(SpectralWeight::Sobolev { s }),
            _ => None,
        }
    }

    /// `𝐖 v`.
    pub fn apply(&self, v: &GridFunction) -> Result<GridFunction> {
        if v.grid() != self.grid {
            return Err(Error::Grid(format!("weighting tensor on {:?} applied to {:?}", self.grid, v.grid())));
        }
        let h = self.grid.cell_measure();
        match self.variant {
            WeightVariant::Spectral { s } => Ok(apply_weight(v, &SpectralWeight::Sobolev { s })),
            WeightVariant::LumpedL2 => Ok(v.scaled(h)),
            WeightVariant::FiniteDifferenceH1 => {
                let g = self.grid;
                let inv_dx2 = 1.0 / (g.spacing() * g.spacing());
                let m = g.len();
                let mut out = vec![0.0; v.values().len()];
                for c in 0..v.channels() {
                    let ch = v.channel(c);
                    for j in 0..m {
                        let idx = g.multi_index(j);
                        let mut lap = 0.0;
                        for axis in 0..g.dim() {
                            let mut nb = idx.clone();
                            nb[axis] = (idx[axis] + 1) % g.n();
                            let up = ch[g.flat_index(&nb)];
                            nb[axis] = (idx[axis] + g.n() - 1) % g.n();
                            let dn = ch[g.flat_index(&nb)];
                            lap += (up + dn - 2.0 * ch[j]) * inv_dx2;
                        }
                        out[c * m + j] = h * (ch[j] - lap);
                    }
                }
                GridFunction::new(g, v.channels(), out)
            }
        }
    }

    /// `vᵀ 𝐖 v`.
    pub fn quadratic(&self, v: &GridFunction) -> Result<f64> {
        let wv = self.apply(v)?;
        Ok(dot(v.values(), wv.values()))
    }

    pub fn inner(&self, u: &GridFunction, v: &GridFunction) -> Result<f64> {
        u.same_layout(v)?;
        Ok(dot(u.values(), self.apply(v)?.values()))
    }

    pub fn label(&self) -> String {
        match self.variant {
            WeightVariant::Spectral { s } => format!("spectral-H{s}"),
            WeightVariant::FiniteDifferenceH1 => "fd-H1".into(),
            WeightVariant::LumpedL2 => "lumped-L2".into(),
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `‖𝐖^{1/2}(pred − target)‖²` and its nodal gradient `2𝐖(pred − target)`.
pub fn output_loss(pred: &GridFunction, target: &GridFunction, w: &WeightingTensor) -> Result<(f64, GridFunction)> {
    let diff = pred.sub(target)?;
    let wd = w.apply(&diff)?;
    Ok((dot(diff.values(), wd.values()).max(0.0), wd.scaled(2.0)))
}

/// `‖J_pred − J_target‖²_F` and its gradient `2(J_pred − J_target)`.
pub fn derivative_loss(pred: &JacobianMatrix, target: &JacobianMatrix) -> Result<(f64, JacobianMatrix)> {
    pred.check_same_bases(target)?;
    let diff: Vec<f64> = pred.data.iter().zip(&target.data).map(|(a, b)| a - b).collect();
    let value = diff.iter().map(|x| x * x).sum();
    let grad = diff.into_iter().map(|x| 2.0 * x).collect();
    Ok((value, JacobianMatrix { data: grad, ..pred.clone() }))
}

/// `‖J^{rr}(a) − J̃^{rr}‖²_F` with the model Jacobian assembled in the given bases.
pub fn reduced_derivative_loss(
    model: &dyn Operator,
    a: &GridFunction,
    target: &JacobianMatrix,
    in_basis: &dyn Basis,
    out_basis: &dyn Basis,
) -> Result<f64> {
    if target.in_tag != in_basis.tag() {
        return Err(Error::BasisMismatch { expected: target.in_tag.clone(), found: in_basis.tag() });
    }
    if target.out_tag != out_basis.tag() {
        return Err(Error::BasisMismatch { expected: target.out_tag.clone(), found: out_basis.tag() });
    }
    if in_basis.is_empty() || out_basis.is_empty() {
        return Ok(0.0);
    }
    let lin = model.linearize(a)?;
    let pred = jacobian_in_bases(lin.as_ref(), a.grid(), in_basis, out_basis, DiffMode::Auto)?;
    Ok(derivative_loss(&pred, target)?.0)
}

/// Grids of a mixed-resolution derivative loss: outputs live on `high`, the model Jacobian
/// is evaluated on `eval`, and both bases are band-limited to what `basis` resolves.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResolutionLevels {
    pub high: GridSpec,
    pub eval: GridSpec,
    pub basis: GridSpec,
}

impl ResolutionLevels {
    pub fn new(high: GridSpec, eval: GridSpec, basis: GridSpec) -> Result<Self> {
        if !(basis.nests_in(&eval) && eval.nests_in(&high)) {
            return Err(Error::Grid("mixed-resolution grids must nest as basis ⊂ eval ⊂ high".into()));
        }
        Ok(Self { high, eval, basis })
    }

    /// Jacobian evaluated and represented on the coarse grid.
    pub fn two_level(high: GridSpec, low: GridSpec) -> Result<Self> {
        Self::new(high, low, low)
    }

    /// Largest cutoff strictly below the basis grid's Nyquist frequency.
    pub fn basis_cutoff(&self) -> usize {
        self.basis.max_cutoff()
    }

    pub fn bases(&self, channels_in: usize, channels_out: usize, x: SpectralWeight, y: SpectralWeight) -> Result<(ModeBasis, ModeBasis)> {
        let d = self.high.dim();
        Ok((
            ModeBasis::band_limited(d, channels_in, x, self.basis_cutoff())?,
            ModeBasis::band_limited(d, channels_out, y, self.basis_cutoff())?,
        ))
    }
}

/// Model Jacobian on `levels.eval` at the nodal restriction of `a_high`, in coarse bases.
pub fn coarse_model_jacobian(
    model: &dyn Operator,
    a_high: &GridFunction,
    levels: &ResolutionLevels,
    in_basis: &dyn Basis,
    out_basis: &dyn Basis,
) -> Result<JacobianMatrix> {
    if a_high.grid() != levels.high {
        return Err(Error::Grid("input is not on the high-resolution grid".into()));
    }
    let a = a_high.subsample(levels.eval)?;
    let lin = model.linearize(&a)?;
    jacobian_in_bases(lin.as_ref(), levels.eval, in_basis, out_basis, DiffMode::Auto)
}

pub fn mixed_res_derivative_loss(
    model: &dyn Operator,
    a_high: &GridFunction,
    target: &JacobianMatrix,
    levels: &ResolutionLevels,
    in_basis: &dyn Basis,
    out_basis: &dyn Basis,
) -> Result<f64> {
    let pred = coarse_model_jacobian(model, a_high, levels, in_basis, out_basis)?;
    Ok(derivative_loss(&pred, target)?.0)
}

/// Rows and columns of `full` (taken in `full_in`/`full_out`) that correspond to the
/// members of `sub_in`/`sub_out`, in the order of the sub-bases.
pub fn restrict_jacobian(
    full: &JacobianMatrix,
    full_in: &ModeBasis,
    full_out: &ModeBasis,
    sub_in: &ModeBasis,
    sub_out: &ModeBasis,
) -> Result<JacobianMatrix> {
    if full.rows != full_out.len() || full.cols != full_in.len() {
        return shape("Jacobian does not match the given full bases");
    }
    let locate = |full: &ModeBasis, sub: &ModeBasis| -> Result<Vec<usize>> {
        if full.weight() != sub.weight() {
            return invalid("restriction between bases with different inner products");
        }
        sub.entries()
            .iter()
            .map(|e| {
                full.entries()
                    .iter()
                    .position(|f| f == e)
                    .ok_or_else(|| Error::InvalidArgument(format!("mode {:?} is not in the full basis", e.0.k)))
            })
            .collect()
    };
    let cols = locate(full_in, sub_in)?;
    let rows = locate(full_out, sub_out)?;
    let data = rows.iter().flat_map(|&j| cols.iter().map(move |&k| (j, k))).map(|(j, k)| full.get(j, k)).collect();
    JacobianMatrix::new(rows.len(), cols.len(), data, sub_in.tag(), sub_out.tag())
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossReport {
    pub output_loss: f64,
    pub derivative_loss: f64,
    pub total: f64,
    /// `(output, derivative)` per sample.
    pub per_sample: Vec<(f64, f64)>,
}

impl LossReport {
    /// Monte Carlo means of per-sample terms.
    pub fn from_samples(per_sample: Vec<(f64, f64)>) -> Self {
        let n = per_sample.len().max(1) as f64;
        let output_loss = per_sample.iter().map(|p| p.0).sum::<f64>() / n;
        let derivative_loss = per_sample.iter().map(|p| p.1).sum::<f64>() / n;
        Self { output_loss, derivative_loss, total: output_loss + derivative_loss, per_sample }
    }
}

/// A test pair for error evaluation.
pub struct ErrorSample<'a> {
    pub input: &'a GridFunction,
    pub output: &'a GridFunction,
    pub jacobian: Option<&'a JacobianMatrix>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RelativeErrors {
    /// `None` when the target norm is zero.
    pub per_sample: Vec<(Option<f64>, Option<f64>)>,
    pub mean_output: f64,
    pub mean_derivative: f64,
    pub output_count: usize,
    pub derivative_count: usize,
}

/// `‖𝐖^{1/2}(G − N)‖ / ‖𝐖^{1/2} G‖` and `‖J − J̃‖_F / ‖J‖_F` per sample, with means over
/// the samples whose targets are nonzero. Model Jacobians use the bases of the stored targets.
pub fn relative_errors(
    model: &dyn Operator,
    samples: &[ErrorSample<'_>],
    w: &WeightingTensor,
    bases: Option<(&dyn Basis, &dyn Basis)>,
) -> Result<RelativeErrors> {
    let mut per_sample = Vec::with_capacity(samples.len());
    for s in samples {
        let lin = model.linearize(s.input)?;
        let den = w.quadratic(s.output)?.max(0.0).sqrt();
        let num = w.quadratic(&lin.output().sub(s.output)?)?.max(0.0).sqrt();
        let e_out = (den > 0.0).then(|| num / den);
        let e_der = match (s.jacobian, bases) {
            (Some(target), Some((xb, yb))) => {
                let pred = jacobian_in_bases(lin.as_ref(), s.input.grid(), xb, yb, DiffMode::Auto)?;
                pred.check_same_bases(target)?;
                let den = target.frobenius();
                let num = derivative_loss(&pred, target)?.0.sqrt();
                (den > 0.0).then(|| num / den)
            }
            _ => None,
        };
        per_sample.push((e_out, e_der));
    }
    let mean = |it: Vec<f64>| if it.is_empty() { f64::NAN } else { it.iter().sum::<f64>() / it.len() as f64 };
    let outs: Vec<f64> = per_sample.iter().filter_map(|p| p.0).collect();
    let ders: Vec<f64> = per_sample.iter().filter_map(|p| p.1).collect();
    Ok(RelativeErrors {
        output_count: outs.len(),
        derivative_count: ders.len(),
        mean_output: mean(outs),
        mean_derivative: mean(ders),
        per_sample,
    })
}
