//! Regularized inverse problems `min_a ½‖Γ^{-1/2}(H(G(a)) − y)‖² + (β/2)‖a‖²_{X_δ}` driven by
//! a reference model or a surrogate.

use crate::basis::Basis;
use crate::error::{invalid, shape, Error, Result};
use crate::jacobian::{jacobian_in_bases, DiffMode};
use crate::operator::{Linearization, Operator};
use crate::optim::{minimize, LineSearchOptions, Method};
use crate::spectral::{apply_weight, apply_weight_inverse, weighted_norm, GridFunction, GridSpec, SpectralWeight};
use rand_distr::{Distribution, StandardNormal};

/// Observation operator, noise model, regularization and data.
#[derive(Clone, Debug, PartialEq)]
pub struct InverseSpec {
    /// Flat indices into the nodal values of the forward output.
    pub observations: Vec<usize>,
    /// Noise standard deviation; `Γ = γ² I`.
    pub gamma: f64,
    pub beta: f64,
    pub regularization: SpectralWeight,
    pub data: Vec<f64>,
}

impl InverseSpec {
    pub fn validate(&self, output_len: usize) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) || !(self.beta > 0.0 && self.beta.is_finite()) {
            return invalid("noise scale and regularization weight must be positive");
        }
        self.regularization.validate()?;
        if self.data.len() != self.observations.len() {
            return shape(format!("{} data values for {} observations", self.data.len(), self.observations.len()));
        }
        if let Some(&i) = self.observations.iter().find(|&&i| i >= output_len) {
            return invalid(format!("observation index {i} out of range for {output_len} output values"));
        }
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("observed data".into()));
        }
        Ok(())
    }

    /// `H u`: nodal values at the observation indices.
    pub fn observe(&self, u: &GridFunction) -> Vec<f64> {
        self.observations.iter().map(|&i| u.values()[i]).collect()
    }

    /// `(β/2)‖a‖²_{X_δ}`.
    pub fn regularization_value(&self, a: &GridFunction) -> f64 {
        0.5 * self.beta * weighted_norm(a, &self.regularization).powi(2)
    }

    /// Nodal gradient `β 𝐖_δ a` of the regularization term.
    pub fn regularization_gradient(&self, a: &GridFunction) -> GridFunction {
        apply_weight(a, &self.regularization).scaled(self.beta)
    }

    /// `‖g‖_* = (gᵀ 𝐖_δ^{-1} g)^{1/2}`, the norm of a nodal gradient dual to `X_δ`.
    pub fn dual_norm(&self, g: &GridFunction) -> f64 {
        let r = apply_weight_inverse(g, &self.regularization);
        g.values().iter().zip(r.values()).map(|(x, y)| x * y).sum::<f64>().max(0.0).sqrt()
    }

    /// Riesz map of `β 𝐖_δ`, the Hessian of the regularization term.
    pub fn precondition(&self, g: &GridFunction) -> GridFunction {
        apply_weight_inverse(g, &self.regularization).scaled(1.0 / self.beta)
    }
}

/// Grid points `stride` apart along every axis, as flat indices of channel 0.
pub fn strided_observations(grid: GridSpec, stride: usize) -> Vec<usize> {
    let stride = stride.max(1);
    (0..grid.len()).filter(|&j| grid.multi_index(j).iter().all(|&i| i % stride == 0)).collect()
}

/// Clean observations `H G(a)` plus white noise of standard deviation `γ = fraction · RMS`.
/// Returns the data and `γ`.
pub fn synthesize_data(op: &dyn Operator, a: &GridFunction, observations: &[usize], fraction: f64, seed: u64) -> Result<(Vec<f64>, f64)> {
    let u = op.apply(a)?;
    let clean: Vec<f64> = observations.iter().map(|&i| u.values()[i]).collect();
    let rms = (clean.iter().map(|v| v * v).sum::<f64>() / clean.len().max(1) as f64).sqrt();
    let gamma = fraction * rms;
    let mut rng = crate::datagen::sample_rng(seed, u64::MAX);
    let data = clean
        .iter()
        .map(|v| {
            let xi: f64 = StandardNormal.sample(&mut rng);
            v + gamma * xi
        })
        .collect();
    Ok((data, gamma))
}

fn misfit(spec: &InverseSpec, u: &GridFunction) -> Vec<f64> {
    spec.observations.iter().zip(&spec.data).map(|(&i, y)| (u.values()[i] - y) / spec.gamma).collect()
}

pub fn objective_eval(spec: &InverseSpec, forward: &dyn Operator, a: &GridFunction) -> Result<f64> {
    let u = forward.apply(a)?;
    spec.validate(u.values().len())?;
    let r = misfit(spec, &u);
    Ok(0.5 * r.iter().map(|x| x * x).sum::<f64>() + spec.regularization_value(a))
}

fn value_and_grad_lin(spec: &InverseSpec, lin: &dyn Linearization, a: &GridFunction) -> Result<(f64, GridFunction)> {
    let u = lin.output();
    spec.validate(u.values().len())?;
    let r = misfit(spec, u);
    let mut ubar = GridFunction::zeros(u.grid(), u.channels());
    for (&i, ri) in spec.observations.iter().zip(&r) {
        ubar.values_mut()[i] += ri / spec.gamma;
    }
    let g = lin.vjp(&ubar)?.add_scaled(1.0, &spec.regularization_gradient(a))?;
    Ok((0.5 * r.iter().map(|x| x * x).sum::<f64>() + spec.regularization_value(a), g))
}

/// Objective value and its nodal gradient `∂F/∂a`, using one reverse product of the forward map.
pub fn objective_and_grad(spec: &InverseSpec, forward: &dyn Operator, a: &GridFunction) -> Result<(f64, GridFunction)> {
    let lin = forward.linearize(a)?;
    value_and_grad_lin(spec, lin.as_ref(), a)
}

pub fn objective_grad(spec: &InverseSpec, forward: &dyn Operator, a: &GridFunction) -> Result<GridFunction> {
    Ok(objective_and_grad(spec, forward, a)?.1)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InverseMethod {
    GradientDescent,
    Lbfgs,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveOptions {
    pub max_iterations: usize,
    /// Tolerance on the dual-norm gradient.
    pub tol: f64,
    pub memory: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { max_iterations: 500, tol: 1e-8, memory: 10 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptReport {
    pub minimizer: GridFunction,
    pub objective: f64,
    pub history: Vec<f64>,
    /// Dual-norm gradient at the minimizer.
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub line_search_failed: bool,
    /// `(E₀, E₁)` at the minimizer, when a reference map was supplied.
    pub surrogate_errors: Option<(f64, f64)>,
    pub bound: Option<ResidualBound>,
    /// [`compare_to_reference`] against a reference minimizer.
    pub reference_error: Option<f64>,
}

/// Line-searched minimization with the regularization Hessian as preconditioner.
pub fn solve_inverse(spec: &InverseSpec, forward: &dyn Operator, a0: &GridFunction, method: InverseMethod, opts: &SolveOptions) -> Result<OptReport> {
    let (grid, ch) = (a0.grid(), a0.channels());
    let field = |x: &[f64]| GridFunction::from_raw(grid, ch, x.to_vec());
    let mut f = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
        let (v, g) = objective_and_grad(spec, forward, &field(x))?;
        Ok((v, g.into_values()))
    };
    let method = match method {
        InverseMethod::GradientDescent => Method::GradientDescent,
        InverseMethod::Lbfgs => Method::Lbfgs { memory: opts.memory },
    };
    let ls = LineSearchOptions { max_iterations: opts.max_iterations, grad_tol: opts.tol, ..LineSearchOptions::default() };
    let r = minimize(
        &mut f,
        a0.values(),
        method,
        &ls,
        &|g| spec.precondition(&field(g)).into_values(),
        &|g| spec.dual_norm(&field(g)),
    )?;
    Ok(OptReport {
        minimizer: field(&r.x),
        objective: r.value,
        history: r.history,
        grad_norm: r.grad_norm,
        iterations: r.iterations,
        converged: r.converged,
        line_search_failed: r.line_search_failed,
        surrogate_errors: None,
        bound: None,
        reference_error: None,
    })
}

/// `‖a_s − a_r‖_{L²} / ‖a_r‖_{L²}`.
pub fn compare_to_reference(a_surrogate: &GridFunction, a_reference: &GridFunction) -> Result<f64> {
    let den = a_reference.l2_norm();
    if den == 0.0 {
        return invalid("reference field is zero");
    }
    Ok(a_surrogate.sub(a_reference)?.l2_norm() / den)
}

/// `G + s (G̃ − G)`: the surrogate `G̃` moved toward `G`, with errors scaled by `s`.
pub struct Blend<'a> {
    pub truth: &'a dyn Operator,
    pub surrogate: &'a dyn Operator,
    pub s: f64,
}

struct BlendLinearization<'a> {
    t: Box<dyn Linearization + 'a>,
    g: Box<dyn Linearization + 'a>,
    s: f64,
    output: GridFunction,
}

impl Linearization for BlendLinearization<'_> {
    fn output(&self) -> &GridFunction {
        &self.output
    }

    fn jvp(&self, da: &GridFunction) -> Result<GridFunction> {
        let a = self.t.jvp(da)?;
        a.scaled(1.0 - self.s).add_scaled(self.s, &self.g.jvp(da)?)
    }

    fn vjp(&self, du_bar: &GridFunction) -> Result<GridFunction> {
        let a = self.t.vjp(du_bar)?;
        a.scaled(1.0 - self.s).add_scaled(self.s, &self.g.vjp(du_bar)?)
    }
}

impl Operator for Blend<'_> {
    fn in_channels(&self) -> usize {
        self.truth.in_channels()
    }

    fn out_channels(&self) -> usize {
        self.truth.out_channels()
    }

    fn linearize<'b>(&'b self, a: &GridFunction) -> Result<Box<dyn Linearization + 'b>> {
        let t = self.truth.linearize(a)?;
        let g = self.surrogate.linearize(a)?;
        let output = t.output().scaled(1.0 - self.s).add_scaled(self.s, g.output())?;
        Ok(Box::new(BlendLinearization { t, g, s: self.s, output }))
    }

    fn label(&self) -> String {
        format!("blend(s={}, {}, {})", self.s, self.truth.label(), self.surrogate.label())
    }
}

/// `y ↦ K y` for the smoothing multiplier of [`crate::datagen::ToyOperator`]; a linear forward map.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearSmoother {
    pub kernel: crate::datagen::ToyOperator,
    /// Constant added to the output.
    pub offset: f64,
}

struct SmootherLinearization<'a> {
    op: &'a LinearSmoother,
    output: GridFunction,
}

impl Linearization for SmootherLinearization<'_> {
    fn output(&self) -> &GridFunction {
        &self.output
    }

    fn jvp(&self, da: &GridFunction) -> Result<GridFunction> {
        Ok(self.op.kernel.smooth(da))
    }

    fn vjp(&self, du_bar: &GridFunction) -> Result<GridFunction> {
        // The multiplier is real and even in k, so K is symmetric on nodal values.
        Ok(self.op.kernel.smooth(du_bar))
    }
}

impl Operator for LinearSmoother {
    fn in_channels(&self) -> usize {
        1
    }

    fn out_channels(&self) -> usize {
        1
    }

    fn linearize<'a>(&'a self, a: &GridFunction) -> Result<Box<dyn Linearization + 'a>> {
        let mut output = self.kernel.smooth(a);
        output.values_mut().iter_mut().for_each(|v| *v += self.offset);
        Ok(Box::new(SmootherLinearization { op: self, output }))
    }

    fn label(&self) -> String {
        format!("smoother(l={}, cutoff={}, offset={})", self.kernel.length, self.kernel.cutoff, self.offset)
    }
}

/// `E₀ = ‖G(a) − G̃(a)‖_{L²}` and `E₁ = ‖DG(a) − DG̃(a)‖_{HS}` with the derivative taken
/// in the given orthonormal bases.
pub fn surrogate_errors(truth: &dyn Operator, surrogate: &dyn Operator, a: &GridFunction, in_basis: &dyn Basis, out_basis: &dyn Basis) -> Result<(f64, f64)> {
    let t = truth.linearize(a)?;
    let g = surrogate.linearize(a)?;
    let e0 = t.output().sub(g.output())?.l2_norm();
    let jt = jacobian_in_bases(t.as_ref(), a.grid(), in_basis, out_basis, DiffMode::Forward)?;
    let jg = jacobian_in_bases(g.as_ref(), a.grid(), in_basis, out_basis, DiffMode::Forward)?;
    let e1 = jt.data.iter().zip(&jg.data).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    Ok((e0, e1))
}

/// Both sides of the residual bound at a surrogate minimizer `a†`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResidualBound {
    /// `‖Df(a†)‖_*` of the objective built on the true forward map.
    pub lhs: f64,
    /// `(‖G(a†)‖ + ‖DG(a†)‖ + ‖a†‖ + 1)(E₀ + E₁ + E₀E₁)`, before multiplying by the constant.
    pub factor: f64,
    pub e0: f64,
    pub e1: f64,
}

impl ResidualBound {
    pub fn rhs(&self, constant: f64) -> f64 {
        constant * self.factor
    }
}

pub fn residual_bound_eval(
    spec: &InverseSpec,
    truth: &dyn Operator,
    surrogate: &dyn Operator,
    a_dagger: &GridFunction,
    in_basis: &dyn Basis,
    out_basis: &dyn Basis,
) -> Result<ResidualBound> {
    let lin = truth.linearize(a_dagger)?;
    let (_, g) = value_and_grad_lin(spec, lin.as_ref(), a_dagger)?;
    let lhs = spec.dual_norm(&g);
    let (e0, e1) = surrogate_errors(truth, surrogate, a_dagger, in_basis, out_basis)?;
    let j = jacobian_in_bases(lin.as_ref(), a_dagger.grid(), in_basis, out_basis, DiffMode::Forward)?;
    let factor = (lin.output().l2_norm() + j.frobenius() + weighted_norm(a_dagger, &spec.regularization) + 1.0) * (e0 + e1 + e0 * e1);
    Ok(ResidualBound { lhs, factor, e0, e1 })
}

/// Smallest constant for which every calibration point satisfies `lhs ≤ C · factor`.
pub fn fit_bound_constant(calibration: &[ResidualBound]) -> f64 {
    calibration.iter().filter(|b| b.factor > 0.0).map(|b| b.lhs / b.factor).fold(0.0, f64::max)
}
