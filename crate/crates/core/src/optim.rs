//! First-order optimizers on flat parameter vectors.

use crate::error::{Error, Result};
use std::collections::VecDeque;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam moments with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::Shape(format!("Adam state of length {} given {} params, {} grads", self.m.len(), params.len(), grad.len())));
        }
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + ADAM_EPS);
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Objective value and Euclidean gradient.
pub type Evaluation = (f64, Vec<f64>);

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Method {
    GradientDescent,
    Lbfgs { memory: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineSearchOptions {
    pub max_iterations: usize,
    /// Stop once the gradient norm falls to this value.
    pub grad_tol: f64,
    /// Armijo sufficient-decrease constant.
    pub armijo: f64,
    pub max_backtracks: usize,
}

impl Default for LineSearchOptions {
    fn default() -> Self {
        Self { max_iterations: 500, grad_tol: 1e-8, armijo: 1e-4, max_backtracks: 60 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad: Vec<f64>,
    pub grad_norm: f64,
    /// Objective at the start and after every accepted step; nonincreasing up to a relative
    /// round-off of `1e-10`.
    pub history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub line_search_failed: bool,
}

/// Curvature pairs of L-BFGS together with the trial step of the next line search.
#[derive(Clone, Debug, PartialEq)]
pub struct DescentState {
    pub pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)>,
    pub step0: f64,
}

impl Default for DescentState {
    fn default() -> Self {
        Self { pairs: VecDeque::new(), step0: 1.0 }
    }
}

/// One backtracking step from `(x, fx, g)`. Returns `None` when no step satisfies the
/// Armijo condition within the backtracking budget.
#[allow(clippy::too_many_arguments)]
pub fn descent_step(
    f: &mut dyn FnMut(&[f64]) -> Result<Evaluation>,
    x: &[f64],
    fx: f64,
    g: &[f64],
    method: Method,
    state: &mut DescentState,
    opts: &LineSearchOptions,
    precondition: &dyn Fn(&[f64]) -> Vec<f64>,
) -> Result<Option<(Vec<f64>, f64, Vec<f64>)>> {
    let mut dir = match method {
        Method::GradientDescent => precondition(g),
        Method::Lbfgs { .. } => two_loop(g, &state.pairs, precondition),
    };
    let mut slope = dot(g, &dir);
    if !(slope > 0.0) {
        // Not a descent direction: restart from the preconditioned gradient.
        state.pairs.clear();
        dir = precondition(g);
        slope = dot(g, &dir);
        if !(slope > 0.0) {
            return Ok(None);
        }
    }
    let mut t = state.step0;
    for _ in 0..opts.max_backtracks {
        let xt: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a - t * d).collect();
        let (ft, gt) = match f(&xt) {
            Ok(v) => v,
            // A trial point outside the domain of the forward map counts as a rejected step.
            Err(Error::Numeric(_) | Error::NonFinite(_)) => {
                t *= 0.5;
                continue;
            }
            Err(e) => return Err(e),
        };
        if accept(fx, ft, &gt, &dir, t, slope, opts.armijo) {
            match method {
                Method::Lbfgs { memory } => {
                    let s: Vec<f64> = xt.iter().zip(x).map(|(a, b)| a - b).collect();
                    let y: Vec<f64> = gt.iter().zip(g).map(|(a, b)| a - b).collect();
                    let sy = dot(&s, &y);
                    if memory > 0 && sy > 1e-14 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
                        if state.pairs.len() == memory {
                            state.pairs.pop_front();
                        }
                        state.pairs.push_back((s, y, 1.0 / sy));
                    }
                    state.step0 = 1.0;
                }
                Method::GradientDescent => state.step0 = (2.0 * t).min(1e12),
            }
            return Ok(Some((xt, ft, gt)));
        }
        t *= 0.5;
    }
    if matches!(method, Method::Lbfgs { .. }) && !state.pairs.is_empty() {
        // Retry once along the preconditioned gradient with the history dropped.
        state.pairs.clear();
        state.step0 = 1.0;
        return descent_step(f, x, fx, g, method, state, opts, precondition);
    }
    Ok(None)
}

/// Armijo decrease, or, once the change in `f` is below its round-off level, the
/// approximate Wolfe test `−σ g·d ≤ −g_t·d ≤ (1 − 2c) g·d` on directional derivatives.
fn accept(fx: f64, ft: f64, gt: &[f64], dir: &[f64], t: f64, slope: f64, c: f64) -> bool {
    if !ft.is_finite() || gt.iter().any(|v| !v.is_finite()) {
        return false;
    }
    if (fx - ft).abs() > F_NOISE * fx.abs() {
        return ft <= fx - c * t * slope;
    }
    let dt = -dot(gt, dir);
    dt <= (1.0 - 2.0 * c) * slope && dt >= -WOLFE_SIGMA * slope
}

const WOLFE_SIGMA: f64 = 0.9;

/// Relative size of objective changes treated as round-off.
const F_NOISE: f64 = 1e-10;

/// Line-searched descent with a preconditioner `P ≈ (∇²f)^{-1}` (for instance a Riesz map)
/// and gradient norm `norm`.
pub fn minimize(
    f: &mut dyn FnMut(&[f64]) -> Result<Evaluation>,
    x0: &[f64],
    method: Method,
    opts: &LineSearchOptions,
    precondition: &dyn Fn(&[f64]) -> Vec<f64>,
    norm: &dyn Fn(&[f64]) -> f64,
) -> Result<OptResult> {
    let mut x = x0.to_vec();
    let (mut fx, mut g) = f(&x)?;
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("objective at the initial point".into()));
    }
    let mut history = vec![fx];
    let mut state = DescentState::default();
    let mut gn = norm(&g);
    let mut iterations = 0;
    let mut failed = false;
    while gn > opts.grad_tol && iterations < opts.max_iterations {
        let Some((xt, ft, gt)) = descent_step(f, &x, fx, &g, method, &mut state, opts, precondition)? else {
            failed = true;
            break;
        };
        iterations += 1;
        x = xt;
        fx = ft;
        g = gt;
        gn = norm(&g);
        history.push(fx);
    }
    Ok(OptResult { x, value: fx, grad: g, grad_norm: gn, history, iterations, converged: gn <= opts.grad_tol, line_search_failed: failed })
}

/// `H g` for the L-BFGS inverse-Hessian approximation seeded by `γ P`.
fn two_loop(g: &[f64], pairs: &VecDeque<(Vec<f64>, Vec<f64>, f64)>, precondition: &dyn Fn(&[f64]) -> Vec<f64>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y, rho) in pairs.iter().rev() {
        let a = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    let mut r = precondition(&q);
    if let Some((s, y, _)) = pairs.back() {
        let py = precondition(y);
        let gamma = dot(s, y) / dot(y, &py);
        r.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in pairs.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &r);
        r.iter_mut().zip(s).for_each(|(ri, si)| *ri += (a - b) * si);
    }
    r
}

/// Euclidean norm.
pub fn euclidean_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}
