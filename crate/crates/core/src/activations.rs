//! GELU-like activations `σ(x) = xΦ(x)` and the smooth building blocks assembled from
//! them: clipping, cutoff, absolute value, identity approximation and an `L²` cutoff
//! functional on band-limited fields. Each block has a calibration routine that searches
//! its scale parameter and certifies the result on a dense grid.

use crate::basis::{Basis, ModeBasis};
use crate::error::{invalid, Error, Result};
use crate::spectral::{project_modes, GridFunction, GridSpec, SpectralWeight};
use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Sigmoid `Φ` underlying a GELU-like activation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Sigmoid {
    NormalCdf,
    Logistic,
    /// `Φ(x) = (1 + tanh(a₁(x + a₂x³)))/2`.
    TanhCubic { a1: f64, a2: f64 },
}

impl Sigmoid {
    pub fn tanh_cubic() -> Self {
        Sigmoid::TanhCubic { a1: (2.0 / PI).sqrt(), a2: 0.044715 }
    }
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `σ(x) = xΦ(x)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeluLike {
    pub sigmoid: Sigmoid,
}

impl Default for GeluLike {
    fn default() -> Self {
        Self { sigmoid: Sigmoid::NormalCdf }
    }
}

impl GeluLike {
    pub fn new(sigmoid: Sigmoid) -> Self {
        Self { sigmoid }
    }

    /// `(Φ, Φ', Φ'')` at `x`.
    pub fn phi(&self, x: f64) -> (f64, f64, f64) {
        match self.sigmoid {
            Sigmoid::NormalCdf => {
                let tail = 0.5 * libm::erfc(x.abs() * FRAC_1_SQRT_2);
                let p = if x >= 0.0 { 1.0 - tail } else { tail };
                let d = (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
                (p, d, -x * d)
            }
            Sigmoid::Logistic => {
                let (p, q) = (logistic(x), logistic(-x));
                let d = p * q;
                (p, d, d * (q - p))
            }
            Sigmoid::TanhCubic { a1, a2 } => {
                let u2 = 2.0 * a1 * (x + a2 * x * x * x);
                let du2 = 2.0 * a1 * (1.0 + 3.0 * a2 * x * x);
                let ddu2 = 12.0 * a1 * a2 * x;
                let (p, q) = (logistic(u2), logistic(-u2));
                let l1 = p * q;
                let l2 = l1 * (q - p);
                (p, l1 * du2, l2 * du2 * du2 + l1 * ddu2)
            }
        }
    }

    /// `(σ(x), σ'(x))`.
    pub fn eval(&self, x: f64) -> (f64, f64) {
        let (p, d, _) = self.phi(x);
        (x * p, p + x * d)
    }

    /// `(σ, σ', σ'')`.
    pub fn eval2(&self, x: f64) -> (f64, f64, f64) {
        let (p, d, dd) = self.phi(x);
        (x * p, p + x * d, 2.0 * d + x * dd)
    }

    pub fn value(&self, x: f64) -> f64 {
        x * self.phi(x).0
    }

    pub fn derivative(&self, x: f64) -> f64 {
        self.eval(x).1
    }

    /// Largest deviation from `Φ(x) + Φ(-x) = 1` and whether `Φ` increases, on `points`
    /// nodes of `[-limit, limit]`.
    pub fn check_sigmoid(&self, limit: f64, points: usize) -> (f64, bool) {
        let mut worst = 0.0f64;
        let mut increasing = true;
        let mut last = f64::NEG_INFINITY;
        for i in 0..points {
            let x = -limit + 2.0 * limit * i as f64 / (points - 1) as f64;
            let (p, d, _) = self.phi(x);
            worst = worst.max((p + self.phi(-x).0 - 1.0).abs());
            if p < last || d <= 0.0 {
                increasing = false;
            }
            last = p;
        }
        (worst, increasing)
    }

    /// `sup_t |σ'(t)|`, attained at a finite point for every shipped sigmoid.
    pub fn sup_abs_derivative(&self) -> f64 {
        refined_sup(-40.0, 40.0, 1e-2, |t| self.derivative(t).abs()).max(1.0)
    }

    /// `sup_{t ≤ 0} |σ(t)|`.
    pub fn sup_abs_negative(&self) -> f64 {
        refined_sup(-60.0, 0.0, 1e-2, |t| self.value(t).abs())
    }

    pub fn label(&self) -> &'static str {
        match self.sigmoid {
            Sigmoid::NormalCdf => "gelu",
            Sigmoid::Logistic => "swish",
            Sigmoid::TanhCubic { .. } => "gelu-tanh",
        }
    }
}

/// Grid scan followed by golden-section refinement around the best node.
fn refined_sup(lo: f64, hi: f64, step: f64, f: impl Fn(f64) -> f64) -> f64 {
    let n = ((hi - lo) / step).ceil() as usize;
    let (mut best, mut at) = (f64::NEG_INFINITY, lo);
    for i in 0..=n {
        let x = (lo + i as f64 * step).min(hi);
        let v = f(x);
        if v > best {
            best = v;
            at = x;
        }
    }
    let (mut a, mut b) = ((at - step).max(lo), (at + step).min(hi));
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..80 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if f(c) > f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    best.max(f(0.5 * (a + b)))
}

/// Scale, shift and expansion point of a constructed function.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstructedFnParams {
    pub theta: f64,
    pub b: f64,
    pub x0: f64,
}

impl ConstructedFnParams {
    pub fn new(theta: f64, b: f64) -> Result<Self> {
        if !(theta > 0.0 && b > 0.0 && theta.is_finite() && b.is_finite()) {
            return invalid("constructed-function parameters must be positive");
        }
        Ok(Self { theta, b, x0: 0.0 })
    }
}

pub fn gelu_eval(act: &GeluLike, x: f64) -> (f64, f64) {
    act.eval(x)
}

/// `f(x) = [σ(θ(x+b)) − σ(θ(x−b))]/θ − b`.
pub fn clip_eval(act: &GeluLike, p: &ConstructedFnParams, x: f64) -> (f64, f64) {
    let (s1, d1) = act.eval(p.theta * (x + p.b));
    let (s2, d2) = act.eval(p.theta * (x - p.b));
    ((s1 - s2) / p.theta - p.b, d1 - d2)
}

/// `f(x) = [σ(θ(x−b−1)) − σ(θ(x−b))]/θ + 1`; both terms are shifted by `b`.
pub fn cutoff_eval(act: &GeluLike, p: &ConstructedFnParams, x: f64) -> (f64, f64) {
    let (s1, d1) = act.eval(p.theta * (x - p.b - 1.0));
    let (s2, d2) = act.eval(p.theta * (x - p.b));
    ((s1 - s2) / p.theta + 1.0, d1 - d2)
}

/// `f(x) = [σ(θx) + σ(−θx)]/θ`.
pub fn absval_eval(act: &GeluLike, p: &ConstructedFnParams, x: f64) -> (f64, f64) {
    let (s1, d1) = act.eval(p.theta * x);
    let (s2, d2) = act.eval(-p.theta * x);
    ((s1 + s2) / p.theta, d1 - d2)
}

/// `Id_θ(x) = [σ(x₀+θx) − σ(x₀−θx)] / (2θσ'(x₀))`.
pub fn identity_approx_eval(act: &GeluLike, p: &ConstructedFnParams, x: f64) -> Result<(f64, f64)> {
    let s0 = act.derivative(p.x0);
    if s0.abs() < 1e-300 {
        return invalid(format!("σ'(x₀) vanishes at x₀ = {}", p.x0));
    }
    let (s1, d1) = act.eval(p.x0 + p.theta * x);
    let (s2, d2) = act.eval(p.x0 - p.theta * x);
    Ok(((s1 - s2) / (2.0 * p.theta * s0), (d1 + d2) / (2.0 * s0)))
}

/// Proof constants `(M₀, M₁)` with `sup|Id_θ − x| ≤ M₀θ` and `sup|Id_θ' − 1| ≤ M₁θ` on `[−R, R]`.
pub fn identity_approx_bounds(act: &GeluLike, x0: f64, r: f64) -> (f64, f64) {
    let s0 = act.derivative(x0).abs();
    let sup = refined_sup(-r, r, 1e-3, |xi| {
        ((act.eval2(x0 + xi).2 - act.eval2(x0 - xi).2) / (2.0 * s0)).abs()
    });
    (sup * r * r / 2.0, sup * r)
}

/// Outcome of a calibration search.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Calibration {
    pub params: ConstructedFnParams,
    /// Certified sup of the value error over the relevant region.
    pub value_error: f64,
    /// Certified sup of the derivative error (zero where the lemma bounds only values).
    pub derivative_error: f64,
    /// Global bound on `|f|` and `|f'|` (for absval: on `|f'|`).
    pub bound_m: f64,
    pub grid_step: f64,
}

impl Calibration {
    pub fn error(&self) -> f64 {
        self.value_error.max(self.derivative_error)
    }
}

const THETA_MAX: f64 = 1e8;

fn cert_step(eps: f64) -> f64 {
    (1e-3f64).min(eps / 10.0)
}

/// `(sup |value error|, sup |derivative error|)` of `f` over `[lo, hi]` at spacing `step`.
fn scan(lo: f64, hi: f64, step: f64, f: impl Fn(f64) -> (f64, f64)) -> (f64, f64) {
    let n = ((hi - lo) / step).ceil() as usize;
    let (mut ev, mut ed) = (0.0f64, 0.0f64);
    for i in 0..=n {
        let x = (lo + i as f64 * step).min(hi);
        let (a, b) = f(x);
        ev = ev.max(a);
        ed = ed.max(b);
    }
    (ev, ed)
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps.is_finite()) {
        return invalid("tolerance must be positive");
    }
    Ok(())
}

fn not_calibrated(name: &str, best: f64) -> Error {
    Error::Numeric(format!("{name} calibration failed: θ exceeded 1e8, best error {best:e}"))
}

/// Doubling search on θ; `coarse` screens candidates and `dense` certifies.
fn doubling(
    name: &str,
    eps: f64,
    coarse: impl Fn(f64) -> (f64, f64),
    dense: impl Fn(f64) -> (f64, f64),
) -> Result<(f64, f64, f64)> {
    let mut theta = 1.0;
    let mut best = f64::INFINITY;
    while theta <= THETA_MAX {
        let (cv, cd) = coarse(theta);
        if cv.max(cd) <= eps {
            let (dv, dd) = dense(theta);
            if dv.max(dd) <= eps {
                return Ok((theta, dv, dd));
            }
            best = best.min(dv.max(dd));
        } else {
            best = best.min(cv.max(cd));
        }
        theta *= 2.0;
    }
    Err(not_calibrated(name, best))
}

/// Clipping function: `b = 2R`, θ doubled until the `C¹` error on `[−R, R]` is at most `eps`.
pub fn calibrate_clip(act: &GeluLike, eps: f64, r: f64) -> Result<Calibration> {
    check_eps(eps)?;
    if !(r > 0.0) {
        return invalid("clip radius must be positive");
    }
    let b = 2.0 * r;
    let step = cert_step(eps);
    let err = |theta: f64, h: f64| {
        let p = ConstructedFnParams { theta, b, x0: 0.0 };
        scan(-r, r, h, |x| {
            let (v, d) = clip_eval(act, &p, x);
            ((v - x).abs(), (d - 1.0).abs())
        })
    };
    let (theta, ev, ed) = doubling("clip", eps, |t| err(t, step.max(r / 500.0)), |t| err(t, step))?;
    let s = act.sup_abs_derivative();
    let bound_m = (2.0 * b / theta * s + b).max(2.0 * s);
    Ok(Calibration { params: ConstructedFnParams { theta, b, x0: 0.0 }, value_error: ev, derivative_error: ed, bound_m, grid_step: step })
}

/// Upper end of the far-field certification interval for the cutoff function.
pub fn cutoff_far_end(r: f64) -> f64 {
    4.0 * r + 100.0
}

/// Re-evaluates the cutoff regime errors: `C¹` distance to 1 on `[0, R]` and to 0 on `[4R, 4R+100]`.
pub fn cutoff_regime_errors(act: &GeluLike, p: &ConstructedFnParams, r: f64, step: f64) -> (f64, f64) {
    let near = scan(0.0, r, step, |x| {
        let (v, d) = cutoff_eval(act, p, x);
        ((v - 1.0).abs(), d.abs())
    });
    let far = scan(4.0 * r, cutoff_far_end(r), step, |x| {
        let (v, d) = cutoff_eval(act, p, x);
        (v.abs(), d.abs())
    });
    (near.0.max(far.0), near.1.max(far.1))
}

/// Cutoff function: `b = 2R` with `R > 1`.
pub fn calibrate_cutoff(act: &GeluLike, eps: f64, r: f64) -> Result<Calibration> {
    check_eps(eps)?;
    if !(r > 1.0) {
        return invalid("cutoff radius must exceed 1");
    }
    let b = 2.0 * r;
    let step = cert_step(eps);
    let err = |theta: f64, h: f64| cutoff_regime_errors(act, &ConstructedFnParams { theta, b, x0: 0.0 }, r, h);
    let (theta, ev, ed) = doubling("cutoff", eps, |t| err(t, 0.05), |t| err(t, step))?;
    let bound_m = 2.0 * act.sup_abs_derivative() + 1.0;
    Ok(Calibration { params: ConstructedFnParams { theta, b, x0: 0.0 }, value_error: ev, derivative_error: ed, bound_m, grid_step: step })
}

/// Half-width of the absolute-value certification interval.
pub const ABSVAL_RANGE: f64 = 1e3;

/// `sup |f_abs(x) − |x||` over `[−10³, 10³]`, scanning `[0, 10³]` since `f_abs` is even.
pub fn absval_error(act: &GeluLike, p: &ConstructedFnParams, step: f64) -> f64 {
    scan(0.0, ABSVAL_RANGE, step, |x| ((absval_eval(act, p, x).0 - x).abs(), 0.0)).0
}

/// Absolute value: θ doubled until the uniform error is at most `eps`.
pub fn calibrate_absval(act: &GeluLike, eps: f64) -> Result<Calibration> {
    check_eps(eps)?;
    let step = cert_step(eps);
    let err = |theta: f64, h: f64| (absval_error(act, &ConstructedFnParams { theta, b: 1.0, x0: 0.0 }, h), 0.0);
    // Screening resolves the error bump near |x| ~ 1/θ and skips the flat far field.
    let coarse = |theta: f64| {
        let p = ConstructedFnParams { theta, b: 1.0, x0: 0.0 };
        let near = (60.0 / theta).min(ABSVAL_RANGE);
        (scan(0.0, near, near / 2000.0, |x| ((absval_eval(act, &p, x).0 - x).abs(), 0.0)).0, 0.0)
    };
    let (theta, ev, _) = doubling("absval", eps, coarse, |t| err(t, step))?;
    let bound_m = 2.0 * act.sup_abs_derivative();
    Ok(Calibration { params: ConstructedFnParams { theta, b: 1.0, x0: 0.0 }, value_error: ev, derivative_error: 0.0, bound_m, grid_step: step })
}

/// `C¹` error of `Id_θ` on `[−R, R]`.
pub fn identity_errors(act: &GeluLike, p: &ConstructedFnParams, r: f64, step: f64) -> Result<(f64, f64)> {
    identity_approx_eval(act, p, 0.0)?;
    Ok(scan(-r, r, step, |x| {
        let (v, d) = identity_approx_eval(act, p, x).unwrap_or((f64::NAN, f64::NAN));
        ((v - x).abs(), (d - 1.0).abs())
    }))
}

/// Identity approximation: θ halved from 1 until the `C¹` error on `[−R, R]` is at most `eps`.
pub fn calibrate_identity(act: &GeluLike, eps: f64, r: f64, x0: f64) -> Result<Calibration> {
    check_eps(eps)?;
    if !(r > 0.0) {
        return invalid("identity radius must be positive");
    }
    let step = cert_step(eps);
    let mut theta = 1.0;
    let mut best = f64::INFINITY;
    while theta >= 1.0 / THETA_MAX {
        let p = ConstructedFnParams { theta, b: 1.0, x0 };
        let (ev, ed) = identity_errors(act, &p, r, step)?;
        if ev.max(ed) <= eps {
            let (m0, m1) = identity_approx_bounds(act, x0, r);
            return Ok(Calibration { params: p, value_error: ev, derivative_error: ed, bound_m: m0.max(m1), grid_step: step });
        }
        best = best.min(ev.max(ed));
        theta /= 2.0;
    }
    Err(not_calibrated("identity", best))
}

/// Numerical norm-equivalence constants on band-limited grid fields:
/// `C₂,₁ ‖v‖_{L²} ≤ ‖v‖_{L¹} ≤ C₁,₂ ‖v‖_{L²}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormEquivalence {
    pub c12: f64,
    pub c21: f64,
}

fn l1_l2_ratio(v: &[f64]) -> (f64, Vec<f64>) {
    let l1: f64 = v.iter().map(|x| x.abs()).sum();
    let l2 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let ratio = l1 / l2;
    let grad = v.iter().map(|&x| (x.signum() - ratio * x / l2) / l2).collect();
    (ratio, grad)
}

/// Extremises `‖v‖₁/‖v‖₂` over `|k|_∞ ≤ cutoff` on `grid` by projected ascent/descent
/// from several starts. Vector-valued fields reduce to the scalar case: the infimum is
/// unchanged and the supremum gains a factor `√channels`.
pub fn norm_equivalence(grid: GridSpec, cutoff: usize, channels: usize) -> Result<NormEquivalence> {
    let basis = ModeBasis::band_limited(grid.dim(), 1, SpectralWeight::L2, cutoff)?;
    let r = basis.len();
    let vecs: Vec<Vec<f64>> = (0..r)
        .map(|j| basis.synthesize(j, grid).map(GridFunction::into_values))
        .collect::<Result<_>>()?;
    let h = grid.cell_measure();
    let to_field = |c: &[f64]| {
        let mut v = vec![0.0; grid.len()];
        for (cj, vj) in c.iter().zip(&vecs) {
            for (a, b) in v.iter_mut().zip(vj) {
                *a += cj * b;
            }
        }
        v
    };
    let search = |start: Vec<f64>, sign: f64| -> f64 {
        let mut c = start;
        let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        c.iter_mut().for_each(|x| *x /= norm);
        let (mut best, _) = l1_l2_ratio(&to_field(&c));
        let mut step = 0.5;
        for _ in 0..400 {
            let v = to_field(&c);
            let (ratio, g) = l1_l2_ratio(&v);
            let gc: Vec<f64> = vecs.iter().map(|vj| vj.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>() * h).collect();
            let mut trial: Vec<f64> = c.iter().zip(&gc).map(|(a, b)| a + sign * step * b).collect();
            let tn = trial.iter().map(|x| x * x).sum::<f64>().sqrt();
            trial.iter_mut().for_each(|x| *x /= tn);
            let (tr, _) = l1_l2_ratio(&to_field(&trial));
            if sign * (tr - ratio) > 0.0 {
                c = trial;
                best = if sign > 0.0 { best.max(tr) } else { best.min(tr) };
                step *= 1.2;
            } else {
                step *= 0.5;
                if step < 1e-10 {
                    break;
                }
            }
        }
        best
    };
    // ‖v‖₁/‖v‖₂ in grid units times sqrt(h) gives the continuum-normalised ratio.
    let scale = h.sqrt();
    let mut starts: Vec<Vec<f64>> = Vec::new();
    let mut constant = vec![0.0; r];
    constant[0] = 1.0;
    starts.push(constant.clone());
    // Dirichlet-type kernel: all modes in phase at the origin.
    let origin: Vec<f64> = vecs.iter().map(|v| v[0]).collect();
    starts.push(origin);
    let mut s = 0x9E37_79B9_7F4A_7C15u64;
    for _ in 0..6 {
        starts.push(
            (0..r)
                .map(|_| {
                    s ^= s << 13;
                    s ^= s >> 7;
                    s ^= s << 17;
                    (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
                })
                .collect(),
        );
    }
    let mut c21 = f64::INFINITY;
    for st in &starts {
        c21 = c21.min(search(st.clone(), -1.0));
    }
    let mut c12 = 0.0f64;
    for st in starts.iter().take(3) {
        c12 = c12.max(search(st.clone(), 1.0));
    }
    if !(c21.is_finite() && c21 > 0.0) {
        return Err(Error::Numeric("norm-equivalence search failed".into()));
    }
    Ok(NormEquivalence { c12: c12 * scale * (channels as f64).sqrt(), c21: c21 * scale })
}

/// Parameters of the band-limited cutoff functional `F(v) = f_cutoff(∫ Σᵢ f_abs(vᵢ))`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CutoffFunctionalParams {
    pub abs: ConstructedFnParams,
    pub cut: ConstructedFnParams,
}

/// `F(v)` and its nodal gradient `f_cutoff'(·) f_abs'(v(x)) (2π/n)^d`.
pub fn cutoff_functional(act: &GeluLike, params: &CutoffFunctionalParams, v: &GridFunction) -> (f64, GridFunction) {
    let h = v.grid().cell_measure();
    let integral: f64 = v.values().iter().map(|&x| absval_eval(act, &params.abs, x).0).sum::<f64>() * h;
    let (value, dcut) = cutoff_eval(act, &params.cut, integral);
    let grad = v.values().iter().map(|&x| dcut * absval_eval(act, &params.abs, x).1 * h).collect();
    (value, GridFunction::from_raw(v.grid(), v.channels(), grad))
}

/// Calibrated cutoff functional on fields of band `cutoff` over `grid`.
#[derive(Clone, Debug, PartialEq)]
pub struct CutoffFunctional {
    pub act: GeluLike,
    pub grid: GridSpec,
    pub cutoff: usize,
    pub channels: usize,
    pub eps: f64,
    pub r: f64,
    pub constants: NormEquivalence,
    /// Inputs with `‖v‖ ≥ big_c · R` are mapped to within `eps` of zero.
    pub big_c: f64,
    pub abs: Calibration,
    pub cut: Calibration,
    /// Global bound on `|F|` and on the dual norm of `DF` over band-limited fields.
    pub bound_m: f64,
}

impl CutoffFunctional {
    pub fn calibrate(act: GeluLike, grid: GridSpec, cutoff: usize, channels: usize, eps: f64, r: f64) -> Result<Self> {
        check_eps(eps)?;
        if !(r > 1.0) {
            return invalid("cutoff functional radius must exceed 1");
        }
        let constants = norm_equivalence(grid, cutoff, channels)?;
        let NormEquivalence { c12, c21 } = constants;
        let eps1 = (c12 / 2.0).min(c21 / 2.0).min(1.0);
        let abs = calibrate_absval(&act, eps1 / (channels as f64 * grid.volume()))?;
        let r1 = 1.5 * c12 * r;
        let m_abs = abs.bound_m;
        let eps2 = eps.min(eps / (m_abs * c12));
        let cut = calibrate_cutoff(&act, eps2, r1)?;
        let bound_m = cut.bound_m * (m_abs * c12).max(1.0);
        Ok(Self {
            act,
            grid,
            cutoff,
            channels,
            eps,
            r,
            constants,
            big_c: 6.0 * c12 / c21 + 0.5,
            abs,
            cut,
            bound_m,
        })
    }

    pub fn params(&self) -> CutoffFunctionalParams {
        CutoffFunctionalParams { abs: self.abs.params, cut: self.cut.params }
    }

    pub fn eval(&self, v: &GridFunction) -> (f64, GridFunction) {
        cutoff_functional(&self.act, &self.params(), v)
    }

    /// Dual norm on the band-limited space of a nodal gradient.
    pub fn gradient_dual_norm(&self, grad: &GridFunction) -> Result<f64> {
        let riesz = grad.scaled(1.0 / grad.grid().cell_measure());
        Ok(project_modes(&riesz, self.cutoff)?.l2_norm())
    }
}
