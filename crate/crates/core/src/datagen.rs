//! Training data: Matérn random fields, a periodic nonlinear diffusion–reaction solver with
//! forward and adjoint sensitivities, an analytic toy operator, and dataset assembly.

use crate::basis::{Basis, ModeBasis};
use crate::error::{invalid, Error, Result};
use crate::jacobian::{jacobian_in_bases, DiffMode, JacobianMatrix};
use crate::losses::ResolutionLevels;
use crate::operator::{Linearization, Operator};
use crate::reduction::ReducedBasis;
use crate::spectral::{dft_forward_unchecked, dft_inverse, project_modes, GridFunction, GridSpec, SpectralField, SpectralWeight};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};

/// Gaussian measure with covariance `(ωI − ρΔ)^{−τ}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GrfSpec {
    pub omega: f64,
    pub rho: f64,
    pub tau: f64,
    pub seed: u64,
}

impl Default for GrfSpec {
    fn default() -> Self {
        Self { omega: 10.0 / 3.0, rho: 1.0 / 30.0, tau: 2.0, seed: 0 }
    }
}

impl GrfSpec {
    pub fn new(omega: f64, rho: f64, tau: f64, seed: u64) -> Result<Self> {
        let s = Self { omega, rho, tau, seed };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega > 0.0 && self.rho > 0.0 && self.tau >= 2.0 && self.tau.is_finite()) {
            return invalid(format!("GRF spec needs ω > 0, ρ > 0, τ ≥ 2 (got {self:?})"));
        }
        Ok(())
    }

    /// `λ_k = (ω + ρ|k|²)^{−τ}`.
    pub fn eigenvalue(&self, k2: f64) -> f64 {
        (self.omega + self.rho * k2).powf(-self.tau)
    }

    /// Cameron–Martin weight `λ_k^{−1}`.
    pub fn cameron_martin(&self) -> SpectralWeight {
        SpectralWeight::Matern { omega: self.omega, rho: self.rho, tau: self.tau, power: 0.5 }
    }
}

/// Random stream of sample `index` under `seed`.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// `a = Σ_k λ_k^{1/2} ξ_k ψ_k` over the Nyquist-free `L²` sinusoids of `grid`.
pub fn sample_grf_at(spec: &GrfSpec, grid: GridSpec, index: u64) -> Result<GridFunction> {
    spec.validate()?;
    let basis = ModeBasis::band_limited(grid.dim(), 1, SpectralWeight::L2, grid.max_cutoff())?;
    let mut rng = sample_rng(spec.seed, index);
    let coeffs: Vec<f64> = basis
        .entries()
        .iter()
        .map(|(m, _)| {
            let xi: f64 = StandardNormal.sample(&mut rng);
            spec.eigenvalue(m.norm_sq()).sqrt() * xi
        })
        .collect();
    basis.combine(&coeffs, grid)
}

pub fn sample_grf(spec: &GrfSpec, grid: GridSpec, count: usize) -> Result<Vec<GridFunction>> {
    (0..count as u64).into_par_iter().map(|i| sample_grf_at(spec, grid, i)).collect()
}

/// Periodized Gaussian `amplitude · Σ_m exp(−|x − c − 2πm|² / (2 width²))`.
#[derive(Clone, Debug, PartialEq)]
pub struct Bump {
    pub center: Vec<f64>,
    pub width: f64,
    pub amplitude: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Forcing {
    Bumps(Vec<Bump>),
    /// Resampled spectrally onto other grids.
    Field(GridFunction),
}

impl Forcing {
    /// Bumps of width π/8 and unit amplitude centred at `(π/2 or 3π/2, …)`.
    pub fn four_bumps(dim: usize) -> Self {
        let mut bumps = Vec::new();
        for code in 0..(1usize << dim) {
            let center = (0..dim).map(|a| if code >> a & 1 == 0 { PI / 2.0 } else { 3.0 * PI / 2.0 }).collect();
            bumps.push(Bump { center, width: PI / 8.0, amplitude: 1.0 });
        }
        Forcing::Bumps(bumps)
    }

    pub fn on_grid(&self, grid: GridSpec) -> Result<GridFunction> {
        match self {
            Forcing::Field(f) => f.resample(grid),
            Forcing::Bumps(bumps) => {
                if bumps.iter().any(|b| b.center.len() != grid.dim()) {
                    return Err(Error::Grid("bump dimension does not match grid".into()));
                }
                let images = 3usize.pow(grid.dim() as u32);
                Ok(GridFunction::from_fn(grid, 1, |_, x| {
                    let mut total = 0.0;
                    for b in bumps {
                        for img in 0..images {
                            let mut r2 = 0.0;
                            let mut code = img;
                            for (xi, ci) in x.iter().zip(&b.center) {
                                let shift = (code % 3) as f64 - 1.0;
                                code /= 3;
                                let d = xi - ci - 2.0 * PI * shift;
                                r2 += d * d;
                            }
                            total += b.amplitude * (-r2 / (2.0 * b.width * b.width)).exp();
                        }
                    }
                    total
                }))
            }
        }
    }
}

/// `−∇·(e^a ∇u) + u³ = f` on the torus.
#[derive(Clone, Debug, PartialEq)]
pub struct PdeSpec {
    pub forcing: Forcing,
    /// On the `L²` norm of the band-limited residual.
    pub newton_tol: f64,
    pub max_newton: usize,
    /// Relative residual reduction of each conjugate-gradient solve.
    pub linear_tol: f64,
    pub max_linear: usize,
}

impl PdeSpec {
    pub fn new(forcing: Forcing) -> Self {
        Self { forcing, newton_tol: 1e-10, max_newton: 50, linear_tol: 1e-12, max_linear: 5000 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.newton_tol > 0.0 && self.linear_tol > 0.0 && self.max_newton > 0 && self.max_linear > 0) {
            return invalid("PDE tolerances and iteration caps must be positive");
        }
        Ok(())
    }
}

/// Spectral differentiation restricted to modes strictly below Nyquist.
struct SpectralOps {
    grid: GridSpec,
    keep: Vec<bool>,
    /// Wavevector components per axis and FFT index.
    k: Vec<Vec<f64>>,
    k2: Vec<f64>,
}

impl SpectralOps {
    fn new(grid: GridSpec) -> Self {
        let cutoff = grid.max_cutoff() as i64;
        let m = grid.len();
        let mut keep = Vec::with_capacity(m);
        let mut k = vec![Vec::with_capacity(m); grid.dim()];
        let mut k2 = Vec::with_capacity(m);
        for j in 0..m {
            let kv = grid.wavevector(j);
            keep.push(kv.iter().all(|v| v.abs() <= cutoff));
            for (a, &v) in kv.iter().enumerate() {
                k[a].push(v as f64);
            }
            k2.push(kv.iter().map(|&v| (v * v) as f64).sum());
        }
        Self { grid, keep, k, k2 }
    }

    fn forward(&self, v: &[f64]) -> Vec<Complex64> {
        let mut s = dft_forward_unchecked(&GridFunction::from_raw(self.grid, 1, v.to_vec())).coeffs().to_vec();
        for (c, &keep) in s.iter_mut().zip(&self.keep) {
            if !keep {
                *c = Complex64::new(0.0, 0.0);
            }
        }
        s
    }

    fn inverse(&self, s: Vec<Complex64>) -> Vec<f64> {
        dft_inverse(&SpectralField::new(self.grid, 1, s).expect("layout")).into_values()
    }

    fn project(&self, v: &[f64]) -> Vec<f64> {
        self.inverse(self.forward(v))
    }

    fn grad(&self, v: &[f64]) -> Vec<Vec<f64>> {
        let s = self.forward(v);
        (0..self.grid.dim())
            .map(|a| self.inverse(s.iter().zip(&self.k[a]).map(|(c, &k)| c * Complex64::new(0.0, k)).collect()))
            .collect()
    }

    fn div(&self, comps: &[Vec<f64>]) -> Vec<f64> {
        let mut acc = vec![Complex64::new(0.0, 0.0); self.grid.len()];
        for (a, c) in comps.iter().enumerate() {
            for ((o, z), &k) in acc.iter_mut().zip(self.forward(c)).zip(&self.k[a]) {
                *o += z * Complex64::new(0.0, k);
            }
        }
        self.inverse(acc)
    }

    /// `−∇·(κ ∇u)`.
    fn diffusion(&self, kappa: &[f64], u: &[f64]) -> Vec<f64> {
        let mut g = self.grad(u);
        for comp in &mut g {
            comp.iter_mut().zip(kappa).for_each(|(x, k)| *x *= k);
        }
        self.div(&g).into_iter().map(|x| -x).collect()
    }

    /// `(κ̄ |k|² + ε)^{-1}` on retained modes.
    fn precondition(&self, kappa_mean: f64, eps: f64, r: &[f64]) -> Vec<f64> {
        let s = self.forward(r);
        self.inverse(s.into_iter().zip(&self.k2).map(|(c, &k2)| c / (kappa_mean * k2 + eps)).collect())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Preconditioned conjugate gradients for a symmetric positive definite `apply`.
fn pcg(
    apply: impl Fn(&[f64]) -> Vec<f64>,
    precond: impl Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, usize)> {
    let bnorm = dot(b, b).sqrt();
    let mut x = vec![0.0; b.len()];
    if bnorm == 0.0 {
        return Ok((x, 0));
    }
    let mut r = b.to_vec();
    let mut z = precond(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for it in 1..=max_iter {
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::Numeric(format!("conjugate gradients lost positivity at iteration {it}")));
        }
        let alpha = rz / pap;
        x.iter_mut().zip(&p).for_each(|(xi, pi)| *xi += alpha * pi);
        r.iter_mut().zip(&ap).for_each(|(ri, api)| *ri -= alpha * api);
        if dot(&r, &r).sqrt() <= tol * bnorm {
            return Ok((x, it));
        }
        z = precond(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        p.iter_mut().zip(&z).for_each(|(pi, zi)| *pi = zi + beta * *pi);
    }
    Err(Error::Numeric(format!(
        "conjugate gradients did not reach relative residual {tol:e} in {max_iter} iterations"
    )))
}

#[derive(Clone, Debug)]
pub struct PdeSolution {
    pub u: GridFunction,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
}

/// Band-limited residual `P(−∇·(e^a∇u) + u³ − f)`.
fn residual(ops: &SpectralOps, kappa: &[f64], u: &[f64], f: &[f64]) -> Vec<f64> {
    let mut r = ops.diffusion(kappa, u);
    for ((ri, ui), fi) in r.iter_mut().zip(u).zip(f) {
        *ri += ui * ui * ui - fi;
    }
    ops.project(&r)
}

fn l2(grid: GridSpec, v: &[f64]) -> f64 {
    (grid.cell_measure() * dot(v, v)).sqrt()
}

fn check_scalar(a: &GridFunction) -> Result<()> {
    if a.channels() != 1 {
        return invalid("the diffusion–reaction coefficient is scalar");
    }
    if !a.is_finite() {
        return Err(Error::NonFinite("PDE coefficient".into()));
    }
    Ok(())
}

/// Newton's method with half-step damping on residual increase.
pub fn solve_pde(spec: &PdeSpec, a: &GridFunction) -> Result<PdeSolution> {
    spec.validate()?;
    check_scalar(a)?;
    let grid = a.grid();
    let ops = SpectralOps::new(grid);
    let f = ops.project(spec.forcing.on_grid(grid)?.values());
    let kappa: Vec<f64> = a.values().iter().map(|v| v.exp()).collect();
    let kappa_mean = kappa.iter().sum::<f64>() / kappa.len() as f64;
    let mean_f = f.iter().sum::<f64>() / f.len() as f64;
    let mut u = vec![mean_f.cbrt(); grid.len()];
    let mut r = residual(&ops, &kappa, &u, &f);
    let mut history = vec![l2(grid, &r)];
    let mut iterations = 0;
    while history[iterations] > spec.newton_tol {
        if iterations == spec.max_newton {
            return Err(Error::Numeric(format!("Newton did not converge; residual history {history:?}")));
        }
        let react: Vec<f64> = u.iter().map(|v| 3.0 * v * v).collect();
        let eps = (react.iter().sum::<f64>() / react.len() as f64).max(1e-10);
        let apply = |d: &[f64]| {
            let mut out = ops.diffusion(&kappa, d);
            out.iter_mut().zip(&react).zip(d).for_each(|((o, q), di)| *o += q * di);
            ops.project(&out)
        };
        let minus_r: Vec<f64> = r.iter().map(|v| -v).collect();
        let (step, _) = pcg(apply, |v| ops.precondition(kappa_mean, eps, v), &minus_r, spec.linear_tol, spec.max_linear)?;
        let current = history[iterations];
        let mut t = 1.0;
        let (mut trial, mut trial_r);
        loop {
            trial = u.iter().zip(&step).map(|(ui, si)| ui + t * si).collect::<Vec<_>>();
            trial_r = residual(&ops, &kappa, &trial, &f);
            if l2(grid, &trial_r) <= current || t < 1e-8 {
                break;
            }
            t *= 0.5;
        }
        u = trial;
        r = trial_r;
        history.push(l2(grid, &r));
        iterations += 1;
        if !history[iterations].is_finite() {
            return Err(Error::Numeric(format!("Newton diverged; residual history {history:?}")));
        }
    }
    Ok(PdeSolution { u: GridFunction::new(grid, 1, u)?, iterations, residual_history: history })
}

/// The linearized operator `δ ↦ P(−∇·(e^a∇δ) + 3u²δ)` at a solution, with its preconditioner,
/// shared by every forward and adjoint sensitivity solve at that point.
pub struct SensitivitySolver {
    ops: SpectralOps,
    kappa: Vec<f64>,
    kappa_mean: f64,
    react: Vec<f64>,
    eps: f64,
    u: GridFunction,
    grad_u: Vec<Vec<f64>>,
    linear_tol: f64,
    max_linear: usize,
    solves: AtomicUsize,
}

impl SensitivitySolver {
    pub fn new(spec: &PdeSpec, a: &GridFunction, u: &GridFunction) -> Result<Self> {
        check_scalar(a)?;
        if u.grid() != a.grid() || u.channels() != 1 {
            return invalid("state does not match coefficient");
        }
        let ops = SpectralOps::new(a.grid());
        let kappa: Vec<f64> = a.values().iter().map(|v| v.exp()).collect();
        let kappa_mean = kappa.iter().sum::<f64>() / kappa.len() as f64;
        let react: Vec<f64> = u.values().iter().map(|v| 3.0 * v * v).collect();
        let eps = (react.iter().sum::<f64>() / react.len() as f64).max(1e-10);
        let grad_u = ops.grad(u.values());
        Ok(Self {
            ops,
            kappa,
            kappa_mean,
            react,
            eps,
            u: u.clone(),
            grad_u,
            linear_tol: spec.linear_tol,
            max_linear: spec.max_linear,
            solves: AtomicUsize::new(0),
        })
    }

    fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.solves.fetch_add(1, Ordering::Relaxed);
        let apply = |d: &[f64]| {
            let mut out = self.ops.diffusion(&self.kappa, d);
            out.iter_mut().zip(&self.react).zip(d).for_each(|((o, q), di)| *o += q * di);
            self.ops.project(&out)
        };
        let b = self.ops.project(b);
        Ok(pcg(apply, |v| self.ops.precondition(self.kappa_mean, self.eps, v), &b, self.linear_tol, self.max_linear)?.0)
    }

    /// Linearized solves performed so far.
    pub fn solve_count(&self) -> usize {
        self.solves.load(Ordering::Relaxed)
    }

    /// `du` with `−∇·(e^a∇du) + 3u² du = ∇·(da e^a ∇u)`.
    pub fn forward(&self, da: &GridFunction) -> Result<GridFunction> {
        if da.grid() != self.u.grid() || da.channels() != 1 {
            return invalid("direction does not match state");
        }
        let flux: Vec<Vec<f64>> = self
            .grad_u
            .iter()
            .map(|g| g.iter().zip(&self.kappa).zip(da.values()).map(|((gi, k), d)| gi * k * d).collect())
            .collect();
        let rhs = self.ops.div(&flux);
        GridFunction::new(self.u.grid(), 1, self.solve(&rhs)?)
    }

    /// Nodal adjoint of [`SensitivitySolver::forward`]: `ā = −e^a ∇λ·∇u` with `λ` solving the
    /// (self-adjoint) linearized equation against `ū`.
    pub fn adjoint(&self, u_bar: &GridFunction) -> Result<GridFunction> {
        if u_bar.grid() != self.u.grid() || u_bar.channels() != 1 {
            return invalid("adjoint seed does not match state");
        }
        let lambda = self.solve(u_bar.values())?;
        let gl = self.ops.grad(&lambda);
        let mut out = vec![0.0; self.u.grid().len()];
        for (gla, gua) in gl.iter().zip(&self.grad_u) {
            for (((o, x), y), k) in out.iter_mut().zip(gla).zip(gua).zip(&self.kappa) {
                *o -= k * x * y;
            }
        }
        GridFunction::new(self.u.grid(), 1, out)
    }
}

pub fn solve_sensitivity(spec: &PdeSpec, a: &GridFunction, u: &GridFunction, da: &GridFunction) -> Result<GridFunction> {
    SensitivitySolver::new(spec, a, u)?.forward(da)
}

/// The parameter-to-state map of the diffusion–reaction equation.
#[derive(Clone, Debug, PartialEq)]
pub struct PdeOperator {
    pub spec: PdeSpec,
}

pub struct PdeLinearization {
    pub solution: PdeSolution,
    pub solver: SensitivitySolver,
}

impl Linearization for PdeLinearization {
    fn output(&self) -> &GridFunction {
        &self.solution.u
    }

    fn jvp(&self, da: &GridFunction) -> Result<GridFunction> {
        self.solver.forward(da)
    }

    fn vjp(&self, du_bar: &GridFunction) -> Result<GridFunction> {
        self.solver.adjoint(du_bar)
    }
}

impl PdeOperator {
    pub fn linearize_pde(&self, a: &GridFunction) -> Result<PdeLinearization> {
        let solution = solve_pde(&self.spec, a)?;
        let solver = SensitivitySolver::new(&self.spec, a, &solution.u)?;
        Ok(PdeLinearization { solution, solver })
    }
}

impl Operator for PdeOperator {
    fn in_channels(&self) -> usize {
        1
    }

    fn out_channels(&self) -> usize {
        1
    }

    fn label(&self) -> String {
        "diffusion-reaction".into()
    }

    fn linearize<'a>(&'a self, a: &GridFunction) -> Result<Box<dyn Linearization + 'a>> {
        Ok(Box::new(self.linearize_pde(a)?))
    }

    fn apply(&self, a: &GridFunction) -> Result<GridFunction> {
        Ok(solve_pde(&self.spec, a)?.u)
    }
}

/// `G(a) = K tanh(a)` with `K̂(k) = exp(−ℓ²|k|²/2)` for `|k|_∞ ≤ cutoff` and zero beyond.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ToyOperator {
    pub length: f64,
    pub cutoff: usize,
}

impl Default for ToyOperator {
    fn default() -> Self {
        Self { length: 0.3, cutoff: 6 }
    }
}

impl ToyOperator {
    pub fn multiplier(&self, k: &[i64]) -> f64 {
        if k.iter().any(|v| v.unsigned_abs() as usize > self.cutoff) {
            return 0.0;
        }
        let k2: f64 = k.iter().map(|&v| (v * v) as f64).sum();
        (-0.5 * self.length * self.length * k2).exp()
    }

    /// `K v`, dropping any multiplier entries the grid cannot resolve.
    pub fn smooth(&self, v: &GridFunction) -> GridFunction {
        let grid = v.grid();
        let half = grid.n() as i64 / 2;
        let mut s = dft_forward_unchecked(v);
        let m = grid.len();
        for j in 0..m {
            let k = grid.wavevector(j);
            let mult = if k.iter().any(|&x| x == -half) { 0.0 } else { self.multiplier(&k) };
            for c in 0..v.channels() {
                s.coeffs_mut()[c * m + j] *= mult;
            }
        }
        dft_inverse(&s)
    }
}

pub struct ToyLinearization<'a> {
    op: &'a ToyOperator,
    output: GridFunction,
    sech2: Vec<f64>,
}

impl Linearization for ToyLinearization<'_> {
    fn output(&self) -> &GridFunction {
        &self.output
    }

    fn jvp(&self, da: &GridFunction) -> Result<GridFunction> {
        da.same_layout(&self.output)?;
        let v: Vec<f64> = da.values().iter().zip(&self.sech2).map(|(d, s)| d * s).collect();
        Ok(self.op.smooth(&GridFunction::new(da.grid(), 1, v)?))
    }

    fn vjp(&self, du_bar: &GridFunction) -> Result<GridFunction> {
        du_bar.same_layout(&self.output)?;
        let k = self.op.smooth(du_bar);
        let v = k.values().iter().zip(&self.sech2).map(|(d, s)| d * s).collect();
        GridFunction::new(du_bar.grid(), 1, v)
    }
}

impl Operator for ToyOperator {
    fn in_channels(&self) -> usize {
        1
    }

    fn out_channels(&self) -> usize {
        1
    }

    fn label(&self) -> String {
        format!("toy(length={},cutoff={})", self.length, self.cutoff)
    }

    fn linearize<'a>(&'a self, a: &GridFunction) -> Result<Box<dyn Linearization + 'a>> {
        if a.channels() != 1 {
            return invalid("toy operator acts on scalar fields");
        }
        let t: Vec<f64> = a.values().iter().map(|v| v.tanh()).collect();
        let sech2 = t.iter().map(|v| 1.0 - v * v).collect();
        let output = self.smooth(&GridFunction::new(a.grid(), 1, t)?);
        Ok(Box::new(ToyLinearization { op: self, output, sech2 }))
    }
}

/// Which Jacobian targets accompany each sample.
#[derive(Clone, Debug, PartialEq)]
pub enum JacobianMode {
    None,
    /// Complete bases of the sample grid under the given input and output weights.
    Full { x: SpectralWeight, y: SpectralWeight },
    Reduced { input: ReducedBasis, output: ReducedBasis },
    /// Band-limited bases resolved by `levels.basis`; the target is taken at high
    /// resolution, or solved directly on `levels.eval` when `native`.
    Coarse { levels: ResolutionLevels, x: SpectralWeight, y: SpectralWeight, native: bool },
}

impl JacobianMode {
    pub fn label(&self) -> String {
        match self {
            JacobianMode::None => "none".into(),
            JacobianMode::Full { x, y } => format!("full x={} y={}", x.label(), y.label()),
            JacobianMode::Reduced { input, output } => format!("reduced in={} out={}", input.tag(), output.tag()),
            JacobianMode::Coarse { levels, x, y, native } => format!(
                "coarse high={} eval={} basis={} x={} y={} native={native}",
                levels.high.n(),
                levels.eval.n(),
                levels.basis.n(),
                x.label(),
                y.label()
            ),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OperatorSample {
    pub input: GridFunction,
    pub output: GridFunction,
    pub jacobian: Option<JacobianMatrix>,
    /// Linearized applications used to assemble the Jacobian.
    pub linear_solves: usize,
}

/// Counts JVP and VJP applications of a wrapped linearization.
struct Counting<'a> {
    inner: &'a dyn Linearization,
    count: AtomicUsize,
}

impl Linearization for Counting<'_> {
    fn output(&self) -> &GridFunction {
        self.inner.output()
    }

    fn jvp(&self, da: &GridFunction) -> Result<GridFunction> {
        self.count.fetch_add(1, Ordering::Relaxed);
        self.inner.jvp(da)
    }

    fn vjp(&self, du_bar: &GridFunction) -> Result<GridFunction> {
        self.count.fetch_add(1, Ordering::Relaxed);
        self.inner.vjp(du_bar)
    }
}

/// One sample at GRF index `index` with its Jacobian target.
pub fn generate_sample(op: &dyn Operator, grf: &GrfSpec, grid: GridSpec, index: u64, mode: &JacobianMode) -> Result<OperatorSample> {
    let a = sample_grf_at(grf, grid, index)?;
    let lin = op.linearize(&a)?;
    let counting = Counting { inner: lin.as_ref(), count: AtomicUsize::new(0) };
    let jacobian = match mode {
        JacobianMode::None => None,
        JacobianMode::Full { x, y } => {
            let xb = ModeBasis::complete(grid, op.in_channels(), *x)?;
            let yb = ModeBasis::complete(grid, op.out_channels(), *y)?;
            Some(jacobian_in_bases(&counting, grid, &xb, &yb, DiffMode::Auto)?)
        }
        JacobianMode::Reduced { input, output } => Some(jacobian_in_bases(&counting, grid, input, output, DiffMode::Auto)?),
        JacobianMode::Coarse { levels, x, y, native } => {
            if levels.high != grid {
                return Err(Error::Grid("coarse Jacobian levels do not start at the sample grid".into()));
            }
            let (xb, yb) = levels.bases(op.in_channels(), op.out_channels(), *x, *y)?;
            if *native {
                let coarse = op.linearize(&a.subsample(levels.eval)?)?;
                let c = Counting { inner: coarse.as_ref(), count: AtomicUsize::new(0) };
                let j = jacobian_in_bases(&c, levels.eval, &xb, &yb, DiffMode::Auto)?;
                counting.count.fetch_add(c.count.load(Ordering::Relaxed), Ordering::Relaxed);
                Some(j)
            } else {
                Some(jacobian_in_bases(&counting, grid, &xb, &yb, DiffMode::Auto)?)
            }
        }
    };
    let linear_solves = counting.count.load(Ordering::Relaxed);
    Ok(OperatorSample { input: a, output: lin.output().clone(), jacobian, linear_solves })
}

/// Samples `first..first + count` of the GRF stream, generated in parallel and returned in
/// index order, with a plain-text manifest.
pub fn generate_dataset(
    op: &dyn Operator,
    grf: &GrfSpec,
    grid: GridSpec,
    first: u64,
    count: usize,
    mode: &JacobianMode,
) -> Result<(Vec<OperatorSample>, String)> {
    grf.validate()?;
    let samples = (0..count as u64)
        .into_par_iter()
        .map(|i| {
            generate_sample(op, grf, grid, first + i, mode).map_err(|e| Error::Numeric(format!("sample {}: {e}", first + i)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut manifest = String::new();
    let _ = writeln!(manifest, "operator = {}", op.label());
    let _ = writeln!(manifest, "grid.dim = {}", grid.dim());
    let _ = writeln!(manifest, "grid.n = {}", grid.n());
    let _ = writeln!(manifest, "grf.omega = {}", grf.omega);
    let _ = writeln!(manifest, "grf.rho = {}", grf.rho);
    let _ = writeln!(manifest, "grf.tau = {}", grf.tau);
    let _ = writeln!(manifest, "grf.seed = {}", grf.seed);
    let _ = writeln!(manifest, "first_index = {first}");
    let _ = writeln!(manifest, "count = {count}");
    let _ = writeln!(manifest, "jacobian = {}", mode.label());
    let solves: usize = samples.iter().map(|s| s.linear_solves).sum();
    let _ = writeln!(manifest, "linear_solves = {solves}");
    Ok((samples, manifest))
}

/// `(Σ‖G(a) − P_N G(P_N a)‖² / Σ‖G(a)‖²)^{1/2}` over GRF draws `0..draws`, for each cutoff.
pub fn truncation_errors(op: &dyn Operator, grf: &GrfSpec, grid: GridSpec, draws: usize, cutoffs: &[usize]) -> Result<Vec<f64>> {
    let inputs = sample_grf(grf, grid, draws)?;
    let outputs = inputs.par_iter().map(|a| op.apply(a)).collect::<Result<Vec<_>>>()?;
    let total: f64 = outputs.iter().map(|u| u.l2_norm().powi(2)).sum();
    if total == 0.0 {
        return invalid("operator outputs vanish on every draw");
    }
    cutoffs
        .iter()
        .map(|&n| {
            let gap = inputs
                .par_iter()
                .zip(&outputs)
                .map(|(a, u)| {
                    let v = project_modes(&op.apply(&project_modes(a, n)?)?, n)?;
                    Ok(u.sub(&v)?.l2_norm().powi(2))
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok((gap.iter().sum::<f64>() / total).sqrt())
        })
        .collect()
}

/// Samples on one grid together with the setting their Jacobian targets were taken in.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub grid: GridSpec,
    pub mode: JacobianMode,
    pub samples: Vec<OperatorSample>,
}

impl Dataset {
    pub fn new(grid: GridSpec, mode: JacobianMode, samples: Vec<OperatorSample>) -> Result<Self> {
        let has_jacobian = !matches!(mode, JacobianMode::None);
        for (i, s) in samples.iter().enumerate() {
            if s.input.grid() != grid || s.output.grid() != grid {
                return Err(Error::Grid(format!("sample {i} is not on the dataset grid")));
            }
            if s.jacobian.is_some() != has_jacobian {
                return invalid(format!("sample {i} does not match Jacobian mode `{}`", mode.label()));
            }
        }
        Ok(Self { grid, mode, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn has_jacobians(&self) -> bool {
        !matches!(self.mode, JacobianMode::None)
    }

    /// Samples at the given positions, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self { grid: self.grid, mode: self.mode.clone(), samples: indices.iter().map(|&i| self.samples[i].clone()).collect() }
    }
}
