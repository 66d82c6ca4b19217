//! Fourier neural operator `N(a) = Q ∘ L_{d_L} ∘ … ∘ L_1 ∘ R(a)` with
//! `L(v) = σ(W v + b + F^{-1}(P ⊙ F v))`, its input derivatives and weight gradients.

use crate::activations::GeluLike;
use crate::basis::Basis;
use crate::error::{invalid, shape, Error, Result};
use crate::jacobian::{jacobian_in_bases, DiffMode, JacobianMatrix};
use crate::operator::{Linearization, Operator};
use crate::spectral::{mode_count, truncated_forward_raw, truncated_synthesis_raw, GridFunction, GridSpec};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Pointwise nonlinearity of the hidden layers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Gelu(GeluLike),
    /// σ replaced by the identity, for oracle tests of the linear structure.
    #[doc(hidden)]
    LinearHook,
}

impl Activation {
    #[inline]
    fn eval2(&self, x: f64) -> (f64, f64, f64) {
        match self {
            Activation::Gelu(g) => g.eval2(x),
            Activation::LinearHook => (x, 1.0, 0.0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FnoConfig {
    pub dim: usize,
    pub depth: usize,
    pub width: usize,
    pub modes: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub activation: Activation,
}

impl FnoConfig {
    pub fn new(
        dim: usize,
        depth: usize,
        width: usize,
        modes: usize,
        in_channels: usize,
        out_channels: usize,
        activation: GeluLike,
    ) -> Result<Self> {
        let cfg = Self { dim, depth, width, modes, in_channels, out_channels, activation: Activation::Gelu(activation) };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Four layers of width 32 with cutoff 8.
    pub fn default_for(dim: usize) -> Self {
        Self { dim, depth: 4, width: 32, modes: 8, in_channels: 1, out_channels: 1, activation: Activation::Gelu(GeluLike::default()) }
    }

    #[doc(hidden)]
    pub fn with_linear_hook(mut self) -> Self {
        self.activation = Activation::LinearHook;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.depth == 0 || self.width == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return invalid("FNO dimensions, depth and channel counts must be positive");
        }
        Ok(())
    }

    /// `K_N`.
    pub fn kernel_modes(&self) -> usize {
        mode_count(self.dim, self.modes)
    }

    pub fn check_grid(&self, grid: GridSpec) -> Result<()> {
        if grid.dim() != self.dim {
            return Err(Error::Grid(format!("FNO is {}-dimensional, grid is {}-dimensional", self.dim, grid.dim())));
        }
        if 2 * self.modes + 1 > grid.n() {
            return Err(Error::Grid(format!("grid n = {} too coarse for cutoff {}", grid.n(), self.modes)));
        }
        Ok(())
    }
}

/// Weights of one Fourier layer. `bias` holds `b̂(c, k)` as `width × K_N`; `kernel` holds
/// `P(k)_{ij}` as `K_N × width × width`; both over the lexicographic retained modes.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub local: Vec<f64>,
    pub bias: Vec<Complex64>,
    pub kernel: Vec<Complex64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FnoParams {
    /// `d_v × d_a`.
    pub lift: Vec<f64>,
    pub layers: Vec<LayerParams>,
    /// `d_u × d_v`.
    pub project: Vec<f64>,
}

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

impl FnoParams {
    pub fn zeros(cfg: &FnoConfig) -> Self {
        let (w, km) = (cfg.width, cfg.kernel_modes());
        Self {
            lift: vec![0.0; w * cfg.in_channels],
            layers: (0..cfg.depth)
                .map(|_| LayerParams { local: vec![0.0; w * w], bias: vec![ZERO; w * km], kernel: vec![ZERO; km * w * w] })
                .collect(),
            project: vec![0.0; cfg.out_channels * w],
        }
    }

    /// Seeded initialization: uniform `±1/√fan_in` for pointwise weights, complex Gaussian
    /// of scale `1/(d_v K_N)` for kernels, zero biases.
    pub fn init(cfg: &FnoConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(cfg);
        let uniform = |rng: &mut ChaCha8Rng, v: &mut [f64], fan_in: usize| {
            let s = 1.0 / (fan_in as f64).sqrt();
            v.iter_mut().for_each(|x| *x = rng.random_range(-s..s));
        };
        uniform(&mut rng, &mut p.lift, cfg.in_channels);
        let scale = 1.0 / (cfg.width * cfg.kernel_modes()) as f64 / 2f64.sqrt();
        for layer in &mut p.layers {
            uniform(&mut rng, &mut layer.local, cfg.width);
            for z in &mut layer.kernel {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                *z = Complex64::new(re, im) * scale;
            }
        }
        uniform(&mut rng, &mut p.project, cfg.width);
        p.symmetrize(cfg);
        p
    }

    pub fn check(&self, cfg: &FnoConfig) -> Result<()> {
        let (w, km) = (cfg.width, cfg.kernel_modes());
        let ok = self.lift.len() == w * cfg.in_channels
            && self.project.len() == cfg.out_channels * w
            && self.layers.len() == cfg.depth
            && self.layers.iter().all(|l| l.local.len() == w * w && l.bias.len() == w * km && l.kernel.len() == km * w * w);
        if !ok {
            return shape("FNO parameters do not match configuration");
        }
        Ok(())
    }

    /// Projects kernels and biases onto `P(−k) = conj P(k)`.
    pub fn symmetrize(&mut self, cfg: &FnoConfig) {
        let (w, km) = (cfg.width, cfg.kernel_modes());
        for layer in &mut self.layers {
            for q in 0..=km / 2 {
                let qn = km - 1 - q;
                for e in 0..w * w {
                    let a = layer.kernel[q * w * w + e];
                    let b = layer.kernel[qn * w * w + e];
                    let s = (a + b.conj()) * 0.5;
                    layer.kernel[q * w * w + e] = s;
                    layer.kernel[qn * w * w + e] = s.conj();
                }
                for c in 0..w {
                    let a = layer.bias[c * km + q];
                    let b = layer.bias[c * km + qn];
                    let s = (a + b.conj()) * 0.5;
                    layer.bias[c * km + q] = s;
                    layer.bias[c * km + qn] = s.conj();
                }
            }
        }
    }

    /// Largest violation of Hermitian symmetry over kernels and biases.
    pub fn hermitian_defect(&self, cfg: &FnoConfig) -> f64 {
        let (w, km) = (cfg.width, cfg.kernel_modes());
        let mut worst = 0.0f64;
        for layer in &self.layers {
            for q in 0..km {
                let qn = km - 1 - q;
                for e in 0..w * w {
                    worst = worst.max((layer.kernel[q * w * w + e] - layer.kernel[qn * w * w + e].conj()).norm());
                }
                for c in 0..w {
                    worst = worst.max((layer.bias[c * km + q] - layer.bias[c * km + qn].conj()).norm());
                }
            }
        }
        worst
    }

    /// Real parameters in a fixed order: lift, then per layer local, bias, kernel (complex
    /// entries as consecutive real/imaginary pairs), then project.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.flat_len());
        out.extend_from_slice(&self.lift);
        for l in &self.layers {
            out.extend_from_slice(&l.local);
            out.extend(l.bias.iter().flat_map(|z| [z.re, z.im]));
            out.extend(l.kernel.iter().flat_map(|z| [z.re, z.im]));
        }
        out.extend_from_slice(&self.project);
        out
    }

    pub fn flat_len(&self) -> usize {
        self.lift.len()
            + self.project.len()
            + self.layers.iter().map(|l| l.local.len() + 2 * l.bias.len() + 2 * l.kernel.len()).sum::<usize>()
    }

    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.flat_len() {
            return shape("flat parameter length mismatch");
        }
        let mut it = flat.iter().copied();
        let mut next = || it.next().unwrap_or(0.0);
        self.lift.iter_mut().for_each(|x| *x = next());
        for l in &mut self.layers {
            l.local.iter_mut().for_each(|x| *x = next());
            for z in l.bias.iter_mut().chain(l.kernel.iter_mut()) {
                let re = next();
                *z = Complex64::new(re, next());
            }
        }
        self.project.iter_mut().for_each(|x| *x = next());
        Ok(())
    }

    pub fn from_flat(cfg: &FnoConfig, flat: &[f64]) -> Result<Self> {
        let mut p = Self::zeros(cfg);
        p.assign_flat(flat)?;
        Ok(p)
    }

    /// Euclidean inner product over all stored real components.
    pub fn dot(&self, other: &FnoParams) -> f64 {
        self.to_flat().iter().zip(other.to_flat()).map(|(a, b)| a * b).sum()
    }

    /// `self += s * other`.
    pub fn axpy(&mut self, s: f64, other: &FnoParams) {
        let add = |a: &mut [f64], b: &[f64]| a.iter_mut().zip(b).for_each(|(x, y)| *x += s * y);
        add(&mut self.lift, &other.lift);
        add(&mut self.project, &other.project);
        for (l, o) in self.layers.iter_mut().zip(&other.layers) {
            add(&mut l.local, &o.local);
            l.bias.iter_mut().zip(&o.bias).for_each(|(x, y)| *x += y * s);
            l.kernel.iter_mut().zip(&o.kernel).for_each(|(x, y)| *x += y * s);
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.lift.iter_mut().chain(self.project.iter_mut()).for_each(|x| *x *= s);
        for l in &mut self.layers {
            l.local.iter_mut().for_each(|x| *x *= s);
            l.bias.iter_mut().chain(l.kernel.iter_mut()).for_each(|x| *x *= s);
        }
    }

    /// Bias field `b_ℓ(x)` of layer `layer` synthesized on `grid`.
    pub fn bias_field(&self, cfg: &FnoConfig, layer: usize, grid: GridSpec) -> Result<GridFunction> {
        cfg.check_grid(grid)?;
        let (values, _) = truncated_synthesis_raw(&self.layers[layer].bias, cfg.width, grid, cfg.modes);
        GridFunction::new(grid, cfg.width, values)
    }
}

/// Caches of one forward pass.
#[derive(Clone, Debug)]
pub struct Tape {
    grid: GridSpec,
    input: Vec<f64>,
    /// `v_0, …, v_{d_L}`.
    hidden: Vec<Vec<f64>>,
    /// Retained coefficients of `v_0, …, v_{d_L − 1}`.
    hidden_hat: Vec<Vec<Complex64>>,
    /// Pre-activations `z_1, …, z_{d_L}`.
    pre: Vec<Vec<f64>>,
    dsig: Vec<Vec<f64>>,
    ddsig: Vec<Vec<f64>>,
    residue: f64,
}

impl Tape {
    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn pre_activation(&self, layer: usize) -> &[f64] {
        &self.pre[layer]
    }

    pub fn hidden(&self, layer: usize) -> &[f64] {
        &self.hidden[layer]
    }

    /// Largest imaginary part discarded by the inverse transforms of this pass.
    pub fn imag_residue(&self) -> f64 {
        self.residue
    }
}

/// Caches of one tangent pass `t_ℓ = σ'(z_ℓ) y_ℓ`.
#[derive(Clone, Debug)]
pub struct TangentTape {
    dir: Vec<f64>,
    t: Vec<Vec<f64>>,
    t_hat: Vec<Vec<Complex64>>,
    y: Vec<Vec<f64>>,
    out: Vec<f64>,
    residue: f64,
}

impl TangentTape {
    pub fn imag_residue(&self) -> f64 {
        self.residue
    }
}

/// `out[i] = Σ_j mat[i, j] v[j]` for channel-major fields of `m` points.
fn mix(mat: &[f64], rows: usize, cols: usize, v: &[f64], m: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * m];
    for i in 0..rows {
        let o = &mut out[i * m..(i + 1) * m];
        for j in 0..cols {
            let a = mat[i * cols + j];
            if a != 0.0 {
                o.iter_mut().zip(&v[j * m..(j + 1) * m]).for_each(|(x, y)| *x += a * y);
            }
        }
    }
    out
}

/// `out[j] = Σ_i mat[i, j] v[i]`.
fn mix_t(mat: &[f64], rows: usize, cols: usize, v: &[f64], m: usize) -> Vec<f64> {
    let mut out = vec![0.0; cols * m];
    for i in 0..rows {
        let vi = &v[i * m..(i + 1) * m];
        for j in 0..cols {
            let a = mat[i * cols + j];
            if a != 0.0 {
                out[j * m..(j + 1) * m].iter_mut().zip(vi).for_each(|(x, y)| *x += a * y);
            }
        }
    }
    out
}

/// `grad[i, j] += Σ_x a[i, x] b[j, x]`.
fn outer_acc(grad: &mut [f64], rows: usize, cols: usize, a: &[f64], b: &[f64], m: usize) {
    for i in 0..rows {
        let ai = &a[i * m..(i + 1) * m];
        for j in 0..cols {
            grad[i * cols + j] += ai.iter().zip(&b[j * m..(j + 1) * m]).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `ŷ(k) = P(k) v̂(k)`, or `P(k)^H v̂(k)` when `adjoint`.
fn kernel_apply(kernel: &[Complex64], w: usize, km: usize, vhat: &[Complex64], adjoint: bool) -> Vec<Complex64> {
    let mut out = vec![ZERO; w * km];
    let mut vq = vec![ZERO; w];
    let mut oq = vec![ZERO; w];
    for q in 0..km {
        let p = &kernel[q * w * w..(q + 1) * w * w];
        for (j, v) in vq.iter_mut().enumerate() {
            *v = vhat[j * km + q];
        }
        if adjoint {
            oq.fill(ZERO);
            for (row, &vj) in p.chunks_exact(w).zip(&vq) {
                oq.iter_mut().zip(row).for_each(|(o, pji)| *o += pji.conj() * vj);
            }
        } else {
            for (o, row) in oq.iter_mut().zip(p.chunks_exact(w)) {
                *o = row.iter().zip(&vq).fold(ZERO, |acc, (a, b)| acc + a * b);
            }
        }
        for (i, o) in oq.iter().enumerate() {
            out[i * km + q] = *o;
        }
    }
    out
}

/// `G(k)[i, j] += scale · â_i(k) conj(b̂_j(k))`.
fn kernel_grad_acc(g: &mut [Complex64], w: usize, km: usize, ahat: &[Complex64], bhat: &[Complex64], scale: f64) {
    let mut bq = vec![ZERO; w];
    for q in 0..km {
        for (j, b) in bq.iter_mut().enumerate() {
            *b = bhat[j * km + q].conj();
        }
        for (i, row) in g[q * w * w..(q + 1) * w * w].chunks_exact_mut(w).enumerate() {
            let ai = ahat[i * km + q] * scale;
            row.iter_mut().zip(&bq).for_each(|(x, b)| *x += ai * b);
        }
    }
}

pub fn forward(params: &FnoParams, cfg: &FnoConfig, a: &GridFunction) -> Result<(GridFunction, Tape)> {
    params.check(cfg)?;
    let grid = a.grid();
    cfg.check_grid(grid)?;
    if a.channels() != cfg.in_channels {
        return shape(format!("input has {} channels, FNO expects {}", a.channels(), cfg.in_channels));
    }
    let (w, km, m) = (cfg.width, cfg.kernel_modes(), grid.len());
    let mut residue = 0.0f64;
    let mut hidden = vec![mix(&params.lift, w, cfg.in_channels, a.values(), m)];
    let (mut hidden_hat, mut pre, mut dsig, mut ddsig) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for layer in &params.layers {
        let v = hidden.last().unwrap();
        let vhat = truncated_forward_raw(v, w, grid, cfg.modes);
        let (kv, r1) = truncated_synthesis_raw(&kernel_apply(&layer.kernel, w, km, &vhat, false), w, grid, cfg.modes);
        let (bias, r2) = truncated_synthesis_raw(&layer.bias, w, grid, cfg.modes);
        residue = residue.max(r1).max(r2);
        let mut z = mix(&layer.local, w, w, v, m);
        for ((zi, k), b) in z.iter_mut().zip(&kv).zip(&bias) {
            *zi += k + b;
        }
        let mut out = vec![0.0; w * m];
        let mut d1 = vec![0.0; w * m];
        let mut d2 = vec![0.0; w * m];
        for i in 0..w * m {
            let (s, ds, dds) = cfg.activation.eval2(z[i]);
            out[i] = s;
            d1[i] = ds;
            d2[i] = dds;
        }
        hidden_hat.push(vhat);
        pre.push(z);
        dsig.push(d1);
        ddsig.push(d2);
        hidden.push(out);
    }
    let u = mix(&params.project, cfg.out_channels, w, hidden.last().unwrap(), m);
    let u = GridFunction::new(grid, cfg.out_channels, u).map_err(|_| Error::Numeric("FNO output is not finite".into()))?;
    let tape = Tape { grid, input: a.values().to_vec(), hidden, hidden_hat, pre, dsig, ddsig, residue };
    Ok((u, tape))
}

fn check_tape(cfg: &FnoConfig, tape: &Tape, f: &GridFunction, channels: usize) -> Result<()> {
    if tape.hidden.len() != cfg.depth + 1 || tape.hidden[0].len() != cfg.width * tape.grid.len() {
        return shape("tape does not match FNO configuration");
    }
    if f.grid() != tape.grid || f.channels() != channels {
        return shape("direction does not match tape grid or channel count");
    }
    Ok(())
}

pub fn tangent(params: &FnoParams, cfg: &FnoConfig, tape: &Tape, da: &GridFunction) -> Result<TangentTape> {
    check_tape(cfg, tape, da, cfg.in_channels)?;
    let (w, km, m) = (cfg.width, cfg.kernel_modes(), tape.grid.len());
    let grid = tape.grid;
    let mut residue = 0.0f64;
    let mut t = vec![mix(&params.lift, w, cfg.in_channels, da.values(), m)];
    let (mut t_hat, mut ys) = (Vec::new(), Vec::new());
    for (l, layer) in params.layers.iter().enumerate() {
        let tl = t.last().unwrap();
        let th = truncated_forward_raw(tl, w, grid, cfg.modes);
        let (kt, r) = truncated_synthesis_raw(&kernel_apply(&layer.kernel, w, km, &th, false), w, grid, cfg.modes);
        residue = residue.max(r);
        let mut y = mix(&layer.local, w, w, tl, m);
        y.iter_mut().zip(&kt).for_each(|(a, b)| *a += b);
        let next: Vec<f64> = y.iter().zip(&tape.dsig[l]).map(|(a, b)| a * b).collect();
        t_hat.push(th);
        ys.push(y);
        t.push(next);
    }
    let out = mix(&params.project, cfg.out_channels, w, t.last().unwrap(), m);
    Ok(TangentTape { dir: da.values().to_vec(), t, t_hat, y: ys, out, residue })
}

impl TangentTape {
    pub fn output(&self, grid: GridSpec, channels: usize) -> GridFunction {
        GridFunction::from_raw(grid, channels, self.out.clone())
    }
}

pub fn jvp(params: &FnoParams, cfg: &FnoConfig, tape: &Tape, da: &GridFunction) -> Result<GridFunction> {
    Ok(tangent(params, cfg, tape, da)?.output(tape.grid, cfg.out_channels))
}

/// Gradient of the scalar `⟨ū, N(a)⟩ + ⟨ū_t, DN(a) da⟩` with respect to the weights and
/// to the input, by reverse accumulation through the primal and tangent recursions.
/// Returns the input adjoint `ā` of the primal part.
fn backprop(
    params: &FnoParams,
    cfg: &FnoConfig,
    tape: &Tape,
    tan: Option<&TangentTape>,
    u_bar: Option<&[f64]>,
    du_bar: Option<&[f64]>,
    mut grad: Option<&mut FnoParams>,
) -> (Vec<f64>, f64) {
    let (w, km, m) = (cfg.width, cfg.kernel_modes(), tape.grid.len());
    let grid = tape.grid;
    let scale = m as f64;
    let dv = cfg.out_channels;
    let mut residue = 0.0f64;
    let tan = tan.filter(|_| du_bar.is_some());
    let mut vbar = u_bar.map(|ub| mix_t(&params.project, dv, w, ub, m));
    let mut tbar = tan.and(du_bar).map(|db| mix_t(&params.project, dv, w, db, m));
    if let Some(g) = grad.as_deref_mut() {
        if let Some(ub) = u_bar {
            outer_acc(&mut g.project, dv, w, ub, &tape.hidden[cfg.depth], m);
        }
        if let (Some(tt), Some(db)) = (tan, du_bar) {
            outer_acc(&mut g.project, dv, w, db, &tt.t[cfg.depth], m);
        }
    }
    for l in (0..cfg.depth).rev() {
        let layer = &params.layers[l];
        let ybar: Option<Vec<f64>> = tbar.as_ref().map(|tb| tb.iter().zip(&tape.dsig[l]).map(|(a, b)| a * b).collect());
        let mut zbar: Option<Vec<f64>> = vbar.as_ref().map(|vb| vb.iter().zip(&tape.dsig[l]).map(|(a, b)| a * b).collect());
        if let (Some(tt), Some(tb)) = (tan, tbar.as_ref()) {
            let extra = tb.iter().zip(&tape.ddsig[l]).zip(&tt.y[l]).map(|((a, b), c)| a * b * c);
            match zbar.as_mut() {
                Some(zb) => zb.iter_mut().zip(extra).for_each(|(z, e)| *z += e),
                None => zbar = Some(extra.collect()),
            }
        }
        let zhat = zbar.as_ref().map(|zb| truncated_forward_raw(zb, w, grid, cfg.modes));
        let yhat = ybar.as_ref().map(|yb| truncated_forward_raw(yb, w, grid, cfg.modes));
        if let Some(g) = grad.as_deref_mut() {
            let gl = &mut g.layers[l];
            if let (Some(zb), Some(zh)) = (zbar.as_ref(), zhat.as_ref()) {
                outer_acc(&mut gl.local, w, w, zb, &tape.hidden[l], m);
                for (gb, z) in gl.bias.iter_mut().zip(zh) {
                    *gb += z * scale;
                }
                kernel_grad_acc(&mut gl.kernel, w, km, zh, &tape.hidden_hat[l], scale);
            }
            if let (Some(tt), Some(yb), Some(yh)) = (tan, ybar.as_ref(), yhat.as_ref()) {
                outer_acc(&mut gl.local, w, w, yb, &tt.t[l], m);
                kernel_grad_acc(&mut gl.kernel, w, km, yh, &tt.t_hat[l], scale);
            }
        }
        let back = |bar: &[f64], hat: &[Complex64], residue: &mut f64| {
            let (kt, r) = truncated_synthesis_raw(&kernel_apply(&layer.kernel, w, km, hat, true), w, grid, cfg.modes);
            *residue = residue.max(r);
            let mut out = mix_t(&layer.local, w, w, bar, m);
            out.iter_mut().zip(&kt).for_each(|(a, b)| *a += b);
            out
        };
        vbar = match (zbar.as_ref(), zhat.as_ref()) {
            (Some(zb), Some(zh)) => Some(back(zb, zh, &mut residue)),
            _ => None,
        };
        tbar = match (ybar.as_ref(), yhat.as_ref()) {
            (Some(yb), Some(yh)) => Some(back(yb, yh, &mut residue)),
            _ => None,
        };
    }
    if let Some(g) = grad {
        let da = cfg.in_channels;
        if let Some(vb) = vbar.as_ref() {
            outer_acc(&mut g.lift, w, da, vb, &tape.input, m);
        }
        if let (Some(tt), Some(tb)) = (tan, tbar.as_ref()) {
            outer_acc(&mut g.lift, w, da, tb, &tt.dir, m);
        }
        g.symmetrize(cfg);
    }
    let abar = match vbar {
        Some(vb) => mix_t(&params.lift, w, cfg.in_channels, &vb, m),
        None => vec![0.0; cfg.in_channels * m],
    };
    (abar, residue)
}

pub fn vjp(params: &FnoParams, cfg: &FnoConfig, tape: &Tape, du_bar: &GridFunction) -> Result<GridFunction> {
    Ok(vjp_with_residue(params, cfg, tape, du_bar)?.0)
}

pub fn vjp_with_residue(params: &FnoParams, cfg: &FnoConfig, tape: &Tape, du_bar: &GridFunction) -> Result<(GridFunction, f64)> {
    check_tape(cfg, tape, du_bar, cfg.out_channels)?;
    let (abar, r) = backprop(params, cfg, tape, None, Some(du_bar.values()), None, None);
    Ok((GridFunction::from_raw(tape.grid, cfg.in_channels, abar), r))
}

/// Weight gradient of a loss whose output gradient (nodal) is `u_bar`.
pub fn param_grad(params: &FnoParams, cfg: &FnoConfig, tape: &Tape, u_bar: &GridFunction) -> Result<FnoParams> {
    check_tape(cfg, tape, u_bar, cfg.out_channels)?;
    let mut g = FnoParams::zeros(cfg);
    backprop(params, cfg, tape, None, Some(u_bar.values()), None, Some(&mut g));
    Ok(g)
}

/// Weight gradient of `⟨ū, N(a)⟩ + ⟨ū_t, DN(a) da⟩`, accumulated into `grad`.
pub fn tangent_param_grad(
    params: &FnoParams,
    cfg: &FnoConfig,
    tape: &Tape,
    tan: &TangentTape,
    du_bar: &GridFunction,
    u_bar: Option<&GridFunction>,
    grad: &mut FnoParams,
) -> Result<()> {
    check_tape(cfg, tape, du_bar, cfg.out_channels)?;
    if tan.t.len() != cfg.depth + 1 || tan.dir.len() != cfg.in_channels * tape.grid.len() {
        return shape("tangent tape does not match configuration");
    }
    let mut g = FnoParams::zeros(cfg);
    backprop(params, cfg, tape, Some(tan), u_bar.map(|u| u.values()), Some(du_bar.values()), Some(&mut g));
    grad.axpy(1.0, &g);
    Ok(())
}

/// An FNO with fixed weights, usable wherever an [`Operator`] is expected.
#[derive(Clone, Debug, PartialEq)]
pub struct FnoModel {
    pub cfg: FnoConfig,
    pub params: FnoParams,
}

impl FnoModel {
    pub fn new(cfg: FnoConfig, params: FnoParams) -> Result<Self> {
        params.check(&cfg)?;
        Ok(Self { cfg, params })
    }
}

pub struct FnoLinearization<'a> {
    model: &'a FnoModel,
    output: GridFunction,
    pub tape: Tape,
}

impl Linearization for FnoLinearization<'_> {
    fn output(&self) -> &GridFunction {
        &self.output
    }

    fn jvp(&self, da: &GridFunction) -> Result<GridFunction> {
        jvp(&self.model.params, &self.model.cfg, &self.tape, da)
    }

    fn vjp(&self, du_bar: &GridFunction) -> Result<GridFunction> {
        vjp(&self.model.params, &self.model.cfg, &self.tape, du_bar)
    }
}

impl FnoModel {
    pub fn linearize_fno(&self, a: &GridFunction) -> Result<FnoLinearization<'_>> {
        let (output, tape) = forward(&self.params, &self.cfg, a)?;
        Ok(FnoLinearization { model: self, output, tape })
    }
}

impl Operator for FnoModel {
    fn in_channels(&self) -> usize {
        self.cfg.in_channels
    }

    fn out_channels(&self) -> usize {
        self.cfg.out_channels
    }

    fn linearize<'a>(&'a self, a: &GridFunction) -> Result<Box<dyn Linearization + 'a>> {
        Ok(Box::new(self.linearize_fno(a)?))
    }

    fn label(&self) -> String {
        format!("fno(depth={},width={},modes={})", self.cfg.depth, self.cfg.width, self.cfg.modes)
    }
}

/// `[J]_{jk} = ⟨φ_j, DN(a) ψ_k⟩` in the given bases.
pub fn jacobian_dense(
    params: &FnoParams,
    cfg: &FnoConfig,
    a: &GridFunction,
    in_basis: &dyn Basis,
    out_basis: &dyn Basis,
    mode: DiffMode,
) -> Result<JacobianMatrix> {
    let (_, tape) = forward(params, cfg, a)?;
    let model = FnoModel { cfg: *cfg, params: params.clone() };
    let lin = FnoLinearization { model: &model, output: GridFunction::zeros(a.grid(), cfg.out_channels), tape };
    jacobian_in_bases(&lin, a.grid(), in_basis, out_basis, mode)
}
