//! Fourier algebra on the periodic cube `[0, 2π]^d`.
//!
//! Coefficients follow `û(k) = (2π)^{-d} ∫ u e^{-ik·x}`, realised on the grid as
//! `n^{-d} Σ_j u(x_j) e^{-ik·x_j}`, so that `u(x) = Σ_k û(k) e^{ik·x}`.

use crate::error::{invalid, shape, Error, Result};
use crate::fft::{transform_all, transform_axis, AxisOp};
use num_complex::Complex64;
use std::f64::consts::PI;

/// Uniform periodic grid with `n` points per axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct GridSpec {
    dim: usize,
    n: usize,
}

impl GridSpec {
    pub fn new(dim: usize, n: usize) -> Result<Self> {
        if dim == 0 || dim > 3 {
            return Err(Error::Grid(format!("dimension {dim} not in 1..=3")));
        }
        if n < 2 || !n.is_power_of_two() {
            return Err(Error::Grid(format!("n = {n} must be a power of two >= 2")));
        }
        Ok(Self { dim, n })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Total number of nodes `n^d`.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        2.0 * PI / self.n as f64
    }

    /// Quadrature weight `(2π/n)^d`.
    pub fn cell_measure(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    /// Torus volume `(2π)^d`.
    pub fn volume(&self) -> f64 {
        (2.0 * PI).powi(self.dim as i32)
    }

    pub fn shape(&self) -> Vec<usize> {
        vec![self.n; self.dim]
    }

    /// Multi-index of a flat node index (first axis slowest).
    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim];
        for a in (0..self.dim).rev() {
            idx[a] = flat % self.n;
            flat /= self.n;
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, &i| acc * self.n + i)
    }

    pub fn node(&self, flat: usize) -> Vec<f64> {
        let h = self.spacing();
        self.multi_index(flat).into_iter().map(|i| h * i as f64).collect()
    }

    /// Signed wavenumber of FFT index `m` on this grid (Nyquist maps to `-n/2`).
    pub fn wavenumber(&self, m: usize) -> i64 {
        if m < self.n / 2 {
            m as i64
        } else {
            m as i64 - self.n as i64
        }
    }

    /// FFT index of signed wavenumber `k`.
    pub fn fft_index(&self, k: i64) -> usize {
        k.rem_euclid(self.n as i64) as usize
    }

    /// Signed wavevector at flat spectral index.
    pub fn wavevector(&self, flat: usize) -> Vec<i64> {
        self.multi_index(flat).into_iter().map(|m| self.wavenumber(m)).collect()
    }

    /// Flat spectral index of a signed wavevector.
    pub fn spectral_index(&self, k: &[i64]) -> usize {
        k.iter().fold(0, |acc, &ki| acc * self.n + self.fft_index(ki))
    }

    /// Whether `self` is obtained from `fine` by keeping every `fine.n / self.n`-th node.
    pub fn nests_in(&self, fine: &GridSpec) -> bool {
        self.dim == fine.dim && fine.n % self.n == 0
    }

    /// Largest band-limit that excludes the Nyquist mode.
    pub fn max_cutoff(&self) -> usize {
        (self.n - 1) / 2
    }
}

/// Real multi-channel field sampled on a grid; values are `channels × n^d`, channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    grid: GridSpec,
    channels: usize,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: GridSpec, channels: usize, values: Vec<f64>) -> Result<Self> {
        if channels == 0 {
            return invalid("grid function needs at least one channel");
        }
        if values.len() != channels * grid.len() {
            return shape(format!(
                "expected {} values for {channels} channels, got {}",
                channels * grid.len(),
                values.len()
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("grid function values".into()));
        }
        Ok(Self { grid, channels, values })
    }

    /// Construction without the finiteness scan, for values produced internally.
    pub(crate) fn from_raw(grid: GridSpec, channels: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), channels * grid.len());
        Self { grid, channels, values }
    }

    pub fn zeros(grid: GridSpec, channels: usize) -> Self {
        Self::from_raw(grid, channels, vec![0.0; channels * grid.len()])
    }

    /// Samples `f(channel, x)` at every node.
    pub fn from_fn(grid: GridSpec, channels: usize, f: impl Fn(usize, &[f64]) -> f64) -> Self {
        let mut values = Vec::with_capacity(channels * grid.len());
        for c in 0..channels {
            for j in 0..grid.len() {
                values.push(f(c, &grid.node(j)));
            }
        }
        Self::from_raw(grid, channels, values)
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let m = self.grid.len();
        &self.values[c * m..(c + 1) * m]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn same_layout(&self, other: &GridFunction) -> Result<()> {
        if self.grid != other.grid || self.channels != other.channels {
            return shape(format!(
                "layout mismatch: {:?}x{} vs {:?}x{}",
                self.grid, self.channels, other.grid, other.channels
            ));
        }
        Ok(())
    }

    /// Trapezoidal `L²` inner product (summed over channels).
    pub fn l2_inner(&self, other: &GridFunction) -> Result<f64> {
        self.same_layout(other)?;
        Ok(self.grid.cell_measure() * dot(&self.values, &other.values))
    }

    pub fn l2_norm(&self) -> f64 {
        (self.grid.cell_measure() * dot(&self.values, &self.values)).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, s: f64) -> GridFunction {
        Self::from_raw(self.grid, self.channels, self.values.iter().map(|v| v * s).collect())
    }

    /// `self + s * other`.
    pub fn add_scaled(&self, s: f64, other: &GridFunction) -> Result<GridFunction> {
        self.same_layout(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + s * b).collect();
        Ok(Self::from_raw(self.grid, self.channels, values))
    }

    pub fn sub(&self, other: &GridFunction) -> Result<GridFunction> {
        self.add_scaled(-1.0, other)
    }

    /// Nodal restriction onto a coarser nested grid.
    pub fn subsample(&self, coarse: GridSpec) -> Result<GridFunction> {
        if !coarse.nests_in(&self.grid) {
            return Err(Error::Grid(format!("{coarse:?} does not nest in {:?}", self.grid)));
        }
        let step = self.grid.n / coarse.n;
        let mut values = Vec::with_capacity(self.channels * coarse.len());
        for c in 0..self.channels {
            let ch = self.channel(c);
            for j in 0..coarse.len() {
                let idx: Vec<usize> = coarse.multi_index(j).into_iter().map(|i| i * step).collect();
                values.push(ch[self.grid.flat_index(&idx)]);
            }
        }
        Ok(Self::from_raw(coarse, self.channels, values))
    }

    /// Spectral resampling onto another grid of the same dimension. Modes that are not
    /// strictly below both Nyquist frequencies are dropped.
    pub fn resample(&self, target: GridSpec) -> Result<GridFunction> {
        if target == self.grid {
            return Ok(self.clone());
        }
        if target.dim != self.grid.dim {
            return Err(Error::Grid("resampling across dimensions".into()));
        }
        let cutoff = self.grid.max_cutoff().min(target.max_cutoff());
        let c = truncated_forward(self, cutoff)?;
        Ok(truncated_synthesis(&c, self.channels, target, cutoff)?.0)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Fourier coefficients of a grid function, per channel in FFT index order.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralField {
    grid: GridSpec,
    channels: usize,
    coeffs: Vec<Complex64>,
}

impl SpectralField {
    pub fn new(grid: GridSpec, channels: usize, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != channels * grid.len() {
            return shape("spectral field length does not match grid");
        }
        Ok(Self { grid, channels, coeffs })
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    /// Coefficient of channel `c` at signed wavevector `k`.
    pub fn coeff(&self, c: usize, k: &[i64]) -> Complex64 {
        self.coeffs[c * self.grid.len() + self.grid.spectral_index(k)]
    }

    /// Largest deviation from `coeff(-k) = conj(coeff(k))`.
    pub fn hermitian_defect(&self) -> f64 {
        let m = self.grid.len();
        let mut worst = 0.0f64;
        for c in 0..self.channels {
            for j in 0..m {
                let k = self.grid.wavevector(j);
                let neg: Vec<i64> = k.iter().map(|v| -v).collect();
                let a = self.coeffs[c * m + j];
                let b = self.coeffs[c * m + self.grid.spectral_index(&neg)];
                worst = worst.max((a - b.conj()).norm());
            }
        }
        worst
    }
}

pub fn dft_forward(f: &GridFunction) -> Result<SpectralField> {
    if !f.is_finite() {
        return Err(Error::NonFinite("dft input".into()));
    }
    Ok(dft_forward_unchecked(f))
}

pub(crate) fn dft_forward_unchecked(f: &GridFunction) -> SpectralField {
    let grid = f.grid;
    let data: Vec<Complex64> = f.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let mut shape = vec![f.channels];
    shape.extend(grid.shape());
    let scale = 1.0 / grid.len() as f64;
    let coeffs = transform_all(data, &shape, 1, false).into_iter().map(|z| z * scale).collect();
    SpectralField { grid, channels: f.channels, coeffs }
}

/// Inverse transform; returns the real part.
pub fn dft_inverse(s: &SpectralField) -> GridFunction {
    dft_inverse_with_residue(s).0
}

/// Inverse transform together with the largest discarded imaginary part.
pub fn dft_inverse_with_residue(s: &SpectralField) -> (GridFunction, f64) {
    let mut shape = vec![s.channels];
    shape.extend(s.grid.shape());
    let z = transform_all(s.coeffs.clone(), &shape, 1, true);
    let residue = z.iter().fold(0.0f64, |m, v| m.max(v.im.abs()));
    let values = z.into_iter().map(|v| v.re).collect();
    (GridFunction::from_raw(s.grid, s.channels, values), residue)
}

/// Retained modes `|k|_∞ ≤ cutoff` in lexicographic order (first axis slowest).
pub fn retained_modes(dim: usize, cutoff: usize) -> Vec<Vec<i64>> {
    let m = 2 * cutoff + 1;
    let total = m.pow(dim as u32);
    (0..total)
        .map(|mut flat| {
            let mut k = vec![0i64; dim];
            for a in (0..dim).rev() {
                k[a] = (flat % m) as i64 - cutoff as i64;
                flat /= m;
            }
            k
        })
        .collect()
}

/// `K_N = (2N+1)^d`.
pub fn mode_count(dim: usize, cutoff: usize) -> usize {
    (2 * cutoff + 1).pow(dim as u32)
}

fn check_cutoff(grid: GridSpec, cutoff: usize) -> Result<()> {
    if 2 * cutoff + 1 > grid.n {
        return invalid(format!("cutoff {cutoff} exceeds Nyquist for n = {}", grid.n));
    }
    Ok(())
}

/// Coefficients at retained modes, `channels × K_N` in lexicographic mode order.
pub(crate) fn truncated_forward(f: &GridFunction, cutoff: usize) -> Result<Vec<Complex64>> {
    check_cutoff(f.grid, cutoff)?;
    Ok(truncated_forward_raw(&f.values, f.channels, f.grid, cutoff))
}

pub(crate) fn truncated_forward_raw(values: &[f64], channels: usize, grid: GridSpec, cutoff: usize) -> Vec<Complex64> {
    debug_assert!(2 * cutoff < grid.n);
    let mut shape = vec![channels];
    shape.extend(grid.shape());
    let mut d: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    for axis in (1..=grid.dim).rev() {
        d = transform_axis(&d, &mut shape, axis, AxisOp::Truncate { cutoff });
    }
    let scale = 1.0 / grid.len() as f64;
    d.iter_mut().for_each(|z| *z *= scale);
    d
}

/// Synthesizes `Re Σ_k c(k) e^{ik·x}` from retained-mode coefficients; also returns the
/// largest imaginary residue before it is discarded.
pub(crate) fn truncated_synthesis(
    coeffs: &[Complex64],
    channels: usize,
    grid: GridSpec,
    cutoff: usize,
) -> Result<(GridFunction, f64)> {
    check_cutoff(grid, cutoff)?;
    let km = mode_count(grid.dim, cutoff);
    if coeffs.len() != channels * km {
        return shape("coefficient count does not match cutoff");
    }
    let (values, residue) = truncated_synthesis_raw(coeffs, channels, grid, cutoff);
    Ok((GridFunction::from_raw(grid, channels, values), residue))
}

pub(crate) fn truncated_synthesis_raw(
    coeffs: &[Complex64],
    channels: usize,
    grid: GridSpec,
    cutoff: usize,
) -> (Vec<f64>, f64) {
    let mut shape = vec![channels];
    shape.extend(vec![2 * cutoff + 1; grid.dim]);
    let mut d = coeffs.to_vec();
    for axis in 1..=grid.dim {
        d = transform_axis(&d, &mut shape, axis, AxisOp::Pad { n: grid.n, cutoff });
    }
    let residue = d.iter().fold(0.0f64, |m, v| m.max(v.im.abs()));
    (d.into_iter().map(|v| v.re).collect(), residue)
}

/// `P_N`: zero every mode with `|k|_∞ > N`.
pub fn project_modes(f: &GridFunction, cutoff: usize) -> Result<GridFunction> {
    let c = truncated_forward(f, cutoff)?;
    Ok(truncated_synthesis(&c, f.channels, f.grid, cutoff)?.0)
}

/// Packed real representation of `F_N`.
///
/// Per channel the block holds the `K_N` real parts in lexicographic mode order,
/// followed by the `K_N` imaginary parts in the same order.
#[derive(Clone, Debug, PartialEq)]
pub struct CoeffVector {
    dim: usize,
    cutoff: usize,
    channels: usize,
    packed: Vec<f64>,
}

impl CoeffVector {
    pub fn new(dim: usize, cutoff: usize, channels: usize, packed: Vec<f64>) -> Result<Self> {
        if packed.len() != 2 * mode_count(dim, cutoff) * channels {
            return shape(format!(
                "packed length {} does not match 2·K_N·channels = {}",
                packed.len(),
                2 * mode_count(dim, cutoff) * channels
            ));
        }
        Ok(Self { dim, cutoff, channels, packed })
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn packed(&self) -> &[f64] {
        &self.packed
    }

    fn to_complex(&self) -> Vec<Complex64> {
        let km = mode_count(self.dim, self.cutoff);
        let mut out = Vec::with_capacity(km * self.channels);
        for c in 0..self.channels {
            let block = &self.packed[2 * km * c..2 * km * (c + 1)];
            out.extend((0..km).map(|j| Complex64::new(block[j], block[km + j])));
        }
        out
    }
}

pub fn truncated_transform(f: &GridFunction, cutoff: usize) -> Result<CoeffVector> {
    let km = mode_count(f.grid.dim, cutoff);
    let c = truncated_forward(f, cutoff)?;
    let mut packed = Vec::with_capacity(2 * km * f.channels);
    for ch in 0..f.channels {
        let block = &c[ch * km..(ch + 1) * km];
        packed.extend(block.iter().map(|z| z.re));
        packed.extend(block.iter().map(|z| z.im));
    }
    CoeffVector::new(f.grid.dim, cutoff, f.channels, packed)
}

pub fn truncated_inverse(c: &CoeffVector, grid: GridSpec) -> Result<GridFunction> {
    if c.dim != grid.dim {
        return shape("coefficient dimension does not match grid");
    }
    Ok(truncated_synthesis(&c.to_complex(), c.channels, grid, c.cutoff)?.0)
}

/// Smoothness `s` with shift `δ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SobolevSpec {
    pub s: f64,
    pub delta: f64,
    pub dim: usize,
}

impl SobolevSpec {
    pub fn new(s: f64, delta: f64, dim: usize) -> Result<Self> {
        if !(s >= 0.0 && delta >= 0.0) {
            return invalid("Sobolev orders must be nonnegative");
        }
        Ok(Self { s, delta, dim })
    }

    pub fn l2(dim: usize) -> Self {
        Self { s: 0.0, delta: 0.0, dim }
    }

    /// The shifted space `H^{s+δ}` as an unshifted spec.
    pub fn shifted(&self) -> Self {
        Self { s: self.s + self.delta, delta: 0.0, dim: self.dim }
    }

    pub fn weight(&self) -> SpectralWeight {
        SpectralWeight::Sobolev { s: self.s }
    }
}

/// Diagonal Fourier weight defining an inner product `(2π)^d Σ_k w(|k|²) f̂(k) conj ĝ(k)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SpectralWeight {
    /// `(1 + |k|²)^s`.
    Sobolev { s: f64 },
    /// `λ_k^{-2·power}` for `λ_k = (ω + ρ|k|²)^{-τ}`; `power = 1/2` is the Cameron–Martin norm.
    Matern { omega: f64, rho: f64, tau: f64, power: f64 },
}

impl SpectralWeight {
    pub const L2: SpectralWeight = SpectralWeight::Sobolev { s: 0.0 };

    pub fn eval(&self, k2: f64) -> f64 {
        match *self {
            SpectralWeight::Sobolev { s } => {
                if s == 0.0 {
                    1.0
                } else {
                    (1.0 + k2).powf(s)
                }
            }
            SpectralWeight::Matern { omega, rho, tau, power } => (omega + rho * k2).powf(2.0 * tau * power),
        }
    }

    pub fn eval_k(&self, k: &[i64]) -> f64 {
        self.eval(k.iter().map(|&v| (v * v) as f64).sum())
    }

    pub fn label(&self) -> String {
        match *self {
            SpectralWeight::Sobolev { s } => format!("H{s}"),
            SpectralWeight::Matern { omega, rho, tau, power } => format!("M{omega},{rho},{tau},{power}"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            SpectralWeight::Sobolev { s } => s.is_finite() && s >= 0.0,
            SpectralWeight::Matern { omega, rho, tau, power } => {
                omega > 0.0 && rho >= 0.0 && tau > 0.0 && power.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            invalid(format!("invalid spectral weight {self:?}"))
        }
    }
}

/// Inner product under a diagonal Fourier weight, summed over channels.
pub fn weighted_inner(f: &GridFunction, g: &GridFunction, w: &SpectralWeight) -> Result<f64> {
    f.same_layout(g)?;
    let grid = f.grid;
    let fs = dft_forward_unchecked(f);
    let gs = dft_forward_unchecked(g);
    let weights = weight_table(grid, w);
    let m = grid.len();
    let mut acc = 0.0;
    for c in 0..f.channels {
        for j in 0..m {
            let a = fs.coeffs[c * m + j];
            let b = gs.coeffs[c * m + j];
            acc += weights[j] * (a.re * b.re + a.im * b.im);
        }
    }
    Ok(grid.volume() * acc)
}

pub fn weighted_norm(f: &GridFunction, w: &SpectralWeight) -> f64 {
    weighted_inner(f, f, w).map(|v| v.max(0.0).sqrt()).unwrap_or(f64::NAN)
}

pub fn sobolev_inner(f: &GridFunction, g: &GridFunction, spec: &SobolevSpec) -> Result<f64> {
    if f.grid.dim != spec.dim {
        return Err(Error::Grid("Sobolev spec dimension does not match grid".into()));
    }
    weighted_inner(f, g, &spec.weight())
}

pub fn sobolev_norm(f: &GridFunction, spec: &SobolevSpec) -> Result<f64> {
    Ok(sobolev_inner(f, f, spec)?.max(0.0).sqrt())
}

/// Weight value at every FFT index of the grid.
pub(crate) fn weight_table(grid: GridSpec, w: &SpectralWeight) -> Vec<f64> {
    (0..grid.len()).map(|j| w.eval_k(&grid.wavevector(j))).collect()
}

/// Nodal matrix of the weighted inner product: `⟨f, g⟩_w = Σ_x f(x) (W g)(x)`.
pub fn apply_weight(f: &GridFunction, w: &SpectralWeight) -> GridFunction {
    let grid = f.grid;
    let table = weight_table(grid, w);
    let scale = grid.cell_measure();
    spectral_multiply(f, |j| table[j] * scale)
}

/// Inverse of [`apply_weight`]: maps a nodal gradient to its Riesz representer.
pub fn apply_weight_inverse(g: &GridFunction, w: &SpectralWeight) -> GridFunction {
    let grid = g.grid;
    let table = weight_table(grid, w);
    let scale = grid.cell_measure();
    spectral_multiply(g, |j| 1.0 / (table[j] * scale))
}

/// Applies a real Fourier multiplier, indexed by flat FFT index, to every channel.
pub(crate) fn spectral_multiply(f: &GridFunction, mult: impl Fn(usize) -> f64) -> GridFunction {
    let mut s = dft_forward_unchecked(f);
    let m = f.grid.len();
    for c in 0..f.channels {
        for j in 0..m {
            s.coeffs[c * m + j] *= mult(j);
        }
    }
    dft_inverse(&s)
}

/// Phase of a real sinusoid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    Cos,
    Sin,
}

/// Selects `ψ_0` (zero wavevector with [`Phase::Cos`]), `ψ^cos_k` or `ψ^sin_k`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ModeIndex {
    pub k: Vec<i64>,
    pub phase: Phase,
}

impl ModeIndex {
    pub fn constant(dim: usize) -> Self {
        Self { k: vec![0; dim], phase: Phase::Cos }
    }

    pub fn is_zero(&self) -> bool {
        self.k.iter().all(|&v| v == 0)
    }

    pub fn norm_sq(&self) -> f64 {
        self.k.iter().map(|&v| (v * v) as f64).sum()
    }
}

/// Membership in `𝒦₊`: the first nonzero component is positive.
pub fn in_positive_half(k: &[i64]) -> bool {
    k.iter().find(|&&v| v != 0).is_some_and(|&v| v > 0)
}

fn validate_mode(index: &ModeIndex, grid: GridSpec) -> Result<()> {
    if index.k.len() != grid.dim {
        return invalid("mode dimension does not match grid");
    }
    if index.k.iter().any(|&v| 2 * v.unsigned_abs() as usize >= grid.n) {
        return invalid(format!("mode {:?} is not below the Nyquist frequency", index.k));
    }
    if index.is_zero() {
        if index.phase != Phase::Cos {
            return invalid("the zero mode has no sine component");
        }
    } else if !in_positive_half(&index.k) {
        return invalid(format!("mode {:?} is outside the positive half-lattice", index.k));
    }
    Ok(())
}

/// Normalisation making the sinusoid of `index` unit-norm under `w`.
pub(crate) fn mode_scale(k: &[i64], self_conjugate: bool, w: &SpectralWeight) -> f64 {
    let d = k.len() as i32;
    let base = if self_conjugate { 1.0 } else { 2.0 };
    (base / (2.0 * PI).powi(d)).sqrt() / w.eval_k(k).sqrt()
}

/// Real sinusoidal basis function, orthonormal in `H^s` for `spec.s`.
pub fn sinusoidal_basis(index: &ModeIndex, spec: &SobolevSpec, grid: GridSpec) -> Result<GridFunction> {
    if spec.dim != grid.dim {
        return Err(Error::Grid("Sobolev spec dimension does not match grid".into()));
    }
    validate_mode(index, grid)?;
    Ok(synthesize_mode(index, &spec.weight(), grid))
}

pub(crate) fn synthesize_mode(index: &ModeIndex, w: &SpectralWeight, grid: GridSpec) -> GridFunction {
    let self_conj = grid_self_conjugate(&index.k, grid);
    let c = mode_scale(&index.k, self_conj, w);
    GridFunction::from_fn(grid, 1, |_, x| {
        let arg: f64 = index.k.iter().zip(x).map(|(&k, &xi)| k as f64 * xi).sum();
        match index.phase {
            Phase::Cos => c * arg.cos(),
            Phase::Sin => c * arg.sin(),
        }
    })
}

/// Whether `k ≡ -k` modulo the grid (only zero and Nyquist components).
pub(crate) fn grid_self_conjugate(k: &[i64], grid: GridSpec) -> bool {
    k.iter().all(|&v| v == 0 || 2 * v.unsigned_abs() as usize == grid.n)
}

/// Squared Frobenius norm of the section `|k|_∞ ≤ cutoff` of the inclusion
/// `H^{s+δ} → H^s` in the sinusoidal bases, i.e. `Σ (1+|k|²)^{-δ}`.
pub fn inclusion_section_hs_sq(dim: usize, delta: f64, cutoff: usize) -> f64 {
    retained_modes(dim, cutoff)
        .iter()
        .map(|k| (1.0 + k.iter().map(|&v| (v * v) as f64).sum::<f64>()).powf(-delta))
        .sum()
}

/// The inclusion is Hilbert–Schmidt exactly when `δ > d/2`.
pub fn inclusion_is_hilbert_schmidt(dim: usize, delta: f64) -> bool {
    delta > dim as f64 / 2.0
}
