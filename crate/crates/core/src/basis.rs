//! Orthonormal bases of grid-function spaces and the coefficient maps they induce.

use crate::error::{invalid, shape, Result};
use crate::spectral::{
    dft_forward_unchecked, dft_inverse, grid_self_conjugate, in_positive_half, mode_scale, retained_modes,
    synthesize_mode, GridFunction, GridSpec, ModeIndex, Phase, SpectralField, SpectralWeight,
};
use num_complex::Complex64;

/// A finite orthonormal family `{φ_j}` under a diagonal Fourier inner product.
pub trait Basis: Send + Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn dim(&self) -> usize;

    fn channels(&self) -> usize;

    /// Inner product under which the family is orthonormal.
    fn weight(&self) -> SpectralWeight;

    /// Identifier compared when Jacobians built in different places are combined.
    fn tag(&self) -> String;

    fn supports_grid(&self, grid: GridSpec) -> bool;

    /// `φ_j` sampled on `grid`.
    fn synthesize(&self, j: usize, grid: GridSpec) -> Result<GridFunction>;

    /// Coefficients `⟨φ_j, v⟩` for every `j`.
    fn analyze(&self, v: &GridFunction) -> Result<Vec<f64>>;

    /// Euclidean adjoint of [`Basis::analyze`]: the nodal field `Σ_j c_j (W φ_j)` on `grid`.
    fn analyze_adjoint(&self, coeffs: &[f64], grid: GridSpec) -> Result<GridFunction>;

    /// `max |G - I|` of the Gram matrix.
    fn gram_deviation(&self) -> f64;

    /// `Σ_j c_j φ_j` on `grid`.
    fn combine(&self, coeffs: &[f64], grid: GridSpec) -> Result<GridFunction> {
        if coeffs.len() != self.len() {
            return shape("coefficient count does not match basis size");
        }
        let mut out = GridFunction::zeros(grid, self.channels());
        for (j, &c) in coeffs.iter().enumerate() {
            if c != 0.0 {
                out = out.add_scaled(c, &self.synthesize(j, grid)?)?;
            }
        }
        Ok(out)
    }
}

pub(crate) fn check_grid(basis: &dyn Basis, grid: GridSpec) -> Result<()> {
    if !basis.supports_grid(grid) {
        return invalid(format!("basis `{}` cannot be represented on {grid:?}", basis.tag()));
    }
    Ok(())
}

/// Real sinusoids `ψ_0, ψ^cos_k, ψ^sin_k`, one copy per channel, orthonormal under `weight`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeBasis {
    dim: usize,
    channels: usize,
    weight: SpectralWeight,
    entries: Vec<(ModeIndex, usize)>,
    /// Grid whose Nyquist-aliased modes are included, for complete bases.
    native: Option<GridSpec>,
    cutoff: usize,
}

fn sort_entries(entries: &mut [(ModeIndex, usize)]) {
    entries.sort_by(|(a, ca), (b, cb)| {
        a.norm_sq()
            .total_cmp(&b.norm_sq())
            .then_with(|| a.k.cmp(&b.k))
            .then_with(|| a.phase.cmp(&b.phase))
            .then_with(|| ca.cmp(cb))
    });
}

impl ModeBasis {
    /// All modes with `|k|_∞ ≤ cutoff` from `{0} ∪ 𝒦₊`, ordered by `|k|²`.
    pub fn band_limited(dim: usize, channels: usize, weight: SpectralWeight, cutoff: usize) -> Result<Self> {
        weight.validate()?;
        if channels == 0 {
            return invalid("basis needs at least one channel");
        }
        let mut entries = Vec::new();
        for k in retained_modes(dim, cutoff) {
            let phases: &[Phase] = if k.iter().all(|&v| v == 0) {
                &[Phase::Cos]
            } else if in_positive_half(&k) {
                &[Phase::Cos, Phase::Sin]
            } else {
                &[]
            };
            for &phase in phases {
                for c in 0..channels {
                    entries.push((ModeIndex { k: k.clone(), phase }, c));
                }
            }
        }
        sort_entries(&mut entries);
        Ok(Self { dim, channels, weight, entries, native: None, cutoff })
    }

    /// A complete orthonormal basis of all real grid functions on `grid`,
    /// including the grid-aliased Nyquist modes.
    pub fn complete(grid: GridSpec, channels: usize, weight: SpectralWeight) -> Result<Self> {
        weight.validate()?;
        let half = grid.n() as i64 / 2;
        let mut entries = Vec::new();
        for j in 0..grid.len() {
            let k = grid.wavevector(j);
            let phases: &[Phase] = if grid_self_conjugate(&k, grid) {
                &[Phase::Cos]
            } else if k.iter().find(|&&v| v != 0 && v != -half).is_some_and(|&v| v > 0) {
                &[Phase::Cos, Phase::Sin]
            } else {
                &[]
            };
            for &phase in phases {
                for c in 0..channels {
                    entries.push((ModeIndex { k: k.clone(), phase }, c));
                }
            }
        }
        sort_entries(&mut entries);
        Ok(Self { dim: grid.dim(), channels, weight, entries, native: Some(grid), cutoff: grid.n() / 2 })
    }

    pub fn entries(&self) -> &[(ModeIndex, usize)] {
        &self.entries
    }

    /// Grid of a complete basis.
    pub fn native_grid(&self) -> Option<GridSpec> {
        self.native
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    /// Keeps only the first `r` members.
    pub fn truncated(&self, r: usize) -> Result<Self> {
        if r > self.entries.len() {
            return invalid(format!("cannot keep {r} of {} modes", self.entries.len()));
        }
        let mut out = self.clone();
        out.entries.truncate(r);
        Ok(out)
    }

    /// Same modes, different inner product.
    pub fn with_weight(&self, weight: SpectralWeight) -> Self {
        let mut out = self.clone();
        out.weight = weight;
        out
    }

    fn sparse(&self, j: usize, grid: GridSpec) -> ([(usize, Complex64); 2], usize) {
        let (idx, _) = &self.entries[j];
        let self_conj = grid_self_conjugate(&idx.k, grid);
        let c = mode_scale(&idx.k, self_conj, &self.weight);
        let pos = grid.spectral_index(&idx.k);
        let zero = (0, Complex64::new(0.0, 0.0));
        if self_conj {
            return ([(pos, Complex64::new(c, 0.0)), zero], 1);
        }
        let neg: Vec<i64> = idx.k.iter().map(|v| -v).collect();
        let negi = grid.spectral_index(&neg);
        match idx.phase {
            Phase::Cos => ([(pos, Complex64::new(c / 2.0, 0.0)), (negi, Complex64::new(c / 2.0, 0.0))], 2),
            Phase::Sin => ([(pos, Complex64::new(0.0, -c / 2.0)), (negi, Complex64::new(0.0, c / 2.0))], 2),
        }
    }

    /// Coefficients from an already transformed field.
    pub(crate) fn analyze_spectrum(&self, s: &SpectralField) -> Vec<f64> {
        let grid = s.grid();
        let m = grid.len();
        let vol = grid.volume();
        let coeffs = s.coeffs();
        (0..self.entries.len())
            .map(|j| {
                let ch = self.entries[j].1;
                let w = self.weight.eval_k(&self.entries[j].0.k);
                let (sp, len) = self.sparse(j, grid);
                let mut acc = 0.0;
                for &(i, phi) in &sp[..len] {
                    let v = coeffs[ch * m + i];
                    acc += phi.re * v.re + phi.im * v.im;
                }
                vol * w * acc
            })
            .collect()
    }
}

impl Basis for ModeBasis {
    fn len(&self) -> usize {
        self.entries.len()
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn channels(&self) -> usize {
        self.channels
    }

    fn weight(&self) -> SpectralWeight {
        self.weight
    }

    fn tag(&self) -> String {
        match self.native {
            Some(g) => format!("modes[d={},c={},{},complete n={}]", self.dim, self.channels, self.weight.label(), g.n()),
            None => format!(
                "modes[d={},c={},{},N={},r={}]",
                self.dim,
                self.channels,
                self.weight.label(),
                self.cutoff,
                self.entries.len()
            ),
        }
    }

    fn supports_grid(&self, grid: GridSpec) -> bool {
        if grid.dim() != self.dim {
            return false;
        }
        match self.native {
            Some(g) => g == grid,
            None => 2 * self.cutoff < grid.n(),
        }
    }

    fn synthesize(&self, j: usize, grid: GridSpec) -> Result<GridFunction> {
        check_grid(self, grid)?;
        let (idx, ch) = &self.entries[j];
        let single = synthesize_mode(idx, &self.weight, grid);
        let mut values = vec![0.0; self.channels * grid.len()];
        values[ch * grid.len()..(ch + 1) * grid.len()].copy_from_slice(single.values());
        GridFunction::new(grid, self.channels, values)
    }

    fn analyze(&self, v: &GridFunction) -> Result<Vec<f64>> {
        check_grid(self, v.grid())?;
        if v.channels() != self.channels {
            return shape("channel count does not match basis");
        }
        Ok(self.analyze_spectrum(&dft_forward_unchecked(v)))
    }

    fn analyze_adjoint(&self, coeffs: &[f64], grid: GridSpec) -> Result<GridFunction> {
        check_grid(self, grid)?;
        if coeffs.len() != self.entries.len() {
            return shape("coefficient count does not match basis size");
        }
        let m = grid.len();
        let mut spec = vec![Complex64::new(0.0, 0.0); self.channels * m];
        for (j, &cj) in coeffs.iter().enumerate() {
            let ch = self.entries[j].1;
            let w = self.weight.eval_k(&self.entries[j].0.k);
            let (sp, len) = self.sparse(j, grid);
            for &(i, phi) in &sp[..len] {
                spec[ch * m + i] += phi * (cj * w);
            }
        }
        let field = SpectralField::new(grid, self.channels, spec)?;
        Ok(dft_inverse(&field).scaled(grid.cell_measure()))
    }

    fn gram_deviation(&self) -> f64 {
        0.0
    }

    fn combine(&self, coeffs: &[f64], grid: GridSpec) -> Result<GridFunction> {
        check_grid(self, grid)?;
        if coeffs.len() != self.entries.len() {
            return shape("coefficient count does not match basis size");
        }
        let m = grid.len();
        let mut spec = vec![Complex64::new(0.0, 0.0); self.channels * m];
        for (j, &cj) in coeffs.iter().enumerate() {
            let ch = self.entries[j].1;
            let (sp, len) = self.sparse(j, grid);
            for &(i, phi) in &sp[..len] {
                spec[ch * m + i] += phi * cj;
            }
        }
        Ok(dft_inverse(&SpectralField::new(grid, self.channels, spec)?))
    }
}
