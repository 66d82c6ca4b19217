#![allow(dead_code)]

use difno_core::basis::{Basis, ModeBasis};
use difno_core::spectral::{GridFunction, GridSpec, SpectralWeight};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn grid(d: usize, n: usize) -> GridSpec {
    GridSpec::new(d, n).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Nodal white noise.
pub fn noise(g: GridSpec, channels: usize, rng: &mut ChaCha8Rng) -> GridFunction {
    GridFunction::new(g, channels, uniform_vec(rng, channels * g.len())).unwrap()
}

/// Random combination of L² sinusoids with `|k|_∞ ≤ cutoff`, decaying as `1/(1+|k|²)`.
pub fn band_limited(g: GridSpec, channels: usize, cutoff: usize, rng: &mut ChaCha8Rng) -> GridFunction {
    let b = ModeBasis::band_limited(g.dim(), channels, SpectralWeight::L2, cutoff).unwrap();
    let coeffs: Vec<f64> = b
        .entries()
        .iter()
        .map(|(m, _)| rng.random_range(-1.0..1.0) / (1.0 + m.norm_sq()))
        .collect();
    b.combine(&coeffs, g).unwrap()
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

pub fn rel_field(a: &GridFunction, b: &GridFunction) -> f64 {
    a.sub(b).unwrap().l2_norm() / a.l2_norm().max(b.l2_norm()).max(1e-300)
}
