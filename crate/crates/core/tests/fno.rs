mod common;

use common::*;
use difno_core::activations::GeluLike;
use difno_core::basis::{Basis, ModeBasis};
use difno_core::fno::*;
use difno_core::jacobian::{hilbert_schmidt_sq, jacobian_in_bases, DiffMode};
use difno_core::operator::Operator;
use difno_core::spectral::*;
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn config(dim: usize, depth: usize, width: usize, modes: usize) -> FnoConfig {
    FnoConfig::new(dim, depth, width, modes, 1, 1, GeluLike::default()).unwrap()
}

/// Initialized weights plus a random Hermitian bias and kernels large enough to leave the
/// linear regime of the activation.
fn random_params(cfg: &FnoConfig, seed: u64) -> FnoParams {
    let mut p = FnoParams::init(cfg, seed);
    let mut r = rng(seed ^ 0xb1a5);
    for l in &mut p.layers {
        for z in &mut l.bias {
            *z = Complex64::new(r.random_range(-0.3..0.3), r.random_range(-0.3..0.3));
        }
        for z in &mut l.kernel {
            *z *= 4.0;
        }
    }
    p.symmetrize(cfg);
    p
}

fn random_direction(cfg: &FnoConfig, r: &mut ChaCha8Rng) -> FnoParams {
    let len = FnoParams::zeros(cfg).flat_len();
    let mut d = FnoParams::from_flat(cfg, &uniform_vec(r, len)).unwrap();
    d.symmetrize(cfg);
    d
}

fn half_sq_loss(p: &FnoParams, cfg: &FnoConfig, a: &GridFunction) -> f64 {
    0.5 * forward(p, cfg, a).unwrap().0.l2_norm().powi(2)
}

#[test]
fn zero_params_give_zero_output() {
    let cfg = config(2, 2, 3, 2);
    let p = FnoParams::zeros(&cfg);
    let a = band_limited(grid(2, 8), 1, 3, &mut rng(1));
    let (u, _) = forward(&p, &cfg, &a).unwrap();
    assert_eq!(u.max_abs(), 0.0);
}

#[test]
fn rejects_coarse_grid_and_mismatched_input() {
    let cfg = config(2, 1, 2, 4);
    let p = FnoParams::init(&cfg, 0);
    assert!(forward(&p, &cfg, &GridFunction::zeros(grid(2, 8), 1)).is_err());
    assert!(forward(&p, &cfg, &GridFunction::zeros(grid(2, 16), 2)).is_err());
    assert!(forward(&p, &cfg, &GridFunction::zeros(grid(1, 16), 1)).is_err());
    assert!(FnoConfig::new(2, 0, 2, 2, 1, 1, GeluLike::default()).is_err());
}

#[test]
fn linear_kernel_oracle_is_projection() {
    let cfg = config(2, 1, 1, 3).with_linear_hook();
    let mut p = FnoParams::zeros(&cfg);
    p.lift[0] = 1.0;
    p.project[0] = 1.0;
    p.layers[0].kernel.iter_mut().for_each(|z| *z = Complex64::new(1.0, 0.0));
    let a = noise(grid(2, 16), 1, &mut rng(2));
    let (u, _) = forward(&p, &cfg, &a).unwrap();
    let expect = project_modes(&a, 3).unwrap();
    assert!(u.sub(&expect).unwrap().max_abs() < 1e-12);
}

#[test]
fn single_layer_agrees_nodally_across_grids() {
    let cfg = config(2, 1, 4, 3);
    let p = random_params(&cfg, 3);
    let coarse = grid(2, 16);
    let fine = grid(2, 32);
    let a_fine = band_limited(fine, 1, 5, &mut rng(4));
    let a_coarse = a_fine.subsample(coarse).unwrap();
    let (u_fine, _) = forward(&p, &cfg, &a_fine).unwrap();
    let (u_coarse, _) = forward(&p, &cfg, &a_coarse).unwrap();
    let gap = u_fine.subsample(coarse).unwrap().sub(&u_coarse).unwrap().max_abs();
    assert!(gap < 1e-10, "gap {gap:e}");
}

#[test]
fn linear_network_agrees_after_projection_across_grids() {
    let cfg = config(2, 3, 3, 3).with_linear_hook();
    let p = random_params(&cfg, 5);
    let fine = grid(2, 32);
    let a_fine = band_limited(fine, 1, 6, &mut rng(6));
    let a_coarse = a_fine.resample(grid(2, 16)).unwrap();
    let u_fine = project_modes(&forward(&p, &cfg, &a_fine).unwrap().0, 3).unwrap();
    let u_coarse = project_modes(&forward(&p, &cfg, &a_coarse).unwrap().0, 3).unwrap();
    let gap = u_fine.subsample(grid(2, 16)).unwrap().sub(&u_coarse).unwrap().max_abs();
    assert!(gap < 1e-10, "gap {gap:e}");
}

#[test]
fn deep_nonlinear_network_converges_under_refinement() {
    let cfg = config(1, 3, 4, 3);
    let p = random_params(&cfg, 7);
    let a_ref = band_limited(grid(1, 512), 1, 4, &mut rng(8));
    let u_ref = project_modes(&forward(&p, &cfg, &a_ref).unwrap().0, 3).unwrap();
    let mut gaps = Vec::new();
    for n in [16, 32, 64] {
        let g = grid(1, n);
        let u = project_modes(&forward(&p, &cfg, &a_ref.subsample(g).unwrap()).unwrap().0, 3).unwrap();
        gaps.push(u.sub(&u_ref.subsample(g).unwrap()).unwrap().max_abs());
    }
    assert!(gaps[2] < gaps[0], "{gaps:?}");
    assert!(gaps[2] < 1e-6, "{gaps:?}");
}

#[test]
fn jvp_matches_central_difference() {
    let cfg = config(2, 2, 4, 2);
    let g = grid(2, 8);
    let p = random_params(&cfg, 9);
    let mut r = rng(10);
    let a = band_limited(g, 1, 3, &mut r);
    let da = noise(g, 1, &mut r);
    let (_, tape) = forward(&p, &cfg, &a).unwrap();
    let du = jvp(&p, &cfg, &tape, &da).unwrap();
    let h = 1e-5;
    let up = forward(&p, &cfg, &a.add_scaled(h, &da).unwrap()).unwrap().0;
    let dn = forward(&p, &cfg, &a.add_scaled(-h, &da).unwrap()).unwrap().0;
    let fd = up.sub(&dn).unwrap().scaled(0.5 / h);
    let err = rel_field(&du, &fd);
    assert!(err <= 1e-6, "relative error {err:e}");
}

#[test]
fn jvp_is_linear() {
    let cfg = config(2, 2, 4, 2);
    let g = grid(2, 8);
    let p = random_params(&cfg, 11);
    let mut r = rng(12);
    let a = band_limited(g, 1, 3, &mut r);
    let da = noise(g, 1, &mut r);
    let (_, tape) = forward(&p, &cfg, &a).unwrap();
    assert_eq!(jvp(&p, &cfg, &tape, &GridFunction::zeros(g, 1)).unwrap().max_abs(), 0.0);
    let base = jvp(&p, &cfg, &tape, &da).unwrap();
    let scaled = jvp(&p, &cfg, &tape, &da.scaled(3.7)).unwrap();
    let err = scaled.sub(&base.scaled(3.7)).unwrap().l2_norm() / scaled.l2_norm();
    assert!(err <= 1e-13, "{err:e}");
}

#[test]
fn vjp_is_adjoint_of_jvp() {
    let cfg = config(2, 3, 4, 2);
    let g = grid(2, 8);
    let p = random_params(&cfg, 13);
    let mut r = rng(14);
    let a = band_limited(g, 1, 3, &mut r);
    let (_, tape) = forward(&p, &cfg, &a).unwrap();
    assert_eq!(vjp(&p, &cfg, &tape, &GridFunction::zeros(g, 1)).unwrap().max_abs(), 0.0);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let da = noise(g, 1, &mut r);
        let ub = noise(g, 1, &mut r);
        let lhs = ub.l2_inner(&jvp(&p, &cfg, &tape, &da).unwrap()).unwrap();
        let rhs = vjp(&p, &cfg, &tape, &ub).unwrap().l2_inner(&da).unwrap();
        worst = worst.max(rel(lhs, rhs));
    }
    assert!(worst <= 1e-10, "{worst:e}");
}

#[test]
fn vjp_of_zero_network_vanishes() {
    let cfg = config(2, 2, 3, 2);
    let p = FnoParams::zeros(&cfg);
    let g = grid(2, 8);
    let (_, tape) = forward(&p, &cfg, &band_limited(g, 1, 2, &mut rng(15))).unwrap();
    assert_eq!(vjp(&p, &cfg, &tape, &noise(g, 1, &mut rng(16))).unwrap().max_abs(), 0.0);
}

#[test]
fn param_grad_matches_central_difference() {
    let cfg = config(2, 2, 3, 2);
    let g = grid(2, 8);
    let p = random_params(&cfg, 17);
    let mut r = rng(18);
    let a = band_limited(g, 1, 3, &mut r);
    let (u, tape) = forward(&p, &cfg, &a).unwrap();
    let u_bar = u.scaled(g.cell_measure());
    let grad = param_grad(&p, &cfg, &tape, &u_bar).unwrap();
    assert_eq!(grad.hermitian_defect(&cfg), 0.0);
    for _ in 0..5 {
        let dir = random_direction(&cfg, &mut r);
        let h = 1e-5;
        let mut plus = p.clone();
        plus.axpy(h, &dir);
        let mut minus = p.clone();
        minus.axpy(-h, &dir);
        let fd = (half_sq_loss(&plus, &cfg, &a) - half_sq_loss(&minus, &cfg, &a)) / (2.0 * h);
        let err = rel(grad.dot(&dir), fd);
        assert!(err <= 1e-5, "relative error {err:e}");
    }
    let zero = param_grad(&p, &cfg, &tape, &GridFunction::zeros(g, 1)).unwrap();
    assert!(zero.to_flat().iter().all(|&x| x == 0.0));
}

#[test]
fn projection_gradient_matches_brute_force_sum() {
    let cfg = FnoConfig::new(1, 2, 3, 1, 1, 2, GeluLike::default()).unwrap();
    let g = grid(1, 4);
    let p = random_params(&cfg, 19);
    let mut r = rng(20);
    let a = noise(g, 1, &mut r);
    let u_bar = noise(g, 2, &mut r);
    let (_, tape) = forward(&p, &cfg, &a).unwrap();
    let grad = param_grad(&p, &cfg, &tape, &u_bar).unwrap();
    let v = tape.hidden(cfg.depth);
    for i in 0..2 {
        for j in 0..3 {
            let mut brute = 0.0;
            for x in 0..4 {
                brute += u_bar.values()[i * 4 + x] * v[j * 4 + x];
            }
            assert!((grad.project[i * 3 + j] - brute).abs() < 1e-14);
        }
    }
}

#[test]
fn outputs_are_real_before_discarding() {
    let cfg = config(2, 3, 4, 3);
    let g = grid(2, 16);
    let p = random_params(&cfg, 21);
    let mut r = rng(22);
    let a = band_limited(g, 1, 4, &mut r);
    let (_, tape) = forward(&p, &cfg, &a).unwrap();
    assert!(tape.imag_residue() <= 1e-12, "{:e}", tape.imag_residue());
    let tan = tangent(&p, &cfg, &tape, &noise(g, 1, &mut r)).unwrap();
    assert!(tan.imag_residue() <= 1e-12);
    let (_, res) = vjp_with_residue(&p, &cfg, &tape, &noise(g, 1, &mut r)).unwrap();
    assert!(res <= 1e-12);
}

#[test]
fn init_is_seeded_and_hermitian() {
    let cfg = config(2, 2, 4, 2);
    let a = FnoParams::init(&cfg, 42);
    assert_eq!(a, FnoParams::init(&cfg, 42));
    assert_ne!(a, FnoParams::init(&cfg, 43));
    assert_eq!(a.hermitian_defect(&cfg), 0.0);
    assert!(a.layers.iter().all(|l| l.bias.iter().all(|z| z.norm() == 0.0)));
    let flat = a.to_flat();
    assert_eq!(FnoParams::from_flat(&cfg, &flat).unwrap(), a);
    assert!(FnoParams::from_flat(&cfg, &flat[1..]).is_err());
}

#[test]
fn tangent_param_grad_matches_central_difference() {
    let cfg = config(1, 2, 3, 2);
    let g = grid(1, 16);
    let p = random_params(&cfg, 23);
    let mut r = rng(24);
    let a = band_limited(g, 1, 4, &mut r);
    let da = noise(g, 1, &mut r);
    let target = noise(g, 1, &mut r);
    // L = ½‖u‖² + ½‖DN(a)da − target‖²
    let loss = |q: &FnoParams| {
        let (u, tape) = forward(q, &cfg, &a).unwrap();
        let du = jvp(q, &cfg, &tape, &da).unwrap();
        0.5 * u.l2_norm().powi(2) + 0.5 * du.sub(&target).unwrap().l2_norm().powi(2)
    };
    let (u, tape) = forward(&p, &cfg, &a).unwrap();
    let tan = tangent(&p, &cfg, &tape, &da).unwrap();
    let du = tan.output(g, 1);
    let h_d = g.cell_measure();
    let mut grad = FnoParams::zeros(&cfg);
    tangent_param_grad(&p, &cfg, &tape, &tan, &du.sub(&target).unwrap().scaled(h_d), Some(&u.scaled(h_d)), &mut grad).unwrap();
    assert_eq!(grad.hermitian_defect(&cfg), 0.0);
    for _ in 0..5 {
        let dir = random_direction(&cfg, &mut r);
        let h = 1e-5;
        let mut plus = p.clone();
        plus.axpy(h, &dir);
        let mut minus = p.clone();
        minus.axpy(-h, &dir);
        let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
        let err = rel(grad.dot(&dir), fd);
        assert!(err <= 1e-5, "relative error {err:e}");
    }
}

struct Case {
    dim: usize,
    depth: usize,
    width: usize,
    modes: usize,
    n: usize,
}

fn random_cases(count: usize) -> Vec<Case> {
    let mut r = rng(2024);
    (0..count)
        .map(|_| {
            let dim = r.random_range(1..=2);
            let modes = r.random_range(1..=3);
            let n = if modes == 3 || r.random_bool(0.5) { 16 } else { 8 };
            Case { dim, depth: r.random_range(1..=3), width: r.random_range(2..=8), modes, n }
        })
        .collect()
}

#[test]
fn derivative_oracles_hold_across_random_configurations() {
    for (i, c) in random_cases(20).iter().enumerate() {
        let cfg = config(c.dim, c.depth, c.width, c.modes);
        let g = grid(c.dim, c.n);
        let p = random_params(&cfg, 100 + i as u64);
        let mut r = rng(200 + i as u64);
        let a = band_limited(g, 1, c.n / 2 - 1, &mut r);
        let da = noise(g, 1, &mut r);
        let ub = noise(g, 1, &mut r);
        let (_, tape) = forward(&p, &cfg, &a).unwrap();
        let du = jvp(&p, &cfg, &tape, &da).unwrap();
        let h = 1e-5;
        let fd = forward(&p, &cfg, &a.add_scaled(h, &da).unwrap())
            .unwrap()
            .0
            .sub(&forward(&p, &cfg, &a.add_scaled(-h, &da).unwrap()).unwrap().0)
            .unwrap()
            .scaled(0.5 / h);
        assert!(rel_field(&du, &fd) <= 1e-6, "case {i}: jvp {:e}", rel_field(&du, &fd));

        let abar = vjp(&p, &cfg, &tape, &ub).unwrap();
        let lhs = ub.l2_inner(&du).unwrap();
        let rhs = abar.l2_inner(&da).unwrap();
        assert!(rel(lhs, rhs) <= 1e-10, "case {i}: adjoint {:e}", rel(lhs, rhs));
        let scalar = |x: &GridFunction| ub.l2_inner(&forward(&p, &cfg, x).unwrap().0).unwrap();
        let fd_v = (scalar(&a.add_scaled(h, &da).unwrap()) - scalar(&a.add_scaled(-h, &da).unwrap())) / (2.0 * h);
        let v_dir = abar.l2_inner(&da).unwrap();
        assert!(rel(v_dir, fd_v) <= 1e-5, "case {i}: vjp {:e}", rel(v_dir, fd_v));

        let (u, _) = forward(&p, &cfg, &a).unwrap();
        let grad = param_grad(&p, &cfg, &tape, &u.scaled(g.cell_measure())).unwrap();
        let dir = random_direction(&cfg, &mut r);
        let mut plus = p.clone();
        plus.axpy(h, &dir);
        let mut minus = p.clone();
        minus.axpy(-h, &dir);
        let fd_p = (half_sq_loss(&plus, &cfg, &a) - half_sq_loss(&minus, &cfg, &a)) / (2.0 * h);
        assert!(rel(grad.dot(&dir), fd_p) <= 1e-5, "case {i}: param_grad {:e}", rel(grad.dot(&dir), fd_p));
    }
}

#[test]
fn full_basis_jacobian_is_isometric() {
    let cfg = config(2, 2, 4, 2);
    let g = grid(2, 8);
    let p = random_params(&cfg, 25);
    let a = band_limited(g, 1, 3, &mut rng(26));
    let model = FnoModel::new(cfg, p.clone()).unwrap();
    let lin = model.linearize(&a).unwrap();
    for (x, y) in [(0.0, 0.0), (1.0, 0.5)] {
        let xb = ModeBasis::complete(g, 1, SpectralWeight::Sobolev { s: x }).unwrap();
        let yw = SpectralWeight::Sobolev { s: y };
        let yb = ModeBasis::complete(g, 1, yw).unwrap();
        let fwd = jacobian_in_bases(lin.as_ref(), g, &xb, &yb, DiffMode::Forward).unwrap();
        let rev = jacobian_in_bases(lin.as_ref(), g, &xb, &yb, DiffMode::Reverse).unwrap();
        let hs = hilbert_schmidt_sq(lin.as_ref(), g, &xb, yw).unwrap();
        assert!(rel(fwd.frobenius_sq(), hs) <= 1e-10, "{:e}", rel(fwd.frobenius_sq(), hs));
        let diff: f64 = fwd.data.iter().zip(&rev.data).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(diff <= 1e-10 * fwd.frobenius());
        let dense = jacobian_dense(&p, &cfg, &a, &xb, &yb, DiffMode::Auto).unwrap();
        assert_eq!(dense.data, fwd.data);
    }
}

#[test]
fn linear_layer_jacobian_matches_explicit_multiplier() {
    let cfg = config(2, 1, 3, 2).with_linear_hook();
    let g = grid(2, 8);
    let p = random_params(&cfg, 27);
    let a = noise(g, 1, &mut rng(28));
    let basis = ModeBasis::complete(g, 1, SpectralWeight::L2).unwrap();
    let j = jacobian_dense(&p, &cfg, &a, &basis, &basis, DiffMode::Forward).unwrap();
    // Per mode the map is multiplication by m(k) = Q (W + P(k)) R.
    let modes = retained_modes(2, cfg.modes);
    let w = cfg.width;
    let multiplier = |k: &[i64]| {
        let q = modes.iter().position(|m| m.as_slice() == k);
        let mut total = Complex64::new(0.0, 0.0);
        for i in 0..w {
            for l in 0..w {
                let mut entry = Complex64::new(p.layers[0].local[i * w + l], 0.0);
                if let Some(q) = q {
                    entry += p.layers[0].kernel[q * w * w + i * w + l];
                }
                total += p.project[i] * entry * p.lift[l];
            }
        }
        total
    };
    let entries = basis.entries();
    let mut explicit = vec![0.0; entries.len() * entries.len()];
    for (col, (mc, _)) in entries.iter().enumerate() {
        let m = multiplier(&mc.k);
        for (row, (mr, _)) in entries.iter().enumerate() {
            if mr.k != mc.k {
                continue;
            }
            let self_conjugate = entries.iter().filter(|(e, _)| e.k == mc.k).count() == 1;
            explicit[row * entries.len() + col] = match (mr.phase, mc.phase) {
                _ if self_conjugate => m.re,
                (Phase::Cos, Phase::Cos) | (Phase::Sin, Phase::Sin) => m.re,
                (Phase::Sin, Phase::Cos) => -m.im,
                (Phase::Cos, Phase::Sin) => m.im,
            };
        }
    }
    let diff: f64 = j.data.iter().zip(&explicit).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    assert!(diff <= 1e-12 * j.frobenius(), "{diff:e}");
    let frob_explicit: f64 = explicit.iter().map(|x| x * x).sum::<f64>().sqrt();
    assert!(rel(j.frobenius(), frob_explicit) <= 1e-12);
}

#[test]
fn jacobian_entries_match_weighted_inner_products() {
    let cfg = config(2, 2, 3, 2);
    let g = grid(2, 8);
    let p = random_params(&cfg, 29);
    let a = band_limited(g, 1, 3, &mut rng(30));
    let xw = SpectralWeight::Matern { omega: 1.0, rho: 0.5, tau: 2.0, power: 0.5 };
    let yw = SpectralWeight::Sobolev { s: 1.0 };
    let xb = ModeBasis::band_limited(2, 1, xw, 2).unwrap();
    let yb = ModeBasis::band_limited(2, 1, yw, 3).unwrap();
    let model = FnoModel::new(cfg, p).unwrap();
    let lin = model.linearize(&a).unwrap();
    let j = jacobian_in_bases(lin.as_ref(), g, &xb, &yb, DiffMode::Reverse).unwrap();
    for k in 0..xb.len() {
        let col = lin.jvp(&xb.synthesize(k, g).unwrap()).unwrap();
        for jj in 0..yb.len() {
            let entry = weighted_inner(&yb.synthesize(jj, g).unwrap(), &col, &yw).unwrap();
            assert!((j.get(jj, k) - entry).abs() <= 1e-10 * (1.0 + entry.abs()));
        }
    }
}

/// An L² mode basis whose members are stretched by a constant factor.
struct Stretched(ModeBasis, f64);

impl Basis for Stretched {
    fn len(&self) -> usize {
        self.0.len()
    }
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn channels(&self) -> usize {
        self.0.channels()
    }
    fn weight(&self) -> SpectralWeight {
        self.0.weight()
    }
    fn tag(&self) -> String {
        "stretched".into()
    }
    fn supports_grid(&self, grid: GridSpec) -> bool {
        self.0.supports_grid(grid)
    }
    fn synthesize(&self, j: usize, grid: GridSpec) -> difno_core::Result<GridFunction> {
        Ok(self.0.synthesize(j, grid)?.scaled(self.1))
    }
    fn analyze(&self, v: &GridFunction) -> difno_core::Result<Vec<f64>> {
        Ok(self.0.analyze(v)?.into_iter().map(|c| c * self.1).collect())
    }
    fn analyze_adjoint(&self, coeffs: &[f64], grid: GridSpec) -> difno_core::Result<GridFunction> {
        Ok(self.0.analyze_adjoint(coeffs, grid)?.scaled(self.1))
    }
    fn gram_deviation(&self) -> f64 {
        let g = GridSpec::new(self.dim(), 8).unwrap();
        let f = self.synthesize(0, g).unwrap();
        (weighted_inner(&f, &f, &self.weight()).unwrap() - 1.0).abs()
    }
}

#[test]
fn jacobian_rejects_non_orthonormal_basis() {
    let cfg = config(2, 1, 2, 2);
    let g = grid(2, 8);
    let p = FnoParams::init(&cfg, 31);
    let a = band_limited(g, 1, 2, &mut rng(32));
    let good = ModeBasis::band_limited(2, 1, SpectralWeight::L2, 2).unwrap();
    let bad = Stretched(good.clone(), 1.0 + 1e-6);
    assert!(jacobian_dense(&p, &cfg, &a, &bad, &good, DiffMode::Forward).is_err());
    assert!(jacobian_dense(&p, &cfg, &a, &good, &bad, DiffMode::Forward).is_err());
    let fine = Stretched(good.clone(), 1.0 + 1e-12);
    assert!(jacobian_dense(&p, &cfg, &a, &fine, &good, DiffMode::Forward).is_ok());
}
