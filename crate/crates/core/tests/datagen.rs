mod common;

use common::*;
use difno_core::basis::{Basis, ModeBasis};
use difno_core::datagen::*;
use difno_core::jacobian::{jacobian_in_bases, DiffMode};
use difno_core::losses::{restrict_jacobian, ResolutionLevels};
use difno_core::operator::Operator;
use difno_core::reduction::{kle_analytic, ReducedBasis};
use difno_core::spectral::*;

fn zero_forcing(g: GridSpec) -> PdeSpec {
    PdeSpec::new(Forcing::Field(GridFunction::zeros(g, 1)))
}

fn bump_spec() -> PdeSpec {
    PdeSpec::new(Forcing::four_bumps(2))
}

/// Smooth coefficient field of moderate amplitude.
fn coefficient(g: GridSpec, seed: u64) -> GridFunction {
    band_limited(g, 1, 3, &mut rng(seed)).scaled(2.0)
}

#[test]
fn grf_is_deterministic_per_seed_and_index() {
    let spec = GrfSpec::default();
    let g = grid(2, 16);
    let a = sample_grf(&spec, g, 3).unwrap();
    let b = sample_grf(&spec, g, 3).unwrap();
    assert_eq!(a, b);
    assert_eq!(a[2], sample_grf_at(&spec, g, 2).unwrap());
    assert_ne!(a[0], a[1]);
    let other = GrfSpec { seed: 1, ..spec };
    assert_ne!(sample_grf_at(&other, g, 0).unwrap(), a[0]);
    assert!(GrfSpec::new(1.0, 1.0, 1.5, 0).is_err());
    assert!(GrfSpec::new(0.0, 1.0, 2.0, 0).is_err());
}

#[test]
fn grf_coefficients_have_the_matern_variance() {
    let spec = GrfSpec::default();
    let g = grid(2, 8);
    let count = 10_000;
    let samples = sample_grf(&spec, g, count).unwrap();
    let basis = ModeBasis::band_limited(2, 1, SpectralWeight::L2, 3).unwrap();
    let coeffs: Vec<Vec<f64>> = samples.iter().map(|s| basis.analyze(s).unwrap()).collect();
    for (j, (m, _)) in basis.entries().iter().enumerate() {
        let lambda = spec.eigenvalue(m.norm_sq());
        let mean = coeffs.iter().map(|c| c[j]).sum::<f64>() / count as f64;
        let var = coeffs.iter().map(|c| c[j] * c[j]).sum::<f64>() / count as f64;
        assert!((var / lambda - 1.0).abs() <= 0.05, "mode {:?}: {var} vs {lambda}", m.k);
        assert!(mean.abs() <= 3.0 * (lambda / count as f64).sqrt(), "mode {:?}: mean {mean}", m.k);
    }
}

#[test]
fn grf_norms_have_no_outliers() {
    let spec = GrfSpec::default();
    let samples = sample_grf(&spec, grid(2, 16), 1000).unwrap();
    let h = SobolevSpec::new(0.5, 0.0, 2).unwrap();
    let mut norms: Vec<f64> = samples.iter().map(|s| sobolev_norm(s, &h).unwrap()).collect();
    norms.sort_by(f64::total_cmp);
    let median = norms[500];
    assert!(norms.iter().all(|n| n.is_finite() && *n <= 10.0 * median));
}

#[test]
fn four_bumps_are_periodic_and_centred() {
    let g = grid(2, 32);
    let f = Forcing::four_bumps(2).on_grid(g).unwrap();
    let h = g.spacing();
    let at = |x: f64, y: f64| f.values()[g.flat_index(&[(x / h).round() as usize, (y / h).round() as usize])];
    let peak = at(std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2);
    assert!((peak - 1.0).abs() < 1e-6);
    assert!((at(3.0 * std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2) - peak).abs() < 1e-12);
    assert!(at(0.0, 0.0) < 0.01);
}

#[test]
fn zero_data_gives_zero_state() {
    let g = grid(2, 8);
    let sol = solve_pde(&zero_forcing(g), &GridFunction::zeros(g, 1)).unwrap();
    assert_eq!(sol.u.max_abs(), 0.0);
    assert_eq!(sol.iterations, 0);
}

#[test]
fn manufactured_solution_is_recovered() {
    let g = grid(2, 16);
    let f = GridFunction::from_fn(g, 1, |_, x| x[0].cos() + x[0].cos().powi(3));
    let spec = PdeSpec { newton_tol: 1e-12, ..PdeSpec::new(Forcing::Field(f)) };
    let sol = solve_pde(&spec, &GridFunction::zeros(g, 1)).unwrap();
    let exact = GridFunction::from_fn(g, 1, |_, x| x[0].cos());
    assert!(sol.u.sub(&exact).unwrap().max_abs() <= 1e-8);
}

#[test]
fn residual_meets_tolerance_and_looser_tolerance_is_not_slower() {
    let g = grid(2, 16);
    let a = coefficient(g, 1);
    let mut iters = Vec::new();
    for tol in [1e-11, 2e-11, 4e-11, 1e-6, 2e-6] {
        let spec = PdeSpec { newton_tol: tol, ..bump_spec() };
        let sol = solve_pde(&spec, &a).unwrap();
        assert!(*sol.residual_history.last().unwrap() <= tol);
        iters.push(sol.iterations);
    }
    assert!(iters.windows(2).all(|w| w[1] <= w[0]), "{iters:?}");
}

#[test]
fn newton_reports_non_convergence() {
    let g = grid(2, 16);
    let spec = PdeSpec { newton_tol: 1e-14, max_newton: 1, ..bump_spec() };
    let err = solve_pde(&spec, &coefficient(g, 2)).unwrap_err();
    assert!(err.to_string().contains("residual history"));
}

#[test]
fn sensitivity_matches_central_difference() {
    let g = grid(2, 16);
    let spec = PdeSpec { newton_tol: 1e-13, ..bump_spec() };
    let a = coefficient(g, 3);
    let da = band_limited(g, 1, 7, &mut rng(4));
    let u = solve_pde(&spec, &a).unwrap().u;
    let du = solve_sensitivity(&spec, &a, &u, &da).unwrap();
    let h = 1e-4;
    let up = solve_pde(&spec, &a.add_scaled(h, &da).unwrap()).unwrap().u;
    let dn = solve_pde(&spec, &a.add_scaled(-h, &da).unwrap()).unwrap().u;
    let fd = up.sub(&dn).unwrap().scaled(0.5 / h);
    let err = rel_field(&du, &fd);
    assert!(err <= 1e-5, "{err:e}");
    assert_eq!(solve_sensitivity(&spec, &a, &u, &GridFunction::zeros(g, 1)).unwrap().max_abs(), 0.0);
    let scaled = solve_sensitivity(&spec, &a, &u, &da.scaled(-2.5)).unwrap();
    assert!(rel_field(&scaled, &du.scaled(-2.5)) <= 1e-10);
}

#[test]
fn reused_solver_matches_cold_solves() {
    let g = grid(2, 16);
    let spec = bump_spec();
    let a = coefficient(g, 5);
    let u = solve_pde(&spec, &a).unwrap().u;
    let solver = SensitivitySolver::new(&spec, &a, &u).unwrap();
    let mut r = rng(6);
    for _ in 0..10 {
        let da = noise(g, 1, &mut r);
        let warm = solver.forward(&da).unwrap();
        let cold = solve_sensitivity(&spec, &a, &u, &da).unwrap();
        assert!(warm.sub(&cold).unwrap().max_abs() <= 1e-10);
    }
    assert_eq!(solver.solve_count(), 10);
}

#[test]
fn adjoint_sensitivity_is_transpose() {
    let g = grid(2, 16);
    let op = PdeOperator { spec: bump_spec() };
    let a = coefficient(g, 7);
    let lin = op.linearize(&a).unwrap();
    let mut r = rng(8);
    for _ in 0..5 {
        let da = noise(g, 1, &mut r);
        let ub = noise(g, 1, &mut r);
        let lhs = ub.l2_inner(&lin.jvp(&da).unwrap()).unwrap();
        let rhs = lin.vjp(&ub).unwrap().l2_inner(&da).unwrap();
        assert!(rel(lhs, rhs) <= 1e-9, "{lhs} {rhs}");
    }
}

#[test]
fn toy_operator_derivatives() {
    let toy = ToyOperator::default();
    let g = grid(2, 16);
    assert_eq!(toy.apply(&GridFunction::zeros(g, 1)).unwrap().max_abs(), 0.0);
    let mut r = rng(9);
    let a = band_limited(g, 1, 5, &mut r).scaled(3.0);
    let da = noise(g, 1, &mut r);
    let lin = toy.linearize(&a).unwrap();
    let h = 1e-5;
    let fd = toy
        .apply(&a.add_scaled(h, &da).unwrap())
        .unwrap()
        .sub(&toy.apply(&a.add_scaled(-h, &da).unwrap()).unwrap())
        .unwrap()
        .scaled(0.5 / h);
    assert!(rel_field(&lin.jvp(&da).unwrap(), &fd) <= 1e-8);
    let ub = noise(g, 1, &mut r);
    let lhs = ub.l2_inner(&lin.jvp(&da).unwrap()).unwrap();
    let rhs = lin.vjp(&ub).unwrap().l2_inner(&da).unwrap();
    assert!(rel(lhs, rhs) <= 1e-12);
}

#[test]
fn toy_dis_at_zero_follows_kernel_spectrum() {
    let toy = ToyOperator::default();
    let g = grid(2, 16);
    let basis = ModeBasis::complete(g, 1, SpectralWeight::L2).unwrap();
    let lin = toy.linearize(&GridFunction::zeros(g, 1)).unwrap();
    let j = jacobian_in_bases(lin.as_ref(), g, &basis, &basis, DiffMode::Forward).unwrap();
    let (din, _) = difno_core::reduction::dis_from_jacobians(&[j], &basis, &basis, 5, 5).unwrap();
    // At a = 0 the Jacobian is K itself, so the spectrum is K̂(k)² ordered by |k|².
    let expect: Vec<f64> = [0i64, 1, 1, 1, 1].iter().map(|&k| toy.multiplier(&[k, 0]).powi(2)).collect();
    for (l, e) in din.eigenvalues().iter().zip(&expect) {
        assert!((l - e).abs() <= 1e-12, "{l} vs {e}");
    }
    // The top direction is the constant mode.
    assert!((din.vector(0)[0].abs() - 1.0).abs() <= 1e-12);
}

#[test]
fn empty_dataset_has_manifest() {
    let g = grid(2, 8);
    let (samples, manifest) = generate_dataset(&ToyOperator::default(), &GrfSpec::default(), g, 0, 0, &JacobianMode::None).unwrap();
    assert!(samples.is_empty());
    assert!(manifest.contains("count = 0"));
    assert!(manifest.contains("grf.tau = 2"));
}

#[test]
fn full_jacobian_columns_are_sensitivity_coefficients() {
    let g = grid(2, 8);
    let op = PdeOperator { spec: bump_spec() };
    let mode = JacobianMode::Full { x: SpectralWeight::L2, y: SpectralWeight::L2 };
    let s = generate_sample(&op, &GrfSpec::default(), g, 0, &mode).unwrap();
    let j = s.jacobian.as_ref().unwrap();
    let basis = ModeBasis::complete(g, 1, SpectralWeight::L2).unwrap();
    for k in [0, 3, 17, 40] {
        let du = solve_sensitivity(&op.spec, &s.input, &s.output, &basis.synthesize(k, g).unwrap()).unwrap();
        let c = basis.analyze(&du).unwrap();
        for (row, cj) in c.iter().enumerate() {
            assert!((j.get(row, k) - cj).abs() <= 1e-10);
        }
    }
}

#[test]
fn reduced_jacobian_is_projection_of_full_and_counts_solves() {
    let g = grid(2, 8);
    let op = PdeOperator { spec: bump_spec() };
    let grf = GrfSpec::default();
    let xb = ModeBasis::complete(g, 1, SpectralWeight::L2).unwrap();
    let full = generate_sample(&op, &grf, g, 1, &JacobianMode::Full { x: SpectralWeight::L2, y: SpectralWeight::L2 }).unwrap();
    let full_j = full.jacobian.unwrap();
    let input = difno_core::reduction::random_subspace(&xb, 3, &mut rng(10)).unwrap();
    let output = difno_core::reduction::random_subspace(&xb, 5, &mut rng(11)).unwrap();
    for (i, o, solves) in [(&input, &output, 3), (&output, &input, 3)] {
        let mode = JacobianMode::Reduced { input: i.clone(), output: o.clone() };
        let s = generate_sample(&op, &grf, g, 1, &mode).unwrap();
        assert_eq!(s.linear_solves, solves);
        let expect = ReducedBasis::reduce_jacobian(o, &full_j, i).unwrap();
        let got = s.jacobian.unwrap();
        let diff = got.data.iter().zip(&expect.data).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(diff <= 1e-8, "{diff:e}");
        assert_eq!(got.in_tag, expect.in_tag);
    }
}

#[test]
fn coarse_projected_target_is_block_of_fine_target() {
    let fine = grid(2, 16);
    let coarse = grid(2, 8);
    let toy = ToyOperator::default();
    let grf = GrfSpec::default();
    let levels = ResolutionLevels::two_level(fine, coarse).unwrap();
    let w = SpectralWeight::Sobolev { s: 1.0 };
    let mode = JacobianMode::Coarse { levels, x: SpectralWeight::L2, y: w, native: false };
    let s = generate_sample(&toy, &grf, fine, 2, &mode).unwrap();
    let full = generate_sample(&toy, &grf, fine, 2, &JacobianMode::Full { x: SpectralWeight::L2, y: w }).unwrap();
    let (xb, yb) = levels.bases(1, 1, SpectralWeight::L2, w).unwrap();
    let block = restrict_jacobian(
        full.jacobian.as_ref().unwrap(),
        &ModeBasis::complete(fine, 1, SpectralWeight::L2).unwrap(),
        &ModeBasis::complete(fine, 1, w).unwrap(),
        &xb,
        &yb,
    )
    .unwrap();
    let got = s.jacobian.unwrap();
    assert_eq!(got.in_tag, block.in_tag);
    let diff = got.data.iter().zip(&block.data).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    assert!(diff <= 1e-12, "{diff:e}");
    let native = generate_sample(&toy, &grf, fine, 2, &JacobianMode::Coarse { levels, x: SpectralWeight::L2, y: w, native: true }).unwrap();
    assert!(native.jacobian.unwrap().same_bases(&got));
}

#[test]
fn dataset_is_deterministic_and_ordered() {
    let g = grid(2, 8);
    let toy = ToyOperator::default();
    let grf = GrfSpec { seed: 7, ..GrfSpec::default() };
    let kle = kle_analytic(&grf, 4, g, 0.5).unwrap();
    let mode = JacobianMode::Reduced { input: kle.clone(), output: kle };
    let (a, ma) = generate_dataset(&toy, &grf, g, 3, 5, &mode).unwrap();
    let (b, mb) = generate_dataset(&toy, &grf, g, 3, 5, &mode).unwrap();
    assert_eq!(a, b);
    assert_eq!(ma, mb);
    assert_eq!(a[1].input, sample_grf_at(&grf, g, 4).unwrap());
    assert_eq!(a[0].jacobian.as_ref().unwrap().rows, 4);
}

/// `P_N` through the packed truncated transform, a route separate from `project_modes`.
fn truncate(f: &GridFunction, n: usize) -> GridFunction {
    truncated_inverse(&truncated_transform(f, n).unwrap(), f.grid()).unwrap()
}

#[test]
fn truncation_error_matches_direct_evaluation() {
    let g = grid(2, 16);
    let toy = ToyOperator::default();
    let grf = GrfSpec { seed: 3, ..GrfSpec::default() };
    let cutoffs = [0, 1, 3, 5];
    let got = truncation_errors(&toy, &grf, g, 4, &cutoffs).unwrap();
    let inputs: Vec<_> = (0..4).map(|i| sample_grf_at(&grf, g, i).unwrap()).collect();
    let total: f64 = inputs.iter().map(|a| toy.apply(a).unwrap().l2_norm().powi(2)).sum();
    for (&n, e) in cutoffs.iter().zip(&got) {
        let gap: f64 = inputs
            .iter()
            .map(|a| {
                let v = truncate(&toy.apply(&truncate(a, n)).unwrap(), n);
                toy.apply(a).unwrap().sub(&v).unwrap().l2_norm().powi(2)
            })
            .sum();
        let want = (gap / total).sqrt();
        assert!((e - want).abs() <= 1e-12 * want.max(1e-300), "{n}: {e} {want}");
    }
}

#[test]
fn truncation_error_vanishes_once_everything_is_resolved() {
    let g = grid(2, 8);
    let toy = ToyOperator { length: 0.3, cutoff: 2 };
    let e = truncation_errors(&toy, &GrfSpec::default(), g, 3, &[g.max_cutoff()]).unwrap();
    assert!(e[0] <= 1e-13, "{e:?}");
}
