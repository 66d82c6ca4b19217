mod common;

use common::*;
use difno_core::activations::GeluLike;
use difno_core::basis::{Basis, ModeBasis};
use difno_core::datagen::{sample_grf_at, GrfSpec, ToyOperator};
use difno_core::fno::{FnoConfig, FnoModel, FnoParams};
use difno_core::jacobian::{jacobian_in_bases, operator_jacobian, DiffMode, JacobianMatrix};
use difno_core::losses::*;
use difno_core::operator::Operator;
use difno_core::reduction::random_subspace;
use difno_core::spectral::*;
use proptest::prelude::*;
use std::f64::consts::PI;

fn variants(g: GridSpec) -> Vec<WeightingTensor> {
    vec![
        WeightingTensor::spectral(0.0, g).unwrap(),
        WeightingTensor::spectral(1.0, g).unwrap(),
        WeightingTensor::new(WeightVariant::FiniteDifferenceH1, g).unwrap(),
        WeightingTensor::new(WeightVariant::LumpedL2, g).unwrap(),
    ]
}

#[test]
fn output_loss_examples() {
    let g = grid(2, 16);
    let cos = GridFunction::from_fn(g, 1, |_, x| x[0].cos());
    let zero = GridFunction::zeros(g, 1);
    let h1 = WeightingTensor::spectral(1.0, g).unwrap();
    let (v, _) = output_loss(&cos, &zero, &h1).unwrap();
    assert!((v - (2.0 * PI).powi(2)).abs() <= 1e-10);
    assert_eq!(output_loss(&cos, &cos, &h1).unwrap().0, 0.0);
    let f = noise(g, 1, &mut rng(1));
    let l2 = WeightingTensor::spectral(0.0, g).unwrap();
    let d = f.sub(&cos).unwrap().l2_norm().powi(2);
    assert!(rel(output_loss(&f, &cos, &l2).unwrap().0, d) <= 1e-12);
    assert!(output_loss(&f, &GridFunction::zeros(grid(2, 8), 1), &l2).is_err());
}

#[test]
fn weighting_tensors_are_symmetric_positive_definite() {
    let g = grid(2, 8);
    let mut r = rng(2);
    for w in variants(g) {
        for _ in 0..1000 {
            let v = noise(g, 1, &mut r);
            assert!(w.quadratic(&v).unwrap() > 0.0, "{}", w.label());
        }
        let (u, v) = (noise(g, 1, &mut r), noise(g, 1, &mut r));
        assert!(rel(w.inner(&u, &v).unwrap(), w.inner(&v, &u).unwrap()) <= 1e-12);
    }
}

#[test]
fn output_gradient_matches_finite_difference() {
    let g = grid(2, 8);
    let mut r = rng(3);
    for w in variants(g) {
        let (p, t, dir) = (noise(g, 1, &mut r), noise(g, 1, &mut r), noise(g, 1, &mut r));
        let (_, grad) = output_loss(&p, &t, &w).unwrap();
        let h = 1e-6;
        let fd = (output_loss(&p.add_scaled(h, &dir).unwrap(), &t, &w).unwrap().0
            - output_loss(&p.add_scaled(-h, &dir).unwrap(), &t, &w).unwrap().0)
            / (2.0 * h);
        let an: f64 = grad.values().iter().zip(dir.values()).map(|(a, b)| a * b).sum();
        assert!(rel(an, fd) <= 1e-6, "{} {an} {fd}", w.label());
    }
}

#[test]
fn finite_difference_h1_converges_to_spectral() {
    let mut ratios = Vec::new();
    for n in [16, 32, 64] {
        let g = grid(2, n);
        let f = GridFunction::from_fn(g, 1, |_, x| (x[0] + 0.3).sin() + 0.5 * (2.0 * x[1]).cos() + 0.2 * (x[0] - 2.0 * x[1]).cos());
        let fd = WeightingTensor::new(WeightVariant::FiniteDifferenceH1, g).unwrap().quadratic(&f).unwrap();
        let sp = WeightingTensor::spectral(1.0, g).unwrap().quadratic(&f).unwrap();
        ratios.push((fd / sp - 1.0).abs());
    }
    assert!(ratios[1] < ratios[0] / 3.5 && ratios[2] < ratios[1] / 3.5, "{ratios:?}");
}

fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> JacobianMatrix {
    JacobianMatrix::new(rows, cols, data, "x", "y").unwrap()
}

#[test]
fn derivative_loss_examples() {
    let eye = matrix(3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    let zero = matrix(3, 3, vec![0.0; 9]);
    assert_eq!(derivative_loss(&eye, &eye).unwrap().0, 0.0);
    assert_eq!(derivative_loss(&eye, &zero).unwrap().0, 3.0);
    let mut r = rng(4);
    let a = matrix(4, 5, uniform_vec(&mut r, 20));
    let b = matrix(4, 5, uniform_vec(&mut r, 20));
    let (v, g) = derivative_loss(&a, &b).unwrap();
    let mut brute = 0.0;
    for j in 0..4 {
        for k in 0..5 {
            brute += (a.get(j, k) - b.get(j, k)).powi(2);
            assert_eq!(g.get(j, k), 2.0 * (a.get(j, k) - b.get(j, k)));
        }
    }
    assert!(rel(v, brute) <= 1e-14);
    let other = JacobianMatrix::new(4, 5, b.data.clone(), "x'", "y").unwrap();
    assert!(matches!(derivative_loss(&a, &other), Err(difno_core::Error::BasisMismatch { .. })));
}

#[test]
fn derivative_loss_equals_hilbert_schmidt_distance() {
    let g = grid(2, 8);
    let toy = ToyOperator::default();
    let cfg = FnoConfig::new(2, 2, 3, 2, 1, 1, GeluLike::default()).unwrap();
    let model = FnoModel::new(cfg, FnoParams::init(&cfg, 5)).unwrap();
    let a = band_limited(g, 1, 3, &mut rng(6));
    let yw = SpectralWeight::Sobolev { s: 1.0 };
    let xb = ModeBasis::complete(g, 1, SpectralWeight::L2).unwrap();
    let yb = ModeBasis::complete(g, 1, yw).unwrap();
    let jt = operator_jacobian(&toy, &a, &xb, &yb, DiffMode::Forward).unwrap();
    let jp = operator_jacobian(&model, &a, &xb, &yb, DiffMode::Reverse).unwrap();
    let (loss, _) = derivative_loss(&jp, &jt).unwrap();
    let lt = toy.linearize(&a).unwrap();
    let lp = model.linearize(&a).unwrap();
    let mut hs = 0.0;
    for k in 0..xb.len() {
        let psi = xb.synthesize(k, g).unwrap();
        let d = lp.jvp(&psi).unwrap().sub(&lt.jvp(&psi).unwrap()).unwrap();
        hs += weighted_norm(&d, &yw).powi(2);
    }
    assert!(rel(loss, hs) <= 1e-10);
}

#[test]
fn reduced_loss_full_rank_empty_and_nested() {
    let g = grid(2, 8);
    let toy = ToyOperator::default();
    let cfg = FnoConfig::new(2, 1, 3, 2, 1, 1, GeluLike::default()).unwrap();
    let model = FnoModel::new(cfg, FnoParams::init(&cfg, 7)).unwrap();
    let a = sample_grf_at(&GrfSpec::default(), g, 0).unwrap();
    let full = ModeBasis::complete(g, 1, SpectralWeight::L2).unwrap();
    let jt = operator_jacobian(&toy, &a, &full, &full, DiffMode::Forward).unwrap();
    let jp = operator_jacobian(&model, &a, &full, &full, DiffMode::Forward).unwrap();
    let full_loss = derivative_loss(&jp, &jt).unwrap().0;

    // A rotated complete basis: r = full dimension.
    let rot_in = random_subspace(&full, full.len(), &mut rng(8)).unwrap();
    let rot_out = random_subspace(&full, full.len(), &mut rng(9)).unwrap();
    let target = difno_core::reduction::ReducedBasis::reduce_jacobian(&rot_out, &jt, &rot_in).unwrap();
    let reduced = reduced_derivative_loss(&model, &a, &target, &rot_in, &rot_out).unwrap();
    assert!(rel(reduced, full_loss) <= 1e-10, "{reduced} {full_loss}");

    let empty = rot_in.truncated(0).unwrap();
    let t0 = JacobianMatrix::zeros(0, 0, empty.tag(), empty.tag());
    assert_eq!(reduced_derivative_loss(&model, &a, &t0, &empty, &empty).unwrap(), 0.0);

    let mut last = 0.0;
    for r in [1, 4, 9, 20, 40] {
        let xi = rot_in.truncated(r).unwrap();
        let yi = rot_out.truncated(r).unwrap();
        let zero = JacobianMatrix::zeros(r, r, xi.tag(), yi.tag());
        let l = reduced_derivative_loss(&model, &a, &zero, &xi, &yi).unwrap();
        assert!(last <= l + 1e-12);
        last = l;
    }
    let wrong = JacobianMatrix::zeros(4, 4, "other", rot_out.truncated(4).unwrap().tag());
    assert!(reduced_derivative_loss(&model, &a, &wrong, &rot_in.truncated(4).unwrap(), &rot_out.truncated(4).unwrap()).is_err());
}

/// A linear FNO whose Jacobian is a Fourier multiplier, hence exact on every grid.
fn linear_model(seed: u64) -> FnoModel {
    let cfg = FnoConfig::new(2, 1, 3, 2, 1, 1, GeluLike::default()).unwrap().with_linear_hook();
    FnoModel::new(cfg, FnoParams::init(&cfg, seed)).unwrap()
}

#[test]
fn mixed_resolution_is_exact_for_band_limited_pairs() {
    let high = grid(2, 32);
    let low = grid(2, 8);
    let levels = ResolutionLevels::two_level(high, low).unwrap();
    let model = linear_model(10);
    let target_op = linear_model(11);
    let a = sample_grf_at(&GrfSpec::default(), high, 0).unwrap();
    let yw = SpectralWeight::Sobolev { s: 1.0 };
    let (xb, yb) = levels.bases(1, 1, SpectralWeight::L2, yw).unwrap();
    let target = operator_jacobian(&target_op, &a, &xb, &yb, DiffMode::Forward).unwrap();
    let coarse = mixed_res_derivative_loss(&model, &a, &target, &levels, &xb, &yb).unwrap();
    let fine = operator_jacobian(&model, &a, &xb, &yb, DiffMode::Forward).unwrap();
    let restricted = derivative_loss(&fine, &target).unwrap().0;
    assert!(rel(coarse, restricted) <= 1e-10, "{coarse} {restricted}");

    let same = ResolutionLevels::two_level(high, high).unwrap();
    let (xh, yh) = same.bases(1, 1, SpectralWeight::L2, yw).unwrap();
    let th = operator_jacobian(&target_op, &a, &xh, &yh, DiffMode::Forward).unwrap();
    let direct = derivative_loss(&operator_jacobian(&model, &a, &xh, &yh, DiffMode::Forward).unwrap(), &th).unwrap().0;
    assert_eq!(mixed_res_derivative_loss(&model, &a, &th, &same, &xh, &yh).unwrap(), direct);
    assert!(ResolutionLevels::new(high, low, high).is_err());
}

#[test]
fn mixed_resolution_gap_is_discarded_mass() {
    let high = grid(2, 16);
    let low = grid(2, 8);
    let levels = ResolutionLevels::two_level(high, low).unwrap();
    let model = linear_model(12);
    let toy = ToyOperator { length: 0.1, cutoff: 7 };
    let a = sample_grf_at(&GrfSpec::default(), high, 1).unwrap();
    let xw = SpectralWeight::L2;
    let yw = SpectralWeight::L2;
    let xf = ModeBasis::complete(high, 1, xw).unwrap();
    let yf = ModeBasis::complete(high, 1, yw).unwrap();
    let (xb, yb) = levels.bases(1, 1, xw, yw).unwrap();
    let jt_fine = operator_jacobian(&toy, &a, &xf, &yf, DiffMode::Forward).unwrap();
    let jp_fine = operator_jacobian(&model, &a, &xf, &yf, DiffMode::Forward).unwrap();
    let fine_loss = derivative_loss(&jp_fine, &jt_fine).unwrap().0;
    let target = restrict_jacobian(&jt_fine, &xf, &yf, &xb, &yb).unwrap();
    let coarse_loss = mixed_res_derivative_loss(&model, &a, &target, &levels, &xb, &yb).unwrap();
    // Discarded mass: entries of the fine difference outside the coarse block.
    let diff = JacobianMatrix::new(jp_fine.rows, jp_fine.cols, jp_fine.data.iter().zip(&jt_fine.data).map(|(p, t)| p - t).collect(), xf.tag(), yf.tag()).unwrap();
    let kept = restrict_jacobian(&diff, &xf, &yf, &xb, &yb).unwrap().frobenius_sq();
    let discarded = diff.frobenius_sq() - kept;
    assert!(coarse_loss < fine_loss);
    assert!((fine_loss - coarse_loss - discarded).abs() <= 1e-8, "{} vs {discarded}", fine_loss - coarse_loss);
}

#[test]
fn relative_error_examples() {
    let g = grid(2, 8);
    let toy = ToyOperator::default();
    let w = WeightingTensor::spectral(0.0, g).unwrap();
    let xb = ModeBasis::band_limited(2, 1, SpectralWeight::L2, 2).unwrap();
    let inputs: Vec<GridFunction> = (0..3).map(|i| sample_grf_at(&GrfSpec::default(), g, i).unwrap()).collect();
    let outputs: Vec<GridFunction> = inputs.iter().map(|a| toy.apply(a).unwrap()).collect();
    let jacs: Vec<JacobianMatrix> = inputs.iter().map(|a| operator_jacobian(&toy, a, &xb, &xb, DiffMode::Forward).unwrap()).collect();
    let samples: Vec<ErrorSample> = (0..3).map(|i| ErrorSample { input: &inputs[i], output: &outputs[i], jacobian: Some(&jacs[i]) }).collect();
    let e = relative_errors(&toy, &samples, &w, Some((&xb, &xb))).unwrap();
    assert_eq!((e.mean_output, e.mean_derivative), (0.0, 0.0));

    let cfg = FnoConfig::new(2, 1, 2, 2, 1, 1, GeluLike::default()).unwrap();
    let zero = FnoModel::new(cfg, FnoParams::zeros(&cfg)).unwrap();
    let e = relative_errors(&zero, &samples, &w, Some((&xb, &xb))).unwrap();
    assert!(e.per_sample.iter().all(|p| (p.0.unwrap() - 1.0).abs() <= 1e-14 && (p.1.unwrap() - 1.0).abs() <= 1e-14));

    let model = FnoModel::new(cfg, FnoParams::init(&cfg, 13)).unwrap();
    let base = relative_errors(&model, &samples, &w, Some((&xb, &xb))).unwrap();
    let doubled_out: Vec<GridFunction> = outputs.iter().map(|u| u.scaled(2.0)).collect();
    let doubled_j: Vec<JacobianMatrix> = jacs.iter().map(|j| JacobianMatrix { data: j.data.iter().map(|x| 2.0 * x).collect(), ..j.clone() }).collect();
    let doubled_model = ScaledOperator(&model, 2.0);
    let ds: Vec<ErrorSample> = (0..3).map(|i| ErrorSample { input: &inputs[i], output: &doubled_out[i], jacobian: Some(&doubled_j[i]) }).collect();
    let e2 = relative_errors(&doubled_model, &ds, &w, Some((&xb, &xb))).unwrap();
    for (a, b) in base.per_sample.iter().zip(&e2.per_sample) {
        assert!((a.0.unwrap() - b.0.unwrap()).abs() <= 1e-12);
        assert!((a.1.unwrap() - b.1.unwrap()).abs() <= 1e-12);
    }

    let zeros = GridFunction::zeros(g, 1);
    let zs = [ErrorSample { input: &inputs[0], output: &zeros, jacobian: None }];
    let e = relative_errors(&model, &zs, &w, None).unwrap();
    assert_eq!(e.output_count, 0);
    assert_eq!(e.per_sample[0], (None, None));
}

/// `s · G`.
struct ScaledOperator<'a>(&'a dyn Operator, f64);

struct ScaledLin<'a> {
    inner: Box<dyn difno_core::operator::Linearization + 'a>,
    out: GridFunction,
    s: f64,
}

impl difno_core::operator::Linearization for ScaledLin<'_> {
    fn output(&self) -> &GridFunction {
        &self.out
    }
    fn jvp(&self, da: &GridFunction) -> difno_core::Result<GridFunction> {
        Ok(self.inner.jvp(da)?.scaled(self.s))
    }
    fn vjp(&self, du: &GridFunction) -> difno_core::Result<GridFunction> {
        Ok(self.inner.vjp(du)?.scaled(self.s))
    }
}

impl Operator for ScaledOperator<'_> {
    fn in_channels(&self) -> usize {
        self.0.in_channels()
    }
    fn out_channels(&self) -> usize {
        self.0.out_channels()
    }
    fn linearize<'a>(&'a self, a: &GridFunction) -> difno_core::Result<Box<dyn difno_core::operator::Linearization + 'a>> {
        let inner = self.0.linearize(a)?;
        let out = inner.output().scaled(self.1);
        Ok(Box::new(ScaledLin { inner, out, s: self.1 }))
    }
}

#[test]
fn forward_and_reverse_jacobians_agree_with_unequal_ranks() {
    let g = grid(2, 8);
    let cfg = FnoConfig::new(2, 2, 3, 2, 1, 1, GeluLike::default()).unwrap();
    let model = FnoModel::new(cfg, FnoParams::init(&cfg, 14)).unwrap();
    let a = sample_grf_at(&GrfSpec::default(), g, 2).unwrap();
    let full = ModeBasis::complete(g, 1, SpectralWeight::L2).unwrap();
    let xb = random_subspace(&full, 3, &mut rng(15)).unwrap();
    let yb = random_subspace(&full, 7, &mut rng(16)).unwrap();
    let lin = model.linearize(&a).unwrap();
    let f = jacobian_in_bases(lin.as_ref(), g, &xb, &yb, DiffMode::Forward).unwrap();
    let r = jacobian_in_bases(lin.as_ref(), g, &xb, &yb, DiffMode::Reverse).unwrap();
    let diff = f.data.iter().zip(&r.data).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    assert!(diff <= 1e-12 * f.frobenius());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn losses_are_nonnegative(seed in 0u64..1000) {
        let g = grid(1, 16);
        let mut r = rng(seed);
        let (p, t) = (noise(g, 2, &mut r), noise(g, 2, &mut r));
        for w in variants(g) {
            prop_assert!(output_loss(&p, &t, &w).unwrap().0 >= 0.0);
        }
        let a = matrix(2, 3, uniform_vec(&mut r, 6));
        let b = matrix(2, 3, uniform_vec(&mut r, 6));
        prop_assert!(derivative_loss(&a, &b).unwrap().0 >= 0.0);
    }
}
