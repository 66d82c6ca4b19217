mod common;

use common::*;
use difno_core::basis::{Basis, ModeBasis};
use difno_core::datagen::{sample_grf, GrfSpec, ToyOperator};
use difno_core::jacobian::{operator_jacobian, DiffMode, JacobianMatrix};
use difno_core::reduction::*;
use difno_core::spectral::*;
use difno_core::Error;

#[test]
fn two_opposite_samples_give_one_component() {
    let g = grid(1, 8);
    let e1 = GridFunction::from_fn(g, 1, |_, x| x[0].cos() / std::f64::consts::PI.sqrt());
    let pca = pca_from_samples(&[e1.clone(), e1.scaled(-1.0)], 1, SpectralWeight::L2).unwrap();
    assert!((pca.eigenvalues()[0] - 1.0).abs() <= 1e-12);
    let phi = pca.synthesize(0, g).unwrap();
    assert!(phi.sub(&e1).unwrap().max_abs() <= 1e-12 || phi.add_scaled(1.0, &e1).unwrap().max_abs() <= 1e-12);
    assert!(pca.gram_deviation() <= 1e-8);
}

#[test]
fn full_rank_pca_reconstructs_centered_samples() {
    let g = grid(1, 8);
    let mut r = rng(1);
    let samples: Vec<GridFunction> = (0..30).map(|_| noise(g, 1, &mut r)).collect();
    let pca = pca_from_samples(&samples, 8, SpectralWeight::L2).unwrap();
    assert!(pca.gram_deviation() <= 1e-8);
    let mean = samples.iter().fold(GridFunction::zeros(g, 1), |acc, s| acc.add_scaled(1.0 / 30.0, s).unwrap());
    for s in &samples {
        let c = s.sub(&mean).unwrap();
        let back = pca.combine(&pca.analyze(&c).unwrap(), g).unwrap();
        assert!(back.sub(&c).unwrap().l2_norm() <= 1e-10);
    }
}

#[test]
fn eigenvalue_sum_is_covariance_trace() {
    let g = grid(2, 8);
    let samples = sample_grf(&GrfSpec::default(), g, 20).unwrap();
    let pca = pca_from_samples(&samples, 19, SpectralWeight::Sobolev { s: 1.0 }).unwrap();
    let w = SpectralWeight::Sobolev { s: 1.0 };
    let mean = samples.iter().fold(GridFunction::zeros(g, 1), |acc, s| acc.add_scaled(1.0 / 20.0, s).unwrap());
    let trace: f64 = samples.iter().map(|s| weighted_norm(&s.sub(&mean).unwrap(), &w).powi(2)).sum::<f64>() / 20.0;
    let sum: f64 = pca.eigenvalues().iter().sum();
    assert!(rel(sum, trace) <= 1e-8);
    assert!(pca.eigenvalues().windows(2).all(|p| p[0] >= p[1]));
    assert!(pca.gram_deviation() <= 1e-8);
}

#[test]
fn pca_is_optimal_against_brute_force_eigensolve() {
    let g = grid(1, 16);
    let mut r = rng(2);
    let samples: Vec<GridFunction> = (0..6).map(|_| band_limited(g, 1, 7, &mut r)).collect();
    let pca = pca_from_samples(&samples, 3, SpectralWeight::L2).unwrap();
    // Dense ambient covariance of nodal values, rescaled to L².
    let m = g.len();
    let h = g.cell_measure();
    let mean: Vec<f64> = (0..m).map(|i| samples.iter().map(|s| s.values()[i]).sum::<f64>() / 6.0).collect();
    let cov = nalgebra::DMatrix::from_fn(m, m, |i, j| samples.iter().map(|s| (s.values()[i] - mean[i]) * (s.values()[j] - mean[j])).sum::<f64>() * h / 6.0);
    let eig = nalgebra::SymmetricEigen::new(cov);
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(|a, b| b.total_cmp(a));
    for (a, b) in pca.eigenvalues().iter().zip(&vals) {
        assert!((a - b).abs() <= 1e-10 * vals[0]);
    }
    // Sample reconstruction error equals the sum of the discarded eigenvalues.
    let err: f64 = samples
        .iter()
        .map(|s| {
            let c = GridFunction::new(g, 1, s.values().iter().zip(&mean).map(|(a, b)| a - b).collect()).unwrap();
            let back = pca.combine(&pca.analyze(&c).unwrap(), g).unwrap();
            back.sub(&c).unwrap().l2_norm().powi(2)
        })
        .sum::<f64>()
        / 6.0;
    let tail: f64 = vals[3..].iter().sum();
    assert!((err - tail).abs() <= 1e-10 * vals[0]);
}

#[test]
fn duplicated_sample_never_lowers_top_eigenvalue() {
    let g = grid(1, 16);
    let mut r = rng(3);
    let samples: Vec<GridFunction> = (0..5).map(|_| noise(g, 1, &mut r)).collect();
    let top = pca_from_samples(&samples, 1, SpectralWeight::L2).unwrap().eigenvalues()[0];
    for i in 0..5 {
        let mut more = samples.clone();
        more.push(samples[i].clone());
        let t = pca_from_samples(&more, 1, SpectralWeight::L2).unwrap().eigenvalues()[0];
        // Covariances are normalised by the count, so compare the unnormalised scatter.
        assert!(t * 6.0 >= top * 5.0 - 1e-12);
    }
}

#[test]
fn identical_samples_are_rank_deficient() {
    let g = grid(1, 8);
    let s = noise(g, 1, &mut rng(4));
    let err = pca_from_samples(&[s.clone(), s.clone(), s], 2, SpectralWeight::L2).unwrap_err();
    assert!(matches!(err, Error::RankDeficient { requested: 2, achieved: 0 }));
    assert!(pca_from_samples(&[noise(g, 1, &mut rng(5))], 2, SpectralWeight::L2).is_err());
}

#[test]
fn kle_eigenvalues_and_orthonormality() {
    let grf = GrfSpec { omega: 1.0, rho: 1.0, tau: 2.0, seed: 0 };
    let g = grid(2, 16);
    let kle = kle_analytic(&grf, 9, g, 0.0).unwrap();
    assert_eq!(kle.eigenvalues()[0], 1.0);
    assert_eq!(kle.eigenvalues()[1], 0.25);
    let e = kle.eigenvalues();
    for (i, j) in [(0, 1), (4, 5), (8, 8)] {
        let (mi, mj) = (&kle.parent().entries()[i].0, &kle.parent().entries()[j].0);
        if mi.norm_sq() < mj.norm_sq() {
            assert!(e[i] > e[j]);
        }
    }
    for a in 0..kle.len() {
        for b in 0..kle.len() {
            let ip = weighted_inner(&kle.synthesize(a, g).unwrap(), &kle.synthesize(b, g).unwrap(), &SpectralWeight::L2).unwrap();
            assert!((ip - if a == b { 1.0 } else { 0.0 }).abs() <= 1e-12);
        }
    }
    let cm = kle_analytic(&grf, 9, g, 0.5).unwrap();
    let w = grf.cameron_martin();
    for a in 0..cm.len() {
        let f = cm.synthesize(a, g).unwrap();
        assert!((weighted_norm(&f, &w) - 1.0).abs() <= 1e-12);
        assert!((f.l2_norm() - e[a].sqrt()).abs() <= 1e-12);
    }
}

#[test]
fn kle_diagonalizes_sample_covariance() {
    let grf = GrfSpec::default();
    let g = grid(2, 8);
    let kle = kle_analytic(&grf, 12, g, 0.0).unwrap();
    let samples = sample_grf(&grf, g, 10_000).unwrap();
    let r = kle.len();
    let mut cov = vec![0.0; r * r];
    for s in &samples {
        let c = kle.analyze(s).unwrap();
        for a in 0..r {
            for b in 0..r {
                cov[a * r + b] += c[a] * c[b] / samples.len() as f64;
            }
        }
    }
    let on: f64 = (0..r).map(|a| cov[a * r + a].powi(2)).sum::<f64>().sqrt();
    let off: f64 = (0..r).flat_map(|a| (0..r).map(move |b| (a, b))).filter(|(a, b)| a != b).map(|(a, b)| cov[a * r + b].powi(2)).sum::<f64>().sqrt();
    assert!(off / on <= 0.05, "{}", off / on);
}

#[test]
fn dis_of_diagonal_jacobian() {
    let full = ModeBasis::band_limited(1, 1, SpectralWeight::L2, 1).unwrap();
    let tag = full.tag();
    let j = JacobianMatrix::new(3, 3, vec![3.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 1.0], tag.clone(), tag).unwrap();
    let (x, y) = dis_from_jacobians(&[j], &full, &full, 2, 2).unwrap();
    assert_eq!(x.eigenvalues().len(), 2);
    assert!((x.eigenvalues()[0] - 9.0).abs() <= 1e-12 && (x.eigenvalues()[1] - 4.0).abs() <= 1e-12);
    assert!((y.eigenvalues()[0] - 9.0).abs() <= 1e-12);
    for (i, b) in [&x, &y].iter().enumerate() {
        assert!((b.vector(0)[0] - 1.0).abs() <= 1e-12, "{i}");
        assert!((b.vector(1)[1] - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn dis_of_zero_jacobians_is_flagged_degenerate() {
    let full = ModeBasis::band_limited(1, 1, SpectralWeight::L2, 1).unwrap();
    let zero = JacobianMatrix::zeros(3, 3, full.tag(), full.tag());
    let (x, y) = dis_from_jacobians(&[zero.clone(), zero], &full, &full, 2, 3).unwrap();
    assert!(x.is_degenerate() && y.is_degenerate());
    assert!(x.eigenvalues().iter().all(|&l| l == 0.0));
    assert!(x.gram_deviation() <= 1e-8 && y.gram_deviation() <= 1e-8);
}

#[test]
fn dis_rejects_mixed_bases() {
    let a = ModeBasis::band_limited(1, 1, SpectralWeight::L2, 1).unwrap();
    let b = a.with_weight(SpectralWeight::Sobolev { s: 1.0 });
    let j1 = JacobianMatrix::zeros(3, 3, a.tag(), a.tag());
    let j2 = JacobianMatrix::zeros(3, 3, b.tag(), a.tag());
    assert!(matches!(dis_from_jacobians(&[j1, j2], &a, &a, 1, 1), Err(Error::BasisMismatch { .. })));
}

#[test]
fn dis_captures_more_mass_than_random_subspaces() {
    let g = grid(2, 8);
    let toy = ToyOperator::default();
    let full = ModeBasis::complete(g, 1, SpectralWeight::L2).unwrap();
    let samples = sample_grf(&GrfSpec::default(), g, 3).unwrap();
    let mut r = rng(0);
    for a in &samples {
        let j = operator_jacobian(&toy, a, &full, &full, DiffMode::Forward).unwrap();
        let (x, y) = dis_from_jacobians(std::slice::from_ref(&j), &full, &full, 6, 6).unwrap();
        let best = captured_mass(&j, &x, &y).unwrap();
        let mut last = 0.0;
        for k in 1..=6 {
            let m = captured_mass(&j, &x.truncated(k).unwrap(), &y.truncated(k).unwrap()).unwrap();
            assert!(m + 1e-12 >= last);
            last = m;
        }
        for _ in 0..50 {
            let rx = random_subspace(&full, 6, &mut r).unwrap();
            let ry = random_subspace(&full, 6, &mut r).unwrap();
            assert!(captured_mass(&j, &rx, &ry).unwrap() <= best + 1e-12);
        }
    }
}
