use drift_timing::dgp::*;
use drift_timing::rng::{fill_normal, stream_rng};
use drift_timing::spectra::CovarianceSpec;
use drift_timing::theory::DriftGeometry;
use nalgebra::{DMatrix, DVector};

fn gaussian(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = stream_rng(seed, 0, 0);
    let mut buf = vec![0.0; rows * cols];
    fill_normal(&mut rng, &mut buf);
    DMatrix::from_vec(rows, cols, buf)
}

fn direct_ridge(x: &DMatrix<f64>, y: &DVector<f64>, z: f64) -> DVector<f64> {
    let n = x.nrows() as f64;
    let a = x.tr_mul(x) + DMatrix::identity(x.ncols(), x.ncols()) * (n * z);
    a.try_inverse().unwrap() * x.tr_mul(y)
}

#[test]
fn primal_and_dual_agree_with_direct_inverse() {
    for &(n, p) in &[(40, 20), (20, 60)] {
        let x = gaussian(n, p, 1);
        let y = gaussian(n, 1, 2).column(0).into_owned();
        for &z in &[1e-3, 0.1, 10.0] {
            let fit = fit_ridge(&x, &y, z).unwrap();
            let want = direct_ridge(&x, &y, z);
            assert_eq!(fit.solver, if p > n { SolverTag::Dual } else { SolverTag::Primal });
            assert!((&fit.beta_hat - &want).norm() < 1e-9 * want.norm(), "n={n} p={p} z={z}");
        }
    }
}

#[test]
fn small_dual_problem() {
    let x = DMatrix::from_fn(5, 8, |i, j| ((i * 8 + j) as f64 * 0.7).sin() + 0.1 * i as f64);
    let y = DVector::from_vec(vec![0.3, -1.0, 0.5, 2.0, 0.1]);
    let z = 0.2;
    let g = &x * x.transpose() + DMatrix::identity(5, 5) * (5.0 * z);
    let want = x.transpose() * g.try_inverse().unwrap() * &y;
    let fit = fit_ridge(&x, &y, z).unwrap();
    assert!((&fit.beta_hat - want).norm() < 1e-12);
}

#[test]
fn orthonormal_design_shrinks_uniformly() {
    let q = gaussian(30, 6, 3).qr().q();
    let y = gaussian(30, 1, 4).column(0).into_owned();
    let z = 0.05;
    let fit = fit_ridge(&q, &y, z).unwrap();
    let want = q.tr_mul(&y) / (1.0 + 30.0 * z);
    assert!((fit.beta_hat - want).norm() < 1e-12);
}

#[test]
fn ridge_approaches_min_norm() {
    for &(n, p) in &[(30, 10), (10, 30)] {
        let x = gaussian(n, p, 5);
        let y = gaussian(n, 1, 6).column(0).into_owned();
        let a = fit_ridge(&x, &y, 1e-10).unwrap().beta_hat;
        let b = fit_ridgeless(&x, &y).unwrap().beta_hat;
        assert!((&a - &b).norm() < 1e-5 * b.norm(), "n={n} p={p}");
        let c = RidgeFamily::new(&x, &y).fit(0.0).unwrap().beta_hat;
        assert!((&c - &b).norm() < 1e-8 * b.norm());
    }
}

#[test]
fn min_norm_interpolates_with_smallest_norm() {
    let (n, p) = (8, 20);
    let x = gaussian(n, p, 7);
    let y = gaussian(n, 1, 8).column(0).into_owned();
    let b = fit_ridgeless(&x, &y).unwrap().beta_hat;
    assert!((&x * &b - &y).norm() < 1e-10);
    let pinv = x.clone().pseudo_inverse(1e-12).unwrap();
    let proj = DMatrix::identity(p, p) - &pinv * &x;
    for s in 0..10 {
        let delta = &proj * gaussian(p, 1, 100 + s).column(0);
        assert!((&x * &delta).norm() < 1e-10);
        let other = &b + &delta;
        assert!(other.norm() > b.norm());
        assert!(b.dot(&delta).abs() < 1e-10 * delta.norm().max(1.0));
    }
}

#[test]
fn duplicate_columns_share_weight() {
    let mut x = gaussian(25, 5, 9);
    let col = x.column(1).into_owned();
    x.set_column(3, &col);
    let y = gaussian(25, 1, 10).column(0).into_owned();
    for fit in [fit_ridge(&x, &y, 0.1).unwrap(), fit_ridgeless(&x, &y).unwrap()] {
        assert!((fit.beta_hat[1] - fit.beta_hat[3]).abs() < 1e-10);
    }
}

#[test]
fn invalid_inputs() {
    let x = gaussian(5, 3, 11);
    let y = DVector::from_element(4, 1.0);
    assert!(fit_ridge(&x, &y, 0.1).is_err());
    let y = DVector::from_element(5, f64::NAN);
    assert!(fit_ridge(&x, &y, 0.1).is_err());
    let y = DVector::from_element(5, 1.0);
    assert!(fit_ridge(&x, &y, 0.0).is_err());
    assert!(fit_ridge(&x, &y, -1.0).is_err());
}

#[test]
fn strategy_return_is_position_times_return() {
    let b = DVector::from_vec(vec![1.0, 2.0]);
    let x = DVector::from_vec(vec![0.5, -1.0]);
    assert_eq!(strategy_return(&b, &x, 2.0), -3.0);
}

fn spec(seed: u64) -> ModelSpec {
    let geometry = DriftGeometry::proportional(3, 2, 0.5, 1.0);
    let mut s = ModelSpec::isotropic(20_000, geometry, 0.1, seed);
    s.sigma_x = CovarianceSpec::Autoregressive { p: 3, rho: 0.5 };
    s
}

#[test]
fn samples_are_deterministic_per_seed() {
    let a = sample(&spec(1)).unwrap();
    assert_eq!(a, sample(&spec(1)).unwrap());
    assert_ne!(a.x, sample(&spec(2)).unwrap().x);
    assert_ne!(a.x, sample_draw(&spec(1), 1).unwrap().x);
}

#[test]
fn sample_moments_match_the_model() {
    let s = spec(3);
    let smp = sample(&s).unwrap();
    let n = s.n as f64;
    let cov = smp.x.tr_mul(&smp.x) / n;
    let sigma = s.sigma_x.matrix();
    // Entry-wise standard error is at most √(2/n) ≈ 0.01.
    assert!((&cov - &sigma).abs().max() < 0.05, "{cov}");
    let g = &s.geometry;
    let var_y = 1.0 + g.beta_is.dot(&(&sigma * &g.beta_is)) + g.theta_is.norm_squared();
    let emp = smp.y.norm_squared() / n;
    assert!((emp / var_y - 1.0).abs() < 0.05, "{emp} vs {var_y}");
    let wcross = smp.x.tr_mul(&smp.w) / n;
    assert!(wcross.abs().max() < 0.05);
}

#[test]
fn discrete_latents_have_requested_moments() {
    let mut rng = stream_rng(4, 0, 0);
    let mut buf = vec![0.0; 200_000];
    let law = LatentDist::Discrete { m4: 5.0 };
    law.fill(&mut rng, &mut buf);
    let n = buf.len() as f64;
    let m2 = buf.iter().map(|v| v * v).sum::<f64>() / n;
    let m4 = buf.iter().map(|v| v.powi(4)).sum::<f64>() / n;
    assert!((m2 - 1.0).abs() < 0.02);
    assert!((m4 - 5.0).abs() < 0.2);
    assert_eq!(law.m4(), 5.0);
}

#[test]
fn latent_mixing_correlates_blocks() {
    let geometry = DriftGeometry::proportional(2, 2, 1.0, 1.0);
    let mut s = ModelSpec::isotropic(20_000, geometry, 0.1, 5);
    s.mixing = Mixing::Latent(DMatrix::identity(2, 2));
    let smp = sample(&s).unwrap();
    assert_eq!(smp.x, smp.w);
}

#[test]
fn spec_validation() {
    let mut s = spec(0);
    s.p = 4;
    assert!(sample(&s).is_err());
    let mut s = spec(0);
    s.z = -1.0;
    assert!(s.validate().is_err());
    let mut s = spec(0);
    s.latent = LatentDist::Discrete { m4: 0.5 };
    assert!(s.validate().is_err());
}
