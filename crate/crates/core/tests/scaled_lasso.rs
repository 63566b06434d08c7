mod common;

use common::{dot, solve, standardized};
use ldpe_core::lasso::PreparedDesign;
use ldpe_core::numerics::{standardize_columns, DenseMatrix, RngStream};
use ldpe_core::scaled_lasso::{fit_scaled_lasso, fit_scaled_lasso_lse, lambda_univ, scaled_lasso_objective};

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

fn residual(d: &PreparedDesign, y: &[f64], b: &[f64]) -> Vec<f64> {
    let x = d.design();
    (0..d.n()).map(|i| y[i] - (0..d.p()).map(|k| x.col(k)[i] * b[k]).sum::<f64>()).collect()
}

/// Gram-Schmidt on Gaussian columns, then standardized.
fn orthogonal_design(rng: &mut RngStream, n: usize, p: usize) -> PreparedDesign {
    let mut cols: Vec<Vec<f64>> = Vec::new();
    while cols.len() < p {
        let mut v = rng.gaussian_vector(n);
        for c in &cols {
            let f = dot(&v, c) / dot(c, c);
            v.iter_mut().zip(c).for_each(|(a, b)| *a -= f * b);
        }
        for c in &cols {
            let f = dot(&v, c) / dot(c, c);
            v.iter_mut().zip(c).for_each(|(a, b)| *a -= f * b);
        }
        cols.push(v);
    }
    PreparedDesign::new(standardize_columns(&DenseMatrix::from_columns(&cols).unwrap()).unwrap())
}

/// `P(|u_1| <= c)` for `u` uniform on the unit sphere in `R^n`, by Simpson's
/// rule on the marginal density proportional to `(1 - t^2)^((n - 3) / 2)`.
fn sphere_coordinate_cdf(n: usize, c: f64) -> f64 {
    let f = |t: f64| (1.0 - t * t).max(0.0).powf((n as f64 - 3.0) / 2.0);
    let simpson = |a: f64, b: f64| {
        let m = 20_000;
        let h = (b - a) / m as f64;
        let inner: f64 = (1..m).map(|i| if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + i as f64 * h)).sum();
        (f(a) + inner + f(b)) * h / 3.0
    };
    simpson(0.0, c) / simpson(0.0, 1.0)
}

// With y ~ N(0, I) independent of Gaussian columns, the unit columns' inner
// products with y / ||y|| are iid sphere coordinates, and the fit is zero
// exactly when all of them are at most lambda0 in absolute value.
#[test]
fn pure_noise_selects_nothing_at_the_exact_rate() {
    let (n, p) = (200, 300);
    let lambda0 = lambda_univ(n, p).unwrap();
    let mut empty = 0;
    for seed in 0..100u64 {
        let mut rng = RngStream::new(2020, seed);
        let d = PreparedDesign::new(standardized(&mut rng, n, p));
        let y = rng.gaussian_vector(n);
        let fit = fit_scaled_lasso(&d, &y, lambda0).unwrap();
        let null_sigma = norm(&y) / (n as f64).sqrt();
        let ratio = fit.sigma_hat / null_sigma;
        assert!((0.95..=1.0 + 1e-12).contains(&ratio), "seed {seed}: ratio {ratio}");
        let x = d.design();
        let max_corr = (0..p).map(|k| dot(x.col(k), &y).abs()).fold(0.0, f64::max) / n as f64;
        let is_zero = fit.beta_init.iter().all(|&b| b == 0.0);
        assert_eq!(is_zero, max_corr <= fit.sigma_hat * lambda0, "seed {seed}");
        if is_zero {
            empty += 1;
        }
    }
    let rate = sphere_coordinate_cdf(n, lambda0).powi(p as i32);
    let sd = (100.0 * rate * (1.0 - rate)).sqrt();
    assert!((empty as f64 - 100.0 * rate).abs() <= 3.3 * sd, "{empty} of 100 runs selected nothing, expected {:.1}", 100.0 * rate);
}

#[test]
fn orthogonal_design_matches_bisection_fixed_point() {
    for seed in 0..5u64 {
        let mut rng = RngStream::new(31, seed);
        let (n, p) = (60, 20);
        let d = orthogonal_design(&mut rng, n, p);
        let x = d.design();
        let beta: Vec<f64> = (0..p).map(|k| if k < 3 { 1.0 } else { 0.0 }).collect();
        let eps = rng.gaussian_vector(n);
        let y: Vec<f64> = (0..n).map(|i| (0..p).map(|k| x.col(k)[i] * beta[k]).sum::<f64>() + eps[i]).collect();
        let lambda0 = lambda_univ(n, p).unwrap();
        let c: Vec<f64> = (0..p).map(|k| dot(x.col(k), &y) / n as f64).collect();
        let soft = |v: f64, t: f64| v.signum() * (v.abs() - t).max(0.0);
        let implied = |s: f64| {
            let b: Vec<f64> = c.iter().map(|&v| soft(v, s * lambda0)).collect();
            norm(&residual(&d, &y, &b)) / (n as f64).sqrt()
        };
        let (mut lo, mut hi) = (1e-8, norm(&y) / (n as f64).sqrt());
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if implied(mid) > mid {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let sigma = 0.5 * (lo + hi);
        let fit = fit_scaled_lasso(&d, &y, lambda0).unwrap();
        assert!((fit.sigma_hat - sigma).abs() <= 1e-8 * sigma, "{} vs {sigma}", fit.sigma_hat);
        for k in 0..p {
            assert!((fit.beta_init[k] - soft(c[k], sigma * lambda0)).abs() <= 1e-8);
        }
    }
}

#[test]
fn refit_matches_normal_equations() {
    for seed in 0..5u64 {
        let mut rng = RngStream::new(77, seed);
        let (n, p) = (100, 50);
        let d = PreparedDesign::new(standardized(&mut rng, n, p));
        let x = d.design();
        let beta: Vec<f64> = (0..p).map(|k| if [4, 17, 33].contains(&k) { 3.0 } else { 0.0 }).collect();
        let eps = rng.gaussian_vector(n);
        let y: Vec<f64> = (0..n).map(|i| (0..p).map(|k| x.col(k)[i] * beta[k]).sum::<f64>() + eps[i]).collect();
        let fit = fit_scaled_lasso_lse(&d, &y, lambda_univ(n, p).unwrap()).unwrap();
        assert!(!fit.refit_fallback);
        for k in [4, 17, 33] {
            assert!(fit.support.contains(&k));
        }
        let s = &fit.support;
        let g = s.iter().map(|&a| s.iter().map(|&b| dot(x.col(a), x.col(b))).collect()).collect();
        let rhs = s.iter().map(|&a| dot(x.col(a), &y)).collect();
        let coef = solve(g, rhs).unwrap();
        for (&k, v) in s.iter().zip(&coef) {
            assert!((fit.beta_init[k] - v).abs() <= 1e-8 * v.abs().max(1.0));
        }
        assert!((0..p).filter(|k| !s.contains(k)).all(|k| fit.beta_init[k] == 0.0));
        let r = residual(&d, &y, &fit.beta_init);
        for &k in s {
            assert!(dot(x.col(k), &r).abs() <= 1e-8 * n as f64);
        }
        let sigma = norm(&r) / ((n - s.len()) as f64).sqrt();
        assert!((fit.sigma_hat - sigma).abs() <= 1e-12 * sigma);
    }
}

#[test]
fn empty_selection_gives_the_null_noise_level() {
    let mut rng = RngStream::new(5, 0);
    let (n, p) = (40, 30);
    let d = PreparedDesign::new(standardized(&mut rng, n, p));
    let y = rng.gaussian_vector(n);
    let null_sigma = norm(&y) / (n as f64).sqrt();
    for fit in [fit_scaled_lasso(&d, &y, 10.0).unwrap(), fit_scaled_lasso_lse(&d, &y, 10.0).unwrap()] {
        assert!(fit.support.is_empty());
        assert!(fit.beta_init.iter().all(|&b| b == 0.0));
        assert!((fit.sigma_hat - null_sigma).abs() <= 1e-12 * null_sigma);
    }
}

#[test]
fn output_is_a_local_minimum_of_the_joint_objective() {
    for seed in 0..5u64 {
        let mut rng = RngStream::new(66, seed);
        let (n, p) = (50, 80);
        let d = PreparedDesign::new(standardized(&mut rng, n, p));
        let x = d.design();
        let eps = rng.gaussian_vector(n);
        let y: Vec<f64> = (0..n).map(|i| 2.0 * x.col(0)[i] - x.col(1)[i] + eps[i]).collect();
        let lambda0 = lambda_univ(n, p).unwrap();
        let fit = fit_scaled_lasso(&d, &y, lambda0).unwrap();
        let best = scaled_lasso_objective(&d, &y, &fit.beta_init, fit.sigma_hat, lambda0);
        for _ in 0..100 {
            let raw: Vec<f64> = rng.gaussian_vector(p);
            let l1: f64 = raw.iter().map(|v| v.abs()).sum();
            let scale = 1e-3 * rng.uniform() / l1;
            let b: Vec<f64> = fit.beta_init.iter().zip(&raw).map(|(a, r)| a + scale * r).collect();
            let s = fit.sigma_hat * (1.0 + 1e-3 * (2.0 * rng.uniform() - 1.0));
            assert!(best <= scaled_lasso_objective(&d, &y, &b, s, lambda0) + 1e-12 * best);
        }
    }
}

#[test]
fn permuting_columns_permutes_the_fit() {
    let mut rng = RngStream::new(88, 1);
    let (n, p) = (60, 40);
    let d = PreparedDesign::new(standardized(&mut rng, n, p));
    let x = d.design();
    let eps = rng.gaussian_vector(n);
    let y: Vec<f64> = (0..n).map(|i| 1.5 * x.col(3)[i] - 2.0 * x.col(20)[i] + eps[i]).collect();
    let perm: Vec<usize> = (0..p).map(|k| (k * 7 + 3) % p).collect();
    let cols: Vec<Vec<f64>> = perm.iter().map(|&k| x.col(k).to_vec()).collect();
    let dp = PreparedDesign::new(standardize_columns(&DenseMatrix::from_columns(&cols).unwrap()).unwrap());
    let lambda0 = lambda_univ(n, p).unwrap();
    let a = fit_scaled_lasso(&d, &y, lambda0).unwrap();
    let b = fit_scaled_lasso(&dp, &y, lambda0).unwrap();
    assert!((a.sigma_hat - b.sigma_hat).abs() <= 1e-10);
    for (k, &orig) in perm.iter().enumerate() {
        assert!((b.beta_init[k] - a.beta_init[orig]).abs() <= 1e-10);
    }
}
