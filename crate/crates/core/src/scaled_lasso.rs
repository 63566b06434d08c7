//! Joint estimation of the coefficients and the noise level.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lasso::{coordinate_descent, CdOptions, CovarianceSource, PreparedDesign, SharedGramProblem};
use crate::numerics::{dot, least_squares_min_norm, norm2};

/// Outer iterations of the alternating minimization.
pub const MAX_OUTER_ITERATIONS: usize = 50;
/// Relative change in sigma that ends the alternation.
pub const SIGMA_TOLERANCE: f64 = 1e-7;

/// `sqrt(2 ln p / n)`
pub fn lambda_univ(n: usize, p: usize) -> Result<f64> {
    if p < 2 || n < 1 {
        return Err(Error::Domain(format!("lambda_univ needs n >= 1 and p >= 2, got n = {n}, p = {p}")));
    }
    Ok((2.0 * (p as f64).ln() / n as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMethod {
    ScaledLasso,
    ScaledLassoLse,
}

impl InitMethod {
    pub fn name(&self) -> &'static str {
        match self {
            InitMethod::ScaledLasso => "scaled_lasso",
            InitMethod::ScaledLassoLse => "scaled_lasso_lse",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialFit {
    pub beta_init: Vec<f64>,
    pub sigma_hat: f64,
    pub support: Vec<usize>,
    pub lambda0: f64,
    pub method: InitMethod,
    /// The selected model had at least `n` columns, so the scaled-Lasso fit
    /// was kept instead of the refit.
    pub refit_fallback: bool,
    pub iterations: usize,
    pub converged: bool,
}

fn check_inputs(design: &PreparedDesign, y: &[f64], lambda0: f64) -> Result<()> {
    if !(lambda0 > 0.0 && lambda0.is_finite()) {
        return Err(Error::Domain(format!("lambda0 must be positive, got {lambda0}")));
    }
    if y.len() != design.n() {
        return Err(Error::Dimension(format!("response has length {}, design has {} rows", y.len(), design.n())));
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { row: i, col: 0 });
    }
    Ok(())
}

fn residual(design: &PreparedDesign, y: &[f64], b: &[f64]) -> Vec<f64> {
    let d = design.design();
    let mut r = y.to_vec();
    for (k, &bk) in b.iter().enumerate() {
        if bk != 0.0 {
            crate::numerics::axpy(-bk, d.col(k), &mut r);
        }
    }
    r
}

/// On a fixed sign pattern the coefficients are affine in sigma,
/// `b = u - sigma v`, so the stationary sigma solves a quadratic. Returns the
/// exact joint solution when it keeps the sign pattern and satisfies the
/// KKT conditions at `sigma * lambda0`.
fn exact_joint_solution(
    design: &PreparedDesign,
    src: &SharedGramProblem<'_>,
    y: &[f64],
    b: &[f64],
    lambda0: f64,
) -> Option<(Vec<f64>, f64)> {
    let active: Vec<usize> = (0..b.len()).filter(|&k| b[k] != 0.0).collect();
    let n = design.n() as f64;
    if active.is_empty() || active.len() >= design.n() {
        return None;
    }
    let a = active.len();
    let gram = design.gram();
    let g = nalgebra::DMatrix::from_fn(a, a, |r, s| gram.get(active[r], active[s]));
    let chol = g.cholesky()?;
    let u = chol.solve(&nalgebra::DVector::from_fn(a, |r, _| src.xty(active[r])));
    let v = chol.solve(&nalgebra::DVector::from_fn(a, |r, _| n * lambda0 * b[active[r]].signum()));
    let d = design.design();
    let mut r0 = y.to_vec();
    let mut w = vec![0.0; design.n()];
    for (i, &k) in active.iter().enumerate() {
        crate::numerics::axpy(-u[i], d.col(k), &mut r0);
        crate::numerics::axpy(v[i], d.col(k), &mut w);
    }
    let qa = n - dot(&w, &w);
    if !(qa > 0.0) {
        return None;
    }
    let qb = dot(&r0, &w);
    let qc = dot(&r0, &r0);
    let sigma = (qb + (qb * qb + qa * qc).sqrt()) / qa;
    if !(sigma > 0.0 && sigma.is_finite()) {
        return None;
    }
    let mut trial = vec![0.0; b.len()];
    for (i, &k) in active.iter().enumerate() {
        let val = u[i] - sigma * v[i];
        if val.signum() != b[k].signum() || val == 0.0 {
            return None;
        }
        trial[k] = val;
    }
    let r = residual(design, y, &trial);
    let lambda = sigma * lambda0;
    let tol = 1e-9 * lambda;
    for k in 0..b.len() {
        let g = dot(d.col(k), &r) / n;
        let ok = if trial[k] != 0.0 {
            (g - lambda * trial[k].signum()).abs() <= tol
        } else {
            g.abs() <= lambda + tol
        };
        if !ok {
            return None;
        }
    }
    Some((trial, sigma))
}

/// Scaled Lasso by alternating a Lasso fit at `sigma * lambda0` with the
/// update `sigma = ||y - X b|| / sqrt(n)`, starting from `||y|| / sqrt(n)`.
pub fn fit_scaled_lasso(design: &PreparedDesign, y: &[f64], lambda0: f64) -> Result<InitialFit> {
    check_inputs(design, y, lambda0)?;
    let n = design.n() as f64;
    let y_norm = norm2(y);
    if y_norm == 0.0 {
        return Err(Error::DegenerateResponse);
    }
    let src = SharedGramProblem::new(design, y);
    let opts = CdOptions::default();
    let mut sigma = y_norm / n.sqrt();
    let mut b = vec![0.0; design.p()];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_OUTER_ITERATIONS {
        iterations += 1;
        b = coordinate_descent(&src, sigma * lambda0, Some(&b), &opts).coefficients;
        let r_norm = norm2(&residual(design, y, &b));
        if r_norm < 1e-12 * y_norm {
            return Err(Error::DegenerateResponse);
        }
        let next = r_norm / n.sqrt();
        let change = (next - sigma).abs();
        sigma = next;
        if change <= SIGMA_TOLERANCE * sigma {
            converged = true;
            break;
        }
    }
    if let Some((exact, s)) = exact_joint_solution(design, &src, y, &b, lambda0) {
        b = exact;
        sigma = s;
    } else {
        // refit at the final sigma so that the KKT conditions hold at sigma * lambda0
        b = coordinate_descent(&src, sigma * lambda0, Some(&b), &opts).coefficients;
    }
    let support = (0..b.len()).filter(|&k| b[k] != 0.0).collect();
    Ok(InitialFit {
        beta_init: b,
        sigma_hat: sigma,
        support,
        lambda0,
        method: InitMethod::ScaledLasso,
        refit_fallback: false,
        iterations,
        converged,
    })
}

/// Least squares on the scaled-Lasso support with the degrees-of-freedom
/// adjusted noise estimate `||y - X b|| / sqrt(n - |S|)`.
pub fn fit_scaled_lasso_lse(design: &PreparedDesign, y: &[f64], lambda0: f64) -> Result<InitialFit> {
    let mut fit = fit_scaled_lasso(design, y, lambda0)?;
    fit.method = InitMethod::ScaledLassoLse;
    let n = design.n();
    if fit.support.len() >= n {
        fit.refit_fallback = true;
        return Ok(fit);
    }
    let d = design.design();
    let cols: Vec<&[f64]> = fit.support.iter().map(|&k| d.col(k)).collect();
    let coef = least_squares_min_norm(&cols, y);
    let mut beta = vec![0.0; design.p()];
    for (&k, &v) in fit.support.iter().zip(&coef) {
        beta[k] = v;
    }
    let r = residual(design, y, &beta);
    fit.sigma_hat = norm2(&r) / ((n - fit.support.len()) as f64).sqrt();
    fit.beta_init = beta;
    Ok(fit)
}

pub fn fit_initial(design: &PreparedDesign, y: &[f64], lambda0: f64, method: InitMethod) -> Result<InitialFit> {
    match method {
        InitMethod::ScaledLasso => fit_scaled_lasso(design, y, lambda0),
        InitMethod::ScaledLassoLse => fit_scaled_lasso_lse(design, y, lambda0),
    }
}

/// `||y - X b||^2 / (2 sigma n) + sigma / 2 + lambda0 ||b||_1`
pub fn scaled_lasso_objective(design: &PreparedDesign, y: &[f64], b: &[f64], sigma: f64, lambda0: f64) -> f64 {
    let r = residual(design, y, b);
    let n = design.n() as f64;
    dot(&r, &r) / (2.0 * sigma * n) + sigma / 2.0 + lambda0 * crate::numerics::norm1(b)
}
