//! One-step bias correction, its covariance, confidence intervals for
//! sparse contrasts, and thresholded selection.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lasso::PreparedDesign;
use crate::numerics::{dot, normal_quantile};
use crate::scaled_lasso::InitialFit;
use crate::scores::ScoreSet;

#[derive(Debug, Clone, PartialEq)]
pub struct LdpeFit {
    pub beta_hat: Vec<f64>,
    pub beta_init: Vec<f64>,
    pub sigma_hat: f64,
    /// `NaN` where the score is missing.
    pub tau: Vec<f64>,
    /// `NaN` where the score is missing.
    pub eta: Vec<f64>,
    pub design_hash: String,
    pub lambda0: f64,
    pub method: String,
    z: Vec<Option<Vec<f64>>>,
    /// `|z_j^T x_j|`
    zx: Vec<f64>,
}

impl LdpeFit {
    pub fn p(&self) -> usize {
        self.beta_hat.len()
    }

    /// Whether coefficient `j` has a score vector and hence an interval.
    pub fn has_score(&self, j: usize) -> bool {
        self.z.get(j).is_some_and(Option::is_some)
    }

    pub fn score(&self, j: usize) -> Option<&[f64]> {
        self.z.get(j).and_then(|z| z.as_deref())
    }

    /// `V_jk = z_j^T z_k / (|z_j^T x_j| |z_k^T x_k|)`
    pub fn covariance(&self, j: usize, k: usize) -> Option<f64> {
        let zj = self.score(j)?;
        let zk = self.score(k)?;
        Some(dot(zj, zk) / (self.zx[j] * self.zx[k]))
    }

    /// `V` restricted to `idx`, row-major.
    pub fn covariance_block(&self, idx: &[usize]) -> Result<Vec<Vec<f64>>> {
        idx.iter()
            .map(|&j| {
                idx.iter()
                    .map(|&k| self.covariance(j, k).ok_or_else(|| missing(if self.has_score(j) { k } else { j })))
                    .collect()
            })
            .collect()
    }
}

fn missing(j: usize) -> Error {
    Error::Domain(format!("coefficient {} has no score vector", j + 1))
}

/// `beta_j = beta_init_j + z_j^T (y - X beta_init) / (z_j^T x_j)` for every
/// column with a score; columns without one keep the initial estimate.
pub fn ldpe_estimate(design: &PreparedDesign, y: &[f64], scores: &ScoreSet, init: &InitialFit) -> Result<LdpeFit> {
    let hash = design.design().content_hash();
    if scores.design_hash != hash {
        return Err(Error::ScoreMismatch { expected: scores.design_hash.clone(), found: hash });
    }
    let (n, p) = (design.n(), design.p());
    if y.len() != n || init.beta_init.len() != p || scores.entries.len() != p {
        return Err(Error::Dimension("response, initial fit and scores must match the design".into()));
    }
    let d = design.design();
    let mut r = y.to_vec();
    for (k, &b) in init.beta_init.iter().enumerate() {
        if b != 0.0 {
            crate::numerics::axpy(-b, d.col(k), &mut r);
        }
    }
    let mut fit = LdpeFit {
        beta_hat: init.beta_init.clone(),
        beta_init: init.beta_init.clone(),
        sigma_hat: init.sigma_hat,
        tau: vec![f64::NAN; p],
        eta: vec![f64::NAN; p],
        design_hash: hash,
        lambda0: init.lambda0,
        method: init.method.name().to_string(),
        z: vec![None; p],
        zx: vec![f64::NAN; p],
    };
    for j in 0..p {
        let Some(s) = scores.get(j) else { continue };
        let zx = dot(&s.z, d.col(j));
        fit.beta_hat[j] += dot(&s.z, &r) / zx;
        fit.tau[j] = s.tau_j;
        fit.eta[j] = s.eta_j;
        fit.zx[j] = zx.abs();
        fit.z[j] = Some(s.z.clone());
    }
    Ok(fit)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalEstimate {
    /// Nonzero entries `(j, a_j)` of the contrast.
    pub target: Vec<(usize, f64)>,
    pub point: f64,
    pub half_width: f64,
    pub level: f64,
}

impl IntervalEstimate {
    pub fn low(&self) -> f64 {
        self.point - self.half_width
    }

    pub fn high(&self) -> f64 {
        self.point + self.half_width
    }

    pub fn contains(&self, value: f64) -> bool {
        self.low() <= value && value <= self.high()
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("alpha = {alpha} must lie in (0, 1)")))
    }
}

/// `a^T V a` over the support of `a`.
pub fn contrast_variance(fit: &LdpeFit, a: &[(usize, f64)]) -> Result<f64> {
    let mut v = 0.0;
    for &(j, aj) in a {
        for &(k, ak) in a {
            v += aj * ak * fit.covariance(j, k).ok_or_else(|| missing(if fit.has_score(j) { k } else { j }))?;
        }
    }
    if v < -1e-10 {
        return Err(Error::NegativeVariance(v));
    }
    Ok(v.max(0.0))
}

fn interval_with_quantile(fit: &LdpeFit, a: &[(usize, f64)], q: f64, level: f64) -> Result<IntervalEstimate> {
    if a.is_empty() || a.iter().all(|&(_, v)| v == 0.0) {
        return Err(Error::Domain("contrast must be nonzero".into()));
    }
    if let Some(&(j, _)) = a.iter().find(|&&(j, _)| j >= fit.p()) {
        return Err(Error::Dimension(format!("contrast index {} exceeds p = {}", j + 1, fit.p())));
    }
    let var = contrast_variance(fit, a)?;
    let point = a.iter().map(|&(j, v)| v * fit.beta_hat[j]).sum();
    Ok(IntervalEstimate { target: a.to_vec(), point, half_width: fit.sigma_hat * q * var.sqrt(), level })
}

/// `a^T beta_hat +- sigma_hat * Phi^{-1}(1 - alpha/2) * sqrt(a^T V a)`
pub fn confidence_interval(fit: &LdpeFit, a: &[(usize, f64)], alpha: f64) -> Result<IntervalEstimate> {
    check_alpha(alpha)?;
    interval_with_quantile(fit, a, normal_quantile(1.0 - alpha / 2.0)?, 1.0 - alpha)
}

/// Bonferroni intervals for every coefficient at familywise level `alpha`.
/// Coefficients without a score get `None`. `alpha = 1` is accepted and gives the quantile `Phi^{-1}(1 - 1/(2p))`.
pub fn simultaneous_intervals(fit: &LdpeFit, alpha: f64) -> Result<Vec<Option<IntervalEstimate>>> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Domain(format!("alpha = {alpha} must lie in (0, 1]")));
    }
    let p = fit.p();
    let q = normal_quantile(1.0 - alpha / (2.0 * p as f64))?;
    (0..p)
        .map(|j| if fit.has_score(j) { interval_with_quantile(fit, &[(j, 1.0)], q, 1.0 - alpha).map(Some) } else { Ok(None) })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    Hard,
    Soft,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// Infinite where the score is missing.
    pub thresholds: Vec<f64>,
    pub selected: Vec<usize>,
    pub mode: ThresholdMode,
    pub estimates: Vec<f64>,
}

/// `s_t(x) = sgn(x) (|x| - t)_+`
pub fn soft(x: f64, t: f64) -> f64 {
    x.signum() * (x.abs() - t).max(0.0)
}

/// Thresholds `beta_hat_j` at `(1 + c_n) sigma_hat tau_j Phi^{-1}(1 - alpha / (2p))`.
pub fn threshold_ldpe(fit: &LdpeFit, alpha: f64, mode: ThresholdMode, c_n: f64) -> Result<SelectionResult> {
    let p = fit.p();
    if !(alpha > 0.0 && alpha < 2.0 * p as f64) {
        return Err(Error::Domain(format!("alpha = {alpha} must lie in (0, 2p)")));
    }
    if !(c_n >= 0.0) {
        return Err(Error::Domain(format!("c_n = {c_n} must be nonnegative")));
    }
    let q = normal_quantile(1.0 - alpha / (2.0 * p as f64))?;
    let thresholds: Vec<f64> = (0..p)
        .map(|j| if fit.has_score(j) { (1.0 + c_n) * fit.sigma_hat * fit.tau[j] * q } else { f64::INFINITY })
        .collect();
    let selected: Vec<usize> = (0..p).filter(|&j| fit.beta_hat[j].abs() > thresholds[j]).collect();
    let estimates = (0..p)
        .map(|j| {
            let (b, t) = (fit.beta_hat[j], thresholds[j]);
            match mode {
                ThresholdMode::Hard if b.abs() > t => b,
                ThresholdMode::Hard => 0.0,
                ThresholdMode::Soft if t.is_finite() => soft(b, t),
                ThresholdMode::Soft => 0.0,
            }
        })
        .collect();
    Ok(SelectionResult { thresholds, selected, mode, estimates })
}

/// One output row per coefficient; `j` is 1-based and values refer to the
/// standardized design unless the report was rescaled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub j: usize,
    pub beta_init: f64,
    pub beta_hat: f64,
    pub tau: Option<f64>,
    pub eta: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub n: usize,
    pub p: usize,
    pub lambda0: f64,
    pub sigma_hat: f64,
    pub method: String,
    pub per_coefficient: Vec<CoefficientRow>,
    pub design_hash: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

pub const CSV_HEADER: &str = "j,beta_init,beta_hat,tau,eta,ci_low,ci_high";

impl FitReport {
    /// Per-coefficient intervals at level `1 - alpha`, Bonferroni-adjusted
    /// when `simultaneous` is set.
    pub fn new(fit: &LdpeFit, n: usize, alpha: f64, simultaneous: bool) -> Result<Self> {
        let intervals = if simultaneous {
            simultaneous_intervals(fit, alpha)?
        } else {
            check_alpha(alpha)?;
            let q = normal_quantile(1.0 - alpha / 2.0)?;
            (0..fit.p())
                .map(|j| if fit.has_score(j) { interval_with_quantile(fit, &[(j, 1.0)], q, 1.0 - alpha).map(Some) } else { Ok(None) })
                .collect::<Result<Vec<_>>>()?
        };
        let per_coefficient = intervals
            .iter()
            .enumerate()
            .map(|(j, ci)| CoefficientRow {
                j: j + 1,
                beta_init: fit.beta_init[j],
                beta_hat: fit.beta_hat[j],
                tau: fit.has_score(j).then_some(fit.tau[j]),
                eta: fit.has_score(j).then_some(fit.eta[j]),
                ci_low: ci.as_ref().map(IntervalEstimate::low),
                ci_high: ci.as_ref().map(IntervalEstimate::high),
            })
            .collect();
        Ok(Self {
            n,
            p: fit.p(),
            lambda0: fit.lambda0,
            sigma_hat: fit.sigma_hat,
            method: fit.method.clone(),
            per_coefficient,
            design_hash: fit.design_hash.clone(),
            seed: None,
        })
    }

    /// Divides coefficients, tau and interval endpoints by the column scales,
    /// giving values on the scale of the unstandardized design.
    pub fn to_original_scale(&mut self, scales: &[f64]) {
        for row in &mut self.per_coefficient {
            let s = scales[row.j - 1];
            row.beta_init /= s;
            row.beta_hat /= s;
            row.tau = row.tau.map(|v| v / s);
            row.ci_low = row.ci_low.map(|v| v / s);
            row.ci_high = row.ci_high.map(|v| v / s);
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
        for r in &self.per_coefficient {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.j,
                r.beta_init,
                r.beta_hat,
                opt(r.tau),
                opt(r.eta),
                opt(r.ci_low),
                opt(r.ci_high)
            );
        }
        out
    }
}
