//! Monte Carlo harness: AR(1) Gaussian designs, decaying coefficient
//! patterns with spikes, replication loops and summary tables.

use std::borrow::Cow;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::oracle_estimates;
use crate::error::{Error, Result};
use crate::inference::{confidence_interval, ldpe_estimate, threshold_ldpe, LdpeFit, ThresholdMode};
use crate::io::write_atomic;
use crate::lasso::{coordinate_descent, CdOptions, PreparedDesign, SharedGramProblem};
use crate::numerics::{normal_quantile, standardize_columns, DenseMatrix, RngStream, StandardizedDesign};
use crate::scaled_lasso::{fit_scaled_lasso, fit_scaled_lasso_lse, lambda_univ, InitialFit};
use crate::scores::{build_all_scores, ScoreKind, ScoreSet, ScoreSettings};

/// Stream id of the shared design when `fixed_design` is set; replications
/// use ids `1..=reps`.
pub const FIXED_DESIGN_STREAM: u64 = u64::MAX;

/// Largest tolerated share of failed replications.
pub const MAX_FAILURE_SHARE: f64 = 0.05;

const BIAS_BOUND_SLACK: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Lasso,
    ScaledLasso,
    ScaledLassoLse,
    Oracle,
    Ldpe,
    RLdpe,
    TOracle,
    TLdpe,
}

impl Estimator {
    pub const ALL: [Estimator; 8] = [
        Estimator::Lasso,
        Estimator::ScaledLasso,
        Estimator::ScaledLassoLse,
        Estimator::Oracle,
        Estimator::Ldpe,
        Estimator::RLdpe,
        Estimator::TOracle,
        Estimator::TLdpe,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Estimator::Lasso => "lasso",
            Estimator::ScaledLasso => "scaled_lasso",
            Estimator::ScaledLassoLse => "scaled_lasso_lse",
            Estimator::Oracle => "oracle",
            Estimator::Ldpe => "ldpe",
            Estimator::RLdpe => "r_ldpe",
            Estimator::TOracle => "t_oracle",
            Estimator::TLdpe => "t_ldpe",
        }
    }

    /// Column label used in the summary tables.
    pub fn label(&self) -> &'static str {
        match self {
            Estimator::Lasso => "Lasso",
            Estimator::ScaledLasso => "scLasso",
            Estimator::ScaledLassoLse => "scLasso-LSE",
            Estimator::Oracle => "oracle",
            Estimator::Ldpe => "LDPE",
            Estimator::RLdpe => "R-LDPE",
            Estimator::TOracle => "T-oracle",
            Estimator::TLdpe => "T-LDPE",
        }
    }

    pub fn has_intervals(&self) -> bool {
        matches!(self, Estimator::Oracle | Estimator::Ldpe | Estimator::RLdpe)
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        Estimator::ALL
            .into_iter()
            .find(|e| e.name() == key)
            .ok_or_else(|| Error::Parse(format!("unknown estimator '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    /// n = 100, p = 500, 50 replications.
    Desk,
    /// n = 200, p = 3000, 100 replications.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSetting {
    pub label: String,
    pub n: usize,
    pub p: usize,
    pub rho: f64,
    pub alpha_decay: f64,
    pub reps: usize,
    pub master_seed: u64,
    pub level: f64,
    pub estimators: Vec<Estimator>,
    /// Number of removed columns for R-LDPE.
    pub m: usize,
    /// Sets every coefficient to zero.
    pub zero_signal: bool,
    /// Draws one design from [`FIXED_DESIGN_STREAM`] and reuses it, so only
    /// the noise changes between replications.
    pub fixed_design: bool,
    /// Familywise level of the hard thresholds; `1` gives
    /// `Phi^{-1}(1 - 1/(2p))`.
    pub threshold_alpha: f64,
}

impl SimSetting {
    /// One of the four settings `A`..`D`:
    /// `(alpha, rho) = (2, 0.2), (1, 0.2), (2, 0.8), (1, 0.8)`.
    pub fn preset(label: &str, scale: Scale, master_seed: u64) -> Result<Self> {
        let (alpha_decay, rho) = match label.trim().to_ascii_uppercase().as_str() {
            "A" => (2.0, 0.2),
            "B" => (1.0, 0.2),
            "C" => (2.0, 0.8),
            "D" => (1.0, 0.8),
            other => return Err(Error::Parse(format!("unknown setting '{other}', expected A, B, C or D"))),
        };
        let (n, p, reps, estimators) = match scale {
            Scale::Desk => (100, 500, 50, Self::desk_estimators()),
            Scale::Full => (200, 3000, 100, Estimator::ALL.to_vec()),
        };
        Ok(Self {
            label: label.trim().to_ascii_uppercase(),
            n,
            p,
            rho,
            alpha_decay,
            reps,
            master_seed,
            level: 0.95,
            estimators,
            m: 4,
            zero_signal: false,
            fixed_design: false,
            threshold_alpha: 1.0,
        })
    }

    /// Every estimator except R-LDPE, whose scores double the cost of a
    /// replication.
    pub fn desk_estimators() -> Vec<Estimator> {
        Estimator::ALL.into_iter().filter(|&e| e != Estimator::RLdpe).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n <= 3 || self.p < 3 {
            return Err(Error::Domain(format!("need n > 3 and p >= 3, got n = {}, p = {}", self.n, self.p)));
        }
        if !(self.rho.abs() < 1.0) {
            return Err(Error::Domain(format!("rho = {} must lie in (-1, 1)", self.rho)));
        }
        if !(self.alpha_decay >= 1.0 && self.alpha_decay.is_finite()) {
            return Err(Error::Domain(format!("alpha_decay = {} must be at least 1", self.alpha_decay)));
        }
        if self.reps == 0 {
            return Err(Error::Domain("reps must be positive".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Domain(format!("level = {} must lie in (0, 1)", self.level)));
        }
        if self.estimators.is_empty() {
            return Err(Error::Domain("no estimators requested".into()));
        }
        if self.estimators.contains(&Estimator::RLdpe) && self.m + 1 >= self.n {
            return Err(Error::Domain(format!("m = {} leaves no room for the restricted score", self.m)));
        }
        if !(self.threshold_alpha > 0.0 && self.threshold_alpha < 2.0 * self.p as f64) {
            return Err(Error::Domain(format!("threshold_alpha = {} must lie in (0, 2p)", self.threshold_alpha)));
        }
        Ok(())
    }

    fn wants(&self, e: Estimator) -> bool {
        self.estimators.contains(&e)
    }
}

/// Rows follow `x_1 = z_1`, `x_j = rho x_{j-1} + sqrt(1 - rho^2) z_j`, drawn
/// row by row from `stream`; columns are then rescaled to `||x_j||^2 = n`.
pub fn generate_design(n: usize, p: usize, rho: f64, stream: &mut RngStream) -> Result<(DenseMatrix, StandardizedDesign)> {
    if !(rho.abs() < 1.0) {
        return Err(Error::Domain(format!("rho = {rho} must lie in (-1, 1)")));
    }
    if n == 0 || p == 0 {
        return Err(Error::Dimension("design must be non-empty".into()));
    }
    let c = (1.0 - rho * rho).sqrt();
    let mut data = vec![0.0; n * p];
    for i in 0..n {
        let mut prev = 0.0;
        for j in 0..p {
            let z = stream.gaussian();
            let x = if j == 0 { z } else { rho * prev + c * z };
            data[j * n + i] = x;
            prev = x;
        }
    }
    let raw = DenseMatrix::from_col_major(n, p, data)?;
    let standardized = standardize_columns(&raw)?;
    Ok((raw, standardized))
}

/// 0-based spike indices: the 1-based set `{ceil(p/2) + k ceil(p/10)}` within
/// `1..=p`.
pub fn spike_indices(p: usize) -> Vec<usize> {
    let start = p.div_ceil(2);
    let step = p.div_ceil(10).max(1);
    (0..).map(|k| start + k * step).take_while(|&j| j <= p).filter(|&j| j >= 1).map(|j| j - 1).collect()
}

/// `3 lambda_univ` at the spikes and `3 lambda_univ / j^alpha_decay` elsewhere
/// (`j` 1-based).
pub fn generate_beta(p: usize, alpha_decay: f64, n: usize) -> Result<Vec<f64>> {
    if p < 2 {
        return Err(Error::Domain(format!("p = {p} must be at least 2")));
    }
    let top = 3.0 * lambda_univ(n, p)?;
    let mut beta: Vec<f64> = (1..=p).map(|j| top / (j as f64).powf(alpha_decay)).collect();
    for j in spike_indices(p) {
        beta[j] = top;
    }
    Ok(beta)
}

/// One estimator's output in a replication.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorResult {
    pub estimator: Estimator,
    pub estimates: Vec<f64>,
    /// Interval endpoints, NaN where no interval exists; empty for
    /// estimators without intervals.
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
    pub sigma_hat: Option<f64>,
    pub l2_loss: f64,
}

impl EstimatorResult {
    fn point(estimator: Estimator, estimates: Vec<f64>, sigma_hat: Option<f64>, beta: &[f64]) -> Self {
        let l2_loss = l2_distance(&estimates, beta);
        Self { estimator, estimates, ci_low: Vec::new(), ci_high: Vec::new(), sigma_hat, l2_loss }
    }

    pub fn has_interval(&self, j: usize) -> bool {
        self.ci_low.get(j).is_some_and(|v| v.is_finite())
    }

    pub fn width(&self, j: usize) -> Option<f64> {
        self.has_interval(j).then(|| self.ci_high[j] - self.ci_low[j])
    }

    /// `Some(true)` iff `value` lies in the closed interval for `j`.
    pub fn covers(&self, j: usize, value: f64) -> Option<bool> {
        self.has_interval(j).then(|| self.ci_low[j] <= value && value <= self.ci_high[j])
    }
}

/// The inequality `|tau_j^{-1}(beta_hat_j - beta_j) - z_j^T eps / ||z_j||| <=
/// eta_j ||beta_init - beta||_1`, checked for every column with a score.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BiasBoundCheck {
    pub checked: usize,
    pub violations: usize,
    /// Largest `lhs - rhs` seen; negative when every check had room.
    pub worst_excess: f64,
}

impl BiasBoundCheck {
    fn merge(&mut self, other: &BiasBoundCheck) {
        if other.checked == 0 {
            return;
        }
        if self.checked == 0 || other.worst_excess > self.worst_excess {
            self.worst_excess = other.worst_excess;
        }
        self.checked += other.checked;
        self.violations += other.violations;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationRecord {
    pub rep_id: u64,
    /// In [`Estimator::ALL`] order.
    pub results: Vec<EstimatorResult>,
    pub bias_bound: BiasBoundCheck,
    pub missing_scores: usize,
    pub eta_star_adjusted: usize,
    /// Wall-clock seconds; never written to output files.
    pub timing: f64,
}

impl ReplicationRecord {
    pub fn result(&self, e: Estimator) -> Option<&EstimatorResult> {
        self.results.iter().find(|r| r.estimator == e)
    }
}

fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn bias_bound(design: &PreparedDesign, scores: &ScoreSet, fit: &LdpeFit, beta: &[f64], eps: &[f64]) -> BiasBoundCheck {
    let init_error = l1_distance(&fit.beta_init, beta);
    let mut check = BiasBoundCheck::default();
    for j in 0..design.p() {
        let Some(s) = scores.get(j) else { continue };
        let z_norm = s.z_norm();
        let zx = crate::numerics::dot(&s.z, design.design().col(j));
        let noise = zx.signum() * crate::numerics::dot(&s.z, eps) / z_norm;
        let lhs = ((fit.beta_hat[j] - beta[j]) / s.tau_j - noise).abs();
        let excess = lhs - (s.eta_j * init_error + BIAS_BOUND_SLACK);
        if check.checked == 0 || excess > check.worst_excess {
            check.worst_excess = excess;
        }
        check.checked += 1;
        if excess > 0.0 {
            check.violations += 1;
        }
    }
    check
}

struct Context<'a> {
    setting: &'a SimSetting,
    beta: &'a [f64],
    fixed: Option<&'a PreparedDesign>,
    /// Scores of the fixed design, by kind.
    fixed_scores: Vec<(ScoreKind, ScoreSet)>,
    lambda0: f64,
    z_level: f64,
    z_threshold: f64,
    scores: ScoreSettings,
}

fn ldpe_result(ctx: &Context, estimator: Estimator, fit: &LdpeFit) -> Result<EstimatorResult> {
    let p = fit.p();
    let (mut low, mut high) = (vec![f64::NAN; p], vec![f64::NAN; p]);
    for j in (0..p).filter(|&j| fit.has_score(j)) {
        let ci = confidence_interval(fit, &[(j, 1.0)], 1.0 - ctx.setting.level)?;
        low[j] = ci.low();
        high[j] = ci.high();
    }
    let mut r = EstimatorResult::point(estimator, fit.beta_hat.clone(), Some(fit.sigma_hat), ctx.beta);
    r.ci_low = low;
    r.ci_high = high;
    Ok(r)
}

fn score_kinds(s: &SimSetting) -> Vec<(Estimator, ScoreKind)> {
    let mut kinds = Vec::new();
    if s.wants(Estimator::Ldpe) || s.wants(Estimator::TLdpe) {
        kinds.push((Estimator::Ldpe, ScoreKind::Ldpe));
    }
    if s.wants(Estimator::RLdpe) {
        kinds.push((Estimator::RLdpe, ScoreKind::Restricted { m: s.m }));
    }
    kinds
}

fn run_replication(ctx: &Context, rep_id: u64) -> Result<ReplicationRecord> {
    let start = Instant::now();
    let s = ctx.setting;
    let (n, p) = (s.n, s.p);
    let mut rng = RngStream::new(s.master_seed, rep_id);
    let owned;
    let design = match ctx.fixed {
        Some(d) => d,
        None => {
            owned = PreparedDesign::new(generate_design(n, p, s.rho, &mut rng)?.1);
            &owned
        }
    };
    let x = design.design();
    let eps = rng.gaussian_vector(n);
    let mut y = x.matrix().mul_vec(ctx.beta);
    for (yi, e) in y.iter_mut().zip(&eps) {
        *yi += e;
    }

    let mut results = Vec::new();
    let mut bias = BiasBoundCheck::default();
    let (mut missing_scores, mut eta_star_adjusted) = (0, 0);

    if s.wants(Estimator::Lasso) {
        let out = coordinate_descent(&SharedGramProblem::new(design, &y), ctx.lambda0, None, &CdOptions::default());
        if !out.converged {
            return Err(Error::NoConvergence(out.sweeps));
        }
        results.push(EstimatorResult::point(Estimator::Lasso, out.coefficients, None, ctx.beta));
    }
    if s.wants(Estimator::ScaledLasso) {
        let fit = fit_scaled_lasso(design, &y, ctx.lambda0)?;
        results.push(EstimatorResult::point(Estimator::ScaledLasso, fit.beta_init, Some(fit.sigma_hat), ctx.beta));
    }
    let needs_init = [Estimator::ScaledLassoLse, Estimator::Ldpe, Estimator::RLdpe, Estimator::TLdpe];
    let init: Option<InitialFit> =
        if needs_init.iter().any(|&e| s.wants(e)) { Some(fit_scaled_lasso_lse(design, &y, ctx.lambda0)?) } else { None };
    if s.wants(Estimator::ScaledLassoLse) {
        let fit = init.as_ref().expect("initial fit");
        results.push(EstimatorResult::point(
            Estimator::ScaledLassoLse,
            fit.beta_init.clone(),
            Some(fit.sigma_hat),
            ctx.beta,
        ));
    }

    let mut t_oracle = None;
    if s.wants(Estimator::Oracle) || s.wants(Estimator::TOracle) {
        let oracle = oracle_estimates(x, &y, ctx.beta, &eps)?;
        if s.wants(Estimator::Oracle) {
            let mut r = EstimatorResult::point(Estimator::Oracle, oracle.iter().map(|o| o.beta).collect(), None, ctx.beta);
            r.ci_low = oracle.iter().map(|o| o.beta - ctx.z_level * o.sigma / o.z_norm).collect();
            r.ci_high = oracle.iter().map(|o| o.beta + ctx.z_level * o.sigma / o.z_norm).collect();
            results.push(r);
        }
        if s.wants(Estimator::TOracle) {
            let est: Vec<f64> = oracle
                .iter()
                .map(|o| if o.beta.abs() > ctx.z_threshold * o.sigma / o.z_norm { o.beta } else { 0.0 })
                .collect();
            t_oracle = Some(EstimatorResult::point(Estimator::TOracle, est, None, ctx.beta));
        }
    }

    let mut t_ldpe = None;
    for (estimator, kind) in score_kinds(s) {
        let init = init.as_ref().expect("initial fit");
        let scores = match ctx.fixed_scores.iter().find(|(k, _)| *k == kind) {
            Some((_, set)) => Cow::Borrowed(set),
            None => Cow::Owned(build_all_scores(design, kind, &ctx.scores)),
        };
        if scores.failures().len() == p {
            return Err(Error::AllDegenerate(p));
        }
        missing_scores += scores.failures().len();
        eta_star_adjusted += scores.entries.iter().filter(|e| e.as_ref().is_ok_and(|v| v.eta_star_adjusted)).count();
        let fit = ldpe_estimate(design, &y, &scores, init)?;
        bias.merge(&bias_bound(design, &scores, &fit, ctx.beta, &eps));
        if s.wants(estimator) {
            results.push(ldpe_result(ctx, estimator, &fit)?);
        }
        if estimator == Estimator::Ldpe && s.wants(Estimator::TLdpe) {
            let sel = threshold_ldpe(&fit, s.threshold_alpha, ThresholdMode::Hard, 0.0)?;
            t_ldpe = Some(EstimatorResult::point(Estimator::TLdpe, sel.estimates, Some(fit.sigma_hat), ctx.beta));
        }
    }
    results.extend(t_oracle);
    results.extend(t_ldpe);
    results.sort_by_key(|r| r.estimator);

    Ok(ReplicationRecord {
        rep_id,
        results,
        bias_bound: bias,
        missing_scores,
        eta_star_adjusted,
        timing: start.elapsed().as_secs_f64(),
    })
}

/// A replication that returned an error; it is excluded from the summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationFailure {
    pub rep_id: u64,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub setting: SimSetting,
    pub beta: Vec<f64>,
    /// Successful replications by increasing `rep_id`.
    pub records: Vec<ReplicationRecord>,
    pub failures: Vec<ReplicationFailure>,
    pub tables: SummaryTables,
}

pub fn run_setting(setting: &SimSetting) -> Result<SimOutput> {
    run_setting_with_progress(setting, |_| {})
}

/// Runs every replication on the current rayon pool; `progress` sees each
/// finished replication in completion order. The output does not depend on
/// the number of threads.
pub fn run_setting_with_progress<F>(setting: &SimSetting, progress: F) -> Result<SimOutput>
where
    F: Fn(&std::result::Result<ReplicationRecord, ReplicationFailure>) + Sync,
{
    setting.validate()?;
    let beta = if setting.zero_signal { vec![0.0; setting.p] } else { generate_beta(setting.p, setting.alpha_decay, setting.n)? };
    let fixed = if setting.fixed_design {
        let mut rng = RngStream::new(setting.master_seed, FIXED_DESIGN_STREAM);
        Some(PreparedDesign::new(generate_design(setting.n, setting.p, setting.rho, &mut rng)?.1))
    } else {
        None
    };
    let score_settings = ScoreSettings::default();
    let fixed_scores = match &fixed {
        Some(design) => score_kinds(setting).into_iter().map(|(_, k)| (k, build_all_scores(design, k, &score_settings))).collect(),
        None => Vec::new(),
    };
    let ctx = Context {
        setting,
        beta: &beta,
        fixed: fixed.as_ref(),
        fixed_scores,
        lambda0: lambda_univ(setting.n, setting.p)?,
        z_level: normal_quantile(1.0 - (1.0 - setting.level) / 2.0)?,
        z_threshold: normal_quantile(1.0 - setting.threshold_alpha / (2.0 * setting.p as f64))?,
        scores: score_settings,
    };
    let outcomes: Vec<std::result::Result<ReplicationRecord, ReplicationFailure>> = (1..=setting.reps as u64)
        .into_par_iter()
        .map(|rep_id| {
            let out = run_replication(&ctx, rep_id).map_err(|e| ReplicationFailure { rep_id, message: e.to_string() });
            progress(&out);
            out
        })
        .collect();
    let (mut records, mut failures) = (Vec::new(), Vec::new());
    for o in outcomes {
        match o {
            Ok(r) => records.push(r),
            Err(f) => failures.push(f),
        }
    }
    if failures.len() as f64 > MAX_FAILURE_SHARE * setting.reps as f64 {
        return Err(Error::TooManyFailures { failed: failures.len(), total: setting.reps });
    }
    let tables = summarize(setting, &beta, &records, &failures);
    Ok(SimOutput { setting: setting.clone(), beta, records, failures, tables })
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation.
fn sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return f64::NAN;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

fn median(v: &[f64]) -> f64 {
    let mut s: Vec<f64> = v.iter().copied().filter(|x| !x.is_nan()).collect();
    if s.is_empty() {
        return f64::NAN;
    }
    s.sort_by(f64::total_cmp);
    let k = s.len() / 2;
    if s.len() % 2 == 1 {
        s[k]
    } else {
        0.5 * (s[k - 1] + s[k])
    }
}

/// Errors at the spike coefficients, pooled (`index = None`) or per index
/// (1-based).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxBetaRow {
    pub estimator: Estimator,
    pub index: Option<usize>,
    pub bias: f64,
    pub sd: f64,
    pub median_abs_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub estimator: Estimator,
    pub all: f64,
    pub maximal: f64,
    /// `(rep, j)` pairs without an interval.
    pub missing: usize,
}

/// A median of per-coefficient ratios against the oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub estimator: Estimator,
    pub median: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub estimator: Estimator,
    pub mean: f64,
    pub sd: f64,
    pub median: f64,
}

/// Share of replications selecting at least one coefficient whose true
/// value is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRow {
    pub estimator: Estimator,
    pub false_selection_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryTables {
    pub setting: String,
    pub replications: usize,
    pub failed: usize,
    /// 1-based spike indices.
    pub maximal_indices: Vec<usize>,
    pub max_beta: Vec<MaxBetaRow>,
    pub coverage: Vec<CoverageRow>,
    /// Median over coefficients of the per-coefficient median width ratio.
    pub width_ratio: Vec<RatioRow>,
    /// Median over coefficients of `MSE(oracle) / MSE(estimator)`.
    pub efficiency: Vec<RatioRow>,
    pub l2_loss: Vec<LossRow>,
    pub selection: Vec<SelectionRow>,
    pub bias_bound: BiasBoundCheck,
    pub missing_scores: usize,
    pub eta_star_adjusted: usize,
    /// Per-coefficient series behind the coverage, width and efficiency
    /// summaries.
    #[serde(skip)]
    pub per_index: PerIndex,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PerIndex {
    pub coverage: Vec<(Estimator, Vec<f64>)>,
    pub width_ratio: Vec<(Estimator, Vec<f64>)>,
    pub efficiency: Vec<(Estimator, Vec<f64>)>,
}

fn present(records: &[ReplicationRecord]) -> Vec<Estimator> {
    records.first().map(|r| r.results.iter().map(|x| x.estimator).collect()).unwrap_or_default()
}

fn error_row(records: &[ReplicationRecord], e: Estimator, idx: &[usize], beta: &[f64], index: Option<usize>) -> MaxBetaRow {
    let errors: Vec<f64> = records
        .iter()
        .filter_map(|r| r.result(e))
        .flat_map(|res| idx.iter().map(move |&j| res.estimates[j] - beta[j]))
        .collect();
    let abs: Vec<f64> = errors.iter().map(|x| x.abs()).collect();
    MaxBetaRow { estimator: e, index, bias: mean(&errors), sd: sd(&errors), median_abs_error: median(&abs) }
}

fn coverage_share(records: &[ReplicationRecord], e: Estimator, idx: impl Iterator<Item = usize> + Clone, beta: &[f64]) -> (f64, usize) {
    let (mut hit, mut total, mut missing) = (0usize, 0usize, 0usize);
    for res in records.iter().filter_map(|r| r.result(e)) {
        for j in idx.clone() {
            match res.covers(j, beta[j]) {
                Some(c) => {
                    total += 1;
                    hit += usize::from(c);
                }
                None => missing += 1,
            }
        }
    }
    (if total == 0 { f64::NAN } else { hit as f64 / total as f64 }, missing)
}

/// Builds every summary from the successful replications in `rep_id` order.
pub fn summarize(
    setting: &SimSetting,
    beta: &[f64],
    records: &[ReplicationRecord],
    failures: &[ReplicationFailure],
) -> SummaryTables {
    let p = beta.len();
    let spikes = spike_indices(p);
    let estimators = present(records);

    let mut max_beta = Vec::new();
    for &e in &estimators {
        max_beta.push(error_row(records, e, &spikes, beta, None));
        for &j in &spikes {
            max_beta.push(error_row(records, e, &[j], beta, Some(j + 1)));
        }
    }

    let mut coverage = Vec::new();
    let mut per_index = PerIndex::default();
    for &e in estimators.iter().filter(|e| e.has_intervals()) {
        let (all, missing) = coverage_share(records, e, 0..p, beta);
        let (maximal, _) = coverage_share(records, e, spikes.iter().copied(), beta);
        coverage.push(CoverageRow { estimator: e, all, maximal, missing });
        per_index.coverage.push((e, (0..p).map(|j| coverage_share(records, e, std::iter::once(j), beta).0).collect()));
    }

    let (mut width_ratio, mut efficiency) = (Vec::new(), Vec::new());
    if estimators.contains(&Estimator::Oracle) {
        for &e in estimators.iter().filter(|&&e| matches!(e, Estimator::Ldpe | Estimator::RLdpe)) {
            let mut widths = Vec::with_capacity(p);
            let mut effs = Vec::with_capacity(p);
            for j in 0..p {
                let (mut ratios, mut se_o, mut se_e) = (Vec::new(), Vec::new(), Vec::new());
                for r in records {
                    let (Some(o), Some(x)) = (r.result(Estimator::Oracle), r.result(e)) else { continue };
                    if let (Some(wo), Some(wx)) = (o.width(j), x.width(j)) {
                        ratios.push(wx / wo);
                    }
                    se_o.push((o.estimates[j] - beta[j]).powi(2));
                    se_e.push((x.estimates[j] - beta[j]).powi(2));
                }
                widths.push(median(&ratios));
                effs.push(mean(&se_o) / mean(&se_e));
            }
            width_ratio.push(RatioRow { estimator: e, median: median(&widths) });
            efficiency.push(RatioRow { estimator: e, median: median(&effs) });
            per_index.width_ratio.push((e, widths));
            per_index.efficiency.push((e, effs));
        }
    }

    let l2_loss = estimators
        .iter()
        .map(|&e| {
            let v: Vec<f64> = records.iter().filter_map(|r| r.result(e)).map(|x| x.l2_loss).collect();
            LossRow { estimator: e, mean: mean(&v), sd: sd(&v), median: median(&v) }
        })
        .collect();

    let selection = estimators
        .iter()
        .filter(|e| matches!(e, Estimator::TOracle | Estimator::TLdpe))
        .map(|&e| {
            let hits = records
                .iter()
                .filter_map(|r| r.result(e))
                .filter(|x| x.estimates.iter().zip(beta).any(|(b, t)| *b != 0.0 && *t == 0.0))
                .count();
            SelectionRow { estimator: e, false_selection_rate: hits as f64 / records.len().max(1) as f64 }
        })
        .collect();

    let mut bias_bound = BiasBoundCheck::default();
    for r in records {
        bias_bound.merge(&r.bias_bound);
    }
    SummaryTables {
        setting: setting.label.clone(),
        replications: records.len(),
        failed: failures.len(),
        maximal_indices: spikes.iter().map(|j| j + 1).collect(),
        max_beta,
        coverage,
        width_ratio,
        efficiency,
        l2_loss,
        selection,
        bias_bound,
        missing_scores: records.iter().map(|r| r.missing_scores).sum(),
        eta_star_adjusted: records.iter().map(|r| r.eta_star_adjusted).sum(),
        per_index,
    }
}

fn num(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        x.to_string()
    }
}

impl SummaryTables {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Long format `table,row,column,value`; columns are estimator labels.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("table,row,column,value\n");
        let mut put = |table: &str, row: &str, col: &str, v: f64| {
            let _ = writeln!(out, "{table},{row},{col},{}", num(v));
        };
        for r in &self.max_beta {
            let suffix = r.index.map_or_else(String::new, |j| format!(" j={j}"));
            put("max_beta", &format!("bias{suffix}"), r.estimator.label(), r.bias);
            put("max_beta", &format!("sd{suffix}"), r.estimator.label(), r.sd);
            put("max_beta", &format!("median abs error{suffix}"), r.estimator.label(), r.median_abs_error);
        }
        for r in &self.coverage {
            put("coverage", "all", r.estimator.label(), r.all);
            put("coverage", "maximal", r.estimator.label(), r.maximal);
        }
        for r in &self.width_ratio {
            put("width_ratio", "median", r.estimator.label(), r.median);
        }
        for r in &self.efficiency {
            put("efficiency", "median", r.estimator.label(), r.median);
        }
        for r in &self.l2_loss {
            put("l2_loss", "mean", r.estimator.label(), r.mean);
            put("l2_loss", "sd", r.estimator.label(), r.sd);
            put("l2_loss", "median", r.estimator.label(), r.median);
        }
        for r in &self.selection {
            put("selection", "false selection rate", r.estimator.label(), r.false_selection_rate);
        }
        out
    }
}

fn series_csv(beta: &[f64], spikes: &[usize], series: &[(Estimator, Vec<f64>)]) -> String {
    let mut out = String::from("j,beta,maximal");
    for (e, _) in series {
        out.push(',');
        out.push_str(e.name());
    }
    out.push('\n');
    for (j, b) in beta.iter().enumerate() {
        let _ = write!(out, "{},{},{}", j + 1, b, u8::from(spikes.contains(&j)));
        for (_, v) in series {
            out.push(',');
            out.push_str(&num(v[j]));
        }
        out.push('\n');
    }
    out
}

impl SimOutput {
    /// One row per replication, spike index and estimator.
    pub fn replications_csv(&self) -> String {
        let mut out = String::from("rep,j,estimator,estimate,ci_low,ci_high,covered,sigma_hat,l2_loss\n");
        let spikes = spike_indices(self.setting.p);
        for r in &self.records {
            for res in &r.results {
                for &j in &spikes {
                    let (low, high, cov) = match res.covers(j, self.beta[j]) {
                        Some(c) => (num(res.ci_low[j]), num(res.ci_high[j]), u8::from(c).to_string()),
                        None => Default::default(),
                    };
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{low},{high},{cov},{},{}",
                        r.rep_id,
                        j + 1,
                        res.estimator.name(),
                        num(res.estimates[j]),
                        res.sigma_hat.map_or_else(String::new, num),
                        num(res.l2_loss)
                    );
                }
            }
        }
        out
    }

    /// Writes the output directory, creating it if needed. Every file is
    /// written atomically.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
        let spikes = spike_indices(self.setting.p);
        let per = &self.tables.per_index;
        let files = [
            ("settings.json", serde_json::to_string_pretty(&self.setting)? + "\n"),
            ("replications.csv", self.replications_csv()),
            ("summary_tables.json", self.tables.to_json()?),
            ("summary_tables.csv", self.tables.to_csv()),
            ("plotdata_coverage.csv", series_csv(&self.beta, &spikes, &per.coverage)),
            ("plotdata_widths.csv", series_csv(&self.beta, &spikes, &per.width_ratio)),
            ("plotdata_eff.csv", series_csv(&self.beta, &spikes, &per.efficiency)),
        ];
        for (name, body) in files {
            write_atomic(&dir.join(name), body.as_bytes())?;
        }
        Ok(())
    }
}
