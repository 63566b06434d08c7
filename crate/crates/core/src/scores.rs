//! Score vectors `z_j` from the nodewise Lasso path (LDPE) and from the path
//! after removing the `m` most correlated columns (R-LDPE).

use std::borrow::Cow;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lasso::{
    column_walker, default_column_grid, geometric_grid, lambda_max, CdOptions, CovarianceSource, DenseProblem, Gram,
    PathPoint, PathWalker, PreparedDesign, DEGENERATE_SCORE_FACTOR, GRID_MIN_RATIO, GRID_POINTS,
};
use crate::numerics::{dot, norm2, PivotedQr};

/// How far down the grid the noise-factor search looks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScanMode {
    /// Stop at the first point below the starting penalty whose noise factor
    /// exceeds the relaxed bound.
    FirstExceedance,
    /// Solve every grid point and take the smallest penalty meeting the bound.
    FullGrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreSettings {
    /// Initial bias-factor bound; `None` means `sqrt(2 ln p)`.
    pub eta_star: Option<f64>,
    pub kappa0: f64,
    pub kappa1: f64,
    pub grid_points: usize,
    pub grid_min_ratio: f64,
    pub scan: ScanMode,
}

impl Default for ScoreSettings {
    fn default() -> Self {
        Self {
            eta_star: None,
            kappa0: 0.25,
            kappa1: 0.25,
            grid_points: GRID_POINTS,
            grid_min_ratio: GRID_MIN_RATIO,
            scan: ScanMode::FirstExceedance,
        }
    }
}

impl ScoreSettings {
    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.kappa0) {
            return Err(Error::Domain(format!("kappa0 = {} must lie in [0, 1]", self.kappa0)));
        }
        if !(self.kappa1 > 0.0 && self.kappa1 <= 1.0) {
            return Err(Error::Domain(format!("kappa1 = {} must lie in (0, 1]", self.kappa1)));
        }
        if self.grid_points < 1 || !(self.grid_min_ratio > 0.0 && self.grid_min_ratio <= 1.0) {
            return Err(Error::Domain("grid needs at least one point and a ratio in (0, 1]".into()));
        }
        if let Some(e) = self.eta_star {
            if !(e > 0.0 && e.is_finite()) {
                return Err(Error::Domain(format!("eta_star = {e} must be positive")));
            }
        }
        Ok(())
    }

    fn eta_default(&self, p: usize) -> f64 {
        self.eta_star.unwrap_or_else(|| default_eta_star(p))
    }
}

/// `sqrt(2 ln p)`
pub fn default_eta_star(p: usize) -> f64 {
    (2.0 * (p as f64).ln()).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub j: usize,
    pub z: Vec<f64>,
    pub lambda_j: f64,
    /// `max_{k != j} |x_k^T z| / ||z||`
    pub eta_j: f64,
    /// `||z|| / |x_j^T z|`
    pub tau_j: f64,
    pub eta_star: f64,
    pub eta_star_adjusted: bool,
    /// The removed columns for a restricted score, empty otherwise.
    pub restricted_set: Vec<usize>,
    /// Bias factor over the projected predictors, as seen by the search.
    pub projected_eta: f64,
}

impl ScoreVector {
    /// `z^T x_j`
    pub fn zx(&self) -> f64 {
        self.z_norm() / self.tau_j
    }

    pub fn z_norm(&self) -> f64 {
        norm2(&self.z)
    }
}

/// Computes `eta` and `tau` of `z` against the columns of the design.
pub fn score_factors(design: &PreparedDesign, j: usize, z: &[f64]) -> (f64, f64) {
    let d = design.design();
    let zn = norm2(z);
    let mut max = 0.0f64;
    for k in 0..d.p() {
        if k != j {
            max = max.max(dot(d.col(k), z).abs());
        }
    }
    (max / zn, zn / dot(d.col(j), z).abs())
}

struct Choice {
    point: PathPoint,
    eta_star: f64,
    adjusted: bool,
}

/// Finds the largest penalty with `eta <= eta_default` (relaxing the bound to
/// `(1 + kappa1)` times the smallest `eta` when none qualifies), then moves to
/// the smallest penalty whose noise factor stays within `(1 + kappa0)` of the
/// starting one.
fn search_path<S: CovarianceSource>(
    mut walker: PathWalker<'_, S>,
    j: usize,
    eta_default: f64,
    settings: &ScoreSettings,
) -> Result<Choice> {
    let mut seen: Vec<PathPoint> = Vec::new();
    let mut start = None;
    for point in walker.by_ref() {
        let ok = !point.degenerate && point.eta <= eta_default;
        seen.push(point);
        if ok {
            start = Some(seen.len() - 1);
            break;
        }
    }
    let adjusted = start.is_none();
    let start = match start {
        Some(i) => i,
        None => {
            let eta_min =
                seen.iter().filter(|pt| !pt.degenerate).map(|pt| pt.eta).fold(f64::INFINITY, f64::min);
            if !eta_min.is_finite() {
                return Err(Error::AllDegenerate(j));
            }
            let bound = (1.0 + settings.kappa1) * eta_min;
            seen.iter().position(|pt| !pt.degenerate && pt.eta <= bound).expect("grid minimum satisfies its bound")
        }
    };
    let eta_star = seen[start].eta;
    let tau_bound = (1.0 + settings.kappa0) * seen[start].tau;
    let mut best = start;
    for i in start + 1..seen.len() {
        let pt = &seen[i];
        if pt.degenerate {
            continue;
        }
        if pt.tau <= tau_bound {
            best = i;
        } else if settings.scan == ScanMode::FirstExceedance {
            return Ok(Choice { point: seen.swap_remove(best), eta_star, adjusted });
        }
    }
    let mut tail_best = None;
    for point in walker {
        if point.degenerate {
            continue;
        }
        if point.tau <= tau_bound {
            tail_best = Some(point);
        } else if settings.scan == ScanMode::FirstExceedance {
            break;
        }
    }
    let point = tail_best.unwrap_or_else(|| seen.swap_remove(best));
    Ok(Choice { point, eta_star, adjusted })
}

fn check_column(design: &PreparedDesign, j: usize) -> Result<()> {
    if j >= design.p() {
        return Err(Error::Dimension(format!("column {j} out of range for p = {}", design.p())));
    }
    if design.p() < 2 {
        return Err(Error::Dimension("score vectors need at least two columns".into()));
    }
    Ok(())
}

fn finish(design: &PreparedDesign, j: usize, choice: Choice, restricted_set: Vec<usize>) -> ScoreVector {
    let (eta_j, tau_j) = score_factors(design, j, &choice.point.z);
    ScoreVector {
        j,
        lambda_j: choice.point.lambda,
        eta_j,
        tau_j,
        eta_star: choice.eta_star,
        eta_star_adjusted: choice.adjusted,
        restricted_set,
        projected_eta: choice.point.eta,
        z: choice.point.z,
    }
}

/// Runs the penalty search on the nodewise Lasso path of column `j`.
pub fn build_score(design: &PreparedDesign, j: usize, settings: &ScoreSettings) -> Result<ScoreVector> {
    settings.validate()?;
    check_column(design, j)?;
    let grid = if settings.grid_points == GRID_POINTS && settings.grid_min_ratio == GRID_MIN_RATIO {
        default_column_grid(design, j)
    } else {
        let src = crate::lasso::ColumnProblem::new(design, j);
        geometric_grid(lambda_max(&src), settings.grid_points, settings.grid_min_ratio)
    };
    let walker = column_walker(design, j, grid, CdOptions::default());
    let choice = search_path(walker, j, settings.eta_default(design.p()), settings)?;
    Ok(finish(design, j, choice, Vec::new()))
}

/// Indices of the `m` columns most correlated with column `j`, ties going
/// to the smaller index.
pub fn restricted_set(gram: &Gram, j: usize, m: usize) -> Vec<usize> {
    let mut others: Vec<usize> = (0..gram.dim()).filter(|&k| k != j).collect();
    others.sort_by(|&a, &b| gram.get(j, b).abs().total_cmp(&gram.get(j, a).abs()).then(a.cmp(&b)));
    others.truncate(m);
    others.sort_unstable();
    others
}

/// The same search applied after projecting out the `m` columns most correlated
/// with `x_j`. The reported factors refer to the original columns.
pub fn build_restricted_score(
    design: &PreparedDesign,
    j: usize,
    m: usize,
    settings: &ScoreSettings,
) -> Result<ScoreVector> {
    settings.validate()?;
    check_column(design, j)?;
    let n = design.n();
    let p = design.p();
    if m < 1 || m + 1 >= n || m >= p {
        return Err(Error::Domain(format!("m = {m} must satisfy 1 <= m < min(n - 1, p)")));
    }
    let d = design.design();
    let set = restricted_set(design.gram(), j, m);
    let cols: Vec<&[f64]> = set.iter().map(|&k| d.col(k)).collect();
    let qr = PivotedQr::new(&cols);
    let basis = qr.basis();
    let w: Vec<Vec<f64>> = (0..p).map(|c| basis.iter().map(|q| dot(q, d.col(c))).collect()).collect();

    // inner products after projection: x_a^T x_b - (Q^T x_a)^T (Q^T x_b)
    let cross = |a: usize, b: usize| design.gram().get(a, b) - dot(&w[a], &w[b]);
    let nf = n as f64;
    let yty = cross(j, j);
    if yty < DEGENERATE_SCORE_FACTOR * nf {
        // x_j^T z <= ||P x_j||^2 along the whole path
        return Err(Error::AllDegenerate(j));
    }
    // columns numerically inside the removed span are left out
    let predictors: Vec<usize> = (0..p).filter(|&k| k != j && cross(k, k) > 1e-10 * nf).collect();
    let xty = predictors.iter().map(|&k| cross(k, j)).collect();
    let gram = Gram::from_fn(predictors.len(), |a, b| cross(predictors[a], predictors[b]));
    let src = DenseProblem::with_gram(gram, n, xty, yty).with_rank_bound(n - qr.rank());
    let target = qr.residual(d.col(j));
    let grid = geometric_grid(lambda_max(&src), settings.grid_points, settings.grid_min_ratio);
    let mapping = predictors;
    let qr_ref = &qr;
    let predictor_col = Box::new(move |k: usize| Cow::Owned(qr_ref.residual(d.col(mapping[k]))));
    let walker = PathWalker::new(src, &target, predictor_col, grid, CdOptions::default());
    let choice = search_path(walker, j, settings.eta_default(p), settings)?;
    Ok(finish(design, j, choice, set))
}

/// The unrelaxed score `z_j = P^perp x_j`, projecting out every other
/// column. This is the end of the nodewise path as the penalty vanishes and
/// exists only when `x_j` is outside the span of the others.
pub fn projection_score(design: &PreparedDesign, j: usize) -> Result<ScoreVector> {
    if j >= design.p() {
        return Err(Error::Dimension(format!("column {j} out of range for p = {}", design.p())));
    }
    let d = design.design();
    let others: Vec<&[f64]> = (0..d.p()).filter(|&k| k != j).map(|k| d.col(k)).collect();
    let z = PivotedQr::new(&others).residual(d.col(j));
    if dot(&z, d.col(j)).abs() < DEGENERATE_SCORE_FACTOR * design.n() as f64 {
        return Err(Error::AllDegenerate(j));
    }
    let (eta_j, tau_j) = score_factors(design, j, &z);
    Ok(ScoreVector {
        j,
        z,
        lambda_j: 0.0,
        eta_j,
        tau_j,
        eta_star: eta_j,
        eta_star_adjusted: false,
        restricted_set: Vec::new(),
        projected_eta: eta_j,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScoreKind {
    Ldpe,
    Restricted { m: usize },
    Projection,
}

impl ScoreKind {
    pub fn label(&self) -> String {
        match self {
            ScoreKind::Ldpe => "ldpe".into(),
            ScoreKind::Restricted { m } => format!("rldpe{m}"),
            ScoreKind::Projection => "projection".into(),
        }
    }
}

/// Scores for every column of one design; a failed column keeps its error.
#[derive(Debug, Clone)]
pub struct ScoreSet {
    pub design_hash: String,
    pub n: usize,
    pub p: usize,
    pub kind: ScoreKind,
    pub entries: Vec<Result<ScoreVector>>,
}

impl ScoreSet {
    pub fn get(&self, j: usize) -> Option<&ScoreVector> {
        self.entries.get(j).and_then(|e| e.as_ref().ok())
    }

    pub fn failures(&self) -> Vec<(usize, &Error)> {
        self.entries.iter().enumerate().filter_map(|(j, e)| e.as_ref().err().map(|err| (j, err))).collect()
    }
}

/// Builds the score of every column in parallel on the current rayon pool.
/// The result does not depend on the number of threads.
pub fn build_all_scores(design: &PreparedDesign, kind: ScoreKind, settings: &ScoreSettings) -> ScoreSet {
    let entries = (0..design.p())
        .into_par_iter()
        .map(|j| match kind {
            ScoreKind::Ldpe => build_score(design, j, settings),
            ScoreKind::Restricted { m } => build_restricted_score(design, j, m, settings),
            ScoreKind::Projection => projection_score(design, j),
        })
        .collect();
    ScoreSet { design_hash: design.design().content_hash(), n: design.n(), p: design.p(), kind, entries }
}

/// Writes a score set as CSV keyed by the design hash. Column indices are
/// 1-based; failed columns are written as `j,degenerate`.
pub fn save_score_cache(set: &ScoreSet, settings: &ScoreSettings, path: &Path) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "design_hash,{},n,{},p,{},kind,{},kappa0,{},kappa1,{},eta_star,{}",
        set.design_hash,
        set.n,
        set.p,
        set.kind.label(),
        settings.kappa0,
        settings.kappa1,
        settings.eta_star.map_or_else(|| "default".to_string(), |e| e.to_string()),
    );
    for (j, entry) in set.entries.iter().enumerate() {
        match entry {
            Ok(s) => {
                let _ = write!(
                    out,
                    "{},{},{},{},{},{},{}",
                    j + 1,
                    s.lambda_j,
                    s.eta_j,
                    s.tau_j,
                    s.eta_star,
                    u8::from(s.eta_star_adjusted),
                    s.projected_eta
                );
                let _ = write!(out, ",{}", s.restricted_set.iter().map(|k| (k + 1).to_string()).collect::<Vec<_>>().join(";"));
                for v in &s.z {
                    let _ = write!(out, ",{v}");
                }
                out.push('\n');
            }
            Err(_) => {
                let _ = writeln!(out, "{},degenerate", j + 1);
            }
        }
    }
    crate::io::write_atomic(path, out.as_bytes())
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| Error::Parse(format!("bad number '{s}' in score cache")))
}

/// Reads a score cache, checking that it belongs to `design` and was built
/// with the same kind and settings.
pub fn load_score_cache(
    design: &PreparedDesign,
    kind: ScoreKind,
    settings: &ScoreSettings,
    path: &Path,
) -> Result<ScoreSet> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or_else(|| Error::Parse("empty score cache".into()))?.split(',').collect();
    if header.len() != 14 || header[0] != "design_hash" {
        return Err(Error::Parse("malformed score cache header".into()));
    }
    let hash = design.design().content_hash();
    if header[1] != hash {
        return Err(Error::ScoreMismatch { expected: header[1].to_string(), found: hash });
    }
    let expected_eta = settings.eta_star.map_or_else(|| "default".to_string(), |e| e.to_string());
    if header[7] != kind.label()
        || parse_f64(header[9])? != settings.kappa0
        || parse_f64(header[11])? != settings.kappa1
        || header[13] != expected_eta
    {
        return Err(Error::Parse("score cache was built with different settings".into()));
    }
    let (n, p) = (design.n(), design.p());
    let mut entries = Vec::with_capacity(p);
    for (row, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        let j: usize = f[0].parse().map_err(|_| Error::Parse(format!("bad index on cache line {}", row + 2)))?;
        if j != row + 1 {
            return Err(Error::Parse(format!("cache line {} has index {j}", row + 2)));
        }
        if f.len() == 2 && f[1] == "degenerate" {
            entries.push(Err(Error::AllDegenerate(j - 1)));
            continue;
        }
        if f.len() != 8 + n {
            return Err(Error::Parse(format!("cache line {} has {} fields", row + 2, f.len())));
        }
        let restricted_set = if f[7].is_empty() {
            Vec::new()
        } else {
            f[7].split(';')
                .map(|s| s.parse::<usize>().map(|k| k - 1).map_err(|_| Error::Parse("bad restricted set".into())))
                .collect::<Result<Vec<_>>>()?
        };
        entries.push(Ok(ScoreVector {
            j: j - 1,
            lambda_j: parse_f64(f[1])?,
            eta_j: parse_f64(f[2])?,
            tau_j: parse_f64(f[3])?,
            eta_star: parse_f64(f[4])?,
            eta_star_adjusted: f[5] == "1",
            projected_eta: parse_f64(f[6])?,
            restricted_set,
            z: f[8..].iter().map(|s| parse_f64(s)).collect::<Result<Vec<_>>>()?,
        }));
    }
    if entries.len() != p {
        return Err(Error::Parse(format!("score cache has {} columns, design has {p}", entries.len())));
    }
    Ok(ScoreSet { design_hash: hash, n, p, kind, entries })
}
