//! Coordinate-descent Lasso with warm starts and active-set cycling, KKT
//! verification, and the per-column path quantities used to build score
//! vectors.
//!
//! The solver works on inner products only: it keeps `c_k = x_k^T r` for the
//! current residual `r` and updates it through columns of the Gram matrix.
//! This makes a whole path of nodewise regressions cost a single `X^T X`.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::numerics::{axpy, dot, norm2, DenseMatrix, StandardizedDesign};

/// Symmetric `X^T X` stored column-major.
#[derive(Debug, Clone)]
pub struct Gram {
    p: usize,
    data: Vec<f64>,
}

impl Gram {
    pub fn new(x: &DenseMatrix) -> Self {
        let p = x.cols();
        let mut data = vec![0.0; p * p];
        for k in 0..p {
            for l in k..p {
                let v = dot(x.col(k), x.col(l));
                data[k * p + l] = v;
                data[l * p + k] = v;
            }
        }
        Self { p, data }
    }

    /// Builds a symmetric matrix from its upper triangle `f(k, l)`, `k <= l`.
    pub fn from_fn(p: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = vec![0.0; p * p];
        for l in 0..p {
            for k in 0..=l {
                let v = f(k, l);
                data[k * p + l] = v;
                data[l * p + k] = v;
            }
        }
        Self { p, data }
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn get(&self, k: usize, l: usize) -> f64 {
        self.data[l * self.p + k]
    }

    pub fn col(&self, l: usize) -> &[f64] {
        &self.data[l * self.p..(l + 1) * self.p]
    }
}

/// A standardized design together with its Gram matrix.
#[derive(Debug, Clone)]
pub struct PreparedDesign {
    design: StandardizedDesign,
    gram: Gram,
}

impl PreparedDesign {
    pub fn new(design: StandardizedDesign) -> Self {
        let gram = Gram::new(design.matrix());
        Self { design, gram }
    }

    pub fn design(&self) -> &StandardizedDesign {
        &self.design
    }

    pub fn gram(&self) -> &Gram {
        &self.gram
    }

    pub fn n(&self) -> usize {
        self.design.n()
    }

    pub fn p(&self) -> usize {
        self.design.p()
    }
}

/// Inner products of a least-squares problem with predictors `x_1..x_q` and response `y`.
pub trait CovarianceSource {
    fn n(&self) -> usize;
    fn dim(&self) -> usize;
    /// `x_k^T x_l`
    fn cross(&self, k: usize, l: usize) -> f64;
    /// `x_k^T y`
    fn xty(&self, k: usize) -> f64;
    /// `y^T y`
    fn yty(&self) -> f64;

    fn col_sq(&self, k: usize) -> f64 {
        self.cross(k, k)
    }

    /// Upper bound on the rank of the predictors.
    fn rank_bound(&self) -> usize {
        self.n()
    }

    /// `c[l] -= delta * x_l^T x_k` for every `l`.
    fn subtract_col(&self, k: usize, delta: f64, c: &mut [f64]) {
        for (l, cl) in c.iter_mut().enumerate() {
            *cl -= delta * self.cross(l, k);
        }
    }
}

/// Predictors and response given explicitly.
pub struct DenseProblem {
    n: usize,
    gram: Gram,
    xty: Vec<f64>,
    yty: f64,
    rank: Option<usize>,
}

impl DenseProblem {
    pub fn new(predictors: &DenseMatrix, response: &[f64]) -> Self {
        Self {
            n: predictors.rows(),
            gram: Gram::new(predictors),
            xty: predictors.t_mul_vec(response),
            yty: dot(response, response),
            rank: None,
        }
    }

    /// Uses a precomputed Gram matrix of the predictors.
    pub fn with_gram(gram: Gram, n: usize, xty: Vec<f64>, yty: f64) -> Self {
        Self { n, gram, xty, yty, rank: None }
    }

    /// Declares that the predictors span at most `rank` dimensions.
    pub fn with_rank_bound(mut self, rank: usize) -> Self {
        self.rank = Some(rank);
        self
    }
}

impl CovarianceSource for DenseProblem {
    fn n(&self) -> usize {
        self.n
    }
    fn dim(&self) -> usize {
        self.gram.dim()
    }
    fn cross(&self, k: usize, l: usize) -> f64 {
        self.gram.get(k, l)
    }
    fn xty(&self, k: usize) -> f64 {
        self.xty[k]
    }
    fn yty(&self) -> f64 {
        self.yty
    }
    fn subtract_col(&self, k: usize, delta: f64, c: &mut [f64]) {
        axpy(-delta, self.gram.col(k), c);
    }
    fn rank_bound(&self) -> usize {
        self.rank.unwrap_or(self.n)
    }
}

/// The full design regressed on `y`, reusing a shared Gram matrix.
pub struct SharedGramProblem<'a> {
    n: usize,
    gram: &'a Gram,
    xty: Vec<f64>,
    yty: f64,
}

impl<'a> SharedGramProblem<'a> {
    pub fn new(design: &'a PreparedDesign, y: &[f64]) -> Self {
        Self { n: design.n(), gram: design.gram(), xty: design.design().matrix().t_mul_vec(y), yty: dot(y, y) }
    }
}

impl CovarianceSource for SharedGramProblem<'_> {
    fn n(&self) -> usize {
        self.n
    }
    fn dim(&self) -> usize {
        self.gram.dim()
    }
    fn cross(&self, k: usize, l: usize) -> f64 {
        self.gram.get(k, l)
    }
    fn xty(&self, k: usize) -> f64 {
        self.xty[k]
    }
    fn yty(&self) -> f64 {
        self.yty
    }
    fn subtract_col(&self, k: usize, delta: f64, c: &mut [f64]) {
        axpy(-delta, self.gram.col(k), c);
    }
}

/// Column `j` regressed on the remaining columns. Predictor `k` maps to
/// design column `k` for `k < j` and `k + 1` otherwise.
pub struct ColumnProblem<'a> {
    n: usize,
    gram: &'a Gram,
    j: usize,
}

impl<'a> ColumnProblem<'a> {
    pub fn new(design: &'a PreparedDesign, j: usize) -> Self {
        Self { n: design.n(), gram: design.gram(), j }
    }

    fn map(&self, k: usize) -> usize {
        if k < self.j {
            k
        } else {
            k + 1
        }
    }
}

impl CovarianceSource for ColumnProblem<'_> {
    fn n(&self) -> usize {
        self.n
    }
    fn dim(&self) -> usize {
        self.gram.dim() - 1
    }
    fn cross(&self, k: usize, l: usize) -> f64 {
        self.gram.get(self.map(k), self.map(l))
    }
    fn xty(&self, k: usize) -> f64 {
        self.gram.get(self.map(k), self.j)
    }
    fn yty(&self) -> f64 {
        self.gram.get(self.j, self.j)
    }
    fn subtract_col(&self, k: usize, delta: f64, c: &mut [f64]) {
        let g = self.gram.col(self.map(k));
        axpy(-delta, &g[..self.j], &mut c[..self.j]);
        axpy(-delta, &g[self.j + 1..], &mut c[self.j..]);
    }
}

/// Stopping rule and iteration caps for coordinate descent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdOptions {
    /// Largest coefficient update allowed in a converged sweep, in units of
    /// `min(||y||_2 / sqrt(n), lambda)`.
    pub update_tol: f64,
    /// KKT tolerance on `x_k^T r / n`, in the same units.
    pub kkt_tol: f64,
    pub max_sweeps: usize,
    /// Active-set sweeps between two full sweeps.
    pub active_sweeps: usize,
    /// Once two consecutive full sweeps leave the support unchanged, solve
    /// the KKT equations of that sign pattern exactly and stop if the result
    /// is consistent.
    pub polish: bool,
}

impl Default for CdOptions {
    fn default() -> Self {
        Self { update_tol: 1e-8, kkt_tol: 1e-6, max_sweeps: 100_000, active_sweeps: 10, polish: true }
    }
}

/// Outcome of one coordinate-descent solve on a covariance source.
#[derive(Debug, Clone)]
pub struct CdOutcome {
    pub coefficients: Vec<f64>,
    /// `x_k^T r` at the returned coefficients.
    pub correlations: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
}

fn soft(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Soft-threshold `s_t(x) = sgn(x) (|x| - t)_+`.
pub fn soft_threshold(x: f64, t: f64) -> f64 {
    soft(x, t)
}

fn recompute_correlations<S: CovarianceSource>(src: &S, b: &[f64], c: &mut [f64]) {
    for (k, ck) in c.iter_mut().enumerate() {
        *ck = src.xty(k);
    }
    for (l, &bl) in b.iter().enumerate() {
        if bl != 0.0 {
            src.subtract_col(l, bl, c);
        }
    }
}

fn kkt_holds<S: CovarianceSource>(src: &S, b: &[f64], c: &[f64], lambda: f64, tol: f64) -> bool {
    let n = src.n() as f64;
    b.iter().zip(c).enumerate().all(|(k, (&bk, &ck))| {
        if src.col_sq(k) == 0.0 {
            return true;
        }
        let g = ck / n;
        if bk != 0.0 {
            (g - lambda * bk.signum()).abs() <= tol
        } else {
            g.abs() <= lambda + tol
        }
    })
}

/// Minimizes `||y - X b||^2 / (2n) + lambda ||b||_1` by cyclic coordinate
/// descent in ascending index order, starting from `warm`.
pub fn coordinate_descent<S: CovarianceSource>(
    src: &S,
    lambda: f64,
    warm: Option<&[f64]>,
    opts: &CdOptions,
) -> CdOutcome {
    let q = src.dim();
    let n = src.n() as f64;
    let scale = (src.yty() / n).sqrt().max(f64::MIN_POSITIVE);
    // tolerances also shrink with lambda so that the KKT equalities hold to
    // a fixed relative accuracy at the bottom of a path
    let update_tol = opts.update_tol * scale.min(lambda);
    let kkt_tol = (opts.kkt_tol * scale).min(opts.update_tol * 10.0 * lambda);
    let diag: Vec<f64> = (0..q).map(|k| src.col_sq(k) / n).collect();

    let mut b = warm.map_or_else(|| vec![0.0; q], <[f64]>::to_vec);
    let mut c = vec![0.0; q];
    let mut sweeps = 0;
    let mut converged = false;

    // `active` is `(A, G_AA)` with `G_AA` stored row by row; `r` is the
    // position of `k` in `A`
    let update = |k: usize, r: usize, b: &mut [f64], c: &mut [f64], active: Option<(&[usize], &[f64])>| -> f64 {
        let d = diag[k];
        if d == 0.0 {
            return 0.0;
        }
        let old = b[k];
        let new = soft(c[k] / n + d * old, lambda) / d;
        let delta = new - old;
        if delta != 0.0 {
            b[k] = new;
            match active {
                None => src.subtract_col(k, delta, c),
                Some((set, g)) => {
                    let row = &g[r * set.len()..(r + 1) * set.len()];
                    for (&l, &glk) in set.iter().zip(row) {
                        c[l] -= delta * glk;
                    }
                }
            }
        }
        (delta * d.sqrt()).abs()
    };

    while sweeps < opts.max_sweeps {
        recompute_correlations(src, &b, &mut c);
        let mut max_delta = 0.0f64;
        for k in 0..q {
            max_delta = max_delta.max(update(k, 0, &mut b, &mut c, None));
        }
        sweeps += 1;
        if max_delta <= update_tol {
            recompute_correlations(src, &b, &mut c);
            if kkt_holds(src, &b, &c, lambda, kkt_tol) {
                converged = true;
                break;
            }
        }
        let active: Vec<usize> = (0..q).filter(|&k| b[k] != 0.0).collect();
        let g_aa: Vec<f64> = active.iter().flat_map(|&k| active.iter().map(move |&l| src.cross(l, k))).collect();
        for _ in 0..opts.active_sweeps {
            if sweeps >= opts.max_sweeps {
                break;
            }
            let mut max_delta = 0.0f64;
            for (r, &k) in active.iter().enumerate() {
                max_delta = max_delta.max(update(k, r, &mut b, &mut c, Some((&active, &g_aa))));
            }
            sweeps += 1;
            if max_delta <= update_tol {
                break;
            }
        }
        if opts.polish && polish(src, lambda, &mut b, &mut c, kkt_tol) == Polish::Solved {
            converged = true;
            break;
        }
    }
    if !converged {
        recompute_correlations(src, &b, &mut c);
        if opts.polish {
            converged = polish(src, lambda, &mut b, &mut c, kkt_tol) == Polish::Solved;
        }
    }
    CdOutcome { coefficients: b, correlations: c, sweeps, converged }
}

/// A basis of the numerical null space of the PSD matrix `g`, found by
/// Cholesky with diagonal pivoting. Empty when `g` has full numerical rank.
fn null_basis(g: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    let a = g.nrows();
    let mut piv: Vec<usize> = (0..a).collect();
    let mut diag: Vec<f64> = (0..a).map(|i| g[(i, i)]).collect();
    let top = diag.iter().copied().fold(0.0, f64::max);
    let tol = 1e-10 * top;
    let mut cols: Vec<Vec<f64>> = Vec::new();
    let mut rank = a;
    for k in 0..a {
        let q = (k..a).max_by(|&x, &y| diag[piv[x]].total_cmp(&diag[piv[y]])).expect("nonempty");
        if !(diag[piv[q]] > tol) {
            rank = k;
            break;
        }
        piv.swap(k, q);
        let pk = piv[k];
        let lkk = diag[pk].sqrt();
        let mut col = vec![0.0; a];
        col[pk] = lkk;
        for &pi in &piv[k + 1..] {
            let mut v = g[(pi, pk)];
            for prev in &cols {
                v -= prev[pi] * prev[pk];
            }
            col[pi] = v / lkk;
            diag[pi] -= col[pi] * col[pi];
        }
        cols.push(col);
    }
    // G[P, c] = L11 y with y_t = L[c, t], so L11' alpha = y.
    piv[rank..]
        .iter()
        .map(|&c| {
            let mut alpha: Vec<f64> = (0..rank).map(|t| cols[t][c]).collect();
            for i in (0..rank).rev() {
                let mut v = alpha[i];
                for t in i + 1..rank {
                    v -= cols[i][piv[t]] * alpha[t];
                }
                alpha[i] = v / cols[i][piv[i]];
            }
            let mut d = vec![0.0; a];
            d[c] = 1.0;
            for i in 0..rank {
                d[piv[i]] = -alpha[i];
            }
            d
        })
        .collect()
}

/// For each direction `d` of a null-space basis of `X_A`, moves `b` along
/// `d`, oriented so that the objective does not increase, until an active
/// coefficient reaches zero. Returns false when `G_AA` has full numerical
/// rank.
fn drop_along_null_space<S: CovarianceSource>(
    src: &S,
    lambda: f64,
    b: &mut [f64],
    active: &[usize],
    g: nalgebra::DMatrix<f64>,
) -> bool {
    let n = src.n() as f64;
    let mut basis = null_basis(&g);
    let mut dropped = false;
    while let Some(d) = basis.pop() {
        // first-order change of the objective along d
        let mut slope = 0.0;
        for (r, &k) in active.iter().enumerate() {
            if d[r] == 0.0 {
                continue;
            }
            let mut grad = -src.xty(k);
            for &l in active {
                grad += src.cross(k, l) * b[l];
            }
            slope += d[r] * (grad / n + lambda * b[k].signum());
        }
        let orient = if slope <= 0.0 { 1.0 } else { -1.0 };
        let mut step = f64::INFINITY;
        let mut hit = None;
        for (r, &k) in active.iter().enumerate() {
            let dk = orient * d[r];
            if dk != 0.0 && b[k] != 0.0 && dk.signum() != b[k].signum() {
                let t = -b[k] / dk;
                if t < step {
                    step = t;
                    hit = Some(r);
                }
            }
        }
        let Some(hit) = hit else { continue };
        for (r, &k) in active.iter().enumerate() {
            b[k] += step * orient * d[r];
        }
        b[active[hit]] = 0.0;
        dropped = true;
        // keep the remaining directions inside the reduced support
        for v in basis.iter_mut() {
            let f = v[hit] / d[hit];
            if f != 0.0 {
                for (x, y) in v.iter_mut().zip(&d) {
                    *x -= f * y;
                }
                v[hit] = 0.0;
            }
        }
    }
    dropped
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Polish {
    /// The exact solution on the current sign pattern satisfies the KKT conditions.
    Solved,
    /// Moved toward that solution, stopping where the first coefficient
    /// reaches zero.
    Stepped,
    Skipped,
}

/// Feature-sign refinement of the current iterate. The KKT equations of the
/// current sign pattern are solved exactly; when the solution flips a sign,
/// `b` moves along the segment toward it up to the first zero crossing,
/// drops that coefficient and solves again. A support larger than the rank
/// of its columns is first shrunk along null directions. Every move lowers
/// the objective.
fn polish<S: CovarianceSource>(src: &S, lambda: f64, b: &mut [f64], c: &mut [f64], kkt_tol: f64) -> Polish {
    let n = src.n() as f64;
    let mut cur = b.to_vec();
    let mut active: Vec<usize> = (0..cur.len()).filter(|&k| cur[k] != 0.0).collect();
    let mut changed = false;
    for _ in 0..=2 * active.len() {
        if active.is_empty() {
            break;
        }
        let a = active.len();
        let g = nalgebra::DMatrix::from_fn(a, a, |r, s| src.cross(active[r], active[s]));
        let mut chol = None;
        if a <= src.rank_bound() {
            if let Some(f) = g.clone().cholesky() {
                let diag = f.l_dirty().diagonal();
                let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
                if lo * lo > 1e-10 * hi * hi {
                    chol = Some(f);
                }
            }
        }
        let Some(chol) = chol else {
            if !drop_along_null_space(src, lambda, &mut cur, &active, g) {
                break;
            }
            changed = true;
            active.retain(|&k| cur[k] != 0.0);
            continue;
        };
        let rhs = nalgebra::DVector::from_fn(a, |r, _| src.xty(active[r]) - n * lambda * cur[active[r]].signum());
        let sol = chol.solve(&rhs);
        if sol.iter().any(|v| !v.is_finite()) {
            break;
        }
        let mut step = 1.0f64;
        let mut crossing = None;
        for (&k, &v) in active.iter().zip(sol.iter()) {
            if v.signum() != cur[k].signum() || v == 0.0 {
                let t = cur[k] / (cur[k] - v);
                if t < step {
                    step = t;
                    crossing = Some(k);
                }
            }
        }
        changed = true;
        match crossing {
            Some(hit) => {
                for (&k, &v) in active.iter().zip(sol.iter()) {
                    cur[k] += step * (v - cur[k]);
                }
                cur[hit] = 0.0;
                active.retain(|&k| cur[k] != 0.0);
            }
            None => {
                for (&k, &v) in active.iter().zip(sol.iter()) {
                    cur[k] = v;
                }
                let mut trial_c = vec![0.0; c.len()];
                recompute_correlations(src, &cur, &mut trial_c);
                let solved = kkt_holds(src, &cur, &trial_c, lambda, kkt_tol);
                b.copy_from_slice(&cur);
                c.copy_from_slice(&trial_c);
                return if solved { Polish::Solved } else { Polish::Stepped };
            }
        }
    }
    if !changed {
        return Polish::Skipped;
    }
    b.copy_from_slice(&cur);
    recompute_correlations(src, b, c);
    Polish::Stepped
}

/// A Lasso fit of a response on explicit predictors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoSolution {
    pub coefficients: Vec<f64>,
    pub residual: Vec<f64>,
    pub lambda: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Solves the Lasso of `response` on `predictors` at penalty `lambda`.
///
/// Non-convergence within the sweep cap is reported through
/// `converged = false`, never as a panic.
pub fn solve_lasso(
    predictors: &DenseMatrix,
    response: &[f64],
    lambda: f64,
    warm_start: Option<&[f64]>,
) -> Result<LassoSolution> {
    solve_lasso_with(predictors, response, lambda, warm_start, &CdOptions::default())
}

pub fn solve_lasso_with(
    predictors: &DenseMatrix,
    response: &[f64],
    lambda: f64,
    warm_start: Option<&[f64]>,
    opts: &CdOptions,
) -> Result<LassoSolution> {
    use crate::error::Error;
    if !(lambda > 0.0) {
        return Err(Error::Domain(format!("lambda must be positive, got {lambda}")));
    }
    if response.len() != predictors.rows() {
        return Err(Error::Dimension(format!(
            "response has length {}, predictors have {} rows",
            response.len(),
            predictors.rows()
        )));
    }
    if let Some(w) = warm_start {
        if w.len() != predictors.cols() {
            return Err(Error::Dimension("warm start length differs from the number of predictors".into()));
        }
    }
    let problem = DenseProblem::new(predictors, response);
    let out = coordinate_descent(&problem, lambda, warm_start, opts);
    let fitted = predictors.mul_vec(&out.coefficients);
    let residual = response.iter().zip(&fitted).map(|(y, f)| y - f).collect();
    Ok(LassoSolution {
        coefficients: out.coefficients,
        residual,
        lambda,
        iterations: out.sweeps,
        converged: out.converged,
    })
}

/// Largest KKT violations of a Lasso solution, recomputed from scratch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    /// `max |x_k^T r / n - lambda sgn(b_k)|` over nonzero coefficients.
    pub stationarity: f64,
    /// `max (|x_k^T r / n| - lambda)_+` over all coefficients.
    pub bound: f64,
}

pub fn verify_kkt(sol: &LassoSolution, predictors: &DenseMatrix, response: &[f64]) -> KktReport {
    let n = predictors.rows() as f64;
    let fitted = predictors.mul_vec(&sol.coefficients);
    let r: Vec<f64> = response.iter().zip(&fitted).map(|(y, f)| y - f).collect();
    let mut report = KktReport { stationarity: 0.0, bound: 0.0 };
    for (k, &b) in sol.coefficients.iter().enumerate() {
        let g = dot(predictors.col(k), &r) / n;
        if b != 0.0 {
            report.stationarity = report.stationarity.max((g - sol.lambda * b.signum()).abs());
        }
        report.bound = report.bound.max(g.abs() - sol.lambda);
    }
    report.bound = report.bound.max(0.0);
    report
}

/// Points on the grid whose `|x_j^T z|` falls below this multiple of `n`
/// are degenerate.
pub const DEGENERATE_SCORE_FACTOR: f64 = 1e-10;

/// Nodewise Lasso quantities at one penalty level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathPoint {
    pub lambda: f64,
    /// Coefficients on the other columns, in design order with column `j` skipped.
    pub gamma: Vec<f64>,
    pub z: Vec<f64>,
    pub z_norm: f64,
    /// Bias factor `max_{k != j} |x_k^T z| / ||z||`.
    pub eta: f64,
    /// Noise factor `||z|| / |x_j^T z|`.
    pub tau: f64,
    pub degenerate: bool,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoPath {
    pub target_col: usize,
    pub grid: Vec<f64>,
    pub points: Vec<PathPoint>,
}

/// Number of grid points and the ratio between the last and first.
pub const GRID_POINTS: usize = 100;
pub const GRID_MIN_RATIO: f64 = 1e-3;

/// Geometric grid from `lambda_max` down to `ratio * lambda_max`.
pub fn geometric_grid(lambda_max: f64, points: usize, ratio: f64) -> Vec<f64> {
    let top = if lambda_max > 0.0 { lambda_max } else { 1.0 };
    if points == 1 {
        return vec![top];
    }
    (0..points).map(|i| top * ratio.powf(i as f64 / (points - 1) as f64)).collect()
}

/// Smallest penalty with an all-zero solution, `max_k |x_k^T y| / n`.
pub fn lambda_max<S: CovarianceSource>(src: &S) -> f64 {
    (0..src.dim()).map(|k| src.xty(k).abs()).fold(0.0, f64::max) / src.n() as f64
}

/// Walks a decreasing penalty grid for one nodewise regression, warm
/// starting each solve from the previous one.
///
/// `target` is the response vector (column `j`, possibly projected) and
/// `predictor_col(k)` returns predictor `k` as an n-vector.
pub struct PathWalker<'a, S: CovarianceSource> {
    src: S,
    target: &'a [f64],
    predictors: Box<dyn Fn(usize) -> std::borrow::Cow<'a, [f64]> + 'a>,
    grid: Vec<f64>,
    next: usize,
    warm: Vec<f64>,
    opts: CdOptions,
}

impl<'a, S: CovarianceSource> PathWalker<'a, S> {
    pub fn new(
        src: S,
        target: &'a [f64],
        predictors: Box<dyn Fn(usize) -> std::borrow::Cow<'a, [f64]> + 'a>,
        grid: Vec<f64>,
        opts: CdOptions,
    ) -> Self {
        let q = src.dim();
        Self { src, target, predictors, grid, next: 0, warm: vec![0.0; q], opts }
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn source(&self) -> &S {
        &self.src
    }
}

impl<S: CovarianceSource> Iterator for PathWalker<'_, S> {
    type Item = PathPoint;

    fn next(&mut self) -> Option<PathPoint> {
        let lambda = *self.grid.get(self.next)?;
        self.next += 1;
        let out = coordinate_descent(&self.src, lambda, Some(&self.warm), &self.opts);
        let mut z = self.target.to_vec();
        for (k, &g) in out.coefficients.iter().enumerate() {
            if g != 0.0 {
                axpy(-g, &(self.predictors)(k), &mut z);
            }
        }
        let z_norm = norm2(&z);
        let xz = dot(self.target, &z);
        let n = self.src.n() as f64;
        let max_corr = out.correlations.iter().map(|c| c.abs()).fold(0.0, f64::max);
        let degenerate = xz.abs() < DEGENERATE_SCORE_FACTOR * n || z_norm == 0.0;
        let (eta, tau) = if z_norm > 0.0 { (max_corr / z_norm, z_norm / xz.abs()) } else { (f64::INFINITY, f64::INFINITY) };
        self.warm.clone_from(&out.coefficients);
        Some(PathPoint {
            lambda,
            gamma: out.coefficients,
            z,
            z_norm,
            eta,
            tau,
            degenerate,
            converged: out.converged,
        })
    }
}

/// Builds the walker for column `j` of a prepared design on the given grid.
pub fn column_walker<'a>(
    design: &'a PreparedDesign,
    j: usize,
    grid: Vec<f64>,
    opts: CdOptions,
) -> PathWalker<'a, ColumnProblem<'a>> {
    let d = design.design();
    let predictors = Box::new(move |k: usize| std::borrow::Cow::Borrowed(d.col(if k < j { k } else { k + 1 })));
    PathWalker::new(ColumnProblem::new(design, j), d.col(j), predictors, grid, opts)
}

/// The default grid for column `j`: 100 geometric points from
/// `max_{k != j} |x_k^T x_j| / n` down to a thousandth of it.
pub fn default_column_grid(design: &PreparedDesign, j: usize) -> Vec<f64> {
    geometric_grid(lambda_max(&ColumnProblem::new(design, j)), GRID_POINTS, GRID_MIN_RATIO)
}

/// Computes every point of the nodewise Lasso path of column `j`.
pub fn lasso_path_for_column(design: &PreparedDesign, j: usize, grid: &[f64]) -> Result<LassoPath> {
    use crate::error::Error;
    if grid.is_empty() || grid.iter().any(|&l| !(l > 0.0)) || grid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Domain("lambda grid must be positive and strictly decreasing".into()));
    }
    if j >= design.p() || design.p() < 2 {
        return Err(Error::Dimension(format!("column {j} out of range for p = {}", design.p())));
    }
    let points = column_walker(design, j, grid.to_vec(), CdOptions::default()).collect();
    Ok(LassoPath { target_col: j, grid: grid.to_vec(), points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{gaussian_vector, standardize_columns};

    fn design(n: usize, p: usize, seed: u64) -> PreparedDesign {
        let m = DenseMatrix::from_col_major(n, p, gaussian_vector(seed, 0, n * p)).unwrap();
        PreparedDesign::new(standardize_columns(&m).unwrap())
    }

    /// Columns of a scaled Hadamard-like orthogonal design with squared norm n.
    fn orthogonal(n: usize, p: usize) -> DenseMatrix {
        let cols: Vec<Vec<f64>> = (0..p)
            .map(|j| (0..n).map(|i| if ((i >> j) & 1) == 0 { 1.0 } else { -1.0 }).collect())
            .collect();
        DenseMatrix::from_columns(&cols).unwrap()
    }

    #[test]
    fn zero_solution_above_lambda_max() {
        let d = design(20, 5, 1);
        let y = gaussian_vector(2, 0, 20);
        let lmax = d.design().matrix().t_mul_vec(&y).iter().map(|v| v.abs()).fold(0.0, f64::max) / 20.0;
        let sol = solve_lasso(d.design().matrix(), &y, lmax * 1.0001, None).unwrap();
        assert!(sol.coefficients.iter().all(|&b| b == 0.0));
        assert!(sol.converged);
    }

    #[test]
    fn orthogonal_design_is_soft_thresholded() {
        let x = orthogonal(16, 3);
        let y = gaussian_vector(3, 0, 16);
        let sol = solve_lasso(&x, &y, 0.2, None).unwrap();
        for k in 0..3 {
            let expect = soft_threshold(dot(x.col(k), &y) / 16.0, 0.2);
            assert!((sol.coefficients[k] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn kkt_report_flags_violations() {
        let d = design(30, 6, 4);
        let x = d.design().matrix();
        let y = gaussian_vector(5, 0, 30);
        let sol = solve_lasso(x, &y, 0.1, None).unwrap();
        let rep = verify_kkt(&sol, x, &y);
        assert!(rep.stationarity <= 1e-6 && rep.bound <= 1e-6);

        let zero = LassoSolution { coefficients: vec![0.0; 6], residual: y.clone(), lambda: 0.1, iterations: 0, converged: true };
        assert!(verify_kkt(&zero, x, &y).bound > 0.0);

        let k = sol.coefficients.iter().position(|&b| b != 0.0).unwrap();
        let mut bumped = sol.clone();
        bumped.coefficients[k] += 1e-2;
        let rep = verify_kkt(&bumped, x, &y);
        let expected = 1e-2 * dot(x.col(k), x.col(k)) / 30.0;
        assert!(rep.stationarity > expected / 10.0 && rep.stationarity < expected * 10.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let d = design(10, 3, 1);
        assert!(solve_lasso(d.design().matrix(), &[0.0; 10], 0.0, None).is_err());
        assert!(solve_lasso(d.design().matrix(), &[0.0; 9], 0.1, None).is_err());
        assert!(lasso_path_for_column(&d, 0, &[0.1, 0.2]).is_err());
    }

    #[test]
    fn null_model_at_top_of_path() {
        let d = design(25, 8, 6);
        let j = 3;
        let grid = default_column_grid(&d, j);
        let path = lasso_path_for_column(&d, j, &grid[..1]).unwrap();
        let pt = &path.points[0];
        let n = 25.0f64;
        assert!(pt.gamma.iter().all(|&g| g == 0.0));
        assert!((pt.z_norm - n.sqrt()).abs() < 1e-10);
        assert!((pt.tau - 1.0 / n.sqrt()).abs() < 1e-12);
        let max_cross = (0..8).filter(|&k| k != j).map(|k| dot(d.design().col(k), d.design().col(j)).abs()).fold(0.0, f64::max);
        assert!((pt.eta - max_cross / n.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn orthogonal_columns_have_zero_bias_factor() {
        let d = PreparedDesign::new(standardize_columns(&orthogonal(16, 4)).unwrap());
        let grid = default_column_grid(&d, 1);
        let path = lasso_path_for_column(&d, 1, &grid).unwrap();
        for pt in &path.points {
            assert!(pt.eta < 1e-12);
            assert!((pt.tau - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn active_points_satisfy_eta_identity() {
        let d = design(30, 12, 8);
        let grid = default_column_grid(&d, 0);
        let path = lasso_path_for_column(&d, 0, &grid).unwrap();
        for pt in path.points.iter().filter(|p| p.gamma.iter().any(|&g| g != 0.0)) {
            let expect = 30.0 * pt.lambda / pt.z_norm;
            assert!((pt.eta - expect).abs() <= 1e-6 * expect, "{} vs {}", pt.eta, expect);
        }
    }

    #[test]
    fn warm_and_cold_starts_agree() {
        let d = design(20, 10, 12);
        let grid = default_column_grid(&d, 2);
        let path = lasso_path_for_column(&d, 2, &grid).unwrap();
        let src = ColumnProblem::new(&d, 2);
        for idx in [5, 40, 80, 99] {
            let cold = coordinate_descent(&src, grid[idx], None, &CdOptions::default());
            for (a, b) in cold.coefficients.iter().zip(&path.points[idx].gamma) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }
}
