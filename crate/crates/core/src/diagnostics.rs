//! Design regularity diagnostics and simulation-side benchmarks.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lasso::PreparedDesign;
use crate::numerics::{axpy, dot, norm2, PivotedQr, RngStream, StandardizedDesign};
use crate::scaled_lasso::lambda_univ;

/// Largest `|S|` handled by sign enumeration.
pub const MAX_EXACT_SUPPORT: usize = 12;
/// Random cone directions drawn in sampling mode.
pub const SAMPLED_DIRECTIONS: usize = 100_000;
/// Largest subset count enumerated for sparse eigenvalues.
pub const MAX_SUBSETS: u128 = 1_000_000;
/// Random subsets drawn in sampling mode.
pub const SAMPLED_SUBSETS: usize = 10_000;
/// Largest `|S| + m` for sparse eigenvalues.
pub const MAX_BLOCK: usize = 16;

const RELATIVE_GAP: f64 = 1e-6;
const MAX_PG_ITERATIONS: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundMode {
    Exact,
    Sampled,
}

/// Bracket `lower <= kappa^2(xi, S) <= upper`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompatibilityBracket {
    pub lower: f64,
    pub upper: f64,
    pub mode: BoundMode,
}

fn check_support(p: usize, s: &[usize]) -> Result<Vec<usize>> {
    let mut sorted = s.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != s.len() {
        return Err(Error::Domain("support set has repeated indices".into()));
    }
    if let Some(&k) = sorted.iter().find(|&&k| k >= p) {
        return Err(Error::Domain(format!("index {} is out of range for p = {p}", k + 1)));
    }
    Ok(sorted)
}

fn complement(p: usize, s: &[usize]) -> Vec<usize> {
    let mut inside = vec![false; p];
    for &k in s {
        inside[k] = true;
    }
    (0..p).filter(|&k| !inside[k]).collect()
}

/// Euclidean projection onto `{v >= 0, sum v = radius}`.
fn project_simplex(v: &mut [f64], radius: f64) {
    let mut sorted = v.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (i, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let t = (cumulative - radius) / (i + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - theta).max(0.0);
    }
}

/// Euclidean projection onto the l1 ball of the given radius.
fn project_l1_ball(v: &mut [f64], radius: f64) {
    if v.iter().map(|x| x.abs()).sum::<f64>() <= radius {
        return;
    }
    let mut mag: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    project_simplex(&mut mag, radius);
    for (x, m) in v.iter_mut().zip(mag) {
        *x = x.signum() * m;
    }
}

/// Minimizes `||X u||^2` over the sign-restricted slice of the cone. `u` is
/// stored as the `S` block followed by the complement block.
struct ConeProblem<'a> {
    design: &'a StandardizedDesign,
    s: &'a [usize],
    sc: &'a [usize],
    xi: f64,
    lipschitz: f64,
}

impl ConeProblem<'_> {
    fn apply(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.design.n()];
        for (&k, &v) in self.s.iter().chain(self.sc).zip(u) {
            if v != 0.0 {
                axpy(v, self.design.col(k), &mut out);
            }
        }
        out
    }

    fn gradient(&self, xu: &[f64]) -> Vec<f64> {
        self.s.iter().chain(self.sc).map(|&k| 2.0 * dot(self.design.col(k), xu)).collect()
    }

    fn project(&self, signs: &[f64], u: &mut [f64]) {
        let (head, tail) = u.split_at_mut(self.s.len());
        for (x, s) in head.iter_mut().zip(signs) {
            *x *= s;
        }
        project_simplex(head, 1.0);
        for (x, s) in head.iter_mut().zip(signs) {
            *x *= s;
        }
        project_l1_ball(tail, self.xi);
    }

    /// Frank-Wolfe gap at `u`; `f(u) - gap` bounds the minimum from below.
    fn gap(&self, signs: &[f64], u: &[f64], grad: &[f64]) -> f64 {
        let k = self.s.len();
        let linear = dot(grad, u);
        let best_s = (0..k).map(|i| signs[i] * grad[i]).fold(f64::INFINITY, f64::min);
        let best_sc = grad[k..].iter().fold(0.0f64, |m, g| m.max(g.abs()));
        linear - best_s + self.xi * best_sc
    }

    /// Accelerated projected gradient with adaptive restart. Returns the
    /// best objective value found and a certified lower bound.
    fn solve(&self, signs: &[f64]) -> (f64, f64) {
        let k = self.s.len();
        let dim = k + self.sc.len();
        let mut x = vec![0.0; dim];
        for i in 0..k {
            x[i] = signs[i] / k as f64;
        }
        let mut y = x.clone();
        let mut t = 1.0f64;
        let step = 1.0 / self.lipschitz;
        let mut best = f64::INFINITY;
        let mut lower = 0.0f64;
        for iter in 0..MAX_PG_ITERATIONS {
            let xy = self.apply(&y);
            let gy = self.gradient(&xy);
            let mut next: Vec<f64> = y.iter().zip(&gy).map(|(a, g)| a - step * g).collect();
            self.project(signs, &mut next);
            let restart = gy.iter().zip(next.iter().zip(&x)).map(|(g, (a, b))| g * (a - b)).sum::<f64>() > 0.0;
            let t_next = if restart { 1.0 } else { 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt()) };
            let momentum = if restart { 0.0 } else { (t - 1.0) / t_next };
            y = next.iter().zip(&x).map(|(a, b)| a + momentum * (a - b)).collect();
            x = next;
            t = t_next;
            if iter % 10 == 0 {
                let xx = self.apply(&x);
                let f = dot(&xx, &xx);
                let g = self.gradient(&xx);
                best = best.min(f);
                lower = lower.max(f - self.gap(signs, &x, &g));
                let floor = 1e-14 * self.design.n() as f64;
                if best - lower <= RELATIVE_GAP * best + floor {
                    break;
                }
            }
        }
        (best, lower.max(0.0))
    }
}

fn largest_gram_eigenvalue(design: &StandardizedDesign, cols: &[usize]) -> f64 {
    let n = design.n();
    let m = if cols.len() <= n {
        nalgebra::DMatrix::from_fn(cols.len(), cols.len(), |a, b| dot(design.col(cols[a]), design.col(cols[b])))
    } else {
        let mut outer = nalgebra::DMatrix::zeros(n, n);
        for &k in cols {
            let v = nalgebra::DVector::from_column_slice(design.col(k));
            outer += &v * v.transpose();
        }
        outer
    };
    m.symmetric_eigenvalues().iter().copied().fold(0.0, f64::max)
}

/// Compatibility factor `kappa^2(xi, S)`. Uses sign enumeration for
/// `|S| <= 12` and random cone directions (upper bound only) beyond.
pub fn compatibility_factor(design: &StandardizedDesign, s: &[usize], xi: f64, seed: u64) -> Result<CompatibilityBracket> {
    if s.len() > MAX_EXACT_SUPPORT {
        return compatibility_factor_sampled(design, s, xi, SAMPLED_DIRECTIONS, seed);
    }
    let (s, sc) = validate_cone(design, s, xi)?;
    let lipschitz = 2.0 * largest_gram_eigenvalue(design, &(0..design.p()).collect::<Vec<_>>()) * (1.0 + 1e-9);
    let problem = ConeProblem { design, s: &s, sc: &sc, xi, lipschitz };
    let k = s.len();
    // u and -u give the same value, so the first sign is fixed.
    let patterns: Vec<Vec<f64>> = (0..1usize << (k - 1))
        .map(|mask| (0..k).map(|i| if i > 0 && mask >> (i - 1) & 1 == 1 { -1.0 } else { 1.0 }).collect())
        .collect();
    let results: Vec<(f64, f64)> = patterns.par_iter().map(|signs| problem.solve(signs)).collect();
    let best = results.iter().map(|r| r.0).fold(f64::INFINITY, f64::min);
    let certified = results.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    let scale = k as f64 / design.n() as f64;
    let upper = scale * best;
    let lower = (scale * certified).min(upper / (1.0 + 1e-4)).max(0.0);
    Ok(CompatibilityBracket { lower, upper, mode: BoundMode::Exact })
}

fn validate_cone(design: &StandardizedDesign, s: &[usize], xi: f64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(xi >= 1.0) || !xi.is_finite() {
        return Err(Error::Domain(format!("xi must be at least 1, got {xi}")));
    }
    if s.is_empty() {
        return Err(Error::Domain("support set must be nonempty".into()));
    }
    let s = check_support(design.p(), s)?;
    let sc = complement(design.p(), &s);
    Ok((s, sc))
}

/// Upper bound on `kappa^2(xi, S)` from random directions in the cone.
/// The lower end of the bracket is 0.
pub fn compatibility_factor_sampled(
    design: &StandardizedDesign,
    s: &[usize],
    xi: f64,
    directions: usize,
    seed: u64,
) -> Result<CompatibilityBracket> {
    let (s, sc) = validate_cone(design, s, xi)?;
    const CHUNK: usize = 1000;
    let chunks = directions.div_ceil(CHUNK);
    let n = design.n();
    let best = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = RngStream::new(seed, chunk as u64);
            let count = CHUNK.min(directions - chunk * CHUNK);
            let mut best = f64::INFINITY;
            for _ in 0..count {
                let mut xu = vec![0.0; n];
                let head: Vec<f64> = (0..s.len()).map(|_| rng.gaussian()).collect();
                let head_l1: f64 = head.iter().map(|v| v.abs()).sum();
                for (&k, v) in s.iter().zip(&head) {
                    axpy(v / head_l1, design.col(k), &mut xu);
                }
                if !sc.is_empty() {
                    let tail: Vec<f64> = (0..sc.len()).map(|_| rng.gaussian()).collect();
                    let tail_l1: f64 = tail.iter().map(|v| v.abs()).sum();
                    let radius = xi * rng.uniform();
                    for (&k, v) in sc.iter().zip(&tail) {
                        axpy(radius * v / tail_l1, design.col(k), &mut xu);
                    }
                }
                best = best.min(dot(&xu, &xu));
            }
            best
        })
        .reduce(|| f64::INFINITY, f64::min);
    Ok(CompatibilityBracket { lower: 0.0, upper: s.len() as f64 * best / n as f64, mode: BoundMode::Sampled })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseEigenvalues {
    pub phi_minus: f64,
    pub phi_plus: f64,
    pub m: usize,
    pub mode: BoundMode,
    /// Number of subsets evaluated for each of the two quantities.
    pub subsets: usize,
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > 1u128 << 100 {
            return u128::MAX;
        }
    }
    acc
}

fn block_eigen(gram: &crate::lasso::Gram, idx: &[usize], n: f64) -> (f64, f64) {
    let k = idx.len();
    let m = nalgebra::DMatrix::from_fn(k, k, |a, b| gram.get(idx[a], idx[b]) / n);
    let eig = m.symmetric_eigenvalues();
    let lo = eig.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// Calls `f` on every `k`-subset of `pool` whose first element is `pool[first]`.
fn for_each_subset_from(pool: &[usize], k: usize, first: usize, f: &mut impl FnMut(&[usize])) {
    let mut chosen = vec![first];
    fn rec(pool: &[usize], k: usize, start: usize, chosen: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
        if chosen.len() == k {
            let subset: Vec<usize> = chosen.iter().map(|&i| pool[i]).collect();
            f(&subset);
            return;
        }
        let need = k - chosen.len();
        for i in start..=pool.len() - need {
            chosen.push(i);
            rec(pool, k, i + 1, chosen, f);
            chosen.pop();
        }
    }
    rec(pool, k, first + 1, &mut chosen, f);
}

/// Extreme eigenvalues over blocks `base + T`, `T` ranging over `k`-subsets of
/// `pool`. Returns (min of smallest, max of largest, count).
fn extreme_over_subsets(
    gram: &crate::lasso::Gram,
    n: f64,
    base: &[usize],
    pool: &[usize],
    k: usize,
    sample: Option<u64>,
) -> (f64, f64, usize) {
    let eval = |t: &[usize]| {
        let mut idx = base.to_vec();
        idx.extend_from_slice(t);
        block_eigen(gram, &idx, n)
    };
    if k == 0 {
        let (lo, hi) = eval(&[]);
        return (lo, hi, 1);
    }
    if let Some(seed) = sample {
        return (0..SAMPLED_SUBSETS)
            .into_par_iter()
            .map(|i| {
                let mut rng = RngStream::new(seed, i as u64);
                let mut pool = pool.to_vec();
                for r in 0..k {
                    let pick = r + rng.index(pool.len() - r);
                    pool.swap(r, pick);
                }
                let (lo, hi) = eval(&pool[..k]);
                (lo, hi, 1)
            })
            .reduce(|| (f64::INFINITY, f64::NEG_INFINITY, 0), |a, b| (a.0.min(b.0), a.1.max(b.1), a.2 + b.2));
    }
    (0..=pool.len() - k)
        .into_par_iter()
        .map(|first| {
            let mut acc = (f64::INFINITY, f64::NEG_INFINITY, 0usize);
            for_each_subset_from(pool, k, first, &mut |t| {
                let (lo, hi) = eval(t);
                acc = (acc.0.min(lo), acc.1.max(hi), acc.2 + 1);
            });
            acc
        })
        .reduce(|| (f64::INFINITY, f64::NEG_INFINITY, 0), |a, b| (a.0.min(b.0), a.1.max(b.1), a.2 + b.2))
}

/// Sparse eigenvalues. `phi_minus` is the smallest eigenvalue of `X_B'X_B/n`
/// over `B` containing `S` with at most `m` extra columns; `phi_plus` is the
/// largest eigenvalue over `B` disjoint from `S` with `|B| <= m`. By
/// eigenvalue interlacing only blocks of the largest allowed size are
/// visited. With `sample = Some(seed)` oversized problems draw random subsets
/// instead of failing.
pub fn sparse_eigenvalues(design: &PreparedDesign, s: &[usize], m: usize, sample: Option<u64>) -> Result<SparseEigenvalues> {
    let p = design.p();
    let s = check_support(p, s)?;
    let sc = complement(p, &s);
    if m == 0 || sc.is_empty() {
        return Err(Error::Domain("sparse eigenvalues need m >= 1 and S smaller than the full index set".into()));
    }
    let k = m.min(sc.len());
    let count = binomial(sc.len(), k);
    let oversized = s.len() + m > MAX_BLOCK || count > MAX_SUBSETS;
    if oversized && sample.is_none() {
        return Err(Error::Size(format!(
            "|S| + m = {} and {} candidate subsets exceed the enumeration limits ({} and {}); use sampling mode",
            s.len() + m,
            count,
            MAX_BLOCK,
            MAX_SUBSETS
        )));
    }
    let seed = if oversized { sample } else { None };
    let n = design.n() as f64;
    let (phi_minus, _, subsets) = extreme_over_subsets(design.gram(), n, &s, &sc, k, seed);
    let (_, phi_plus, _) = extreme_over_subsets(design.gram(), n, &[], &sc, k, seed);
    let mode = if seed.is_some() { BoundMode::Sampled } else { BoundMode::Exact };
    Ok(SparseEigenvalues { phi_minus, phi_plus, m, mode, subsets })
}

/// Gram matrix with entries below `lambda1` in magnitude set to zero, stored
/// as upper-triangle triplets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdedGram {
    pub p: usize,
    pub lambda1: f64,
    pub entries: Vec<(usize, usize, f64)>,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
}

/// Dense eigensolver up to this dimension, power iteration beyond.
const DENSE_EIGEN_LIMIT: usize = 1000;

impl ThresholdedGram {
    fn mul(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.p];
        for &(j, k, x) in &self.entries {
            out[j] += x * v[k];
            if j != k {
                out[k] += x * v[j];
            }
        }
        out
    }

    /// Largest eigenvalue of `shift * I + sign * A` by power iteration.
    fn power(&self, shift: f64, sign: f64) -> f64 {
        let mut v: Vec<f64> = (0..self.p).map(|i| 1.0 + (i % 7) as f64 * 0.1).collect();
        let mut value = 0.0;
        for _ in 0..20_000 {
            let norm = norm2(&v);
            if norm == 0.0 {
                return 0.0;
            }
            v.iter_mut().for_each(|x| *x /= norm);
            let av = self.mul(&v);
            let w: Vec<f64> = v.iter().zip(&av).map(|(a, b)| shift * a + sign * b).collect();
            let next = dot(&v, &w);
            let done = (next - value).abs() <= 1e-9 * next.abs().max(1.0);
            value = next;
            v = w;
            if done {
                break;
            }
        }
        value
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.p]; self.p];
        for &(j, k, x) in &self.entries {
            out[j][k] = x;
            out[k][j] = x;
        }
        out
    }
}

pub fn thresholded_gram(design: &PreparedDesign, lambda1: f64) -> Result<ThresholdedGram> {
    if !(lambda1 >= 0.0) {
        return Err(Error::Domain(format!("lambda1 must be nonnegative, got {lambda1}")));
    }
    let p = design.p();
    let n = design.n() as f64;
    let gram = design.gram();
    let mut entries = Vec::new();
    for k in 0..p {
        for j in 0..=k {
            let v = gram.get(j, k) / n;
            if v.abs() >= lambda1 {
                entries.push((j, k, v));
            }
        }
    }
    let mut out = ThresholdedGram { p, lambda1, entries, min_eigenvalue: 0.0, max_eigenvalue: 0.0 };
    if p <= DENSE_EIGEN_LIMIT {
        let dense = out.to_dense();
        let m = nalgebra::DMatrix::from_fn(p, p, |a, b| dense[a][b]);
        let eig = m.symmetric_eigenvalues();
        out.min_eigenvalue = eig.iter().copied().fold(f64::INFINITY, f64::min);
        out.max_eigenvalue = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    } else {
        // Gershgorin radius makes both shifted operators positive semidefinite.
        let mut radius = vec![0.0; p];
        for &(j, k, x) in &out.entries {
            radius[j] += x.abs();
            if j != k {
                radius[k] += x.abs();
            }
        }
        let bound = radius.iter().copied().fold(0.0, f64::max);
        out.max_eigenvalue = out.power(bound, 1.0) - bound;
        out.min_eigenvalue = bound - out.power(bound, -1.0);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionCheck {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

/// Sufficient conditions for a compatibility bound of `c_lower / 2` over all
/// supports of size at most `s`, with `c_lower` and `c_upper` the extreme
/// eigenvalues of the thresholded Gram matrix.
pub fn thresholded_gram_conditions(tg: &ThresholdedGram, s: f64, xi: f64) -> Vec<ConditionCheck> {
    let c_lower = tg.min_eigenvalue;
    let c_upper = tg.max_eigenvalue;
    let l1 = tg.lambda1;
    let mut out = vec![ConditionCheck { name: "min_eigenvalue_positive".into(), lhs: c_lower, rhs: 0.0, pass: c_lower > 0.0 }];
    let lhs = s * l1 * (1.0 + xi).powi(2);
    out.push(ConditionCheck { name: "compatibility".into(), lhs, rhs: c_lower / 2.0, pass: c_lower > 0.0 && lhs <= c_lower / 2.0 });
    let k = 2.0 * xi * xi * (c_upper / c_lower + 0.5);
    let lhs = s * l1 * (1.0 + k) + l1;
    out.push(ConditionCheck { name: "sparse_eigenvalue".into(), lhs, rhs: c_lower / 2.0, pass: c_lower > 0.0 && lhs <= c_lower / 2.0 });
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleEstimate {
    pub beta: f64,
    pub sigma: f64,
    pub z_norm: f64,
}

/// Indices `{j-1, j, j+1}`, shifted inward at the two ends.
pub fn oracle_neighbourhood(p: usize, j: usize) -> [usize; 3] {
    let start = j.saturating_sub(1).min(p - 3);
    [start, start + 1, start + 2]
}

/// Least squares for `beta_j` when every coefficient outside the
/// neighbourhood of `j` is known, with the matching noise level.
pub fn oracle_estimate(design: &StandardizedDesign, y: &[f64], beta: &[f64], eps: &[f64], j: usize) -> Result<OracleEstimate> {
    let mut resid = y.to_vec();
    for (k, &b) in beta.iter().enumerate() {
        if b != 0.0 {
            axpy(-b, design.col(k), &mut resid);
        }
    }
    oracle_from_residual(design, &resid, beta, eps, j)
}

/// `oracle_estimate` for every coefficient.
pub fn oracle_estimates(design: &StandardizedDesign, y: &[f64], beta: &[f64], eps: &[f64]) -> Result<Vec<OracleEstimate>> {
    check_oracle_inputs(design, y, beta, eps)?;
    let mut resid = y.to_vec();
    for (k, &b) in beta.iter().enumerate() {
        if b != 0.0 {
            axpy(-b, design.col(k), &mut resid);
        }
    }
    (0..design.p()).map(|j| oracle_from_residual(design, &resid, beta, eps, j)).collect()
}

fn check_oracle_inputs(design: &StandardizedDesign, y: &[f64], beta: &[f64], eps: &[f64]) -> Result<()> {
    let (n, p) = (design.n(), design.p());
    if n <= 3 || p < 3 {
        return Err(Error::Domain(format!("the oracle needs n > 3 and p >= 3, got n = {n}, p = {p}")));
    }
    if y.len() != n || eps.len() != n || beta.len() != p {
        return Err(Error::Dimension("oracle inputs do not match the design".into()));
    }
    Ok(())
}

fn oracle_from_residual(design: &StandardizedDesign, resid: &[f64], beta: &[f64], eps: &[f64], j: usize) -> Result<OracleEstimate> {
    check_oracle_inputs(design, resid, beta, eps)?;
    if j >= design.p() {
        return Err(Error::Domain(format!("index {} is out of range", j + 1)));
    }
    let nb = oracle_neighbourhood(design.p(), j);
    let mut target = resid.to_vec();
    for &k in &nb {
        axpy(beta[k], design.col(k), &mut target);
    }
    let others: Vec<&[f64]> = nb.iter().filter(|&&k| k != j).map(|&k| design.col(k)).collect();
    let z = PivotedQr::new(&others).residual(design.col(j));
    let z_norm = norm2(&z);
    let n = design.n() as f64;
    if z_norm < 1e-10 * n.sqrt() {
        return Err(Error::DegenerateOracle(j));
    }
    let all: Vec<&[f64]> = nb.iter().map(|&k| design.col(k)).collect();
    let sigma = norm2(&PivotedQr::new(&all).residual(eps)) / n.sqrt();
    Ok(OracleEstimate { beta: dot(&z, &target) / (z_norm * z_norm), sigma, z_norm })
}

/// `sum_j min(|beta_j| / (sigma lambda_univ), 1)`
pub fn capped_l1_sparsity(beta: &[f64], sigma: f64, n: usize, p: usize) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
    }
    let level = sigma * lambda_univ(n, p)?;
    Ok(beta.iter().map(|b| (b.abs() / level).min(1.0)).sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityReport {
    /// 1-based support indices.
    pub support: Vec<usize>,
    pub xi: f64,
    pub kappa_sq_lower: f64,
    pub kappa_sq_upper: f64,
    pub kappa_mode: BoundMode,
    pub phi_minus: f64,
    pub phi_plus: f64,
    pub m: usize,
    pub eigen_mode: BoundMode,
    pub thresholded_gram_eigs: (f64, f64),
    pub lambda1: f64,
    pub conditions: Vec<ConditionCheck>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnoseOptions {
    pub support: Vec<usize>,
    pub xi: f64,
    pub m: usize,
    /// Defaults to `sqrt(log p / n)`.
    pub lambda1: Option<f64>,
    /// Sparsity level for the thresholded-Gram conditions; defaults to `|S|`.
    pub sparsity: Option<f64>,
    pub sampling: bool,
    pub seed: u64,
}

pub fn regularity_report(design: &PreparedDesign, opts: &DiagnoseOptions) -> Result<RegularityReport> {
    let d = design.design();
    let kappa = if opts.sampling {
        compatibility_factor_sampled(d, &opts.support, opts.xi, SAMPLED_DIRECTIONS, opts.seed)?
    } else {
        compatibility_factor(d, &opts.support, opts.xi, opts.seed)?
    };
    let eig = sparse_eigenvalues(design, &opts.support, opts.m, opts.sampling.then_some(opts.seed))?;
    let lambda1 = opts.lambda1.unwrap_or_else(|| ((design.p() as f64).ln() / design.n() as f64).sqrt());
    let tg = thresholded_gram(design, lambda1)?;
    let conditions = thresholded_gram_conditions(&tg, opts.sparsity.unwrap_or(opts.support.len() as f64), opts.xi);
    let mut support: Vec<usize> = opts.support.iter().map(|k| k + 1).collect();
    support.sort_unstable();
    Ok(RegularityReport {
        support,
        xi: opts.xi,
        kappa_sq_lower: kappa.lower,
        kappa_sq_upper: kappa.upper,
        kappa_mode: kappa.mode,
        phi_minus: eig.phi_minus,
        phi_plus: eig.phi_plus,
        m: opts.m,
        eigen_mode: eig.mode,
        thresholded_gram_eigs: (tg.min_eigenvalue, tg.max_eigenvalue),
        lambda1,
        conditions,
    })
}
