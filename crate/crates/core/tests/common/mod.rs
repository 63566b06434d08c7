//! Independent reference computations shared by the integration tests.
//! Nothing here calls the solvers under test.

#![allow(dead_code)]

use ldpe_core::numerics::{standardize_columns, DenseMatrix, RngStream, StandardizedDesign};

pub fn gaussian_matrix(rng: &mut RngStream, n: usize, p: usize) -> DenseMatrix {
    let cols: Vec<Vec<f64>> = (0..p).map(|_| rng.gaussian_vector(n)).collect();
    DenseMatrix::from_columns(&cols).unwrap()
}

pub fn standardized(rng: &mut RngStream, n: usize, p: usize) -> StandardizedDesign {
    standardize_columns(&gaussian_matrix(rng, n, p)).unwrap()
}

/// Columns sharing a common factor, so neighbours are correlated by about `rho`.
pub fn correlated(rng: &mut RngStream, n: usize, p: usize, rho: f64) -> StandardizedDesign {
    let common = rng.gaussian_vector(n);
    let cols: Vec<Vec<f64>> = (0..p)
        .map(|_| {
            let e = rng.gaussian_vector(n);
            common.iter().zip(&e).map(|(c, x)| rho.sqrt() * c + (1.0 - rho).sqrt() * x).collect()
        })
        .collect();
    standardize_columns(&DenseMatrix::from_columns(&cols).unwrap()).unwrap()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Gaussian elimination with partial pivoting; `None` when singular.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let k = b.len();
    let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    for c in 0..k {
        let piv = (c..k).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[piv][c].abs() < 1e-12 * scale {
            return None;
        }
        a.swap(c, piv);
        b.swap(c, piv);
        for r in c + 1..k {
            let f = a[r][c] / a[c][c];
            for cc in c..k {
                a[r][cc] -= f * a[c][cc];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; k];
    for c in (0..k).rev() {
        let s: f64 = (c + 1..k).map(|cc| a[c][cc] * x[cc]).sum();
        x[c] = (b[c] - s) / a[c][c];
    }
    Some(x)
}

fn subsets(q: usize) -> impl Iterator<Item = Vec<usize>> {
    (0u32..1 << q).map(move |mask| (0..q).filter(|&k| mask >> k & 1 == 1).collect())
}

fn sign_patterns(k: usize) -> impl Iterator<Item = Vec<f64>> {
    (0u32..1 << k).map(move |mask| (0..k).map(|i| if mask >> i & 1 == 1 { -1.0 } else { 1.0 }).collect())
}

pub fn lasso_objective(x: &DenseMatrix, y: &[f64], b: &[f64], lambda: f64) -> f64 {
    let fit = x.mul_vec(b);
    let rss: f64 = y.iter().zip(&fit).map(|(a, f)| (a - f) * (a - f)).sum();
    rss / (2.0 * x.rows() as f64) + lambda * b.iter().map(|v| v.abs()).sum::<f64>()
}

/// Lasso minimizer of `||y - Xb||^2 / (2n) + lambda ||b||_1` by trying every
/// support and sign pattern: on a fixed pattern the stationarity equations
/// are linear, and a candidate counts only when its signs agree.
pub fn brute_force_lasso(x: &DenseMatrix, y: &[f64], lambda: f64) -> Vec<f64> {
    let (n, q) = (x.rows() as f64, x.cols());
    let mut best = vec![0.0; q];
    let mut best_obj = lasso_objective(x, y, &best, lambda);
    for support in subsets(q).filter(|s| !s.is_empty()) {
        let g: Vec<Vec<f64>> = support.iter().map(|&a| support.iter().map(|&b| dot(x.col(a), x.col(b))).collect()).collect();
        for signs in sign_patterns(support.len()) {
            let rhs: Vec<f64> = support.iter().zip(&signs).map(|(&a, s)| dot(x.col(a), y) - n * lambda * s).collect();
            let Some(sol) = solve(g.clone(), rhs) else { continue };
            if sol.iter().zip(&signs).any(|(v, s)| v * s <= 0.0) {
                continue;
            }
            let mut b = vec![0.0; q];
            for (&a, v) in support.iter().zip(&sol) {
                b[a] = *v;
            }
            let obj = lasso_objective(x, y, &b, lambda);
            if obj < best_obj {
                best_obj = obj;
                best = b;
            }
        }
    }
    best
}

/// Exact `kappa^2(xi, S) = min |S| u'(X'X/n)u` over `||u_S||_1 = 1`,
/// `||u_{S^c}||_1 <= xi`, by enumerating faces of each sign-restricted
/// feasible set. On the affine hull of a face the convex quadratic has a
/// unique minimizer from a linear KKT system; the optimum is the smallest
/// such minimizer that lies in its closed face.
pub fn compatibility_by_faces(x: &StandardizedDesign, s: &[usize], xi: f64) -> f64 {
    let (n, p) = (x.n() as f64, x.p());
    let sc: Vec<usize> = (0..p).filter(|k| !s.contains(k)).collect();
    let sigma = |a: usize, b: usize| dot(x.col(a), x.col(b)) / n;
    let mut best = f64::INFINITY;

    // (free coordinates, equality rows as coefficient maps, right-hand sides)
    let mut evaluate = |free: &[usize], rows: &[Vec<(usize, f64)>], rhs: &[f64], check: &dyn Fn(&[f64]) -> bool| {
        let k = free.len();
        let m = rows.len();
        let mut a = vec![vec![0.0; k + m]; k + m];
        let mut b = vec![0.0; k + m];
        for i in 0..k {
            for j in 0..k {
                a[i][j] = 2.0 * sigma(free[i], free[j]);
            }
        }
        for (r, row) in rows.iter().enumerate() {
            for &(coord, coef) in row {
                let i = free.iter().position(|&f| f == coord).unwrap();
                a[k + r][i] = coef;
                a[i][k + r] = coef;
            }
            b[k + r] = rhs[r];
        }
        let Some(sol) = solve(a, b) else { return };
        let mut u = vec![0.0; p];
        for (i, &f) in free.iter().enumerate() {
            u[f] = sol[i];
        }
        if !check(&u) {
            return;
        }
        let mut q = 0.0;
        for i in 0..p {
            for j in 0..p {
                q += u[i] * u[j] * sigma(i, j);
            }
        }
        best = best.min(s.len() as f64 * q);
    };

    for t in subsets(s.len()).filter(|t| !t.is_empty()) {
        let t: Vec<usize> = t.iter().map(|&i| s[i]).collect();
        for signs in sign_patterns(t.len()) {
            let simplex_row: Vec<(usize, f64)> = t.iter().copied().zip(signs.iter().copied()).collect();
            let in_simplex = |u: &[f64]| simplex_row.iter().all(|&(c, sg)| sg * u[c] >= -1e-12);
            // interior of the l1 ball: every off-support coordinate free
            let free: Vec<usize> = t.iter().chain(&sc).copied().collect();
            let check = |u: &[f64]| in_simplex(u) && sc.iter().map(|&c| u[c].abs()).sum::<f64>() <= xi * (1.0 + 1e-12);
            evaluate(&free, &[simplex_row.clone()], &[1.0], &check);
            // a face of the l1 sphere
            for r in subsets(sc.len()).filter(|r| !r.is_empty()) {
                let r: Vec<usize> = r.iter().map(|&i| sc[i]).collect();
                for tau in sign_patterns(r.len()) {
                    let ball_row: Vec<(usize, f64)> = r.iter().copied().zip(tau.iter().copied()).collect();
                    let free: Vec<usize> = t.iter().chain(&r).copied().collect();
                    let signs_r = ball_row.clone();
                    let check = |u: &[f64]| in_simplex(u) && signs_r.iter().all(|&(c, sg)| sg * u[c] >= -1e-12);
                    evaluate(&free, &[simplex_row.clone(), ball_row], &[1.0, xi], &check);
                }
            }
        }
    }
    best
}

/// All eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
pub fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let k = a.len();
    for _ in 0..100 {
        let off: f64 = (0..k).flat_map(|i| (0..k).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-30 {
            break;
        }
        for pi in 0..k {
            for qi in pi + 1..k {
                if a[pi][qi].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[qi][qi] - a[pi][pi]) / (2.0 * a[pi][qi]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for r in 0..k {
                    let (arp, arq) = (a[r][pi], a[r][qi]);
                    a[r][pi] = c * arp - s * arq;
                    a[r][qi] = s * arp + c * arq;
                }
                for r in 0..k {
                    let (apr, aqr) = (a[pi][r], a[qi][r]);
                    a[pi][r] = c * apr - s * aqr;
                    a[qi][r] = s * apr + c * aqr;
                }
            }
        }
    }
    (0..k).map(|i| a[i][i]).collect()
}

/// `(phi_minus, phi_plus)` over every block size up to `m`.
pub fn sparse_eigen_by_enumeration(x: &StandardizedDesign, s: &[usize], m: usize) -> (f64, f64) {
    let (n, p) = (x.n() as f64, x.p());
    let sc: Vec<usize> = (0..p).filter(|k| !s.contains(k)).collect();
    let block = |idx: &[usize]| {
        let a = idx.iter().map(|&i| idx.iter().map(|&j| dot(x.col(i), x.col(j)) / n).collect()).collect();
        jacobi_eigenvalues(a)
    };
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for b in subsets(sc.len()).filter(|b| b.len() <= m) {
        let b: Vec<usize> = b.iter().map(|&i| sc[i]).collect();
        let with_s: Vec<usize> = s.iter().chain(&b).copied().collect();
        if !with_s.is_empty() {
            lo = lo.min(block(&with_s).into_iter().fold(f64::INFINITY, f64::min));
        }
        if !b.is_empty() {
            hi = hi.max(block(&b).into_iter().fold(f64::NEG_INFINITY, f64::max));
        }
    }
    (lo, hi)
}
