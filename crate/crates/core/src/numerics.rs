//! Dense linear-algebra primitives, column standardization, orthogonal
//! projections, the standard normal distribution and seeded random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Column-major dense matrix of finite reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    /// Builds a matrix from column-major data.
    pub fn from_col_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Dimension("matrix must have at least one row and one column".into()));
        }
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "expected {} entries for a {rows}x{cols} matrix, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: pos % rows, col: pos / rows });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from a list of equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != p) {
            return Err(Error::Dimension(format!("row {bad} has {} entries, expected {p}", rows[bad].len())));
        }
        let mut data = vec![0.0; n * p];
        for (i, row) in rows.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                data[j * n + i] = *v;
            }
        }
        Self::from_col_major(n, p, data)
    }

    /// Builds a matrix from columns of equal length.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let n = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != n) {
            return Err(Error::Dimension("columns have different lengths".into()));
        }
        Self::from_col_major(n, columns.len(), columns.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.rows + i]
    }

    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn as_col_major(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.cols).map(|j| self.get(i, j)).collect()
    }

    /// `X b`
    pub fn mul_vec(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.cols);
        let mut out = vec![0.0; self.rows];
        for (j, &bj) in b.iter().enumerate() {
            if bj != 0.0 {
                axpy(bj, self.col(j), &mut out);
            }
        }
        out
    }

    /// `X^T v`
    pub fn t_mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.rows);
        (0..self.cols).map(|j| dot(self.col(j), v)).collect()
    }

    /// Copies the listed columns, in the given order, into a new matrix.
    pub fn select_columns(&self, idx: &[usize]) -> Result<Self> {
        let data: Vec<f64> = idx.iter().flat_map(|&j| self.col(j).iter().copied()).collect();
        Self::from_col_major(self.rows, idx.len(), data)
    }

    /// Returns a copy with every entry multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| v * c).collect() }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    // four accumulators let the compiler vectorize without reordering per call
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let k = 4 * c;
        acc[0] += a[k] * b[k];
        acc[1] += a[k + 1] * b[k + 1];
        acc[2] += a[k + 2] * b[k + 2];
        acc[3] += a[k + 3] * b[k + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for k in 4 * chunks..a.len() {
        s += a[k] * b[k];
    }
    s
}

/// `y += a * x`
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm1(a: &[f64]) -> f64 {
    a.iter().map(|v| v.abs()).sum()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// An n×p design whose columns all have squared Euclidean norm n.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizedDesign {
    x: DenseMatrix,
    original_scales: Vec<f64>,
}

impl StandardizedDesign {
    pub fn matrix(&self) -> &DenseMatrix {
        &self.x
    }

    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn p(&self) -> usize {
        self.x.cols()
    }

    pub fn col(&self, j: usize) -> &[f64] {
        self.x.col(j)
    }

    /// Pre-standardization column norms divided by sqrt(n).
    pub fn original_scales(&self) -> &[f64] {
        &self.original_scales
    }

    /// SHA-256 over the dimensions and the little-endian bytes of every entry.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.n() as u64).to_le_bytes());
        h.update((self.p() as u64).to_le_bytes());
        for v in self.x.as_col_major() {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Scales every column to squared norm n.
pub fn standardize_columns(m: &DenseMatrix) -> Result<StandardizedDesign> {
    let n = m.rows();
    let sqrt_n = (n as f64).sqrt();
    let mut data = Vec::with_capacity(n * m.cols());
    let mut scales = Vec::with_capacity(m.cols());
    for j in 0..m.cols() {
        let c = m.col(j);
        let norm = norm2(c);
        if norm == 0.0 {
            return Err(Error::ZeroColumn(j));
        }
        let f = sqrt_n / norm;
        data.extend(c.iter().map(|v| v * f));
        scales.push(norm / sqrt_n);
    }
    Ok(StandardizedDesign { x: DenseMatrix::from_col_major(n, m.cols(), data)?, original_scales: scales })
}

/// Subtracts the mean from every column.
pub fn center_columns(m: &DenseMatrix) -> DenseMatrix {
    let n = m.rows();
    let mut data = m.as_col_major().to_vec();
    for col in data.chunks_mut(n) {
        let mean = col.iter().sum::<f64>() / n as f64;
        col.iter_mut().for_each(|v| *v -= mean);
    }
    DenseMatrix { rows: n, cols: m.cols(), data }
}

pub fn center_vector(v: &[f64]) -> Vec<f64> {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| x - mean).collect()
}

/// Householder QR with column pivoting of an n×k block of columns.
///
/// Only the first `rank` reflectors are kept; they span the same space as
/// the pivoted leading columns.
#[derive(Debug, Clone)]
pub struct PivotedQr {
    n: usize,
    reflectors: Vec<Vec<f64>>,
    pivots: Vec<usize>,
}

impl PivotedQr {
    pub fn new(columns: &[&[f64]]) -> Self {
        let k = columns.len();
        let n = columns.first().map_or(0, |c| c.len());
        let mut work: Vec<Vec<f64>> = columns.iter().map(|c| c.to_vec()).collect();
        let mut perm: Vec<usize> = (0..k).collect();
        let max_norm = work.iter().map(|c| norm2(c)).fold(0.0, f64::max);
        let cutoff = 1e-10 * max_norm.max(f64::MIN_POSITIVE);
        let mut reflectors = Vec::new();
        for step in 0..k.min(n) {
            let (best, best_norm) = (step..k)
                .map(|c| (c, norm2(&work[c][step..])))
                .fold((step, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            if best_norm <= cutoff {
                break;
            }
            work.swap(step, best);
            perm.swap(step, best);
            let col = &work[step];
            let alpha = if col[step] >= 0.0 { -best_norm } else { best_norm };
            let mut v = vec![0.0; n];
            v[step] = col[step] - alpha;
            v[step + 1..].copy_from_slice(&col[step + 1..]);
            let vnorm = norm2(&v);
            if vnorm == 0.0 {
                reflectors.push(v);
                continue;
            }
            v.iter_mut().for_each(|x| *x /= vnorm);
            for c in work.iter_mut().skip(step) {
                let s = 2.0 * dot(&v[step..], &c[step..]);
                for i in step..n {
                    c[i] -= s * v[i];
                }
            }
            reflectors.push(v);
        }
        let rank = reflectors.len();
        Self { n, reflectors, pivots: perm[..rank].to_vec() }
    }

    pub fn rank(&self) -> usize {
        self.reflectors.len()
    }

    /// Indices (into the input column list) of the columns spanning the basis.
    pub fn pivots(&self) -> &[usize] {
        &self.pivots
    }

    fn apply(v: &[f64], w: &mut [f64]) {
        let s = 2.0 * dot(v, w);
        if s != 0.0 {
            axpy(-s, v, w);
        }
    }

    /// Orthonormal basis vectors `Q e_i`, one per retained reflector.
    pub fn basis(&self) -> Vec<Vec<f64>> {
        (0..self.rank())
            .map(|i| {
                let mut e = vec![0.0; self.n];
                e[i] = 1.0;
                for h in self.reflectors.iter().rev() {
                    Self::apply(h, &mut e);
                }
                e
            })
            .collect()
    }

    /// `(I - Q Q^T) v`
    pub fn residual(&self, v: &[f64]) -> Vec<f64> {
        if self.reflectors.is_empty() {
            return v.to_vec();
        }
        assert_eq!(v.len(), self.n);
        let mut w = v.to_vec();
        for h in &self.reflectors {
            Self::apply(h, &mut w);
        }
        w[..self.rank()].iter_mut().for_each(|x| *x = 0.0);
        for h in self.reflectors.iter().rev() {
            Self::apply(h, &mut w);
        }
        w
    }
}

/// Removes from `v` its orthogonal projection onto the span of the listed
/// design columns.
pub fn project_residual(v: &[f64], basis_cols: &[usize], design: &StandardizedDesign) -> Vec<f64> {
    if basis_cols.is_empty() {
        return v.to_vec();
    }
    let cols: Vec<&[f64]> = basis_cols.iter().map(|&k| design.col(k)).collect();
    PivotedQr::new(&cols).residual(v)
}

/// Minimum-norm least-squares coefficients of `y` on the given columns.
pub fn least_squares_min_norm(columns: &[&[f64]], y: &[f64]) -> Vec<f64> {
    let k = columns.len();
    if k == 0 {
        return Vec::new();
    }
    let n = y.len();
    let data: Vec<f64> = columns.iter().flat_map(|c| c.iter().copied()).collect();
    let a = nalgebra::DMatrix::from_column_slice(n, k, &data);
    let b = nalgebra::DVector::from_column_slice(y);
    let svd = a.svd(true, true);
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let eps = 1e-10 * smax.max(f64::MIN_POSITIVE) * (n.max(k) as f64).sqrt();
    let sol = svd.solve(&b, eps).expect("both singular-vector sets were computed");
    sol.iter().copied().collect()
}

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn normal_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal upper tail `1 - Phi(x)`.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// Inverse of the standard normal CDF.
///
/// Wichura's AS241 rational approximation followed by one Newton step
/// against the erfc-based CDF.
pub fn normal_quantile(q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Domain(format!("normal quantile needs 0 < q < 1, got {q}")));
    }
    let x = as241(q);
    let step = if q > 0.5 { ((1.0 - q) - normal_sf(x)) / normal_pdf(x) } else { (normal_cdf(x) - q) / normal_pdf(x) };
    let refined = x - step;
    Ok(if refined.is_finite() { refined } else { x })
}

fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &k| acc * x + k)
}

fn as241(p: f64) -> f64 {
    const A: [f64; 8] = [
        3.387_132_872_796_366_608,
        133.141_667_891_784_377_45,
        1_971.590_950_306_551_442_7,
        13_731.693_765_509_461_125,
        45_921.953_931_549_871_457,
        67_265.770_927_008_700_853,
        33_430.575_583_588_128_105,
        2_509.080_928_730_122_672_7,
    ];
    const B: [f64; 8] = [
        1.0,
        42.313_330_701_600_911_252,
        687.187_007_492_057_908_3,
        5_394.196_021_424_751_107_7,
        21_213.794_301_586_595_867,
        39_307.895_800_092_710_61,
        28_729.085_735_721_942_674,
        5_226.495_278_852_854_561,
    ];
    const C: [f64; 8] = [
        1.423_437_110_749_683_577_34,
        4.630_337_846_156_545_295_9,
        5.769_497_221_460_691_405_5,
        3.647_848_324_763_204_605_04,
        1.270_458_252_452_368_382_58,
        0.241_780_725_177_450_611_77,
        0.022_723_844_989_269_184_583_3,
        7.745_450_142_783_414_076_4e-4,
    ];
    const D: [f64; 8] = [
        1.0,
        2.053_191_626_637_758_821_87,
        1.676_384_830_183_803_849_4,
        0.689_767_334_985_100_004_55,
        0.148_103_976_427_480_074_59,
        0.015_198_666_563_616_457_196_6,
        5.475_938_084_995_344_946e-4,
        1.050_750_071_644_416_843_24e-9,
    ];
    const E: [f64; 8] = [
        6.657_904_643_501_103_777_2,
        5.463_784_911_164_114_369_9,
        1.784_826_539_917_291_335_8,
        0.296_560_571_828_504_891_23,
        0.026_532_189_526_576_123_093,
        0.001_242_660_947_388_078_438_6,
        2.711_555_568_743_487_578_15e-5,
        2.010_334_399_292_288_132_65e-7,
    ];
    const F: [f64; 8] = [
        1.0,
        0.599_832_206_555_887_937_69,
        0.136_929_880_922_735_805_31,
        0.014_875_361_290_850_614_852_5,
        7.868_691_311_456_132_591e-4,
        1.846_318_317_510_054_681_8e-5,
        1.421_511_758_316_445_888_7e-7,
        2.044_263_103_389_939_785_64e-15,
    ];
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180_625 - q * q;
        return q * poly(&A, r) / poly(&B, r);
    }
    let r = if q < 0.0 { p } else { 1.0 - p };
    let r = (-r.ln()).sqrt();
    let x = if r <= 5.0 {
        let r = r - 1.6;
        poly(&C, r) / poly(&D, r)
    } else {
        let r = r - 5.0;
        poly(&E, r) / poly(&F, r)
    };
    if q < 0.0 {
        -x
    } else {
        x
    }
}

/// A reproducible stream of random numbers keyed by `(master_seed, stream_id)`.
///
/// Backed by ChaCha20 with the stream id selecting the cipher's stream, so
/// distinct ids give non-overlapping sequences under the same seed.
#[derive(Debug, Clone)]
pub struct RngStream {
    master_seed: u64,
    stream_id: u64,
    rng: ChaCha20Rng,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(master_seed);
        rng.set_stream(stream_id);
        Self { master_seed, stream_id, rng }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn gaussian(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn gaussian_vector(&mut self, len: usize) -> Vec<f64> {
        (0..len).map(|_| self.gaussian()).collect()
    }

    pub fn uniform(&mut self) -> f64 {
        rand::Rng::gen::<f64>(&mut self.rng)
    }

    pub fn index(&mut self, bound: usize) -> usize {
        rand::Rng::gen_range(&mut self.rng, 0..bound)
    }
}

/// `len` i.i.d. standard normal draws from a fresh stream.
pub fn gaussian_vector(master_seed: u64, stream_id: u64, len: usize) -> Vec<f64> {
    RngStream::new(master_seed, stream_id).gaussian_vector(len)
}
