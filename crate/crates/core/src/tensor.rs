//! Dense row-major `f64` matrices, stable softmax variants, norms, row
//! permutations, and a deterministic named-stream RNG.
//!
//! Everything downstream (experts, the MoE layer, selection, training) is
//! built on these primitives. All arithmetic is 64-bit; storage is row-major
//! (`data[r * cols + c]`).

use crate::error::{Error, Result};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Dense real matrix, row-major storage.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// All-zero matrix. `rows` and `cols` must both be >= 1.
    pub fn zeros(rows: usize, cols: usize) -> Matrix {
        assert!(rows >= 1 && cols >= 1, "matrix dims must be >= 1");
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Build from a row-major data vector.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Matrix> {
        if data.len() != rows * cols {
            return Err(Error::LengthMismatch {
                op: "Matrix::from_vec",
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Build from nested rows; rows must be nonempty and of equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != c {
                return Err(Error::RaggedBatch {
                    expected: (1, c),
                    got: (1, row.len()),
                    item: i,
                });
            }
            data.extend_from_slice(row);
        }
        Matrix::from_vec(r, c, data)
    }

    /// Identity matrix of size `n`.
    pub fn identity(n: usize) -> Matrix {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Row-major backing slice.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    /// Borrow row `r` as a slice.
    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// True when every entry is finite.
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Transposed copy.
    pub fn transposed(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// Entrywise `self + other`.
    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                op: "Matrix::add",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    /// Entrywise in-place `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Matrix, scale: f64) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                op: "Matrix::add_scaled",
                left: self.shape(),
                right: other.shape(),
            });
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
        Ok(())
    }

    /// Copy with every entry multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }
}

/// Standard matrix product `a * b`; shapes must chain.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    // i-k-j loop order: the inner loop walks rows of `b`, which is
    // sequential in row-major storage.
    for i in 0..a.rows {
        let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for k in 0..a.cols {
            let aik = a.data[i * a.cols + k];
            if aik == 0.0 {
                continue;
            }
            let b_row = &b.data[k * b.cols..(k + 1) * b.cols];
            for (o, bv) in out_row.iter_mut().zip(b_row) {
                *o += aik * bv;
            }
        }
    }
    Ok(out)
}

/// Softmax down each column: entry (i, j) becomes
/// `exp(l_ij) / sum_i' exp(l_i'j)`, so every column sums to one.
///
/// Computed with per-column max subtraction so large logits do not overflow.
pub fn softmax_over_rows_per_column(logits: &Matrix) -> Result<Matrix> {
    if !logits.all_finite() {
        return Err(Error::NonFinite {
            op: "softmax_over_rows_per_column",
        });
    }
    let (m, n) = logits.shape();
    let mut out = Matrix::zeros(m, n);
    for j in 0..n {
        let mut max = f64::NEG_INFINITY;
        for i in 0..m {
            max = max.max(logits.get(i, j));
        }
        let mut sum = 0.0;
        for i in 0..m {
            let e = (logits.get(i, j) - max).exp();
            out.set(i, j, e);
            sum += e;
        }
        for i in 0..m {
            out.set(i, j, out.get(i, j) / sum);
        }
    }
    Ok(out)
}

/// Softmax along each row: entry (i, j) becomes
/// `exp(l_ij) / sum_j' exp(l_ij')`, so every row sums to one.
pub fn softmax_over_columns_per_row(logits: &Matrix) -> Result<Matrix> {
    if !logits.all_finite() {
        return Err(Error::NonFinite {
            op: "softmax_over_columns_per_row",
        });
    }
    let (m, n) = logits.shape();
    let mut out = Matrix::zeros(m, n);
    for i in 0..m {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let out_row = out.row_mut(i);
        let mut sum = 0.0;
        for (o, l) in out_row.iter_mut().zip(row) {
            *o = (l - max).exp();
            sum += *o;
        }
        for o in out_row.iter_mut() {
            *o /= sum;
        }
    }
    Ok(out)
}

/// Square root of the sum of squared entries.
pub fn frobenius_norm(x: &Matrix) -> f64 {
    x.data().iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Reorder rows: output row `i` is input row `perm[i]`.
///
/// `perm` must be a bijection on `0..rows`.
pub fn permute_rows(x: &Matrix, perm: &[usize]) -> Result<Matrix> {
    let rows = x.rows();
    if perm.len() != rows {
        return Err(Error::InvalidPermutation {
            rows,
            detail: format!("length {} != row count", perm.len()),
        });
    }
    let mut seen = vec![false; rows];
    for &p in perm {
        if p >= rows {
            return Err(Error::InvalidPermutation {
                rows,
                detail: format!("index {p} out of range"),
            });
        }
        if seen[p] {
            return Err(Error::InvalidPermutation {
                rows,
                detail: format!("index {p} repeated"),
            });
        }
        seen[p] = true;
    }
    let mut out = Matrix::zeros(rows, x.cols());
    for (i, &p) in perm.iter().enumerate() {
        out.row_mut(i).copy_from_slice(x.row(p));
    }
    Ok(out)
}

/// Inverse of a row permutation, so that
/// `permute_rows(permute_rows(x, p), invert_permutation(p)) == x`.
pub fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a, used to map stream names to ChaCha stream ids. Stable across
/// platforms and Rust versions, unlike the std hasher.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Deterministic random stream addressed by `(seed, stream_name)`.
///
/// Identical `(seed, name)` pairs replay identical draw sequences; distinct
/// names select distinct counter streams of the underlying ChaCha generator,
/// so per-purpose streams ("init", "data", "shuffle", ...) stay independent
/// no matter how many draws each one makes.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    name: String,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_name: &str) -> RngStream {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(fnv1a(stream_name.as_bytes()));
        RngStream {
            seed,
            name: stream_name.to_string(),
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_name(&self) -> &str {
        &self.name
    }

    /// Derive a child stream; equivalent to `new(seed, "parent/label")`.
    pub fn fork(&self, label: &str) -> RngStream {
        RngStream::new(self.seed, &format!("{}/{}", self.name, label))
    }

    /// One draw from N(mean, std^2).
    pub fn normal(&mut self, mean: f64, std: f64) -> Result<f64> {
        if std < 0.0 {
            return Err(Error::NegativeStd { std });
        }
        let dist = Normal::new(mean, std).map_err(|_| Error::NegativeStd { std })?;
        Ok(dist.sample(&mut self.rng))
    }
}

// Lets rand's samplers (index sampling, shuffles) draw from a stream directly.
impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.rng.try_fill_bytes(dest)
    }
}

/// Matrix of i.i.d. N(mean, std^2) entries drawn from `stream` in row-major order.
pub fn sample_gaussian(
    stream: &mut RngStream,
    rows: usize,
    cols: usize,
    mean: f64,
    std: f64,
) -> Result<Matrix> {
    if std < 0.0 {
        return Err(Error::NegativeStd { std });
    }
    let dist = Normal::new(mean, std).map_err(|_| Error::NegativeStd { std })?;
    let data = (0..rows * cols).map(|_| dist.sample(stream)).collect();
    Matrix::from_vec(rows, cols, data)
}
