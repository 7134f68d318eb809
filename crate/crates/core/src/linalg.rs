//! Dense row-major `f64` matrices, complex scalars and the seeded Gaussian RNG.
//!
//! Every inner product sums left to right over the shared index so results
//! are bit-reproducible for a given input.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::ops::{Index, IndexMut};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Complex eigenvalue type.
pub type ComplexScalar = num_complex::Complex64;

/// Dense real matrix stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from row-major data. Rejects wrong lengths and
    /// non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Matrix::from_vec",
                format!("{} values for {rows}x{cols}", data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Matrix::from_vec"));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from a slice of equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::shape(
                    "Matrix::from_rows",
                    format!("row {i} has {} entries, expected {cols}", r.len()),
                ));
            }
            data.extend_from_slice(r);
        }
        Matrix::from_vec(rows.len(), cols, data)
    }

    pub fn from_diag(d: &[f64]) -> Self {
        let n = d.len();
        let mut m = Matrix::zeros(n, n);
        for (i, &v) in d.iter().enumerate() {
            m.data[i * n + i] = v;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access to the raw storage, used by optimizers and gradient
    /// accumulation.
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    /// Matrix product with left-to-right summation over the shared index.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::shape(
                "matmul",
                format!(
                    "{}x{} times {}x{}",
                    self.rows, self.cols, other.rows, other.cols
                ),
            ));
        }
        let (n, k, p) = (self.rows, self.cols, other.cols);
        let mut out = Matrix::zeros(n, p);
        for i in 0..n {
            let a_row = self.row(i);
            for j in 0..p {
                let mut acc = 0.0;
                for (l, &a) in a_row.iter().enumerate() {
                    acc += a * other.data[l * p + j];
                }
                out.data[i * p + j] = acc;
            }
        }
        debug_assert_eq!(k, other.rows);
        Ok(out)
    }

    /// `self · v`.
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        self.matvec_into(v, &mut out);
        out
    }

    /// `out = self · v`.
    pub fn matvec_into(&self, v: &[f64], out: &mut [f64]) {
        assert_eq!(v.len(), self.cols, "matvec: vector length");
        assert_eq!(out.len(), self.rows, "matvec: output length");
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(self.row(i), v);
        }
    }

    /// `out += selfᵀ · v`.
    pub fn matvec_t_add(&self, v: &[f64], out: &mut [f64]) {
        assert_eq!(v.len(), self.rows, "matvec_t: vector length");
        assert_eq!(out.len(), self.cols, "matvec_t: output length");
        for (i, &vi) in v.iter().enumerate() {
            if vi == 0.0 {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * vi;
            }
        }
    }

    /// `self += alpha · u vᵀ`.
    pub fn add_outer(&mut self, alpha: f64, u: &[f64], v: &[f64]) {
        assert_eq!(u.len(), self.rows);
        assert_eq!(v.len(), self.cols);
        let cols = self.cols;
        for (i, &ui) in u.iter().enumerate() {
            let s = alpha * ui;
            if s == 0.0 {
                continue;
            }
            for (d, &vj) in self.data[i * cols..(i + 1) * cols].iter_mut().zip(v) {
                *d += s * vj;
            }
        }
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    fn zip_with(&self, other: &Matrix, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::shape(
                op,
                format!(
                    "{}x{} vs {}x{}",
                    self.rows, self.cols, other.rows, other.cols
                ),
            ));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Scales row `i` by `d[i]`, i.e. returns `diag(d) · self`.
    pub fn scale_rows(&self, d: &[f64]) -> Matrix {
        assert_eq!(d.len(), self.rows);
        let mut out = self.clone();
        for (i, &s) in d.iter().enumerate() {
            for v in out.row_mut(i) {
                *v *= s;
            }
        }
        out
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols))
            .map(|i| self.data[i * self.cols + i])
            .sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Writes plain CSV: one row per line, 17 significant digits, no header.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        for i in 0..self.rows {
            let line = self
                .row(i)
                .iter()
                .map(|&v| fmt_f64(v))
                .collect::<Vec<_>>()
                .join(",");
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("CSV output is ASCII")
    }

    /// Parses CSV written by [`Matrix::write_csv`]. Blank lines are skipped.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Matrix> {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|f| {
                    f.trim().parse::<f64>().map_err(|e| {
                        Error::Format(format!("line {}: {e}: {f:?}", lineno + 1))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Matrix::from_rows(&rows)
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        assert!(i < self.rows && j < self.cols, "index ({i},{j}) out of bounds");
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        assert!(i < self.rows && j < self.cols, "index ({i},{j}) out of bounds");
        &mut self.data[i * self.cols + j]
    }
}

/// Left-to-right inner product.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

pub fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Formats a float with 17 significant digits (round-trip exact).
pub fn fmt_f64(v: f64) -> String {
    let mut s = String::new();
    if v == 0.0 {
        // keep the sign of negative zero out of the output
        s.push('0');
    } else if v.is_finite() && (1e-5..1e17).contains(&v.abs()) {
        // plain notation, trimmed to 17 significant digits
        let digits_before = v.abs().log10().floor() as i32 + 1;
        let decimals = (17 - digits_before).max(0) as usize;
        write!(s, "{v:.decimals$}").unwrap();
        if s.contains('.') {
            while s.ends_with('0') {
                s.pop();
            }
            if s.ends_with('.') {
                s.pop();
            }
        }
    } else {
        write!(s, "{v:.16e}").unwrap();
    }
    s
}

/// Deterministic random stream: ChaCha8 keyed by a 64-bit seed, with
/// Gaussian variates from the ziggurat sampler of `rand_distr`.
#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream for sub-task `index` of `seed`.
    pub fn substream(seed: u64, index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index.wrapping_add(1));
        SeededRng { seed, inner: rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        mean + std * self.standard_normal()
    }

    /// Uniform index in `[0, n)`.
    pub fn index(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn coin(&mut self) -> bool {
        self.inner.random::<bool>()
    }
}

/// Matrix with i.i.d. `N(mean, std²)` entries, filled row-major.
pub fn seeded_gaussian(rows: usize, cols: usize, mean: f64, std: f64, rng: &mut SeededRng) -> Matrix {
    assert!(std >= 0.0, "standard deviation must be non-negative");
    let data = (0..rows * cols).map(|_| rng.normal(mean, std)).collect();
    Matrix { rows, cols, data }
}

/// Householder QR of a square matrix, returning the orthogonal factor.
pub fn orthogonal_factor(a: &Matrix) -> Matrix {
    assert!(a.is_square());
    let n = a.rows;
    let mut r = a.clone();
    let mut q = Matrix::identity(n);
    for k in 0..n.saturating_sub(1) {
        let x: Vec<f64> = (k..n).map(|i| r[(i, k)]).collect();
        let alpha = -x[0].signum() * norm2(&x);
        if alpha == 0.0 {
            continue;
        }
        let mut v = x;
        v[0] -= alpha;
        let vn = norm2(&v);
        if vn == 0.0 {
            continue;
        }
        v.iter_mut().for_each(|e| *e /= vn);
        // R <- (I - 2vvᵀ) R
        for j in 0..n {
            let s: f64 = (k..n).map(|i| v[i - k] * r[(i, j)]).sum();
            for i in k..n {
                r[(i, j)] -= 2.0 * v[i - k] * s;
            }
        }
        // Q <- Q (I - 2vvᵀ)
        for i in 0..n {
            let s: f64 = (k..n).map(|j| q[(i, j)] * v[j - k]).sum();
            for j in k..n {
                q[(i, j)] -= 2.0 * s * v[j - k];
            }
        }
    }
    q
}
