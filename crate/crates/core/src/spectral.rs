//! Antisymmetric parametrization and eigenvalue analysis.
//!
//! The eigensolver is the classical dense pipeline for general real
//! matrices: diagonal balancing, Householder reduction to upper Hessenberg
//! form, then Francis double-shift QR with 1×1 / 2×2 deflation.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::linalg::{ComplexScalar, Matrix};

/// Relative size below which a subdiagonal entry is treated as zero.
pub const DEFLATION_TOL: f64 = 1e-12;

/// Strict upper triangle of `W`, standing for the antisymmetric `W − Wᵀ`.
///
/// Entries are stored row-major: `(0,1), (0,2), …, (0,n−1), (1,2), …`.
#[derive(Clone, Debug, PartialEq)]
pub struct AntisymmetricParam {
    n: usize,
    upper: Vec<f64>,
}

impl AntisymmetricParam {
    pub fn new(n: usize, upper: Vec<f64>) -> Result<Self> {
        if upper.len() != Self::len_for(n) {
            return Err(Error::shape(
                "AntisymmetricParam::new",
                format!("{} entries for n={n}, expected {}", upper.len(), Self::len_for(n)),
            ));
        }
        if upper.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("AntisymmetricParam::new"));
        }
        Ok(AntisymmetricParam { n, upper })
    }

    pub fn zeros(n: usize) -> Self {
        AntisymmetricParam {
            n,
            upper: vec![0.0; Self::len_for(n)],
        }
    }

    /// Number of free parameters, `n(n−1)/2`.
    pub fn len_for(n: usize) -> usize {
        n * n.saturating_sub(1) / 2
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn upper_mut(&mut self) -> &mut [f64] {
        &mut self.upper
    }

    /// Storage offset of entry `(i, j)`, `i < j`.
    pub fn offset(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < j && j < self.n);
        i * self.n - i * (i + 1) / 2 + (j - i - 1)
    }

    /// `U − Uᵀ`, with a zero diagonal.
    pub fn expand(&self) -> Matrix {
        let n = self.n;
        let mut m = Matrix::zeros(n, n);
        let mut k = 0;
        for i in 0..n {
            for j in i + 1..n {
                let v = self.upper[k];
                m[(i, j)] = v;
                m[(j, i)] = -v;
                k += 1;
            }
        }
        m
    }

    /// Pulls a gradient with respect to the dense `W − Wᵀ` back onto the
    /// stored entries: `g[(i,j)] = G[i,j] − G[j,i]`.
    pub fn pull_back(&self, dense_grad: &Matrix, out: &mut [f64]) {
        assert_eq!(out.len(), self.upper.len());
        let n = self.n;
        let mut k = 0;
        for i in 0..n {
            for j in i + 1..n {
                out[k] += dense_grad[(i, j)] - dense_grad[(j, i)];
                k += 1;
            }
        }
    }
}

/// Free-function form of [`AntisymmetricParam::expand`].
pub fn expand_antisymmetric(p: &AntisymmetricParam) -> Matrix {
    p.expand()
}

/// Eigenvalues of a real matrix in canonical order.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSpectrum {
    values: Vec<ComplexScalar>,
}

impl ComplexSpectrum {
    /// Sorts by modulus, then real part, then imaginary part, all descending.
    pub fn new(mut values: Vec<ComplexScalar>) -> Self {
        values.sort_by(canonical_order);
        ComplexSpectrum { values }
    }

    pub fn values(&self) -> &[ComplexScalar] {
        &self.values
    }

    pub fn source_dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max_modulus(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.norm()))
    }

    pub fn max_abs_re(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.re.abs()))
    }

    pub fn max_re(&self) -> Option<f64> {
        self.values.iter().map(|v| v.re).reduce(f64::max)
    }

    /// Multiplies every eigenvalue by `s` (spectrum of `s·M`).
    pub fn scaled(&self, s: f64) -> ComplexSpectrum {
        ComplexSpectrum::new(self.values.iter().map(|v| v * s).collect())
    }
}

fn canonical_order(a: &ComplexScalar, b: &ComplexScalar) -> Ordering {
    b.norm()
        .total_cmp(&a.norm())
        .then(b.re.total_cmp(&a.re))
        .then(b.im.total_cmp(&a.im))
}

/// Mean and population standard deviation of eigenvalue moduli.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectrumStats {
    pub mean_modulus: f64,
    pub std_modulus: f64,
}

pub fn spectral_stats(s: &ComplexSpectrum) -> Result<SpectrumStats> {
    if s.is_empty() {
        return Err(Error::Empty("spectrum"));
    }
    let n = s.values.len() as f64;
    let moduli: Vec<f64> = s.values.iter().map(|v| v.norm()).collect();
    let mean = moduli.iter().sum::<f64>() / n;
    let var = moduli.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / n;
    Ok(SpectrumStats {
        mean_modulus: mean,
        std_modulus: var.sqrt(),
    })
}

/// Eigenvalues of a square real matrix.
///
/// Fails with [`Error::NoConvergence`] after `100·n` QR sweeps; the error
/// carries the eigenvalues found so far, with unconverged positions filled
/// from the current diagonal.
pub fn eigenvalues(m: &Matrix) -> Result<ComplexSpectrum> {
    if !m.is_square() {
        return Err(Error::NotSquare {
            rows: m.rows(),
            cols: m.cols(),
        });
    }
    if !m.is_finite() {
        return Err(Error::NonFinite("eigenvalues input"));
    }
    let n = m.rows();
    let mut a: Vec<Vec<f64>> = (0..n).map(|i| m.row(i).to_vec()).collect();
    balance(&mut a);
    hessenberg(&mut a);
    let (values, converged, sweeps) = francis_qr(&mut a);
    let spectrum = ComplexSpectrum::new(values);
    if converged {
        Ok(spectrum)
    } else {
        Err(Error::NoConvergence {
            sweeps,
            partial: Box::new(spectrum),
        })
    }
}

/// Similarity scaling by powers of two so row and column norms are comparable.
fn balance(a: &mut [Vec<f64>]) {
    const RADIX: f64 = 2.0;
    let n = a.len();
    let sqrdx = RADIX * RADIX;
    let mut done = false;
    while !done {
        done = true;
        for i in 0..n {
            let mut r = 0.0;
            let mut c = 0.0;
            for j in 0..n {
                if j != i {
                    c += a[j][i].abs();
                    r += a[i][j].abs();
                }
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let s = c + r;
            let mut f = 1.0;
            let mut g = r / RADIX;
            while c < g {
                f *= RADIX;
                c *= sqrdx;
            }
            g = r * RADIX;
            while c > g {
                f /= RADIX;
                c /= sqrdx;
            }
            if (c + r) / f < 0.95 * s {
                done = false;
                let inv = 1.0 / f;
                for v in a[i].iter_mut() {
                    *v *= inv;
                }
                for row in a.iter_mut() {
                    row[i] *= f;
                }
            }
        }
    }
}

/// Householder reduction to upper Hessenberg form, in place.
fn hessenberg(a: &mut [Vec<f64>]) {
    let n = a.len();
    if n < 3 {
        return;
    }
    let mut v = vec![0.0; n];
    for k in 0..n - 2 {
        let norm: f64 = (k + 1..n).map(|i| a[i][k] * a[i][k]).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let x0 = a[k + 1][k];
        let alpha = if x0 >= 0.0 { -norm } else { norm };
        for i in k + 1..n {
            v[i] = a[i][k];
        }
        v[k + 1] -= alpha;
        let vn: f64 = (k + 1..n).map(|i| v[i] * v[i]).sum::<f64>().sqrt();
        if vn == 0.0 {
            continue;
        }
        for i in k + 1..n {
            v[i] /= vn;
        }
        // left: rows k+1.., columns k..
        for j in k..n {
            let s: f64 = (k + 1..n).map(|i| v[i] * a[i][j]).sum();
            for i in k + 1..n {
                a[i][j] -= 2.0 * v[i] * s;
            }
        }
        // right: all rows, columns k+1..
        for row in a.iter_mut() {
            let s: f64 = (k + 1..n).map(|j| row[j] * v[j]).sum();
            for j in k + 1..n {
                row[j] -= 2.0 * s * v[j];
            }
        }
        for i in k + 2..n {
            a[i][k] = 0.0;
        }
    }
}

/// Francis double-shift QR on an upper Hessenberg matrix (eigenvalues only).
/// Returns `(values, converged, sweeps)`.
fn francis_qr(a: &mut [Vec<f64>]) -> (Vec<ComplexScalar>, bool, usize) {
    let n = a.len();
    let mut wr = vec![ComplexScalar::new(0.0, 0.0); n];
    if n == 0 {
        return (wr, true, 0);
    }
    let max_sweeps = 100 * n;
    let mut sweeps = 0;

    let mut anorm = 0.0;
    for i in 0..n {
        for j in i.saturating_sub(1)..n {
            anorm += a[i][j].abs();
        }
    }

    let mut nn = n as isize - 1;
    let mut t = 0.0;
    while nn >= 0 {
        let mut its = 0;
        loop {
            let nu = nn as usize;
            // look for a negligible subdiagonal element
            let mut l = nu;
            while l > 0 {
                let mut s = a[l - 1][l - 1].abs() + a[l][l].abs();
                if s == 0.0 {
                    s = anorm;
                }
                if a[l][l - 1].abs() <= DEFLATION_TOL * s {
                    a[l][l - 1] = 0.0;
                    break;
                }
                l -= 1;
            }
            let mut x = a[nu][nu];
            if l == nu {
                wr[nu] = ComplexScalar::new(x + t, 0.0);
                nn -= 1;
                break;
            }
            let mut y = a[nu - 1][nu - 1];
            let mut w = a[nu][nu - 1] * a[nu - 1][nu];
            if l == nu - 1 {
                let p = 0.5 * (y - x);
                let q = p * p + w;
                let mut z = q.abs().sqrt();
                x += t;
                if q >= 0.0 {
                    z = p + z.copysign(p);
                    wr[nu - 1] = ComplexScalar::new(x + z, 0.0);
                    wr[nu] = if z != 0.0 {
                        ComplexScalar::new(x - w / z, 0.0)
                    } else {
                        ComplexScalar::new(x + z, 0.0)
                    };
                } else {
                    wr[nu - 1] = ComplexScalar::new(x + p, z);
                    wr[nu] = ComplexScalar::new(x + p, -z);
                }
                nn -= 2;
                break;
            }

            if sweeps >= max_sweeps {
                for (i, w) in wr.iter_mut().enumerate().take(nu + 1) {
                    *w = ComplexScalar::new(a[i][i] + t, 0.0);
                }
                return (wr, false, sweeps);
            }
            if its > 0 && its % 10 == 0 {
                // exceptional shift
                t += x;
                for (i, row) in a.iter_mut().enumerate().take(nu + 1) {
                    row[i] -= x;
                }
                let s = a[nu][nu - 1].abs() + a[nu - 1][nu - 2].abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            its += 1;
            sweeps += 1;

            // form the shift and look for two consecutive small subdiagonals
            let (mut p, mut q, mut r);
            let mut m = nu - 2;
            loop {
                let z = a[m][m];
                let rr = x - z;
                let ss = y - z;
                p = (rr * ss - w) / a[m + 1][m] + a[m][m + 1];
                q = a[m + 1][m + 1] - z - rr - ss;
                r = a[m + 2][m + 1];
                let s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                let u = a[m][m - 1].abs() * (q.abs() + r.abs());
                let v = p.abs() * (a[m - 1][m - 1].abs() + z.abs() + a[m + 1][m + 1].abs());
                if u <= f64::EPSILON * v {
                    break;
                }
                m -= 1;
            }
            for i in m..nu - 1 {
                a[i + 2][i] = 0.0;
                if i != m {
                    a[i + 2][i - 1] = 0.0;
                }
            }
            // double-shift QR step on rows l..=nu, columns m..=nu
            let mut xk = 0.0;
            for k in m..nu {
                if k != m {
                    p = a[k][k - 1];
                    q = a[k + 1][k - 1];
                    r = if k + 1 != nu { a[k + 2][k - 1] } else { 0.0 };
                    xk = p.abs() + q.abs() + r.abs();
                    if xk != 0.0 {
                        p /= xk;
                        q /= xk;
                        r /= xk;
                    }
                }
                let s = (p * p + q * q + r * r).sqrt().copysign(p);
                if s == 0.0 {
                    continue;
                }
                if k == m {
                    if l != m {
                        a[k][k - 1] = -a[k][k - 1];
                    }
                } else {
                    a[k][k - 1] = -s * xk;
                }
                p += s;
                let hx = p / s;
                let hy = q / s;
                let hz = r / s;
                q /= p;
                r /= p;
                for j in k..=nu {
                    let mut pp = a[k][j] + q * a[k + 1][j];
                    if k + 1 != nu {
                        pp += r * a[k + 2][j];
                        a[k + 2][j] -= pp * hz;
                    }
                    a[k + 1][j] -= pp * hy;
                    a[k][j] -= pp * hx;
                }
                let mmin = if nu < k + 3 { nu } else { k + 3 };
                for row in a.iter_mut().take(mmin + 1).skip(l) {
                    let mut pp = hx * row[k] + hy * row[k + 1];
                    if k + 1 != nu {
                        pp += hz * row[k + 2];
                        row[k + 2] -= pp * r;
                    }
                    row[k + 1] -= pp * q;
                    row[k] -= pp;
                }
            }
            if l + 1 >= nu {
                break;
            }
        }
    }
    (wr, true, sweeps)
}

/// Checks that `D·(W − Wᵀ)` has a purely imaginary spectrum for an
/// invertible diagonal `D`:
/// `max |Re λ| ≤ tol · (1 + max |λ|)`.
pub fn verify_dw_imaginary(d_diag: &[f64], w: &AntisymmetricParam, tol: f64) -> Result<bool> {
    if d_diag.len() != w.n() {
        return Err(Error::shape(
            "verify_dw_imaginary",
            format!("{} diagonal entries for n={}", d_diag.len(), w.n()),
        ));
    }
    if let Some(index) = d_diag.iter().position(|&d| d == 0.0) {
        return Err(Error::SingularDiagonal { index });
    }
    let dw = w.expand().scale_rows(d_diag);
    let spectrum = eigenvalues(&dw)?;
    Ok(spectrum.max_abs_re() <= tol * (1.0 + spectrum.max_modulus()))
}
