//! Real symmetric positive-definite factorizations.
//!
//! [`DenseCholesky`] is a row-oriented Cholesky-Banachiewicz factorization
//! that reports the failing pivot. [`CircularBandCholesky`] factors matrices
//! whose entries vanish beyond a circular half-bandwidth `h`, the structure
//! of a band-limited covariance on a periodic grid: the interior is a plain
//! band, the last `h` rows become dense through the wrap-around coupling.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..n {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Lower-triangular factor `L` with `A = L L^T`, stored row-major.
#[derive(Debug, Clone)]
pub struct DenseCholesky {
    n: usize,
    l: Vec<f64>,
}

impl DenseCholesky {
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Dimension(format!(
                "cholesky needs a square matrix, got {}x{}",
                n,
                a.ncols()
            )));
        }
        DenseCholesky::from_fn(n, |i, j| a[(i, j)])
    }

    /// Factors the symmetric matrix whose lower triangle is given by `entry(i, j)`, `j <= i`.
    pub fn from_fn(n: usize, entry: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let (ri, rj) = (i * n, j * n);
                let s = dot(&l[ri..ri + j], &l[rj..rj + j]);
                let v = entry(i, j) - s;
                if i == j {
                    if !(v > 0.0) || !v.is_finite() {
                        return Err(Error::NotPositiveDefinite { index: i, pivot: v });
                    }
                    l[ri + i] = v.sqrt();
                } else {
                    l[ri + j] = v / l[rj + j];
                }
            }
        }
        Ok(DenseCholesky { n, l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.n)
            .map(|i| self.l[i * self.n + i].ln())
            .sum::<f64>()
    }

    /// In-place `L^{-1} b`.
    pub fn forward(&self, b: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let row = &self.l[i * n..i * n + i];
            b[i] = (b[i] - dot(row, &b[..i])) / self.l[i * n + i];
        }
    }

    /// In-place `L^{-T} b`.
    pub fn backward(&self, b: &mut [f64]) {
        let n = self.n;
        for i in (0..n).rev() {
            b[i] /= self.l[i * n + i];
            let bi = b[i];
            let row = &self.l[i * n..i * n + i];
            for (bk, lk) in b[..i].iter_mut().zip(row) {
                *bk -= lk * bi;
            }
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.forward(&mut x);
        self.backward(&mut x);
        x
    }

    /// `A^{-1}` as a dense symmetric matrix.
    pub fn inverse(&self) -> DMatrix<f64> {
        let n = self.n;
        let mut inv = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            let x = self.solve(&e);
            for i in 0..n {
                inv[(i, j)] = x[i];
            }
        }
        // exact symmetry
        for i in 0..n {
            for j in 0..i {
                let v = 0.5 * (inv[(i, j)] + inv[(j, i)]);
                inv[(i, j)] = v;
                inv[(j, i)] = v;
            }
        }
        inv
    }
}

/// Band Cholesky on `n` rows with half-bandwidth `h`, row-major band storage:
/// row `i` holds columns `i-h ..= i` (left-padded with zeros).
#[derive(Debug, Clone)]
struct BandCholesky {
    n: usize,
    h: usize,
    l: Vec<f64>,
}

impl BandCholesky {
    fn new(n: usize, h: usize, entry: &impl Fn(usize, usize) -> f64) -> Result<Self> {
        let w = h + 1;
        let mut l = vec![0.0; n * w];
        for i in 0..n {
            let j0 = i.saturating_sub(h);
            for j in j0..=i {
                // columns k in max(i-h, j-h)..j are shared by rows i and j
                let k0 = j0.max(j.saturating_sub(h));
                let len = j - k0;
                let ri = i * w + (k0 + h - i);
                let rj = j * w + (k0 + h - j);
                let s = dot(&l[ri..ri + len], &l[rj..rj + len]);
                let v = entry(i, j) - s;
                if i == j {
                    if !(v > 0.0) || !v.is_finite() {
                        return Err(Error::NotPositiveDefinite { index: i, pivot: v });
                    }
                    l[i * w + h] = v.sqrt();
                } else {
                    l[i * w + (j + h - i)] = v / l[j * w + h];
                }
            }
        }
        Ok(BandCholesky { n, h, l })
    }

    #[inline]
    fn get(&self, i: usize, j: usize) -> f64 {
        self.l[i * (self.h + 1) + (j + self.h - i)]
    }

    fn forward(&self, b: &mut [f64]) {
        let w = self.h + 1;
        for i in 0..self.n {
            let j0 = i.saturating_sub(self.h);
            let row = &self.l[i * w + (j0 + self.h - i)..i * w + self.h];
            b[i] = (b[i] - dot(row, &b[j0..i])) / self.l[i * w + self.h];
        }
    }

    fn backward(&self, b: &mut [f64]) {
        let w = self.h + 1;
        for i in (0..self.n).rev() {
            b[i] /= self.l[i * w + self.h];
            let bi = b[i];
            let j0 = i.saturating_sub(self.h);
            for j in j0..i {
                b[j] -= self.get(i, j) * bi;
            }
        }
    }

    fn log_det(&self) -> f64 {
        2.0 * (0..self.n)
            .map(|i| self.l[i * (self.h + 1) + self.h].ln())
            .sum::<f64>()
    }
}

/// Cholesky factorization of a symmetric matrix with circular half-bandwidth
/// `h`, i.e. `A[i][j] = 0` whenever `min(|i-j|, n-|i-j|) > h`.
#[derive(Debug, Clone)]
pub struct CircularBandCholesky {
    n: usize,
    h: usize,
    interior: BandCholesky,
    // border rows of L: h x (n - h), row-major
    coupling: Vec<f64>,
    corner: DenseCholesky,
}

impl CircularBandCholesky {
    /// `entry(i, j)` is queried only for pairs within the circular band.
    /// Requires `2 h < n`.
    pub fn new(n: usize, h: usize, entry: impl Fn(usize, usize) -> f64) -> Result<Self> {
        if h == 0 || 2 * h >= n {
            return Err(Error::InvalidInput(format!(
                "circular band factorization needs 0 < 2h < n (h = {h}, n = {n})"
            )));
        }
        let m = n - h;
        let interior = BandCholesky::new(m, h, &entry)?;

        let mut coupling = vec![0.0; h * m];
        for b in 0..h {
            let row = &mut coupling[b * m..(b + 1) * m];
            let gb = m + b;
            for (j, v) in row.iter_mut().enumerate() {
                let d = gb - j;
                if d <= h || n - d <= h {
                    *v = entry(gb, j);
                }
            }
            interior.forward(row);
        }

        let corner = DenseCholesky::from_fn(h, |i, j| {
            let s = dot(&coupling[i * m..(i + 1) * m], &coupling[j * m..(j + 1) * m]);
            entry(m + i, m + j) - s
        })
        .map_err(|e| match e {
            Error::NotPositiveDefinite { index, pivot } => Error::NotPositiveDefinite {
                index: index + m,
                pivot,
            },
            other => other,
        })?;

        Ok(CircularBandCholesky {
            n,
            h,
            interior,
            coupling,
            corner,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn log_det(&self) -> f64 {
        self.interior.log_det() + self.corner.log_det()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let m = self.n - self.h;
        let mut x = b.to_vec();
        let (xi, xb) = x.split_at_mut(m);
        self.interior.forward(xi);
        for (k, v) in xb.iter_mut().enumerate() {
            *v -= dot(&self.coupling[k * m..(k + 1) * m], xi);
        }
        self.corner.forward(xb);
        self.corner.backward(xb);
        for (k, v) in xb.iter().enumerate() {
            let row = &self.coupling[k * m..(k + 1) * m];
            for (a, c) in xi.iter_mut().zip(row) {
                *a -= c * v;
            }
        }
        self.interior.backward(xi);
        x
    }
}
