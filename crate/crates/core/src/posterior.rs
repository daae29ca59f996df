//! Exact Gaussian inference for the synthesis coefficients.
//!
//! With circular complex coefficients `w_n ~ CN(0, C_n)` and a real
//! observation, the observation covariance is
//! `C_y = sigma2 I + 1/2 Re( sum_n Psi_n C_n Psi_n^H )`, the posterior mean is
//! `w~_n = 1/2 C_n Psi_n^H C_y^{-1} y` and the diagonal posterior blocks are
//! `Gamma_n = C_n - 1/4 C_n Psi_n^H C_y^{-1} Psi_n C_n`. The halving comes
//! from taking the real part of a circular variable.
//!
//! Banded mode stores `C_y` within a circular half-bandwidth and evaluates
//! each `w~_n` from a local solve on the `N'` samples around `n`.

use std::sync::OnceLock;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{CircularBandCholesky, DenseCholesky};
use crate::prior::PriorBlockDiag;
use crate::wavelet::{AtomBank, SynthesisCoeffs, C64};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovMode {
    Dense,
    /// Local windows of `bandwidth` samples (`N'`, even).
    Banded {
        bandwidth: usize,
    },
}

impl CovMode {
    pub fn bandwidth(&self, len: usize) -> usize {
        match self {
            CovMode::Dense => len,
            CovMode::Banded { bandwidth } => *bandwidth,
        }
    }
}

#[derive(Debug, Clone)]
enum Storage {
    Dense(DMatrix<f64>),
    /// `data[k * (half + 1) + d] = C_y[k, (k + d) mod N]`, `d = 0..=half`.
    Band {
        half: usize,
        data: Vec<f64>,
    },
}

fn band_get(data: &[f64], half: usize, n: usize, i: usize, j: usize) -> f64 {
    let d = (j + n - i) % n;
    if d <= half {
        data[i * (half + 1) + d]
    } else if n - d <= half {
        data[j * (half + 1) + (n - d)]
    } else {
        0.0
    }
}

#[derive(Debug, Clone)]
enum Factor {
    Dense(DenseCholesky),
    Band(CircularBandCholesky),
}

fn pivot_of(e: Error) -> (usize, f64) {
    match e {
        Error::NotPositiveDefinite { index, pivot } => (index, pivot),
        _ => (0, f64::NAN),
    }
}

/// Assembled and factored `C_y`.
#[derive(Debug, Clone)]
pub struct ObservationCovariance {
    len: usize,
    sigma2: f64,
    mode: CovMode,
    storage: Storage,
    factor: OnceLock<std::result::Result<Factor, (usize, f64)>>,
}

impl ObservationCovariance {
    /// Wraps an explicit dense covariance (diagnostics and small examples).
    pub fn from_dense(matrix: DMatrix<f64>, sigma2: f64) -> Result<Self> {
        let len = matrix.nrows();
        if matrix.ncols() != len || len == 0 {
            return Err(Error::Dimension(format!(
                "covariance must be square, got {}x{}",
                len,
                matrix.ncols()
            )));
        }
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "noise variance must be positive, got {sigma2}"
            )));
        }
        let factor = DenseCholesky::new(&matrix)?;
        Ok(ObservationCovariance {
            len,
            sigma2,
            mode: CovMode::Dense,
            storage: Storage::Dense(matrix),
            factor: OnceLock::from(Ok(Factor::Dense(factor))),
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn mode(&self) -> CovMode {
        self.mode
    }

    /// Stored circular half-bandwidth (`N/2` or more means every entry).
    pub fn half_bandwidth(&self) -> usize {
        match &self.storage {
            Storage::Dense(_) => self.len / 2,
            Storage::Band { half, .. } => *half,
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match &self.storage {
            Storage::Dense(m) => m[(i, j)],
            Storage::Band { half, data } => band_get(data, *half, self.len, i, j),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match &self.storage {
            Storage::Dense(m) => m.clone(),
            Storage::Band { .. } => DMatrix::from_fn(self.len, self.len, |i, j| self.get(i, j)),
        }
    }

    /// Cholesky factor of the stored matrix. Dense storage is factored at
    /// assembly; band storage on first use, since a band-truncated covariance
    /// need not be positive definite and the windowed posterior never needs it.
    fn factor(&self) -> Result<&Factor> {
        let state = self.factor.get_or_init(|| match &self.storage {
            Storage::Dense(m) => DenseCholesky::new(m).map(Factor::Dense).map_err(pivot_of),
            Storage::Band { half, data } => CircularBandCholesky::new(self.len, *half, |i, j| {
                band_get(data, *half, self.len, i, j)
            })
            .map(Factor::Band)
            .map_err(pivot_of),
        });
        match state {
            Ok(f) => Ok(f),
            Err((index, pivot)) => Err(Error::NotPositiveDefinite {
                index: *index,
                pivot: *pivot,
            }),
        }
    }

    /// `C_y^{-1} b` with the stored factorization.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.len {
            return Err(Error::Dimension(format!(
                "right-hand side length {} != {}",
                b.len(),
                self.len
            )));
        }
        Ok(match self.factor()? {
            Factor::Dense(f) => f.solve(b),
            Factor::Band(f) => f.solve(b),
        })
    }

    pub fn log_det(&self) -> Result<f64> {
        Ok(match self.factor()? {
            Factor::Dense(f) => f.log_det(),
            Factor::Band(f) => f.log_det(),
        })
    }

    pub fn inverse(&self) -> Result<DMatrix<f64>> {
        Ok(match self.factor()? {
            Factor::Dense(f) => f.inverse(),
            Factor::Band(f) => {
                let n = self.len;
                let mut inv = DMatrix::zeros(n, n);
                let mut e = vec![0.0; n];
                for j in 0..n {
                    e.iter_mut().for_each(|v| *v = 0.0);
                    e[j] = 1.0;
                    let x = f.solve(&e);
                    inv.column_mut(j)
                        .iter_mut()
                        .zip(&x)
                        .for_each(|(a, b)| *a = *b);
                }
                (&inv + inv.transpose()) * 0.5
            }
        })
    }

    /// Gaussian log-density of `y` under `N(0, C_y)`.
    pub fn log_likelihood(&self, y: &[f64]) -> Result<f64> {
        if y.len() != self.len {
            return Err(Error::Dimension(format!(
                "signal length {} != covariance size {}",
                y.len(),
                self.len
            )));
        }
        let z = self.solve(y)?;
        let quad: f64 = y.iter().zip(&z).map(|(a, b)| a * b).sum();
        let n = self.len as f64;
        let ll = -0.5 * (n * (2.0 * std::f64::consts::PI).ln() + self.log_det()? + quad);
        if !ll.is_finite() {
            return Err(Error::NonFinite("log-likelihood".into()));
        }
        Ok(ll)
    }
}

/// Atom values on the support offsets as a real `|O| x 2M` matrix `[Re V, Im V]`.
fn support_matrix(atoms: &AtomBank, offsets: &[i64]) -> DMatrix<f64> {
    let m = atoms.n_scales();
    DMatrix::from_fn(offsets.len(), 2 * m, |r, c| {
        let v = atoms.atom_at(c % m, offsets[r]);
        if c < m {
            v.re
        } else {
            v.im
        }
    })
}

/// `C_y = sigma2 I + 1/2 Re( sum_n Psi_n C_n Psi_n^H )`.
///
/// Banded mode keeps entries within circular distance `N' - 1`, which is what
/// the `N'`-sample windows of [`posterior`] read.
pub fn assemble_cy(
    prior: &PriorBlockDiag,
    atoms: &AtomBank,
    sigma2: f64,
    mode: CovMode,
) -> Result<ObservationCovariance> {
    let n = atoms.len();
    let m = atoms.n_scales();
    if prior.len() != n || prior.n_scales() != m {
        return Err(Error::Dimension(format!(
            "prior has {} blocks of size {}, dictionary is {}x{}",
            prior.len(),
            prior.n_scales(),
            n,
            m
        )));
    }
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "noise variance must be positive, got {sigma2}"
        )));
    }
    let half = match mode {
        CovMode::Dense => n / 2,
        CovMode::Banded { bandwidth } => {
            if bandwidth % 2 != 0 || bandwidth < 2 || bandwidth > n {
                return Err(Error::Config(format!(
                    "bandwidth N' must be even with 2 <= N' <= N (N' = {bandwidth}, N = {n})"
                )));
            }
            (bandwidth - 1).min(n / 2)
        }
    };
    let full = half >= n / 2;

    let mut dense = if full {
        DMatrix::zeros(n, n)
    } else {
        DMatrix::zeros(0, 0)
    };
    let mut band = if full {
        Vec::new()
    } else {
        vec![0.0; n * (half + 1)]
    };
    let mut sink = |k: usize, l: usize, val: f64| {
        if full {
            dense[(k, l)] += val;
        } else {
            let d = (l + n - k) % n;
            if d <= half {
                band[k * (half + 1) + d] += val;
            }
        }
    };

    // Both paths are exact; pick the cheaper one for this atom support.
    let no = atoms.support_offsets().len() as f64;
    let lags = if full { n } else { half + 1 } as f64;
    let nf = n as f64;
    let support_cost = nf * no * no * 2.0 * m as f64;
    let lag_cost = (m * m) as f64 * lags * (10.0 * nf * nf.log2().max(1.0) + 8.0 * nf);
    if support_cost <= lag_cost {
        accumulate_by_support(prior, atoms, &mut sink);
    } else {
        accumulate_by_lag(prior, atoms, if full { n - 1 } else { half }, &mut sink);
    }

    let (storage, factor) = if full {
        let mut c = (&dense + dense.transpose()) * 0.5;
        for i in 0..n {
            c[(i, i)] += sigma2;
        }
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("observation covariance".into()));
        }
        let f = DenseCholesky::new(&c)?;
        (Storage::Dense(c), OnceLock::from(Ok(Factor::Dense(f))))
    } else {
        for k in 0..n {
            band[k * (half + 1)] += sigma2;
        }
        if band.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("observation covariance".into()));
        }
        (Storage::Band { half, data: band }, OnceLock::new())
    };
    Ok(ObservationCovariance {
        len: n,
        sigma2,
        mode,
        storage,
        factor,
    })
}

/// Sums `1/2 Re(Psi_n C_n Psi_n^H)` block by block over the atom support.
fn accumulate_by_support(
    prior: &PriorBlockDiag,
    atoms: &AtomBank,
    sink: &mut impl FnMut(usize, usize, f64),
) {
    let n = atoms.len();
    let m = atoms.n_scales();
    let offsets = atoms.support_offsets();
    let v = support_matrix(atoms, offsets);
    let (vr, vi) = (v.columns(0, m), v.columns(m, m));
    let no = offsets.len();

    // Re(V C conj(V)^T) = [Vr -Vi] [Ur Ui]^T with U = conj(V) C^T.
    let mut left = DMatrix::zeros(no, 2 * m);
    left.columns_mut(0, m).copy_from(&vr);
    left.columns_mut(m, m).copy_from(&(-&vi));
    let mut right = DMatrix::zeros(no, 2 * m);
    for (idx, c) in prior.blocks().iter().enumerate() {
        if c.iter().all(|z| z.re == 0.0 && z.im == 0.0) {
            continue;
        }
        let (cr, ci) = (c.map(|z| z.re), c.map(|z| z.im));
        // U = (Vr - i Vi)(Cr + i Ci)^T
        let ur = vr * cr.transpose() + vi * ci.transpose();
        let ui = vr * ci.transpose() - vi * cr.transpose();
        right.columns_mut(0, m).copy_from(&ur);
        right.columns_mut(m, m).copy_from(&ui);
        let e = &left * right.transpose();
        let rows: Vec<usize> = offsets
            .iter()
            .map(|o| (idx as i64 + o).rem_euclid(n as i64) as usize)
            .collect();
        for a in 0..no {
            for b in 0..no {
                sink(rows[a], rows[b], 0.5 * e[(a, b)]);
            }
        }
    }
}

/// Diagonal-by-diagonal assembly: for lag `d`,
/// `C_y[k, k+d] = 1/2 Re sum_{m,m'} sum_j c_{mm'}[k-j] a_m[j] conj(a_m'[j+d])`,
/// a circular convolution in `k` evaluated with FFTs. Cost does not depend on
/// how far the atoms spread.
fn accumulate_by_lag(
    prior: &PriorBlockDiag,
    atoms: &AtomBank,
    max_lag: usize,
    sink: &mut impl FnMut(usize, usize, f64),
) {
    let n = atoms.len();
    let m = atoms.n_scales();
    let (fft, ifft) = atoms.fft_plans();
    let scale = 0.5 / n as f64;
    let mut cf = vec![C64::new(0.0, 0.0); n];
    let mut p = vec![C64::new(0.0, 0.0); n];
    for a in 0..m {
        let atom_a = atoms.atom(a);
        for b in 0..m {
            let mut any = false;
            for (t, v) in cf.iter_mut().enumerate() {
                *v = prior.block(t)[(a, b)];
                any |= v.re != 0.0 || v.im != 0.0;
            }
            if !any {
                continue;
            }
            fft.process(&mut cf);
            let atom_b = atoms.atom(b);
            for d in 0..=max_lag {
                for (j, v) in p.iter_mut().enumerate() {
                    *v = atom_a[j] * atom_b[(j + d) % n].conj();
                }
                fft.process(&mut p);
                p.iter_mut().zip(&cf).for_each(|(x, y)| *x *= y);
                ifft.process(&mut p);
                for (k, v) in p.iter().enumerate() {
                    sink(k, (k + d) % n, scale * v.re);
                }
            }
        }
    }
}

/// Posterior means and diagonal covariance blocks.
#[derive(Debug, Clone)]
pub struct PosteriorState {
    pub means: SynthesisCoeffs,
    /// Empty when only the means were requested.
    pub cov_blocks: Vec<DMatrix<C64>>,
    pub bandwidth_used: usize,
}

fn check_inputs(
    y: &[f64],
    prior: &PriorBlockDiag,
    atoms: &AtomBank,
    cy: &ObservationCovariance,
) -> Result<()> {
    let n = atoms.len();
    if y.len() != n || prior.len() != n || cy.len() != n {
        return Err(Error::Dimension(format!(
            "length mismatch: signal {}, prior {}, dictionary {}, C_y {}",
            y.len(),
            prior.len(),
            n,
            cy.len()
        )));
    }
    if prior.n_scales() != atoms.n_scales() {
        return Err(Error::Dimension(
            "prior block size differs from scale count".into(),
        ));
    }
    Ok(())
}

/// `1/2 C g` for a complex vector `g`.
fn half_block_apply(c: &DMatrix<C64>, g: &[C64]) -> Vec<C64> {
    let m = c.nrows();
    (0..m)
        .map(|i| (0..m).map(|j| c[(i, j)] * g[j]).sum::<C64>() * 0.5)
        .collect()
}

/// `C - 1/4 C H C` with `H` Hermitian; result symmetrized.
fn gamma_from(c: &DMatrix<C64>, h: &DMatrix<C64>) -> DMatrix<C64> {
    let g = c - c * h * c * C64::new(0.25, 0.0);
    (&g + g.adjoint()) * C64::new(0.5, 0.0)
}

/// `H = X^H X` for `X = Xr + i Xi` given as `[Xr Xi]`.
fn gram_from_real_split(x: &DMatrix<f64>, m: usize) -> DMatrix<C64> {
    let (xr, xi) = (x.columns(0, m), x.columns(m, m));
    let re = xr.transpose() * xr + xi.transpose() * xi;
    let im = xr.transpose() * xi - xi.transpose() * xr;
    DMatrix::from_fn(m, m, |i, j| C64::new(re[(i, j)], im[(i, j)]))
}

/// Computes the posterior means and, when `with_cov`, the blocks `Gamma_n`.
pub fn posterior(
    y: &[f64],
    prior: &PriorBlockDiag,
    atoms: &AtomBank,
    cy: &ObservationCovariance,
    with_cov: bool,
) -> Result<PosteriorState> {
    check_inputs(y, prior, atoms, cy)?;
    let n = atoms.len();
    let bandwidth = cy.mode().bandwidth(n);
    if bandwidth >= n {
        dense_posterior(y, prior, atoms, cy, with_cov)
    } else {
        banded_posterior(y, prior, atoms, cy, bandwidth, with_cov)
    }
}

fn dense_posterior(
    y: &[f64],
    prior: &PriorBlockDiag,
    atoms: &AtomBank,
    cy: &ObservationCovariance,
    with_cov: bool,
) -> Result<PosteriorState> {
    let n = atoms.len();
    let m = atoms.n_scales();
    let z = cy.solve(y)?;
    let proj = atoms.adjoint(&z)?;
    let mut means = SynthesisCoeffs::zeros(n, m);
    for t in 0..n {
        let g: Vec<C64> = proj.row(t).iter().cloned().collect();
        let w = half_block_apply(prior.block(t), &g);
        for (j, v) in w.into_iter().enumerate() {
            means[(t, j)] = v;
        }
    }

    let mut cov_blocks = Vec::new();
    if with_cov {
        let inv = cy.inverse()?;
        let offsets = atoms.support_offsets();
        let v = support_matrix(atoms, offsets);
        let no = offsets.len();
        let mut sub = DMatrix::zeros(no, no);
        cov_blocks.reserve(n);
        for t in 0..n {
            let idx: Vec<usize> = offsets
                .iter()
                .map(|o| (t as i64 + o).rem_euclid(n as i64) as usize)
                .collect();
            for a in 0..no {
                for b in 0..no {
                    sub[(a, b)] = inv[(idx[a], idx[b])];
                }
            }
            // H = V^H S V with V = Vr + i Vi
            let sv = &sub * &v;
            let (vr, vi) = (v.columns(0, m), v.columns(m, m));
            let (sr, si) = (sv.columns(0, m), sv.columns(m, m));
            let re = vr.transpose() * sr + vi.transpose() * si;
            let im = vr.transpose() * si - vi.transpose() * sr;
            let h = DMatrix::from_fn(m, m, |i, j| C64::new(re[(i, j)], im[(i, j)]));
            cov_blocks.push(gamma_from(prior.block(t), &h));
        }
    }
    Ok(PosteriorState {
        means,
        cov_blocks,
        bandwidth_used: n,
    })
}

fn banded_posterior(
    y: &[f64],
    prior: &PriorBlockDiag,
    atoms: &AtomBank,
    cy: &ObservationCovariance,
    bandwidth: usize,
    with_cov: bool,
) -> Result<PosteriorState> {
    let n = atoms.len();
    let m = atoms.n_scales();
    let lead = bandwidth / 2;
    // window atoms: rows i -> offset i - N'/2 relative to the window center
    let offsets: Vec<i64> = (0..bandwidth).map(|i| i as i64 - lead as i64).collect();
    let vw = support_matrix(atoms, &offsets);

    let mut means = SynthesisCoeffs::zeros(n, m);
    let mut cov_blocks = Vec::with_capacity(if with_cov { n } else { 0 });
    let mut x = vw.clone();
    let mut yw = vec![0.0; bandwidth];
    let mut col = vec![0.0; bandwidth];
    for t in 0..n {
        let idx: Vec<usize> = (0..bandwidth).map(|i| (t + n + i - lead) % n).collect();
        let chol = DenseCholesky::from_fn(bandwidth, |i, j| cy.get(idx[i], idx[j]))?;
        for (v, &k) in yw.iter_mut().zip(&idx) {
            *v = y[k];
        }
        let g: Vec<C64> = if with_cov {
            chol.forward(&mut yw);
            for c in 0..2 * m {
                col.copy_from_slice(vw.column(c).as_slice());
                chol.forward(&mut col);
                x.column_mut(c).copy_from_slice(&col);
            }
            let h = gram_from_real_split(&x, m);
            cov_blocks.push(gamma_from(prior.block(t), &h));
            // Psi^H A^{-1} y = (L^{-1} Psi)^H (L^{-1} y)
            (0..m)
                .map(|j| {
                    let re: f64 = x.column(j).iter().zip(&yw).map(|(a, b)| a * b).sum();
                    let im: f64 = x.column(m + j).iter().zip(&yw).map(|(a, b)| a * b).sum();
                    C64::new(re, -im)
                })
                .collect()
        } else {
            let z = chol.solve(&yw);
            (0..m)
                .map(|j| {
                    let re: f64 = vw.column(j).iter().zip(&z).map(|(a, b)| a * b).sum();
                    let im: f64 = vw.column(m + j).iter().zip(&z).map(|(a, b)| a * b).sum();
                    C64::new(re, -im)
                })
                .collect()
        };
        let w = half_block_apply(prior.block(t), &g);
        for (j, v) in w.into_iter().enumerate() {
            means[(t, j)] = v;
        }
    }
    Ok(PosteriorState {
        means,
        cov_blocks,
        bandwidth_used: bandwidth,
    })
}

/// `w~_n = 1/2 C_n Psi_n^H C_y^{-1} y` for every `n`.
pub fn posterior_mean(
    y: &[f64],
    prior: &PriorBlockDiag,
    atoms: &AtomBank,
    cy: &ObservationCovariance,
) -> Result<SynthesisCoeffs> {
    Ok(posterior(y, prior, atoms, cy, false)?.means)
}

/// `Gamma_n = C_n - 1/4 C_n Psi_n^H C_y^{-1} Psi_n C_n` for every `n`.
pub fn posterior_cov_blocks(
    prior: &PriorBlockDiag,
    atoms: &AtomBank,
    cy: &ObservationCovariance,
) -> Result<Vec<DMatrix<C64>>> {
    let zeros = vec![0.0; atoms.len()];
    Ok(posterior(&zeros, prior, atoms, cy, true)?.cov_blocks)
}

/// `delta_{nn'} C_n - 1/4 C_n Psi_n^H C_y^{-1} Psi_n' C_n'`, using the full
/// stored factorization.
pub fn posterior_cross_cov(
    prior: &PriorBlockDiag,
    atoms: &AtomBank,
    cy: &ObservationCovariance,
    n: usize,
    n_prime: usize,
) -> Result<DMatrix<C64>> {
    let len = atoms.len();
    if n >= len || n_prime >= len {
        return Err(Error::InvalidInput(format!(
            "time indices ({n}, {n_prime}) out of range 0..{len}"
        )));
    }
    if prior.len() != len || cy.len() != len {
        return Err(Error::Dimension(
            "prior, dictionary and C_y lengths differ".into(),
        ));
    }
    let m = atoms.n_scales();
    let psi_a = atoms.atom_matrix(n)?.values;
    let psi_b = atoms.atom_matrix(n_prime)?.values;
    // X = C_y^{-1} Psi_n'
    let mut x = DMatrix::<C64>::zeros(len, m);
    for j in 0..m {
        let re: Vec<f64> = psi_b.column(j).iter().map(|v| v.re).collect();
        let im: Vec<f64> = psi_b.column(j).iter().map(|v| v.im).collect();
        let (sr, si) = (cy.solve(&re)?, cy.solve(&im)?);
        for k in 0..len {
            x[(k, j)] = C64::new(sr[k], si[k]);
        }
    }
    let h = psi_a.adjoint() * x;
    let mut out = -(prior.block(n) * h * prior.block(n_prime)) * C64::new(0.25, 0.0);
    if n == n_prime {
        out += prior.block(n);
    }
    Ok(out)
}

/// `y~0 = Re( sum_n Psi_n w~_n )`.
pub fn reconstruct(means: &SynthesisCoeffs, atoms: &AtomBank) -> Result<Vec<f64>> {
    atoms.synthesize(means)
}

/// Bias and error variance of the reconstruction for a fixed clean signal.
#[derive(Debug, Clone)]
pub struct EstimatorReport {
    /// `E{ y~0 | y0 } = y0 + B`.
    pub reconstruction: Vec<f64>,
    /// `B = -sigma2 C_y^{-1} y0`.
    pub bias: Vec<f64>,
    /// Diagonal of `sigma2 (I - sigma2 C_y^{-1})^2`.
    pub error_variance_diag: Vec<f64>,
}

pub fn estimator_report(y0: &[f64], cy: &ObservationCovariance) -> Result<EstimatorReport> {
    let n = cy.len();
    if y0.len() != n {
        return Err(Error::Dimension(format!(
            "clean signal length {} != {}",
            y0.len(),
            n
        )));
    }
    let s2 = cy.sigma2();
    let bias: Vec<f64> = cy.solve(y0)?.into_iter().map(|v| -s2 * v).collect();
    let reconstruction = y0.iter().zip(&bias).map(|(a, b)| a + b).collect();
    let inv = cy.inverse()?;
    let error_variance_diag = (0..n)
        .map(|i| {
            let row: f64 = (0..n)
                .map(|j| {
                    let v = if i == j { 1.0 } else { 0.0 } - s2 * inv[(i, j)];
                    v * v
                })
                .sum();
            s2 * row
        })
        .collect();
    let report = EstimatorReport {
        reconstruction,
        bias,
        error_variance_diag,
    };
    if report
        .bias
        .iter()
        .chain(&report.error_variance_diag)
        .any(|v| !v.is_finite())
    {
        return Err(Error::NonFinite("estimator report".into()));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wavelet::{ScaleGrid, WaveletSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bank(n: usize, m: usize) -> AtomBank {
        let spec = WaveletSpec::log_gaussian(n as f64 / 4.0, 0.4).unwrap();
        let grid = ScaleGrid::uniform(2.0, 0.0, 0.6 * (m as f64 - 1.0), m).unwrap();
        AtomBank::new(&spec, &grid, n, n as f64).unwrap()
    }

    fn random_prior(n: usize, m: usize, seed: u64) -> PriorBlockDiag {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blocks = (0..n)
            .map(|_| {
                let b = DMatrix::from_fn(m, m, |_, _| {
                    C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
                });
                &b * b.adjoint()
            })
            .collect();
        PriorBlockDiag::new(blocks).unwrap()
    }

    fn random_signal(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random::<f64>() - 0.5).collect()
    }

    fn naive_cy(prior: &PriorBlockDiag, atoms: &AtomBank, sigma2: f64) -> DMatrix<f64> {
        let n = atoms.len();
        let mut c = DMatrix::identity(n, n) * sigma2;
        for t in 0..n {
            let psi = atoms.atom_matrix(t).unwrap().values;
            let term = &psi * prior.block(t) * psi.adjoint();
            c += term.map(|v| 0.5 * v.re);
        }
        c
    }

    fn accumulate_dense(prior: &PriorBlockDiag, atoms: &AtomBank, by_lag: bool) -> DMatrix<f64> {
        let n = atoms.len();
        let mut d = DMatrix::zeros(n, n);
        let mut sink = |k: usize, l: usize, v: f64| d[(k, l)] += v;
        if by_lag {
            accumulate_by_lag(prior, atoms, n - 1, &mut sink);
        } else {
            accumulate_by_support(prior, atoms, &mut sink);
        }
        d
    }

    #[test]
    fn zero_prior_gives_white_covariance() {
        let atoms = bank(16, 2);
        let cy = assemble_cy(&PriorBlockDiag::zeros(16, 2), &atoms, 0.3, CovMode::Dense).unwrap();
        assert_eq!(cy.to_dense(), DMatrix::identity(16, 16) * 0.3);
    }

    #[test]
    fn both_assembly_paths_match_naive_sum() {
        let atoms = bank(32, 2);
        let prior = random_prior(32, 2, 7);
        let naive = naive_cy(&prior, &atoms, 0.0);
        let scale = naive.norm();
        for by_lag in [false, true] {
            let got = accumulate_dense(&prior, &atoms, by_lag);
            assert!((&got - &naive).norm() < 1e-10 * scale, "by_lag = {by_lag}");
        }
        let cy = assemble_cy(&prior, &atoms, 0.1, CovMode::Dense).unwrap();
        assert!((cy.to_dense() - naive_cy(&prior, &atoms, 0.1)).norm() < 1e-10 * scale);
    }

    #[test]
    fn banded_storage_keeps_band_entries() {
        let atoms = bank(64, 3);
        let prior = random_prior(64, 3, 8);
        let dense = assemble_cy(&prior, &atoms, 0.2, CovMode::Dense).unwrap();
        let banded = assemble_cy(&prior, &atoms, 0.2, CovMode::Banded { bandwidth: 16 }).unwrap();
        assert_eq!(banded.half_bandwidth(), 15);
        for i in 0..64 {
            for j in 0..64 {
                let d = (j + 64 - i) % 64;
                let expect = if d.min(64 - d) <= 15 {
                    dense.get(i, j)
                } else {
                    0.0
                };
                assert!((banded.get(i, j) - expect).abs() < 1e-12);
            }
        }
        let full = assemble_cy(&prior, &atoms, 0.2, CovMode::Banded { bandwidth: 64 }).unwrap();
        assert_eq!(full.to_dense(), dense.to_dense());
        assert!(assemble_cy(&prior, &atoms, 0.2, CovMode::Banded { bandwidth: 15 }).is_err());
    }

    #[test]
    fn log_likelihood_of_white_noise() {
        let atoms = bank(16, 2);
        let y = random_signal(16, 3);
        let cy = assemble_cy(&PriorBlockDiag::zeros(16, 2), &atoms, 0.5, CovMode::Dense).unwrap();
        let expect: f64 = y
            .iter()
            .map(|v| -0.5 * ((2.0 * std::f64::consts::PI * 0.5).ln() + v * v / 0.5))
            .sum();
        assert!((cy.log_likelihood(&y).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn zero_signal_has_zero_posterior_mean() {
        let atoms = bank(16, 2);
        let prior = random_prior(16, 2, 1);
        let cy = assemble_cy(&prior, &atoms, 0.1, CovMode::Dense).unwrap();
        let w = posterior_mean(&[0.0; 16], &prior, &atoms, &cy).unwrap();
        assert!(w.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn posterior_mean_is_scale_invariant() {
        let atoms = bank(32, 2);
        let prior = random_prior(32, 2, 2);
        let y = random_signal(32, 4);
        let cy = assemble_cy(&prior, &atoms, 0.1, CovMode::Dense).unwrap();
        let w = posterior_mean(&y, &prior, &atoms, &cy).unwrap();
        let prior3 = prior.scaled(3.0);
        let cy3 = assemble_cy(&prior3, &atoms, 0.3, CovMode::Dense).unwrap();
        let w3 = posterior_mean(&y, &prior3, &atoms, &cy3).unwrap();
        assert!((&w - &w3).norm() < 1e-10 * w.norm());
    }

    #[test]
    fn reconstruction_is_wiener_filter() {
        let atoms = bank(32, 3);
        let prior = random_prior(32, 3, 5);
        let y = random_signal(32, 6);
        let sigma2 = 0.05;
        let cy = assemble_cy(&prior, &atoms, sigma2, CovMode::Dense).unwrap();
        let w = posterior_mean(&y, &prior, &atoms, &cy).unwrap();
        let rec = reconstruct(&w, &atoms).unwrap();
        let z = cy.solve(&y).unwrap();
        for i in 0..32 {
            assert!((rec[i] - (y[i] - sigma2 * z[i])).abs() < 1e-10);
        }
        let report = estimator_report(&y, &cy).unwrap();
        for i in 0..32 {
            assert!((report.reconstruction[i] - rec[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn covariance_blocks_limits() {
        let atoms = bank(16, 2);
        let zero = PriorBlockDiag::zeros(16, 2);
        let cy = assemble_cy(&zero, &atoms, 0.1, CovMode::Dense).unwrap();
        let g = posterior_cov_blocks(&zero, &atoms, &cy).unwrap();
        assert!(g.iter().all(|b| b.norm() == 0.0));

        let prior = random_prior(16, 2, 9);
        let sigma2 = 1e3;
        let cy = assemble_cy(&prior, &atoms, sigma2, CovMode::Dense).unwrap();
        let g = posterior_cov_blocks(&prior, &atoms, &cy).unwrap();
        for t in 0..16 {
            let c = prior.block(t);
            let psi = atoms.atom_matrix(t).unwrap().values;
            let cn = c.norm();
            let pn = psi.norm();
            assert!((&g[t] - c).norm() <= cn * cn * pn * pn / (4.0 * sigma2));
            assert!((&g[t] - g[t].adjoint()).norm() < 1e-14);
        }
    }

    #[test]
    fn cross_covariance_relations() {
        let atoms = bank(16, 2);
        let prior = random_prior(16, 2, 10);
        let cy = assemble_cy(&prior, &atoms, 0.1, CovMode::Dense).unwrap();
        let g = posterior_cov_blocks(&prior, &atoms, &cy).unwrap();
        let same = posterior_cross_cov(&prior, &atoms, &cy, 3, 3).unwrap();
        assert!((&same - &g[3]).norm() < 1e-10 * g[3].norm());
        assert!(
            posterior_cross_cov(&prior, &atoms, &cy, 3, 4)
                .unwrap()
                .norm()
                > 1e-6
        );

        let zero = PriorBlockDiag::zeros(16, 2);
        let cy0 = assemble_cy(&zero, &atoms, 0.1, CovMode::Dense).unwrap();
        assert_eq!(
            posterior_cross_cov(&zero, &atoms, &cy0, 2, 5)
                .unwrap()
                .norm(),
            0.0
        );
    }

    #[test]
    fn banded_error_shrinks_with_bandwidth() {
        let n = 128;
        let atoms = bank(n, 3);
        let prior = random_prior(n, 3, 11);
        let y = random_signal(n, 12);
        let dense_cy = assemble_cy(&prior, &atoms, 0.1, CovMode::Dense).unwrap();
        let dense = posterior(&y, &prior, &atoms, &dense_cy, true).unwrap();
        let mut last = f64::INFINITY;
        for bw in [8, 16, 32, 64, 128] {
            let cy = assemble_cy(&prior, &atoms, 0.1, CovMode::Banded { bandwidth: bw }).unwrap();
            let st = posterior(&y, &prior, &atoms, &cy, true).unwrap();
            let err = (0..n)
                .map(|t| (st.means.row(t) - dense.means.row(t)).norm())
                .fold(0.0, f64::max);
            assert!(err <= last, "bandwidth {bw}: {err} > {last}");
            last = err;
            if bw == n {
                assert_eq!(err, 0.0);
                assert_eq!(st.cov_blocks, dense.cov_blocks);
            }
        }
    }

    #[test]
    fn scalar_estimator_report() {
        let cy = ObservationCovariance::from_dense(DMatrix::from_element(1, 1, 2.0), 0.5).unwrap();
        let r = estimator_report(&[3.0], &cy).unwrap();
        assert!((r.bias[0] + 0.5 * 3.0 / 2.0).abs() < 1e-15);
        assert!((r.error_variance_diag[0] - 0.5 * 0.75 * 0.75).abs() < 1e-15);
        assert_eq!(estimator_report(&[0.0], &cy).unwrap().bias, vec![0.0]);
    }
}
