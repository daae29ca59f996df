// Shared fixtures and independent reference computations for integration tests.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use warpscale::prior::PriorBlockDiag;
use warpscale::wavelet::{AtomBank, ScaleGrid, WaveletSpec};
use warpscale::C64;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Small dictionary with `m` log-Gaussian scales spread over `[fs/16, fs/4]`.
pub fn small_bank(n: usize, m: usize, fs: f64) -> (WaveletSpec, AtomBank) {
    let xi0 = fs / 4.0;
    let wavelet = WaveletSpec::log_gaussian(xi0, 0.3).unwrap();
    let grid = ScaleGrid::from_frequency_range(2.0, xi0, fs / 16.0, fs / 4.0, m).unwrap();
    let bank = AtomBank::new(&wavelet, &grid, n, fs).unwrap();
    (wavelet, bank)
}

/// Random Hermitian positive definite blocks `B B^H + 0.05 I`.
pub fn random_prior(n: usize, m: usize, seed: u64) -> PriorBlockDiag {
    let mut r = rng(seed);
    let blocks = (0..n)
        .map(|_| {
            let b = DMatrix::from_fn(m, m, |_, _| {
                C64::new(r.random::<f64>() - 0.5, r.random::<f64>() - 0.5)
            });
            &b * b.adjoint() + DMatrix::identity(m, m) * C64::new(0.05, 0.0)
        })
        .collect();
    PriorBlockDiag::new(blocks).unwrap()
}

pub fn random_signal(n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    (0..n).map(|_| r.random::<f64>() * 2.0 - 1.0).collect()
}

/// Posterior of `w` given `y = Re(sum_n Psi_n w_n) + eps`, obtained by
/// conditioning the stacked real vector `u = [Re w; Im w]` (index
/// `t * M + s`, imaginary parts offset by `N M`) in its joint Gaussian with `y`.
pub struct AugmentedPosterior {
    pub n: usize,
    pub m: usize,
    pub mean_u: nalgebra::DVector<f64>,
    pub cov_u: DMatrix<f64>,
}

impl AugmentedPosterior {
    pub fn new(y: &[f64], prior: &PriorBlockDiag, bank: &AtomBank, sigma2: f64) -> Self {
        let n = bank.len();
        let m = bank.n_scales();
        let d = n * m;
        let idx = |t: usize, s: usize| t * m + s;

        // circular w with E[w w^H] = C: cov(a) = cov(b) = Re C / 2, cov(a, b) = -Im C / 2
        let mut su = DMatrix::<f64>::zeros(2 * d, 2 * d);
        for t in 0..n {
            let c = prior.block(t);
            for i in 0..m {
                for j in 0..m {
                    let (re, im) = (c[(i, j)].re / 2.0, c[(i, j)].im / 2.0);
                    su[(idx(t, i), idx(t, j))] = re;
                    su[(d + idx(t, i), d + idx(t, j))] = re;
                    su[(idx(t, i), d + idx(t, j))] = -im;
                    su[(d + idx(t, i), idx(t, j))] = im;
                }
            }
        }
        // Re(Psi w) = Re(Psi) a - Im(Psi) b
        let mut a = DMatrix::<f64>::zeros(n, 2 * d);
        for t in 0..n {
            let psi = bank.atom_matrix(t).unwrap().values;
            for k in 0..n {
                for s in 0..m {
                    a[(k, idx(t, s))] = psi[(k, s)].re;
                    a[(k, d + idx(t, s))] = -psi[(k, s)].im;
                }
            }
        }
        let cross = &su * a.transpose();
        let cy = &a * &cross + DMatrix::identity(n, n) * sigma2;
        let chol = cy
            .cholesky()
            .expect("joint covariance must be positive definite");
        let yv = nalgebra::DVector::from_column_slice(y);
        let mean_u = &cross * chol.solve(&yv);
        let cov_u = &su - &cross * chol.solve(&cross.transpose());
        AugmentedPosterior {
            n,
            m,
            mean_u,
            cov_u,
        }
    }

    pub fn means(&self) -> DMatrix<C64> {
        let d = self.n * self.m;
        DMatrix::from_fn(self.n, self.m, |t, s| {
            C64::new(self.mean_u[t * self.m + s], self.mean_u[d + t * self.m + s])
        })
    }

    /// `E[(w_t - w~_t)(w_t' - w~_t')^H]`.
    pub fn block(&self, t: usize, t_prime: usize) -> DMatrix<C64> {
        let (m, d) = (self.m, self.n * self.m);
        DMatrix::from_fn(m, m, |i, j| {
            let (ai, aj) = (t * m + i, t_prime * m + j);
            let (bi, bj) = (d + ai, d + aj);
            let re = self.cov_u[(ai, aj)] + self.cov_u[(bi, bj)];
            let im = self.cov_u[(bi, aj)] - self.cov_u[(ai, bj)];
            C64::new(re, im)
        })
    }
}

/// Means (`N x M`) and diagonal posterior blocks from [`AugmentedPosterior`].
pub fn augmented_oracle(
    y: &[f64],
    prior: &PriorBlockDiag,
    bank: &AtomBank,
    sigma2: f64,
) -> (DMatrix<C64>, Vec<DMatrix<C64>>) {
    let post = AugmentedPosterior::new(y, prior, bank, sigma2);
    let blocks = (0..post.n).map(|t| post.block(t, t)).collect();
    (post.means(), blocks)
}

pub fn rel_frobenius(a: &DMatrix<C64>, b: &DMatrix<C64>) -> f64 {
    let diff = (a - b).norm();
    let scale = b.norm().max(1e-300);
    diff / scale
}

/// `Re(sum_n Psi_n w_n)` by explicit summation over the atom matrices.
pub fn naive_synthesis(bank: &AtomBank, coeffs: &DMatrix<C64>) -> Vec<f64> {
    let n = bank.len();
    let mut out = vec![0.0; n];
    for t in 0..n {
        let psi = bank.atom_matrix(t).unwrap().values;
        let w = coeffs.row(t).transpose();
        let v = psi * w;
        for k in 0..n {
            out[k] += v[k].re;
        }
    }
    out
}

/// Dense `C_y = sigma2 I + 1/2 Re(sum_n Psi_n C_n Psi_n^H)` by explicit sums.
pub fn naive_cy(bank: &AtomBank, prior: &PriorBlockDiag, sigma2: f64) -> DMatrix<f64> {
    let n = bank.len();
    let mut out = DMatrix::<f64>::identity(n, n) * sigma2;
    for t in 0..n {
        let psi = bank.atom_matrix(t).unwrap().values;
        let g = &psi * prior.block(t) * psi.adjoint();
        out += g.map(|v| v.re / 2.0);
    }
    out
}
