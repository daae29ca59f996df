//! Translation-family prior covariances.
//!
//! Every time sample `n` gets the `M x M` block
//! `[C(theta_n)]_{mm'} = f(s_m + theta_n, s_m' + theta_n)` where `f` is either
//! driven by a power spectrum through the wavelet,
//!
//! ```text
//! f(s, s') = q^{(s+s')/2} int S(xi) conj(psi_hat(q^s xi)) psi_hat(q^s' xi) dxi,
//! ```
//!
//! a sharply concentrated diagonal function, or a user table. Blocks are
//! stored individually; the block-diagonal prior is never materialized.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::wavelet::{ScaleGrid, WaveletFamily, WaveletSpec, C64};

/// Default relative ridge used by the PSD repair.
pub const DEFAULT_RIDGE_EPS: f64 = 1e-10;

/// Discretized one-sided power spectrum on strictly increasing positive
/// frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorSpectrum {
    freqs: Vec<f64>,
    values: Vec<f64>,
}

impl PriorSpectrum {
    pub fn new(freqs: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if freqs.is_empty() {
            return Err(Error::InvalidInput("spectrum grid is empty".into()));
        }
        if freqs.len() != values.len() {
            return Err(Error::Dimension(format!(
                "spectrum has {} frequencies and {} values",
                freqs.len(),
                values.len()
            )));
        }
        if freqs.iter().chain(values.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("spectrum".into()));
        }
        if freqs[0] <= 0.0 || freqs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput(
                "spectrum frequencies must be positive and strictly increasing".into(),
            ));
        }
        if values.iter().any(|v| *v < 0.0) {
            return Err(Error::InvalidInput(
                "spectrum values must be nonnegative".into(),
            ));
        }
        Ok(PriorSpectrum { freqs, values })
    }

    /// `count` frequencies `k fs / (2 count)`, `k = 1..=count`.
    pub fn half_band_grid(fs: f64, count: usize) -> Vec<f64> {
        (1..=count)
            .map(|k| k as f64 * fs / (2.0 * count as f64))
            .collect()
    }

    pub fn flat(fs: f64, count: usize, level: f64) -> Result<Self> {
        PriorSpectrum::new(PriorSpectrum::half_band_grid(fs, count), vec![level; count])
    }

    /// Sum of two non-overlapping Hann bumps centered at `fs/16` and `fs/6`,
    /// each `fs/32` wide.
    pub fn two_hann(fs: f64, count: usize) -> Result<Self> {
        let freqs = PriorSpectrum::half_band_grid(fs, count);
        let width = fs / 32.0;
        let values = freqs
            .iter()
            .map(|&f| hann_bump(f, fs / 16.0, width) + hann_bump(f, fs / 6.0, width))
            .collect();
        PriorSpectrum::new(freqs, values)
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }

    /// Linear interpolation; zero outside the tabulated range.
    pub fn value_at(&self, xi: f64) -> f64 {
        let f = &self.freqs;
        if xi < f[0] || xi > f[f.len() - 1] {
            return 0.0;
        }
        match f.binary_search_by(|v| v.partial_cmp(&xi).unwrap()) {
            Ok(i) => self.values[i],
            Err(i) => {
                let t = (xi - f[i - 1]) / (f[i] - f[i - 1]);
                self.values[i - 1] * (1.0 - t) + self.values[i] * t
            }
        }
    }

    /// Trapezoidal weights on the spectrum's own grid.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        trapezoid_weights(&self.freqs)
    }

    /// `int S(xi) dxi` by the trapezoidal rule.
    pub fn total_power(&self) -> f64 {
        self.trapezoid_weights()
            .iter()
            .zip(&self.values)
            .map(|(w, v)| w * v)
            .sum()
    }

    pub fn scaled(&self, factor: f64) -> PriorSpectrum {
        PriorSpectrum {
            freqs: self.freqs.clone(),
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }

    /// Frequency of the largest value.
    pub fn peak_frequency(&self) -> f64 {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        self.freqs[best]
    }
}

fn hann_bump(f: f64, center: f64, width: f64) -> f64 {
    let u = (f - center) / width;
    if u.abs() >= 0.5 {
        0.0
    } else {
        (std::f64::consts::PI * u).cos().powi(2)
    }
}

pub fn trapezoid_weights(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n == 1 {
        return vec![0.0];
    }
    let mut w = vec![0.0; n];
    for i in 0..n - 1 {
        let h = 0.5 * (x[i + 1] - x[i]);
        w[i] += h;
        w[i + 1] += h;
    }
    w
}

/// Direct trapezoidal quadrature of the spectrum-driven covariance function
/// for any wavelet family.
pub fn covariance_from_spectrum(
    spec: &WaveletSpec,
    spectrum: &PriorSpectrum,
    q: f64,
    s: f64,
    s_prime: f64,
) -> Result<C64> {
    if spectrum.is_empty() {
        return Err(Error::InvalidInput("spectrum grid is empty".into()));
    }
    let qs = q.powf(s);
    let qs2 = q.powf(s_prime);
    let weights = spectrum.trapezoid_weights();
    let mut acc = C64::new(0.0, 0.0);
    for ((xi, v), w) in spectrum.freqs().iter().zip(spectrum.values()).zip(&weights) {
        if *v == 0.0 {
            continue;
        }
        acc += spec.fourier(qs * xi).conj() * spec.fourier(qs2 * xi) * (v * w);
    }
    Ok(acc * (qs * qs2).sqrt())
}

/// Sharp diagonal covariance `exp(-(s - varsigma)^2 / sigma_s^2) delta_{ss'}`.
pub fn sharp_covariance(varsigma: f64, sigma_s: f64, s: f64, s_prime: f64) -> Result<f64> {
    if !(sigma_s > 0.0) {
        return Err(Error::Config(format!(
            "sigma_s must be positive, got {sigma_s}"
        )));
    }
    if s != s_prime {
        return Ok(0.0);
    }
    let u = (s - varsigma) / sigma_s;
    Ok((-u * u).exp())
}

/// Scale placement of a sharp prior for a tone at `nu1` Hz: `log_q(xi0 / nu1)`.
pub fn sharp_center_for_tone(q: f64, xi0: f64, nu1: f64) -> f64 {
    (xi0 / nu1).ln() / q.ln()
}

/// Spectrum-driven covariance function with the quadrature nodes cached.
#[derive(Debug, Clone)]
pub struct SpectrumCovariance {
    wavelet: WaveletSpec,
    spectrum: PriorSpectrum,
    q: f64,
    // (ln(xi_k / xi0), trapezoid weight * S_k) for nonzero S_k.
    nodes: Vec<(f64, f64)>,
}

impl SpectrumCovariance {
    pub fn new(wavelet: WaveletSpec, spectrum: PriorSpectrum, q: f64) -> Result<Self> {
        if !(q > 1.0) {
            return Err(Error::Config(format!("scale base q must be > 1, got {q}")));
        }
        let weights = spectrum.trapezoid_weights();
        let nodes = spectrum
            .freqs()
            .iter()
            .zip(spectrum.values())
            .zip(&weights)
            .filter(|((_, v), w)| **v * **w != 0.0)
            .map(|((xi, v), w)| ((xi / wavelet.xi0).ln(), v * w))
            .collect();
        Ok(SpectrumCovariance {
            wavelet,
            spectrum,
            q,
            nodes,
        })
    }

    pub fn wavelet(&self) -> &WaveletSpec {
        &self.wavelet
    }

    pub fn spectrum(&self) -> &PriorSpectrum {
        &self.spectrum
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    /// `g(c) = sum_k W_k exp(-(u_k + c ln q)^2 / b^2)` and its derivative,
    /// the midpoint profile of the log-Gaussian family.
    fn midpoint_profile(&self, c: f64) -> (f64, f64) {
        let b2 = self.wavelet.bandwidth * self.wavelet.bandwidth;
        let ln_q = self.q.ln();
        let shift = c * ln_q;
        let mut g = 0.0;
        let mut dg = 0.0;
        for &(u, w) in &self.nodes {
            let a = u + shift;
            let e = w * (-a * a / b2).exp();
            g += e;
            dg += e * a;
        }
        (g, -2.0 * ln_q / b2 * dg)
    }

    /// `f(s, s')`.
    pub fn eval(&self, s: f64, s_prime: f64) -> C64 {
        match self.wavelet.family {
            WaveletFamily::LogGaussian => {
                // (u+a)^2 + (u+a')^2 = 2 (u + (a+a')/2)^2 + (a-a')^2 / 2
                let ln_q = self.q.ln();
                let b = self.wavelet.bandwidth;
                let c = 0.5 * (s + s_prime);
                let d = (s - s_prime) * ln_q;
                let (g, _) = self.midpoint_profile(c);
                C64::new((c * ln_q - d * d / (4.0 * b * b)).exp() * g, 0.0)
            }
            WaveletFamily::Tabulated { .. } => {
                covariance_from_spectrum(&self.wavelet, &self.spectrum, self.q, s, s_prime)
                    .unwrap_or(C64::new(0.0, 0.0))
            }
        }
    }

    /// `d/dtheta f(s + theta, s' + theta)` at `theta = 0`.
    pub fn eval_shift_derivative(&self, s: f64, s_prime: f64) -> C64 {
        match self.wavelet.family {
            WaveletFamily::LogGaussian => {
                let ln_q = self.q.ln();
                let b = self.wavelet.bandwidth;
                let c = 0.5 * (s + s_prime);
                let d = (s - s_prime) * ln_q;
                let (g, dg) = self.midpoint_profile(c);
                let pre = (c * ln_q - d * d / (4.0 * b * b)).exp();
                C64::new(pre * (ln_q * g + dg), 0.0)
            }
            WaveletFamily::Tabulated { .. } => {
                let h = 1e-6;
                (self.eval(s + h, s_prime + h) - self.eval(s - h, s_prime - h)) / (2.0 * h)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SharpCovariance {
    pub varsigma: f64,
    pub sigma_s: f64,
    /// Overall variance scale; the bare sharp function has unit peak.
    pub gain: f64,
}

impl SharpCovariance {
    pub fn new(varsigma: f64, sigma_s: f64, gain: f64) -> Result<Self> {
        if !(sigma_s > 0.0) {
            return Err(Error::Config(format!(
                "sigma_s must be positive, got {sigma_s}"
            )));
        }
        if !(gain > 0.0 && gain.is_finite()) || !varsigma.is_finite() {
            return Err(Error::Config(
                "sharp prior needs finite varsigma and positive gain".into(),
            ));
        }
        Ok(SharpCovariance {
            varsigma,
            sigma_s,
            gain,
        })
    }

    fn diag(&self, s: f64) -> f64 {
        let u = (s - self.varsigma) / self.sigma_s;
        self.gain * (-u * u).exp()
    }

    fn diag_derivative(&self, s: f64) -> f64 {
        -2.0 * (s - self.varsigma) / (self.sigma_s * self.sigma_s) * self.diag(s)
    }
}

/// `f` given on a square scale grid, bilinearly interpolated. Arguments
/// outside the table are clamped to the boundary and counted.
#[derive(Debug)]
pub struct TabulatedCovariance {
    scales: Vec<f64>,
    values: DMatrix<C64>,
    clamped: AtomicUsize,
}

impl Clone for TabulatedCovariance {
    fn clone(&self) -> Self {
        TabulatedCovariance {
            scales: self.scales.clone(),
            values: self.values.clone(),
            clamped: AtomicUsize::new(self.clamped.load(Ordering::Relaxed)),
        }
    }
}

impl TabulatedCovariance {
    pub fn new(scales: Vec<f64>, values: DMatrix<C64>) -> Result<Self> {
        let n = scales.len();
        if n < 2 || values.nrows() != n || values.ncols() != n {
            return Err(Error::Dimension(
                "tabulated covariance must be a square table with >= 2 scales".into(),
            ));
        }
        if scales.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "tabulated covariance scales must be strictly increasing".into(),
            ));
        }
        let scale = values.iter().map(|v| v.norm()).fold(0.0, f64::max);
        for i in 0..n {
            for j in 0..n {
                if (values[(i, j)] - values[(j, i)].conj()).norm() > 1e-12 * scale.max(1e-300) {
                    return Err(Error::InvalidInput(
                        "tabulated covariance is not Hermitian".into(),
                    ));
                }
            }
        }
        Ok(TabulatedCovariance {
            scales,
            values,
            clamped: AtomicUsize::new(0),
        })
    }

    /// Number of evaluations that fell outside the table and were clamped.
    pub fn clamped_evaluations(&self) -> usize {
        self.clamped.load(Ordering::Relaxed)
    }

    fn locate(&self, s: f64) -> (usize, f64) {
        let sc = &self.scales;
        let last = sc.len() - 1;
        if s <= sc[0] || s >= sc[last] {
            if (s < sc[0] || s > sc[last]) && self.clamped.fetch_add(1, Ordering::Relaxed) == 0 {
                log::warn!("tabulated covariance evaluated outside its scale range; clamping");
            }
            return if s <= sc[0] {
                (0, 0.0)
            } else {
                (last - 1, 1.0)
            };
        }
        let i = sc.partition_point(|v| *v <= s) - 1;
        (i, (s - sc[i]) / (sc[i + 1] - sc[i]))
    }

    pub fn eval(&self, s: f64, s_prime: f64) -> C64 {
        let (i, t) = self.locate(s);
        let (j, u) = self.locate(s_prime);
        let v = &self.values;
        v[(i, j)] * ((1.0 - t) * (1.0 - u))
            + v[(i + 1, j)] * (t * (1.0 - u))
            + v[(i, j + 1)] * ((1.0 - t) * u)
            + v[(i + 1, j + 1)] * (t * u)
    }
}

#[derive(Debug, Clone)]
pub enum CovarianceFunction {
    Spectrum(SpectrumCovariance),
    Sharp(SharpCovariance),
    Tabulated(TabulatedCovariance),
}

impl CovarianceFunction {
    pub fn spectrum(wavelet: WaveletSpec, spectrum: PriorSpectrum, q: f64) -> Result<Self> {
        Ok(CovarianceFunction::Spectrum(SpectrumCovariance::new(
            wavelet, spectrum, q,
        )?))
    }

    pub fn sharp(varsigma: f64, sigma_s: f64, gain: f64) -> Result<Self> {
        Ok(CovarianceFunction::Sharp(SharpCovariance::new(
            varsigma, sigma_s, gain,
        )?))
    }

    /// Pointwise `f(s, s')`. The sharp kind uses exact float equality for the
    /// Kronecker delta; blocks compare grid indices instead.
    pub fn eval(&self, s: f64, s_prime: f64) -> C64 {
        match self {
            CovarianceFunction::Spectrum(c) => c.eval(s, s_prime),
            CovarianceFunction::Sharp(c) => {
                if s == s_prime {
                    C64::new(c.diag(s), 0.0)
                } else {
                    C64::new(0.0, 0.0)
                }
            }
            CovarianceFunction::Tabulated(c) => c.eval(s, s_prime),
        }
    }

    /// Same function with its variance multiplied by `factor`.
    pub fn rescaled(&self, factor: f64) -> Result<CovarianceFunction> {
        Ok(match self {
            CovarianceFunction::Spectrum(c) => {
                CovarianceFunction::spectrum(c.wavelet.clone(), c.spectrum.scaled(factor), c.q)?
            }
            CovarianceFunction::Sharp(c) => {
                CovarianceFunction::sharp(c.varsigma, c.sigma_s, c.gain * factor)?
            }
            CovarianceFunction::Tabulated(c) => CovarianceFunction::Tabulated(
                TabulatedCovariance::new(c.scales.clone(), c.values.map(|v| v * factor))?,
            ),
        })
    }
}

/// Per-sample scale shifts `theta_n` (log_q units; dilation factor `q^theta`).
#[derive(Debug, Clone, PartialEq)]
pub struct WarpSequence {
    thetas: Vec<f64>,
}

impl WarpSequence {
    pub fn new(thetas: Vec<f64>) -> Result<Self> {
        if thetas.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("warp sequence".into()));
        }
        Ok(WarpSequence { thetas })
    }

    pub fn zeros(len: usize) -> Self {
        WarpSequence {
            thetas: vec![0.0; len],
        }
    }

    pub fn constant(len: usize, theta: f64) -> Self {
        WarpSequence {
            thetas: vec![theta; len],
        }
    }

    /// `theta_n = log_q(gamma'(tau_n))` from sampled warp derivatives.
    pub fn from_derivatives(derivs: &[f64], q: f64) -> Result<Self> {
        if derivs.iter().any(|d| !(*d > 0.0)) {
            return Err(Error::InvalidInput(
                "warp derivative must be positive".into(),
            ));
        }
        WarpSequence::new(derivs.iter().map(|d| d.ln() / q.ln()).collect())
    }

    pub fn thetas(&self) -> &[f64] {
        &self.thetas
    }

    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }
}

/// The `N` diagonal blocks `C_1 ... C_N` of the prior covariance.
#[derive(Debug, Clone)]
pub struct PriorBlockDiag {
    blocks: Vec<DMatrix<C64>>,
}

impl PriorBlockDiag {
    pub fn new(blocks: Vec<DMatrix<C64>>) -> Result<Self> {
        let Some(first) = blocks.first() else {
            return Err(Error::InvalidInput("prior needs at least one block".into()));
        };
        let m = first.nrows();
        if blocks.iter().any(|b| b.nrows() != m || b.ncols() != m) {
            return Err(Error::Dimension(
                "prior blocks must all be square with equal size".into(),
            ));
        }
        Ok(PriorBlockDiag { blocks })
    }

    /// All-zero prior.
    pub fn zeros(len: usize, scales: usize) -> Self {
        PriorBlockDiag {
            blocks: vec![DMatrix::zeros(scales, scales); len],
        }
    }

    pub fn blocks(&self) -> &[DMatrix<C64>] {
        &self.blocks
    }

    pub fn block(&self, n: usize) -> &DMatrix<C64> {
        &self.blocks[n]
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn n_scales(&self) -> usize {
        self.blocks[0].nrows()
    }

    /// Number of stored complex entries (`N M^2`).
    pub fn stored_entries(&self) -> usize {
        self.blocks.iter().map(|b| b.len()).sum()
    }

    pub fn scaled(&self, factor: f64) -> PriorBlockDiag {
        PriorBlockDiag {
            blocks: self
                .blocks
                .iter()
                .map(|b| b * C64::new(factor, 0.0))
                .collect(),
        }
    }
}

/// Covariance function bound to a scale grid together with the PSD repair
/// threshold.
#[derive(Debug, Clone)]
pub struct PriorModel {
    pub f: CovarianceFunction,
    pub grid: ScaleGrid,
    pub ridge_eps: f64,
}

impl PriorModel {
    pub fn new(f: CovarianceFunction, grid: ScaleGrid) -> Self {
        PriorModel {
            f,
            grid,
            ridge_eps: DEFAULT_RIDGE_EPS,
        }
    }

    pub fn with_ridge(mut self, ridge_eps: f64) -> Self {
        self.ridge_eps = ridge_eps;
        self
    }

    /// `[C(theta)]_{mm'} = f(s_m + theta, s_m' + theta)` without repair.
    pub fn raw_block(&self, theta: f64) -> DMatrix<C64> {
        let s = self.grid.scales();
        let m = s.len();
        match &self.f {
            CovarianceFunction::Sharp(c) => DMatrix::from_fn(m, m, |i, j| {
                if i == j {
                    C64::new(c.diag(s[i] + theta), 0.0)
                } else {
                    C64::new(0.0, 0.0)
                }
            }),
            f => {
                let mut out = DMatrix::zeros(m, m);
                for i in 0..m {
                    for j in i..m {
                        let v = f.eval(s[i] + theta, s[j] + theta);
                        out[(i, j)] = v;
                        out[(j, i)] = v.conj();
                    }
                }
                out
            }
        }
    }

    fn raw_block_derivative(&self, theta: f64) -> DMatrix<C64> {
        let s = self.grid.scales();
        let m = s.len();
        match &self.f {
            CovarianceFunction::Sharp(c) => DMatrix::from_fn(m, m, |i, j| {
                if i == j {
                    C64::new(c.diag_derivative(s[i] + theta), 0.0)
                } else {
                    C64::new(0.0, 0.0)
                }
            }),
            CovarianceFunction::Spectrum(c) => {
                let mut out = DMatrix::zeros(m, m);
                for i in 0..m {
                    for j in i..m {
                        let v = c.eval_shift_derivative(s[i] + theta, s[j] + theta);
                        out[(i, j)] = v;
                        out[(j, i)] = v.conj();
                    }
                }
                out
            }
            CovarianceFunction::Tabulated(_) => {
                let h = 1e-6;
                (self.raw_block(theta + h) - self.raw_block(theta - h)) / C64::new(2.0 * h, 0.0)
            }
        }
    }

    /// Repaired block: Hermitian, with a ridge when it is indefinite or
    /// numerically singular.
    pub fn block(&self, theta: f64) -> Result<DMatrix<C64>> {
        let raw = self.raw_block(theta);
        check_finite(&raw, theta)?;
        Ok(repair_psd(raw, None, self.ridge_eps).0)
    }

    /// Repaired block and its derivative with respect to `theta`.
    pub fn block_with_derivative(&self, theta: f64) -> Result<(DMatrix<C64>, DMatrix<C64>)> {
        let raw = self.raw_block(theta);
        check_finite(&raw, theta)?;
        let d = self.raw_block_derivative(theta);
        let (c, dc) = repair_psd(raw, Some(d), self.ridge_eps);
        Ok((c, dc.expect("derivative requested")))
    }

    /// Maps [`PriorModel::block`] over the warp sequence; identical shifts
    /// share one evaluation.
    pub fn build_prior(&self, thetas: &WarpSequence) -> Result<PriorBlockDiag> {
        let mut cache: HashMap<u64, DMatrix<C64>> = HashMap::new();
        let mut blocks = Vec::with_capacity(thetas.len());
        for &t in thetas.thetas() {
            let key = t.to_bits();
            let b = match cache.get(&key) {
                Some(b) => b.clone(),
                None => {
                    let b = self.block(t)?;
                    cache.insert(key, b.clone());
                    b
                }
            };
            blocks.push(b);
        }
        PriorBlockDiag::new(blocks)
    }
}

fn check_finite(m: &DMatrix<C64>, theta: f64) -> Result<()> {
    if m.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::NonFinite(format!("prior block at theta = {theta}")));
    }
    Ok(())
}

/// Symmetrizes `c` and adds `ridge_eps * trace / M` (plus the magnitude of
/// any negative eigenvalue) when the smallest eigenvalue falls below
/// `ridge_eps` times the largest. The optional derivative is carried through
/// the same map.
pub fn repair_psd(
    c: DMatrix<C64>,
    dc: Option<DMatrix<C64>>,
    ridge_eps: f64,
) -> (DMatrix<C64>, Option<DMatrix<C64>>) {
    let m = c.nrows();
    let half = C64::new(0.5, 0.0);
    let mut h = (&c + c.adjoint()) * half;
    let mut dh = dc.map(|d| (&d + d.adjoint()) * half);

    let eig = SymmetricEigen::new(h.clone());
    let (imin, lmin) =
        eig.eigenvalues
            .iter()
            .enumerate()
            .fold(
                (0, f64::INFINITY),
                |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc },
            );
    let lmax = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    if lmax <= 0.0 && lmin >= 0.0 {
        // zero block: nothing to repair
        return (h, dh);
    }
    if lmin >= ridge_eps * lmax {
        return (h, dh);
    }
    let trace: f64 = (0..m).map(|i| h[(i, i)].re).sum();
    let mut ridge = ridge_eps * trace.max(0.0) / m as f64;
    let negative = lmin < 0.0;
    if negative {
        ridge -= lmin;
    }
    if ridge <= 0.0 {
        ridge = ridge_eps * lmax.abs();
    }
    for i in 0..m {
        h[(i, i)] += ridge;
    }
    if let Some(d) = dh.as_mut() {
        let dtrace: f64 = (0..m).map(|i| d[(i, i)].re).sum();
        let mut dridge = ridge_eps * dtrace / m as f64;
        if negative {
            let v = eig.eigenvectors.column(imin);
            let dl = (v.adjoint() * &*d * v)[(0, 0)].re;
            dridge -= dl;
        }
        for i in 0..m {
            d[(i, i)] += dridge;
        }
    }
    (h, dh)
}
