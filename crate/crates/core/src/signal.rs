//! Test-signal generation and evaluation metrics.
//!
//! Stationary Gaussian draws by circulant embedding, time warping
//! `y(t) = sqrt(gamma'(t)) x(gamma(t))` with band-limited periodic
//! interpolation, locally harmonic signals `A(t) cos(2 pi phi(t))`, additive
//! noise at an exact realized SNR, and the SNR / warp / entropy metrics.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::prior::PriorSpectrum;
use crate::wavelet::{positive_bin_frequency, C64};

/// Output SNR reported for an exact reconstruction.
pub const SNR_CAP_DB: f64 = 300.0;

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Smooth strictly increasing time change `gamma` with `gamma(0) = 0`.
#[derive(Debug, Clone, PartialEq)]
pub enum WarpFunction {
    Identity,
    /// `gamma(t) = slope * t`.
    Linear {
        slope: f64,
    },
    /// `gamma'(t) = (1 + a exp(-b t) sin(2 pi c t)) / norm`, with `norm`
    /// chosen so that `gamma(duration) = duration`.
    DampedSine {
        amplitude: f64,
        decay: f64,
        freq: f64,
        duration: f64,
        norm: f64,
    },
    /// Piecewise-linear `gamma'` on `times`; `gamma` is its exact integral
    /// (`values[i] = gamma(times[i])`). Constant extrapolation of `gamma'`.
    TabulatedDerivative {
        times: Vec<f64>,
        derivs: Vec<f64>,
        values: Vec<f64>,
    },
}

impl WarpFunction {
    pub fn linear(slope: f64) -> Result<Self> {
        if !(slope > 0.0 && slope.is_finite()) {
            return Err(Error::Config(format!(
                "linear warp slope must be positive, got {slope}"
            )));
        }
        Ok(WarpFunction::Linear { slope })
    }

    pub fn damped_sine(amplitude: f64, decay: f64, freq: f64, duration: f64) -> Result<Self> {
        if !(amplitude.abs() < 1.0) || !(decay >= 0.0) || !freq.is_finite() || !(duration > 0.0) {
            return Err(Error::Config(format!(
                "damped-sine warp needs |a| < 1, b >= 0, finite c and T > 0 (a={amplitude}, b={decay}, c={freq}, T={duration})"
            )));
        }
        let raw = duration + amplitude * damped_sine_integral(decay, 2.0 * PI * freq, duration);
        Ok(WarpFunction::DampedSine {
            amplitude,
            decay,
            freq,
            duration,
            norm: raw / duration,
        })
    }

    /// `a = 0.4`, `b = 2/T`, `c = 3/T`.
    pub fn default_damped_sine(duration: f64) -> Result<Self> {
        WarpFunction::damped_sine(0.4, 2.0 / duration, 3.0 / duration, duration)
    }

    pub fn tabulated(times: Vec<f64>, derivs: Vec<f64>) -> Result<Self> {
        if times.len() < 2 || times.len() != derivs.len() {
            return Err(Error::Config(
                "tabulated warp needs >= 2 (time, derivative) pairs".into(),
            ));
        }
        if times.windows(2).any(|w| !(w[0] < w[1])) || times[0] != 0.0 {
            return Err(Error::Config(
                "tabulated warp times must start at 0 and increase strictly".into(),
            ));
        }
        if derivs.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return Err(Error::InvalidInput(
                "warp derivative must be positive: gamma is not monotone".into(),
            ));
        }
        let mut values = vec![0.0; times.len()];
        for i in 1..times.len() {
            values[i] =
                values[i - 1] + 0.5 * (derivs[i - 1] + derivs[i]) * (times[i] - times[i - 1]);
        }
        Ok(WarpFunction::TabulatedDerivative {
            times,
            derivs,
            values,
        })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            WarpFunction::Identity => "identity",
            WarpFunction::Linear { .. } => "linear",
            WarpFunction::DampedSine { .. } => "damped-sine",
            WarpFunction::TabulatedDerivative { .. } => "tabulated",
        }
    }

    /// `gamma'(t)`.
    pub fn derivative(&self, t: f64) -> f64 {
        match self {
            WarpFunction::Identity => 1.0,
            WarpFunction::Linear { slope } => *slope,
            WarpFunction::DampedSine {
                amplitude,
                decay,
                freq,
                norm,
                ..
            } => (1.0 + amplitude * (-decay * t).exp() * (2.0 * PI * freq * t).sin()) / norm,
            WarpFunction::TabulatedDerivative { times, derivs, .. } => {
                let (i, u) = locate(times, t);
                match u {
                    None => derivs[i],
                    Some(u) => derivs[i] * (1.0 - u) + derivs[i + 1] * u,
                }
            }
        }
    }

    /// `gamma(t)`.
    pub fn value(&self, t: f64) -> f64 {
        match self {
            WarpFunction::Identity => t,
            WarpFunction::Linear { slope } => slope * t,
            WarpFunction::DampedSine {
                amplitude,
                decay,
                freq,
                norm,
                ..
            } => (t + amplitude * damped_sine_integral(*decay, 2.0 * PI * freq, t)) / norm,
            WarpFunction::TabulatedDerivative {
                times,
                derivs,
                values,
            } => {
                let (i, u) = locate(times, t);
                match u {
                    None if t <= times[0] => values[0] + derivs[0] * (t - times[0]),
                    None => values[i] + derivs[i] * (t - times[i]),
                    Some(u) => {
                        let h = times[i + 1] - times[i];
                        let x = u * h;
                        let slope = (derivs[i + 1] - derivs[i]) / h;
                        values[i] + derivs[i] * x + 0.5 * slope * x * x
                    }
                }
            }
        }
    }

    /// Tabulated inverse `gamma^{-1}` on `points` nodes over `[0, gamma(duration)]`.
    pub fn inverse(&self, duration: f64, points: usize) -> Result<WarpFunction> {
        let points = points.max(2);
        let end = self.value(duration);
        let mut times = Vec::with_capacity(points);
        let mut derivs = Vec::with_capacity(points);
        for i in 0..points {
            let u = end * i as f64 / (points - 1) as f64;
            let t = self.solve_value(u, duration)?;
            times.push(u);
            derivs.push(1.0 / self.derivative(t));
        }
        WarpFunction::tabulated(times, derivs)
    }

    /// `t` with `gamma(t) = u`, by bisection on `[0, duration]` widened as needed.
    fn solve_value(&self, u: f64, duration: f64) -> Result<f64> {
        let (mut lo, mut hi) = (0.0, duration.max(1e-12));
        while self.value(hi) < u {
            hi *= 2.0;
            if !hi.is_finite() {
                return Err(Error::NonFinite("warp inverse".into()));
            }
        }
        while self.value(lo) > u {
            lo -= hi - lo;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.value(mid) < u {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * hi.abs().max(1.0) {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// `gamma'(n / fs)`, `n = 0..len`.
    pub fn sampled_derivative(&self, len: usize, fs: f64) -> Vec<f64> {
        (0..len).map(|n| self.derivative(n as f64 / fs)).collect()
    }
}

/// `int_0^t exp(-b u) sin(w u) du`.
fn damped_sine_integral(b: f64, w: f64, t: f64) -> f64 {
    let den = b * b + w * w;
    if den == 0.0 {
        return 0.0;
    }
    (w - (-b * t).exp() * (b * (w * t).sin() + w * (w * t).cos())) / den
}

/// Interval index and fraction; `None` outside the table.
fn locate(x: &[f64], t: f64) -> (usize, Option<f64>) {
    let last = x.len() - 1;
    if t <= x[0] {
        return (0, None);
    }
    if t >= x[last] {
        return (last, None);
    }
    let i = x.partition_point(|v| *v <= t) - 1;
    (i, Some((t - x[i]) / (x[i + 1] - x[i])))
}

/// Circulant-embedding draw of a real stationary process with one-sided
/// spectrum `S`: independent `Z_j ~ CN(0, 2 S(xi_j) fs / N)` on the positive
/// bins, `x = Re(sum_j Z_j e^{2 pi i j n / N})`, so `var(x) ~ int S`.
pub fn sample_stationary(
    spectrum: &PriorSpectrum,
    len: usize,
    fs: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    if len < 2 || !(fs > 0.0) {
        return Err(Error::InvalidInput(format!(
            "need N >= 2 and fs > 0 (N = {len}, fs = {fs})"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let mut z = vec![C64::new(0.0, 0.0); len];
    for (j, v) in z.iter_mut().enumerate() {
        if let Some(xi) = positive_bin_frequency(j, len, fs) {
            let var = 2.0 * spectrum.value_at(xi) * fs / len as f64;
            let sd = (0.5 * var).sqrt();
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            *v = C64::new(sd * re, sd * im);
        }
    }
    FftPlanner::new().plan_fft_inverse(len).process(&mut z);
    Ok(z.into_iter().map(|v| v.re).collect())
}

/// Band-limited periodic interpolant of `x` evaluated at arbitrary times (seconds).
pub fn periodic_interpolate(x: &[f64], fs: f64, times: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut spec: Vec<C64> = x.iter().map(|v| C64::new(*v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut spec);
    let kmax = (n - 1) / 2;
    let nyquist = if n.is_multiple_of(2) {
        Some(spec[n / 2].re)
    } else {
        None
    };
    let scale = 1.0 / n as f64;
    times
        .iter()
        .map(|&t| {
            let phase = 2.0 * PI * t * fs / n as f64;
            let step = C64::new(phase.cos(), phase.sin());
            let mut rot = step;
            let mut acc = 0.0;
            for (k, c) in spec.iter().enumerate().take(kmax + 1).skip(1) {
                acc += (c * rot).re;
                // re-anchor the recurrence periodically to bound drift
                rot = if k % 64 == 63 {
                    let a = phase * (k + 1) as f64;
                    C64::new(a.cos(), a.sin())
                } else {
                    rot * step
                };
            }
            let mut v = spec[0].re + 2.0 * acc;
            if let Some(ny) = nyquist {
                v += ny * (PI * t * fs).cos();
            }
            v * scale
        })
        .collect()
}

/// `sqrt(gamma'(tau_n)) x(gamma(tau_n))` with periodic band-limited interpolation.
pub fn apply_warp(x: &[f64], warp: &WarpFunction, fs: f64) -> Result<Vec<f64>> {
    if x.len() < 2 {
        return Err(Error::InvalidInput(
            "warp input needs at least 2 samples".into(),
        ));
    }
    let n = x.len();
    let times: Vec<f64> = (0..n).map(|k| k as f64 / fs).collect();
    let derivs: Vec<f64> = times.iter().map(|&t| warp.derivative(t)).collect();
    if derivs.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
        return Err(Error::InvalidInput(
            "warp derivative must be positive: gamma is not monotone".into(),
        ));
    }
    let warped: Vec<f64> = times.iter().map(|&t| warp.value(t)).collect();
    if warped.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidInput(
            "gamma is not strictly increasing on the sample grid".into(),
        ));
    }
    let values = periodic_interpolate(x, fs, &warped);
    Ok(values
        .iter()
        .zip(&derivs)
        .map(|(v, d)| d.sqrt() * v)
        .collect())
}

/// `A(t) cos(2 pi phi(t))` with `phi` the cumulative trapezoid integral of `phi'`.
pub fn make_locally_harmonic(amplitude: &[f64], phi_prime: &[f64], fs: f64) -> Result<Vec<f64>> {
    if amplitude.len() != phi_prime.len() {
        return Err(Error::Dimension(format!(
            "amplitude has {} samples, instantaneous frequency {}",
            amplitude.len(),
            phi_prime.len()
        )));
    }
    if phi_prime.iter().any(|v| !(*v > 0.0)) || amplitude.iter().any(|a| !(*a >= 0.0)) {
        return Err(Error::InvalidInput("need phi' > 0 and A >= 0".into()));
    }
    let mut phase = 0.0;
    let mut out = Vec::with_capacity(amplitude.len());
    for i in 0..amplitude.len() {
        if i > 0 {
            phase += 0.5 * (phi_prime[i - 1] + phi_prime[i]) / fs;
        }
        out.push(amplitude[i] * (2.0 * PI * phase).cos());
    }
    Ok(out)
}

/// Piecewise-smooth fast-varying instantaneous frequency (a synthetic
/// surrogate for a measured rhythm): levels drawn in `[0.75, 1.35] * base`,
/// held for 2 to 6 s, joined by raised-cosine transitions of `transition` seconds.
pub fn fast_frequency_profile(
    len: usize,
    fs: f64,
    base: f64,
    transition: f64,
    seed: u64,
) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    let duration = len as f64 / fs;
    let mut knots = vec![(0.0, base * rng.random_range(0.75..1.35))];
    let mut t = 0.0;
    while t < duration {
        t += rng.random_range(2.0..6.0);
        knots.push((t, base * rng.random_range(0.75..1.35)));
    }
    (0..len)
        .map(|n| {
            let t = n as f64 / fs;
            let i = knots.partition_point(|k| k.0 <= t) - 1;
            let (start, level) = knots[i];
            let prev = if i == 0 { level } else { knots[i - 1].1 };
            let u = ((t - start) / transition).min(1.0);
            let w = 0.5 - 0.5 * (PI * u).cos();
            prev + (level - prev) * w
        })
        .collect()
}

/// `1 + depth sin(2 pi t / period)`.
pub fn slow_amplitude(len: usize, fs: f64, depth: f64, period: f64) -> Vec<f64> {
    (0..len)
        .map(|n| 1.0 + depth * (2.0 * PI * n as f64 / (fs * period)).sin())
        .collect()
}

/// Adds white Gaussian noise scaled so that the realized SNR is exactly
/// `snr_db`; returns the noisy signal and `sigma2 = |eps|^2 / N`.
pub fn add_noise(y0: &[f64], snr_db: f64, seed: u64) -> Result<(Vec<f64>, f64)> {
    let energy: f64 = y0.iter().map(|v| v * v).sum();
    if energy == 0.0 {
        return Err(Error::InvalidInput(
            "cannot set an SNR on a zero signal".into(),
        ));
    }
    if !snr_db.is_finite() {
        return Err(Error::InvalidInput(format!(
            "SNR must be finite, got {snr_db}"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let raw: Vec<f64> = (0..y0.len()).map(|_| rng.sample(StandardNormal)).collect();
    let raw_energy: f64 = raw.iter().map(|v| v * v).sum();
    let target = energy * 10f64.powf(-snr_db / 10.0);
    let gain = (target / raw_energy).sqrt();
    let eps: Vec<f64> = raw.iter().map(|v| v * gain).collect();
    let sigma2 = eps.iter().map(|v| v * v).sum::<f64>() / y0.len() as f64;
    Ok((y0.iter().zip(&eps).map(|(a, b)| a + b).collect(), sigma2))
}

/// `10 log10(|y0|^2 / |y_hat - y0|^2)`, capped at [`SNR_CAP_DB`].
pub fn output_snr(y0: &[f64], y_hat: &[f64]) -> Result<f64> {
    if y0.len() != y_hat.len() {
        return Err(Error::Dimension(format!(
            "lengths differ: {} vs {}",
            y0.len(),
            y_hat.len()
        )));
    }
    let s: f64 = y0.iter().map(|v| v * v).sum();
    let e: f64 = y0.iter().zip(y_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    if e == 0.0 {
        return Ok(SNR_CAP_DB);
    }
    Ok((10.0 * (s / e).log10()).min(SNR_CAP_DB))
}

/// Mean square of `q^est - q^true`, normalized by the mean square of `q^true`.
pub fn warp_mse(thetas_true: &[f64], thetas_est: &[f64], q: f64) -> Result<f64> {
    if thetas_true.len() != thetas_est.len() || thetas_true.is_empty() {
        return Err(Error::Dimension(
            "warp sequences must be nonempty and equally long".into(),
        ));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (t, e) in thetas_true.iter().zip(thetas_est) {
        let (a, b) = (q.powf(*t), q.powf(*e));
        num += (a - b) * (a - b);
        den += a * a;
    }
    Ok(num / den)
}

/// Relative RMSE of `c * estimate` against `truth` after fitting the single
/// scalar `c` by least squares. Removes the global scale-shift ambiguity
/// between the warp and the spectrum.
pub fn gauge_fitted_nrmse(estimate: &[f64], truth: &[f64]) -> Result<(f64, f64)> {
    if estimate.len() != truth.len() || truth.is_empty() {
        return Err(Error::Dimension(
            "sequences must be nonempty and equally long".into(),
        ));
    }
    let ee: f64 = estimate.iter().map(|v| v * v).sum();
    let et: f64 = estimate.iter().zip(truth).map(|(a, b)| a * b).sum();
    let c = if ee > 0.0 { et / ee } else { 0.0 };
    let err: f64 = estimate
        .iter()
        .zip(truth)
        .map(|(a, b)| (c * a - b).powi(2))
        .sum();
    let tt: f64 = truth.iter().map(|v| v * v).sum();
    Ok(((err / tt).sqrt(), c))
}

/// Shannon entropy (nats) of the normalized energy map `|W|^2 / sum |W|^2`.
pub fn energy_entropy<'a>(values: impl IntoIterator<Item = &'a C64>) -> f64 {
    let energies: Vec<f64> = values.into_iter().map(|v| v.norm_sqr()).collect();
    let total: f64 = energies.iter().sum();
    if total == 0.0 {
        return 0.0;
    }
    energies
        .iter()
        .filter(|e| **e > 0.0)
        .map(|e| {
            let p = e / total;
            -p * p.ln()
        })
        .sum()
}

/// Welch power spectral density (one-sided, Hann window, given segment
/// length and overlap), scaled so that `sum psd * fs / segment ~ var(y)`.
/// Returns the positive, non-Nyquist bin frequencies and the estimates.
pub fn welch_psd(
    y: &[f64],
    fs: f64,
    segment: usize,
    overlap: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if segment < 4 || segment > y.len() || overlap >= segment {
        return Err(Error::InvalidInput(format!(
            "welch needs 4 <= segment <= N and overlap < segment (segment {segment}, N {})",
            y.len()
        )));
    }
    let window: Vec<f64> = (0..segment)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / segment as f64).cos())
        .collect();
    let wpow: f64 = window.iter().map(|w| w * w).sum();
    let fft = FftPlanner::new().plan_fft_forward(segment);
    let step = segment - overlap;
    let bins: Vec<usize> = (1..segment)
        .filter(|&j| positive_bin_frequency(j, segment, fs).is_some())
        .collect();
    let mut acc = vec![0.0; bins.len()];
    let mut count = 0usize;
    let mut start = 0;
    let mut buf = vec![C64::new(0.0, 0.0); segment];
    while start + segment <= y.len() {
        let seg = &y[start..start + segment];
        let mean = seg.iter().sum::<f64>() / segment as f64;
        for i in 0..segment {
            buf[i] = C64::new((seg[i] - mean) * window[i], 0.0);
        }
        fft.process(&mut buf);
        for (a, &j) in acc.iter_mut().zip(&bins) {
            *a += buf[j].norm_sqr();
        }
        count += 1;
        start += step;
    }
    let scale = 2.0 / (fs * wpow * count as f64);
    let freqs = bins
        .iter()
        .map(|&j| j as f64 * fs / segment as f64)
        .collect();
    Ok((freqs, acc.into_iter().map(|v| v * scale).collect()))
}

/// Kind of synthetic signal produced by an [`ExperimentSpec`].
#[derive(Debug, Clone, PartialEq)]
pub enum SignalKind {
    /// Warped stationary Gaussian process.
    WarpedStationary,
    /// Locally harmonic signal with the fast-frequency surrogate profile.
    LocallyHarmonic {
        base_freq: f64,
        transition: f64,
        amplitude_depth: f64,
        amplitude_period: f64,
    },
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub kind: SignalKind,
    pub spectrum: PriorSpectrum,
    pub warp: WarpFunction,
    pub duration: f64,
    pub fs: f64,
    pub snr_db: f64,
    pub seed: u64,
}

/// Generated signals with their ground truth.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub fs: f64,
    pub clean: Vec<f64>,
    pub noisy: Vec<f64>,
    pub sigma2: f64,
    /// Ground-truth local dilation `gamma'(tau_n)`, or `phi'(tau_n) / nu1`.
    pub dilation: Vec<f64>,
    pub spectrum: PriorSpectrum,
}

impl Experiment {
    /// `log_q` of the ground-truth dilation.
    pub fn true_thetas(&self, q: f64) -> Vec<f64> {
        self.dilation.iter().map(|d| d.ln() / q.ln()).collect()
    }
}

impl ExperimentSpec {
    /// The two-Hann / damped-sine preset.
    pub fn two_hann_preset(duration: f64, fs: f64, snr_db: f64, seed: u64) -> Result<Self> {
        Ok(ExperimentSpec {
            kind: SignalKind::WarpedStationary,
            spectrum: PriorSpectrum::two_hann(fs, 1024)?,
            warp: WarpFunction::default_damped_sine(duration)?,
            duration,
            fs,
            snr_db,
            seed,
        })
    }

    /// Fast-frequency locally harmonic preset with base frequency `fs / 8`.
    pub fn fast_frequency_preset(len: usize, fs: f64, snr_db: f64, seed: u64) -> Result<Self> {
        Ok(ExperimentSpec {
            kind: SignalKind::LocallyHarmonic {
                base_freq: fs / 8.0,
                transition: 1.0,
                amplitude_depth: 0.3,
                amplitude_period: 40.0,
            },
            spectrum: PriorSpectrum::flat(fs, 256, 1.0)?,
            warp: WarpFunction::Identity,
            duration: len as f64 / fs,
            fs,
            snr_db,
            seed,
        })
    }

    pub fn n_samples(&self) -> Result<usize> {
        let n = self.duration * self.fs;
        let r = n.round();
        if (n - r).abs() > 1e-6 * n.max(1.0) || r < 2.0 {
            return Err(Error::Config(format!(
                "duration * fs must be an integer >= 2, got {}",
                n
            )));
        }
        Ok(r as usize)
    }

    /// Draws the clean and noisy signals. The noise uses a seed derived from
    /// `seed` so that the clean draw does not depend on the SNR.
    pub fn generate(&self) -> Result<Experiment> {
        let n = self.n_samples()?;
        let (clean, dilation) = match &self.kind {
            SignalKind::WarpedStationary => {
                let x = sample_stationary(&self.spectrum, n, self.fs, self.seed)?;
                let y = apply_warp(&x, &self.warp, self.fs)?;
                (y, self.warp.sampled_derivative(n, self.fs))
            }
            SignalKind::LocallyHarmonic {
                base_freq,
                transition,
                amplitude_depth,
                amplitude_period,
            } => {
                let phi = fast_frequency_profile(n, self.fs, *base_freq, *transition, self.seed);
                let amp = slow_amplitude(n, self.fs, *amplitude_depth, *amplitude_period);
                let y = make_locally_harmonic(&amp, &phi, self.fs)?;
                (y, phi.iter().map(|p| p / base_freq).collect())
            }
        };
        let (noisy, sigma2) = add_noise(&clean, self.snr_db, noise_seed(self.seed))?;
        Ok(Experiment {
            fs: self.fs,
            clean,
            noisy,
            sigma2,
            dilation,
            spectrum: self.spectrum.clone(),
        })
    }
}

/// Seed of the noise stream associated with a signal seed.
pub fn noise_seed(seed: u64) -> u64 {
    seed ^ 0x9e37_79b9_7f4a_7c15
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(len: usize, fs: f64, freq: f64) -> Vec<f64> {
        (0..len)
            .map(|n| (2.0 * PI * freq * n as f64 / fs).cos())
            .collect()
    }

    fn fft_peak(x: &[f64], fs: f64) -> (f64, f64) {
        let n = x.len();
        let mut buf: Vec<C64> = x.iter().map(|v| C64::new(*v, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let (j, v) = buf[..n / 2]
            .iter()
            .enumerate()
            .map(|(j, v)| (j, v.norm()))
            .fold((0, 0.0), |a, b| if b.1 > a.1 { b } else { a });
        (j as f64 * fs / n as f64, 2.0 * v / n as f64)
    }

    #[test]
    fn zero_spectrum_gives_zero_signal() {
        let s = PriorSpectrum::flat(100.0, 16, 0.0).unwrap();
        assert!(sample_stationary(&s, 64, 100.0, 1)
            .unwrap()
            .iter()
            .all(|v| *v == 0.0));
    }

    #[test]
    fn white_spectrum_variance() {
        let fs = 1000.0;
        let s = PriorSpectrum::flat(fs, 64, 2.0).unwrap();
        let x = sample_stationary(&s, 1 << 17, fs, 3).unwrap();
        let var = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
        let target = s.total_power();
        // the grid starts at fs/128, so the flat spectrum misses a sliver near DC
        assert!((var / target - 1.0).abs() < 0.05, "{var} vs {target}");
    }

    #[test]
    fn stationary_draw_is_deterministic() {
        let s = PriorSpectrum::two_hann(256.0, 128).unwrap();
        assert_eq!(
            sample_stationary(&s, 256, 256.0, 9).unwrap(),
            sample_stationary(&s, 256, 256.0, 9).unwrap()
        );
    }

    #[test]
    fn identity_warp_is_exact() {
        let x = tone(128, 128.0, 5.0);
        let y = apply_warp(&x, &WarpFunction::Identity, 128.0).unwrap();
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_warp_scales_frequency_and_amplitude() {
        let fs = 256.0;
        let x = tone(256, fs, 10.0);
        let y = apply_warp(&x, &WarpFunction::linear(2.0).unwrap(), fs).unwrap();
        let (f, a) = fft_peak(&y, fs);
        assert_eq!(f, 20.0);
        assert!((a - 2f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn damped_sine_warp_is_normalized() {
        let w = WarpFunction::default_damped_sine(2.0).unwrap();
        assert!((w.value(2.0) - 2.0).abs() < 1e-12);
        assert_eq!(w.value(0.0), 0.0);
        // closed form against a fine trapezoid
        let n = 200_000;
        let h = 1.3 / n as f64;
        let mut acc = 0.0;
        for i in 0..n {
            acc += 0.5 * h * (w.derivative(i as f64 * h) + w.derivative((i + 1) as f64 * h));
        }
        assert!((acc - w.value(1.3)).abs() < 1e-9);
        assert!(WarpFunction::damped_sine(1.2, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn tabulated_warp_rejects_nonpositive_derivative() {
        assert!(WarpFunction::tabulated(vec![0.0, 1.0], vec![1.0, -0.1]).is_err());
        let w = WarpFunction::tabulated(vec![0.0, 1.0, 2.0], vec![1.0, 2.0, 1.0]).unwrap();
        assert!((w.value(1.0) - 1.5).abs() < 1e-15);
        assert!((w.value(2.0) - 3.0).abs() < 1e-15);
        assert!((w.value(0.5) - (0.5 + 0.125)).abs() < 1e-15);
    }

    #[test]
    fn warp_preserves_energy() {
        let fs = 1024.0;
        let s = PriorSpectrum::two_hann(fs, 512).unwrap();
        let x = sample_stationary(&s, 1024, fs, 5).unwrap();
        let y = apply_warp(&x, &WarpFunction::default_damped_sine(1.0).unwrap(), fs).unwrap();
        let ex: f64 = x.iter().map(|v| v * v).sum();
        let ey: f64 = y.iter().map(|v| v * v).sum();
        assert!((ey / ex - 1.0).abs() < 0.02, "{}", ey / ex);
    }

    #[test]
    fn inverse_warp_round_trip() {
        let fs = 512.0;
        let s = PriorSpectrum::two_hann(fs, 256).unwrap();
        let x = sample_stationary(&s, 512, fs, 6).unwrap();
        let w = WarpFunction::default_damped_sine(1.0).unwrap();
        let inv = w.inverse(1.0, 4096).unwrap();
        let back = apply_warp(&apply_warp(&x, &w, fs).unwrap(), &inv, fs).unwrap();
        let err: f64 = x.iter().zip(&back).map(|(a, b)| (a - b) * (a - b)).sum();
        let ex: f64 = x.iter().map(|v| v * v).sum();
        assert!((err / ex).sqrt() < 0.01);
    }

    #[test]
    fn locally_harmonic_basics() {
        let fs = 100.0;
        let y = make_locally_harmonic(&vec![1.0; 200], &vec![7.0; 200], fs).unwrap();
        let t = tone(200, fs, 7.0);
        for (a, b) in y.iter().zip(&t) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(make_locally_harmonic(&[0.0; 10], &[1.0; 10], fs)
            .unwrap()
            .iter()
            .all(|v| *v == 0.0));
    }

    #[test]
    fn noise_hits_exact_snr() {
        let y0 = tone(500, 100.0, 3.0);
        let (y, sigma2) = add_noise(&y0, 0.0, 4).unwrap();
        let e: f64 = y.iter().zip(&y0).map(|(a, b)| (a - b) * (a - b)).sum();
        let s: f64 = y0.iter().map(|v| v * v).sum();
        assert!((e.sqrt() - s.sqrt()).abs() < 1e-10 * s.sqrt());
        assert!((sigma2 - e / 500.0).abs() < 1e-14);
        // the realized noise is below the rounding of y0 + eps, so check sigma2
        let (_, sigma2) = add_noise(&y0, 300.0, 4).unwrap();
        assert!(((500.0 * sigma2 / s).sqrt() / 1e-15 - 1.0).abs() < 1e-9);
        assert!(add_noise(&[0.0; 4], 10.0, 1).is_err());
    }

    #[test]
    fn metric_edge_cases() {
        let y = tone(64, 64.0, 3.0);
        assert_eq!(output_snr(&y, &y).unwrap(), SNR_CAP_DB);
        assert_eq!(warp_mse(&[0.1, -0.2], &[0.1, -0.2], 2.0).unwrap(), 0.0);
        let map = vec![C64::new(1.0, 1.0); 12];
        assert!((energy_entropy(&map) - (12f64).ln()).abs() < 1e-12);
        let (e, c) = gauge_fitted_nrmse(&[2.0, 4.0], &[1.0, 2.0]).unwrap();
        assert!(e < 1e-15 && (c - 0.5).abs() < 1e-15);
    }

    #[test]
    fn experiment_lengths_and_determinism() {
        let spec = ExperimentSpec::two_hann_preset(0.25, 1024.0, 10.0, 2).unwrap();
        let a = spec.generate().unwrap();
        let b = spec.generate().unwrap();
        assert_eq!(a.clean.len(), 256);
        assert_eq!(a.noisy, b.noisy);
        let bad = ExperimentSpec {
            duration: 0.2501,
            ..spec
        };
        assert!(bad.generate().is_err());
    }
}
