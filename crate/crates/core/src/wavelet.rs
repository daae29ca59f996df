//! Analytic wavelet family, scale grid and the periodic synthesis dictionary.
//!
//! Atoms are built in the frequency domain. For a signal of `N` samples at
//! rate `fs`, the atom of scale `s` is the inverse DFT of
//! `(fs / N) q^{s/2} psi_hat(q^s xi_j)` over the positive-frequency bins, so
//! that column `m` of `Psi_n` holds `psi_{s_m}(tau_{k-n})` with periodic
//! indexing. Non-positive bins (DC, negative frequencies and the ambiguous
//! Nyquist bin) are exactly zero.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Complex `N x M` coefficient matrix: row `n` is `w_n`, column `m` is scale `s_m`.
pub type SynthesisCoeffs = DMatrix<C64>;

/// Atom samples below this fraction of an atom's peak modulus are treated as
/// outside its support when assembling banded quantities.
const SUPPORT_TOL: f64 = 1e-13;

/// Logarithmic scale axis `s_1 < ... < s_M` with geometric base `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleGrid {
    q: f64,
    scales: Vec<f64>,
}

impl ScaleGrid {
    pub fn new(q: f64, scales: Vec<f64>) -> Result<Self> {
        if !q.is_finite() || q <= 1.0 {
            return Err(Error::Config(format!("scale base q must be > 1, got {q}")));
        }
        if scales.is_empty() {
            return Err(Error::Config(
                "scale grid must contain at least one scale".into(),
            ));
        }
        if scales.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("scale grid".into()));
        }
        if scales.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("scales must be strictly increasing".into()));
        }
        Ok(ScaleGrid { q, scales })
    }

    /// `count` equally spaced scales from `first` to `last` inclusive.
    pub fn uniform(q: f64, first: f64, last: f64, count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::Config("scale count must be >= 1".into()));
        }
        let scales = if count == 1 {
            vec![first]
        } else {
            let step = (last - first) / (count - 1) as f64;
            (0..count).map(|i| first + step * i as f64).collect()
        };
        ScaleGrid::new(q, scales)
    }

    /// Uniform grid whose peak frequencies `xi0 q^{-s}` span `[f_lo, f_hi]`.
    pub fn from_frequency_range(
        q: f64,
        xi0: f64,
        f_lo: f64,
        f_hi: f64,
        count: usize,
    ) -> Result<Self> {
        if !(f_lo > 0.0 && f_hi > f_lo) {
            return Err(Error::Config(format!(
                "invalid frequency range [{f_lo}, {f_hi}]"
            )));
        }
        let ln_q = q.ln();
        ScaleGrid::uniform(q, (xi0 / f_hi).ln() / ln_q, (xi0 / f_lo).ln() / ln_q, count)
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn ln_q(&self) -> f64 {
        self.q.ln()
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn len(&self) -> usize {
        self.scales.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scales.is_empty()
    }

    /// Peak frequency `xi0 q^{-s}` attached to scale `s`.
    pub fn frequency_of(&self, xi0: f64, s: f64) -> f64 {
        xi0 * self.q.powf(-s)
    }

    /// Inverse of [`ScaleGrid::frequency_of`].
    pub fn scale_of(&self, xi0: f64, freq: f64) -> f64 {
        (xi0 / freq).ln() / self.ln_q()
    }

    pub fn shifted(&self, delta: f64) -> ScaleGrid {
        ScaleGrid {
            q: self.q,
            scales: self.scales.iter().map(|s| s + delta).collect(),
        }
    }

    /// Index of the grid scale closest to `s`.
    pub fn nearest(&self, s: f64) -> usize {
        let mut best = 0;
        for (i, v) in self.scales.iter().enumerate() {
            if (v - s).abs() < (self.scales[best] - s).abs() {
                best = i;
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum WaveletFamily {
    /// `psi_hat(xi) = exp(-(ln(xi/xi0))^2 / (2 b^2))` for `xi > 0`.
    LogGaussian,
    /// Complex samples of `psi_hat` at strictly increasing positive
    /// frequencies, linearly interpolated and zero outside the table.
    Tabulated { freqs: Vec<f64>, values: Vec<C64> },
}

impl WaveletFamily {
    pub fn name(&self) -> &'static str {
        match self {
            WaveletFamily::LogGaussian => "log-gaussian",
            WaveletFamily::Tabulated { .. } => "tabulated",
        }
    }
}

/// Progressive wavelet description: family, central frequency `xi0` (Hz) and
/// a dimensionless bandwidth (log-frequency standard deviation for the
/// built-in family).
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletSpec {
    pub family: WaveletFamily,
    pub xi0: f64,
    pub bandwidth: f64,
}

impl WaveletSpec {
    pub fn log_gaussian(xi0: f64, bandwidth: f64) -> Result<Self> {
        if !(xi0 > 0.0 && xi0.is_finite()) {
            return Err(Error::Config(format!("xi0 must be positive, got {xi0}")));
        }
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::Config(format!(
                "wavelet bandwidth must be positive, got {bandwidth}"
            )));
        }
        Ok(WaveletSpec {
            family: WaveletFamily::LogGaussian,
            xi0,
            bandwidth,
        })
    }

    pub fn tabulated(freqs: Vec<f64>, values: Vec<C64>, xi0: f64) -> Result<Self> {
        if freqs.len() != values.len() || freqs.len() < 2 {
            return Err(Error::Config(
                "tabulated wavelet needs >= 2 matching nodes".into(),
            ));
        }
        if freqs[0] <= 0.0 || freqs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "tabulated wavelet frequencies must be positive and strictly increasing".into(),
            ));
        }
        if values
            .iter()
            .any(|v| !v.re.is_finite() || !v.im.is_finite())
        {
            return Err(Error::NonFinite("tabulated wavelet".into()));
        }
        Ok(WaveletSpec {
            family: WaveletFamily::Tabulated { freqs, values },
            xi0,
            bandwidth: 0.0,
        })
    }

    /// Built-in family lookup by name; tabulated wavelets need their table and
    /// are constructed with [`WaveletSpec::tabulated`].
    pub fn from_name(name: &str, xi0: f64, bandwidth: f64) -> Result<Self> {
        match name {
            "log-gaussian" | "log_gaussian" | "morlet-like" | "analytic-morlet-like" => {
                WaveletSpec::log_gaussian(xi0, bandwidth)
            }
            other => Err(Error::Config(format!("unknown wavelet family '{other}'"))),
        }
    }

    /// `psi_hat(xi)`; exactly zero for `xi <= 0`.
    pub fn fourier(&self, xi: f64) -> C64 {
        if xi <= 0.0 {
            return C64::new(0.0, 0.0);
        }
        match &self.family {
            WaveletFamily::LogGaussian => {
                let u = (xi / self.xi0).ln() / self.bandwidth;
                C64::new((-0.5 * u * u).exp(), 0.0)
            }
            WaveletFamily::Tabulated { freqs, values } => interpolate_table(freqs, values, xi),
        }
    }

    /// Fourier transform of the dilated wavelet, `q^{s/2} psi_hat(q^s xi)`.
    pub fn dilated_fourier(&self, q: f64, s: f64, xi: f64) -> C64 {
        let qs = q.powf(s);
        self.fourier(qs * xi) * qs.sqrt()
    }
}

fn interpolate_table(freqs: &[f64], values: &[C64], xi: f64) -> C64 {
    match freqs.binary_search_by(|f| f.partial_cmp(&xi).unwrap()) {
        Ok(i) => values[i],
        Err(0) => C64::new(0.0, 0.0),
        Err(i) if i >= freqs.len() => C64::new(0.0, 0.0),
        Err(i) => {
            let t = (xi - freqs[i - 1]) / (freqs[i] - freqs[i - 1]);
            values[i - 1] * (1.0 - t) + values[i] * t
        }
    }
}

/// Evaluates `psi_hat` on a frequency vector (Hz).
pub fn evaluate_wavelet_fourier(spec: &WaveletSpec, freqs: &[f64]) -> Result<Vec<C64>> {
    if freqs.iter().any(|f| !f.is_finite()) {
        return Err(Error::NonFinite("frequency vector".into()));
    }
    Ok(freqs.iter().map(|&f| spec.fourier(f)).collect())
}

/// Real signal sampled at `fs` Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSignal {
    samples: Vec<f64>,
    fs: f64,
}

impl SampledSignal {
    pub fn new(samples: Vec<f64>, fs: f64) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "signal needs at least 2 samples, got {}",
                samples.len()
            )));
        }
        if !(fs > 0.0 && fs.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "sampling frequency must be positive, got {fs}"
            )));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("signal samples".into()));
        }
        Ok(SampledSignal { samples, fs })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }
}

/// Frequency (Hz) of DFT bin `j` for analytic purposes: `None` for the DC,
/// Nyquist and negative-frequency bins.
pub fn positive_bin_frequency(j: usize, len: usize, fs: f64) -> Option<f64> {
    if j == 0 || 2 * j >= len {
        None
    } else {
        Some(j as f64 * fs / len as f64)
    }
}

/// `Psi_n`: the `N x M` matrix whose column `m` is the atom of scale `s_m`
/// centered at sample `n`.
#[derive(Debug, Clone)]
pub struct AtomMatrix {
    pub n: usize,
    pub values: DMatrix<C64>,
}

/// Precomputed dictionary for one `(wavelet, grid, N, fs)` combination.
pub struct AtomBank {
    len: usize,
    fs: f64,
    grid: ScaleGrid,
    transfer: Vec<Vec<C64>>,
    atoms: Vec<Vec<C64>>,
    offsets: Vec<i64>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for AtomBank {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AtomBank")
            .field("len", &self.len)
            .field("fs", &self.fs)
            .field("grid", &self.grid)
            .field("support", &self.offsets.len())
            .finish()
    }
}

impl AtomBank {
    pub fn new(spec: &WaveletSpec, grid: &ScaleGrid, len: usize, fs: f64) -> Result<Self> {
        if len < 2 {
            return Err(Error::InvalidInput(format!(
                "dictionary length must be >= 2, got {len}"
            )));
        }
        if !(fs > 0.0 && fs.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "sampling frequency must be positive, got {fs}"
            )));
        }
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(len);
        let ifft = planner.plan_fft_inverse(len);

        let mut transfer = Vec::with_capacity(grid.len());
        let mut atoms = Vec::with_capacity(grid.len());
        let norm = fs / len as f64;
        for &s in grid.scales() {
            let spectrum: Vec<C64> = (0..len)
                .map(|j| match positive_bin_frequency(j, len, fs) {
                    Some(xi) => spec.dilated_fourier(grid.q(), s, xi) * norm,
                    None => C64::new(0.0, 0.0),
                })
                .collect();
            let mut atom = spectrum.clone();
            ifft.process(&mut atom);
            if atom.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
                return Err(Error::NonFinite(format!("atom at scale {s}")));
            }
            transfer.push(spectrum);
            atoms.push(atom);
        }

        let offsets = support_offsets(&atoms, len);
        Ok(AtomBank {
            len,
            fs,
            grid: grid.clone(),
            transfer,
            atoms,
            offsets,
            fft,
            ifft,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn grid(&self) -> &ScaleGrid {
        &self.grid
    }

    pub fn n_scales(&self) -> usize {
        self.atoms.len()
    }

    /// Base atom (centered at sample 0) of scale index `m`.
    pub fn atom(&self, m: usize) -> &[C64] {
        &self.atoms[m]
    }

    /// Forward and inverse (unnormalized) FFT plans of length `N`.
    pub(crate) fn fft_plans(&self) -> (&Arc<dyn Fft<f64>>, &Arc<dyn Fft<f64>>) {
        (&self.fft, &self.ifft)
    }

    /// DFT-domain samples of atom `m` (`fft(atom) / N`).
    pub fn transfer(&self, m: usize) -> &[C64] {
        &self.transfer[m]
    }

    /// `a_m[offset mod N]` for a signed offset.
    pub fn atom_at(&self, m: usize, offset: i64) -> C64 {
        self.atoms[m][offset.rem_euclid(self.len as i64) as usize]
    }

    /// Signed offsets (relative to the atom center) where at least one atom
    /// is non-negligible. Covers the whole circle when atoms are long.
    pub fn support_offsets(&self) -> &[i64] {
        &self.offsets
    }

    /// Largest absolute offset in the support.
    pub fn support_half_width(&self) -> usize {
        self.offsets
            .iter()
            .map(|o| o.unsigned_abs() as usize)
            .max()
            .unwrap_or(0)
    }

    pub fn atom_matrix(&self, n: usize) -> Result<AtomMatrix> {
        if n >= self.len {
            return Err(Error::InvalidInput(format!(
                "time index {n} out of range 0..{}",
                self.len
            )));
        }
        let len = self.len;
        let values = DMatrix::from_fn(len, self.n_scales(), |k, m| {
            self.atoms[m][(k + len - n) % len]
        });
        Ok(AtomMatrix { n, values })
    }

    /// `Re( sum_n Psi_n w_n )`, computed per scale as a circular convolution.
    pub fn synthesize(&self, coeffs: &SynthesisCoeffs) -> Result<Vec<f64>> {
        Ok(self
            .synthesize_complex(coeffs)?
            .into_iter()
            .map(|v| v.re)
            .collect())
    }

    /// `sum_n Psi_n w_n` before taking the real part.
    pub fn synthesize_complex(&self, coeffs: &SynthesisCoeffs) -> Result<Vec<C64>> {
        self.check_coeffs(coeffs)?;
        let mut acc = vec![C64::new(0.0, 0.0); self.len];
        let mut buf = vec![C64::new(0.0, 0.0); self.len];
        for (m, tf) in self.transfer.iter().enumerate() {
            buf.iter_mut()
                .zip(coeffs.column(m).iter())
                .for_each(|(b, w)| *b = *w);
            self.fft.process(&mut buf);
            for ((a, b), t) in acc.iter_mut().zip(buf.iter()).zip(tf.iter()) {
                *a += b * t;
            }
        }
        self.ifft.process(&mut acc);
        Ok(acc)
    }

    /// Adjoint action `(D^H y)_{n,m} = (Psi_n^H y)_m`.
    pub fn adjoint(&self, y: &[f64]) -> Result<SynthesisCoeffs> {
        if y.len() != self.len {
            return Err(Error::Dimension(format!(
                "signal length {} != dictionary length {}",
                y.len(),
                self.len
            )));
        }
        let mut spectrum: Vec<C64> = y.iter().map(|&v| C64::new(v, 0.0)).collect();
        self.fft.process(&mut spectrum);
        let mut out = SynthesisCoeffs::zeros(self.len, self.n_scales());
        let mut buf = vec![C64::new(0.0, 0.0); self.len];
        for (m, tf) in self.transfer.iter().enumerate() {
            for ((b, t), s) in buf.iter_mut().zip(tf.iter()).zip(spectrum.iter()) {
                *b = t.conj() * s;
            }
            self.ifft.process(&mut buf);
            out.column_mut(m)
                .iter_mut()
                .zip(buf.iter())
                .for_each(|(o, b)| *o = *b);
        }
        Ok(out)
    }

    /// Gram matrix `Psi_n^H Psi_n` (identical for every `n`).
    pub fn gram(&self) -> DMatrix<C64> {
        let m = self.n_scales();
        DMatrix::from_fn(m, m, |i, j| {
            self.atoms[i]
                .iter()
                .zip(self.atoms[j].iter())
                .map(|(a, b)| a.conj() * b)
                .sum()
        })
    }

    fn check_coeffs(&self, coeffs: &SynthesisCoeffs) -> Result<()> {
        if coeffs.nrows() != self.len || coeffs.ncols() != self.n_scales() {
            return Err(Error::Dimension(format!(
                "coefficients are {}x{}, dictionary expects {}x{}",
                coeffs.nrows(),
                coeffs.ncols(),
                self.len,
                self.n_scales()
            )));
        }
        Ok(())
    }
}

fn support_offsets(atoms: &[Vec<C64>], len: usize) -> Vec<i64> {
    let mut half = 0usize;
    for atom in atoms {
        let peak = atom.iter().map(|v| v.norm()).fold(0.0, f64::max);
        if peak == 0.0 {
            continue;
        }
        for (k, v) in atom.iter().enumerate() {
            if v.norm() > SUPPORT_TOL * peak {
                let dist = k.min(len - k);
                half = half.max(dist);
            }
        }
    }
    if 2 * half + 1 >= len {
        let lo = -((len as i64 - 1) / 2);
        (lo..lo + len as i64).collect()
    } else {
        (-(half as i64)..=half as i64).collect()
    }
}

pub fn build_atom_matrix(
    spec: &WaveletSpec,
    grid: &ScaleGrid,
    n: usize,
    len: usize,
    fs: f64,
) -> Result<AtomMatrix> {
    AtomBank::new(spec, grid, len, fs)?.atom_matrix(n)
}

pub fn apply_dictionary(
    coeffs: &SynthesisCoeffs,
    spec: &WaveletSpec,
    grid: &ScaleGrid,
    fs: f64,
) -> Result<Vec<f64>> {
    if coeffs.ncols() != grid.len() {
        return Err(Error::Dimension(format!(
            "coefficients have {} scales, grid has {}",
            coeffs.ncols(),
            grid.len()
        )));
    }
    AtomBank::new(spec, grid, coeffs.nrows(), fs)?.synthesize(coeffs)
}

/// Plain analytic wavelet transform `(1/fs) Psi_n^H y`, the Riemann-sum
/// approximation of `int y(t) conj(psi_s(t - tau_n)) dt`.
pub fn scalogram(
    y: &SampledSignal,
    spec: &WaveletSpec,
    grid: &ScaleGrid,
) -> Result<SynthesisCoeffs> {
    let bank = AtomBank::new(spec, grid, y.len(), y.fs())?;
    bank_scalogram(&bank, y.samples())
}

pub fn bank_scalogram(bank: &AtomBank, y: &[f64]) -> Result<SynthesisCoeffs> {
    let mut out = bank.adjoint(y)?;
    let inv_fs = 1.0 / bank.fs();
    out.iter_mut().for_each(|v| *v *= inv_fs);
    Ok(out)
}
