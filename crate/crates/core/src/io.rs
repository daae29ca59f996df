//! File formats and configuration.
//!
//! Signals: single-column CSV with an `fs=<Hz>` header, or 16-bit mono WAV.
//! Tables (spectrum, warp, EM trace) are headed CSV. Coefficient grids go
//! to a small binary format (`WSMT`) or CSV, with a JSON axis sidecar.
//! Every command ends by writing a [`RunManifest`] atomically.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::em::{EmConfig, EmState, EmTrace, IterationRecord, Solver};
use crate::error::{Error, Result};
use crate::prior::{CovarianceFunction, PriorSpectrum, WarpSequence};
use crate::signal::{ExperimentSpec, SignalKind, WarpFunction};
use crate::wavelet::{SampledSignal, ScaleGrid, WaveletSpec, C64};

fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io(format!("{}: {e}", path.display()))
}

fn parse_err(path: &Path, line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Parse(format!("{}:{line}: {msg}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    Ok(BufWriter::new(
        fs::File::create(path).map_err(|e| io_err(path, e))?,
    ))
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut w = create(&tmp)?;
        w.write_all(bytes).map_err(|e| io_err(&tmp, e))?;
        w.flush().map_err(|e| io_err(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

// ---------------------------------------------------------------- signals

pub fn read_signal(path: &Path) -> Result<SampledSignal> {
    match extension(path).as_deref() {
        Some("wav") => read_wav(path),
        _ => read_signal_csv(path),
    }
}

pub fn write_signal(path: &Path, samples: &[f64], fs: f64) -> Result<()> {
    match extension(path).as_deref() {
        Some("wav") => write_wav(path, samples, fs).map(|_| ()),
        _ => write_signal_csv(path, samples, fs),
    }
}

fn extension(path: &Path) -> Option<String> {
    path.extension()
        .map(|e| e.to_string_lossy().to_ascii_lowercase())
}

pub fn read_signal_csv(path: &Path) -> Result<SampledSignal> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut fs_hz = None;
    let mut samples = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        if fs_hz.is_none() {
            let value = text
                .strip_prefix("fs=")
                .ok_or_else(|| parse_err(path, i + 1, "expected header `fs=<Hz>`"))?;
            fs_hz = Some(
                value
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| parse_err(path, i + 1, e))?,
            );
            continue;
        }
        samples.push(text.parse::<f64>().map_err(|e| parse_err(path, i + 1, e))?);
    }
    let fs_hz = fs_hz.ok_or_else(|| parse_err(path, 1, "empty signal file"))?;
    SampledSignal::new(samples, fs_hz)
}

pub fn write_signal_csv(path: &Path, samples: &[f64], fs: f64) -> Result<()> {
    let mut w = create(path)?;
    let mut run = || -> std::io::Result<()> {
        writeln!(w, "fs={fs}")?;
        for v in samples {
            writeln!(w, "{v}")?;
        }
        w.flush()
    };
    run().map_err(|e| io_err(path, e))
}

/// Reads a mono WAV; integer samples are mapped to `[-1, 1)`.
pub fn read_wav(path: &Path) -> Result<SampledSignal> {
    let mut reader = hound::WavReader::open(path).map_err(|e| io_err(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::InvalidInput(format!(
            "{}: expected mono WAV, got {} channels",
            path.display(),
            spec.channels
        )));
    }
    let samples: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Int => {
            let scale = (1i64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| io_err(path, e))?
        }
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| io_err(path, e))?,
    };
    SampledSignal::new(samples, spec.sample_rate as f64)
}

/// Writes 16-bit PCM, scaled so the peak sits just below full scale.
/// Returns the gain that was applied; `fs` must be a whole number of hertz.
pub fn write_wav(path: &Path, samples: &[f64], fs: f64) -> Result<f64> {
    if fs.fract() != 0.0 || !(fs >= 1.0) || fs > u32::MAX as f64 {
        return Err(Error::InvalidInput(format!(
            "WAV needs an integer sample rate, got {fs}"
        )));
    }
    let peak = samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let gain = if peak > 0.0 { 0.999 / peak } else { 1.0 };
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: fs as u32,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| io_err(path, e))?;
    for v in samples {
        let q = (v * gain * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        w.write_sample(q).map_err(|e| io_err(path, e))?;
    }
    w.finalize().map_err(|e| io_err(path, e))?;
    Ok(gain)
}

// ---------------------------------------------------------------- tables

fn read_table(path: &Path, columns: usize) -> Result<Vec<Vec<f64>>> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|f| match f.trim() {
                "" => Ok(f64::NAN),
                t => t.parse::<f64>().map_err(|e| parse_err(path, i + 1, e)),
            })
            .collect::<Result<_>>()?;
        if row.len() < columns {
            return Err(parse_err(
                path,
                i + 1,
                format!("expected {columns} columns, got {}", row.len()),
            ));
        }
        rows.push(row);
    }
    Ok(rows)
}

fn write_rows(path: &Path, header: &str, rows: impl Iterator<Item = String>) -> Result<()> {
    let mut w = create(path)?;
    let run = || -> std::io::Result<()> {
        writeln!(w, "{header}")?;
        for r in rows {
            writeln!(w, "{r}")?;
        }
        w.flush()
    };
    run().map_err(|e| io_err(path, e))
}

pub fn write_spectrum_csv(path: &Path, spectrum: &PriorSpectrum) -> Result<()> {
    write_rows(
        path,
        "freq,value",
        spectrum
            .freqs()
            .iter()
            .zip(spectrum.values())
            .map(|(f, v)| format!("{f},{v}")),
    )
}

pub fn read_spectrum_csv(path: &Path) -> Result<PriorSpectrum> {
    let rows = read_table(path, 2)?;
    PriorSpectrum::new(
        rows.iter().map(|r| r[0]).collect(),
        rows.iter().map(|r| r[1]).collect(),
    )
}

/// `n,time,theta` rows.
pub fn write_thetas_csv(path: &Path, thetas: &[f64], fs: f64) -> Result<()> {
    write_rows(
        path,
        "n,time,theta",
        thetas
            .iter()
            .enumerate()
            .map(|(n, t)| format!("{n},{},{t}", n as f64 / fs)),
    )
}

pub fn read_thetas_csv(path: &Path) -> Result<WarpSequence> {
    let rows = read_table(path, 3)?;
    WarpSequence::new(rows.iter().map(|r| r[2]).collect())
}

pub fn write_trace_csv(path: &Path, trace: &EmTrace) -> Result<()> {
    write_rows(
        path,
        "iter,loglik,seconds,theta_rmse",
        trace.records.iter().map(|r| {
            let rmse = r.theta_rmse.map(|v| v.to_string()).unwrap_or_default();
            format!("{},{},{},{rmse}", r.iter, r.loglik, r.seconds)
        }),
    )
}

// ---------------------------------------------------------------- resume state

#[derive(Serialize, Deserialize)]
struct RecordFile {
    iter: usize,
    loglik: f64,
    seconds: f64,
    theta_rmse: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct StateFile {
    thetas: Vec<f64>,
    /// Spectrum of a spectrum-driven prior; `None` for a fixed prior.
    spectrum: Option<(Vec<f64>, Vec<f64>)>,
    records: Vec<RecordFile>,
}

/// Saves the parameters and history needed to continue an EM run.
pub fn write_resume_state(path: &Path, state: &EmState) -> Result<()> {
    let file = StateFile {
        thetas: state.thetas.thetas().to_vec(),
        spectrum: match &state.f {
            CovarianceFunction::Spectrum(c) => Some((
                c.spectrum().freqs().to_vec(),
                c.spectrum().values().to_vec(),
            )),
            _ => None,
        },
        records: state
            .trace
            .records
            .iter()
            .map(|r| RecordFile {
                iter: r.iter,
                loglik: r.loglik,
                seconds: r.seconds,
                theta_rmse: r.theta_rmse,
            })
            .collect(),
    };
    let text = serde_json::to_string(&file).map_err(|e| Error::Io(e.to_string()))?;
    write_atomic(path, text.as_bytes())
}

/// Loads a saved state. A fixed prior must be supplied again as `fixed`;
/// a spectrum-driven one is rebuilt from the stored spectrum with `wavelet`.
pub fn read_resume_state(
    path: &Path,
    wavelet: &WaveletSpec,
    q: f64,
    fixed: Option<CovarianceFunction>,
) -> Result<EmState> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let file: StateFile = serde_json::from_str(&text).map_err(|e| parse_err(path, e.line(), e))?;
    let f = match (file.spectrum, fixed) {
        (Some((freqs, values)), _) => {
            CovarianceFunction::spectrum(wavelet.clone(), PriorSpectrum::new(freqs, values)?, q)?
        }
        (None, Some(f)) => f,
        (None, None) => {
            return Err(Error::Config(
                "resume state has a fixed prior; supply it again".into(),
            ))
        }
    };
    let last = file.records.last();
    let trace = EmTrace {
        records: file
            .records
            .iter()
            .map(|r| IterationRecord {
                iter: r.iter,
                loglik: r.loglik,
                // only the last record's parameters are stored
                thetas: if Some(r.iter) == last.map(|l| l.iter) {
                    file.thetas.clone()
                } else {
                    Vec::new()
                },
                spectrum: None,
                seconds: r.seconds,
                theta_rmse: r.theta_rmse,
            })
            .collect(),
    };
    Ok(EmState {
        thetas: WarpSequence::new(file.thetas)?,
        f,
        trace,
    })
}

// ---------------------------------------------------------------- matrices

const MATRIX_MAGIC: &[u8; 4] = b"WSMT";
const MATRIX_VERSION: u32 = 1;

/// Binary complex matrix: magic, version (u32), rows, cols (u64), then
/// row-major `(re, im)` pairs, all little-endian.
pub fn write_complex_matrix(path: &Path, m: &DMatrix<C64>) -> Result<()> {
    let mut bytes = Vec::with_capacity(24 + 16 * m.len());
    bytes.extend_from_slice(MATRIX_MAGIC);
    bytes.extend_from_slice(&MATRIX_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
    bytes.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            bytes.extend_from_slice(&m[(i, j)].re.to_le_bytes());
            bytes.extend_from_slice(&m[(i, j)].im.to_le_bytes());
        }
    }
    write_atomic(path, &bytes)
}

pub fn read_complex_matrix(path: &Path) -> Result<DMatrix<C64>> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| io_err(path, e))?;
    let bad = |msg: &str| Error::Parse(format!("{}: {msg}", path.display()));
    if bytes.len() < 24 || &bytes[..4] != MATRIX_MAGIC {
        return Err(bad("not a WSMT matrix file"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != MATRIX_VERSION {
        return Err(bad(&format!("unsupported matrix version {version}")));
    }
    let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(16))
        .and_then(|n| n.checked_add(24));
    if expected != Some(bytes.len()) {
        return Err(bad("matrix payload length does not match its header"));
    }
    let val = |k: usize| f64::from_le_bytes(bytes[24 + 8 * k..32 + 8 * k].try_into().unwrap());
    Ok(DMatrix::from_fn(rows, cols, |i, j| {
        let k = 2 * (i * cols + j);
        C64::new(val(k), val(k + 1))
    }))
}

/// Real grid as CSV, one matrix row per line, no header.
pub fn write_real_grid_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut w = create(path)?;
    let mut run = || -> std::io::Result<()> {
        for i in 0..m.nrows() {
            let row: Vec<String> = (0..m.ncols()).map(|j| m[(i, j)].to_string()).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        w.flush()
    };
    run().map_err(|e| io_err(path, e))
}

/// Axis labels for a time-scale grid (rows are times, columns scales).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GridAxes {
    pub times: Vec<f64>,
    pub scales: Vec<f64>,
    pub frequencies: Vec<f64>,
}

impl GridAxes {
    pub fn new(len: usize, fs: f64, grid: &ScaleGrid, xi0: f64) -> Self {
        GridAxes {
            times: (0..len).map(|n| n as f64 / fs).collect(),
            scales: grid.scales().to_vec(),
            frequencies: grid
                .scales()
                .iter()
                .map(|s| grid.frequency_of(xi0, *s))
                .collect(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))?;
        write_atomic(path, text.as_bytes())
    }
}

// ---------------------------------------------------------------- manifest

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let k = file.read(&mut buf).map_err(|e| io_err(path, e))?;
        if k == 0 {
            break;
        }
        hasher.update(&buf[..k]);
    }
    Ok(hex::encode(hasher.finalize()))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self> {
        Ok(FileDigest {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub version: String,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub timings: Vec<(String, f64)>,
    /// `"ok"`, or `"not_converged"` with partial outputs kept.
    pub status: String,
    pub notes: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value, seed: Option<u64>) -> Self {
        RunManifest {
            command: command.to_string(),
            config,
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings: Vec::new(),
            status: "ok".into(),
            notes: Vec::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(FileDigest::of(path)?);
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) -> Result<()> {
        self.outputs.push(FileDigest::of(path)?);
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))?;
        write_atomic(path, text.as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        serde_json::from_str(&text).map_err(|e| parse_err(path, e.line(), e))
    }

    /// Names of outputs whose digest no longer matches the file on disk.
    pub fn stale_outputs(&self) -> Vec<String> {
        self.outputs
            .iter()
            .filter(|d| {
                sha256_file(Path::new(&d.path))
                    .map(|h| h != d.sha256)
                    .unwrap_or(true)
            })
            .map(|d| d.path.clone())
            .collect()
    }
}

// ---------------------------------------------------------------- configs

fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_toml(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

fn parse_toml<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| {
        let line = e
            .span()
            .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1);
        match line {
            Some(l) => Error::Config(format!("line {l}: {}", e.message())),
            None => Error::Config(e.message().to_string()),
        }
    })
}

/// Spectrum source: a builtin name (`two_hann`, `flat`) or a CSV path.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SpectrumSource {
    #[serde(default)]
    pub builtin: Option<String>,
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default = "default_spectrum_points")]
    pub points: usize,
}

fn default_spectrum_points() -> usize {
    1024
}

impl SpectrumSource {
    pub fn load(&self, fs_hz: f64, base: &Path) -> Result<PriorSpectrum> {
        match (&self.builtin, &self.path) {
            (Some(name), None) => match name.as_str() {
                "two_hann" => PriorSpectrum::two_hann(fs_hz, self.points),
                "flat" => PriorSpectrum::flat(fs_hz, self.points, 1.0),
                other => Err(Error::Config(format!("unknown builtin spectrum `{other}`"))),
            },
            (None, Some(p)) => read_spectrum_csv(&base.join(p)),
            _ => Err(Error::Config(
                "spectrum needs exactly one of `builtin` or `path`".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WarpConfig {
    Identity,
    Linear {
        slope: f64,
    },
    DampedSine {
        #[serde(default)]
        amplitude: Option<f64>,
        #[serde(default)]
        decay: Option<f64>,
        #[serde(default)]
        freq: Option<f64>,
    },
}

impl WarpConfig {
    pub fn build(&self, duration: f64) -> Result<WarpFunction> {
        match *self {
            WarpConfig::Identity => Ok(WarpFunction::Identity),
            WarpConfig::Linear { slope } => WarpFunction::linear(slope),
            WarpConfig::DampedSine {
                amplitude,
                decay,
                freq,
            } => WarpFunction::damped_sine(
                amplitude.unwrap_or(0.4),
                decay.unwrap_or(2.0 / duration),
                freq.unwrap_or(3.0 / duration),
                duration,
            ),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SignalConfig {
    WarpedStationary,
    LocallyHarmonic {
        base_freq: f64,
        #[serde(default = "default_transition")]
        transition: f64,
        #[serde(default)]
        amplitude_depth: f64,
        #[serde(default = "default_amplitude_period")]
        amplitude_period: f64,
    },
}

fn default_transition() -> f64 {
    1.0
}

fn default_amplitude_period() -> f64 {
    40.0
}

/// Experiment description for `generate`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub fs: f64,
    pub duration: f64,
    pub snr_db: f64,
    pub seed: u64,
    #[serde(default = "default_signal")]
    pub signal: SignalConfig,
    pub spectrum: SpectrumSource,
    pub warp: WarpConfig,
}

fn default_signal() -> SignalConfig {
    SignalConfig::WarpedStationary
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        read_toml(path)
    }

    pub fn parse(text: &str) -> Result<Self> {
        parse_toml(text)
    }

    /// `base` resolves a relative spectrum path.
    pub fn to_spec(&self, base: &Path) -> Result<ExperimentSpec> {
        let kind = match self.signal {
            SignalConfig::WarpedStationary => SignalKind::WarpedStationary,
            SignalConfig::LocallyHarmonic {
                base_freq,
                transition,
                amplitude_depth,
                amplitude_period,
            } => SignalKind::LocallyHarmonic {
                base_freq,
                transition,
                amplitude_depth,
                amplitude_period,
            },
        };
        Ok(ExperimentSpec {
            kind,
            spectrum: self.spectrum.load(self.fs, base)?,
            warp: self.warp.build(self.duration)?,
            duration: self.duration,
            fs: self.fs,
            snr_db: self.snr_db,
            seed: self.seed,
        })
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum PriorChoice {
    Spectrum,
    Sharp,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum SolverChoice {
    Grid,
    QuasiNewton,
}

/// Analysis setup for `estimate`, `denoise` and `scalogram`. Frequencies
/// given as fractions of `fs` when `relative` is set.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct EstimateConfig {
    pub wavelet: String,
    /// Wavelet peak frequency as a fraction of `fs`.
    pub xi0_ratio: f64,
    pub wavelet_bandwidth: f64,
    pub q: f64,
    /// Lowest and highest analysed frequencies as fractions of `fs`.
    pub f_lo_ratio: f64,
    pub f_hi_ratio: f64,
    pub scales: usize,
    pub sigma2: Option<f64>,
    pub noise_floor_band: Option<(f64, f64)>,
    pub lambda: f64,
    pub bandwidth: usize,
    pub max_iters: usize,
    pub theta_min: f64,
    pub theta_max: f64,
    pub ridge_eps: f64,
    pub solver: SolverChoice,
    pub grid_step: f64,
    pub update_spectrum: bool,
    pub prior: PriorChoice,
    /// Scale spread of the sharp prior.
    pub sharp_sigma_s: f64,
    /// Initial spectrum CSV; Welch estimate when absent.
    pub init_spectrum: Option<PathBuf>,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        EstimateConfig {
            wavelet: "log_gaussian".into(),
            xi0_ratio: 0.25,
            wavelet_bandwidth: 0.15,
            q: 2.0,
            f_lo_ratio: 70.0 / 2048.0,
            f_hi_ratio: 400.0 / 2048.0,
            scales: 12,
            sigma2: None,
            noise_floor_band: None,
            lambda: 1e-2,
            bandwidth: 128,
            max_iters: 30,
            theta_min: -3.0,
            theta_max: 3.0,
            ridge_eps: crate::prior::DEFAULT_RIDGE_EPS,
            solver: SolverChoice::Grid,
            grid_step: 0.05,
            update_spectrum: true,
            prior: PriorChoice::Spectrum,
            sharp_sigma_s: 0.1,
            init_spectrum: None,
        }
    }
}

impl EstimateConfig {
    pub fn load(path: &Path) -> Result<Self> {
        read_toml(path)
    }

    pub fn parse(text: &str) -> Result<Self> {
        parse_toml(text)
    }

    pub fn wavelet_spec(&self, fs: f64) -> Result<WaveletSpec> {
        WaveletSpec::from_name(&self.wavelet, self.xi0_ratio * fs, self.wavelet_bandwidth)
    }

    pub fn scale_grid(&self, fs: f64) -> Result<ScaleGrid> {
        ScaleGrid::from_frequency_range(
            self.q,
            self.xi0_ratio * fs,
            self.f_lo_ratio * fs,
            self.f_hi_ratio * fs,
            self.scales,
        )
    }

    pub fn em_config(&self, sigma2: f64) -> Result<EmConfig> {
        let solver = match self.solver {
            SolverChoice::Grid => Solver::GridRefine {
                step: self.grid_step,
                tol: 1e-8,
            },
            SolverChoice::QuasiNewton => Solver::QuasiNewton {
                tol: 1e-8,
                max_steps: 50,
            },
        };
        let cfg = EmConfig {
            sigma2,
            lambda: self.lambda,
            bandwidth: self.bandwidth,
            max_iters: self.max_iters,
            theta_bounds: (self.theta_min, self.theta_max),
            ridge_eps: self.ridge_eps,
            solver,
            update_spectrum: self.update_spectrum,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
