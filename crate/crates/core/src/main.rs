use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;

use warpscale::em::{
    calibrated_sharp_prior, floored_noise_variance, means_under, noise_variance_from_band,
    EmProblem, EmResult, EmState, PriorKind,
};
use warpscale::io::{self, EstimateConfig, ExperimentConfig, GridAxes, PriorChoice, RunManifest};
use warpscale::posterior::{assemble_cy, estimator_report, reconstruct, CovMode};
use warpscale::prior::{CovarianceFunction, PriorModel};
use warpscale::signal::{output_snr, ExperimentSpec};
use warpscale::wavelet::{bank_scalogram, AtomBank, SampledSignal};
use warpscale::Error;

#[derive(Parser)]
#[command(
    name = "warpscale",
    version,
    about = "Time-warped wavelet synthesis: estimation, denoising, time-scale maps"
)]
struct Cli {
    /// Accepted for compatibility; computation is always sequential and deterministic.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic experiment: clean and noisy signals, true shifts and spectrum.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Also write 16-bit WAV copies of the signals.
        #[arg(long)]
        wav: bool,
    },
    /// Estimate coefficients, shifts and spectrum with EM.
    Estimate {
        #[command(flatten)]
        opts: EstimateOpts,
        /// Resume from a saved EM state (`state.json` of an earlier run).
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Estimate, then reconstruct the clean signal.
    Denoise {
        #[command(flatten)]
        opts: EstimateOpts,
        /// Clean reference for SNR and bias/variance diagnostics.
        #[arg(long)]
        clean: Option<PathBuf>,
        /// Write the denoised signal as WAV instead of CSV.
        #[arg(long)]
        wav: bool,
    },
    /// Plain wavelet transform, and the adapted map when an EM state is given.
    Scalogram {
        #[command(flatten)]
        opts: EstimateOpts,
        /// EM state whose shifts and spectrum define the adapted map.
        #[arg(long)]
        state: Option<PathBuf>,
    },
    /// Denoising sweep over input SNRs and seeds.
    Bench {
        /// `denoise` (full sweep) or `single` (one cell).
        #[arg(long, default_value = "denoise")]
        suite: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Convert a binary coefficient matrix to a CSV magnitude grid.
    Export {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Clone)]
struct EstimateOpts {
    /// Input signal (CSV with `fs=` header, or WAV).
    #[arg(long)]
    signal: PathBuf,
    /// Analysis config (TOML); defaults are used for absent keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    sigma2: Option<f64>,
    /// Signal-free band `lo,hi` in Hz used to estimate the noise variance.
    #[arg(long, value_parser = parse_band)]
    noise_floor_band: Option<(f64, f64)>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    bandwidth: Option<usize>,
    #[arg(long, value_enum)]
    prior: Option<PriorFlag>,
    /// Recorded in the manifest; estimation itself is deterministic.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PriorFlag {
    Spectrum,
    Sharp,
}

fn parse_band(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected lo,hi")?;
    let lo = a.trim().parse::<f64>().map_err(|e| e.to_string())?;
    let hi = b.trim().parse::<f64>().map_err(|e| e.to_string())?;
    Ok((lo, hi))
}

/// Outcome of a command that ran to completion.
enum Outcome {
    Done,
    NotConverged,
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numeric() {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if cli.threads != 1 {
        log::info!(
            "--threads {} ignored: computation is sequential",
            cli.threads
        );
    }
    let result = match cli.command {
        Command::Generate {
            config,
            out,
            seed,
            wav,
        } => cmd_generate(&config, &out, seed, wav),
        Command::Estimate { opts, resume } => cmd_estimate(&opts, resume.as_deref()),
        Command::Denoise { opts, clean, wav } => cmd_denoise(&opts, clean.as_deref(), wav),
        Command::Scalogram { opts, state } => cmd_scalogram(&opts, state.as_deref()),
        Command::Bench {
            suite,
            out,
            seeds,
            seed,
        } => cmd_bench(&suite, &out, seeds, seed.unwrap_or(1)),
        Command::Export { matrix, out } => cmd_export(&matrix, &out),
    };
    match result {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::NotConverged) => {
            eprintln!("warning: EM reached max_iters without meeting the stopping rule");
            ExitCode::from(4)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn config_base(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn cmd_generate(
    config: &Path,
    out: &Path,
    seed: Option<u64>,
    wav: bool,
) -> warpscale::Result<Outcome> {
    let t = Instant::now();
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let spec = cfg.to_spec(&config_base(config))?;
    let exp = spec.generate()?;
    std::fs::create_dir_all(out)?;
    let mut manifest = RunManifest::new(
        "generate",
        serde_json::to_value(&cfg).unwrap_or_default(),
        Some(cfg.seed),
    );
    manifest.add_input(config)?;

    let q = EstimateConfig::default().q;
    let files = [
        ("clean.csv", None),
        ("noisy.csv", None),
        ("true_theta.csv", None),
        ("spectrum.csv", None),
        ("clean.wav", Some(())),
        ("noisy.wav", Some(())),
    ];
    io::write_signal_csv(&out.join("clean.csv"), &exp.clean, exp.fs)?;
    io::write_signal_csv(&out.join("noisy.csv"), &exp.noisy, exp.fs)?;
    io::write_thetas_csv(&out.join("true_theta.csv"), &exp.true_thetas(q), exp.fs)?;
    io::write_spectrum_csv(&out.join("spectrum.csv"), &exp.spectrum)?;
    if wav {
        io::write_wav(&out.join("clean.wav"), &exp.clean, exp.fs)?;
        io::write_wav(&out.join("noisy.wav"), &exp.noisy, exp.fs)?;
    }
    for (name, wav_only) in files {
        if wav_only.is_none() || wav {
            manifest.add_output(&out.join(name))?;
        }
    }
    manifest.notes.push(format!("sigma2={}", exp.sigma2));
    manifest.notes.push(format!("true_theta uses q={q}"));
    manifest
        .timings
        .push(("total".into(), t.elapsed().as_secs_f64()));
    manifest.write(&out.join("manifest.json"))?;
    Ok(Outcome::Done)
}

/// Everything an estimation-type command needs after option resolution.
struct Setup {
    signal: SampledSignal,
    cfg: EstimateConfig,
    sigma2: f64,
    manifest: RunManifest,
}

fn setup(opts: &EstimateOpts, command: &str) -> warpscale::Result<Setup> {
    let signal = io::read_signal(&opts.signal)?;
    let mut cfg = match &opts.config {
        Some(p) => EstimateConfig::load(p)?,
        None => EstimateConfig::default(),
    };
    if let Some(l) = opts.lambda {
        cfg.lambda = l;
    }
    if let Some(b) = opts.bandwidth {
        cfg.bandwidth = b;
    }
    if let Some(p) = opts.prior {
        cfg.prior = match p {
            PriorFlag::Spectrum => PriorChoice::Spectrum,
            PriorFlag::Sharp => PriorChoice::Sharp,
        };
    }
    if let Some(s) = opts.sigma2 {
        cfg.sigma2 = Some(s);
    }
    if let Some(band) = opts.noise_floor_band {
        cfg.noise_floor_band = Some(band);
    }
    let sigma2 = match (cfg.sigma2, cfg.noise_floor_band) {
        (Some(s), _) => s,
        (None, Some((lo, hi))) => noise_variance_from_band(signal.samples(), signal.fs(), lo, hi)?,
        (None, None) => {
            return Err(Error::Config(
                "noise variance unknown: pass --sigma2 or --noise-floor-band lo,hi".into(),
            ))
        }
    };
    let mut manifest = RunManifest::new(
        command,
        serde_json::to_value(&cfg).unwrap_or_default(),
        opts.seed,
    );
    manifest.add_input(&opts.signal)?;
    if let Some(p) = &opts.config {
        manifest.add_input(p)?;
    }
    let floored = floored_noise_variance(signal.samples(), sigma2);
    if floored > sigma2 {
        log::warn!("noise variance {sigma2:e} raised to the numerical floor {floored:e}");
        manifest.notes.push(format!(
            "sigma2 raised from {sigma2} to the numerical floor"
        ));
    }
    let sigma2 = floored;
    manifest.notes.push(format!("sigma2={sigma2}"));
    std::fs::create_dir_all(&opts.out)?;
    Ok(Setup {
        signal,
        cfg,
        sigma2,
        manifest,
    })
}

struct Estimated {
    result: EmResult,
    atoms: AtomBank,
    /// Means under the sharp prior when it was requested.
    sharp_means: Option<DMatrix<warpscale::C64>>,
}

fn run_em(s: &Setup, resume: Option<&Path>) -> warpscale::Result<Estimated> {
    let fs = s.signal.fs();
    let wavelet = s.cfg.wavelet_spec(fs)?;
    let grid = s.cfg.scale_grid(fs)?;
    let atoms = AtomBank::new(&wavelet, &grid, s.signal.len(), fs)?;
    let em_cfg = s.cfg.em_config(s.sigma2)?;
    let problem = EmProblem {
        y: s.signal.samples(),
        atoms: &atoms,
        wavelet: &wavelet,
        cfg: &em_cfg,
        reference: None,
    };
    let state: EmState = match resume {
        Some(p) => io::read_resume_state(p, &wavelet, grid.q(), None)?,
        None => {
            let init = match &s.cfg.init_spectrum {
                Some(p) => Some(io::read_spectrum_csv(p)?),
                None => None,
            };
            problem.initial_state(None, PriorKind::Spectrum(init))?
        }
    };
    let result = problem.run(state)?;
    let sharp_means = match s.cfg.prior {
        PriorChoice::Spectrum => None,
        PriorChoice::Sharp => {
            let spectrum = result
                .spectrum
                .as_ref()
                .ok_or_else(|| Error::Config("sharp prior needs a spectrum".into()))?;
            let rec = reconstruct(&result.means, &atoms)?;
            let target = rec.iter().map(|v| v * v).sum::<f64>() / rec.len() as f64;
            let f = calibrated_sharp_prior(
                spectrum,
                &wavelet,
                &atoms,
                &result.thetas,
                s.cfg.sharp_sigma_s,
                target,
            )?;
            Some(means_under(
                s.signal.samples(),
                &f,
                &atoms,
                &result.thetas,
                &em_cfg,
            )?)
        }
    };
    Ok(Estimated {
        result,
        atoms,
        sharp_means,
    })
}

fn write_estimate_outputs(
    out: &Path,
    est: &Estimated,
    fs: f64,
    manifest: &mut RunManifest,
) -> warpscale::Result<()> {
    let r = &est.result;
    let paths = [
        out.join("coefficients.bin"),
        out.join("theta.csv"),
        out.join("trace.csv"),
        out.join("state.json"),
    ];
    io::write_complex_matrix(&paths[0], est.sharp_means.as_ref().unwrap_or(&r.means))?;
    io::write_thetas_csv(&paths[1], r.thetas.thetas(), fs)?;
    io::write_trace_csv(&paths[2], &r.trace)?;
    io::write_resume_state(
        &paths[3],
        &EmState {
            thetas: r.thetas.clone(),
            f: r.f.clone(),
            trace: r.trace.clone(),
        },
    )?;
    for p in &paths {
        manifest.add_output(p)?;
    }
    if let Some(sp) = &r.spectrum {
        let p = out.join("spectrum.csv");
        io::write_spectrum_csv(&p, sp)?;
        manifest.add_output(&p)?;
    }
    manifest.notes.push(format!(
        "iterations={} converged={}",
        r.iterations, r.converged
    ));
    if !r.converged {
        manifest.status = "not_converged".into();
        manifest
            .notes
            .push("outputs are partial: stopping rule not met".into());
    }
    Ok(())
}

fn finish(
    manifest: &mut RunManifest,
    out: &Path,
    t: Instant,
    converged: bool,
) -> warpscale::Result<Outcome> {
    manifest
        .timings
        .push(("total".into(), t.elapsed().as_secs_f64()));
    manifest.write(&out.join("manifest.json"))?;
    Ok(if converged {
        Outcome::Done
    } else {
        Outcome::NotConverged
    })
}

fn cmd_estimate(opts: &EstimateOpts, resume: Option<&Path>) -> warpscale::Result<Outcome> {
    let t = Instant::now();
    let mut s = setup(opts, "estimate")?;
    if let Some(p) = resume {
        s.manifest.add_input(p)?;
    }
    let est = run_em(&s, resume)?;
    let fs = s.signal.fs();
    write_estimate_outputs(&opts.out, &est, fs, &mut s.manifest)?;
    finish(&mut s.manifest, &opts.out, t, est.result.converged)
}

fn cmd_denoise(opts: &EstimateOpts, clean: Option<&Path>, wav: bool) -> warpscale::Result<Outcome> {
    let t = Instant::now();
    let mut s = setup(opts, "denoise")?;
    let est = run_em(&s, None)?;
    let fs = s.signal.fs();
    write_estimate_outputs(&opts.out, &est, fs, &mut s.manifest)?;
    let means = est.sharp_means.as_ref().unwrap_or(&est.result.means);
    let denoised = reconstruct(means, &est.atoms)?;
    let out_path = opts
        .out
        .join(if wav { "denoised.wav" } else { "denoised.csv" });
    io::write_signal(&out_path, &denoised, fs)?;
    s.manifest.add_output(&out_path)?;

    if let Some(cp) = clean {
        s.manifest.add_input(cp)?;
        let reference = io::read_signal(cp)?;
        if reference.len() != s.signal.len() {
            return Err(Error::Dimension(
                "clean reference and input differ in length".into(),
            ));
        }
        let y0 = reference.samples();
        let snr_in = output_snr(y0, s.signal.samples())?;
        let snr_out = output_snr(y0, &denoised)?;
        let row = opts.out.join("snr.csv");
        std::fs::write(
            &row,
            format!(
                "input_snr,output_snr,iterations,seconds\n{snr_in},{snr_out},{},{}\n",
                est.result.iterations,
                t.elapsed().as_secs_f64()
            ),
        )?;
        s.manifest.add_output(&row)?;

        // bias and variance of the final estimator, from the dense covariance
        let f = match (&s.cfg.prior, &est.result.spectrum) {
            (PriorChoice::Sharp, Some(sp)) => {
                let target = denoised.iter().map(|v| v * v).sum::<f64>() / denoised.len() as f64;
                calibrated_sharp_prior(
                    sp,
                    &s.cfg.wavelet_spec(fs)?,
                    &est.atoms,
                    &est.result.thetas,
                    s.cfg.sharp_sigma_s,
                    target,
                )?
            }
            _ => est.result.f.clone(),
        };
        let prior = PriorModel::new(f, est.atoms.grid().clone())
            .with_ridge(s.cfg.ridge_eps)
            .build_prior(&est.result.thetas)?;
        let cy = assemble_cy(&prior, &est.atoms, s.sigma2, CovMode::Dense)?;
        let report = estimator_report(y0, &cy)?;
        let diag = opts.out.join("diagnostics.csv");
        let mut text = String::from("n,clean,denoised,bias,error_variance\n");
        for n in 0..y0.len() {
            text.push_str(&format!(
                "{n},{},{},{},{}\n",
                y0[n], denoised[n], report.bias[n], report.error_variance_diag[n]
            ));
        }
        std::fs::write(&diag, text)?;
        s.manifest.add_output(&diag)?;
        s.manifest
            .notes
            .push(format!("input_snr={snr_in} output_snr={snr_out}"));
    }
    finish(&mut s.manifest, &opts.out, t, est.result.converged)
}

fn magnitude(m: &DMatrix<warpscale::C64>) -> DMatrix<f64> {
    m.map(|v| v.norm())
}

fn cmd_scalogram(opts: &EstimateOpts, state: Option<&Path>) -> warpscale::Result<Outcome> {
    let t = Instant::now();
    let signal = io::read_signal(&opts.signal)?;
    let cfg = match &opts.config {
        Some(p) => EstimateConfig::load(p)?,
        None => EstimateConfig::default(),
    };
    let fs = signal.fs();
    let wavelet = cfg.wavelet_spec(fs)?;
    let grid = cfg.scale_grid(fs)?;
    let atoms = AtomBank::new(&wavelet, &grid, signal.len(), fs)?;
    std::fs::create_dir_all(&opts.out)?;
    let mut manifest = RunManifest::new(
        "scalogram",
        serde_json::to_value(&cfg).unwrap_or_default(),
        opts.seed,
    );
    manifest.add_input(&opts.signal)?;

    let plain = bank_scalogram(&atoms, signal.samples())?;
    let axes = opts.out.join("axes.json");
    GridAxes::new(signal.len(), fs, &grid, wavelet.xi0).write(&axes)?;
    let p_csv = opts.out.join("scalogram.csv");
    let p_bin = opts.out.join("scalogram.bin");
    io::write_real_grid_csv(&p_csv, &magnitude(&plain))?;
    io::write_complex_matrix(&p_bin, &plain)?;
    for p in [&axes, &p_csv, &p_bin] {
        manifest.add_output(p)?;
    }

    if let Some(sp) = state {
        manifest.add_input(sp)?;
        let sigma2 = match (
            opts.sigma2.or(cfg.sigma2),
            opts.noise_floor_band.or(cfg.noise_floor_band),
        ) {
            (Some(s), _) => s,
            (None, Some((lo, hi))) => noise_variance_from_band(signal.samples(), fs, lo, hi)?,
            (None, None) => {
                return Err(Error::Config(
                    "adapted map needs --sigma2 or --noise-floor-band".into(),
                ))
            }
        };
        let em_cfg = cfg.em_config(floored_noise_variance(signal.samples(), sigma2))?;
        let st = io::read_resume_state(sp, &wavelet, grid.q(), None)?;
        let means = means_under(signal.samples(), &st.f, &atoms, &st.thetas, &em_cfg)?;
        let p_adapt = opts.out.join("adapted.csv");
        io::write_real_grid_csv(&p_adapt, &magnitude(&means))?;
        manifest.add_output(&p_adapt)?;
        let wants_sharp =
            matches!(opts.prior, Some(PriorFlag::Sharp)) || cfg.prior == PriorChoice::Sharp;
        if let (true, CovarianceFunction::Spectrum(c)) = (wants_sharp, &st.f) {
            let rec = reconstruct(&means, &atoms)?;
            let target = rec.iter().map(|v| v * v).sum::<f64>() / rec.len() as f64;
            let f = calibrated_sharp_prior(
                c.spectrum(),
                &wavelet,
                &atoms,
                &st.thetas,
                cfg.sharp_sigma_s,
                target,
            )?;
            let sharp = means_under(signal.samples(), &f, &atoms, &st.thetas, &em_cfg)?;
            let p_sharp = opts.out.join("adapted_sharp.csv");
            io::write_real_grid_csv(&p_sharp, &magnitude(&sharp))?;
            manifest.add_output(&p_sharp)?;
        }
    }
    manifest
        .timings
        .push(("total".into(), t.elapsed().as_secs_f64()));
    manifest.write(&opts.out.join("manifest.json"))?;
    Ok(Outcome::Done)
}

fn cmd_bench(suite: &str, out: &Path, seeds: u64, first_seed: u64) -> warpscale::Result<Outcome> {
    let t = Instant::now();
    let snrs: Vec<f64> = match suite {
        "denoise" => vec![2.0, 5.0, 10.0, 16.0, 20.0, 25.0],
        "single" => vec![16.0],
        other => {
            return Err(Error::Config(format!(
                "unknown bench suite `{other}` (denoise, single)"
            )))
        }
    };
    let seeds = if suite == "single" { 1 } else { seeds.max(1) };
    let cfg = EstimateConfig::default();
    let (fs, duration) = (2048.0, 1.0);
    let mut table =
        String::from("input_snr,mean_output_snr,std_output_snr,iterations,seconds,failures\n");
    for &snr in &snrs {
        let cell = Instant::now();
        let mut outs = Vec::new();
        let mut iters = 0usize;
        let mut failures = 0usize;
        for k in 0..seeds {
            let seed = first_seed + k;
            let run = || -> warpscale::Result<(f64, usize)> {
                let exp = ExperimentSpec::two_hann_preset(duration, fs, snr, seed)?.generate()?;
                let wavelet = cfg.wavelet_spec(fs)?;
                let atoms = AtomBank::new(&wavelet, &cfg.scale_grid(fs)?, exp.noisy.len(), fs)?;
                let em_cfg = cfg.em_config(floored_noise_variance(&exp.noisy, exp.sigma2))?;
                let problem = EmProblem {
                    y: &exp.noisy,
                    atoms: &atoms,
                    wavelet: &wavelet,
                    cfg: &em_cfg,
                    reference: None,
                };
                let r = problem.run(problem.initial_state(None, PriorKind::Spectrum(None))?)?;
                Ok((
                    output_snr(&exp.clean, &reconstruct(&r.means, &atoms)?)?,
                    r.iterations,
                ))
            };
            match run() {
                Ok((o, it)) => {
                    outs.push(o);
                    iters += it;
                }
                Err(e) => {
                    log::warn!("bench cell snr={snr} seed={seed} failed: {e}");
                    failures += 1;
                }
            }
        }
        let k = outs.len().max(1) as f64;
        let mean = outs.iter().sum::<f64>() / k;
        let std = (outs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / k).sqrt();
        let (mean, std) = if outs.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            (mean, std)
        };
        table.push_str(&format!(
            "{snr},{mean},{std},{},{},{failures}\n",
            iters as f64 / k,
            cell.elapsed().as_secs_f64()
        ));
    }
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    io::write_atomic(out, table.as_bytes())?;
    let mut manifest = RunManifest::new(
        "bench",
        serde_json::json!({"suite": suite, "seeds": seeds, "config": cfg}),
        Some(first_seed),
    );
    manifest.add_output(out)?;
    manifest
        .timings
        .push(("total".into(), t.elapsed().as_secs_f64()));
    let mpath = {
        let mut p = out.as_os_str().to_owned();
        p.push(".manifest.json");
        PathBuf::from(p)
    };
    manifest.write(&mpath)?;
    Ok(Outcome::Done)
}

fn cmd_export(matrix: &Path, out: &Path) -> warpscale::Result<Outcome> {
    let m = io::read_complex_matrix(matrix)?;
    io::write_real_grid_csv(out, &magnitude(&m))?;
    let mut manifest = RunManifest::new("export", serde_json::json!({}), None);
    manifest.add_input(matrix)?;
    manifest.add_output(out)?;
    let mut p = out.as_os_str().to_owned();
    p.push(".manifest.json");
    manifest.write(Path::new(&p))?;
    Ok(Outcome::Done)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn band_flag_parses() {
        assert_eq!(parse_band("10, 20.5").unwrap(), (10.0, 20.5));
        assert!(parse_band("10").is_err());
    }

    #[test]
    fn numeric_errors_map_to_exit_3() {
        assert_eq!(exit_code(&Error::NonFinite("x".into())), 3);
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
    }

    #[test]
    fn resume_of_missing_state_is_config_error() {
        let wavelet = warpscale::wavelet::WaveletSpec::log_gaussian(1.0, 0.2).unwrap();
        let e = io::read_resume_state(Path::new("/nonexistent/state.json"), &wavelet, 2.0, None)
            .unwrap_err();
        assert_eq!(exit_code(&e), 2);
    }
}
