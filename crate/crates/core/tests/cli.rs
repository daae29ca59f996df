// End-to-end checks of the `warpscale` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;
use warpscale::io::{self, RunManifest};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_warpscale"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const EXPERIMENT: &str = r#"
fs = 512.0
duration = 0.5
snr_db = 10.0
seed = 3

[spectrum]
builtin = "two_hann"
points = 256

[warp]
kind = "damped_sine"
"#;

const SMALL_ANALYSIS: &str = "scales = 5\nbandwidth = 64\nwavelet_bandwidth = 0.3\n";

fn estimate_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(format!("{name}.toml"));
    fs::write(&path, body).unwrap();
    path
}

/// Generates the small experiment into `dir/data` and returns that folder.
fn generate(dir: &Path) -> PathBuf {
    let cfg = dir.join("experiment.toml");
    fs::write(&cfg, EXPERIMENT).unwrap();
    let data = dir.join("data");
    let out = run(&["generate", "--config", p(&cfg), "--out", p(&data)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    data
}

fn sigma2_of(data: &Path) -> String {
    let m = RunManifest::read(&data.join("manifest.json")).unwrap();
    m.notes
        .iter()
        .find_map(|n| n.strip_prefix("sigma2=").map(str::to_string))
        .expect("generate records sigma2")
}

fn trace_logliks(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().to_string())
        .collect()
}

#[test]
fn generate_is_byte_identical_for_equal_seeds() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let (da, db) = (generate(a.path()), generate(b.path()));
    for name in ["clean.csv", "noisy.csv", "true_theta.csv", "spectrum.csv"] {
        assert_eq!(
            fs::read(da.join(name)).unwrap(),
            fs::read(db.join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn manifest_digests_match_written_files() {
    let dir = TempDir::new().unwrap();
    let data = generate(dir.path());
    let m = RunManifest::read(&data.join("manifest.json")).unwrap();
    assert_eq!(m.command, "generate");
    assert_eq!(m.seed, Some(3));
    assert!(m.outputs.len() >= 4);
    for d in &m.outputs {
        assert_eq!(
            io::sha256_file(Path::new(&d.path)).unwrap(),
            d.sha256,
            "{}",
            d.path
        );
    }
    assert!(m.stale_outputs().is_empty());
}

#[test]
fn huge_lambda_stops_after_one_iteration() {
    let dir = TempDir::new().unwrap();
    let data = generate(dir.path());
    let cfg = estimate_config(dir.path(), "small", SMALL_ANALYSIS);
    let out = dir.path().join("est");
    let s2 = sigma2_of(&data);
    let res = run(&[
        "estimate",
        "--signal",
        p(&data.join("noisy.csv")),
        "--config",
        p(&cfg),
        "--out",
        p(&out),
        "--sigma2",
        &s2,
        "--lambda",
        "1e9",
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(trace_logliks(&out.join("trace.csv")).len(), 2);
    for name in [
        "coefficients.bin",
        "theta.csv",
        "state.json",
        "spectrum.csv",
        "manifest.json",
    ] {
        assert!(out.join(name).exists(), "{name}");
    }
    let coeffs = io::read_complex_matrix(&out.join("coefficients.bin")).unwrap();
    assert_eq!((coeffs.nrows(), coeffs.ncols()), (256, 5));
}

#[test]
fn non_convergence_exits_with_code_four_and_keeps_outputs() {
    let dir = TempDir::new().unwrap();
    let data = generate(dir.path());
    let cfg = estimate_config(
        dir.path(),
        "one",
        &format!("{SMALL_ANALYSIS}max_iters = 1\nlambda = 1e-12\n"),
    );
    let out = dir.path().join("est");
    let s2 = sigma2_of(&data);
    let res = run(&[
        "estimate",
        "--signal",
        p(&data.join("noisy.csv")),
        "--config",
        p(&cfg),
        "--out",
        p(&out),
        "--sigma2",
        &s2,
    ]);
    assert_eq!(code(&res), 4, "{}", String::from_utf8_lossy(&res.stderr));
    let m = RunManifest::read(&out.join("manifest.json")).unwrap();
    assert_eq!(m.status, "not_converged");
    assert!(out.join("theta.csv").exists());
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let dir = TempDir::new().unwrap();
    let data = generate(dir.path());
    let s2 = sigma2_of(&data);
    let signal = data.join("noisy.csv");
    let three = estimate_config(
        dir.path(),
        "three",
        &format!("{SMALL_ANALYSIS}max_iters = 3\nlambda = 1e-12\n"),
    );
    let two = estimate_config(
        dir.path(),
        "two",
        &format!("{SMALL_ANALYSIS}max_iters = 2\nlambda = 1e-12\n"),
    );

    let full = dir.path().join("full");
    let res = run(&[
        "estimate",
        "--signal",
        p(&signal),
        "--config",
        p(&three),
        "--out",
        p(&full),
        "--sigma2",
        &s2,
    ]);
    assert!(
        matches!(code(&res), 0 | 4),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );

    let first = dir.path().join("first");
    let res = run(&[
        "estimate",
        "--signal",
        p(&signal),
        "--config",
        p(&two),
        "--out",
        p(&first),
        "--sigma2",
        &s2,
    ]);
    assert!(matches!(code(&res), 0 | 4));
    let resumed = dir.path().join("resumed");
    let res = run(&[
        "estimate",
        "--signal",
        p(&signal),
        "--config",
        p(&three),
        "--out",
        p(&resumed),
        "--sigma2",
        &s2,
        "--resume",
        p(&first.join("state.json")),
    ]);
    assert!(
        matches!(code(&res), 0 | 4),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );

    assert_eq!(
        fs::read(full.join("theta.csv")).unwrap(),
        fs::read(resumed.join("theta.csv")).unwrap()
    );
    assert_eq!(
        fs::read(full.join("coefficients.bin")).unwrap(),
        fs::read(resumed.join("coefficients.bin")).unwrap()
    );
    assert_eq!(
        trace_logliks(&full.join("trace.csv")),
        trace_logliks(&resumed.join("trace.csv"))
    );
}

#[test]
fn zero_signal_denoises_to_zero() {
    let dir = TempDir::new().unwrap();
    let signal = dir.path().join("zeros.csv");
    io::write_signal_csv(&signal, &vec![0.0; 256], 512.0).unwrap();
    let cfg = estimate_config(dir.path(), "small", SMALL_ANALYSIS);
    let out = dir.path().join("den");
    let res = run(&[
        "denoise",
        "--signal",
        p(&signal),
        "--config",
        p(&cfg),
        "--out",
        p(&out),
        "--sigma2",
        "0.01",
    ]);
    assert!(
        matches!(code(&res), 0 | 4),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let den = io::read_signal(&out.join("denoised.csv")).unwrap();
    assert!(den.samples().iter().all(|v| *v == 0.0));
}

#[test]
fn zero_signal_gives_zero_scalogram() {
    let dir = TempDir::new().unwrap();
    let signal = dir.path().join("zeros.csv");
    io::write_signal_csv(&signal, &vec![0.0; 128], 512.0).unwrap();
    let out = dir.path().join("scal");
    let res = run(&["scalogram", "--signal", p(&signal), "--out", p(&out)]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let m = io::read_complex_matrix(&out.join("scalogram.bin")).unwrap();
    assert!(m.iter().all(|v| v.norm() == 0.0));
    assert!(out.join("axes.json").exists());
}

#[test]
fn missing_noise_variance_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let data = generate(dir.path());
    let out = dir.path().join("est");
    let res = run(&[
        "estimate",
        "--signal",
        p(&data.join("noisy.csv")),
        "--out",
        p(&out),
    ]);
    assert_eq!(code(&res), 2);
    assert!(String::from_utf8_lossy(&res.stderr).contains("sigma2"));
}

#[test]
fn unknown_config_key_reports_its_line() {
    let dir = TempDir::new().unwrap();
    let data = generate(dir.path());
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "scales = 4\nnot_a_key = 1\n").unwrap();
    let res = run(&[
        "estimate",
        "--signal",
        p(&data.join("noisy.csv")),
        "--config",
        p(&cfg),
        "--out",
        p(&dir.path().join("x")),
        "--sigma2",
        "0.1",
    ]);
    assert_eq!(code(&res), 2);
    assert!(
        String::from_utf8_lossy(&res.stderr).contains("line 2"),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
}

#[test]
fn malformed_signal_reports_file_and_line() {
    let dir = TempDir::new().unwrap();
    let signal = dir.path().join("bad.csv");
    fs::write(&signal, "fs=100\n0.5\nabc\n").unwrap();
    let res = run(&[
        "scalogram",
        "--signal",
        p(&signal),
        "--out",
        p(&dir.path().join("x")),
    ]);
    assert_eq!(code(&res), 2);
    let err = String::from_utf8_lossy(&res.stderr).to_string();
    assert!(err.contains("bad.csv:3"), "{err}");
}

#[test]
fn export_converts_binary_matrix() {
    let dir = TempDir::new().unwrap();
    let signal = dir.path().join("sig.csv");
    let y: Vec<f64> = (0..128).map(|n| (n as f64 * 0.7).sin()).collect();
    io::write_signal_csv(&signal, &y, 512.0).unwrap();
    let out = dir.path().join("scal");
    assert_eq!(
        code(&run(&[
            "scalogram",
            "--signal",
            p(&signal),
            "--out",
            p(&out)
        ])),
        0
    );
    let csv = dir.path().join("grid.csv");
    let res = run(&[
        "export",
        "--matrix",
        p(&out.join("scalogram.bin")),
        "--out",
        p(&csv),
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(
        text.lines().count(),
        fs::read_to_string(out.join("scalogram.csv"))
            .unwrap()
            .lines()
            .count()
    );
}

#[test]
fn clean_input_stays_above_the_reconstruction_ceiling() {
    // a 300 dB input is limited by the model's reconstruction distortion,
    // which should stay above 24 dB
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("experiment.toml");
    fs::write(
        &cfg,
        EXPERIMENT
            .replace("snr_db = 10.0", "snr_db = 300.0")
            .replace("duration = 0.5", "duration = 1.0"),
    )
    .unwrap();
    let data = dir.path().join("data");
    assert_eq!(
        code(&run(&["generate", "--config", p(&cfg), "--out", p(&data)])),
        0
    );
    let s2 = sigma2_of(&data);
    let out = dir.path().join("den");
    let est = estimate_config(
        dir.path(),
        "ceiling",
        "scales = 8\nwavelet_bandwidth = 0.15\nbandwidth = 128\n",
    );
    let res = run(&[
        "denoise",
        "--signal",
        p(&data.join("noisy.csv")),
        "--config",
        p(&est),
        "--out",
        p(&out),
        "--sigma2",
        &s2,
        "--clean",
        p(&data.join("clean.csv")),
    ]);
    assert!(
        matches!(code(&res), 0 | 4),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let row = fs::read_to_string(out.join("snr.csv")).unwrap();
    let vals: Vec<f64> = row
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();
    assert!(vals[0] > 290.0, "input SNR {}", vals[0]);
    assert!(vals[1] >= 24.0, "output SNR {}", vals[1]);
}
