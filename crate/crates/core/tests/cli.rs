//! End-to-end checks of the command-line interface: exit codes, file
//! contracts, and the per-order export format.

use std::path::Path;
use std::process::{Command, Output};

use taylor_unfold::dsp::{read_spectrogram_csv, read_wav, spec_add, write_wav};
use taylor_unfold::train::{synthesize_mixture, MixtureRecipe};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_taylor-unfold"))
}

fn run(args: &[&str]) -> Output {
    let mut cmd = bin();
    cmd.args(args);
    cmd.output().expect("spawn taylor-unfold")
}

fn write_mixture(dir: &Path, seed: u64) -> (std::path::PathBuf, std::path::PathBuf) {
    let recipe = MixtureRecipe { seed, snr_db: 0.0, length_s: 0.5 };
    let (noisy, clean, _) = synthesize_mixture(&recipe).unwrap();
    let n = dir.join(format!("noisy_{seed}.wav"));
    let c = dir.join(format!("clean_{seed}.wav"));
    write_wav(&n, &noisy).unwrap();
    write_wav(&c, &clean).unwrap();
    (n, c)
}

const TINY_CFG: &str = "q = 3\nchannels = 4\ndepths = 0\nstcm_groups = 1\nepochs = 1\ntrain_utts = 2\nval_utts = 1\nbatch = 2\nlength_s = 0.2\nlr = 1e-3\n";

fn train_tiny(dir: &Path) -> std::path::PathBuf {
    let cfg = dir.join("cfg.txt");
    std::fs::write(&cfg, TINY_CFG).unwrap();
    let out = run(&["train", "--config", cfg.to_str().unwrap(), "--out", dir.join("run").to_str().unwrap()]);
    assert!(out.status.success(), "{out:?}");
    dir.join("run").join("best.ckpt")
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(run(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(run(&["enhance", "--bogus-flag"]).status.code(), Some(1));
    // --help is not an error
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_inputs_exit_2_and_name_the_path() {
    let out = run(&["train", "--config", "/nonexistent/cfg.txt", "--out", "/tmp/x"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/cfg.txt"));
}

#[test]
fn bad_config_key_exits_1_and_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.txt");
    std::fs::write(&cfg, "learning_rate = 0.1\n").unwrap();
    let out = run(&["train", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));
}

#[test]
fn enhance_preserves_length_and_zero_maps_to_zero() {
    let dir = tempfile::tempdir().unwrap();
    let (noisy, _) = write_mixture(dir.path(), 1);
    let out_wav = dir.path().join("enhanced.wav");
    let out = run(&[
        "enhance", "--in", noisy.to_str().unwrap(), "--out", out_wav.to_str().unwrap(),
        "--classical", "wiener",
    ]);
    assert!(out.status.success(), "{out:?}");
    assert_eq!(read_wav(&out_wav).unwrap().len(), read_wav(&noisy).unwrap().len());

    // all-zero input stays exactly zero through the linear classical path
    let zero = dir.path().join("zero.wav");
    write_wav(&zero, &taylor_unfold::dsp::Waveform::new(vec![0.0; 8000], 16_000).unwrap()).unwrap();
    let zero_out = dir.path().join("zero_out.wav");
    let out = run(&[
        "enhance", "--in", zero.to_str().unwrap(), "--out", zero_out.to_str().unwrap(),
        "--classical", "subtract",
    ]);
    assert!(out.status.success(), "{out:?}");
    assert!(read_wav(&zero_out).unwrap().samples.iter().all(|&s| s == 0.0));
}

#[test]
fn enhance_requires_exactly_one_backend() {
    let dir = tempfile::tempdir().unwrap();
    let (noisy, _) = write_mixture(dir.path(), 2);
    let out_wav = dir.path().join("e.wav");
    let out = run(&["enhance", "--in", noisy.to_str().unwrap(), "--out", out_wav.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn inspect_exports_six_grids_that_sum_to_the_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = train_tiny(dir.path());
    let (noisy, _) = write_mixture(dir.path(), 3);
    let exp = dir.path().join("exports");
    let out = run(&[
        "inspect", "--in", noisy.to_str().unwrap(), "--ckpt", ckpt.to_str().unwrap(),
        "--out", exp.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{out:?}");

    // Q=3 checkpoint: coarse, three weighted orders, residual sum, estimate
    let names = ["order_0", "order_1", "order_2", "order_3", "residual_sum", "estimate"];
    let csvs = std::fs::read_dir(&exp)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "csv"))
        .count();
    assert_eq!(csvs, 6);
    for n in names {
        assert!(exp.join(format!("{n}.csv")).exists(), "missing {n}.csv");
        assert!(exp.join(format!("{n}.pgm")).exists(), "missing {n}.pgm");
    }

    let grid = |n: &str| read_spectrogram_csv(&exp.join(format!("{n}.csv"))).unwrap();
    let mut sum = grid("order_0");
    for q in 1..=3 {
        sum = spec_add(&sum, &grid(&format!("order_{q}"))).unwrap();
    }
    let est = grid("estimate");
    for i in 0..est.cells() {
        assert!((sum.real[i] - est.real[i]).abs() <= 1e-5);
        assert!((sum.imag[i] - est.imag[i]).abs() <= 1e-5);
    }
}

#[test]
fn eval_reports_identity_pairs_at_the_clamp() {
    let dir = tempfile::tempdir().unwrap();
    let (_, clean) = write_mixture(dir.path(), 4);
    let manifest = dir.path().join("pairs.csv");
    std::fs::write(&manifest, format!("{p},{p}\n", p = clean.display())).unwrap();
    let metrics = dir.path().join("metrics.csv");
    let out = run(&["eval", "--pairs", manifest.to_str().unwrap(), "--out", metrics.to_str().unwrap()]);
    assert!(out.status.success(), "{out:?}");
    let text = std::fs::read_to_string(&metrics).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("utt_id,sisnr_db,lsd_db"));
    let row = lines.next().unwrap();
    assert!(row.contains("100.000000"), "identity pair should clamp: {row}");
}

#[test]
fn eval_lists_every_missing_file() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("pairs.csv");
    std::fs::write(&manifest, "gone_a.wav,gone_b.wav\n").unwrap();
    let metrics = dir.path().join("m.csv");
    let out = run(&["eval", "--pairs", manifest.to_str().unwrap(), "--out", metrics.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("gone_a.wav") && err.contains("gone_b.wav"));
}

#[test]
fn eval_empty_manifest_is_ok() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("pairs.csv");
    std::fs::write(&manifest, "# nothing yet\n").unwrap();
    let metrics = dir.path().join("m.csv");
    let out = run(&["eval", "--pairs", manifest.to_str().unwrap(), "--out", metrics.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(std::fs::read_to_string(&metrics).unwrap(), "utt_id,sisnr_db,lsd_db\n");
}

#[test]
fn selftest_passes_on_clean_checkout() {
    let out = run(&["selftest"]);
    assert!(out.status.success(), "{out:?}");
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.matches(": ok").count(), 3, "unexpected selftest output: {text}");
}
