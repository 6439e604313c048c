//! Command-line front end: train, enhance, evaluate, and inspect per-order
//! contributions of the unfolded enhancement model.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use taylor_unfold::autodiff::{grad_check, Graph, Tensor, VarId};
use taylor_unfold::classical::{
    apply_gain, noise_psd_from_lead_in, spectral_subtract, wiener_gain, NoiseEstimate,
    DEFAULT_SPECTRAL_FLOOR,
};
use taylor_unfold::dsp::{
    compress, istft, read_wav_expect, spec_sub, stft, write_magnitude_pgm, write_spectrogram_csv,
    write_wav, AnalysisConfig, ComplexSpectrogram, Waveform,
};
use taylor_unfold::error::{Error, Result};
use taylor_unfold::metrics::{log_spectral_distance_db, sisnr_db, write_metrics_csv, MetricRow};
use taylor_unfold::model::{inv_factorial, TaylorConfig, TaylorModel};
use taylor_unfold::train::{self, TrainConfig};

const PGM_DB_FLOOR: f32 = -60.0;
const NOISE_LEAD_FRAMES: usize = 6;

#[derive(Parser)]
#[command(name = "taylor-unfold", version, about = "Speech enhancement by Taylor-series unfolding")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum ClassicalKind {
    Subtract,
    Wiener,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train on synthetic mixtures from a `key = value` config file
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed from the config file
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Enhance one 16 kHz mono WAV
    Enhance {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Use a classical baseline instead of a checkpoint
        #[arg(long, value_enum)]
        classical: Option<ClassicalKind>,
    },
    /// Export per-order spectrogram contributions as CSV + PGM
    Inspect {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// SISNR/LSD over a manifest of `noisy_path,clean_path` WAV pairs
    Eval {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Metric CSV destination
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the built-in invariant and gradient checks
    Selftest,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let run = match cli.cmd {
        Cmd::Train { config, out, seed } => cmd_train(&config, &out, seed),
        Cmd::Enhance { input, out, ckpt, classical } => {
            cmd_enhance(&input, &out, ckpt.as_deref(), classical)
        }
        Cmd::Inspect { input, ckpt, out } => cmd_inspect(&input, &ckpt, &out),
        Cmd::Eval { pairs, ckpt, out } => cmd_eval(&pairs, ckpt.as_deref(), &out),
        Cmd::Selftest => cmd_selftest(),
    };
    match run {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn cmd_train(config: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let text = std::fs::read_to_string(config)
        .map_err(|e| Error::Data(format!("cannot read config {}: {e}", config.display())))?;
    let mut cfg = TrainConfig::parse(&text)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let mut model = TaylorModel::new(cfg.model.clone(), cfg.seed)?;
    println!(
        "training: Q={} channels={} params={} utts={} epochs={}",
        cfg.model.q,
        cfg.model.channels,
        model.count_params(),
        cfg.train_utts,
        cfg.epochs
    );
    let report = train::train(&mut model, &cfg, out)?;
    println!(
        "done: {} steps, train loss {:.4e} -> {:.4e}, best val {:.4e}",
        report.steps, report.first_step_loss, report.final_train_loss, report.best_val_loss
    );
    println!("checkpoint: {}", report.checkpoint.display());
    println!("log: {}", report.log.display());
    Ok(())
}

fn enhance_classical(wave: &Waveform, kind: ClassicalKind) -> Result<Waveform> {
    let analysis = AnalysisConfig::default();
    let x = stft(wave, &analysis)?;
    let psd = noise_psd_from_lead_in(&x, NOISE_LEAD_FRAMES.min(x.frames))?;
    let out = match kind {
        ClassicalKind::Subtract => {
            spectral_subtract(&x, &NoiseEstimate::Psd(psd), DEFAULT_SPECTRAL_FLOOR)?
        }
        ClassicalKind::Wiener => {
            let gain = wiener_gain(&x, &psd)?;
            apply_gain(&x, &gain)?
        }
    };
    istft(&out, &analysis, Some(wave.len()))
}

fn cmd_enhance(
    input: &Path,
    out: &Path,
    ckpt: Option<&Path>,
    classical: Option<ClassicalKind>,
) -> Result<()> {
    let wave = read_wav_expect(input, train::SAMPLE_RATE)?;
    let enhanced = match (ckpt, classical) {
        (Some(_), Some(_)) => {
            return Err(Error::Config("--ckpt and --classical are mutually exclusive".into()))
        }
        (None, None) => {
            return Err(Error::Config("enhance needs either --ckpt or --classical".into()))
        }
        (None, Some(kind)) => enhance_classical(&wave, kind)?,
        (Some(path), None) => TaylorModel::load(path)?.enhance(&wave)?,
    };
    debug_assert_eq!(enhanced.len(), wave.len());
    write_wav(out, &enhanced)
}

fn export_grid(dir: &Path, stem: &str, spec: &ComplexSpectrogram) -> Result<()> {
    write_spectrogram_csv(&dir.join(format!("{stem}.csv")), spec)?;
    write_magnitude_pgm(&dir.join(format!("{stem}.pgm")), spec, PGM_DB_FLOOR)
}

fn cmd_inspect(input: &Path, ckpt: &Path, out: &Path) -> Result<()> {
    let model = TaylorModel::load(ckpt)?;
    let wave = read_wav_expect(input, train::SAMPLE_RATE)?;
    let analysis = model.analysis();
    let beta = model.config().compression_beta;
    let x = compress(&stft(&wave, &analysis)?, beta)?;
    let (estimate, trace) = model.forward(&x)?;
    std::fs::create_dir_all(out)?;

    // order_0 is the coarse spectrum; order_q (q ≥ 1) carries its 1/q! weight
    export_grid(out, "order_0", &trace.coarse)?;
    for (i, term) in trace.terms.iter().enumerate() {
        let q = i + 1;
        let weighted = taylor_unfold::dsp::spec_scale(term, inv_factorial(q));
        export_grid(out, &format!("order_{q}"), &weighted)?;
    }
    let residual = spec_sub(&estimate, &trace.coarse)?;
    export_grid(out, "residual_sum", &residual)?;
    export_grid(out, "estimate", &estimate)?;
    println!("wrote {} spectrogram exports to {}", trace.terms.len() + 3, out.display());
    Ok(())
}

fn cmd_eval(pairs: &Path, ckpt: Option<&Path>, out: &Path) -> Result<()> {
    let text = std::fs::read_to_string(pairs)
        .map_err(|e| Error::Data(format!("cannot read manifest {}: {e}", pairs.display())))?;
    let mut entries: Vec<(PathBuf, PathBuf)> = Vec::new();
    let mut missing: Vec<String> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (noisy, clean) = line.split_once(',').ok_or_else(|| {
            Error::Data(format!("manifest line {}: expected `noisy_path,clean_path`", lineno + 1))
        })?;
        let (noisy, clean) = (PathBuf::from(noisy.trim()), PathBuf::from(clean.trim()));
        for p in [&noisy, &clean] {
            if !p.exists() {
                missing.push(p.display().to_string());
            }
        }
        entries.push((noisy, clean));
    }
    if !missing.is_empty() {
        return Err(Error::Data(format!("missing files: {}", missing.join(", "))));
    }

    let model = ckpt.map(TaylorModel::load).transpose()?;
    let analysis = AnalysisConfig::default();
    let mut rows = Vec::with_capacity(entries.len());
    for (noisy_path, clean_path) in &entries {
        let noisy = read_wav_expect(noisy_path, train::SAMPLE_RATE)?;
        let clean = read_wav_expect(clean_path, train::SAMPLE_RATE)?;
        let estimate = match &model {
            Some(m) => m.enhance(&noisy)?,
            None => noisy.clone(),
        };
        let utt_id = noisy_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| noisy_path.display().to_string());
        rows.push(MetricRow {
            utt_id,
            sisnr_db: sisnr_db(&estimate.samples, &clean.samples)?,
            lsd_db: log_spectral_distance_db(
                &stft(&estimate, &analysis)?,
                &stft(&clean, &analysis)?,
            )?,
        });
    }
    write_metrics_csv(out, &rows)?;
    println!("evaluated {} pairs -> {}", rows.len(), out.display());
    Ok(())
}

fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("dense")
}

fn selftest_roundtrip() -> Result<()> {
    let analysis = AnalysisConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..5 {
        let samples: Vec<f32> = (0..16_000).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let wave = Waveform::new(samples, train::SAMPLE_RATE)?;
        let back = istft(&stft(&wave, &analysis)?, &analysis, Some(wave.len()))?;
        let num: f64 = wave
            .samples
            .iter()
            .zip(&back.samples)
            .map(|(a, b)| ((a - b) as f64).powi(2))
            .sum();
        let den: f64 = wave.samples.iter().map(|&a| (a as f64).powi(2)).sum();
        if (num / den).sqrt() > 1e-6 {
            return Err(Error::Numeric("analysis/synthesis round trip exceeded 1e-6".into()));
        }
    }
    Ok(())
}

fn selftest_gradients() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    type Build = Box<dyn Fn(&mut Graph<f64>, &[VarId]) -> VarId>;
    let suites: Vec<(&str, Vec<Tensor<f64>>, Build)> = vec![
        (
            "conv2d",
            vec![rand_tensor(&[1, 2, 4, 7], &mut rng), rand_tensor(&[3, 2, 2, 3], &mut rng)],
            Box::new(|g, ids| {
                let y = g.conv2d(ids[0], ids[1], None, 2, 1, (1, 0)).unwrap();
                let y2 = g.mul(y, y).unwrap();
                g.sum(y2)
            }),
        ),
        (
            "conv1d_dilated_causal",
            vec![rand_tensor(&[1, 3, 9], &mut rng), rand_tensor(&[2, 3, 3], &mut rng)],
            Box::new(|g, ids| {
                let y = g.conv1d_dilated_causal(ids[0], ids[1], None, 2).unwrap();
                let y2 = g.mul(y, y).unwrap();
                g.sum(y2)
            }),
        ),
        (
            "frame_norm2d",
            vec![
                rand_tensor(&[1, 2, 3, 5], &mut rng),
                rand_tensor(&[2], &mut rng),
                rand_tensor(&[2], &mut rng),
            ],
            Box::new(|g, ids| {
                let y = g.frame_norm2d(ids[0], ids[1], ids[2], 1e-5).unwrap();
                let y2 = g.mul(y, y).unwrap();
                g.sum(y2)
            }),
        ),
        (
            "hypot+sigmoid",
            vec![rand_tensor(&[1, 1, 3, 4], &mut rng), rand_tensor(&[1, 1, 3, 4], &mut rng)],
            Box::new(|g, ids| {
                let m = g.hypot(ids[0], ids[1]).unwrap();
                let s = g.sigmoid(m);
                g.sum(s)
            }),
        ),
    ];
    for (name, inputs, build) in suites {
        let report = grad_check(&build, &inputs, 1e-6);
        if !report.passed() {
            return Err(Error::Numeric(format!("gradient check failed for {name}")));
        }
    }
    Ok(())
}

fn selftest_model() -> Result<()> {
    let cfg = TaylorConfig {
        q: 2,
        channels: 4,
        unet_depths: vec![1, 0],
        stcm_groups: 1,
        stcm_per_group: 2,
        ..TaylorConfig::desk()
    };
    let model = TaylorModel::new(cfg, 101)?;
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let frames = 12;
    let bins = model.config().bins;
    let n = frames * bins;
    let x = ComplexSpectrogram::from_planes(
        (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        frames,
        bins,
    )?;
    let (estimate, trace) = model.forward(&x)?;

    // superposition replay: coarse + sum of weighted orders equals the estimate
    let replay = taylor_unfold::model::superimpose(&trace.coarse, &trace.terms)?;
    if replay != estimate {
        return Err(Error::Numeric("order superposition replay diverged from forward".into()));
    }

    // causality: zeroing frames after t0 must not change earlier frames
    let t0 = 5;
    let mut cut = x.clone();
    for t in (t0 + 1)..frames {
        for k in 0..bins {
            cut.real[t * bins + k] = 0.0;
            cut.imag[t * bins + k] = 0.0;
        }
    }
    let (est_cut, _) = model.forward(&cut)?;
    for t in 0..=t0 {
        for k in 0..bins {
            let i = t * bins + k;
            if estimate.real[i] != est_cut.real[i] || estimate.imag[i] != est_cut.imag[i] {
                return Err(Error::Numeric(format!("future frames leaked into frame {t}")));
            }
        }
    }
    Ok(())
}

fn cmd_selftest() -> Result<()> {
    let suites: [(&str, fn() -> Result<()>); 3] = [
        ("stft-roundtrip", selftest_roundtrip),
        ("gradients", selftest_gradients),
        ("model-invariants", selftest_model),
    ];
    let mut failed = None;
    for (name, run) in suites {
        match run() {
            Ok(()) => println!("selftest {name}: ok"),
            Err(e) => {
                println!("selftest {name}: FAILED ({e})");
                failed.get_or_insert(e);
            }
        }
    }
    match failed {
        None => Ok(()),
        Some(e) => Err(e),
    }
}
