//! End-to-end demo: synthesize a mixture, write the WAVs, run a freshly
//! initialized model over it, and export the per-order spectrogram
//! contributions. Output lands in ./enhance_demo_out.

use std::path::Path;

use taylor_unfold::dsp::{compress, spec_scale, stft, write_spectrogram_csv, write_wav};
use taylor_unfold::error::Result;
use taylor_unfold::metrics::sisnr_db;
use taylor_unfold::model::{inv_factorial, TaylorConfig, TaylorModel};
use taylor_unfold::train::{synthesize_mixture, MixtureRecipe};

fn main() -> Result<()> {
    let out = Path::new("enhance_demo_out");
    std::fs::create_dir_all(out)?;

    let recipe = MixtureRecipe { seed: 3, snr_db: 0.0, length_s: 1.0 };
    let (noisy, clean, _) = synthesize_mixture(&recipe)?;
    write_wav(&out.join("noisy.wav"), &noisy)?;
    write_wav(&out.join("clean.wav"), &clean)?;

    let cfg = TaylorConfig { q: 3, ..TaylorConfig::desk() };
    let model = TaylorModel::new(cfg, 9)?;

    let enhanced = model.enhance(&noisy)?;
    write_wav(&out.join("enhanced.wav"), &enhanced)?;
    println!(
        "untrained model: SISNR {:+.2} dB (noisy was {:+.2} dB)",
        sisnr_db(&enhanced.samples, &clean.samples)?,
        sisnr_db(&noisy.samples, &clean.samples)?
    );

    // per-order exports, each high-order term carrying its 1/q! weight
    let x = compress(&stft(&noisy, &model.analysis())?, model.config().compression_beta)?;
    let (estimate, trace) = model.forward(&x)?;
    write_spectrogram_csv(&out.join("order_0.csv"), &trace.coarse)?;
    for (i, term) in trace.terms.iter().enumerate() {
        let q = i + 1;
        write_spectrogram_csv(&out.join(format!("order_{q}.csv")), &spec_scale(term, inv_factorial(q)))?;
    }
    write_spectrogram_csv(&out.join("estimate.csv"), &estimate)?;
    println!("wrote WAVs and {} order exports to {}", trace.terms.len() + 2, out.display());
    Ok(())
}
