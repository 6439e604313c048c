//! Analysis/synthesis round trip: a 1 s synthetic mixture through the
//! square-root Hann STFT and its overlap-add inverse.

use taylor_unfold::dsp::{istft, stft, AnalysisConfig};
use taylor_unfold::error::Result;
use taylor_unfold::train::{synthesize_mixture, MixtureRecipe};

fn main() -> Result<()> {
    let recipe = MixtureRecipe { seed: 7, snr_db: 0.0, length_s: 1.0 };
    let (noisy, _, _) = synthesize_mixture(&recipe)?;

    let cfg = AnalysisConfig::default();
    let spec = stft(&noisy, &cfg)?;
    let back = istft(&spec, &cfg, Some(noisy.len()))?;

    let num: f64 = noisy
        .samples
        .iter()
        .zip(&back.samples)
        .map(|(a, b)| ((a - b) as f64).powi(2))
        .sum();
    let den: f64 = noisy.samples.iter().map(|&a| (a as f64).powi(2)).sum();
    let rel = (num / den).sqrt();

    println!("{} samples -> {} frames x {} bins", noisy.len(), spec.frames, spec.bins);
    println!("relative reconstruction error: {rel:.3e}");
    assert!(rel <= 1e-6);
    Ok(())
}
