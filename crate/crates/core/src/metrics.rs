//! Objective quality measures: scale-invariant SNR and log-spectral distance.

use std::io::Write;
use std::path::Path;

use crate::dsp::ComplexSpectrogram;
use crate::error::{Error, Result};

/// Scale-invariant signal-to-noise ratio in dB. Both signals are zero-meaned,
/// the estimate is projected onto the reference, and the ratio of projection
/// energy to residual energy is reported. The result is clamped to
/// [-100, 100] dB so degenerate residuals stay finite.
pub fn sisnr_db(estimate: &[f32], reference: &[f32]) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(Error::Shape(format!(
            "sisnr length mismatch: {} vs {}",
            estimate.len(),
            reference.len()
        )));
    }
    if estimate.is_empty() {
        return Err(Error::Data("sisnr needs non-empty signals".into()));
    }
    let n = estimate.len() as f64;
    let mean_e: f64 = estimate.iter().map(|&v| v as f64).sum::<f64>() / n;
    let mean_r: f64 = reference.iter().map(|&v| v as f64).sum::<f64>() / n;
    let e: Vec<f64> = estimate.iter().map(|&v| v as f64 - mean_e).collect();
    let r: Vec<f64> = reference.iter().map(|&v| v as f64 - mean_r).collect();
    let ref_energy: f64 = r.iter().map(|v| v * v).sum();
    if ref_energy <= 0.0 {
        return Err(Error::Data("sisnr reference has zero energy after mean removal".into()));
    }
    let dot: f64 = e.iter().zip(&r).map(|(a, b)| a * b).sum();
    let scale = dot / ref_energy;
    let target_energy = scale * scale * ref_energy;
    let noise_energy: f64 = e.iter().zip(&r).map(|(a, b)| (a - scale * b).powi(2)).sum();
    let ratio = if noise_energy > 0.0 { target_energy / noise_energy } else { f64::INFINITY };
    let db = if ratio.is_infinite() { 100.0 } else { 10.0 * ratio.max(1e-30).log10() };
    Ok(db.clamp(-100.0, 100.0))
}

/// Log-spectral distance in dB between two magnitude spectrograms: per frame
/// the RMS over bins of `20 log10(max(|A|,eps) / max(|B|,eps))`, then the RMS
/// over frames. The floor `eps = 1e-8` keeps silent cells finite.
pub fn log_spectral_distance_db(a: &ComplexSpectrogram, b: &ComplexSpectrogram) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::Shape("lsd: spectrogram shapes differ".into()));
    }
    if a.frames == 0 {
        return Err(Error::Data("lsd needs at least one frame".into()));
    }
    const EPS: f64 = 1e-8;
    let ma = a.magnitude();
    let mb = b.magnitude();
    let mut frame_sq_sum = 0.0f64;
    for l in 0..a.frames {
        let mut sq = 0.0f64;
        for k in 0..a.bins {
            let idx = l * a.bins + k;
            let la = 20.0 * (ma[idx] as f64).max(EPS).log10();
            let lb = 20.0 * (mb[idx] as f64).max(EPS).log10();
            sq += (la - lb) * (la - lb);
        }
        frame_sq_sum += sq / a.bins as f64;
    }
    Ok((frame_sq_sum / a.frames as f64).sqrt())
}

/// Per-utterance metric row.
#[derive(Clone, Debug)]
pub struct MetricRow {
    pub utt_id: String,
    pub sisnr_db: f64,
    pub lsd_db: f64,
}

/// Write metric rows as CSV (`utt_id,sisnr_db,lsd_db`) with a trailing mean row.
pub fn write_metrics_csv(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "utt_id,sisnr_db,lsd_db")?;
    for row in rows {
        writeln!(out, "{},{:.6},{:.6}", row.utt_id, row.sisnr_db, row.lsd_db)?;
    }
    if !rows.is_empty() {
        let n = rows.len() as f64;
        let mean_sisnr = rows.iter().map(|r| r.sisnr_db).sum::<f64>() / n;
        let mean_lsd = rows.iter().map(|r| r.lsd_db).sum::<f64>() / n;
        writeln!(out, "mean,{mean_sisnr:.6},{mean_lsd:.6}")?;
    }
    Ok(())
}
