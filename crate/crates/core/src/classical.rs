//! Classical decoupling baselines: spectral subtraction, Wiener filtering,
//! and the oracle-residual identity.
//!
//! Both baselines suppress noise in the magnitude domain while keeping the
//! noisy phase; the residual between the clean spectrum and such a coarse
//! estimate is exactly the term the high-order model modules learn to
//! approximate.

use crate::dsp::{spec_sub, ComplexSpectrogram};
use crate::error::{Error, Result};

/// Default spectral floor: magnitudes never drop below `0.002 * |X|`.
pub const DEFAULT_SPECTRAL_FLOOR: f32 = 0.002;

/// Noise description for the baselines.
#[derive(Clone, Debug)]
pub enum NoiseEstimate {
    /// Per-cell noise magnitude grid `[frames, bins]`.
    Magnitude { grid: Vec<f32>, frames: usize, bins: usize },
    /// Stationary noise power spectral density per bin `[bins]`.
    Psd(Vec<f32>),
}

impl NoiseEstimate {
    fn check_nonnegative(&self) -> Result<()> {
        let values: &[f32] = match self {
            NoiseEstimate::Magnitude { grid, .. } => grid,
            NoiseEstimate::Psd(psd) => psd,
        };
        if values.iter().any(|&v| v < 0.0) {
            return Err(Error::Data("noise estimate contains negative values".into()));
        }
        Ok(())
    }
}

/// Stationary noise PSD from an assumed speech-free lead-in: the mean of
/// `|X|^2` over the first `lead_frames` frames, per bin.
pub fn noise_psd_from_lead_in(x: &ComplexSpectrogram, lead_frames: usize) -> Result<Vec<f32>> {
    let lead = lead_frames.min(x.frames);
    if lead == 0 {
        return Err(Error::Data("need at least one lead-in frame for a noise estimate".into()));
    }
    let mut psd = vec![0.0f32; x.bins];
    for l in 0..lead {
        for k in 0..x.bins {
            let idx = l * x.bins + k;
            psd[k] += x.real[idx] * x.real[idx] + x.imag[idx] * x.imag[idx];
        }
    }
    for v in &mut psd {
        *v /= lead as f32;
    }
    Ok(psd)
}

/// Magnitude-domain noise subtraction: `max(|X| - |N|, floor*|X|) * e^{j theta_X}`.
pub fn spectral_subtract(
    x: &ComplexSpectrogram,
    noise: &NoiseEstimate,
    floor: f32,
) -> Result<ComplexSpectrogram> {
    noise.check_nonnegative()?;
    let noise_mag_at = |idx: usize, bin: usize| -> f32 {
        match noise {
            NoiseEstimate::Magnitude { grid, .. } => grid[idx],
            NoiseEstimate::Psd(psd) => psd[bin].sqrt(),
        }
    };
    if let NoiseEstimate::Magnitude { grid, frames, bins } = noise {
        if *frames != x.frames || *bins != x.bins || grid.len() != x.cells() {
            return Err(Error::Shape("noise grid shape does not match the spectrogram".into()));
        }
    }
    if let NoiseEstimate::Psd(psd) = noise {
        if psd.len() != x.bins {
            return Err(Error::Shape("noise PSD length does not match bin count".into()));
        }
    }

    let mut out = ComplexSpectrogram::zeros(x.frames, x.bins);
    for l in 0..x.frames {
        for k in 0..x.bins {
            let idx = l * x.bins + k;
            let (r, i) = (x.real[idx], x.imag[idx]);
            let mag = r.hypot(i);
            if mag == 0.0 {
                continue;
            }
            let kept = (mag - noise_mag_at(idx, k)).max(floor * mag);
            let gain = kept / mag;
            out.real[idx] = r * gain;
            out.imag[idx] = i * gain;
        }
    }
    Ok(out)
}

/// Wiener-style gain `M = max(|X|^2 - lambda_N, 0) / |X|^2` per cell (zero
/// where `|X| = 0`). The gain reaches 1 only where the noise PSD is zero.
pub fn wiener_gain(x: &ComplexSpectrogram, noise_psd: &[f32]) -> Result<Vec<f32>> {
    if noise_psd.len() != x.bins {
        return Err(Error::Shape("noise PSD length does not match bin count".into()));
    }
    if noise_psd.iter().any(|&v| v < 0.0) {
        return Err(Error::Data("noise PSD contains negative values".into()));
    }
    let mut gain = vec![0.0f32; x.cells()];
    for l in 0..x.frames {
        for k in 0..x.bins {
            let idx = l * x.bins + k;
            let p = x.real[idx] * x.real[idx] + x.imag[idx] * x.imag[idx];
            gain[idx] = if p > 0.0 { (p - noise_psd[k]).max(0.0) / p } else { 0.0 };
        }
    }
    Ok(gain)
}

/// Apply a per-cell gain grid, keeping the phase.
pub fn apply_gain(x: &ComplexSpectrogram, gain: &[f32]) -> Result<ComplexSpectrogram> {
    if gain.len() != x.cells() {
        return Err(Error::Shape("gain grid does not match the spectrogram".into()));
    }
    let real = x.real.iter().zip(gain).map(|(&r, &g)| r * g).collect();
    let imag = x.imag.iter().zip(gain).map(|(&i, &g)| i * g).collect();
    Ok(ComplexSpectrogram { real, imag, frames: x.frames, bins: x.bins })
}

/// The residual a coarse magnitude-domain estimate leaves behind:
/// `delta = S_clean - coarse`. By construction `coarse + delta == S_clean`.
pub fn oracle_residual(
    s_clean: &ComplexSpectrogram,
    coarse: &ComplexSpectrogram,
) -> Result<ComplexSpectrogram> {
    spec_sub(s_clean, coarse)
}

/// Fraction of cells (sorted by energy, descending) needed to hold `share`
/// of the grid's total energy. Smaller means sparser.
pub fn energy_concentration(spec: &ComplexSpectrogram, share: f64) -> f64 {
    let mut energies: Vec<f64> = spec
        .real
        .iter()
        .zip(&spec.imag)
        .map(|(&r, &i)| r as f64 * r as f64 + i as f64 * i as f64)
        .collect();
    let total: f64 = energies.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    energies.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut acc = 0.0;
    for (count, e) in energies.iter().enumerate() {
        acc += e;
        if acc >= share * total {
            return (count + 1) as f64 / energies.len() as f64;
        }
    }
    1.0
}
