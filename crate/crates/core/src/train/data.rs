//! Synthetic mixture generation.
//!
//! Clean signals are crude speech stand-ins: a gliding harmonic stack with a
//! syllabic amplitude envelope, a low level of breath noise, and a few short
//! high-frequency bursts in the role of consonants. Noise is white noise
//! through a random first-order spectral tilt. Everything is reproducible
//! from the recipe seed.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dsp::Waveform;
use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;

/// Everything needed to deterministically rebuild one mixture.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureRecipe {
    pub seed: u64,
    /// Target SNR in dB; `f64::INFINITY` means "no noise at all".
    pub snr_db: f64,
    pub length_s: f64,
}

impl MixtureRecipe {
    pub fn validate(&self) -> Result<()> {
        if !(self.length_s > 0.0) {
            return Err(Error::Config(format!("mixture length must be positive, got {}", self.length_s)));
        }
        if self.snr_db.is_nan() {
            return Err(Error::Config("mixture SNR is NaN".into()));
        }
        Ok(())
    }

    pub fn samples(&self) -> usize {
        (self.length_s * SAMPLE_RATE as f64).round() as usize
    }
}

/// splitmix64, used to derive per-recipe seeds from (global seed, index) so
/// recipe synthesis is order-independent.
pub fn mix_seed(global_seed: u64, index: u64) -> u64 {
    let mut z = global_seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn speechlike_clean(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    const TAU: f64 = std::f64::consts::TAU;
    let sr = SAMPLE_RATE as f64;
    let dur = n as f64 / sr;
    let f0_start: f64 = rng.gen_range(80.0..280.0);
    // pitch glides geometrically over the clip, like intonation
    let glide: f64 = rng.gen_range(0.75..1.35);
    let partials: usize = rng.gen_range(4..=10);
    let am_rate: f64 = rng.gen_range(2.0..6.0);
    let am_phase: f64 = rng.gen_range(0.0..TAU);
    let phases: Vec<f64> = (0..partials).map(|_| rng.gen_range(0.0..TAU)).collect();
    // constant low-level aspiration under the voiced part
    let breath: f64 = rng.gen_range(0.02..0.08);
    // speech-free lead-in, like a corpus clip: noise estimators that average
    // the first frames (see the classical baselines) rely on it
    let lead = ((rng.gen_range(0.06..0.12) * sr) as usize).min(n / 4);
    let ramp = ((0.010 * sr) as usize).max(1);

    let mut out = vec![0.0f32; n];
    let mut base_phase = 0.0f64;
    for (i, slot) in out.iter_mut().enumerate() {
        let t = i as f64 / sr;
        let f0 = f0_start * glide.powf(t / dur);
        base_phase += TAU * f0 / sr;
        let onset = if i < lead {
            0.0
        } else {
            let j = i - lead;
            if j < ramp { 0.5 - 0.5 * (std::f64::consts::PI * j as f64 / ramp as f64).cos() } else { 1.0 }
        };
        let env = onset * (0.55 + 0.45 * (TAU * am_rate * t + am_phase).sin());
        let mut s = 0.0;
        for (p, &ph) in phases.iter().enumerate() {
            let h = (p + 1) as f64;
            // skip partials above Nyquist; amplitudes fall off as 1/h
            if f0 * h < sr / 2.0 {
                s += (h * base_phase + ph).sin() / h;
            }
        }
        let hiss: f64 = rng.gen_range(-1.0..1.0);
        *slot = (env * (s + breath * hiss)) as f32;
    }

    // short high-frequency bursts standing in for consonants
    let bursts: usize = rng.gen_range(1..=3);
    for _ in 0..bursts {
        let span = (n - lead) as f64;
        let center = lead + (rng.gen_range(0.1..0.9) * span) as usize;
        let half = (rng.gen_range(0.015..0.050) * sr) as usize;
        let amp: f64 = rng.gen_range(0.4..1.2);
        let lo = center.saturating_sub(half);
        let hi = (center + half).min(n);
        let mut prev = 0.0f64;
        for (j, slot) in out[lo..hi].iter_mut().enumerate() {
            let w = 0.5 - 0.5 * (TAU * j as f64 / (hi - lo) as f64).cos();
            let white: f64 = rng.gen_range(-1.0..1.0);
            // first difference tilts the burst toward high frequencies
            let hp = white - prev;
            prev = white;
            *slot += (amp * w * hp * 0.5) as f32;
        }
    }

    normalize_rms(&mut out, 0.1);
    out
}

fn tilted_noise(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    // white noise through a one-pole filter; the pole sign flips the tilt
    // between low-pass (rumble-like) and high-pass (hiss-like) spectra
    let pole: f64 = rng.gen_range(-0.8..0.9);
    let mut state = 0.0f64;
    let mut out = vec![0.0f32; n];
    for slot in out.iter_mut() {
        let white: f64 = rng.gen_range(-1.0..1.0);
        state = pole * state + white;
        *slot = state as f32;
    }
    normalize_rms(&mut out, 0.1);
    out
}

fn normalize_rms(x: &mut [f32], target: f64) {
    let power: f64 = x.iter().map(|&v| v as f64 * v as f64).sum::<f64>() / x.len() as f64;
    if power > 0.0 {
        let g = (target * target / power).sqrt() as f32;
        for v in x.iter_mut() {
            *v *= g;
        }
    }
}

/// Build `(noisy, clean, scaled noise)` from a recipe. The noise is scaled so
/// the clean-to-noise power ratio hits `snr_db`, and `noisy = clean + noise`
/// samplewise.
pub fn synthesize_mixture(recipe: &MixtureRecipe) -> Result<(Waveform, Waveform, Waveform)> {
    recipe.validate()?;
    let n = recipe.samples();
    if n == 0 {
        return Err(Error::Config("mixture would contain zero samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(recipe.seed);
    let clean = speechlike_clean(&mut rng, n);
    let clean_power: f64 = clean.iter().map(|&v| v as f64 * v as f64).sum::<f64>() / n as f64;
    if clean_power <= 0.0 {
        return Err(Error::Data("clean source has zero power".into()));
    }

    let noise = if recipe.snr_db.is_infinite() && recipe.snr_db > 0.0 {
        vec![0.0f32; n]
    } else {
        let mut noise = tilted_noise(&mut rng, n);
        let noise_power: f64 = noise.iter().map(|&v| v as f64 * v as f64).sum::<f64>() / n as f64;
        if noise_power <= 0.0 {
            return Err(Error::Data("noise source has zero power".into()));
        }
        let target_noise_power = clean_power / 10f64.powf(recipe.snr_db / 10.0);
        let g = (target_noise_power / noise_power).sqrt() as f32;
        for v in noise.iter_mut() {
            *v *= g;
        }
        noise
    };

    let noisy: Vec<f32> = clean.iter().zip(&noise).map(|(&s, &w)| s + w).collect();
    Ok((
        Waveform::new(noisy, SAMPLE_RATE)?,
        Waveform::new(clean, SAMPLE_RATE)?,
        Waveform::new(noise, SAMPLE_RATE)?,
    ))
}
