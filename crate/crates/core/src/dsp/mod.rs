//! Time-frequency analysis/synthesis and audio file I/O.
//!
//! Waveforms enter as mono float signals, are windowed with a square-root
//! Hann window (COLA-compliant at 50% overlap) and transformed frame-wise;
//! the inverse path is overlap-add with window-power normalization. Spectral
//! magnitude compression (`|X|^beta`, phase kept) is applied before the
//! model and inverted afterwards.

mod export;
mod stft;
mod wav;

pub use export::{read_spectrogram_csv, write_magnitude_pgm, write_spectrogram_csv};
pub use stft::{istft, stft};
pub use wav::{read_wav, read_wav_expect, write_wav};

use crate::error::{Error, Result};

/// Mono time-domain signal.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Data("sample rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::Numeric("waveform contains non-finite samples".into()));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Mean power of the signal.
    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|&s| s as f64 * s as f64).sum::<f64>() / self.samples.len() as f64
    }
}

/// Analysis window shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum WindowKind {
    /// Square root of the periodic Hann window. Used for both analysis and
    /// synthesis, so the overlapped window product sums to one at 50% hop.
    SqrtHann,
    /// Periodic Hann window.
    Hann,
}

impl WindowKind {
    pub fn coefficients(self, len: usize) -> Vec<f32> {
        let hann = |n: usize| {
            0.5 * (1.0 - (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos())
        };
        match self {
            WindowKind::Hann => (0..len).map(|n| hann(n) as f32).collect(),
            WindowKind::SqrtHann => (0..len).map(|n| hann(n).sqrt() as f32).collect(),
        }
    }
}

/// STFT analysis/synthesis configuration.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AnalysisConfig {
    /// Window length in samples (20 ms at 16 kHz).
    pub win_len: usize,
    /// Hop in samples (50% overlap).
    pub hop: usize,
    /// FFT size; frames are zero-padded up to this length.
    pub fft_size: usize,
    pub window: WindowKind,
    /// Magnitude compression exponent in (0, 1].
    pub compression_beta: f32,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self { win_len: 320, hop: 160, fft_size: 320, window: WindowKind::SqrtHann, compression_beta: 0.5 }
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 || self.hop > self.win_len || self.win_len > self.fft_size {
            return Err(Error::Config(format!(
                "require 0 < hop <= win_len <= fft_size, got hop={} win_len={} fft_size={}",
                self.hop, self.win_len, self.fft_size
            )));
        }
        if !(self.compression_beta > 0.0 && self.compression_beta <= 1.0) {
            return Err(Error::Config(format!(
                "compression beta must lie in (0, 1], got {}",
                self.compression_beta
            )));
        }
        Ok(())
    }

    /// Number of frequency bins kept after the transform.
    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }
}

/// Time-frequency grid of complex values, stored as separate real and
/// imaginary planes in frame-major order (`frames x bins`).
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSpectrogram {
    pub real: Vec<f32>,
    pub imag: Vec<f32>,
    pub frames: usize,
    pub bins: usize,
}

impl ComplexSpectrogram {
    pub fn zeros(frames: usize, bins: usize) -> Self {
        Self { real: vec![0.0; frames * bins], imag: vec![0.0; frames * bins], frames, bins }
    }

    pub fn from_planes(real: Vec<f32>, imag: Vec<f32>, frames: usize, bins: usize) -> Result<Self> {
        if real.len() != frames * bins || imag.len() != frames * bins {
            return Err(Error::Shape(format!(
                "plane length {}/{} does not match {} frames x {} bins",
                real.len(),
                imag.len(),
                frames,
                bins
            )));
        }
        Ok(Self { real, imag, frames, bins })
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.frames == other.frames && self.bins == other.bins
    }

    pub fn cells(&self) -> usize {
        self.frames * self.bins
    }

    pub fn is_finite(&self) -> bool {
        self.real.iter().chain(self.imag.iter()).all(|v| v.is_finite())
    }

    /// Magnitude grid, frame-major.
    pub fn magnitude(&self) -> Vec<f32> {
        self.real.iter().zip(&self.imag).map(|(&r, &i)| r.hypot(i)).collect()
    }

    /// Total energy sum(|X|^2).
    pub fn energy(&self) -> f64 {
        self.real
            .iter()
            .zip(&self.imag)
            .map(|(&r, &i)| r as f64 * r as f64 + i as f64 * i as f64)
            .sum()
    }
}

/// Elementwise a + b.
pub fn spec_add(a: &ComplexSpectrogram, b: &ComplexSpectrogram) -> Result<ComplexSpectrogram> {
    if !a.same_shape(b) {
        return Err(Error::Shape("spectrogram shapes differ in add".into()));
    }
    let real = a.real.iter().zip(&b.real).map(|(&x, &y)| x + y).collect();
    let imag = a.imag.iter().zip(&b.imag).map(|(&x, &y)| x + y).collect();
    Ok(ComplexSpectrogram { real, imag, frames: a.frames, bins: a.bins })
}

/// Elementwise a - b.
pub fn spec_sub(a: &ComplexSpectrogram, b: &ComplexSpectrogram) -> Result<ComplexSpectrogram> {
    if !a.same_shape(b) {
        return Err(Error::Shape("spectrogram shapes differ in sub".into()));
    }
    let real = a.real.iter().zip(&b.real).map(|(&x, &y)| x - y).collect();
    let imag = a.imag.iter().zip(&b.imag).map(|(&x, &y)| x - y).collect();
    Ok(ComplexSpectrogram { real, imag, frames: a.frames, bins: a.bins })
}

/// Elementwise c * a.
pub fn spec_scale(a: &ComplexSpectrogram, c: f32) -> ComplexSpectrogram {
    ComplexSpectrogram {
        real: a.real.iter().map(|&x| c * x).collect(),
        imag: a.imag.iter().map(|&x| c * x).collect(),
        frames: a.frames,
        bins: a.bins,
    }
}

/// Map `|X| -> |X|^beta` keeping the phase. Zero cells stay zero.
pub fn compress(spec: &ComplexSpectrogram, beta: f32) -> Result<ComplexSpectrogram> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::Config(format!("compression beta must lie in (0, 1], got {beta}")));
    }
    Ok(apply_magnitude_exponent(spec, beta))
}

/// Inverse of [`compress`]: raises the magnitude to `1/beta`.
pub fn decompress(spec: &ComplexSpectrogram, beta: f32) -> Result<ComplexSpectrogram> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::Config(format!("compression beta must lie in (0, 1], got {beta}")));
    }
    Ok(apply_magnitude_exponent(spec, 1.0 / beta))
}

fn apply_magnitude_exponent(spec: &ComplexSpectrogram, exponent: f32) -> ComplexSpectrogram {
    let n = spec.cells();
    let mut real = Vec::with_capacity(n);
    let mut imag = Vec::with_capacity(n);
    for idx in 0..n {
        let (r, i) = (spec.real[idx], spec.imag[idx]);
        let m = r.hypot(i);
        if m > 0.0 {
            // re-scale the unit phasor by m^exponent
            let s = m.powf(exponent) / m;
            real.push(r * s);
            imag.push(i * s);
        } else {
            real.push(0.0);
            imag.push(0.0);
        }
    }
    ComplexSpectrogram { real, imag, frames: spec.frames, bins: spec.bins }
}

/// Split into magnitude and phase grids. Phase is 0 at zero-magnitude cells.
pub fn mag_phase(spec: &ComplexSpectrogram) -> (Vec<f32>, Vec<f32>) {
    let mut mag = Vec::with_capacity(spec.cells());
    let mut phase = Vec::with_capacity(spec.cells());
    for idx in 0..spec.cells() {
        let (r, i) = (spec.real[idx], spec.imag[idx]);
        let m = r.hypot(i);
        mag.push(m);
        phase.push(if m > 0.0 { i.atan2(r) } else { 0.0 });
    }
    (mag, phase)
}

/// Rebuild a complex grid from magnitude and phase.
pub fn recombine(mag: &[f32], phase: &[f32], frames: usize, bins: usize) -> Result<ComplexSpectrogram> {
    if mag.len() != frames * bins || phase.len() != mag.len() {
        return Err(Error::Shape("magnitude/phase grids do not match the stated shape".into()));
    }
    if mag.iter().any(|&m| m < 0.0) {
        return Err(Error::Data("negative magnitude passed to recombine".into()));
    }
    let real = mag.iter().zip(phase).map(|(&m, &p)| m * p.cos()).collect();
    let imag = mag.iter().zip(phase).map(|(&m, &p)| m * p.sin()).collect();
    Ok(ComplexSpectrogram { real, imag, frames, bins })
}
