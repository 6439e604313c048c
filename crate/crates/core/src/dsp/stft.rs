//! Forward and inverse short-time Fourier transform.
//!
//! Analysis reflect-pads `win_len/2` samples at the signal start so the
//! first frame is centered, then zero-pads the tail to a whole number of
//! hops. Synthesis is overlap-add with the same window and per-sample
//! window-power normalization, followed by removal of the start padding.

use rustfft::num_complex::Complex32;
use rustfft::FftPlanner;

use super::{AnalysisConfig, ComplexSpectrogram, Waveform};
use crate::error::{Error, Result};

pub fn stft(wave: &Waveform, cfg: &AnalysisConfig) -> Result<ComplexSpectrogram> {
    cfg.validate()?;
    if wave.len() < cfg.win_len {
        return Err(Error::Data(format!(
            "signal of {} samples is shorter than one window ({})",
            wave.len(),
            cfg.win_len
        )));
    }
    if wave.samples.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numeric("stft input contains NaN/Inf samples".into()));
    }

    let padded = pad_signal(&wave.samples, cfg);
    let frames = (padded.len() - cfg.win_len) / cfg.hop + 1;
    let bins = cfg.bins();
    let window = cfg.window.coefficients(cfg.win_len);

    let mut planner = FftPlanner::<f32>::new();
    let fft = planner.plan_fft_forward(cfg.fft_size);
    let mut buf = vec![Complex32::default(); cfg.fft_size];

    let mut out = ComplexSpectrogram::zeros(frames, bins);
    for l in 0..frames {
        let start = l * cfg.hop;
        for n in 0..cfg.fft_size {
            buf[n] = if n < cfg.win_len {
                Complex32::new(padded[start + n] * window[n], 0.0)
            } else {
                Complex32::default()
            };
        }
        fft.process(&mut buf);
        for k in 0..bins {
            out.real[l * bins + k] = buf[k].re;
            out.imag[l * bins + k] = buf[k].im;
        }
    }
    Ok(out)
}

/// Overlap-add synthesis. `original_len` trims the output when the source
/// length is known; otherwise all samples after the start padding are kept.
pub fn istft(spec: &ComplexSpectrogram, cfg: &AnalysisConfig, original_len: Option<usize>) -> Result<Waveform> {
    cfg.validate()?;
    if spec.bins != cfg.bins() {
        return Err(Error::Shape(format!(
            "spectrogram has {} bins but config implies {}",
            spec.bins,
            cfg.bins()
        )));
    }
    if spec.frames == 0 {
        return Err(Error::Shape("empty spectrogram".into()));
    }

    let window = cfg.window.coefficients(cfg.win_len);
    let total = (spec.frames - 1) * cfg.hop + cfg.win_len;
    let mut acc = vec![0.0f32; total];
    let mut norm = vec![0.0f32; total];

    let mut planner = FftPlanner::<f32>::new();
    let ifft = planner.plan_fft_inverse(cfg.fft_size);
    let mut buf = vec![Complex32::default(); cfg.fft_size];
    let scale = 1.0 / cfg.fft_size as f32;

    for l in 0..spec.frames {
        // rebuild the full Hermitian spectrum from the kept half
        for k in 0..spec.bins {
            buf[k] = Complex32::new(spec.real[l * spec.bins + k], spec.imag[l * spec.bins + k]);
        }
        for k in spec.bins..cfg.fft_size {
            let mirror = cfg.fft_size - k;
            buf[k] = buf[mirror].conj();
        }
        ifft.process(&mut buf);
        let start = l * cfg.hop;
        for n in 0..cfg.win_len {
            acc[start + n] += buf[n].re * scale * window[n];
            norm[start + n] += window[n] * window[n];
        }
    }

    for (a, w) in acc.iter_mut().zip(&norm) {
        *a /= w.max(1e-8);
    }

    let lead = cfg.win_len / 2;
    let body: Vec<f32> = match original_len {
        Some(len) => acc[lead..(lead + len).min(acc.len())].to_vec(),
        None => acc[lead..].to_vec(),
    };
    Waveform::new(body, 16_000)
}

fn pad_signal(samples: &[f32], cfg: &AnalysisConfig) -> Vec<f32> {
    let lead = cfg.win_len / 2;
    let mut padded = Vec::with_capacity(samples.len() + lead + cfg.win_len);
    // reflect padding at the start; degenerate for very short signals is
    // excluded by the win_len precondition
    for i in (1..=lead).rev() {
        padded.push(samples[i.min(samples.len() - 1)]);
    }
    padded.extend_from_slice(samples);
    // zero-pad the tail so the frame grid covers every sample
    let rem = (padded.len() - cfg.win_len) % cfg.hop;
    if rem != 0 {
        padded.extend(std::iter::repeat(0.0).take(cfg.hop - rem));
    }
    padded
}
