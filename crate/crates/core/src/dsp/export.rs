//! Spectrogram export: CSV cell dumps and plain-PGM magnitude images.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::ComplexSpectrogram;
use crate::error::{Error, Result};

/// One `frame,bin,real,imag` line per cell, with a header row.
pub fn write_spectrogram_csv(path: &Path, spec: &ComplexSpectrogram) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "frame,bin,real,imag")?;
    for l in 0..spec.frames {
        for k in 0..spec.bins {
            let idx = l * spec.bins + k;
            writeln!(w, "{l},{k},{:e},{:e}", spec.real[idx], spec.imag[idx])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_spectrogram_csv(path: &Path) -> Result<ComplexSpectrogram> {
    let reader = BufReader::new(File::open(path)?);
    let mut cells: Vec<(usize, usize, f32, f32)> = Vec::new();
    let mut frames = 0usize;
    let mut bins = 0usize;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if i == 0 {
            if line.trim() != "frame,bin,real,imag" {
                return Err(Error::Data(format!("{}: unexpected CSV header", path.display())));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            return Err(Error::Data(format!("{}: bad CSV row {i}", path.display())));
        }
        let parse = |s: &str| s.trim().parse::<f32>().map_err(|_| Error::Data(format!("bad float {s}")));
        let l: usize = parts[0].trim().parse().map_err(|_| Error::Data("bad frame index".into()))?;
        let k: usize = parts[1].trim().parse().map_err(|_| Error::Data("bad bin index".into()))?;
        frames = frames.max(l + 1);
        bins = bins.max(k + 1);
        cells.push((l, k, parse(parts[2])?, parse(parts[3])?));
    }
    let mut spec = ComplexSpectrogram::zeros(frames, bins);
    for (l, k, re, im) in cells {
        spec.real[l * bins + k] = re;
        spec.imag[l * bins + k] = im;
    }
    Ok(spec)
}

/// Plain (P2) PGM rendering of the log magnitude. The dB range
/// `[db_floor, 0]` relative to the grid maximum maps to gray levels 0..255,
/// frequency on the vertical axis with bin 0 at the bottom.
pub fn write_magnitude_pgm(path: &Path, spec: &ComplexSpectrogram, db_floor: f32) -> Result<()> {
    let mag = spec.magnitude();
    let peak = mag.iter().cloned().fold(0.0f32, f32::max).max(1e-12);
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "P2")?;
    writeln!(w, "{} {}", spec.frames, spec.bins)?;
    writeln!(w, "255")?;
    for k in (0..spec.bins).rev() {
        let mut row = String::with_capacity(spec.frames * 4);
        for l in 0..spec.frames {
            let m = mag[l * spec.bins + k];
            let db = 20.0 * (m / peak).max(1e-12).log10();
            let t = ((db - db_floor) / -db_floor).clamp(0.0, 1.0);
            let level = (t * 255.0).round() as u32;
            row.push_str(&level.to_string());
            row.push(' ');
        }
        writeln!(w, "{}", row.trim_end())?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_roundtrip() {
        let dir = std::env::temp_dir().join("tu_csv_rt");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("spec.csv");
        let spec = ComplexSpectrogram {
            real: vec![1.0, -0.5, 0.25, 0.0],
            imag: vec![0.0, 2.0, -1.5, 0.125],
            frames: 2,
            bins: 2,
        };
        write_spectrogram_csv(&path, &spec).unwrap();
        let back = read_spectrogram_csv(&path).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn pgm_has_expected_dims() {
        let dir = std::env::temp_dir().join("tu_pgm");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("spec.pgm");
        let spec = ComplexSpectrogram { real: vec![1.0; 12], imag: vec![0.0; 12], frames: 3, bins: 4 };
        write_magnitude_pgm(&path, &spec, -60.0).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("P2"));
        assert_eq!(lines.next(), Some("3 4"));
        assert_eq!(lines.next(), Some("255"));
        assert_eq!(lines.count(), 4);
    }
}
