//! RIFF/WAV reading and writing, restricted to mono 16-bit PCM.
//!
//! Integer sample `v` maps to `v / 32768`; writing rounds to nearest and
//! clamps to the int16 range, so a write/read round trip stays within one
//! quantization step.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::Waveform;
use crate::error::{Error, Result};

pub fn read_wav(path: &Path) -> Result<Waveform> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut header = [0u8; 12];
    reader.read_exact(&mut header).map_err(|_| bad(path, "file too short for a RIFF header"))?;
    if &header[0..4] != b"RIFF" || &header[8..12] != b"WAVE" {
        return Err(bad(path, "not a RIFF/WAVE file"));
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None; // format, channels, rate, bits
    let mut data: Option<Vec<u8>> = None;
    loop {
        let mut chunk = [0u8; 8];
        match reader.read_exact(&mut chunk) {
            Ok(()) => {}
            Err(_) => break,
        }
        let id = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let size = u32::from_le_bytes([chunk[4], chunk[5], chunk[6], chunk[7]]) as usize;
        let mut body = vec![0u8; size + (size & 1)]; // chunks are word-aligned
        reader.read_exact(&mut body).map_err(|_| bad(path, "truncated chunk"))?;
        body.truncate(size);
        match &id {
            b"fmt " => {
                if size < 16 {
                    return Err(bad(path, "fmt chunk too short"));
                }
                fmt = Some((
                    u16::from_le_bytes([body[0], body[1]]),
                    u16::from_le_bytes([body[2], body[3]]),
                    u32::from_le_bytes([body[4], body[5], body[6], body[7]]),
                    u16::from_le_bytes([body[14], body[15]]),
                ));
            }
            b"data" => data = Some(body),
            _ => {}
        }
    }

    let (format, channels, rate, bits) = fmt.ok_or_else(|| bad(path, "missing fmt chunk"))?;
    if format != 1 {
        return Err(bad(path, &format!("unsupported audio format tag {format}, only PCM (1) is handled")));
    }
    if channels != 1 {
        return Err(bad(path, &format!("expected mono audio, file has {channels} channels")));
    }
    if bits != 16 {
        return Err(bad(path, &format!("expected 16-bit samples, file has {bits}-bit")));
    }
    let data = data.ok_or_else(|| bad(path, "missing data chunk"))?;
    let samples = data
        .chunks_exact(2)
        .map(|b| i16::from_le_bytes([b[0], b[1]]) as f32 / 32768.0)
        .collect();
    Waveform::new(samples, rate)
}

/// Like [`read_wav`] but additionally rejects files whose sample rate does
/// not match; this crate never resamples silently.
pub fn read_wav_expect(path: &Path, sample_rate: u32) -> Result<Waveform> {
    let wave = read_wav(path)?;
    if wave.sample_rate != sample_rate {
        return Err(bad(
            path,
            &format!("sample rate {} Hz does not match required {} Hz", wave.sample_rate, sample_rate),
        ));
    }
    Ok(wave)
}

pub fn write_wav(path: &Path, wave: &Waveform) -> Result<()> {
    let mut writer = BufWriter::new(File::create(path)?);
    let n = wave.len();
    let data_bytes = (n * 2) as u32;
    let byte_rate = wave.sample_rate * 2;

    writer.write_all(b"RIFF")?;
    writer.write_all(&(36 + data_bytes).to_le_bytes())?;
    writer.write_all(b"WAVE")?;
    writer.write_all(b"fmt ")?;
    writer.write_all(&16u32.to_le_bytes())?;
    writer.write_all(&1u16.to_le_bytes())?; // PCM
    writer.write_all(&1u16.to_le_bytes())?; // mono
    writer.write_all(&wave.sample_rate.to_le_bytes())?;
    writer.write_all(&byte_rate.to_le_bytes())?;
    writer.write_all(&2u16.to_le_bytes())?; // block align
    writer.write_all(&16u16.to_le_bytes())?; // bits per sample
    writer.write_all(b"data")?;
    writer.write_all(&data_bytes.to_le_bytes())?;
    for &s in &wave.samples {
        let v = (s.clamp(-1.0, 1.0) * 32768.0).round().clamp(i16::MIN as f32, i16::MAX as f32) as i16;
        writer.write_all(&v.to_le_bytes())?;
    }
    writer.flush()?;
    Ok(())
}

fn bad(path: &Path, msg: &str) -> Error {
    Error::Wav(format!("{}: {msg}", path.display()))
}
