use std::io::ErrorKind;
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::Waveform;
use crate::error::{Error, Result};

const FULL_SCALE: f64 = i16::MAX as f64;

/// Reads a 16-bit PCM mono WAV file.
pub fn load_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let reader = WavReader::open(path).map_err(|e| wav_error(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Format(format!(
            "{}: expected mono, found {} channels",
            path.display(),
            spec.channels
        )));
    }
    if spec.sample_format != SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::Format(format!(
            "{}: expected 16-bit PCM, found {:?} {}-bit",
            path.display(),
            spec.sample_format,
            spec.bits_per_sample
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| (v as f64 / FULL_SCALE).max(-1.0)))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| wav_error(path, e))?;
    if samples.is_empty() {
        return Err(Error::Format(format!(
            "{}: no audio samples",
            path.display()
        )));
    }
    Waveform::new(samples, spec.sample_rate)
}

/// Writes `x` as 16-bit PCM mono.
pub fn save_wav(x: &Waveform, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let spec = WavSpec {
        channels: 1,
        sample_rate: x.sample_rate(),
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path, spec).map_err(|e| wav_error(path, e))?;
    for &s in x.samples() {
        let q = (s.clamp(-1.0, 1.0) * FULL_SCALE).round() as i16;
        writer.write_sample(q).map_err(|e| wav_error(path, e))?;
    }
    writer.finalize().map_err(|e| wav_error(path, e))
}

fn wav_error(path: &Path, e: hound::Error) -> Error {
    match e {
        // hound reports short reads as generic I/O errors.
        hound::Error::IoError(io)
            if !matches!(io.kind(), ErrorKind::NotFound | ErrorKind::PermissionDenied) =>
        {
            Error::Format(format!(
                "{}: truncated or unreadable WAV data ({io})",
                path.display()
            ))
        }
        hound::Error::IoError(io) => Error::Io(io),
        other => Error::Format(format!("{}: {other}", path.display())),
    }
}
