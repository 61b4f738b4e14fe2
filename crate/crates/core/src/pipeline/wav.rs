//! 16-bit PCM mono WAV at 16 kHz.

use std::path::Path;

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;
/// Fraction of clipped samples above which a write logs a warning.
pub const CLIP_WARN_FRACTION: f64 = 0.001;

fn wav_err(path: &Path, source: hound::Error) -> Error {
    match source {
        hound::Error::IoError(e) => Error::io(path, e),
        source => Error::Wav {
            path: path.to_path_buf(),
            source,
        },
    }
}

/// Samples scaled to [−1, 1). Anything other than 16-bit PCM mono 16 kHz is rejected.
pub fn read_wav(path: &Path) -> Result<Vec<f64>> {
    let reader = hound::WavReader::open(path).map_err(|e| wav_err(path, e))?;
    let spec = reader.spec();
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::AudioFormat(format!(
            "{}: sample rate {} Hz, expected {SAMPLE_RATE} Hz (resample externally)",
            path.display(),
            spec.sample_rate
        )));
    }
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::AudioFormat(format!(
            "{}: {} channel(s), {}-bit {:?}; expected mono 16-bit PCM",
            path.display(),
            spec.channels,
            spec.bits_per_sample,
            spec.sample_format
        )));
    }
    reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0).map_err(|e| wav_err(path, e)))
        .collect()
}

/// Writes `samples` as 16-bit PCM and returns the fraction that had to be clipped.
pub fn write_wav(path: &Path, samples: &[f64]) -> Result<f64> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| wav_err(path, e))?;
    let mut clipped = 0usize;
    for &s in samples {
        if !s.is_finite() {
            return Err(Error::Numeric(format!("non-finite sample while writing {}", path.display())));
        }
        let q = (s * 32768.0).round();
        if !(-32768.0..=32767.0).contains(&q) {
            clipped += 1;
        }
        writer
            .write_sample(q.clamp(-32768.0, 32767.0) as i16)
            .map_err(|e| wav_err(path, e))?;
    }
    writer.finalize().map_err(|e| wav_err(path, e))?;
    let fraction = if samples.is_empty() { 0.0 } else { clipped as f64 / samples.len() as f64 };
    if fraction > CLIP_WARN_FRACTION {
        log::warn!("{}: {:.3}% of samples clipped", path.display(), 100.0 * fraction);
    }
    Ok(fraction)
}

/// Rounds through the 16-bit grid without touching the filesystem.
pub fn quantize(samples: &[f64]) -> Vec<f64> {
    samples
        .iter()
        .map(|s| (s * 32768.0).round().clamp(-32768.0, 32767.0) / 32768.0)
        .collect()
}
