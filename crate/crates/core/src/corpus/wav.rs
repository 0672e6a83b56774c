use std::path::Path;

use crate::dsp::{AudioBuffer, SAMPLE_RATE_HZ};
use crate::error::{Error, Result};

fn unsupported(path: &Path, reason: String) -> Error {
    Error::UnsupportedFormat {
        path: path.to_path_buf(),
        reason,
    }
}

/// Reads 16-bit PCM mono 16 kHz audio, scaled to [-1, 1). Anything else is
/// rejected rather than converted.
pub fn ingest_wav(path: &Path) -> Result<AudioBuffer> {
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::Io(io),
        other => Error::Parse(format!("{}: {other}", path.display())),
    })?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(unsupported(
            path,
            format!("{}-bit {:?} samples, expected 16-bit PCM", spec.bits_per_sample, spec.sample_format),
        ));
    }
    if spec.channels != 1 {
        return Err(unsupported(path, format!("{} channels, expected mono", spec.channels)));
    }
    if spec.sample_rate != SAMPLE_RATE_HZ {
        return Err(unsupported(
            path,
            format!("{} Hz, expected {SAMPLE_RATE_HZ} Hz", spec.sample_rate),
        ));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32_768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    AudioBuffer::new(samples, SAMPLE_RATE_HZ)
}

/// Writes samples as 16-bit PCM mono 16 kHz, clipping to [-1, 1].
pub fn write_wav(path: &Path, samples: &[f64]) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE_HZ,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let to_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::Io(io),
        other => Error::Parse(other.to_string()),
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(to_err)?;
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * 32_767.0).round() as i16;
        w.write_sample(v).map_err(to_err)?;
    }
    w.finalize().map_err(to_err)
}
