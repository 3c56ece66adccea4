//! WAV decode/encode for the corpus formats this crate accepts:
//! RIFF/WAVE, mono, 16-bit PCM or 32-bit IEEE float.

use std::path::Path;

use crate::error::{Error, Result};

/// Header-level facts about a WAV file, probed without decoding samples.
#[derive(Clone, Copy, Debug)]
pub struct WavInfo {
    pub sample_rate: u32,
    pub n_samples: u32,
    pub duration_s: f64,
}

fn open(path: &Path) -> Result<hound::WavReader<std::io::BufReader<std::fs::File>>> {
    hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        hound::Error::FormatError(detail) => Error::NotWav {
            path: path.to_path_buf(),
            detail: detail.to_string(),
        },
        other => Error::NotWav {
            path: path.to_path_buf(),
            detail: other.to_string(),
        },
    })
}

fn check_spec(path: &Path, spec: hound::WavSpec) -> Result<()> {
    if spec.channels != 1 {
        return Err(Error::MultiChannel {
            path: path.to_path_buf(),
            channels: spec.channels,
        });
    }
    match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) | (hound::SampleFormat::Float, 32) => Ok(()),
        (fmt, bits) => Err(Error::UnsupportedCodec {
            path: path.to_path_buf(),
            detail: format!("{bits}-bit {fmt:?} PCM"),
        }),
    }
}

/// Probe sample rate and duration from the header.
pub fn probe_wav(path: &Path) -> Result<WavInfo> {
    let reader = open(path)?;
    let spec = reader.spec();
    check_spec(path, spec)?;
    let n_samples = reader.duration();
    Ok(WavInfo {
        sample_rate: spec.sample_rate,
        n_samples,
        duration_s: n_samples as f64 / spec.sample_rate as f64,
    })
}

/// Decode a mono WAV into f64 samples. 16-bit integers are scaled to
/// [−1, 1) by division by 32768; 32-bit floats pass through.
pub fn load_wav(path: &Path) -> Result<(Vec<f64>, u32)> {
    let mut reader = open(path)?;
    let spec = reader.spec();
    check_spec(path, spec)?;
    let samples: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Int => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>(),
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>(),
    }
    .map_err(|e| Error::NotWav {
        path: path.to_path_buf(),
        detail: format!("sample decode failed: {e}"),
    })?;
    Ok((samples, spec.sample_rate))
}

/// Write mono 16-bit PCM. Samples are clamped to [−1, 1] and rounded.
pub fn save_wav_i16(path: &Path, samples: &[f64], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let as_io_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::Other, other.to_string()),
        ),
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(as_io_err)?;
    for &v in samples {
        let q = (v * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(q).map_err(as_io_err)?;
    }
    writer.finalize().map_err(as_io_err)?;
    Ok(())
}
