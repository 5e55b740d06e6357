//! Audio containers and file I/O.
//!
//! The engine consumes single-channel audio as `f64` samples in [-1, 1].
//! Two on-disk forms are supported: 16-bit signed little-endian PCM WAV and
//! headerless little-endian float32 (`.f32`/`.raw`) with a declared rate.

use std::path::Path;

use crate::error::{data_err, EngineError, Result};

/// A single-channel audio signal.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioSignal {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioSignal {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return data_err("sample rate must be positive");
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return data_err("audio contains non-finite samples");
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Read an audio file. WAV files carry their own rate; raw float32 files use
/// `raw_rate`.
pub fn read_audio(path: &Path, raw_rate: u32) -> Result<AudioSignal> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("wav") => read_wav(path),
        Some("f32") | Some("raw") => read_raw_f32(path, raw_rate),
        _ => data_err(format!(
            "unsupported audio extension for {} (expected .wav, .f32 or .raw)",
            path.display()
        )),
    }
}

/// Read a single-channel 16-bit PCM WAV file.
pub fn read_wav(path: &Path) -> Result<AudioSignal> {
    let reader = hound::WavReader::open(path)
        .map_err(|e| EngineError::Data(format!("cannot open {}: {e}", path.display())))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return data_err(format!(
            "{}: expected mono audio, got {} channels",
            path.display(),
            spec.channels
        ));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return data_err(format!(
            "{}: expected 16-bit signed PCM",
            path.display()
        ));
    }
    let samples: std::result::Result<Vec<i16>, _> = reader.into_samples().collect();
    let samples =
        samples.map_err(|e| EngineError::Data(format!("{}: {e}", path.display())))?;
    let scaled = samples.iter().map(|&s| s as f64 / 32768.0).collect();
    AudioSignal::new(scaled, spec.sample_rate)
}

/// Write a signal as 16-bit PCM WAV. Samples are clamped to [-1, 1].
pub fn write_wav(signal: &AudioSignal, path: &Path) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: signal.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)
        .map_err(|e| EngineError::Data(format!("cannot create {}: {e}", path.display())))?;
    for &s in &signal.samples {
        let q = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer
            .write_sample(q)
            .map_err(|e| EngineError::Data(format!("write {}: {e}", path.display())))?;
    }
    writer
        .finalize()
        .map_err(|e| EngineError::Data(format!("finalize {}: {e}", path.display())))?;
    Ok(())
}

/// Read headerless little-endian float32 audio at a declared rate.
pub fn read_raw_f32(path: &Path, sample_rate: u32) -> Result<AudioSignal> {
    let bytes = std::fs::read(path)?;
    if bytes.len() % 4 != 0 {
        return data_err(format!(
            "{}: raw float32 file length {} is not a multiple of 4",
            path.display(),
            bytes.len()
        ));
    }
    let samples = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    AudioSignal::new(samples, sample_rate)
}
