use std::path::Path;

use crate::{DspError, Result, SAMPLE_RATE};

const SCALE: f64 = 32768.0;

/// Mono samples in `[-1, 1]` at `sample_rate` Hz.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    /// Rejects non-finite samples.
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(DspError::NonFinite(i));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64).sqrt()
    }

    pub(crate) fn require_rate(&self) -> Result<()> {
        if self.sample_rate != SAMPLE_RATE {
            return Err(DspError::UnsupportedFormat {
                property: "sample rate",
                found: format!("{} Hz", self.sample_rate),
                expected: format!("{SAMPLE_RATE} Hz"),
            });
        }
        Ok(())
    }
}

fn unsupported(property: &'static str, found: impl ToString, expected: impl ToString) -> DspError {
    DspError::UnsupportedFormat {
        property,
        found: found.to_string(),
        expected: expected.to_string(),
    }
}

/// Read a 16 kHz, mono, 16-bit PCM file; samples are scaled by 1/32768.
pub fn load_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int {
        return Err(unsupported("sample format", "float", "integer PCM"));
    }
    if spec.bits_per_sample != 16 {
        return Err(unsupported("bits per sample", spec.bits_per_sample, 16));
    }
    if spec.channels != 1 {
        return Err(unsupported("channel count", spec.channels, 1));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(unsupported(
            "sample rate",
            format!("{} Hz", spec.sample_rate),
            format!("{SAMPLE_RATE} Hz"),
        ));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / SCALE))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Waveform::new(samples, spec.sample_rate)
}

/// Quantize to 16 bits (round to nearest, clamp) and write.
pub fn save_wav(w: &Waveform, path: impl AsRef<Path>) -> Result<()> {
    w.require_rate()?;
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for &s in &w.samples {
        writer.write_sample(quantize_sample(s))?;
    }
    writer.finalize()?;
    Ok(())
}

fn quantize_sample(s: f64) -> i16 {
    (s * SCALE).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16
}
