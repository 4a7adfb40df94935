use std::path::Path;

use crate::{Error, Result};

/// Mono PCM signal with samples nominally in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self { samples, sample_rate }
    }

    pub fn silence(len: usize, sample_rate: u32) -> Self {
        Self::new(vec![0.0; len], sample_rate)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn is_finite(&self) -> bool {
        self.samples.iter().all(|s| s.is_finite())
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    /// Zero-pads or truncates to exactly `len` samples.
    pub fn fit_to(&mut self, len: usize) {
        self.samples.resize(len, 0.0);
    }

    /// Clamps every sample into `[-1, 1]`, returning how many were changed.
    pub fn clamp(&mut self) -> usize {
        let mut n = 0;
        for s in &mut self.samples {
            if s.abs() > 1.0 {
                *s = s.clamp(-1.0, 1.0);
                n += 1;
            }
        }
        n
    }

    /// Writes 16-bit PCM mono. Samples map to `round(x · 32768)` clamped to
    /// the `i16` range, so [`Waveform::read_wav`] output re-encodes exactly.
    pub fn write_wav(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(path, spec)?;
        for &s in &self.samples {
            let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
            w.write_sample(q)?;
        }
        w.finalize()?;
        Ok(())
    }

    /// Reads a 16-bit PCM mono file.
    pub fn read_wav(path: &Path) -> Result<Self> {
        let mut r = hound::WavReader::open(path)?;
        let spec = r.spec();
        if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
            return Err(Error::Format(format!(
                "{}: expected 16-bit PCM mono, got {} ch / {} bit",
                path.display(),
                spec.channels,
                spec.bits_per_sample
            )));
        }
        let samples = r
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Self::new(samples, spec.sample_rate))
    }
}
