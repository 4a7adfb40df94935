//! Analysis/synthesis chain: waveform ↔ (mel-cepstrum, log-f0, voicing,
//! energy), plus mu-law companding and the WAV / `VCFT` file formats.
//!
//! The chain is deliberately simple: a Hann-windowed power spectrum is
//! smoothed by cepstral liftering, normalized to unit sum (the sum is kept
//! as the frame energy) and converted to a warped mel-cepstrum. Pitch comes
//! from normalized autocorrelation. The parametric synthesizer excites the
//! envelope with a pulse train or white noise and overlap-adds the frames.

mod analyze;
pub(crate) mod features;
pub mod mcep;
mod mulaw;
mod pitch;
mod spectrum;
mod synth;
mod wave;

pub use analyze::{analyze, Analysis, Analyzer};
pub use features::{FeatureKind, FeatureTrack, FEATURE_MAGIC, FEATURE_VERSION};
pub use mcep::{default_warp_alpha, mcc_to_sp, sp_to_mcc, MelCepstrum};
pub use mulaw::{Encoded, MuLaw, MuLawCode, MU_LAW_LEVELS};
pub use pitch::{estimate_pitch, PitchEstimate};
pub use spectrum::{hann, hann_periodic, unit_sum_normalize, FftPlan, Normalized, SpectralFrame};
pub use synth::{baseline_synthesize, Synthesizer};
pub use wave::Waveform;

use crate::{Error, Result};

/// Settings shared by analysis and parametric synthesis.
#[derive(Clone, Debug, PartialEq)]
pub struct AnalysisConfig {
    pub sample_rate: u32,
    pub frame_shift_ms: f64,
    pub fft_size: usize,
    /// Analysis window length in samples; at most `fft_size / 2`.
    pub frame_length: usize,
    /// Mel-cepstral order; frames carry `order + 1` coefficients.
    pub order: usize,
    pub warp_alpha: f64,
    pub f0_min: f64,
    pub f0_max: f64,
    /// Minimum normalized autocorrelation peak for a voiced frame.
    pub voicing_threshold: f64,
    /// Cepstral lifter length (quefrency samples kept) for envelope smoothing.
    pub lifter: usize,
    /// Energy assigned to frames without positive power.
    pub energy_floor: f64,
    pub log_floor: f64,
}

impl AnalysisConfig {
    pub fn for_rate(sample_rate: u32) -> Self {
        Self {
            sample_rate,
            frame_shift_ms: 5.0,
            fft_size: 512,
            frame_length: 256,
            order: mcep::DEFAULT_ORDER,
            warp_alpha: default_warp_alpha(sample_rate),
            f0_min: 70.0,
            f0_max: 400.0,
            voicing_threshold: 0.3,
            lifter: 30,
            energy_floor: 1e-10,
            log_floor: mcep::DEFAULT_LOG_FLOOR,
        }
    }

    /// Frame shift in samples; the shift must be a whole number of samples.
    pub fn hop(&self) -> Result<usize> {
        hop_samples(self.frame_shift_ms, self.sample_rate)
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !self.fft_size.is_power_of_two() || self.fft_size < 2 * self.frame_length {
            errs.push(format!(
                "fft_size {} must be a power of two ≥ 2 × frame_length {}",
                self.fft_size, self.frame_length
            ));
        }
        if self.frame_length < 16 {
            errs.push("frame_length must be at least 16".into());
        }
        if let Err(e) = self.hop() {
            errs.push(e.to_string());
        }
        if self.order + 1 > self.bins() {
            errs.push(format!("order {} exceeds {} bins", self.order, self.bins()));
        }
        if !(self.f0_min > 0.0 && self.f0_min < self.f0_max && self.f0_max < self.sample_rate as f64 / 2.0) {
            errs.push(format!("bad f0 range {}..{}", self.f0_min, self.f0_max));
        }
        if !(self.warp_alpha.abs() < 1.0) {
            errs.push(format!("warp alpha {} outside (-1, 1)", self.warp_alpha));
        }
        if self.lifter < 2 || self.lifter > self.fft_size / 2 {
            errs.push(format!("lifter {} out of range", self.lifter));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

/// `shift_ms · rate / 1000` when that is a positive whole number.
pub fn hop_samples(frame_shift_ms: f64, sample_rate: u32) -> Result<usize> {
    let exact = frame_shift_ms * sample_rate as f64 / 1000.0;
    let rounded = exact.round();
    if rounded < 1.0 || (exact - rounded).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "frame shift {frame_shift_ms} ms is not a whole number of samples at {sample_rate} Hz"
        )));
    }
    Ok(rounded as usize)
}
