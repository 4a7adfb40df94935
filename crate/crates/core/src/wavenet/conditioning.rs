use crate::dsp::{hop_samples, FeatureTrack};
use crate::{Error, Result};

/// MCC dims 1..=34, log energy, continuous log-f0, voicing.
pub const COND_DIM: usize = 37;

/// Log-f0 used when a track has no voiced frame at all.
const DEFAULT_LOG_F0: f64 = 4.787_491_742_782_046; // ln 120

/// Per-sample conditioning, stored per frame: sample `n` uses frame
/// `n / hop`, so the plan covers exactly `frames × hop` samples.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditioningPlan {
    frames: Vec<Vec<f64>>,
    hop: usize,
}

impl ConditioningPlan {
    pub fn from_frames(frames: Vec<Vec<f64>>, hop: usize) -> Result<Self> {
        if frames.is_empty() || hop == 0 {
            return Err(Error::invalid(
                "conditioning needs at least one frame and a positive hop",
            ));
        }
        if frames.iter().any(|f| f.len() != COND_DIM) {
            return Err(Error::invalid(format!("conditioning frames must have {COND_DIM} dims")));
        }
        if frames.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("conditioning is not finite"));
        }
        Ok(Self { frames, hop })
    }

    /// Number of samples covered.
    pub fn len(&self) -> usize {
        self.frames.len() * self.hop
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn frames(&self) -> &[Vec<f64>] {
        &self.frames
    }

    /// Vector for sample `n`.
    pub fn at(&self, n: usize) -> &[f64] {
        &self.frames[n / self.hop]
    }

    /// Explicit per-sample vectors.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|n| self.at(n).to_vec()).collect()
    }
}

/// Log-f0 with unvoiced frames filled by linear interpolation between the
/// neighbouring voiced frames (held constant before the first and after the
/// last one).
pub fn continuous_log_f0(log_f0: &[Option<f64>]) -> Vec<f64> {
    let voiced: Vec<(usize, f64)> = log_f0
        .iter()
        .enumerate()
        .filter_map(|(t, v)| v.map(|v| (t, v)))
        .collect();
    if voiced.is_empty() {
        return vec![DEFAULT_LOG_F0; log_f0.len()];
    }
    let mut out = Vec::with_capacity(log_f0.len());
    let mut next = 0;
    for t in 0..log_f0.len() {
        while next < voiced.len() && voiced[next].0 < t {
            next += 1;
        }
        let v = if next < voiced.len() && voiced[next].0 == t {
            voiced[next].1
        } else if next == 0 {
            voiced[0].1
        } else if next == voiced.len() {
            voiced[voiced.len() - 1].1
        } else {
            let (t0, v0) = voiced[next - 1];
            let (t1, v1) = voiced[next];
            v0 + (v1 - v0) * (t - t0) as f64 / (t1 - t0) as f64
        };
        out.push(v);
    }
    out
}

/// Frame vectors of a track, duplicated `shift · rate / 1000` times each.
pub fn upsample_conditioning(track: &FeatureTrack, sample_rate: u32) -> Result<ConditioningPlan> {
    if track.frames() == 0 {
        return Err(Error::invalid("cannot condition on an empty track"));
    }
    track.validate()?;
    if track.dims() != 35 {
        return Err(Error::invalid(format!(
            "expected 35 coefficients, got {}",
            track.dims()
        )));
    }
    let hop = hop_samples(track.frame_shift_ms, sample_rate)?;
    let lf0 = continuous_log_f0(&track.log_f0);
    let frames = (0..track.frames())
        .map(|t| {
            let mut v = Vec::with_capacity(COND_DIM);
            v.extend_from_slice(track.spectral(t));
            v.push(track.energy[t].ln());
            v.push(lf0[t]);
            v.push(if track.voiced(t) { 1.0 } else { 0.0 });
            v
        })
        .collect();
    ConditioningPlan::from_frames(frames, hop)
}
