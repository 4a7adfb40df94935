use crate::dsp::FeatureTrack;
use crate::vae::SpeakerCode;
use crate::{Error, Result};

/// Floor on the log-f0 standard deviation of a profile.
pub const LF0_STD_FLOOR: f64 = 1e-3;

/// Number of spectral dims tracked by global variance (MCC 1..=34).
pub const GV_DIMS: usize = 34;

/// Per-speaker statistics used by the f0 transform and the GV post-filter.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeakerProfile {
    pub id: String,
    pub code: SpeakerCode,
    pub lf0_mean: f64,
    pub lf0_std: f64,
    /// Mean over utterances of the per-utterance variance of MCC dims 1..=34.
    pub gv: Vec<f64>,
    pub utterances: Vec<String>,
}

/// Population variance of each spectral dim over one track's frames.
pub fn utterance_variance(track: &FeatureTrack) -> Vec<f64> {
    let n = track.frames();
    let d = track.dims().saturating_sub(1);
    if n == 0 {
        return vec![0.0; d];
    }
    let mut mean = vec![0.0; d];
    for t in 0..n {
        for (m, v) in mean.iter_mut().zip(track.spectral(t)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; d];
    for t in 0..n {
        for ((s, v), m) in var.iter_mut().zip(track.spectral(t)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    var.iter_mut().for_each(|s| *s /= n as f64);
    var
}

/// Builds a profile from a speaker's natural training tracks.
pub fn build_profile(
    id: &str,
    code: SpeakerCode,
    tracks: &[&FeatureTrack],
    utterances: Vec<String>,
) -> Result<SpeakerProfile> {
    if tracks.is_empty() {
        return Err(Error::invalid(format!("speaker {id}: no training tracks")));
    }
    let lf0: Vec<f64> = tracks.iter().flat_map(|t| t.log_f0.iter().flatten().copied()).collect();
    if lf0.is_empty() {
        return Err(Error::invalid(format!("speaker {id}: no voiced frames")));
    }
    let n = lf0.len() as f64;
    let mean = lf0.iter().sum::<f64>() / n;
    let var = lf0.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;

    let mut gv = vec![0.0; GV_DIMS];
    for t in tracks {
        if t.dims() != GV_DIMS + 1 {
            return Err(Error::invalid(format!(
                "speaker {id}: expected {} coefficients, got {}",
                GV_DIMS + 1,
                t.dims()
            )));
        }
        for (g, v) in gv.iter_mut().zip(utterance_variance(t)) {
            *g += v / tracks.len() as f64;
        }
    }
    Ok(SpeakerProfile {
        id: id.to_string(),
        code,
        lf0_mean: mean,
        lf0_std: var.sqrt().max(LF0_STD_FLOOR),
        gv,
        utterances,
    })
}

/// Linear mean-variance mapping of one voiced log-f0 value.
pub fn transform_log_f0(value: f64, source: &SpeakerProfile, target: &SpeakerProfile) -> Result<f64> {
    if !(source.lf0_std > LF0_STD_FLOOR) || !source.lf0_std.is_finite() {
        return Err(Error::invalid(format!(
            "speaker {} has degenerate log-f0 spread {}",
            source.id, source.lf0_std
        )));
    }
    Ok((value - source.lf0_mean) / source.lf0_std * target.lf0_std + target.lf0_mean)
}

/// Applies [`transform_log_f0`] to every voiced frame; unvoiced frames stay
/// unvoiced.
pub fn transform_f0(track: &FeatureTrack, source: &SpeakerProfile, target: &SpeakerProfile) -> Result<FeatureTrack> {
    let mut out = track.clone();
    for v in out.log_f0.iter_mut().flatten() {
        *v = transform_log_f0(*v, source, target)?;
    }
    Ok(out)
}

/// Replaces the converted track's level term and energy with the source's.
pub fn compensate_energy(converted: &FeatureTrack, source: &FeatureTrack) -> Result<FeatureTrack> {
    if converted.frames() != source.frames() {
        return Err(Error::invalid(format!(
            "energy compensation needs equal lengths, got {} and {} frames",
            converted.frames(),
            source.frames()
        )));
    }
    let mut out = converted.clone();
    for t in 0..out.frames() {
        out.mcc[t][0] = source.mcc[t][0];
        out.energy[t] = source.energy[t];
    }
    Ok(out)
}

/// Scales each spectral dim's deviations from its utterance mean so the
/// utterance variance becomes the target's GV. Dims with (near) zero
/// variance are left alone, as are tracks shorter than two frames.
pub fn gv_postfilter(track: &FeatureTrack, target: &SpeakerProfile) -> Result<FeatureTrack> {
    if track.dims() != GV_DIMS + 1 || target.gv.len() != GV_DIMS {
        return Err(Error::invalid(format!(
            "GV post-filter needs {} spectral dims",
            GV_DIMS
        )));
    }
    let mut out = track.clone();
    if track.frames() < 2 {
        log::warn!("GV post-filter skipped on a {}-frame track", track.frames());
        return Ok(out);
    }
    let n = track.frames() as f64;
    let var = utterance_variance(track);
    for d in 0..GV_DIMS {
        if var[d] < 1e-12 {
            continue;
        }
        let mean = (0..track.frames()).map(|t| track.mcc[t][d + 1]).sum::<f64>() / n;
        let scale = (target.gv[d] / var[d]).sqrt();
        for frame in &mut out.mcc {
            frame[d + 1] = mean + scale * (frame[d + 1] - mean);
        }
    }
    out.postfiltered = true;
    Ok(out)
}
