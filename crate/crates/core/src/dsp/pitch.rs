use super::AnalysisConfig;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PitchEstimate {
    /// Interpolated fundamental frequency in Hz.
    pub f0: f64,
    /// Normalized autocorrelation at the chosen lag, in `[-1, 1]`.
    pub confidence: f64,
}

impl PitchEstimate {
    pub fn voiced(&self, threshold: f64) -> bool {
        self.confidence >= threshold
    }
}

/// Normalized-autocorrelation pitch estimate for the window of
/// `cfg.frame_length` samples starting at `start` (samples outside the
/// signal read as zero).
///
/// The chosen lag is the shortest local maximum within 90 % of the global
/// maximum, which avoids picking period multiples; the peak is refined by
/// parabolic interpolation. Returns `None` for silent windows.
pub fn estimate_pitch(signal: &[f64], start: isize, cfg: &AnalysisConfig) -> Option<PitchEstimate> {
    let sr = cfg.sample_rate as f64;
    let min_lag = (sr / cfg.f0_max).floor().max(2.0) as usize;
    let max_lag = (sr / cfg.f0_min).ceil() as usize;
    let n = cfg.frame_length;
    let get = |i: isize| -> f64 {
        if i < 0 || i as usize >= signal.len() {
            0.0
        } else {
            signal[i as usize]
        }
    };
    let seg: Vec<f64> = (0..(n + max_lag + 1) as isize).map(|i| get(start + i)).collect();

    let e0: f64 = seg[..n].iter().map(|v| v * v).sum();
    if e0 <= f64::MIN_POSITIVE * n as f64 || e0 < 1e-12 {
        return None;
    }
    // energy of the lagged window, maintained incrementally
    let mut e_lag: f64 = seg[min_lag - 1..min_lag - 1 + n].iter().map(|v| v * v).sum();
    let mut r = vec![0.0; max_lag + 2];
    for lag in (min_lag - 1)..=(max_lag + 1).min(seg.len() - n) {
        if lag > min_lag - 1 {
            e_lag += seg[lag + n - 1] * seg[lag + n - 1] - seg[lag - 1] * seg[lag - 1];
        }
        let cross: f64 = seg[..n].iter().zip(&seg[lag..lag + n]).map(|(a, b)| a * b).sum();
        let denom = (e0 * e_lag.max(0.0)).sqrt();
        r[lag] = if denom > 0.0 { cross / denom } else { 0.0 };
    }

    let global = (min_lag..=max_lag).map(|l| r[l]).fold(f64::NEG_INFINITY, f64::max);
    if !(global > 0.0) {
        return Some(PitchEstimate {
            f0: sr / max_lag as f64,
            confidence: global.max(-1.0),
        });
    }
    let is_peak = |l: usize| r[l] >= r[l - 1] && r[l] >= r[l + 1];
    let lag = (min_lag..=max_lag)
        .find(|&l| is_peak(l) && r[l] >= 0.9 * global)
        .unwrap_or_else(|| (min_lag..=max_lag).max_by(|&a, &b| r[a].total_cmp(&r[b])).unwrap());

    let (a, b, c) = (r[lag - 1], r[lag], r[lag + 1]);
    let curvature = a - 2.0 * b + c;
    let offset = if curvature < 0.0 {
        (0.5 * (a - c) / curvature).clamp(-0.5, 0.5)
    } else {
        0.0
    };
    let refined = lag as f64 + offset;
    Some(PitchEstimate {
        f0: sr / refined,
        confidence: b,
    })
}
