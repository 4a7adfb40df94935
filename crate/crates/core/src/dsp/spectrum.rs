//! Short-time power spectra and cepstral envelope smoothing.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

/// Non-negative power envelope over `fft_size / 2 + 1` bins.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralFrame {
    pub sp: Vec<f64>,
}

/// Result of [`unit_sum_normalize`].
#[derive(Clone, Debug, PartialEq)]
pub struct Normalized {
    pub frame: SpectralFrame,
    pub energy: f64,
    /// The input had no positive energy and was replaced by a flat frame.
    pub degenerate: bool,
}

/// Divides a frame by its bin sum. All-zero (or non-positive) frames become
/// the uniform frame with `energy = floor` and are flagged.
pub fn unit_sum_normalize(frame: &SpectralFrame, floor: f64) -> Normalized {
    let total: f64 = frame.sp.iter().sum();
    let n = frame.sp.len();
    if !(total > 0.0) || !total.is_finite() {
        return Normalized {
            frame: SpectralFrame {
                sp: vec![1.0 / n as f64; n],
            },
            energy: floor,
            degenerate: true,
        };
    }
    Normalized {
        frame: SpectralFrame {
            sp: frame.sp.iter().map(|&v| v / total).collect(),
        },
        energy: total,
        degenerate: false,
    }
}

/// Real-signal FFT helper of a fixed power-of-two size.
#[derive(Clone)]
pub struct FftPlan {
    pub size: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for FftPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FftPlan").field("size", &self.size).finish()
    }
}

impl FftPlan {
    pub fn new(size: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            size,
            forward: planner.plan_fft_forward(size),
            inverse: planner.plan_fft_inverse(size),
        }
    }

    pub fn bins(&self) -> usize {
        self.size / 2 + 1
    }

    /// Power spectrum `|X_k|²` of a real frame (zero-padded to the FFT size).
    pub fn power(&self, frame: &[f64]) -> Vec<f64> {
        let mut buf: Vec<Complex<f64>> = frame.iter().map(|&v| Complex::new(v, 0.0)).collect();
        buf.resize(self.size, Complex::new(0.0, 0.0));
        self.forward.process(&mut buf);
        buf[..self.bins()].iter().map(|c| c.norm_sqr()).collect()
    }

    /// Real cepstrum-domain smoothing: keeps quefrencies `< lifter` of the
    /// log spectrum `log_sp` (length `bins`) and returns the smoothed log
    /// spectrum.
    pub fn lifter_log_spectrum(&self, log_sp: &[f64], lifter: usize) -> Vec<f64> {
        let n = self.size;
        let bins = self.bins();
        let mut buf: Vec<Complex<f64>> = (0..n)
            .map(|k| {
                let k = if k < bins { k } else { n - k };
                Complex::new(log_sp[k], 0.0)
            })
            .collect();
        self.inverse.process(&mut buf);
        for (q, c) in buf.iter_mut().enumerate() {
            let q = q.min(n - q);
            if q >= lifter {
                *c = Complex::new(0.0, 0.0);
            }
        }
        self.forward.process(&mut buf);
        buf[..bins].iter().map(|c| c.re / n as f64).collect()
    }

    /// Applies a real, zero-phase gain per bin to a real buffer of length
    /// `size`, in place.
    pub fn filter_zero_phase(&self, buf: &mut [f64], gain: &[f64]) {
        let n = self.size;
        let mut c: Vec<Complex<f64>> = buf.iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.forward.process(&mut c);
        for (k, v) in c.iter_mut().enumerate() {
            let k = if k < gain.len() { k } else { n - k };
            *v *= gain[k];
        }
        self.inverse.process(&mut c);
        for (o, v) in buf.iter_mut().zip(&c) {
            *o = v.re / n as f64;
        }
    }
}

/// Symmetric Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// Periodic Hann window: overlapping copies at hop `n / 2` sum to one.
pub fn hann_periodic(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_frame_normalizes_symmetrically() {
        let c = 0.37;
        let n = unit_sum_normalize(&SpectralFrame { sp: vec![c; 257] }, 1e-10);
        assert!(!n.degenerate);
        for &v in &n.frame.sp {
            assert!((v - 1.0 / 257.0).abs() < 1e-15);
        }
        assert!((n.energy - 257.0 * c).abs() < 1e-12);
    }

    #[test]
    fn zero_frame_is_flagged() {
        let n = unit_sum_normalize(&SpectralFrame { sp: vec![0.0; 257] }, 1e-10);
        assert!(n.degenerate);
        assert_eq!(n.energy, 1e-10);
        assert!((n.frame.sp.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn liftering_keeps_smooth_log_spectra() {
        let plan = FftPlan::new(64);
        let smooth: Vec<f64> = (0..plan.bins())
            .map(|k| 1.0 + 0.5 * (std::f64::consts::PI * k as f64 / 32.0).cos())
            .collect();
        let out = plan.lifter_log_spectrum(&smooth, 4);
        for (a, b) in smooth.iter().zip(&out) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn periodic_hann_overlap_adds_to_one() {
        let w = hann_periodic(160);
        for i in 0..80 {
            assert!((w[i] + w[i + 80] - 1.0).abs() < 1e-12);
        }
    }
}
