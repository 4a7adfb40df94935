//! Mel-cepstrum via first-order all-pass frequency warping.
//!
//! A log envelope is modelled on the warped axis as
//! `log S(ω) = c₀ + 2 Σ_{m≥1} c_m cos(m · β(ω))`, where
//! `β(ω) = ω + 2 atan(α sin ω / (1 − α cos ω))` is the all-pass phase.
//! Extraction is the weighted least-squares projection of the sampled log
//! spectrum onto that cosine basis, with weights approximating the
//! warped-axis measure (trapezoid × `dβ/dω`). With `α = 0` the weights
//! make the basis exactly orthogonal and the result is the plain real
//! cepstrum truncated to `order + 1` terms.

use nalgebra::{DMatrix, DVector};

use super::spectrum::SpectralFrame;
use crate::{Error, Result};

pub const DEFAULT_ORDER: usize = 34;
pub const DEFAULT_LOG_FLOOR: f64 = 1e-10;

/// Warping constant commonly paired with a sample rate.
pub fn default_warp_alpha(sample_rate: u32) -> f64 {
    if sample_rate <= 16_000 {
        0.42
    } else {
        0.455
    }
}

/// All-pass warped frequency `β(ω)`.
pub fn warp(omega: f64, alpha: f64) -> f64 {
    omega + 2.0 * (alpha * omega.sin()).atan2(1.0 - alpha * omega.cos())
}

/// `dβ/dω`.
fn warp_slope(omega: f64, alpha: f64) -> f64 {
    (1.0 - alpha * alpha) / (1.0 - 2.0 * alpha * omega.cos() + alpha * alpha)
}

/// Precomputed analysis/synthesis matrices for one `(bins, order, α)`.
#[derive(Clone, Debug)]
pub struct MelCepstrum {
    pub bins: usize,
    pub order: usize,
    pub alpha: f64,
    pub log_floor: f64,
    /// `bins × (order + 1)`: log-spectrum value of each coefficient.
    basis: DMatrix<f64>,
    /// `(order + 1) × bins`: weighted least-squares projection.
    projection: DMatrix<f64>,
}

impl MelCepstrum {
    pub fn new(bins: usize, order: usize, alpha: f64) -> Result<Self> {
        if bins < 2 || order + 1 > bins {
            return Err(Error::invalid(format!(
                "order {order} needs at least {} bins, got {bins}",
                order + 1
            )));
        }
        if !(alpha.abs() < 1.0) {
            return Err(Error::invalid(format!("warp alpha {alpha} outside (-1, 1)")));
        }
        let m = order + 1;
        let mut basis = DMatrix::zeros(bins, m);
        let mut weights = DVector::zeros(bins);
        for j in 0..bins {
            let omega = std::f64::consts::PI * j as f64 / (bins - 1) as f64;
            let beta = warp(omega, alpha);
            for k in 0..m {
                let scale = if k == 0 { 1.0 } else { 2.0 };
                basis[(j, k)] = scale * (k as f64 * beta).cos();
            }
            let trap = if j == 0 || j == bins - 1 { 0.5 } else { 1.0 };
            weights[j] = trap * warp_slope(omega, alpha);
        }
        let weighted_t = {
            let mut bt = basis.transpose();
            for j in 0..bins {
                for k in 0..m {
                    bt[(k, j)] *= weights[j];
                }
            }
            bt
        };
        let normal = &weighted_t * &basis;
        let chol = normal
            .cholesky()
            .ok_or_else(|| Error::invalid("mel-cepstrum normal matrix is not positive definite"))?;
        let projection = chol.solve(&weighted_t);
        Ok(Self {
            bins,
            order,
            alpha,
            log_floor: DEFAULT_LOG_FLOOR,
            basis,
            projection,
        })
    }

    /// `order + 1` coefficients of a (normalized) envelope. Bins at or
    /// below the log floor are clamped to it.
    pub fn sp_to_mcc(&self, frame: &SpectralFrame) -> Vec<f64> {
        assert_eq!(frame.sp.len(), self.bins, "spectral frame size");
        let log: DVector<f64> = DVector::from_iterator(self.bins, frame.sp.iter().map(|&v| v.max(self.log_floor).ln()));
        (&self.projection * log).iter().copied().collect()
    }

    /// Log envelope of a coefficient vector.
    pub fn log_envelope(&self, mcc: &[f64]) -> Vec<f64> {
        assert_eq!(mcc.len(), self.order + 1, "mcc length");
        let c = DVector::from_column_slice(mcc);
        (&self.basis * c).iter().copied().collect()
    }

    pub fn mcc_to_sp(&self, mcc: &[f64]) -> SpectralFrame {
        SpectralFrame {
            sp: self.log_envelope(mcc).into_iter().map(f64::exp).collect(),
        }
    }
}

/// One-shot [`MelCepstrum::sp_to_mcc`].
pub fn sp_to_mcc(frame: &SpectralFrame, order: usize, alpha: f64) -> Result<Vec<f64>> {
    Ok(MelCepstrum::new(frame.sp.len(), order, alpha)?.sp_to_mcc(frame))
}

/// One-shot [`MelCepstrum::mcc_to_sp`] at `fft_size / 2 + 1` bins.
pub fn mcc_to_sp(mcc: &[f64], fft_size: usize, alpha: f64) -> Result<SpectralFrame> {
    if mcc.is_empty() || mcc.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("mcc must be non-empty and finite"));
    }
    Ok(MelCepstrum::new(fft_size / 2 + 1, mcc.len() - 1, alpha)?.mcc_to_sp(mcc))
}
