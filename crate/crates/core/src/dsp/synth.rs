//! Parametric pulse/noise synthesizer used by the non-neural systems.

use rand_distr::{Distribution, StandardNormal};

use super::features::FeatureTrack;
use super::mcep::MelCepstrum;
use super::spectrum::{hann, hann_periodic, FftPlan};
use super::wave::Waveform;
use super::AnalysisConfig;
use crate::{Error, Result};

/// Euler-Mascheroni constant: mean offset of a chi-square(2) log periodogram.
const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Overlap-add synthesizer matched to an [`AnalysisConfig`].
///
/// The excitation is one continuous signal: unit-power pulses (amplitude
/// `sqrt(T0)`) from a phase accumulator on voiced frames and unit-variance
/// white noise on unvoiced ones. Every frame cuts a periodic Hann window of
/// two hops around its centre, shapes it with the zero-phase filter
/// `sqrt(env / Σ w²)` (where `Σ w²` is the analysis window power, so that
/// re-analysis reports the same envelope), and overlap-adds.
#[derive(Clone, Debug)]
pub struct Synthesizer {
    pub config: AnalysisConfig,
    plan: FftPlan,
    mcep: MelCepstrum,
    hop: usize,
    window_power: f64,
    /// Raise unvoiced envelopes by `e^γ` to undo the log-periodogram bias
    /// of the analysis side. On by default.
    pub noise_correction: bool,
}

impl Synthesizer {
    pub fn new(config: AnalysisConfig) -> Result<Self> {
        config.validate()?;
        let hop = config.hop()?;
        if 2 * hop > config.fft_size {
            return Err(Error::invalid(format!(
                "two hops ({}) exceed the FFT size {}",
                2 * hop,
                config.fft_size
            )));
        }
        let mut mcep = MelCepstrum::new(config.bins(), config.order, config.warp_alpha)?;
        mcep.log_floor = config.log_floor;
        Ok(Self {
            window_power: hann(config.frame_length).iter().map(|w| w * w).sum(),
            plan: FftPlan::new(config.fft_size),
            mcep,
            hop,
            config,
            noise_correction: true,
        })
    }

    fn excitation(&self, track: &FeatureTrack, seed: u64) -> Vec<f64> {
        let sr = self.config.sample_rate as f64;
        let mut rng = crate::diffcore::rng(seed);
        let mut phase = 0.0;
        let mut out = Vec::with_capacity(track.frames() * self.hop);
        for lf0 in &track.log_f0 {
            for _ in 0..self.hop {
                let v = match lf0 {
                    Some(l) => {
                        let f0 = l.exp();
                        phase += f0 / sr;
                        if phase >= 1.0 {
                            phase -= phase.floor();
                            (sr / f0).sqrt()
                        } else {
                            0.0
                        }
                    }
                    None => StandardNormal.sample(&mut rng),
                };
                out.push(v);
            }
        }
        out
    }

    pub fn synthesize(&self, track: &FeatureTrack, seed: u64) -> Result<Waveform> {
        track.validate()?;
        if track.dims() != self.config.order + 1 {
            return Err(Error::invalid(format!(
                "track has {} coefficients, synthesizer expects {}",
                track.dims(),
                self.config.order + 1
            )));
        }
        let hop = self.hop;
        let n_fft = self.config.fft_size;
        let len = track.frames() * hop;
        let exc = self.excitation(track, seed);
        let win = hann_periodic(2 * hop);
        let pad = (n_fft - 2 * hop) / 2;

        // output buffer is offset by n_fft/2 so frames near the edges fit
        let off = n_fft / 2;
        let mut acc = vec![0.0; len + n_fft];
        let mut wsum = vec![0.0; len + n_fft];
        let mut buf = vec![0.0; n_fft];

        for t in 0..track.frames() {
            let center = t * hop + hop / 2;
            // window start in output coordinates (shifted by `off`)
            let w0 = off + center - hop;
            for (i, &w) in win.iter().enumerate() {
                wsum[w0 + i] += w;
            }
            if track.energy[t] <= self.config.energy_floor {
                continue;
            }
            let mut env = self.mcep.mcc_to_sp(&track.mcc[t]).sp;
            let mut scale = track.energy[t] / self.window_power;
            if track.log_f0[t].is_none() && self.noise_correction {
                scale *= EULER_GAMMA.exp();
            }
            for e in env.iter_mut() {
                *e = (*e * scale).sqrt();
            }
            buf.iter_mut().for_each(|b| *b = 0.0);
            for (i, &w) in win.iter().enumerate() {
                let s = (center + i) as isize - hop as isize;
                if s >= 0 && (s as usize) < len {
                    buf[pad + i] = exc[s as usize] * w;
                }
            }
            self.plan.filter_zero_phase(&mut buf, &env);
            // buf index pad+i sits at output sample center − hop + i
            let b0 = w0 - pad;
            for (i, &v) in buf.iter().enumerate() {
                acc[b0 + i] += v;
            }
        }

        let samples = (0..len)
            .map(|n| {
                let w = wsum[off + n];
                let v = if w > 1e-6 { acc[off + n] / w } else { acc[off + n] };
                v.clamp(-1.0, 1.0)
            })
            .collect();
        Ok(Waveform::new(samples, self.config.sample_rate))
    }
}

/// Synthesizes a track with the default configuration for `sample_rate`
/// (frame shift taken from the track).
pub fn baseline_synthesize(track: &FeatureTrack, sample_rate: u32, seed: u64) -> Result<Waveform> {
    let mut cfg = AnalysisConfig::for_rate(sample_rate);
    cfg.frame_shift_ms = track.frame_shift_ms;
    cfg.order = track.dims().saturating_sub(1);
    Synthesizer::new(cfg)?.synthesize(track, seed)
}
