use super::features::{FeatureKind, FeatureTrack};
use super::mcep::MelCepstrum;
use super::pitch::estimate_pitch;
use super::spectrum::{hann, unit_sum_normalize, FftPlan, SpectralFrame};
use super::wave::Waveform;
use super::AnalysisConfig;
use crate::{Error, Result};

/// Output of [`Analyzer::analyze`]: the feature track plus the smoothed
/// (un-normalized) envelope of every frame.
#[derive(Clone, Debug)]
pub struct Analysis {
    pub track: FeatureTrack,
    pub spectra: Vec<SpectralFrame>,
    /// Frames whose spectrum had no energy and were floored.
    pub degenerate_frames: usize,
}

/// Reusable analysis state (FFT plan, window, mel-cepstrum matrices).
#[derive(Clone, Debug)]
pub struct Analyzer {
    pub config: AnalysisConfig,
    plan: FftPlan,
    window: Vec<f64>,
    mcep: MelCepstrum,
    hop: usize,
}

impl Analyzer {
    pub fn new(config: AnalysisConfig) -> Result<Self> {
        config.validate()?;
        let mut mcep = MelCepstrum::new(config.bins(), config.order, config.warp_alpha)?;
        mcep.log_floor = config.log_floor;
        Ok(Self {
            plan: FftPlan::new(config.fft_size),
            window: hann(config.frame_length),
            hop: config.hop()?,
            mcep,
            config,
        })
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn mel_cepstrum(&self) -> &MelCepstrum {
        &self.mcep
    }

    /// Number of frames for `samples` samples: `ceil(samples / hop)`.
    pub fn frame_count(&self, samples: usize) -> usize {
        samples.div_ceil(self.hop)
    }

    /// Frame `t` is centred on sample `t·hop + hop/2`, i.e. on the middle
    /// of the hop it stands for.
    pub fn frame_center(&self, t: usize) -> isize {
        (t * self.hop + self.hop / 2) as isize
    }

    /// Smoothed power envelope of the window centred at `center`.
    pub fn envelope(&self, signal: &[f64], center: isize) -> SpectralFrame {
        let n = self.config.frame_length;
        let start = center - (n / 2) as isize;
        let frame: Vec<f64> = (0..n)
            .map(|i| {
                let idx = start + i as isize;
                let s = if idx < 0 || idx as usize >= signal.len() {
                    0.0
                } else {
                    signal[idx as usize]
                };
                s * self.window[i]
            })
            .collect();
        let power = self.plan.power(&frame);
        let total: f64 = power.iter().sum();
        if !(total > self.config.energy_floor) {
            return SpectralFrame {
                sp: vec![0.0; power.len()],
            };
        }
        let log: Vec<f64> = power.iter().map(|&p| p.max(self.config.log_floor).ln()).collect();
        let smooth = self.plan.lifter_log_spectrum(&log, self.config.lifter);
        SpectralFrame {
            sp: smooth.into_iter().map(f64::exp).collect(),
        }
    }

    pub fn analyze(&self, wave: &Waveform) -> Result<Analysis> {
        if wave.is_empty() {
            return Err(Error::invalid("cannot analyze an empty waveform"));
        }
        if wave.sample_rate != self.config.sample_rate {
            return Err(Error::invalid(format!(
                "waveform rate {} Hz does not match analysis rate {} Hz",
                wave.sample_rate, self.config.sample_rate
            )));
        }
        if !wave.is_finite() {
            return Err(Error::invalid("waveform holds non-finite samples"));
        }
        let frames = self.frame_count(wave.len());
        let mut mcc = Vec::with_capacity(frames);
        let mut log_f0 = Vec::with_capacity(frames);
        let mut energy = Vec::with_capacity(frames);
        let mut spectra = Vec::with_capacity(frames);
        let mut degenerate_frames = 0;
        let half = (self.config.frame_length / 2) as isize;

        for t in 0..frames {
            let center = self.frame_center(t);
            let sp = self.envelope(&wave.samples, center);
            let norm = unit_sum_normalize(&sp, self.config.energy_floor);
            degenerate_frames += norm.degenerate as usize;
            mcc.push(self.mcep.sp_to_mcc(&norm.frame));
            energy.push(norm.energy);

            let pitch = if norm.degenerate {
                None
            } else {
                estimate_pitch(&wave.samples, center - half, &self.config)
            };
            log_f0.push(
                pitch
                    .filter(|p| p.voiced(self.config.voicing_threshold))
                    .map(|p| p.f0.ln()),
            );
            spectra.push(sp);
        }
        Ok(Analysis {
            track: FeatureTrack {
                mcc,
                log_f0,
                energy,
                frame_shift_ms: self.config.frame_shift_ms,
                kind: FeatureKind::Natural,
                postfiltered: false,
            },
            spectra,
            degenerate_frames,
        })
    }
}

/// One-shot analysis with the default configuration for the waveform's
/// rate, overriding frame shift and FFT size.
pub fn analyze(wave: &Waveform, frame_shift_ms: f64, fft_size: usize) -> Result<(FeatureTrack, Vec<SpectralFrame>)> {
    let mut cfg = AnalysisConfig::for_rate(wave.sample_rate);
    cfg.frame_shift_ms = frame_shift_ms;
    cfg.fft_size = fft_size;
    cfg.frame_length = cfg.frame_length.min(fft_size / 2);
    let a = Analyzer::new(cfg)?.analyze(wave)?;
    Ok((a.track, a.spectra))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    fn sawtooth(f0: f64, secs: f64, sr: u32) -> Waveform {
        let n = (secs * sr as f64) as usize;
        Waveform::new(
            (0..n)
                .map(|i| {
                    let ph = (f0 * i as f64 / sr as f64).fract();
                    0.5 * (2.0 * ph - 1.0)
                })
                .collect(),
            sr,
        )
    }

    fn median(mut v: Vec<f64>) -> f64 {
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    }

    #[test]
    fn sawtooth_is_voiced_at_its_pitch() {
        let (track, spectra) = analyze(&sawtooth(220.0, 1.0, 16_000), 5.0, 512).unwrap();
        assert_eq!(track.frames(), 200);
        assert_eq!(spectra.len(), 200);
        assert_eq!(track.dims(), 35);
        assert_eq!(track.voiced_count(), track.frames());
        let f0s: Vec<f64> = track.log_f0.iter().flatten().map(|l| l.exp()).collect();
        let m = median(f0s);
        assert!((m - 220.0).abs() <= 0.03 * 220.0, "median f0 {m}");
    }

    #[test]
    fn white_noise_is_mostly_unvoiced() {
        let mut rng = crate::diffcore::rng(3);
        let w = Waveform::new((0..16_000).map(|_| rng.random_range(-0.5..0.5)).collect(), 16_000);
        let (track, _) = analyze(&w, 5.0, 512).unwrap();
        let unvoiced = track.frames() - track.voiced_count();
        assert!(
            unvoiced as f64 >= 0.9 * track.frames() as f64,
            "{unvoiced}/{}",
            track.frames()
        );
    }

    #[test]
    fn silence_is_unvoiced_at_energy_floor() {
        let (track, _) = analyze(&Waveform::silence(1234, 16_000), 5.0, 512).unwrap();
        assert_eq!(track.frames(), 1234usize.div_ceil(80));
        assert_eq!(track.voiced_count(), 0);
        assert!(track.energy.iter().all(|&e| e == 1e-10));
        assert!(track.validate().is_ok());
    }

    #[test]
    fn empty_and_mismatched_inputs_fail() {
        assert!(analyze(&Waveform::silence(0, 16_000), 5.0, 512).is_err());
        let a = Analyzer::new(AnalysisConfig::for_rate(16_000)).unwrap();
        assert!(a.analyze(&Waveform::silence(100, 22_050)).is_err());
    }
}
