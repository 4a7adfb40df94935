//! The seven compared conversion systems and vocoder adaptation sets.

use std::collections::BTreeMap;
use std::fmt;

use super::profile::{compensate_energy, gv_postfilter, transform_f0, SpeakerProfile};
use crate::dsp::{Analyzer, FeatureKind, FeatureTrack, Synthesizer, Waveform};
use crate::vae::{ForwardMode, LatentChoice, VaeModel};
use crate::wavenet::{self, upsample_conditioning, Provenance, TrainPair, WaveNetModel};
use crate::{Error, Result, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SystemId {
    B1,
    B2,
    B3,
    B4,
    P1,
    P2,
    UB,
}

impl SystemId {
    pub const ALL: [SystemId; 7] = [
        SystemId::B1,
        SystemId::B2,
        SystemId::B3,
        SystemId::B4,
        SystemId::P1,
        SystemId::P2,
        SystemId::UB,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SystemId::B1 => "B1",
            SystemId::B2 => "B2",
            SystemId::B3 => "B3",
            SystemId::B4 => "B4",
            SystemId::P1 => "P1",
            SystemId::P2 => "P2",
            SystemId::UB => "UB",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|id| id.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown system {s:?} (expected one of B1 B2 B3 B4 P1 P2 UB)")))
    }
}

impl fmt::Display for SystemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Vocoder {
    Parametric,
    WaveNet,
}

/// Features the target-speaker vocoder was adapted on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AdaptKind {
    None,
    Natural,
    Reconstructed,
    ReconstructedGv,
}

impl AdaptKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AdaptKind::None => "none",
            AdaptKind::Natural => "natural",
            AdaptKind::Reconstructed => "reconstructed",
            AdaptKind::ReconstructedGv => "reconstructed+gv",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        [
            AdaptKind::None,
            AdaptKind::Natural,
            AdaptKind::Reconstructed,
            AdaptKind::ReconstructedGv,
        ]
        .into_iter()
        .find(|k| k.as_str() == s)
        .ok_or_else(|| Error::invalid(format!("unknown adaptation kind {s:?}")))
    }

    /// Provenance of the vocoder this kind produces.
    pub fn provenance(self) -> Option<Provenance> {
        match self {
            AdaptKind::None => None,
            AdaptKind::Natural => Some(Provenance::FinetunedNatural),
            AdaptKind::Reconstructed => Some(Provenance::FinetunedReconstructed),
            AdaptKind::ReconstructedGv => Some(Provenance::FinetunedReconstructedGv),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SystemSpec {
    pub id: SystemId,
    pub vocoder: Vocoder,
    /// GV post-filter on converted features before vocoding.
    pub gv_postfilter: bool,
    pub adapting: AdaptKind,
}

impl SystemSpec {
    pub fn of(id: SystemId) -> Self {
        use AdaptKind as A;
        let (vocoder, gv_postfilter, adapting) = match id {
            SystemId::B1 => (Vocoder::Parametric, false, A::None),
            SystemId::B2 => (Vocoder::Parametric, true, A::None),
            SystemId::B3 => (Vocoder::WaveNet, false, A::Natural),
            SystemId::B4 => (Vocoder::WaveNet, true, A::Natural),
            SystemId::P1 => (Vocoder::WaveNet, false, A::Reconstructed),
            SystemId::P2 => (Vocoder::WaveNet, true, A::ReconstructedGv),
            SystemId::UB => (Vocoder::WaveNet, false, A::Natural),
        };
        Self {
            id,
            vocoder,
            gv_postfilter,
            adapting,
        }
    }

    pub fn all() -> Vec<SystemSpec> {
        SystemId::ALL.into_iter().map(Self::of).collect()
    }

    /// Whether the input is converted (everything except the upper bound).
    pub fn converts(&self) -> bool {
        self.id != SystemId::UB
    }
}

/// Adaptation pairs for one target speaker. `data` holds the speaker's
/// natural training tracks with their waveforms. Reconstructed tracks come
/// from the VAE with the speaker's own code, so they keep the natural
/// track's frame count and need no alignment. With `LatentChoice::Sample(s)`
/// utterance `i` draws its latent with seed `s + i`.
pub fn build_adaptation_set(
    vae: &VaeModel<f64>,
    target: &SpeakerProfile,
    data: &[(FeatureTrack, Waveform)],
    kind: AdaptKind,
    latent: LatentChoice,
) -> Result<Vec<TrainPair>> {
    data.iter()
        .enumerate()
        .map(|(i, (track, wave))| {
            let track = match kind {
                AdaptKind::None => return Err(Error::invalid("adaptation kind none builds no set")),
                AdaptKind::Natural => track.clone(),
                AdaptKind::Reconstructed | AdaptKind::ReconstructedGv => {
                    let z = match latent {
                        LatentChoice::Mean => LatentChoice::Mean,
                        LatentChoice::Sample(s) => LatentChoice::Sample(s.wrapping_add(i as u64)),
                    };
                    let rec = vae.forward(track, &target.code, ForwardMode::Reconstruct, z)?;
                    if kind == AdaptKind::ReconstructedGv {
                        gv_postfilter(&rec, target)?
                    } else {
                        rec
                    }
                }
            };
            Ok(TrainPair {
                speaker: target.id.clone(),
                track,
                wave: wave.clone(),
            })
        })
        .collect()
}

/// Models a system run may need. Vocoders are keyed by provenance and must
/// belong to the target speaker.
pub struct SystemModels<'a, T: Scalar> {
    pub vae: Option<&'a VaeModel<f64>>,
    pub vocoders: BTreeMap<Provenance, &'a WaveNetModel<T>>,
}

/// Output waveform plus every intermediate track, in chain order.
#[derive(Clone, Debug)]
pub struct SystemOutput {
    pub wave: Waveform,
    pub tracks: Vec<(&'static str, FeatureTrack)>,
}

impl SystemOutput {
    /// Track the vocoder was conditioned on.
    pub fn vocoded_track(&self) -> &FeatureTrack {
        &self.tracks.last().expect("a system run records at least one track").1
    }
}

/// Runs one system on one input utterance: analysis, conversion, energy
/// compensation, optional GV post-filter, f0 transform and vocoding. The
/// upper bound skips conversion and f0 transform and vocodes the natural
/// features of its input, which should be a target-speaker utterance.
pub fn run_system<T: Scalar>(
    spec: &SystemSpec,
    input: &Waveform,
    analyzer: &Analyzer,
    source: &SpeakerProfile,
    target: &SpeakerProfile,
    models: &SystemModels<'_, T>,
    seed: u64,
) -> Result<SystemOutput> {
    let vocoder = match spec.vocoder {
        Vocoder::Parametric => None,
        Vocoder::WaveNet => {
            let p = spec
                .adapting
                .provenance()
                .expect("WaveNet systems name an adaptation kind");
            let m = *models.vocoders.get(&p).ok_or_else(|| {
                Error::MissingModel(format!("system {} needs the {p} WaveNet of {}", spec.id, target.id))
            })?;
            if m.speaker.as_deref() != Some(target.id.as_str()) {
                return Err(Error::MissingModel(format!(
                    "system {} needs the {p} WaveNet of {}, got one adapted to {}",
                    spec.id,
                    target.id,
                    m.speaker.as_deref().unwrap_or("no speaker")
                )));
            }
            Some(m)
        }
    };
    let natural = analyzer.analyze(input)?.track;
    let mut tracks = vec![("natural", natural.clone())];
    let cond = if spec.converts() {
        let vae = models
            .vae
            .ok_or_else(|| Error::MissingModel(format!("system {} needs the VAE", spec.id)))?;
        let converted = vae.forward(&natural, &target.code, ForwardMode::Convert, LatentChoice::Mean)?;
        tracks.push(("converted", converted.clone()));
        let mut cur = compensate_energy(&converted, &natural)?;
        tracks.push(("compensated", cur.clone()));
        if spec.gv_postfilter {
            cur = gv_postfilter(&cur, target)?;
            tracks.push(("postfiltered", cur.clone()));
        }
        let out = transform_f0(&cur, source, target)?;
        tracks.push(("f0-transformed", out.clone()));
        out
    } else {
        natural
    };
    debug_assert!(cond.kind != FeatureKind::Natural || !spec.converts());
    let mut wave = match vocoder {
        None => Synthesizer::new(analyzer.config.clone())?.synthesize(&cond, seed)?,
        Some(m) => {
            let plan = upsample_conditioning(&cond, m.sample_rate)?;
            wavenet::sample(m, &plan, seed)?
        }
    };
    wave.fit_to(input.len());
    Ok(SystemOutput { wave, tracks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::features::tests::toy_track;
    use crate::pipeline::build_profile;
    use crate::vae::{SpeakerCode, VaeConfig};

    #[test]
    fn adaptation_latent_switch() {
        let vae = VaeModel::init(VaeConfig::new(2), vec!["a".into(), "b".into()], 3).unwrap();
        let track = toy_track(12, 35);
        let code = SpeakerCode::new(1, 2).unwrap();
        let profile = build_profile("b", code, &[&track], vec!["u0".into()]).unwrap();
        let data = vec![(track.clone(), Waveform::new(vec![0.0; 960], 16000))];
        let build = |latent| build_adaptation_set(&vae, &profile, &data, AdaptKind::Reconstructed, latent).unwrap();
        let mean = build(LatentChoice::Mean);
        assert_eq!(mean[0].speaker, "b");
        assert_eq!(mean[0].track.frames(), track.frames());
        assert_eq!(mean[0].track.mcc, build(LatentChoice::Mean)[0].track.mcc);
        let drawn = build(LatentChoice::Sample(9));
        assert_eq!(drawn[0].track.frames(), track.frames());
        assert_ne!(drawn[0].track.mcc, mean[0].track.mcc);
        assert_eq!(drawn[0].track.mcc, build(LatentChoice::Sample(9))[0].track.mcc);
    }

    #[test]
    fn table_rows() {
        let rows = SystemSpec::all();
        assert_eq!(rows.len(), 7);
        let b1 = SystemSpec::of(SystemId::B1);
        assert_eq!(
            (b1.vocoder, b1.gv_postfilter, b1.adapting),
            (Vocoder::Parametric, false, AdaptKind::None)
        );
        let p1 = SystemSpec::of(SystemId::P1);
        assert_eq!((p1.vocoder, p1.gv_postfilter), (Vocoder::WaveNet, false));
        assert_eq!(p1.adapting.provenance(), Some(Provenance::FinetunedReconstructed));
        let p2 = SystemSpec::of(SystemId::P2);
        assert!(p2.gv_postfilter);
        assert_eq!(p2.adapting, AdaptKind::ReconstructedGv);
        assert!(!SystemSpec::of(SystemId::UB).converts());
        let gv: Vec<_> = rows.iter().filter(|r| r.gv_postfilter).map(|r| r.id).collect();
        assert_eq!(gv, vec![SystemId::B2, SystemId::B4, SystemId::P2]);
        for id in SystemId::ALL {
            assert_eq!(SystemId::parse(id.as_str()).unwrap(), id);
        }
        assert!(SystemId::parse("B5").is_err());
    }
}
