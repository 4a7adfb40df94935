//! Teacher-forced training on random waveform crops.
//!
//! A batch is several crops laid end to end on one time axis. Each crop
//! carries `r − 1` leading warm-up columns (r = receptive field) whose
//! outputs are discarded, so every kept output sees exactly the history it
//! would see in a full-utterance pass and nothing from the neighbouring
//! crop.

use rand::Rng as _;

use super::conditioning::{upsample_conditioning, COND_DIM};
use super::model::WaveNetModel;
use super::{Provenance, WaveNetConfig};
use crate::diffcore::{self, Adam, AdamConfig, Tape, Tensor};
use crate::dsp::{FeatureKind, FeatureTrack, MuLaw, Waveform};
use crate::{Error, Result};

/// One (features, waveform) training pair.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainPair {
    pub speaker: String,
    pub track: FeatureTrack,
    pub wave: Waveform,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WaveNetTrainConfig {
    pub steps: usize,
    pub batch_crops: usize,
    /// Scored samples per crop (warm-up excluded).
    pub crop_samples: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub log_every: usize,
}

impl Default for WaveNetTrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_crops: 4,
            crop_samples: 400,
            adam: AdamConfig::default(),
            seed: 1,
            log_every: 100,
        }
    }
}

/// When fine-tuning stops.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StopRule {
    MaxSteps(usize),
    /// Stop once the mean training loss over the last `window` steps is at
    /// or below `target`, or after `max_steps`.
    TargetNll {
        target: f64,
        window: usize,
        max_steps: usize,
    },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    /// Training loss (nats per scored sample) of every step.
    pub losses: Vec<f64>,
}

impl TrainReport {
    pub fn steps(&self) -> usize {
        self.losses.len()
    }

    /// Mean of the last `n` losses.
    pub fn tail_mean(&self, n: usize) -> f64 {
        let k = n.min(self.losses.len()).max(1);
        self.losses[self.losses.len().saturating_sub(k)..].iter().sum::<f64>() / k as f64
    }
}

struct Prepared {
    inputs: Vec<usize>,
    targets: Vec<usize>,
    frames: Vec<Vec<f64>>,
    hop: usize,
}

fn prepare(pairs: &[TrainPair], sample_rate: u32) -> Result<Vec<Prepared>> {
    let mu = MuLaw::default();
    pairs
        .iter()
        .map(|p| {
            if p.wave.sample_rate != sample_rate {
                return Err(Error::invalid(format!(
                    "waveform at {} Hz, expected {sample_rate} Hz",
                    p.wave.sample_rate
                )));
            }
            let plan = upsample_conditioning(&p.track, sample_rate)?;
            if plan.len() != p.wave.len() {
                return Err(Error::invalid(format!(
                    "pair of speaker {}: {} frames × {} ≠ {} samples",
                    p.speaker,
                    p.track.frames(),
                    plan.hop(),
                    p.wave.len()
                )));
            }
            let codes = mu.encode_slice(&p.wave.samples).codes;
            Ok(Prepared {
                inputs: WaveNetModel::<f64>::input_codes(&codes),
                targets: codes.iter().map(|c| c.index()).collect(),
                frames: plan.frames().to_vec(),
                hop: plan.hop(),
            })
        })
        .collect()
}

/// Per-dimension mean and floored standard deviation over all frames.
fn cond_stats(data: &[Prepared]) -> (Vec<f64>, Vec<f64>) {
    let n: usize = data.iter().map(|d| d.frames.len()).sum();
    let mut mean = vec![0.0; COND_DIM];
    for v in data.iter().flat_map(|d| &d.frames) {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x / n as f64;
        }
    }
    let mut var = vec![0.0; COND_DIM];
    for v in data.iter().flat_map(|d| &d.frames) {
        for ((s, x), m) in var.iter_mut().zip(v).zip(&mean) {
            *s += (x - m) * (x - m) / n as f64;
        }
    }
    (mean, var.into_iter().map(|v| v.sqrt().max(1e-3)).collect())
}

struct Batch {
    inputs: Vec<usize>,
    cond: Tensor<f64>,
    frame_of: Vec<usize>,
    keep: Vec<usize>,
    targets: Vec<usize>,
}

fn make_batch(
    model: &WaveNetModel<f64>,
    data: &[&Prepared],
    tc: &WaveNetTrainConfig,
    rng: &mut diffcore::Rng,
) -> Batch {
    let warm = model.receptive_field() - 1;
    let mut inputs = Vec::new();
    let mut frame_of = Vec::new();
    let mut keep = Vec::new();
    let mut targets = Vec::new();
    let mut frames: Vec<&[f64]> = Vec::new();
    for _ in 0..tc.batch_crops {
        let d = data[rng.random_range(0..data.len())];
        let n = d.inputs.len();
        let len = tc.crop_samples.min(n - warm);
        let start = rng.random_range(warm..=n - len);
        let lo = start - warm;
        let base = inputs.len();
        let f_lo = lo / d.hop;
        let f_hi = (start + len - 1) / d.hop;
        let f_base = frames.len();
        frames.extend(d.frames[f_lo..=f_hi].iter().map(Vec::as_slice));
        for u in lo..start + len {
            inputs.push(d.inputs[u]);
            frame_of.push(f_base + u / d.hop - f_lo);
        }
        keep.extend(base + warm..base + warm + len);
        targets.extend_from_slice(&d.targets[start..start + len]);
    }
    let nf = frames.len();
    let mut cond = vec![0.0; COND_DIM * nf];
    for (f, v) in frames.iter().enumerate() {
        for k in 0..COND_DIM {
            cond[k * nf + f] = (v[k] - model.cond_mean[k]) / model.cond_std[k];
        }
    }
    Batch {
        inputs,
        cond: Tensor::matrix(COND_DIM, nf, cond),
        frame_of,
        keep,
        targets,
    }
}

fn run(
    model: &mut WaveNetModel<f64>,
    data: &[Prepared],
    stop: StopRule,
    tc: &WaveNetTrainConfig,
    label: &str,
) -> Result<TrainReport> {
    let warm = model.receptive_field() - 1;
    let usable: Vec<&Prepared> = data.iter().filter(|d| d.inputs.len() > warm).collect();
    if usable.is_empty() {
        return Err(Error::invalid(format!(
            "no training utterance is longer than the receptive field ({} samples)",
            warm + 1
        )));
    }
    if tc.batch_crops == 0 || tc.crop_samples == 0 {
        return Err(Error::invalid("batch_crops and crop_samples must be positive"));
    }
    let max_steps = match stop {
        StopRule::MaxSteps(n) => n,
        StopRule::TargetNll { max_steps, .. } => max_steps,
    };
    let mut rng = diffcore::rng(diffcore::derive_seed(tc.seed, label));
    let mut adam = Adam::new(&model.params, tc.adam);
    let mut report = TrainReport::default();
    for step in 0..max_steps {
        let batch = make_batch(model, &usable, tc, &mut rng);
        let mut tape = Tape::new();
        let vars = model.params.bind(&mut tape);
        let diverged = |reason: String| Error::Diverged { step, reason };
        let logits = model
            .forward_on_tape(
                &mut tape,
                &vars,
                &batch.inputs,
                batch.cond,
                &batch.frame_of,
                &batch.keep,
            )
            .map_err(|e| diverged(e.to_string()))?;
        let loss = tape.softmax_cross_entropy(logits, &batch.targets);
        let grads = tape.backward(loss).map_err(|e| diverged(e.to_string()))?;
        let value = tape.value(loss).item();
        drop(tape);
        adam.step(&mut model.params, &grads.take_all(&vars))
            .map_err(|e| diverged(e.to_string()))?;
        report.losses.push(value);
        if tc.log_every > 0 && (step + 1) % tc.log_every == 0 {
            log::info!("{label} step {}: nll {:.4}", step + 1, report.tail_mean(tc.log_every));
        }
        if let StopRule::TargetNll { target, window, .. } = stop {
            if report.steps() >= window && report.tail_mean(window) <= target {
                break;
            }
        }
    }
    Ok(report)
}

/// Trains a speaker-independent vocoder on pairs pooled over all speakers.
pub fn train_si(
    pairs: &[TrainPair],
    config: &WaveNetConfig,
    sample_rate: u32,
    tc: &WaveNetTrainConfig,
) -> Result<(WaveNetModel<f64>, TrainReport)> {
    let mut speakers: Vec<&str> = pairs.iter().map(|p| p.speaker.as_str()).collect();
    speakers.sort_unstable();
    speakers.dedup();
    if speakers.len() < 2 {
        return Err(Error::invalid(format!(
            "speaker-independent training needs at least 2 speakers, got {}",
            speakers.len()
        )));
    }
    if let Some(p) = pairs.iter().find(|p| p.track.kind != FeatureKind::Natural) {
        return Err(Error::invalid(format!(
            "speaker-independent training uses natural features, got {}",
            p.track.kind
        )));
    }
    let data = prepare(pairs, sample_rate)?;
    let mut model = WaveNetModel::init(
        config.clone(),
        sample_rate,
        diffcore::derive_seed(tc.seed, "wavenet-init"),
    )?;
    let (mean, std) = cond_stats(&data);
    model.cond_mean = mean;
    model.cond_std = std;
    let report = run(&mut model, &data, StopRule::MaxSteps(tc.steps), tc, "si")?;
    Ok((model, report))
}

/// Provenance implied by the features of a fine-tuning set.
pub fn provenance_for(kind: FeatureKind, postfiltered: bool) -> Result<Provenance> {
    match (kind, postfiltered) {
        (FeatureKind::Natural, false) => Ok(Provenance::FinetunedNatural),
        (FeatureKind::Reconstructed, false) => Ok(Provenance::FinetunedReconstructed),
        (FeatureKind::Reconstructed, true) => Ok(Provenance::FinetunedReconstructedGv),
        (k, p) => Err(Error::invalid(format!(
            "cannot adapt on {k} features{}",
            if p { " (post-filtered)" } else { "" }
        ))),
    }
}

/// Whole-network fine-tuning of a speaker-independent model on one target
/// speaker's pairs, with a fresh optimizer state.
pub fn finetune(
    model: &WaveNetModel<f64>,
    pairs: &[TrainPair],
    stop: StopRule,
    tc: &WaveNetTrainConfig,
) -> Result<(WaveNetModel<f64>, TrainReport)> {
    if model.provenance != Provenance::SpeakerIndependent {
        return Err(Error::invalid(format!(
            "fine-tuning starts from a speaker-independent model, got {}",
            model.provenance
        )));
    }
    let first = pairs.first().ok_or_else(|| Error::invalid("empty adaptation set"))?;
    if let Some(p) = pairs.iter().find(|p| p.speaker != first.speaker) {
        return Err(Error::invalid(format!(
            "adaptation pairs mix speakers {} and {}",
            first.speaker, p.speaker
        )));
    }
    let kind = (first.track.kind, first.track.postfiltered);
    if let Some(p) = pairs.iter().find(|p| (p.track.kind, p.track.postfiltered) != kind) {
        return Err(Error::invalid(format!(
            "adaptation pairs mix feature kinds {} and {}",
            first.track.kind, p.track.kind
        )));
    }
    let provenance = provenance_for(kind.0, kind.1)?;
    let data = prepare(pairs, model.sample_rate)?;
    let mut tuned = model.clone();
    let report = run(
        &mut tuned,
        &data,
        stop,
        tc,
        &format!("finetune-{provenance}-{}", first.speaker),
    )?;
    tuned.provenance = provenance;
    tuned.speaker = Some(first.speaker.clone());
    Ok((tuned, report))
}
