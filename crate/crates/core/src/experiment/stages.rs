use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::config::{hex, ExperimentConfig};
use crate::analysis::{distance_experiment, gv_report, mean_mcd, Align, DistanceReport, GvReport, TestSet};
use crate::diffcore::derive_seed;
use crate::dsp::{AnalysisConfig, Analyzer, FeatureTrack, Waveform};
use crate::pipeline::{
    build_adaptation_set, build_profile, make_toy_corpus, run_system, AdaptKind, CorpusManifest, SpeakerProfile, Split,
    SystemId, SystemModels, SystemSpec, Utterance,
};
use crate::vae::{train_vae, ForwardMode, LatentChoice, SpeakerCode, VaeModel};
use crate::wavenet::{
    finetune, teacher_forced_nll, train_si, upsample_conditioning, Provenance, StopRule, TrainPair, WaveNetModel,
};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    GenCorpus,
    AnalyzeCorpus,
    TrainVae,
    TrainWaveNetSi,
    BuildAdaptSet,
    Finetune,
    Convert,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::GenCorpus,
        Stage::AnalyzeCorpus,
        Stage::TrainVae,
        Stage::TrainWaveNetSi,
        Stage::BuildAdaptSet,
        Stage::Finetune,
        Stage::Convert,
        Stage::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::GenCorpus => "gen-corpus",
            Stage::AnalyzeCorpus => "analyze-corpus",
            Stage::TrainVae => "train-vae",
            Stage::TrainWaveNetSi => "train-wavenet-si",
            Stage::BuildAdaptSet => "build-adapt-set",
            Stage::Finetune => "finetune",
            Stage::Convert => "convert",
            Stage::Evaluate => "evaluate",
        }
    }
}

/// Held-out teacher-forced NLL of one vocoder on one target's test pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct NllRow {
    pub model: String,
    pub target: String,
    /// Feature kind the vocoder was conditioned on.
    pub features: String,
    pub nll: f64,
}

/// Everything the evaluate stage reports.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub distances: DistanceReport,
    pub gv: GvReport,
    pub nll: Vec<NllRow>,
}

impl Evaluation {
    pub fn nll(&self, model: &str, target: &str, features: &str) -> Option<f64> {
        self.nll
            .iter()
            .find(|r| r.model == model && r.target == target && r.features == features)
            .map(|r| r.nll)
    }
}

/// Per-stage bookkeeping: produced files and a metrics stream.
struct StageLog {
    out: PathBuf,
    artifacts: Vec<PathBuf>,
    metrics: BufWriter<File>,
    metrics_path: PathBuf,
}

impl StageLog {
    fn new(out: &Path, stage: Stage) -> Result<Self> {
        let dir = out.join("metrics");
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let metrics_path = dir.join(format!("{}.jsonl", stage.name()));
        let f = File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
        Ok(Self {
            out: out.to_path_buf(),
            artifacts: Vec::new(),
            metrics: BufWriter::new(f),
            metrics_path,
        })
    }

    fn record(&mut self, path: &Path) {
        self.artifacts.push(path.to_path_buf());
    }

    fn metric(&mut self, v: Value) -> Result<()> {
        writeln!(self.metrics, "{v}").map_err(|e| Error::io(&self.metrics_path, e))
    }

    fn write(&mut self, path: &Path, contents: &str) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, contents).map_err(|e| Error::io(path, e))?;
        self.record(path);
        Ok(())
    }

    /// Flushes metrics and merges this stage's files into `manifest.json`,
    /// replacing the stage's previous entries.
    fn finish(mut self, stage: Stage, hash: &str) -> Result<()> {
        self.metrics.flush().map_err(|e| Error::io(&self.metrics_path, e))?;
        let metrics_path = self.metrics_path.clone();
        self.record(&metrics_path);
        let manifest_path = self.out.join("manifest.json");
        let mut entries: BTreeMap<String, Value> = BTreeMap::new();
        if manifest_path.exists() {
            let text = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
            let v: Value = serde_json::from_str(&text).map_err(|e| Error::Format(format!("manifest.json: {e}")))?;
            for a in v["artifacts"].as_array().into_iter().flatten() {
                if a["stage"] != stage.name() {
                    if let Some(p) = a["path"].as_str() {
                        entries.insert(p.to_string(), a.clone());
                    }
                }
            }
        }
        for p in &self.artifacts {
            let bytes = std::fs::read(p).map_err(|e| Error::io(p, e))?;
            let rel = p
                .strip_prefix(&self.out)
                .unwrap_or(p)
                .to_string_lossy()
                .replace('\\', "/");
            entries.insert(
                rel.clone(),
                json!({
                    "path": rel,
                    "stage": stage.name(),
                    "config_hash": hash,
                    "sha256": hex(&Sha256::digest(&bytes)),
                    "bytes": bytes.len(),
                }),
            );
        }
        let doc = json!({ "artifacts": entries.into_values().collect::<Vec<_>>() });
        let text = serde_json::to_string_pretty(&doc).expect("manifest serializes") + "\n";
        std::fs::write(&manifest_path, text).map_err(|e| Error::io(&manifest_path, e))
    }
}

const ADAPT_KINDS: [AdaptKind; 3] = [AdaptKind::Natural, AdaptKind::Reconstructed, AdaptKind::ReconstructedGv];

fn kind_dir(kind: AdaptKind) -> &'static str {
    match kind {
        AdaptKind::None => "none",
        AdaptKind::Natural => "natural",
        AdaptKind::Reconstructed => "reconstructed",
        AdaptKind::ReconstructedGv => "reconstructed-gv",
    }
}

fn take<T>(v: Vec<T>, n: usize) -> Vec<T> {
    if n == 0 {
        v
    } else {
        v.into_iter().take(n).collect()
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// One configured experiment rooted at its output directory.
pub struct Experiment {
    pub config: ExperimentConfig,
    hash: String,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Self {
        let hash = config.hash();
        Self { config, hash }
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn out(&self) -> &Path {
        &self.config.out_dir
    }

    fn corpus_dir(&self) -> PathBuf {
        self.out().join("corpus")
    }

    fn natural_path(&self, u: &Utterance) -> PathBuf {
        self.out()
            .join("features/natural")
            .join(&u.speaker)
            .join(format!("{}.vcft", u.name()))
    }

    fn adapt_path(&self, kind: AdaptKind, u: &Utterance) -> PathBuf {
        self.out()
            .join("adapt")
            .join(kind_dir(kind))
            .join(&u.speaker)
            .join(format!("{}.vcft", u.name()))
    }

    fn vae_path(&self) -> PathBuf {
        self.out().join("models/vae.vcrm")
    }

    fn si_path(&self) -> PathBuf {
        self.out().join("models/wavenet-si.vcrm")
    }

    fn vocoder_path(&self, speaker: &str, p: Provenance) -> PathBuf {
        self.out().join(format!("models/wavenet-{speaker}-{p}.vcrm"))
    }

    fn reports_dir(&self) -> PathBuf {
        self.out().join("reports")
    }

    pub fn analyzer(&self) -> Result<Analyzer> {
        let mut cfg = AnalysisConfig::for_rate(self.config.corpus.sample_rate);
        cfg.frame_shift_ms = self.config.frame_shift_ms;
        cfg.fft_size = self.config.fft_size;
        cfg.frame_length = cfg.frame_length.min(self.config.fft_size / 2);
        cfg.lifter = cfg.lifter.min(self.config.fft_size / 2);
        Analyzer::new(cfg)
    }

    /// The corpus manifest written by gen-corpus.
    pub fn manifest(&self) -> Result<CorpusManifest> {
        let p = self.corpus_dir().join("manifest.txt");
        if !p.exists() {
            return Err(Error::invalid(format!(
                "{} not found; run gen-corpus first",
                p.display()
            )));
        }
        CorpusManifest::load(&p)
    }

    pub fn wave(&self, u: &Utterance) -> Result<Waveform> {
        Waveform::read_wav(&self.corpus_dir().join(&u.path))
    }

    /// Stored natural features of one utterance.
    pub fn natural(&self, u: &Utterance) -> Result<FeatureTrack> {
        let p = self.natural_path(u);
        if !p.exists() {
            return Err(Error::invalid(format!(
                "{} not found; run analyze-corpus first",
                p.display()
            )));
        }
        FeatureTrack::load(&p)
    }

    pub fn vae(&self) -> Result<VaeModel<f64>> {
        let p = self.vae_path();
        if !p.exists() {
            return Err(Error::MissingModel(format!("VAE checkpoint {}", p.display())));
        }
        VaeModel::load(&p)
    }

    fn si(&self) -> Result<WaveNetModel<f64>> {
        let p = self.si_path();
        if !p.exists() {
            return Err(Error::MissingModel(format!(
                "speaker-independent WaveNet {}",
                p.display()
            )));
        }
        WaveNetModel::load(&p)
    }

    fn vocoder(&self, speaker: &str, prov: Provenance) -> Result<WaveNetModel<f64>> {
        let p = self.vocoder_path(speaker, prov);
        if !p.exists() {
            return Err(Error::MissingModel(format!(
                "{prov} WaveNet for {speaker} ({})",
                p.display()
            )));
        }
        WaveNetModel::load(&p)
    }

    /// Speaker profiles written by analyze-corpus.
    pub fn profiles(&self) -> Result<BTreeMap<String, SpeakerProfile>> {
        let p = self.out().join("profiles.json");
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let v: Value = serde_json::from_str(&text).map_err(|e| Error::Format(format!("profiles.json: {e}")))?;
        let bad = || Error::Format("profiles.json: malformed profile".into());
        let mut out = BTreeMap::new();
        for (id, p) in v.as_object().ok_or_else(bad)? {
            let nums = |key: &str| -> Result<Vec<f64>> {
                p[key]
                    .as_array()
                    .ok_or_else(bad)?
                    .iter()
                    .map(|x| x.as_f64().ok_or_else(bad))
                    .collect()
            };
            let code = SpeakerCode::new(
                p["code"].as_u64().ok_or_else(bad)? as usize,
                p["n_speakers"].as_u64().ok_or_else(bad)? as usize,
            )?;
            out.insert(
                id.clone(),
                SpeakerProfile {
                    id: id.clone(),
                    code,
                    lf0_mean: p["lf0_mean"].as_f64().ok_or_else(bad)?,
                    lf0_std: p["lf0_std"].as_f64().ok_or_else(bad)?,
                    gv: nums("gv")?,
                    utterances: p["utterances"]
                        .as_array()
                        .ok_or_else(bad)?
                        .iter()
                        .map(|s| s.as_str().map(String::from).ok_or_else(bad))
                        .collect::<Result<_>>()?,
                },
            );
        }
        Ok(out)
    }

    fn profile<'p>(profiles: &'p BTreeMap<String, SpeakerProfile>, id: &str) -> Result<&'p SpeakerProfile> {
        profiles
            .get(id)
            .ok_or_else(|| Error::invalid(format!("no profile for speaker {id}")))
    }

    /// Natural training pairs of one speaker.
    fn train_pairs(&self, m: &CorpusManifest, speaker: &str) -> Result<Vec<(Utterance, FeatureTrack, Waveform)>> {
        m.select(speaker, Split::Train)
            .into_iter()
            .map(|u| Ok((u.clone(), self.natural(u)?, self.wave(u)?)))
            .collect()
    }

    fn needed_kinds(&self) -> Vec<AdaptKind> {
        let mut kinds: BTreeSet<AdaptKind> = [AdaptKind::Natural, AdaptKind::Reconstructed].into();
        kinds.extend(self.config.systems.iter().map(|&s| SystemSpec::of(s).adapting));
        kinds.remove(&AdaptKind::None);
        kinds.into_iter().collect()
    }

    /// Runs one stage, logging its config hash and recording its artifacts.
    pub fn run_stage(&self, stage: Stage) -> Result<()> {
        self.run_stage_with(stage, None)
    }

    /// As [`Experiment::run_stage`]; `systems` narrows the convert stage.
    pub fn run_stage_with(&self, stage: Stage, systems: Option<&[SystemId]>) -> Result<()> {
        let t = Instant::now();
        log::info!("stage {} (config {})", stage.name(), &self.hash[..12]);
        std::fs::create_dir_all(self.out()).map_err(|e| Error::io(self.out(), e))?;
        let wrap = |e: Error| Error::Stage {
            stage: stage.name().to_string(),
            source: Box::new(e),
        };
        let mut log = StageLog::new(self.out(), stage).map_err(wrap)?;
        let cfg_path = self.out().join("config.txt");
        log.write(&cfg_path, &self.config.to_text()).map_err(wrap)?;
        let result = match stage {
            Stage::GenCorpus => self.gen_corpus(&mut log),
            Stage::AnalyzeCorpus => self.analyze_corpus(&mut log),
            Stage::TrainVae => self.train_vae(&mut log),
            Stage::TrainWaveNetSi => self.train_wavenet_si(&mut log),
            Stage::BuildAdaptSet => self.build_adapt_set(&mut log),
            Stage::Finetune => self.finetune(&mut log),
            Stage::Convert => self.convert(&mut log, systems.unwrap_or(&self.config.systems)),
            Stage::Evaluate => self.evaluate_into(&mut log).map(|_| ()),
        };
        result.map_err(wrap)?;
        log.finish(stage, &self.hash).map_err(wrap)?;
        log::info!("stage {} done in {:.1} s", stage.name(), t.elapsed().as_secs_f64());
        Ok(())
    }

    /// Every stage in order, then the evaluation.
    pub fn full_run(&self) -> Result<Evaluation> {
        for stage in &Stage::ALL[..Stage::ALL.len() - 1] {
            self.run_stage(*stage)?;
        }
        self.evaluate()
    }

    /// Runs the evaluate stage and returns its results.
    pub fn evaluate(&self) -> Result<Evaluation> {
        let wrap = |e: Error| Error::Stage {
            stage: Stage::Evaluate.name().to_string(),
            source: Box::new(e),
        };
        let t = Instant::now();
        log::info!("stage evaluate (config {})", &self.hash[..12]);
        let mut log = StageLog::new(self.out(), Stage::Evaluate).map_err(wrap)?;
        let ev = self.evaluate_into(&mut log).map_err(wrap)?;
        log.finish(Stage::Evaluate, &self.hash).map_err(wrap)?;
        log::info!("stage evaluate done in {:.1} s", t.elapsed().as_secs_f64());
        Ok(ev)
    }

    fn gen_corpus(&self, log: &mut StageLog) -> Result<()> {
        let dir = self.corpus_dir();
        let m = make_toy_corpus(&dir, &self.config.corpus)?;
        for u in &m.utterances {
            log.record(&dir.join(&u.path));
        }
        log.record(&dir.join("manifest.txt"));
        for s in &m.speakers {
            let (train, test) = m.split_sizes(s);
            log.metric(json!({"speaker": s, "train": train, "test": test}))?;
        }
        Ok(())
    }

    fn analyze_corpus(&self, log: &mut StageLog) -> Result<()> {
        let m = self.manifest()?;
        let analyzer = self.analyzer()?;
        let mut train: BTreeMap<&str, Vec<(String, FeatureTrack)>> = BTreeMap::new();
        for u in &m.utterances {
            let a = analyzer.analyze(&self.wave(u)?)?;
            let path = self.natural_path(u);
            a.track.save(&path)?;
            log.record(&path);
            // later stages read the stored (single-precision) values
            let stored = FeatureTrack::from_bytes(&a.track.to_bytes())?;
            log.metric(json!({
                "utterance": u.path.to_string_lossy(),
                "frames": stored.frames(),
                "voiced_fraction": stored.voiced_count() as f64 / stored.frames().max(1) as f64,
                "degenerate_frames": a.degenerate_frames,
            }))?;
            if u.split == Split::Train {
                train.entry(u.speaker.as_str()).or_default().push((u.name(), stored));
            }
        }
        let mut doc = serde_json::Map::new();
        for (k, s) in m.speakers.iter().enumerate() {
            let items = train.get(s.as_str()).map(Vec::as_slice).unwrap_or_default();
            let tracks: Vec<&FeatureTrack> = items.iter().map(|(_, t)| t).collect();
            let names = items.iter().map(|(n, _)| n.clone()).collect();
            let p = build_profile(s, SpeakerCode::new(k, m.speakers.len())?, &tracks, names)?;
            log.metric(json!({"speaker": s, "lf0_mean": p.lf0_mean, "lf0_std": p.lf0_std, "gv_mean": mean(&p.gv)}))?;
            doc.insert(
                s.clone(),
                json!({
                    "code": k,
                    "n_speakers": m.speakers.len(),
                    "lf0_mean": p.lf0_mean,
                    "lf0_std": p.lf0_std,
                    "gv": p.gv,
                    "utterances": p.utterances,
                }),
            );
        }
        let text = serde_json::to_string_pretty(&Value::Object(doc)).expect("profiles serialize") + "\n";
        log.write(&self.out().join("profiles.json"), &text)
    }

    fn train_vae(&self, log: &mut StageLog) -> Result<()> {
        let m = self.manifest()?;
        let mut tracks = Vec::new();
        for (k, s) in m.speakers.iter().enumerate() {
            let code = SpeakerCode::new(k, m.speakers.len())?;
            for u in m.select(s, Split::Train) {
                tracks.push((self.natural(u)?, code));
            }
        }
        let corpus: Vec<(&FeatureTrack, SpeakerCode)> = tracks.iter().map(|(t, c)| (t, *c)).collect();
        let (vae, hist) = train_vae(&corpus, &m.speakers, &self.config.vae)?;
        for (step, l) in &hist.eval {
            log.metric(json!({"step": step, "eval_total": l.total, "eval_recon": l.recon, "eval_latent": l.latent}))?;
        }
        if let (Some(first), Some(last)) = (hist.train.first(), hist.train.last()) {
            log::info!("VAE loss {:.3} -> {:.3}", first.total, last.total);
            log.metric(json!({"train_first": first.total, "train_last": last.total, "steps": hist.train.len()}))?;
        }
        let path = self.vae_path();
        vae.save(&path)?;
        log.record(&path);
        Ok(())
    }

    fn train_wavenet_si(&self, log: &mut StageLog) -> Result<()> {
        let m = self.manifest()?;
        let mut pairs = Vec::new();
        for s in &m.speakers {
            for (_, track, wave) in self.train_pairs(&m, s)? {
                pairs.push(TrainPair {
                    speaker: s.clone(),
                    track,
                    wave,
                });
            }
        }
        let (model, report) = train_si(
            &pairs,
            &self.config.wavenet,
            self.config.corpus.sample_rate,
            &self.config.si,
        )?;
        for (i, l) in report.losses.iter().enumerate() {
            log.metric(json!({"step": i + 1, "nll": l}))?;
        }
        log::info!("SI WaveNet final training NLL {:.4}", report.tail_mean(50));
        let path = self.si_path();
        model.save(&path)?;
        log.record(&path);
        Ok(())
    }

    fn build_adapt_set(&self, log: &mut StageLog) -> Result<()> {
        let m = self.manifest()?;
        let vae = self.vae()?;
        let profiles = self.profiles()?;
        for t in &self.config.targets {
            let profile = Self::profile(&profiles, t)?;
            let data = self.train_pairs(&m, t)?;
            let plain: Vec<(FeatureTrack, Waveform)> = data.iter().map(|(_, f, w)| (f.clone(), w.clone())).collect();
            let latent = if self.config.adapt_sample_latent {
                LatentChoice::Sample(derive_seed(self.config.seed, &format!("adapt-latent/{t}")))
            } else {
                LatentChoice::Mean
            };
            for kind in ADAPT_KINDS {
                let pairs = build_adaptation_set(&vae, profile, &plain, kind, latent)?;
                let mut mcd = Vec::new();
                for ((u, natural, _), pair) in data.iter().zip(&pairs) {
                    assert_eq!(
                        pair.track.frames(),
                        natural.frames(),
                        "adaptation pairs are never re-aligned"
                    );
                    mcd.push(mean_mcd(natural, &pair.track, Align::None)?);
                    let path = self.adapt_path(kind, u);
                    pair.track.save(&path)?;
                    log.record(&path);
                }
                log.metric(json!({"target": t, "kind": kind.as_str(), "pairs": pairs.len(), "mean_mcd_to_natural": mean(&mcd)}))?;
            }
        }
        Ok(())
    }

    fn adapt_pairs(&self, m: &CorpusManifest, speaker: &str, kind: AdaptKind) -> Result<Vec<TrainPair>> {
        m.select(speaker, Split::Train)
            .into_iter()
            .map(|u| {
                let p = self.adapt_path(kind, u);
                if !p.exists() {
                    return Err(Error::invalid(format!(
                        "{} not found; run build-adapt-set first",
                        p.display()
                    )));
                }
                Ok(TrainPair {
                    speaker: speaker.to_string(),
                    track: FeatureTrack::load(&p)?,
                    wave: self.wave(u)?,
                })
            })
            .collect()
    }

    fn mean_nll(model: &WaveNetModel<f64>, pairs: &[(&FeatureTrack, &Waveform)]) -> Result<f64> {
        let mut v = Vec::new();
        for (t, w) in pairs {
            let plan = upsample_conditioning(t, model.sample_rate)?;
            v.push(teacher_forced_nll(model, w, &plan)?);
        }
        Ok(mean(&v))
    }

    fn finetune(&self, log: &mut StageLog) -> Result<()> {
        let m = self.manifest()?;
        let si = self.si()?;
        let stop = match self.config.finetune_target_nll {
            None => StopRule::MaxSteps(self.config.finetune.steps),
            Some(target) => StopRule::TargetNll {
                target,
                window: 20,
                max_steps: self.config.finetune.steps,
            },
        };
        let mut csv = String::from("target,kind,steps,nll_before,nll_after\n");
        for t in &self.config.targets {
            for kind in self.needed_kinds() {
                let pairs = self.adapt_pairs(&m, t, kind)?;
                let probe: Vec<(&FeatureTrack, &Waveform)> = take(
                    pairs.iter().map(|p| (&p.track, &p.wave)).collect(),
                    self.config.nll_utts,
                );
                let before = Self::mean_nll(&si, &probe)?;
                let (model, report) = finetune(&si, &pairs, stop, &self.config.finetune)?;
                let after = Self::mean_nll(&model, &probe)?;
                log::info!("fine-tuned {t} on {}: NLL {before:.4} -> {after:.4}", kind.as_str());
                log.metric(json!({"target": t, "kind": kind.as_str(), "steps": report.steps(), "nll_before": before, "nll_after": after}))?;
                let _ = writeln!(csv, "{t},{},{},{before:.6},{after:.6}", kind.as_str(), report.steps());
                let path = self.vocoder_path(t, model.provenance);
                model.save(&path)?;
                log.record(&path);
            }
        }
        log.write(&self.reports_dir().join("finetune.csv"), &csv)
    }

    /// `(source, target)` pairs a system runs on; the upper bound resynthesizes
    /// each target from itself.
    /// `(source, target)` pairs a system runs on; the upper bound resynthesizes
    /// each target from its own speech.
    pub fn system_pairs(&self, id: SystemId) -> Vec<(String, String)> {
        if id == SystemId::UB {
            self.config.targets.iter().map(|t| (t.clone(), t.clone())).collect()
        } else {
            self.conversion_pairs()
        }
    }

    fn conversion_pairs(&self) -> Vec<(String, String)> {
        let mut v = Vec::new();
        for s in &self.config.sources {
            for t in &self.config.targets {
                v.push((s.clone(), t.clone()));
            }
        }
        v
    }

    fn convert_dir(&self, id: SystemId, src: &str, tgt: &str) -> PathBuf {
        self.out()
            .join("convert")
            .join(id.as_str())
            .join(format!("{src}-{tgt}"))
    }

    fn convert(&self, log: &mut StageLog, systems: &[SystemId]) -> Result<()> {
        let specs: Vec<SystemSpec> = systems.iter().map(|&s| SystemSpec::of(s)).collect();
        // load every needed vocoder up front so a missing one fails early
        let mut vocoders: BTreeMap<(String, Provenance), WaveNetModel<f32>> = BTreeMap::new();
        for spec in &specs {
            if let Some(p) = spec.adapting.provenance() {
                for t in &self.config.targets {
                    if !vocoders.contains_key(&(t.clone(), p)) {
                        vocoders.insert((t.clone(), p), self.vocoder(t, p)?.cast::<f32>());
                    }
                }
            }
        }
        let vae = if specs.iter().any(SystemSpec::converts) {
            Some(self.vae()?)
        } else {
            None
        };
        let m = self.manifest()?;
        let profiles = self.profiles()?;
        let analyzer = self.analyzer()?;
        for spec in &specs {
            for (src, tgt) in self.system_pairs(spec.id) {
                let models = SystemModels {
                    vae: vae.as_ref(),
                    vocoders: vocoders
                        .iter()
                        .filter(|((t, _), _)| *t == tgt)
                        .map(|((_, p), v)| (*p, v))
                        .collect(),
                };
                let (sp, tp) = (Self::profile(&profiles, &src)?, Self::profile(&profiles, &tgt)?);
                let dir = self.convert_dir(spec.id, &src, &tgt);
                let utts = take(m.select(&src, Split::Test), self.config.convert_utts);
                for u in utts {
                    let input = self.wave(u)?;
                    let label = format!("convert-{}-{src}-{tgt}-{}", spec.id, u.name());
                    let out = run_system(
                        spec,
                        &input,
                        &analyzer,
                        sp,
                        tp,
                        &models,
                        derive_seed(self.config.seed, &label),
                    )?;
                    if !out.wave.is_finite() || out.wave.len() != input.len() {
                        return Err(Error::invalid(format!(
                            "system {} produced a malformed waveform for {label}",
                            spec.id
                        )));
                    }
                    let wav = dir.join(format!("{}.wav", u.name()));
                    out.wave.write_wav(&wav)?;
                    log.record(&wav);
                    for (name, track) in &out.tracks {
                        let p = dir.join(format!("{}.{name}.vcft", u.name()));
                        track.save(&p)?;
                        log.record(&p);
                    }
                    let p = dir.join(format!("{}.vocoder-input.vcft", u.name()));
                    out.vocoded_track().save(&p)?;
                    log.record(&p);
                    log.metric(json!({
                        "system": spec.id.as_str(),
                        "pair": format!("{src}-{tgt}"),
                        "utterance": u.name(),
                        "samples": out.wave.len(),
                        "peak": out.wave.peak(),
                    }))?;
                    log::info!("{} {src}->{tgt} {} done", spec.id, u.name());
                }
            }
        }
        Ok(())
    }

    fn test_sets(&self, m: &CorpusManifest) -> Result<BTreeMap<String, TestSet>> {
        let mut tests = BTreeMap::new();
        for s in self.config.sources.iter().chain(&self.config.targets) {
            let set = m
                .select(s, Split::Test)
                .into_iter()
                .map(|u| Ok((u.name(), self.natural(u)?)))
                .collect::<Result<TestSet>>()?;
            tests.insert(s.clone(), set);
        }
        Ok(tests)
    }

    fn evaluate_into(&self, log: &mut StageLog) -> Result<Evaluation> {
        let m = self.manifest()?;
        let vae = self.vae()?;
        let analyzer = self.analyzer()?;
        let tests = self.test_sets(&m)?;
        let pairs = self.conversion_pairs();

        let distances = distance_experiment(&vae, &tests, &pairs)?;
        for d in 1..=3u8 {
            log.metric(json!({"dist_id": d, "median_mcd_db": distances.median(d)}))?;
        }

        // feature-kind GV over the targets' test utterances
        let mut natural = Vec::new();
        let mut reconstructed = Vec::new();
        for t in &self.config.targets {
            let code = vae.speaker_code(t)?;
            for (_, tr) in &tests[t] {
                natural.push(tr.clone());
                reconstructed.push(vae.forward(tr, &code, ForwardMode::Reconstruct, LatentChoice::Mean)?);
            }
        }
        let mut converted = Vec::new();
        for (s, t) in &pairs {
            let code = vae.speaker_code(t)?;
            for (_, tr) in &tests[s] {
                converted.push(vae.forward(tr, &code, ForwardMode::Convert, LatentChoice::Mean)?);
            }
        }
        let mut sets: Vec<(String, Vec<FeatureTrack>)> = vec![
            ("natural".into(), natural),
            ("reconstructed".into(), reconstructed),
            ("converted".into(), converted),
        ];
        // per-system vocoder inputs and re-analysed outputs, where present
        for id in SystemId::ALL {
            let mut inputs = Vec::new();
            let mut outputs = Vec::new();
            for (src, tgt) in self.system_pairs(id) {
                let dir = self.convert_dir(id, &src, &tgt);
                for u in m.select(&src, Split::Test) {
                    let wav = dir.join(format!("{}.wav", u.name()));
                    if wav.exists() {
                        inputs.push(FeatureTrack::load(
                            &dir.join(format!("{}.vocoder-input.vcft", u.name())),
                        )?);
                        outputs.push(analyzer.analyze(&Waveform::read_wav(&wav)?)?.track);
                    }
                }
            }
            if !inputs.is_empty() {
                sets.push((format!("{id}:features"), inputs));
                sets.push((format!("{id}:output"), outputs));
            }
        }
        let refs: Vec<(String, Vec<&FeatureTrack>)> =
            sets.iter().map(|(k, v)| (k.clone(), v.iter().collect())).collect();
        let gv = gv_report(&refs)?;
        for (k, _) in &sets {
            log.metric(json!({"gv_key": k, "mean_gv": gv.mean(k)}))?;
        }

        // held-out NLL of each vocoder on the targets' test waveforms
        let mut nll = Vec::new();
        for t in &self.config.targets {
            let code = vae.speaker_code(t)?;
            let utts = take(m.select(t, Split::Test), self.config.nll_utts);
            let mut nat = Vec::new();
            let mut rec = Vec::new();
            let mut waves = Vec::new();
            for u in utts {
                let tr = self.natural(u)?;
                rec.push(vae.forward(&tr, &code, ForwardMode::Reconstruct, LatentChoice::Mean)?);
                nat.push(tr);
                waves.push(self.wave(u)?);
            }
            let mut models: Vec<(String, WaveNetModel<f64>)> = vec![("si".into(), self.si()?)];
            for kind in ADAPT_KINDS {
                let p = kind.provenance().expect("adaptation kinds have provenance");
                if self.vocoder_path(t, p).exists() {
                    models.push((p.to_string(), self.vocoder(t, p)?));
                }
            }
            for (name, model) in &models {
                for (features, tracks) in [("natural", &nat), ("reconstructed", &rec)] {
                    let probe: Vec<(&FeatureTrack, &Waveform)> = tracks.iter().zip(&waves).collect();
                    let v = Self::mean_nll(model, &probe)?;
                    log.metric(json!({"model": name, "target": t, "features": features, "nll": v}))?;
                    nll.push(NllRow {
                        model: name.clone(),
                        target: t.clone(),
                        features: features.into(),
                        nll: v,
                    });
                }
            }
        }

        let reports = self.reports_dir();
        log.write(&reports.join("distances.csv"), &distances.to_csv())?;
        log.write(&reports.join("gv.csv"), &gv.to_csv())?;
        let mut csv = String::from("model,target,features,nll\n");
        for r in &nll {
            let _ = writeln!(csv, "{},{},{},{:.6}", r.model, r.target, r.features, r.nll);
        }
        log.write(&reports.join("nll.csv"), &csv)?;
        let ev = Evaluation { distances, gv, nll };
        log.write(
            &reports.join("summary.json"),
            &(serde_json::to_string_pretty(&self.summary(&ev)).expect("summary serializes") + "\n"),
        )?;
        Ok(ev)
    }

    fn summary(&self, ev: &Evaluation) -> Value {
        let r6 = |v: f64| (v * 1e6).round() / 1e6;
        let (d1, d2, d3) = (ev.distances.median(1), ev.distances.median(2), ev.distances.median(3));
        let gv = |k: &str| ev.gv.mean(k).unwrap_or(f64::NAN);
        let mut mismatch = serde_json::Map::new();
        for t in &self.config.targets {
            let fr = ev.nll(&Provenance::FinetunedReconstructed.to_string(), t, "reconstructed");
            let fnat = ev.nll(&Provenance::FinetunedNatural.to_string(), t, "reconstructed");
            if let (Some(a), Some(b)) = (fr, fnat) {
                mismatch.insert(
                    t.clone(),
                    json!({"finetuned_reconstructed": r6(a), "finetuned_natural": r6(b), "reduced": a < b}),
                );
            }
        }
        json!({
            "config_hash": self.hash,
            "median_mcd_db": {"dist1": r6(d1), "dist2": r6(d2), "dist3": r6(d3)},
            "dist2_positive": d2 > 0.0,
            "dist3_below_dist1": d3 < d1,
            "mean_gv": {"natural": r6(gv("natural")), "reconstructed": r6(gv("reconstructed")), "converted": r6(gv("converted"))},
            "over_smoothing": gv("natural") > gv("reconstructed") && gv("natural") > gv("converted"),
            "heldout_nll_on_reconstructed": mismatch,
        })
    }
}
