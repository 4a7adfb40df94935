//! Flat `key = value` experiment configuration.
//!
//! Resolution order: built-in defaults, then the config file, then
//! `VCLAB_*` environment variables (key upper-cased, dots as underscores,
//! e.g. `VCLAB_VAE_STEPS`), then explicit overrides from the command line.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::diffcore::AdamConfig;
use crate::pipeline::{speaker_name, SystemId, ToyCorpusConfig};
use crate::vae::VaeTrainConfig;
use crate::wavenet::{WaveNetConfig, WaveNetTrainConfig};
use crate::{Error, Result};

pub const ENV_PREFIX: &str = "VCLAB_";

/// Every accepted key with its default and a one-line description.
/// `seed` has no default and must be given.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("seed", "", "master seed (required)"),
    ("out_dir", "vclab-out", "output directory"),
    ("corpus.speakers", "4", "toy speakers (2..=6)"),
    ("corpus.train_utts", "20", "training utterances per speaker"),
    ("corpus.test_utts", "5", "test utterances per speaker"),
    ("corpus.utt_seconds", "1.0", "approximate utterance length"),
    ("corpus.sample_rate", "16000", "sample rate in Hz"),
    ("sources", "spk1,spk2", "conversion source speakers"),
    ("targets", "spk3,spk4", "conversion target speakers"),
    ("analysis.frame_shift_ms", "5", "frame shift"),
    ("analysis.fft_size", "512", "FFT size"),
    ("vae.hidden", "128", "hidden width"),
    ("vae.latent", "16", "latent dims"),
    ("vae.steps", "2000", "training steps"),
    ("vae.batch_size", "64", "frames per step"),
    ("vae.learning_rate", "0.001", "Adam step size"),
    ("vae.eval_every", "20", "steps between fixed-batch evaluations"),
    ("wavenet.stacks", "2", "dilation stacks"),
    ("wavenet.dilations", "1,2,4,8,16,32,64", "dilations of one stack"),
    ("wavenet.residual_channels", "32", "residual channels"),
    ("wavenet.skip_channels", "64", "skip channels"),
    ("wavenet.si_steps", "1000", "speaker-independent training steps"),
    ("wavenet.batch_crops", "4", "crops per step"),
    ("wavenet.crop_samples", "400", "scored samples per crop"),
    ("wavenet.learning_rate", "0.001", "Adam step size"),
    ("finetune.steps", "300", "fine-tuning step budget"),
    (
        "finetune.target_nll",
        "none",
        "stop early at this mean training NLL (none = fixed budget)",
    ),
    ("finetune.learning_rate", "0.0005", "Adam step size"),
    (
        "adapt.latent",
        "mean",
        "latent used to reconstruct adaptation features (mean|sample)",
    ),
    ("systems", "B1,B2,B3,B4,P1,P2,UB", "systems to run"),
    (
        "convert.utterances",
        "0",
        "test utterances converted per pair (0 = all)",
    ),
    ("eval.nll_utterances", "5", "utterances per NLL evaluation (0 = all)"),
    ("log_every", "100", "training steps between progress lines"),
];

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub corpus: ToyCorpusConfig,
    pub sources: Vec<String>,
    pub targets: Vec<String>,
    pub frame_shift_ms: f64,
    pub fft_size: usize,
    pub vae: VaeTrainConfig,
    pub wavenet: WaveNetConfig,
    pub si: WaveNetTrainConfig,
    pub finetune: WaveNetTrainConfig,
    pub finetune_target_nll: Option<f64>,
    /// Draw the adaptation latent from the posterior instead of using its mean.
    pub adapt_sample_latent: bool,
    pub systems: Vec<SystemId>,
    pub convert_utts: usize,
    pub nll_utts: usize,
    pub log_every: usize,
    /// Resolved key/value text, one `key = value` per line, sorted.
    resolved: BTreeMap<String, String>,
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let mut errs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        match line.split_once('=') {
            Some((k, v)) if !k.trim().is_empty() => {
                out.insert(k.trim().to_string(), v.trim().to_string());
            }
            _ => errs.push(format!("line {}: expected `key = value`, got {raw:?}", i + 1)),
        }
    }
    if errs.is_empty() {
        Ok(out)
    } else {
        Err(Error::Config(errs))
    }
}

fn env_name(key: &str) -> String {
    format!("{ENV_PREFIX}{}", key.to_uppercase().replace('.', "_"))
}

/// Builder collecting values from every layer.
#[derive(Clone, Debug, Default)]
pub struct ConfigSources {
    values: BTreeMap<String, String>,
}

impl ConfigSources {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn file(mut self, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.values.extend(parse_pairs(&text)?);
        Ok(self)
    }

    pub fn text(mut self, text: &str) -> Result<Self> {
        self.values.extend(parse_pairs(text)?);
        Ok(self)
    }

    /// Applies `VCLAB_*` variables from the given environment.
    pub fn env<I: IntoIterator<Item = (String, String)>>(mut self, vars: I) -> Self {
        let vars: BTreeMap<String, String> = vars.into_iter().collect();
        for (key, _, _) in KEYS {
            if let Some(v) = vars.get(&env_name(key)) {
                self.values.insert(key.to_string(), v.clone());
            }
        }
        self
    }

    pub fn set(mut self, key: &str, value: impl Into<String>) -> Self {
        self.values.insert(key.to_string(), value.into());
        self
    }

    pub fn build(self) -> Result<ExperimentConfig> {
        ExperimentConfig::from_pairs(self.values)
    }
}

struct Reader<'a> {
    values: &'a BTreeMap<String, String>,
    errs: Vec<String>,
}

impl Reader<'_> {
    fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| {
            KEYS.iter()
                .find(|(k, _, _)| *k == key)
                .map(|(_, d, _)| *d)
                .expect("reader keys are listed in KEYS")
        })
    }

    fn get<T: std::str::FromStr>(&mut self, key: &str, fallback: T) -> T {
        let raw = self.raw(key).to_string();
        match raw.parse() {
            Ok(v) => v,
            Err(_) => {
                self.errs.push(format!("{key}: cannot parse {raw:?}"));
                fallback
            }
        }
    }

    fn list(&self, key: &str) -> Vec<String> {
        self.raw(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(String::from)
            .collect()
    }

    fn positive(&mut self, key: &str) -> usize {
        let v: usize = self.get(key, 1);
        if v == 0 {
            self.errs.push(format!("{key} must be positive"));
        }
        v
    }

    fn rate(&mut self, key: &str) -> f64 {
        let v: f64 = self.get(key, 1e-3);
        if !(v > 0.0 && v.is_finite()) {
            self.errs.push(format!("{key} must be a positive number"));
        }
        v
    }
}

impl ExperimentConfig {
    pub fn from_pairs(values: BTreeMap<String, String>) -> Result<Self> {
        let mut r = Reader {
            values: &values,
            errs: Vec::new(),
        };
        for k in values.keys() {
            if !KEYS.iter().any(|(name, _, _)| name == k) {
                r.errs.push(format!("unknown key {k:?}"));
            }
        }
        let seed = if values.contains_key("seed") {
            r.get("seed", 0u64)
        } else {
            r.errs.push("seed is required".into());
            0
        };

        let corpus = ToyCorpusConfig {
            seed,
            n_speakers: r.get("corpus.speakers", 4),
            train_utts: r.get("corpus.train_utts", 1),
            test_utts: r.get("corpus.test_utts", 1),
            utt_seconds: r.get("corpus.utt_seconds", 1.0),
            sample_rate: r.get("corpus.sample_rate", 16_000),
            hop: 1,
        };
        let frame_shift_ms: f64 = r.get("analysis.frame_shift_ms", 5.0);
        let fft_size: usize = r.get("analysis.fft_size", 512);
        let vae = VaeTrainConfig {
            hidden: r.positive("vae.hidden"),
            latent: r.positive("vae.latent"),
            steps: r.get("vae.steps", 0),
            batch_size: r.positive("vae.batch_size"),
            adam: AdamConfig {
                lr: r.rate("vae.learning_rate"),
                ..AdamConfig::default()
            },
            seed,
            eval_every: r.positive("vae.eval_every"),
            ..VaeTrainConfig::default()
        };
        let mut dilations = Vec::new();
        for d in r.list("wavenet.dilations") {
            match d.parse::<usize>() {
                Ok(v) => dilations.push(v),
                Err(_) => r.errs.push(format!("wavenet.dilations: bad entry {d:?}")),
            }
        }
        let wavenet = WaveNetConfig {
            n_stacks: r.positive("wavenet.stacks"),
            dilations,
            residual_channels: r.positive("wavenet.residual_channels"),
            skip_channels: r.positive("wavenet.skip_channels"),
            ..WaveNetConfig::default()
        };
        if let Err(Error::Config(e)) = wavenet.validate() {
            r.errs.extend(e);
        }
        let log_every: usize = r.get("log_every", 100);
        let si = WaveNetTrainConfig {
            steps: r.get("wavenet.si_steps", 0),
            batch_crops: r.positive("wavenet.batch_crops"),
            crop_samples: r.positive("wavenet.crop_samples"),
            adam: AdamConfig {
                lr: r.rate("wavenet.learning_rate"),
                ..AdamConfig::default()
            },
            seed,
            log_every,
        };
        let finetune = WaveNetTrainConfig {
            steps: r.get("finetune.steps", 0),
            adam: AdamConfig {
                lr: r.rate("finetune.learning_rate"),
                ..AdamConfig::default()
            },
            ..si.clone()
        };
        let finetune_target_nll = match r.raw("finetune.target_nll") {
            "none" | "" => None,
            s => match s.parse::<f64>() {
                Ok(v) if v > 0.0 => Some(v),
                _ => {
                    r.errs.push(format!(
                        "finetune.target_nll: expected a positive number or none, got {s:?}"
                    ));
                    None
                }
            },
        };
        let adapt_sample_latent = match r.raw("adapt.latent") {
            "mean" => false,
            "sample" => true,
            s => {
                r.errs.push(format!("adapt.latent: expected mean or sample, got {s:?}"));
                false
            }
        };
        let mut systems = Vec::new();
        for s in r.list("systems") {
            match SystemId::parse(&s) {
                Ok(id) if !systems.contains(&id) => systems.push(id),
                Ok(_) => {}
                Err(e) => r.errs.push(format!("systems: {e}")),
            }
        }
        let sources = r.list("sources");
        let targets = r.list("targets");
        let out_dir = PathBuf::from(r.raw("out_dir"));
        let convert_utts = r.get("convert.utterances", 0);
        let nll_utts = r.get("eval.nll_utterances", 0);
        let mut errs = r.errs;

        if let Err(Error::Config(e)) = corpus.validate() {
            errs.extend(e);
        }
        let known: Vec<String> = (0..corpus.n_speakers).map(speaker_name).collect();
        for s in sources.iter().chain(&targets) {
            if !known.contains(s) {
                errs.push(format!("speaker {s} is not one of {}", known.join(",")));
            }
        }
        if sources.is_empty() || targets.is_empty() {
            errs.push("sources and targets must be non-empty".into());
        }
        if let Some(s) = sources.iter().find(|s| targets.contains(s)) {
            errs.push(format!("speaker {s} is both source and target"));
        }
        if corpus.test_utts == 0 {
            errs.push("corpus.test_utts must be positive".into());
        }
        if systems.is_empty() {
            errs.push("systems must name at least one system".into());
        }
        let hop = match crate::dsp::hop_samples(frame_shift_ms, corpus.sample_rate) {
            Ok(h) => h,
            Err(e) => {
                errs.push(e.to_string());
                1
            }
        };
        if !fft_size.is_power_of_two() || fft_size < 64 {
            errs.push(format!("analysis.fft_size {fft_size} must be a power of two ≥ 64"));
        }
        if out_dir.as_os_str().is_empty() {
            errs.push("out_dir is empty".into());
        } else if let Some(parent) = out_dir.parent().filter(|p| !p.as_os_str().is_empty()) {
            if !parent.is_dir() {
                errs.push(format!("out_dir parent {} does not exist", parent.display()));
            }
        }
        if !errs.is_empty() {
            return Err(Error::Config(errs));
        }

        let mut resolved = BTreeMap::new();
        for (key, default, _) in KEYS {
            let v = values.get(*key).map(String::as_str).unwrap_or(default);
            resolved.insert(key.to_string(), v.to_string());
        }
        Ok(Self {
            seed,
            out_dir,
            corpus: ToyCorpusConfig { hop, ..corpus },
            sources,
            targets,
            frame_shift_ms,
            fft_size,
            vae,
            wavenet,
            si,
            finetune,
            finetune_target_nll,
            adapt_sample_latent,
            systems,
            convert_utts,
            nll_utts,
            log_every,
            resolved,
        })
    }

    /// Resolved configuration as `key = value` lines in key order.
    pub fn to_text(&self) -> String {
        self.resolved.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// SHA-256 of the resolved configuration, excluding `out_dir` so that
    /// the same experiment hashes equally wherever it is written.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.resolved.iter().filter(|(k, _)| k.as_str() != "out_dir") {
            h.update(format!("{k}={v}\n").as_bytes());
        }
        hex(&h.finalize())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_with_seed() {
        let c = ConfigSources::new().set("seed", "7").build().unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.corpus.hop, 80);
        assert_eq!(c.systems.len(), 7);
        assert_eq!(c.wavenet, WaveNetConfig::default());
        assert_eq!(c.finetune_target_nll, None);
        assert!(!c.adapt_sample_latent);
        assert!(c.to_text().contains("vae.steps = 2000\n"));
    }

    #[test]
    fn seed_is_mandatory_and_errors_are_itemized() {
        let e = ConfigSources::new()
            .text("vae.steps = many\nbogus = 1\nsources = spk9\nadapt.latent = mode\n")
            .unwrap()
            .build()
            .unwrap_err();
        let Error::Config(items) = e else { panic!("{e}") };
        assert!(items.iter().any(|m| m.contains("seed is required")));
        assert!(items.iter().any(|m| m.contains("vae.steps")));
        assert!(items.iter().any(|m| m.contains("bogus")));
        assert!(items.iter().any(|m| m.contains("spk9")));
        assert!(items.iter().any(|m| m.contains("adapt.latent")));
    }

    #[test]
    fn layering_and_env() {
        let env = vec![
            ("VCLAB_VAE_STEPS".to_string(), "50".to_string()),
            ("UNRELATED".to_string(), "x".to_string()),
        ];
        let c = ConfigSources::new()
            .text("seed = 1\nvae.steps = 10 # comment\n")
            .unwrap()
            .env(env)
            .set("seed", "3")
            .build()
            .unwrap();
        assert_eq!(c.vae.steps, 50);
        assert_eq!(c.seed, 3);
    }

    #[test]
    fn hash_ignores_out_dir_only() {
        let a = ConfigSources::new().set("seed", "1").build().unwrap();
        let b = ConfigSources::new()
            .set("seed", "1")
            .set("out_dir", "elsewhere")
            .build()
            .unwrap();
        let c = ConfigSources::new().set("seed", "2").build().unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn malformed_line_rejected() {
        assert!(parse_pairs("seed 7\n").is_err());
        assert_eq!(parse_pairs("# only a comment\n\n").unwrap().len(), 0);
    }
}
