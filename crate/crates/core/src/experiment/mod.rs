//! Experiment orchestration: configuration, on-disk layout and the stages
//! driven by the command-line tool.
//!
//! Layout under `out_dir`:
//!
//! ```text
//! config.txt                resolved configuration
//! manifest.json             every artifact with stage, config hash and sha256
//! corpus/                   toy corpus WAVs and manifest.txt
//! features/natural/<spk>/   analysis output (VCFT)
//! profiles.json             per-speaker f0 statistics and GV
//! models/                   vae.vcrm, wavenet-si.vcrm, wavenet-<spk>-<provenance>.vcrm
//! adapt/<kind>/<spk>/       vocoder adaptation features
//! convert/<system>/<pair>/  output WAVs and every intermediate track
//! reports/                  distances.csv, gv.csv, nll.csv, finetune.csv, summary.json
//! metrics/<stage>.jsonl     machine-readable per-stage metrics
//! ```

mod config;
mod stages;

pub use config::{parse_pairs, ConfigSources, ExperimentConfig, ENV_PREFIX, KEYS};
pub use stages::{Evaluation, Experiment, NllRow, Stage};
