//! `vclab`: runs the voice conversion experiment stages from one config.
//!
//! Exit codes: 0 success, 1 configuration or model error (stage named on
//! stderr), 2 usage error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vclab::experiment::{ConfigSources, Experiment, Stage};
use vclab::pipeline::SystemId;

#[derive(Parser, Debug)]
#[command(
    name = "vclab",
    version,
    about = "VAE voice conversion with WaveNet vocoder fine-tuning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed (overrides the config file and environment).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Restrict to these systems (B1 B2 B3 B4 P1 P2 UB); repeatable.
    #[arg(long = "system", global = true, value_parser = parse_system)]
    systems: Vec<SystemId>,

    /// Override any config key, e.g. `--stage vae.steps=500`; repeatable.
    #[arg(long = "stage", global = true, value_name = "KEY=VALUE", value_parser = parse_override)]
    overrides: Vec<(String, String)>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Generate the synthetic multi-speaker corpus.
    GenCorpus,
    /// Extract features and speaker profiles.
    AnalyzeCorpus,
    /// Train the VAE conversion model.
    TrainVae,
    /// Train the speaker-independent WaveNet vocoder.
    TrainWavenetSi,
    /// Build natural / reconstructed / reconstructed+GV adaptation sets.
    BuildAdaptSet,
    /// Fine-tune the vocoder per target speaker and adaptation kind.
    Finetune,
    /// Run the selected systems on the test utterances.
    Convert,
    /// Write distance, GV and NLL reports.
    Evaluate,
    /// Every stage in order.
    FullRun,
}

fn parse_system(s: &str) -> Result<SystemId, String> {
    SystemId::parse(s).map_err(|e| e.to_string())
}

fn parse_override(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .filter(|(k, _)| !k.is_empty())
        .ok_or_else(|| format!("expected KEY=VALUE, got {s:?}"))
}

fn run(cli: Cli) -> vclab::Result<()> {
    let mut src = ConfigSources::new();
    if let Some(path) = &cli.config {
        src = src.file(path)?;
    }
    src = src.env(std::env::vars());
    for (k, v) in &cli.overrides {
        src = src.set(k, v.clone());
    }
    if let Some(seed) = cli.seed {
        src = src.set("seed", seed.to_string());
    }
    if let Some(out) = &cli.out {
        src = src.set("out_dir", out.to_string_lossy());
    }
    if !cli.systems.is_empty() {
        let list: Vec<&str> = cli.systems.iter().map(|s| s.as_str()).collect();
        src = src.set("systems", list.join(","));
    }
    let exp = Experiment::new(src.build()?);
    let stage = match cli.command {
        Command::GenCorpus => Stage::GenCorpus,
        Command::AnalyzeCorpus => Stage::AnalyzeCorpus,
        Command::TrainVae => Stage::TrainVae,
        Command::TrainWavenetSi => Stage::TrainWaveNetSi,
        Command::BuildAdaptSet => Stage::BuildAdaptSet,
        Command::Finetune => Stage::Finetune,
        Command::Convert => Stage::Convert,
        Command::Evaluate => Stage::Evaluate,
        Command::FullRun => {
            let ev = exp.full_run()?;
            eprintln!(
                "median MCD dist1 {:.3} dist2 {:.3} dist3 {:.3} dB; reports in {}",
                ev.distances.median(1),
                ev.distances.median(2),
                ev.distances.median(3),
                exp.out().join("reports").display()
            );
            return Ok(());
        }
    };
    exp.run_stage(stage)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
