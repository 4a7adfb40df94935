//! Conditional autoregressive vocoder over 8-bit mu-law samples.
//!
//! The network predicts a categorical distribution for sample `x_t` from
//! the previous samples and the frame-level conditioning. Its input column
//! `t` is the embedding of code `x_{t-1}` (a fixed start code at `t = 0`),
//! so logits at `t` see only strictly past samples. Each residual layer is
//!
//! ```text
//! a = W_conv ∗_d h + W_cond c + b          (kernel width 2, dilation d)
//! g = tanh(a[..R]) ⊙ sigmoid(a[R..])
//! skip += W_skip g + b_skip,   h ← h + W_res g + b_res
//! ```
//!
//! followed by `relu → 1×1 → relu → 1×1` on the summed skips. With `L`
//! layers of dilations `d_l` the receptive field is `1 + Σ d_l` input
//! columns.

mod conditioning;
mod model;
mod sample;
mod train;

pub use conditioning::{continuous_log_f0, upsample_conditioning, ConditioningPlan, COND_DIM};
pub use model::{teacher_forced_nll, WaveNetModel};
pub use sample::sample;
pub use train::{finetune, provenance_for, train_si, StopRule, TrainPair, TrainReport, WaveNetTrainConfig};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WaveNetConfig {
    pub n_stacks: usize,
    /// Dilations of one stack, repeated `n_stacks` times.
    pub dilations: Vec<usize>,
    pub residual_channels: usize,
    pub skip_channels: usize,
    pub cond_dim: usize,
    pub levels: usize,
}

impl Default for WaveNetConfig {
    fn default() -> Self {
        Self {
            n_stacks: 2,
            dilations: (0..7).map(|i| 1 << i).collect(),
            residual_channels: 32,
            skip_channels: 64,
            cond_dim: COND_DIM,
            levels: crate::dsp::MU_LAW_LEVELS,
        }
    }
}

impl WaveNetConfig {
    pub fn layer_dilations(&self) -> Vec<usize> {
        (0..self.n_stacks)
            .flat_map(|_| self.dilations.iter().copied())
            .collect()
    }

    pub fn layers(&self) -> usize {
        self.n_stacks * self.dilations.len()
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.n_stacks == 0 || self.dilations.is_empty() {
            errs.push("at least one stack with one layer is required".to_string());
        }
        if self.dilations.contains(&0) {
            errs.push("dilations must be ≥ 1".to_string());
        }
        if self.residual_channels == 0 || self.skip_channels == 0 {
            errs.push("channel counts must be positive".to_string());
        }
        if self.cond_dim != COND_DIM {
            errs.push(format!(
                "conditioning has {COND_DIM} dims, config says {}",
                self.cond_dim
            ));
        }
        if self.levels != crate::dsp::MU_LAW_LEVELS {
            errs.push(format!(
                "only {} quantization levels are supported",
                crate::dsp::MU_LAW_LEVELS
            ));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

/// `1 + Σ dilations` over all layers (kernel width 2).
pub fn receptive_field(config: &WaveNetConfig) -> usize {
    1 + config.layer_dilations().iter().sum::<usize>()
}

/// Which data a vocoder was last trained on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Provenance {
    SpeakerIndependent,
    FinetunedNatural,
    FinetunedReconstructed,
    FinetunedReconstructedGv,
}

impl Provenance {
    pub const ALL: [Provenance; 4] = [
        Provenance::SpeakerIndependent,
        Provenance::FinetunedNatural,
        Provenance::FinetunedReconstructed,
        Provenance::FinetunedReconstructedGv,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::SpeakerIndependent => "si",
            Provenance::FinetunedNatural => "finetuned-natural",
            Provenance::FinetunedReconstructed => "finetuned-reconstructed",
            Provenance::FinetunedReconstructedGv => "finetuned-reconstructed-gv",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::Format(format!("unknown provenance {s:?}")))
    }
}

impl std::fmt::Display for Provenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}
