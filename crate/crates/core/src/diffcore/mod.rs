//! Minimal reverse-mode automatic differentiation and optimization.
//!
//! A [`Tape`] records primitive ops eagerly; [`Tape::backward`] runs a
//! single reverse sweep and returns gradients for every recorded value.
//! Parameters live in a [`ParamSet`], are bound to a fresh tape for each
//! forward pass and updated with [`Adam`]. [`grad_check`] compares the
//! analytic gradient against central differences.
//!
//! All randomness goes through [`rng`], a ChaCha8 stream generator seeded
//! from a `u64`, so trajectories are reproducible bit for bit.

mod checkpoint;
mod gradcheck;
pub mod kernels;
mod optim;
mod params;
mod tape;
mod tensor;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{grad_check, grad_check_point, CoordCheck, GradCheck, GradCheckReport};
pub use optim::{Adam, AdamConfig};
pub use params::ParamSet;
pub use tape::{Gradients, Tape, Var};
pub use tensor::{matmul, Tensor};

use rand::SeedableRng;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DiffError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("non-finite value produced by `{op}` (node {node})")]
    NonFinite { op: &'static str, node: usize },
    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("checkpoint format: {0}")]
    Format(String),
}

/// Deterministic generator used everywhere randomness is needed.
pub type Rng = rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Derives an independent stream seed from a base seed and a label
/// (FNV-1a over the label, mixed with SplitMix64).
pub fn derive_seed(base: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = base ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
