//! System assembly: speaker statistics, f0 and energy handling, the GV
//! post-filter, vocoder adaptation sets, the seven compared systems and the
//! synthetic corpus.
//!
//! Conversion chain order is energy compensation, then the optional GV
//! post-filter, then the f0 transform.

mod corpus;
mod profile;
mod systems;

pub use corpus::{
    generate_toy_corpus, make_toy_corpus, speaker_name, CorpusManifest, Split, ToyCorpusConfig, ToyVoice, Utterance,
};
pub use profile::{
    build_profile, compensate_energy, gv_postfilter, transform_f0, transform_log_f0, utterance_variance,
    SpeakerProfile, GV_DIMS, LF0_STD_FLOOR,
};
pub use systems::{
    build_adaptation_set, run_system, AdaptKind, SystemId, SystemModels, SystemOutput, SystemSpec, Vocoder,
};
