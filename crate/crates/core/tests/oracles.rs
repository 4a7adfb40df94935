//! Reference checks: codecs, KL, DTW and the untrained vocoder.

mod common;

use common::*;

fn assert_pass(o: Outcome) {
    assert!(o.pass, "{}", o.detail);
}

#[test]
fn causality_and_receptive_field() {
    assert_pass(criterion_causality());
}

#[test]
fn codecs_round_trip() {
    assert_pass(criterion_codecs());
}

#[test]
fn kl_agrees_with_monte_carlo() {
    assert_pass(criterion_kl());
}

#[test]
fn dtw_agrees_with_enumeration() {
    assert_pass(criterion_dtw());
}

#[test]
fn untrained_vocoder_is_uniform() {
    assert_pass(criterion_uniform_nll());
}
