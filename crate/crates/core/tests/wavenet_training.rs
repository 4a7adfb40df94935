//! Small end-to-end vocoder training runs on the toy corpus.

use vclab::analysis::median;
use vclab::dsp::{baseline_synthesize, AnalysisConfig, Analyzer, Waveform};
use vclab::pipeline::{generate_toy_corpus, Split, ToyCorpusConfig};
use vclab::wavenet::{
    finetune, sample, teacher_forced_nll, train_si, upsample_conditioning, Provenance, StopRule, TrainPair,
    WaveNetConfig, WaveNetModel, WaveNetTrainConfig,
};

fn small_config() -> WaveNetConfig {
    WaveNetConfig {
        n_stacks: 1,
        ..WaveNetConfig::default()
    }
}

fn analyzer() -> Analyzer {
    Analyzer::new(AnalysisConfig::for_rate(16000)).unwrap()
}

/// Train and test pairs of a two-speaker toy corpus, optionally resynthesized
/// with every frame voiced at `f0`.
fn corpus(train_utts: usize, f0: Option<f64>) -> (Vec<TrainPair>, Vec<TrainPair>) {
    let cfg = ToyCorpusConfig {
        n_speakers: 2,
        train_utts,
        test_utts: 1,
        ..ToyCorpusConfig::default()
    };
    let (m, waves) = generate_toy_corpus(&cfg).unwrap();
    let an = analyzer();
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (u, w) in m.utterances.iter().zip(waves) {
        let mut track = an.analyze(&w).unwrap().track;
        let wave = match f0 {
            None => w,
            Some(f) => {
                for v in &mut track.log_f0 {
                    *v = Some(f.ln());
                }
                let w = baseline_synthesize(&track, 16000, 3).unwrap();
                track = an.analyze(&w).unwrap().track;
                w
            }
        };
        let pair = TrainPair {
            speaker: u.speaker.clone(),
            track,
            wave,
        };
        match u.split {
            Split::Train => train.push(pair),
            Split::Test => test.push(pair),
        }
    }
    (train, test)
}

fn nll(model: &WaveNetModel<f64>, p: &TrainPair) -> f64 {
    let plan = upsample_conditioning(&p.track, 16000).unwrap();
    teacher_forced_nll(model, &p.wave, &plan).unwrap()
}

fn median_f0(w: &Waveform) -> Option<f64> {
    let t = analyzer().analyze(w).unwrap().track;
    let f: Vec<f64> = t.log_f0.iter().flatten().map(|v| v.exp()).collect();
    (!f.is_empty()).then(|| median(&f))
}

#[test]
fn si_training_fits_and_fine_tuning_improves_the_adaptation_set() {
    let (train, test) = corpus(6, None);
    let tc = WaveNetTrainConfig {
        steps: 400,
        log_every: 0,
        ..WaveNetTrainConfig::default()
    };
    let (si, report) = train_si(&train, &small_config(), 16000, &tc).unwrap();
    assert_eq!(si.provenance, Provenance::SpeakerIndependent);
    let limit = 0.6 * 256f64.ln();
    let final_nll = report.tail_mean(50);
    assert!(final_nll < limit, "train NLL {final_nll:.3} ≥ {limit:.3}");
    for p in &test {
        let v = nll(&si, p);
        assert!(v < 256f64.ln(), "held-out NLL {v:.3} not below uniform");
    }

    let adapt: Vec<TrainPair> = train.iter().filter(|p| p.speaker == "spk2").cloned().collect();
    let before: f64 = adapt.iter().map(|p| nll(&si, p)).sum();
    let ft_cfg = WaveNetTrainConfig {
        steps: 60,
        ..tc.clone()
    };
    let (ft, _) = finetune(&si, &adapt, StopRule::MaxSteps(60), &ft_cfg).unwrap();
    assert_eq!(ft.provenance, Provenance::FinetunedNatural);
    assert_eq!(ft.speaker.as_deref(), Some("spk2"));
    let after: f64 = adapt.iter().map(|p| nll(&ft, p)).sum();
    assert!(after <= before, "adaptation NLL rose from {before:.4} to {after:.4}");

    let (same, _) = finetune(&si, &adapt, StopRule::MaxSteps(0), &ft_cfg).unwrap();
    assert_eq!(same.params, si.params);
}

#[test]
fn vocoder_trained_on_200_hz_speech_generates_200_hz() {
    let (train, test) = corpus(6, Some(200.0));
    let tc = WaveNetTrainConfig {
        steps: 400,
        log_every: 0,
        ..WaveNetTrainConfig::default()
    };
    let (si, _) = train_si(&train, &small_config(), 16000, &tc).unwrap();
    let fast = si.cast::<f32>();
    for (i, p) in test.iter().enumerate() {
        let plan = upsample_conditioning(&p.track, 16000).unwrap();
        let out = sample(&fast, &plan, 11 + i as u64).unwrap();
        assert_eq!(out.len(), p.wave.len());
        assert!(out.samples.iter().all(|v| v.abs() <= 1.0));
        let f = median_f0(&out).expect("generated audio has voiced frames");
        assert!((f - 200.0).abs() <= 20.0, "generated periodicity {f:.1} Hz");
    }
}

#[test]
fn training_is_deterministic() {
    let (train, _) = corpus(2, None);
    let tc = WaveNetTrainConfig {
        steps: 5,
        batch_crops: 2,
        crop_samples: 100,
        log_every: 0,
        ..WaveNetTrainConfig::default()
    };
    let cfg = WaveNetConfig {
        n_stacks: 1,
        dilations: vec![1, 2, 4],
        residual_channels: 4,
        skip_channels: 8,
        ..WaveNetConfig::default()
    };
    let (a, ra) = train_si(&train, &cfg, 16000, &tc).unwrap();
    let (b, rb) = train_si(&train, &cfg, 16000, &tc).unwrap();
    assert_eq!(ra.losses, rb.losses);
    assert_eq!(a.to_checkpoint().to_bytes(), b.to_checkpoint().to_bytes());
}

#[test]
fn fine_tuning_rejects_mixed_speakers() {
    let (train, _) = corpus(1, None);
    let si = WaveNetModel::<f64>::init(small_config(), 16000, 1).unwrap();
    let err = finetune(&si, &train, StopRule::MaxSteps(1), &WaveNetTrainConfig::default());
    assert!(err.is_err());
}
