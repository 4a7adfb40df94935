//! Synthetic multi-speaker corpus and its manifest.
//!
//! Every toy speaker is a source-filter voice: a pulse train at the
//! speaker's pitch, shaped by vowel formants scaled by a per-speaker vocal
//! tract factor and a per-speaker spectral tilt. Utterance scripts (vowel
//! sequence, relative durations, intonation) are shared across speakers, so
//! test utterance `i` of two speakers carries the same content.

use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::diffcore::{self, derive_seed};
use crate::dsp::Waveform;
use crate::{Error, Result};

/// F1..F3 of the vowel inventory, in Hz.
const VOWELS: [[f64; 3]; 5] = [
    [730.0, 1090.0, 2440.0],
    [270.0, 2290.0, 3010.0],
    [300.0, 870.0, 2240.0],
    [530.0, 1840.0, 2480.0],
    [570.0, 840.0, 2410.0],
];
const BANDWIDTHS: [f64; 4] = [80.0, 100.0, 140.0, 200.0];
const F4: f64 = 3500.0;
const MAX_SPEAKERS: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Utterance {
    pub speaker: String,
    pub split: Split,
    /// Relative to the manifest directory.
    pub path: PathBuf,
}

impl Utterance {
    /// File stem, e.g. `test_003`.
    pub fn name(&self) -> String {
        self.path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    }
}

/// Speakers and their train/test utterances. Text form: one
/// `speaker split path` line per utterance, `#` comments allowed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorpusManifest {
    pub speakers: Vec<String>,
    pub utterances: Vec<Utterance>,
}

impl CorpusManifest {
    pub fn new(utterances: Vec<Utterance>) -> Result<Self> {
        let mut speakers: Vec<String> = Vec::new();
        for u in &utterances {
            if !speakers.contains(&u.speaker) {
                speakers.push(u.speaker.clone());
            }
        }
        let m = Self { speakers, utterances };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let mut paths: Vec<&Path> = self.utterances.iter().map(|u| u.path.as_path()).collect();
        paths.sort();
        if let Some(w) = paths.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::invalid(format!("utterance {} listed twice", w[0].display())));
        }
        if let Some(u) = self.utterances.iter().find(|u| !self.speakers.contains(&u.speaker)) {
            return Err(Error::invalid(format!("unknown speaker {}", u.speaker)));
        }
        Ok(())
    }

    pub fn select(&self, speaker: &str, split: Split) -> Vec<&Utterance> {
        self.utterances
            .iter()
            .filter(|u| u.speaker == speaker && u.split == split)
            .collect()
    }

    /// `(train, test)` utterance count of a speaker.
    pub fn split_sizes(&self, speaker: &str) -> (usize, usize) {
        (
            self.select(speaker, Split::Train).len(),
            self.select(speaker, Split::Test).len(),
        )
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# speaker split path\n");
        for u in &self.utterances {
            s.push_str(&format!("{} {} {}\n", u.speaker, u.split, u.path.display()));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut utts = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let [speaker, split, path] = parts[..] else {
                return Err(Error::Format(format!("manifest line {}: expected 3 fields", i + 1)));
            };
            let split = match split {
                "train" => Split::Train,
                "test" => Split::Test,
                other => return Err(Error::Format(format!("manifest line {}: bad split {other}", i + 1))),
            };
            utts.push(Utterance {
                speaker: speaker.to_string(),
                split,
                path: PathBuf::from(path),
            });
        }
        Self::new(utts)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyCorpusConfig {
    pub seed: u64,
    pub n_speakers: usize,
    pub train_utts: usize,
    pub test_utts: usize,
    pub utt_seconds: f64,
    pub sample_rate: u32,
    /// Utterance lengths are rounded up to a multiple of this many samples.
    pub hop: usize,
}

impl Default for ToyCorpusConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            n_speakers: 4,
            train_utts: 20,
            test_utts: 5,
            utt_seconds: 1.0,
            sample_rate: 16_000,
            hop: 80,
        }
    }
}

impl ToyCorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(2..=MAX_SPEAKERS).contains(&self.n_speakers) {
            errs.push(format!(
                "n_speakers must be in 2..={MAX_SPEAKERS}, got {}",
                self.n_speakers
            ));
        }
        if self.train_utts == 0 {
            errs.push("train_utts must be positive".into());
        }
        if !(self.utt_seconds >= 0.3 && self.utt_seconds <= 10.0) {
            errs.push(format!("utt_seconds {} outside [0.3, 10]", self.utt_seconds));
        }
        if self.sample_rate < 8000 {
            errs.push(format!("sample_rate {} below 8000", self.sample_rate));
        }
        if self.hop == 0 {
            errs.push("hop must be positive".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

/// Voice parameters of one toy speaker.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyVoice {
    pub f0: f64,
    /// Multiplies every formant frequency.
    pub tract: f64,
    /// One-pole low-pass coefficient; larger is darker.
    pub tilt: f64,
    /// Multiplies segment durations.
    pub rate: f64,
}

impl ToyVoice {
    /// Speakers sit 0.18 apart in log-f0 and spread over tract and tilt.
    pub fn for_speaker(seed: u64, index: usize, n_speakers: usize) -> Self {
        let mut rng = diffcore::rng(derive_seed(seed, &format!("voice-{index}")));
        let frac = index as f64 / (n_speakers - 1).max(1) as f64;
        Self {
            f0: 110.0 * (0.18 * index as f64).exp() * rng.random_range(0.98..1.02),
            tract: (0.9 + 0.25 * frac) * rng.random_range(0.98..1.02),
            tilt: 0.75 - 0.4 * ((index * 3) % n_speakers) as f64 / n_speakers as f64,
            rate: rng.random_range(0.9..1.1),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Segment {
    vowel: usize,
    seconds: f64,
    gap_after: f64,
    /// Pitch multipliers at the start and end of the segment.
    intonation: (f64, f64),
}

fn script(seed: u64, split: Split, index: usize, seconds: f64) -> Vec<Segment> {
    let mut rng = diffcore::rng(derive_seed(seed, &format!("script-{split}-{index}")));
    let mut segs = Vec::new();
    let mut total = 0.08;
    while total < seconds * 0.9 {
        let s = Segment {
            vowel: rng.random_range(0..VOWELS.len()),
            seconds: rng.random_range(0.15..0.28),
            gap_after: if rng.random_bool(0.5) {
                0.0
            } else {
                rng.random_range(0.03..0.06)
            },
            intonation: (rng.random_range(0.92..1.08), rng.random_range(0.92..1.08)),
        };
        total += s.seconds + s.gap_after;
        segs.push(s);
    }
    segs
}

/// Two-pole resonator state.
#[derive(Clone, Copy, Default)]
struct Resonator {
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn step(&mut self, x: f64, freq: f64, bw: f64, rate: f64) -> f64 {
        let r = (-PI * bw / rate).exp();
        let a1 = 2.0 * r * (2.0 * PI * freq / rate).cos();
        let a2 = -r * r;
        let gain = 1.0 - a1 - a2;
        let y = gain * x + a1 * self.y1 + a2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// Renders one utterance of a script in a voice.
fn render(voice: &ToyVoice, segs: &[Segment], cfg: &ToyCorpusConfig, noise_seed: u64) -> Waveform {
    let rate = cfg.sample_rate as f64;
    let lead = (0.04 * rate) as usize;
    // (start sample, length, segment) for voiced stretches
    let mut plan = Vec::new();
    let mut pos = lead;
    for s in segs {
        let len = (s.seconds * voice.rate * rate) as usize;
        plan.push((pos, len, s));
        pos += len + (s.gap_after * voice.rate * rate) as usize;
    }
    let total = (pos + lead).div_ceil(cfg.hop) * cfg.hop;

    let mut rng = diffcore::rng(noise_seed);
    let mut source = vec![0.0; total];
    let mut formants = vec![[0.0f64; 3]; total];
    let ramp = (0.015 * rate) as usize;
    let glide = (0.03 * rate) as usize;
    let mut phase = 0.0;
    for (k, &(start, len, s)) in plan.iter().enumerate() {
        let prev = k.checked_sub(1).map(|j| plan[j]).filter(|p| p.0 + p.1 == start);
        let joined = plan.get(k + 1).is_some_and(|n| n.0 == start + len);
        for i in 0..len {
            let u = i as f64 / len as f64;
            let f0 = voice.f0 * (s.intonation.0 + (s.intonation.1 - s.intonation.0) * u);
            phase += f0 / rate;
            // adjacent segments run on without an amplitude dip
            let head = if prev.is_some() { ramp } else { i };
            let tail = if joined { ramp } else { len - 1 - i };
            let env = (head.min(tail) as f64 / ramp as f64).min(1.0);
            let pulse = if phase >= 1.0 {
                phase -= 1.0;
                1.0
            } else {
                0.0
            };
            let breath: f64 = StandardNormal.sample(&mut rng);
            source[start + i] = env * (pulse + 0.02 * breath);
            let mut f = VOWELS[s.vowel];
            // adjacent segments glide between formant targets
            if let Some(p) = prev {
                if i < glide {
                    let w = i as f64 / glide as f64;
                    for (fk, pk) in f.iter_mut().zip(VOWELS[p.2.vowel]) {
                        *fk = pk + (*fk - pk) * w;
                    }
                }
            }
            formants[start + i] = f;
        }
    }
    // silent stretches keep the last formants so filter state decays smoothly
    let mut last = VOWELS[segs.first().map_or(0, |s| s.vowel)];
    for f in formants.iter_mut() {
        if f[0] == 0.0 {
            *f = last;
        } else {
            last = *f;
        }
    }

    let mut res = [Resonator::default(); 4];
    let mut lp = 0.0;
    let mut out = Vec::with_capacity(total);
    for n in 0..total {
        let mut y = source[n];
        for (k, r) in res.iter_mut().enumerate() {
            let f = if k < 3 { formants[n][k] } else { F4 };
            y = r.step(y, f * voice.tract, BANDWIDTHS[k] * voice.tract, rate);
        }
        lp = (1.0 - voice.tilt) * y + voice.tilt * lp;
        out.push(lp);
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    let floor_seed = derive_seed(noise_seed, "floor");
    let mut frng = diffcore::rng(floor_seed);
    let samples = out
        .into_iter()
        .map(|v| {
            let hiss: f64 = StandardNormal.sample(&mut frng);
            let x = 0.5 * v / peak + 1e-4 * hiss;
            (x * 32768.0).round().clamp(-32768.0, 32767.0) / 32768.0
        })
        .collect();
    Waveform::new(samples, cfg.sample_rate)
}

pub fn speaker_name(index: usize) -> String {
    format!("spk{}", index + 1)
}

/// Generates the corpus in memory: the manifest and one waveform per
/// manifest entry, in manifest order. Samples already sit on the 16-bit
/// grid, so writing and re-reading the WAVs is lossless.
pub fn generate_toy_corpus(cfg: &ToyCorpusConfig) -> Result<(CorpusManifest, Vec<Waveform>)> {
    cfg.validate()?;
    let mut utts = Vec::new();
    let mut waves = Vec::new();
    for k in 0..cfg.n_speakers {
        let voice = ToyVoice::for_speaker(cfg.seed, k, cfg.n_speakers);
        let name = speaker_name(k);
        for (split, count) in [(Split::Train, cfg.train_utts), (Split::Test, cfg.test_utts)] {
            for i in 0..count {
                let segs = script(cfg.seed, split, i, cfg.utt_seconds);
                let noise = derive_seed(cfg.seed, &format!("noise-{name}-{split}-{i}"));
                waves.push(render(&voice, &segs, cfg, noise));
                utts.push(Utterance {
                    speaker: name.clone(),
                    split,
                    path: PathBuf::from(format!("{name}/{split}_{i:03}.wav")),
                });
            }
        }
    }
    Ok((CorpusManifest::new(utts)?, waves))
}

/// Writes the corpus WAVs and `manifest.txt` under `dir`.
pub fn make_toy_corpus(dir: &Path, cfg: &ToyCorpusConfig) -> Result<CorpusManifest> {
    let (manifest, waves) = generate_toy_corpus(cfg)?;
    for (u, w) in manifest.utterances.iter().zip(&waves) {
        w.write_wav(&dir.join(&u.path))?;
    }
    manifest.save(&dir.join("manifest.txt"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ToyCorpusConfig {
        ToyCorpusConfig {
            n_speakers: 2,
            train_utts: 2,
            test_utts: 1,
            ..ToyCorpusConfig::default()
        }
    }

    #[test]
    fn deterministic_and_hop_aligned() {
        let (m1, w1) = generate_toy_corpus(&small()).unwrap();
        let (m2, w2) = generate_toy_corpus(&small()).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(w1, w2);
        assert_eq!(m1.utterances.len(), 6);
        assert_eq!(m1.split_sizes("spk2"), (2, 1));
        for w in &w1 {
            assert_eq!(w.len() % 80, 0);
            assert!(w.peak() <= 0.51 && w.peak() > 0.4);
            assert!(w.duration_secs() > 0.8 && w.duration_secs() < 1.5);
        }
    }

    #[test]
    fn manifest_text_round_trip() {
        let (m, _) = generate_toy_corpus(&small()).unwrap();
        assert_eq!(CorpusManifest::parse(&m.to_text()).unwrap(), m);
        assert!(CorpusManifest::parse("a train x.wav\nb test x.wav\n").is_err());
        assert!(CorpusManifest::parse("a valid x.wav\n").is_err());
    }

    #[test]
    fn written_corpus_reads_back() {
        let dir = tempfile::tempdir().unwrap();
        let m = make_toy_corpus(dir.path(), &small()).unwrap();
        let (_, waves) = generate_toy_corpus(&small()).unwrap();
        let back = Waveform::read_wav(&dir.path().join(&m.utterances[0].path)).unwrap();
        assert_eq!(back, waves[0]);
        assert_eq!(CorpusManifest::load(&dir.path().join("manifest.txt")).unwrap(), m);
    }

    #[test]
    fn bad_config_lists_problems() {
        let cfg = ToyCorpusConfig {
            n_speakers: 1,
            train_utts: 0,
            ..ToyCorpusConfig::default()
        };
        match cfg.validate() {
            Err(Error::Config(errs)) => assert_eq!(errs.len(), 2),
            other => panic!("{other:?}"),
        }
    }
}
