//! Speaker-conditioned variational autoencoder over mel-cepstral frames.
//!
//! The encoder maps a z-scored 34-dimensional spectral vector (MCC dims
//! 1..=34) to a diagonal Gaussian posterior; the decoder maps a latent
//! vector concatenated with a one-hot speaker code back to the normalized
//! spectral vector. Training minimizes, per frame,
//!
//! ```text
//! 0.5 ‖h − G(z, y)‖² + Σ_d 0.5 (μ_d² + σ_d² − 1 − log σ_d²),   z = μ + σ ⊙ ε
//! ```
//!
//! averaged over the batch, with `ε` drawn once per step and recorded as a
//! constant.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::diffcore::{self, kernels, Adam, AdamConfig, Checkpoint, ParamSet, Tape, Tensor, Var};
use crate::dsp::{FeatureKind, FeatureTrack};
use crate::{Error, Result, Scalar};

/// One-hot speaker code.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SpeakerCode {
    index: usize,
    n_speakers: usize,
}

impl SpeakerCode {
    pub fn new(index: usize, n_speakers: usize) -> Result<Self> {
        if index >= n_speakers {
            return Err(Error::invalid(format!(
                "speaker index {index} out of range for {n_speakers} speakers"
            )));
        }
        Ok(Self { index, n_speakers })
    }

    /// Parses an explicit one-hot vector.
    pub fn from_one_hot(v: &[f64]) -> Result<Self> {
        let ones: Vec<usize> = v
            .iter()
            .enumerate()
            .filter(|(_, &x)| x == 1.0)
            .map(|(i, _)| i)
            .collect();
        let zeros = v.iter().filter(|&&x| x == 0.0).count();
        if ones.len() != 1 || zeros + 1 != v.len() {
            return Err(Error::invalid(format!("malformed speaker code {v:?}")));
        }
        Self::new(ones[0], v.len())
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn n_speakers(&self) -> usize {
        self.n_speakers
    }

    pub fn one_hot(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.n_speakers];
        v[self.index] = 1.0;
        v
    }
}

/// Diagonal Gaussian `q(z | h)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentPosterior {
    pub mean: Vec<f64>,
    pub log_var: Vec<f64>,
}

impl LatentPosterior {
    /// Closed-form `KL(q ‖ N(0, I))`.
    pub fn kl(&self) -> f64 {
        self.mean
            .iter()
            .zip(&self.log_var)
            .map(|(&m, &lv)| 0.5 * (m * m + lv.exp() - 1.0 - lv))
            .sum()
    }

    /// Monte Carlo estimate of `E_q[log q(z) − log p(z)]` from `samples`
    /// draws; returns `(mean, standard error)`.
    pub fn kl_monte_carlo(&self, samples: usize, seed: u64) -> (f64, f64) {
        let mut rng = diffcore::rng(seed);
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..samples {
            let mut v = 0.0;
            for (&m, &lv) in self.mean.iter().zip(&self.log_var) {
                let e: f64 = StandardNormal.sample(&mut rng);
                let z = m + (0.5 * lv).exp() * e;
                // log N(z; m, σ²) − log N(z; 0, 1); the 2π terms cancel
                v += -0.5 * lv - 0.5 * e * e + 0.5 * z * z;
            }
            sum += v;
            sum_sq += v * v;
        }
        let n = samples as f64;
        let mean = sum / n;
        let var = (sum_sq / n - mean * mean).max(0.0) * n / (n - 1.0);
        (mean, (var / n).sqrt())
    }
}

/// Terms of the minimized negative lower bound.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub recon: f64,
    pub latent: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VaeConfig {
    pub input_dim: usize,
    pub hidden: usize,
    pub latent: usize,
    pub n_speakers: usize,
}

impl VaeConfig {
    pub fn new(n_speakers: usize) -> Self {
        Self {
            input_dim: 34,
            hidden: 128,
            latent: 16,
            n_speakers,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden == 0 || self.latent == 0 || self.n_speakers == 0 {
            return Err(Error::invalid(format!("VAE dimensions must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Which latent vector the forward pass decodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LatentChoice {
    /// `z = μ`.
    Mean,
    /// `z ~ q(z | h)` with the given seed.
    Sample(u64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ForwardMode {
    /// Decode with the input speaker's own code.
    Reconstruct,
    /// Decode with a different (target) speaker's code.
    Convert,
}

const PARAM_NAMES: [&str; 12] = [
    "enc.w1", "enc.b1", "enc.w2", "enc.b2", "enc.w3", "enc.b3", "dec.w1", "dec.b1", "dec.w2", "dec.b2", "dec.w3",
    "dec.b3",
];

/// Encoder/decoder weights plus the feature normalization and speaker table.
#[derive(Clone, Debug, PartialEq)]
pub struct VaeModel<T> {
    pub config: VaeConfig,
    pub params: ParamSet<T>,
    /// Per-dimension mean of the training frames (dims 1..=34).
    pub norm_mean: Vec<f64>,
    /// Per-dimension standard deviation, floored.
    pub norm_std: Vec<f64>,
    pub speakers: Vec<String>,
}

fn layer_shapes(c: &VaeConfig) -> [(usize, usize); 6] {
    [
        (c.hidden, c.input_dim),
        (c.hidden, c.hidden),
        (2 * c.latent, c.hidden),
        (c.hidden, c.latent + c.n_speakers),
        (c.hidden, c.hidden),
        (c.input_dim, c.hidden),
    ]
}

impl<T: Scalar> VaeModel<T> {
    fn build(
        config: VaeConfig,
        speakers: Vec<String>,
        mut weight: impl FnMut(usize, usize) -> Tensor<T>,
    ) -> Result<Self> {
        config.validate()?;
        if speakers.len() != config.n_speakers {
            return Err(Error::invalid(format!(
                "{} speaker names for {} speakers",
                speakers.len(),
                config.n_speakers
            )));
        }
        let mut params = ParamSet::new();
        for (i, &(out, inp)) in layer_shapes(&config).iter().enumerate() {
            params.push(PARAM_NAMES[2 * i], weight(out, inp));
            params.push(PARAM_NAMES[2 * i + 1], Tensor::column(vec![T::zero(); out]));
        }
        Ok(Self {
            norm_mean: vec![0.0; config.input_dim],
            norm_std: vec![1.0; config.input_dim],
            config,
            params,
            speakers,
        })
    }

    /// All weights and biases zero; identity normalization.
    pub fn zeros(config: VaeConfig, speakers: Vec<String>) -> Result<Self> {
        Self::build(config, speakers, |o, i| Tensor::zeros(&[o, i]))
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(config: VaeConfig, speakers: Vec<String>, seed: u64) -> Result<Self> {
        let mut rng = diffcore::rng(seed);
        Self::build(config, speakers, |o, i| {
            let a = (6.0 / (o + i) as f64).sqrt();
            Tensor::matrix(o, i, (0..o * i).map(|_| T::of(rng.random_range(-a..a))).collect())
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }

    pub fn code(&self, index: usize) -> Result<SpeakerCode> {
        SpeakerCode::new(index, self.config.n_speakers)
    }

    pub fn speaker_code(&self, name: &str) -> Result<SpeakerCode> {
        let i = self
            .speakers
            .iter()
            .position(|s| s == name)
            .ok_or_else(|| Error::invalid(format!("speaker {name} unknown to the VAE")))?;
        self.code(i)
    }

    fn check_code(&self, y: &SpeakerCode) -> Result<()> {
        if y.n_speakers != self.config.n_speakers {
            return Err(Error::invalid(format!(
                "speaker code of length {} for a model with {} speakers",
                y.n_speakers, self.config.n_speakers
            )));
        }
        Ok(())
    }

    pub fn normalize(&self, spectral: &[f64]) -> Vec<f64> {
        spectral
            .iter()
            .zip(self.norm_mean.iter().zip(&self.norm_std))
            .map(|(&x, (&m, &s))| (x - m) / s)
            .collect()
    }

    pub fn denormalize(&self, h: &[f64]) -> Vec<f64> {
        h.iter()
            .zip(self.norm_mean.iter().zip(&self.norm_std))
            .map(|(&x, (&m, &s))| x * s + m)
            .collect()
    }

    fn p(&self, i: usize) -> &Tensor<T> {
        self.params.tensor(i)
    }

    /// Encoder on a `[input_dim × N]` batch: `(μ, log σ²)`, each `[latent × N]`.
    fn encode_batch(&self, x: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
        let h1 = kernels::linear(self.p(0), x, self.p(1)).map(|v| v.tanh());
        let h2 = kernels::linear(self.p(2), &h1, self.p(3)).map(|v| v.tanh());
        let out = kernels::linear(self.p(4), &h2, self.p(5));
        let l = self.config.latent;
        (out.slice_rows(0, l), out.slice_rows(l, 2 * l))
    }

    /// Decoder on `[latent × N]` latents, all frames sharing one code.
    fn decode_batch(&self, z: &Tensor<T>, y: &SpeakerCode) -> Tensor<T> {
        let n = z.cols();
        let mut data = z.data().to_vec();
        for s in 0..self.config.n_speakers {
            let v = if s == y.index { T::one() } else { T::zero() };
            data.extend(std::iter::repeat_n(v, n));
        }
        let input = Tensor::matrix(self.config.latent + self.config.n_speakers, n, data);
        let h1 = kernels::linear(self.p(6), &input, self.p(7)).map(|v| v.tanh());
        let h2 = kernels::linear(self.p(8), &h1, self.p(9)).map(|v| v.tanh());
        kernels::linear(self.p(10), &h2, self.p(11))
    }

    fn column_of(&self, v: &[f64], expected: usize, what: &str) -> Result<Tensor<T>> {
        if v.len() != expected {
            return Err(Error::invalid(format!(
                "{what} has {} dims, expected {expected}",
                v.len()
            )));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid(format!("{what} is not finite")));
        }
        Ok(Tensor::column(v.iter().map(|&x| T::of(x)).collect()))
    }

    /// Posterior for one normalized spectral vector.
    pub fn encode(&self, h: &[f64]) -> Result<LatentPosterior> {
        let x = self.column_of(h, self.config.input_dim, "encoder input")?;
        let (m, lv) = self.encode_batch(&x);
        Ok(LatentPosterior {
            mean: m.data().iter().map(|v| v.to_f64_lossless()).collect(),
            log_var: lv.data().iter().map(|v| v.to_f64_lossless()).collect(),
        })
    }

    /// Normalized spectral vector for latent `z` and speaker `y`.
    pub fn decode(&self, z: &[f64], y: &SpeakerCode) -> Result<Vec<f64>> {
        self.check_code(y)?;
        let z = self.column_of(z, self.config.latent, "latent")?;
        Ok(self
            .decode_batch(&z, y)
            .data()
            .iter()
            .map(|v| v.to_f64_lossless())
            .collect())
    }

    /// Loss for one frame with explicit reparameterization noise.
    pub fn elbo_loss(&self, h: &[f64], y: &SpeakerCode, noise: &[f64]) -> Result<LossBreakdown> {
        self.check_code(y)?;
        let x = self.column_of(h, self.config.input_dim, "frame")?;
        let eps = self.column_of(noise, self.config.latent, "noise")?;
        let mut tape = Tape::new();
        let vars = self.params.bind_frozen(&mut tape);
        let (total, recon, latent) = elbo_on_tape(&mut tape, &vars, &self.config, x, &[y.index], eps);
        if let Some(f) = tape.fault() {
            return Err(f.clone().into());
        }
        let get = |v: Var| tape.value(v).item().to_f64_lossless();
        Ok(LossBreakdown {
            total: get(total),
            recon: get(recon),
            latent: get(latent),
        })
    }

    /// Frame-wise encode/decode of a track. Only MCC dims 1..=34 change;
    /// dim 0, log-f0, voicing and energy are carried over.
    pub fn forward(
        &self,
        track: &FeatureTrack,
        code: &SpeakerCode,
        mode: ForwardMode,
        latent: LatentChoice,
    ) -> Result<FeatureTrack> {
        self.check_code(code)?;
        if track.dims() != self.config.input_dim + 1 {
            return Err(Error::invalid(format!(
                "track has {} coefficients, the VAE models {} + level",
                track.dims(),
                self.config.input_dim
            )));
        }
        if mode == ForwardMode::Reconstruct && track.kind != FeatureKind::Natural {
            return Err(Error::invalid(format!(
                "reconstruction expects natural features, got {}",
                track.kind
            )));
        }
        let frames = track.frames();
        let d = self.config.input_dim;
        // [d × frames], column t = normalized frame t
        let mut data = vec![T::zero(); d * frames];
        for t in 0..frames {
            for (k, v) in self.normalize(track.spectral(t)).into_iter().enumerate() {
                data[k * frames + t] = T::of(v);
            }
        }
        let x = Tensor::matrix(d, frames, data);
        let (mean, log_var) = self.encode_batch(&x);
        let z = match latent {
            LatentChoice::Mean => mean,
            LatentChoice::Sample(seed) => {
                let mut rng = diffcore::rng(seed);
                let eps: Vec<T> = (0..mean.len())
                    .map(|_| T::of(StandardNormal.sample(&mut rng)))
                    .collect();
                let sd = log_var.map(|v| (v * T::of(0.5)).exp());
                let mut z = mean.clone();
                for ((zi, &s), &e) in z.data_mut().iter_mut().zip(sd.data()).zip(&eps) {
                    *zi += s * e;
                }
                z
            }
        };
        let out = self.decode_batch(&z, code);

        let mut result = track.clone();
        for t in 0..frames {
            let col: Vec<f64> = (0..d).map(|k| out.at(k, t).to_f64_lossless()).collect();
            let spectral = self.denormalize(&col);
            result.mcc[t][1..].copy_from_slice(&spectral);
        }
        assert_eq!(result.frames(), frames, "forward must preserve frame count");
        result.kind = match mode {
            ForwardMode::Reconstruct => FeatureKind::Reconstructed,
            ForwardMode::Convert => FeatureKind::Converted,
        };
        result.postfiltered = false;
        if result.mcc.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("VAE produced non-finite features"));
        }
        Ok(result)
    }

    pub fn to_checkpoint(&self) -> Checkpoint<T> {
        let mut params = self.params.clone();
        params.push(
            "norm.mean",
            Tensor::column(self.norm_mean.iter().map(|&v| T::of(v)).collect()),
        );
        params.push(
            "norm.std",
            Tensor::column(self.norm_std.iter().map(|&v| T::of(v)).collect()),
        );
        Checkpoint::new(params)
            .with_meta("model", "vae")
            .with_meta("input_dim", self.config.input_dim.to_string())
            .with_meta("hidden", self.config.hidden.to_string())
            .with_meta("latent", self.config.latent.to_string())
            .with_meta("n_speakers", self.config.n_speakers.to_string())
            .with_meta("speakers", self.speakers.join(","))
    }

    pub fn from_checkpoint(ck: &Checkpoint<T>) -> Result<Self> {
        if ck.meta("model") != Some("vae") {
            return Err(Error::Format("checkpoint does not hold a VAE".into()));
        }
        let num = |k: &str| -> Result<usize> {
            ck.require(k)?
                .parse()
                .map_err(|e| Error::Format(format!("bad {k}: {e}")))
        };
        let config = VaeConfig {
            input_dim: num("input_dim")?,
            hidden: num("hidden")?,
            latent: num("latent")?,
            n_speakers: num("n_speakers")?,
        };
        let speakers: Vec<String> = ck.require("speakers")?.split(',').map(str::to_string).collect();
        let mut model = Self::zeros(config, speakers)?;
        for (i, name) in PARAM_NAMES.iter().enumerate() {
            let t = ck
                .params
                .get(name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks {name}")))?;
            if t.shape() != model.params.tensor(i).shape() {
                return Err(Error::Format(format!(
                    "{name} has shape {:?}, expected {:?}",
                    t.shape(),
                    model.params.tensor(i).shape()
                )));
            }
            *model.params.tensor_mut(i) = t.clone();
        }
        let stats = |name: &str| -> Result<Vec<f64>> {
            let t = ck
                .params
                .get(name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks {name}")))?;
            if t.len() != model.config.input_dim {
                return Err(Error::Format(format!("{name} has {} entries", t.len())));
            }
            Ok(t.data().iter().map(|v| v.to_f64_lossless()).collect())
        };
        model.norm_mean = stats("norm.mean")?;
        model.norm_std = stats("norm.std")?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Records the batch loss on `tape`. `x` is `[input_dim × N]` normalized
/// frames, `codes[n]` the speaker of column `n`, `eps` `[latent × N]` noise.
/// Returns `(total, recon, latent)`, each averaged over the batch.
pub fn elbo_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    vars: &[Var],
    config: &VaeConfig,
    x: Tensor<T>,
    codes: &[usize],
    eps: Tensor<T>,
) -> (Var, Var, Var) {
    let n = x.cols();
    assert_eq!(codes.len(), n, "one speaker per frame");
    let l = config.latent;
    let x = tape.constant(x);
    let h1 = tape.linear(vars[0], x, vars[1]);
    let h1 = tape.tanh(h1);
    let h2 = tape.linear(vars[2], h1, vars[3]);
    let h2 = tape.tanh(h2);
    let out = tape.linear(vars[4], h2, vars[5]);
    let mean = tape.slice_rows(out, 0, l);
    let log_var = tape.slice_rows(out, l, 2 * l);

    let half_lv = tape.scale(log_var, T::of(0.5));
    let sd = tape.exp(half_lv);
    let eps = tape.constant(eps);
    let spread = tape.mul(sd, eps);
    let z = tape.add(mean, spread);

    let mut onehot = vec![T::zero(); config.n_speakers * n];
    for (c, &s) in codes.iter().enumerate() {
        onehot[s * n + c] = T::one();
    }
    let y = tape.constant(Tensor::matrix(config.n_speakers, n, onehot));
    let dec_in = tape.concat_rows(&[z, y]);
    let g1 = tape.linear(vars[6], dec_in, vars[7]);
    let g1 = tape.tanh(g1);
    let g2 = tape.linear(vars[8], g1, vars[9]);
    let g2 = tape.tanh(g2);
    let recon_x = tape.linear(vars[10], g2, vars[11]);

    let inv_n = T::of(1.0 / n as f64);
    let recon = tape.gaussian_nll(x, recon_x);
    let recon = tape.scale(recon, inv_n);
    let latent = tape.kl_std_normal(mean, log_var);
    let latent = tape.scale(latent, inv_n);
    let total = tape.add(recon, latent);
    (total, recon, latent)
}

#[derive(Clone, Debug, PartialEq)]
pub struct VaeTrainConfig {
    pub hidden: usize,
    pub latent: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Evaluate the fixed held-out batch every this many steps.
    pub eval_every: usize,
    pub eval_frames: usize,
    /// Floor on per-dimension standard deviation used for normalization.
    pub std_floor: f64,
}

impl Default for VaeTrainConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            latent: 16,
            steps: 2000,
            batch_size: 64,
            adam: AdamConfig::default(),
            seed: 1,
            eval_every: 20,
            eval_frames: 512,
            std_floor: 1e-6,
        }
    }
}

/// Per-step training losses and periodic evaluations on a fixed batch.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub train: Vec<LossBreakdown>,
    /// `(step, loss)` on the fixed evaluation batch with fixed noise.
    pub eval: Vec<(usize, LossBreakdown)>,
}

impl TrainHistory {
    /// Moving average (window `w`) of the evaluation totals.
    pub fn eval_moving_average(&self, w: usize) -> Vec<f64> {
        let v: Vec<f64> = self.eval.iter().map(|(_, l)| l.total).collect();
        if v.len() < w || w == 0 {
            return Vec::new();
        }
        v.windows(w).map(|s| s.iter().sum::<f64>() / w as f64).collect()
    }
}

/// Trains on frames pooled across all speakers. Each corpus entry is a
/// natural track with its speaker code; `speakers` names the codes.
pub fn train_vae(
    corpus: &[(&FeatureTrack, SpeakerCode)],
    speakers: &[String],
    cfg: &VaeTrainConfig,
) -> Result<(VaeModel<f64>, TrainHistory)> {
    let n_spk = speakers.len();
    if corpus.is_empty() {
        return Err(Error::invalid("empty VAE training corpus"));
    }
    if cfg.batch_size == 0 || cfg.eval_every == 0 {
        return Err(Error::invalid("batch size and eval interval must be positive"));
    }
    let config = VaeConfig {
        input_dim: 34,
        hidden: cfg.hidden,
        latent: cfg.latent,
        n_speakers: n_spk,
    };
    let d = config.input_dim;
    let mut frames: Vec<(&[f64], usize)> = Vec::new();
    for (track, code) in corpus {
        if code.n_speakers != n_spk {
            return Err(Error::invalid("speaker code length differs from the speaker table"));
        }
        if track.dims() != d + 1 {
            return Err(Error::invalid(format!(
                "expected {} coefficients, got {}",
                d + 1,
                track.dims()
            )));
        }
        for t in 0..track.frames() {
            frames.push((track.spectral(t), code.index));
        }
    }
    let count = frames.len() as f64;
    let mut mean = vec![0.0; d];
    for (f, _) in &frames {
        for (m, v) in mean.iter_mut().zip(f.iter()) {
            *m += v / count;
        }
    }
    let mut std = vec![0.0; d];
    for (f, _) in &frames {
        for ((s, v), m) in std.iter_mut().zip(f.iter()).zip(&mean) {
            *s += (v - m) * (v - m) / count;
        }
    }
    for s in std.iter_mut() {
        *s = s.sqrt().max(cfg.std_floor);
    }

    let mut model = VaeModel::<f64>::init(
        config.clone(),
        speakers.to_vec(),
        diffcore::derive_seed(cfg.seed, "vae-init"),
    )?;
    model.norm_mean = mean;
    model.norm_std = std;
    let normalized: Vec<(Vec<f64>, usize)> = frames.iter().map(|(f, s)| (model.normalize(f), *s)).collect();

    let gather = |idx: &[usize]| -> (Tensor<f64>, Vec<usize>) {
        let n = idx.len();
        let mut data = vec![0.0; d * n];
        for (c, &i) in idx.iter().enumerate() {
            for k in 0..d {
                data[k * n + c] = normalized[i].0[k];
            }
        }
        (
            Tensor::matrix(d, n, data),
            idx.iter().map(|&i| normalized[i].1).collect(),
        )
    };
    let noise = |rng: &mut diffcore::Rng, n: usize| -> Tensor<f64> {
        Tensor::matrix(
            cfg.latent,
            n,
            (0..cfg.latent * n).map(|_| StandardNormal.sample(rng)).collect(),
        )
    };

    let mut rng = diffcore::rng(diffcore::derive_seed(cfg.seed, "vae-train"));
    let mut order: Vec<usize> = (0..normalized.len()).collect();
    order.shuffle(&mut rng);
    let eval_idx: Vec<usize> = order.iter().copied().take(cfg.eval_frames.max(1)).collect();
    let (eval_x, eval_codes) = gather(&eval_idx);
    let eval_eps = noise(&mut rng, eval_idx.len());
    let evaluate = |m: &VaeModel<f64>| -> Result<LossBreakdown> {
        let mut tape = Tape::new();
        let vars = m.params.bind_frozen(&mut tape);
        let (t, r, l) = elbo_on_tape(&mut tape, &vars, &config, eval_x.clone(), &eval_codes, eval_eps.clone());
        let get = |v: Var| tape.value(v).item();
        Ok(LossBreakdown {
            total: get(t),
            recon: get(r),
            latent: get(l),
        })
    };

    let mut adam = Adam::new(&model.params, cfg.adam);
    let mut history = TrainHistory::default();
    let mut cursor = order.len();
    for step in 0..cfg.steps {
        if step % cfg.eval_every == 0 {
            history.eval.push((step, evaluate(&model)?));
        }
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }
        let (x, codes) = gather(&batch);
        let eps = noise(&mut rng, batch.len());
        let mut tape = Tape::new();
        let vars = model.params.bind(&mut tape);
        let (total, recon, latent) = elbo_on_tape(&mut tape, &vars, &config, x, &codes, eps);
        let grads = match tape.backward(total) {
            Ok(g) => g,
            Err(e) => {
                return Err(Error::Diverged {
                    step,
                    reason: e.to_string(),
                })
            }
        };
        let loss = LossBreakdown {
            total: tape.value(total).item(),
            recon: tape.value(recon).item(),
            latent: tape.value(latent).item(),
        };
        if !loss.total.is_finite() {
            return Err(Error::Diverged {
                step,
                reason: "non-finite loss".into(),
            });
        }
        history.train.push(loss);
        adam.step(&mut model.params, &grads.take_all(&vars))
            .map_err(|e| Error::Diverged {
                step,
                reason: e.to_string(),
            })?;
        if step % 200 == 0 {
            log::debug!(
                "vae step {step}: total {:.4} recon {:.4} kl {:.4}",
                loss.total,
                loss.recon,
                loss.latent
            );
        }
    }
    history.eval.push((cfg.steps, evaluate(&model)?));
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{grad_check, GradCheck};

    fn small(n_spk: usize) -> VaeConfig {
        VaeConfig {
            input_dim: 4,
            hidden: 5,
            latent: 3,
            n_speakers: n_spk,
        }
    }

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i}")).collect()
    }

    #[test]
    fn speaker_codes_are_one_hot() {
        let c = SpeakerCode::new(2, 4).unwrap();
        assert_eq!(c.one_hot(), vec![0.0, 0.0, 1.0, 0.0]);
        assert_eq!(SpeakerCode::from_one_hot(&c.one_hot()).unwrap(), c);
        assert!(SpeakerCode::new(4, 4).is_err());
        assert!(SpeakerCode::from_one_hot(&[1.0, 1.0]).is_err());
        assert!(SpeakerCode::from_one_hot(&[0.5, 0.0]).is_err());
        assert!(SpeakerCode::from_one_hot(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn zero_network_is_silent() {
        let m = VaeModel::<f64>::zeros(VaeConfig::new(3), names(3)).unwrap();
        let p = m.encode(&[0.3; 34]).unwrap();
        assert!(p.mean.iter().chain(&p.log_var).all(|&v| v == 0.0));
        assert_eq!(p.kl(), 0.0);
        let y = m.code(1).unwrap();
        assert!(m.decode(&[0.7; 16], &y).unwrap().iter().all(|&v| v == 0.0));
        assert!(m.decode(&[0.7; 16], &SpeakerCode::new(0, 2).unwrap()).is_err());
    }

    #[test]
    fn encode_is_deterministic() {
        let m = VaeModel::<f64>::init(small(2), names(2), 5).unwrap();
        let h = [0.1, -0.4, 2.0, 0.3];
        assert_eq!(m.encode(&h).unwrap(), m.encode(&h).unwrap());
        assert!(m.encode(&[f64::NAN, 0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn kl_closed_form_examples() {
        let p = LatentPosterior {
            mean: vec![1.0; 5],
            log_var: vec![0.0; 5],
        };
        assert!((p.kl() - 2.5).abs() < 1e-15);
        let p = LatentPosterior {
            mean: vec![0.3, -2.0],
            log_var: vec![1.5, -3.0],
        };
        assert!(p.kl() > 0.0);
    }

    #[test]
    fn elbo_terms_add_up() {
        let m = VaeModel::<f64>::init(small(3), names(3), 8).unwrap();
        let y = m.code(2).unwrap();
        let l = m.elbo_loss(&[0.5, -1.0, 0.2, 0.0], &y, &[0.1, -0.3, 1.2]).unwrap();
        assert!((l.total - (l.recon + l.latent)).abs() < 1e-12);
        assert!(l.latent >= 0.0 && l.recon > 0.0);

        // zero network, zero input: perfect reconstruction and prior posterior
        let z = VaeModel::<f64>::zeros(small(3), names(3)).unwrap();
        let l = z.elbo_loss(&[0.0; 4], &y, &[0.4, 0.4, 0.4]).unwrap();
        assert_eq!((l.recon, l.latent, l.total), (0.0, 0.0, 0.0));
    }

    #[test]
    fn full_loss_passes_grad_check() {
        let m = VaeModel::<f64>::init(small(2), names(2), 11).unwrap();
        let mut m = m;
        // non-zero biases so every parameter is exercised away from zero
        for i in 0..m.params.len() {
            if m.params.name(i).contains(".b") {
                for (j, v) in m.params.tensor_mut(i).data_mut().iter_mut().enumerate() {
                    *v = 0.05 * (j as f64 + 1.0) * if i % 4 == 1 { 1.0 } else { -1.0 };
                }
            }
        }
        let x = Tensor::matrix(4, 2, vec![0.3, -0.2, 1.1, 0.4, -0.7, 0.0, 0.25, 0.9]);
        let eps = Tensor::matrix(3, 2, vec![0.5, -1.0, 0.2, 0.3, -0.4, 1.3]);
        let cfg = m.config.clone();
        let report = grad_check(
            &m.params,
            |tape, vars| elbo_on_tape(tape, vars, &cfg, x.clone(), &[0, 1], eps.clone()).0,
            GradCheck::new(1e-5, 1e-4),
        )
        .unwrap();
        assert!(report.passed, "max rel error {}", report.max_rel_error);
    }

    #[test]
    fn forward_keeps_everything_but_spectral_dims() {
        let mut track = crate::dsp::features::tests::toy_track(9, 35);
        track.kind = FeatureKind::Natural;
        let m = VaeModel::<f64>::init(VaeConfig::new(2), names(2), 3).unwrap();
        let own = m.code(0).unwrap();
        let r = m
            .forward(&track, &own, ForwardMode::Reconstruct, LatentChoice::Mean)
            .unwrap();
        assert_eq!(r.frames(), track.frames());
        assert_eq!(r.kind, FeatureKind::Reconstructed);
        assert_eq!(r.log_f0, track.log_f0);
        assert_eq!(r.energy, track.energy);
        for t in 0..9 {
            assert_eq!(r.mcc[t][0], track.mcc[t][0]);
        }
        let c = m
            .forward(&track, &m.code(1).unwrap(), ForwardMode::Convert, LatentChoice::Mean)
            .unwrap();
        assert_eq!(c.kind, FeatureKind::Converted);
        assert!(m
            .forward(&r, &own, ForwardMode::Reconstruct, LatentChoice::Mean)
            .is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut m = VaeModel::<f64>::init(VaeConfig::new(3), names(3), 4).unwrap();
        m.norm_mean = (0..34).map(|i| i as f64 * 0.1).collect();
        m.norm_std = (0..34).map(|i| 1.0 + i as f64).collect();
        let bytes = m.to_checkpoint().to_bytes();
        let back = VaeModel::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_checkpoint().to_bytes(), bytes);
    }
}
