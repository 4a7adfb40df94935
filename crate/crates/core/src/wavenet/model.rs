use std::path::Path;

use rand::Rng as _;

use super::conditioning::{ConditioningPlan, COND_DIM};
use super::{receptive_field, Provenance, WaveNetConfig};
use crate::diffcore::{self, kernels, Checkpoint, ParamSet, Tape, Tensor, Var};
use crate::dsp::{MuLaw, MuLawCode, Waveform};
use crate::{Error, Result, Scalar};

/// Parameters per residual layer, in [`ParamSet`] order.
pub(crate) const PER_LAYER: usize = 7;
pub(crate) const CONV: usize = 0;
pub(crate) const COND_W: usize = 1;
pub(crate) const BIAS: usize = 2;
pub(crate) const SKIP_W: usize = 3;
pub(crate) const SKIP_B: usize = 4;
pub(crate) const RES_W: usize = 5;
pub(crate) const RES_B: usize = 6;
const LAYER_NAMES: [&str; PER_LAYER] = ["conv", "cond", "bias", "skip_w", "skip_b", "res_w", "res_b"];

/// Vocoder weights, conditioning normalization and provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveNetModel<T> {
    pub config: WaveNetConfig,
    pub params: ParamSet<T>,
    pub cond_mean: Vec<f64>,
    pub cond_std: Vec<f64>,
    pub provenance: Provenance,
    pub sample_rate: u32,
    /// Target speaker for fine-tuned models.
    pub speaker: Option<String>,
}

fn glorot<T: Scalar>(rng: &mut diffcore::Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor<T> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| T::of(rng.random_range(-a..a))).collect()).expect("shape")
}

impl<T: Scalar> WaveNetModel<T> {
    /// Random weights with the final projection zeroed, so the untrained
    /// model predicts the uniform distribution.
    pub fn init(config: WaveNetConfig, sample_rate: u32, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = diffcore::rng(seed);
        let (r, s, c, k) = (
            config.residual_channels,
            config.skip_channels,
            config.cond_dim,
            config.levels,
        );
        let mut params = ParamSet::new();
        params.push(
            "embed",
            Tensor::matrix(r, k, (0..r * k).map(|_| T::of(rng.random_range(-1.0..1.0))).collect()),
        );
        for l in 0..config.layers() {
            let name = |p: usize| format!("l{l}.{}", LAYER_NAMES[p]);
            params.push(name(CONV), glorot(&mut rng, &[2 * r, r, 2], 2 * r, 2 * r));
            params.push(name(COND_W), glorot(&mut rng, &[2 * r, c], c, 2 * r));
            params.push(name(BIAS), Tensor::column(vec![T::zero(); 2 * r]));
            params.push(name(SKIP_W), glorot(&mut rng, &[s, r], r, s));
            params.push(name(SKIP_B), Tensor::column(vec![T::zero(); s]));
            params.push(name(RES_W), glorot(&mut rng, &[r, r], r, r));
            params.push(name(RES_B), Tensor::column(vec![T::zero(); r]));
        }
        params.push("out1.w", glorot(&mut rng, &[s, s], s, s));
        params.push("out1.b", Tensor::column(vec![T::zero(); s]));
        params.push("out2.w", Tensor::zeros(&[k, s]));
        params.push("out2.b", Tensor::column(vec![T::zero(); k]));
        Ok(Self {
            config,
            params,
            cond_mean: vec![0.0; COND_DIM],
            cond_std: vec![1.0; COND_DIM],
            provenance: Provenance::SpeakerIndependent,
            sample_rate,
            speaker: None,
        })
    }

    /// Replaces the zeroed output projection with random weights.
    pub fn randomize_output_head(&mut self, seed: u64) {
        let mut rng = diffcore::rng(seed);
        let (k, s) = (self.config.levels, self.config.skip_channels);
        let i = self.head_index() + 2;
        *self.params.tensor_mut(i) = glorot(&mut rng, &[k, s], s, k);
    }

    pub fn receptive_field(&self) -> usize {
        receptive_field(&self.config)
    }

    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }

    pub(crate) fn layer_index(&self, l: usize, p: usize) -> usize {
        1 + l * PER_LAYER + p
    }

    pub(crate) fn head_index(&self) -> usize {
        1 + self.config.layers() * PER_LAYER
    }

    pub fn cast<U: Scalar>(&self) -> WaveNetModel<U> {
        WaveNetModel {
            config: self.config.clone(),
            params: self.params.cast(),
            cond_mean: self.cond_mean.clone(),
            cond_std: self.cond_std.clone(),
            provenance: self.provenance,
            sample_rate: self.sample_rate,
            speaker: self.speaker.clone(),
        }
    }

    /// Normalized conditioning frames as a `[COND_DIM × frames]` matrix.
    pub(crate) fn cond_frames(&self, plan: &ConditioningPlan) -> Tensor<T> {
        let f = plan.frames().len();
        let mut data = vec![T::zero(); COND_DIM * f];
        for (t, v) in plan.frames().iter().enumerate() {
            for k in 0..COND_DIM {
                data[k * f + t] = T::of((v[k] - self.cond_mean[k]) / self.cond_std[k]);
            }
        }
        Tensor::matrix(COND_DIM, f, data)
    }

    /// Network input codes for a waveform: the start code, then every
    /// sample but the last.
    pub fn input_codes(codes: &[MuLawCode]) -> Vec<usize> {
        std::iter::once(MuLawCode::START.index())
            .chain(codes.iter().take(codes.len().saturating_sub(1)).map(|c| c.index()))
            .collect()
    }

    /// Records the forward pass on `tape`. `inputs[u]` is the code fed at
    /// column `u`, `cond` is `[COND_DIM × F]` and `frame_of[u]` picks the
    /// conditioning frame of column `u`. Only columns in `keep` reach the
    /// returned `[levels × keep.len()]` logits.
    pub(crate) fn forward_on_tape(
        &self,
        tape: &mut Tape<T>,
        vars: &[Var],
        inputs: &[usize],
        cond: Tensor<T>,
        frame_of: &[usize],
        keep: &[usize],
    ) -> Result<Var> {
        let cond = tape.constant(cond);
        let mut h = tape.embedding(vars[0], inputs);
        let mut skip: Option<Var> = None;
        for (l, &d) in self.config.layer_dilations().iter().enumerate() {
            let p = |i: usize| vars[self.layer_index(l, i)];
            let conv = tape.causal_conv(h, p(CONV), d)?;
            let cproj = tape.linear(p(COND_W), cond, p(BIAS));
            let cproj = tape.select_cols(cproj, frame_of);
            let pre = tape.add(conv, cproj);
            let g = tape.gated_tanh(pre);
            let s = tape.linear(p(SKIP_W), g, p(SKIP_B));
            skip = Some(match skip {
                Some(acc) => tape.add(acc, s),
                None => s,
            });
            if l + 1 < self.config.layers() {
                let res = tape.linear(p(RES_W), g, p(RES_B));
                h = tape.add(h, res);
            }
        }
        let head = self.head_index();
        let skip = tape.select_cols(skip.expect("at least one layer"), keep);
        let a = tape.relu(skip);
        let a = tape.linear(vars[head], a, vars[head + 1]);
        let a = tape.relu(a);
        Ok(tape.linear(vars[head + 2], a, vars[head + 3]))
    }

    /// Tape-free forward over a whole sequence: `[levels × inputs.len()]`.
    pub(crate) fn forward_plain(&self, inputs: &[usize], cond: &Tensor<T>, frame_of: &[usize]) -> Tensor<T> {
        let n = inputs.len();
        let r = self.config.residual_channels;
        let emb = self.params.tensor(0);
        let levels = emb.cols();
        let mut h = Tensor::matrix(
            r,
            n,
            (0..r)
                .flat_map(|row| inputs.iter().map(move |&c| emb.data()[row * levels + c]))
                .collect(),
        );
        let mut skip: Option<Tensor<T>> = None;
        for (l, &d) in self.config.layer_dilations().iter().enumerate() {
            let p = |i: usize| self.params.tensor(self.layer_index(l, i));
            let mut pre = kernels::causal_conv(&h, p(CONV), d);
            let cproj = kernels::linear(p(COND_W), cond, p(BIAS));
            let f = cproj.cols();
            for (row, out) in pre.data_mut().chunks_mut(n).enumerate() {
                let src = &cproj.data()[row * f..(row + 1) * f];
                for (o, &fi) in out.iter_mut().zip(frame_of) {
                    *o += src[fi];
                }
            }
            let g = kernels::gated_tanh(&pre);
            let s = kernels::linear(p(SKIP_W), &g, p(SKIP_B));
            match &mut skip {
                Some(acc) => acc.add_assign(&s),
                None => skip = Some(s),
            }
            if l + 1 < self.config.layers() {
                h.add_assign(&kernels::linear(p(RES_W), &g, p(RES_B)));
            }
        }
        let head = self.head_index();
        let relu = |t: Tensor<T>| t.map(|v| if v > T::zero() { v } else { T::zero() });
        let a = relu(skip.expect("at least one layer"));
        let a = relu(kernels::linear(
            self.params.tensor(head),
            &a,
            self.params.tensor(head + 1),
        ));
        kernels::linear(self.params.tensor(head + 2), &a, self.params.tensor(head + 3))
    }

    /// Logits `[levels × plan.len()]` for explicit network inputs (column
    /// `t` holds the code of sample `t − 1`). Used by causality probes.
    pub fn logits_for_inputs(&self, inputs: &[usize], plan: &ConditioningPlan) -> Result<Tensor<T>> {
        if inputs.len() != plan.len() {
            return Err(Error::invalid(format!(
                "{} inputs for a plan of {} samples",
                inputs.len(),
                plan.len()
            )));
        }
        if let Some(&c) = inputs.iter().find(|&&c| c >= self.config.levels) {
            return Err(Error::invalid(format!("input code {c} out of range")));
        }
        let frame_of: Vec<usize> = (0..plan.len()).map(|n| n / plan.hop()).collect();
        Ok(self.forward_plain(inputs, &self.cond_frames(plan), &frame_of))
    }

    pub fn to_checkpoint(&self) -> Checkpoint<T> {
        let mut params = self.params.clone();
        params.push(
            "cond.mean",
            Tensor::column(self.cond_mean.iter().map(|&v| T::of(v)).collect()),
        );
        params.push(
            "cond.std",
            Tensor::column(self.cond_std.iter().map(|&v| T::of(v)).collect()),
        );
        let dil: Vec<String> = self.config.dilations.iter().map(|d| d.to_string()).collect();
        Checkpoint::new(params)
            .with_meta("model", "wavenet")
            .with_meta("n_stacks", self.config.n_stacks.to_string())
            .with_meta("dilations", dil.join(","))
            .with_meta("residual_channels", self.config.residual_channels.to_string())
            .with_meta("skip_channels", self.config.skip_channels.to_string())
            .with_meta("cond_dim", self.config.cond_dim.to_string())
            .with_meta("levels", self.config.levels.to_string())
            .with_meta("sample_rate", self.sample_rate.to_string())
            .with_meta("provenance", self.provenance.as_str())
            .with_meta("speaker", self.speaker.clone().unwrap_or_default())
    }

    pub fn from_checkpoint(ck: &Checkpoint<T>) -> Result<Self> {
        if ck.meta("model") != Some("wavenet") {
            return Err(Error::Format("checkpoint does not hold a WaveNet".into()));
        }
        fn num<N: std::str::FromStr>(ck_value: &str, key: &str) -> Result<N>
        where
            N::Err: std::fmt::Display,
        {
            ck_value.parse().map_err(|e| Error::Format(format!("bad {key}: {e}")))
        }
        let get = |k: &str| -> Result<&str> { Ok(ck.require(k)?) };
        let dilations = get("dilations")?
            .split(',')
            .map(|d| num::<usize>(d, "dilations"))
            .collect::<Result<Vec<_>>>()?;
        let config = WaveNetConfig {
            n_stacks: num(get("n_stacks")?, "n_stacks")?,
            dilations,
            residual_channels: num(get("residual_channels")?, "residual_channels")?,
            skip_channels: num(get("skip_channels")?, "skip_channels")?,
            cond_dim: num(get("cond_dim")?, "cond_dim")?,
            levels: num(get("levels")?, "levels")?,
        };
        let mut model = Self::init(config, num(get("sample_rate")?, "sample_rate")?, 0)?;
        for i in 0..model.params.len() {
            let name = model.params.name(i).to_string();
            let t = ck
                .params
                .get(&name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks {name}")))?;
            if t.shape() != model.params.tensor(i).shape() {
                return Err(Error::Format(format!("{name} has shape {:?}", t.shape())));
            }
            *model.params.tensor_mut(i) = t.clone();
        }
        let stats = |name: &str| -> Result<Vec<f64>> {
            let t = ck
                .params
                .get(name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks {name}")))?;
            if t.len() != COND_DIM {
                return Err(Error::Format(format!("{name} has {} entries", t.len())));
            }
            Ok(t.data().iter().map(|v| v.to_f64_lossless()).collect())
        };
        model.cond_mean = stats("cond.mean")?;
        model.cond_std = stats("cond.std")?;
        model.provenance = Provenance::parse(get("provenance")?)?;
        model.speaker = Some(get("speaker")?.to_string()).filter(|s| !s.is_empty());
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Mean categorical cross-entropy (nats per sample) of the true codes
/// under the teacher-forced model.
pub fn teacher_forced_nll<T: Scalar>(model: &WaveNetModel<T>, wave: &Waveform, plan: &ConditioningPlan) -> Result<f64> {
    if wave.len() != plan.len() {
        return Err(Error::invalid(format!(
            "waveform has {} samples, conditioning covers {}",
            wave.len(),
            plan.len()
        )));
    }
    let codes = MuLaw::default().encode_slice(&wave.samples).codes;
    let inputs = WaveNetModel::<T>::input_codes(&codes);
    let logits = model.logits_for_inputs(&inputs, plan)?;
    let targets: Vec<usize> = codes.iter().map(|c| c.index()).collect();
    Ok(kernels::softmax_cross_entropy(&logits, &targets).to_f64_lossless())
}
