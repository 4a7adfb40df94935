//! Sample-by-sample generation with per-layer activation histories.

use rand::Rng as _;

use super::conditioning::ConditioningPlan;
use super::model::{WaveNetModel, BIAS, COND_W, CONV, RES_B, RES_W, SKIP_B, SKIP_W};
use crate::diffcore::{self, kernels};
use crate::dsp::{MuLaw, MuLawCode, Waveform};
use crate::{Error, Result, Scalar};

/// `out = W x` for row-major `W: [out.len() × x.len()]`.
fn matvec<T: Scalar>(w: &[T], x: &[T], out: &mut [T]) {
    let n = x.len();
    for (o, row) in out.iter_mut().zip(w.chunks_exact(n)) {
        let mut acc = [T::zero(); 4];
        let mut chunks = row.chunks_exact(4).zip(x.chunks_exact(4));
        for (a, b) in &mut chunks {
            acc[0] += a[0] * b[0];
            acc[1] += a[1] * b[1];
            acc[2] += a[2] * b[2];
            acc[3] += a[3] * b[3];
        }
        let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
        for i in (n - n % 4)..n {
            s += row[i] * x[i];
        }
        *o = s;
    }
}

struct Layer<T> {
    dilation: usize,
    past: Vec<T>,
    current: Vec<T>,
    /// `[frames × 2R]`: conditioning projection plus bias per frame.
    cond: Vec<T>,
    skip_w: Vec<T>,
    skip_b: Vec<T>,
    res_w: Vec<T>,
    res_b: Vec<T>,
}

/// Incremental evaluator: feeds one input code per step and returns the
/// logits for that step, reusing every earlier activation.
pub(crate) struct Generator<'m, T: Scalar> {
    model: &'m WaveNetModel<T>,
    layers: Vec<Layer<T>>,
    hop: usize,
    hist: Vec<Vec<T>>,
    t: usize,
    zeros: Vec<T>,
    a: Vec<T>,
    tmp: Vec<T>,
    g: Vec<T>,
    skip: Vec<T>,
    sk: Vec<T>,
    res: Vec<T>,
    z1: Vec<T>,
    logits: Vec<T>,
}

impl<'m, T: Scalar> Generator<'m, T> {
    pub(crate) fn new(model: &'m WaveNetModel<T>, plan: &ConditioningPlan) -> Self {
        let n = plan.len();
        let r = model.config.residual_channels;
        let s = model.config.skip_channels;
        let frames = model.cond_frames(plan);
        let nf = frames.cols();
        let layers: Vec<Layer<T>> = model
            .config
            .layer_dilations()
            .into_iter()
            .enumerate()
            .map(|(l, d)| {
                let p = |i: usize| model.params.tensor(model.layer_index(l, i));
                let w = p(CONV).data();
                let mut past = vec![T::zero(); 2 * r * r];
                let mut current = vec![T::zero(); 2 * r * r];
                for o in 0..2 * r {
                    for i in 0..r {
                        past[o * r + i] = w[(o * r + i) * 2];
                        current[o * r + i] = w[(o * r + i) * 2 + 1];
                    }
                }
                let proj = kernels::linear(p(COND_W), &frames, p(BIAS));
                let mut cond = vec![T::zero(); nf * 2 * r];
                for row in 0..2 * r {
                    for f in 0..nf {
                        cond[f * 2 * r + row] = proj.data()[row * nf + f];
                    }
                }
                Layer {
                    dilation: d,
                    past,
                    current,
                    cond,
                    skip_w: p(SKIP_W).data().to_vec(),
                    skip_b: p(SKIP_B).data().to_vec(),
                    res_w: p(RES_W).data().to_vec(),
                    res_b: p(RES_B).data().to_vec(),
                }
            })
            .collect();
        Self {
            hist: (0..layers.len()).map(|_| vec![T::zero(); n * r]).collect(),
            layers,
            hop: plan.hop(),
            t: 0,
            zeros: vec![T::zero(); r],
            a: vec![T::zero(); 2 * r],
            tmp: vec![T::zero(); 2 * r],
            g: vec![T::zero(); r],
            skip: vec![T::zero(); s],
            sk: vec![T::zero(); s],
            res: vec![T::zero(); r],
            z1: vec![T::zero(); s],
            logits: vec![T::zero(); model.config.levels],
            model,
        }
    }

    /// Logits for the next step given its input code.
    pub(crate) fn step(&mut self, input: usize) -> &[T] {
        let model = self.model;
        let r = model.config.residual_channels;
        let levels = model.config.levels;
        let t = self.t;
        let f = t / self.hop;
        let emb = model.params.tensor(0);
        for (i, h) in self.hist[0][t * r..(t + 1) * r].iter_mut().enumerate() {
            *h = emb.data()[i * levels + input];
        }
        self.skip.iter_mut().for_each(|v| *v = T::zero());
        let n_layers = self.layers.len();
        for (l, layer) in self.layers.iter().enumerate() {
            let (cur_lo, cur_hi) = (t * r, (t + 1) * r);
            let past = if t >= layer.dilation {
                &self.hist[l][(t - layer.dilation) * r..(t - layer.dilation + 1) * r]
            } else {
                &self.zeros[..]
            };
            matvec(&layer.past, past, &mut self.a);
            matvec(&layer.current, &self.hist[l][cur_lo..cur_hi], &mut self.tmp);
            let cp = &layer.cond[f * 2 * r..(f + 1) * 2 * r];
            for ((ai, &ti), &ci) in self.a.iter_mut().zip(&self.tmp).zip(cp) {
                *ai += ti + ci;
            }
            for i in 0..r {
                self.g[i] = self.a[i].tanh() * kernels::sigmoid(self.a[r + i]);
            }
            matvec(&layer.skip_w, &self.g, &mut self.sk);
            for ((acc, &v), &b) in self.skip.iter_mut().zip(&self.sk).zip(&layer.skip_b) {
                *acc += v + b;
            }
            if l + 1 < n_layers {
                matvec(&layer.res_w, &self.g, &mut self.res);
                let (lo, hi) = self.hist.split_at_mut(l + 1);
                let src = &lo[l][cur_lo..cur_hi];
                for (((dst, &x), &rv), &rb) in hi[0][cur_lo..cur_hi]
                    .iter_mut()
                    .zip(src)
                    .zip(&self.res)
                    .zip(&layer.res_b)
                {
                    *dst = x + rv + rb;
                }
            }
        }
        let head = model.head_index();
        let (w1, b1) = (model.params.tensor(head).data(), model.params.tensor(head + 1).data());
        let (w2, b2) = (
            model.params.tensor(head + 2).data(),
            model.params.tensor(head + 3).data(),
        );
        for v in self.skip.iter_mut() {
            *v = v.max(T::zero());
        }
        matvec(w1, &self.skip, &mut self.z1);
        for (v, &b) in self.z1.iter_mut().zip(b1) {
            *v = (*v + b).max(T::zero());
        }
        matvec(w2, &self.z1, &mut self.logits);
        for (v, &b) in self.logits.iter_mut().zip(b2) {
            *v += b;
        }
        self.t += 1;
        &self.logits
    }
}

/// Draws a waveform of `plan.len()` samples from the model at temperature
/// one. The same seed gives the same waveform.
pub fn sample<T: Scalar>(model: &WaveNetModel<T>, plan: &ConditioningPlan, seed: u64) -> Result<Waveform> {
    if plan.is_empty() {
        return Err(Error::invalid("empty conditioning plan"));
    }
    let levels = model.config.levels;
    let mut gen = Generator::new(model, plan);
    let mut probs = vec![0.0f64; levels];
    let mu = MuLaw::default();
    let mut rng = diffcore::rng(seed);
    let mut prev = MuLawCode::START.index();
    let mut out = Vec::with_capacity(plan.len());
    for _ in 0..plan.len() {
        let logits = gen.step(prev);
        let max = logits.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.to_f64_lossless()));
        let mut total = 0.0;
        for (p, v) in probs.iter_mut().zip(logits) {
            *p = (v.to_f64_lossless() - max).exp();
            total += *p;
        }
        let u: f64 = rng.random::<f64>() * total;
        let mut cum = 0.0;
        let mut code = levels - 1;
        for (k, &p) in probs.iter().enumerate() {
            cum += p;
            if u < cum {
                code = k;
                break;
            }
        }
        out.push(mu.decode::<f64>(MuLawCode(code as u8)));
        prev = code;
    }
    Ok(Waveform::new(out, model.sample_rate))
}
