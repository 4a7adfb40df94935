use crate::scalar::Scalar;

use super::params::ParamSet;
use super::tensor::Tensor;
use super::DiffError;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

/// Adaptive-moment optimizer state with bias-corrected updates.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &ParamSet<T>, config: AdamConfig) -> Self {
        let zeros = |p: &ParamSet<T>| -> Vec<Tensor<T>> { p.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect() };
        Self {
            config,
            step: 0,
            first: zeros(params),
            second: zeros(params),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. Nothing is modified when validation fails.
    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &[Tensor<T>]) -> Result<(), DiffError> {
        if grads.len() != params.len() || self.first.len() != params.len() {
            return Err(DiffError::Shape(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for (i, g) in grads.iter().enumerate() {
            if g.shape() != params.tensor(i).shape() {
                return Err(DiffError::Shape(format!(
                    "gradient for `{}` has shape {:?}, parameter has {:?}",
                    params.name(i),
                    g.shape(),
                    params.tensor(i).shape()
                )));
            }
            if !g.all_finite() {
                return Err(DiffError::NonFiniteGradient(params.name(i).to_string()));
            }
        }

        self.step += 1;
        let c = &self.config;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let bias1 = T::one() - T::of(c.beta1.powi(self.step as i32));
        let bias2 = T::one() - T::of(c.beta2.powi(self.step as i32));
        let (lr, eps) = (T::of(c.lr), T::of(c.eps));
        let one = T::one();

        for (i, g) in grads.iter().enumerate() {
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            let p = params.tensor_mut(i).data_mut();
            for j in 0..p.len() {
                let gj = g.data()[j];
                m[j] = b1 * m[j] + (one - b1) * gj;
                v[j] = b2 * v[j] + (one - b2) * gj * gj;
                let mhat = m[j] / bias1;
                let vhat = v[j] / bias2;
                p[j] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(v: f64) -> ParamSet<f64> {
        let mut p = ParamSet::new();
        p.push("w", Tensor::scalar(v));
        p
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = single(1.5);
        let mut opt = Adam::new(&p, AdamConfig::default());
        for _ in 0..5 {
            opt.step(&mut p, &[Tensor::scalar(0.0)]).unwrap();
        }
        assert_eq!(p.tensor(0).item(), 1.5);
    }

    #[test]
    fn first_step_is_unit_normalized() {
        // m̂ = 1, v̂ = 1 after bias correction, so Δ = −lr / (1 + eps)
        let mut p = single(0.0);
        let mut opt = Adam::new(&p, AdamConfig::with_lr(0.1));
        opt.step(&mut p, &[Tensor::scalar(1.0)]).unwrap();
        let expected = -0.1 / (1.0 + 1e-8);
        assert!((p.tensor(0).item() - expected).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_descends() {
        for g in [2.0, -0.3] {
            let mut p = single(0.0);
            let mut opt = Adam::new(&p, AdamConfig::default());
            let mut prev = 0.0;
            for _ in 0..100 {
                opt.step(&mut p, &[Tensor::scalar(g)]).unwrap();
                let now = p.tensor(0).item();
                assert!((now - prev) * g < 0.0);
                prev = now;
            }
        }
    }

    #[test]
    fn rejects_bad_gradients_without_mutation() {
        let mut p = single(1.0);
        let mut opt = Adam::new(&p, AdamConfig::default());
        assert!(opt.step(&mut p, &[Tensor::zeros(&[2])]).is_err());
        assert!(matches!(
            opt.step(&mut p, &[Tensor::scalar(f64::NAN)]),
            Err(DiffError::NonFiniteGradient(_))
        ));
        assert_eq!(p.tensor(0).item(), 1.0);
        assert_eq!(opt.steps_taken(), 0);
    }
}
