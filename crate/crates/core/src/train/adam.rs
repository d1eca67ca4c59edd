use crate::error::{Error, Result};
use crate::param::ParamStore;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Linear warm-up length in steps; 0 disables warm-up.
    pub warmup_steps: u64,
    /// Step at which a cosine decay reaches zero; 0 keeps the rate constant.
    pub decay_steps: u64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            warmup_steps: 0,
            decay_steps: 0,
        }
    }
}

/// Bias-corrected Adam with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub first: Vec<Tensor<T>>,
    pub second: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, params: &ParamStore<T>) -> Self {
        let zeros = || -> Vec<Tensor<T>> {
            params.iter().map(|p| Tensor::zeros(p.value.shape())).collect()
        };
        Self {
            config,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn learning_rate(&self) -> f64 {
        let (warm, decay) = (self.config.warmup_steps, self.config.decay_steps);
        let scale = if warm > 0 && self.step < warm {
            (self.step + 1) as f64 / warm as f64
        } else if decay > 0 {
            let frac = (self.step.min(decay) as f64) / decay as f64;
            0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
        } else {
            1.0
        };
        self.config.lr * scale
    }

    /// Applies one update from the accumulated gradients. Parameters are left
    /// untouched if any gradient is non-finite.
    pub fn update(&mut self, params: &mut ParamStore<T>) -> Result<()> {
        if let Some(p) = params.iter().find(|p| !p.grad.is_finite()) {
            return Err(Error::NonFiniteGradient(p.name.clone()));
        }
        let lr = T::of(self.learning_rate());
        self.step += 1;
        let c = &self.config;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let bc1 = T::of(1.0 - c.beta1.powi(self.step as i32));
        let bc2 = T::of(1.0 - c.beta2.powi(self.step as i32));
        let eps = T::of(c.eps);
        let wd = T::of(c.weight_decay);
        for ((p, m), v) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            let theta = p.value.data_mut();
            let grad = p.grad.data();
            for (((th, &gr), mi), vi) in theta
                .iter_mut()
                .zip(grad)
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = b1 * *mi + (T::one() - b1) * gr;
                *vi = b2 * *vi + (T::one() - b2) * gr * gr;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *th -= lr * (mhat / (vhat.sqrt() + eps) + wd * *th);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(values: &[f64]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("w", Tensor::new(vec![values.len()], values.to_vec()).unwrap());
        s
    }

    #[test]
    fn zero_gradient_no_decay_is_noop() {
        let mut s = store(&[1.0, -2.0]);
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let mut adam = Adam::new(cfg, &s);
        adam.update(&mut s).unwrap();
        assert_eq!(s.iter().next().unwrap().value.data(), &[1.0, -2.0]);
    }

    #[test]
    fn first_step_closed_form() {
        let mut s = store(&[0.5, 0.5]);
        s.iter_mut().next().unwrap().grad = Tensor::new(vec![2], vec![0.3, -2.0]).unwrap();
        let cfg = AdamConfig {
            lr: 1e-3,
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let mut adam = Adam::new(cfg.clone(), &s);
        adam.update(&mut s).unwrap();
        let v = s.iter().next().unwrap().value.data().to_vec();
        for (got, g) in v.iter().zip([0.3f64, -2.0]) {
            let want = 0.5 - cfg.lr * g / (g.abs() + cfg.eps);
            assert!((got - want).abs() < 1e-15, "{got} vs {want}");
        }
    }

    #[test]
    fn nan_gradient_aborts_with_name() {
        let mut s = store(&[1.0]);
        s.iter_mut().next().unwrap().grad = Tensor::scalar(f64::NAN);
        let mut adam = Adam::new(AdamConfig::default(), &s);
        match adam.update(&mut s) {
            Err(Error::NonFiniteGradient(name)) => assert_eq!(name, "w"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(s.iter().next().unwrap().value.data(), &[1.0]);
    }

    #[test]
    fn warmup_ramps_linearly() {
        let s = store(&[0.0]);
        let mut adam = Adam::new(
            AdamConfig {
                lr: 1.0,
                warmup_steps: 4,
                ..AdamConfig::default()
            },
            &s,
        );
        assert_eq!(adam.learning_rate(), 0.25);
        adam.step = 3;
        assert_eq!(adam.learning_rate(), 1.0);
    }

    #[test]
    fn cosine_decay_reaches_zero() {
        let s = store(&[0.0]);
        let mut adam = Adam::new(
            AdamConfig {
                lr: 2.0,
                decay_steps: 10,
                ..AdamConfig::default()
            },
            &s,
        );
        assert_eq!(adam.learning_rate(), 2.0);
        adam.step = 5;
        assert!((adam.learning_rate() - 1.0).abs() < 1e-12);
        adam.step = 12;
        assert_eq!(adam.learning_rate(), 0.0);
    }

    #[test]
    fn quadratic_bowl_decreases() {
        let mut s = store(&[3.0, -4.0, 1.5]);
        let mut adam = Adam::new(
            AdamConfig {
                lr: 0.01,
                weight_decay: 0.0,
                ..AdamConfig::default()
            },
            &s,
        );
        let loss = |s: &ParamStore<f64>| s.iter().next().unwrap().value.data().iter().map(|x| x * x).sum::<f64>();
        let mut prev = loss(&s);
        for _ in 0..100 {
            let p = s.iter_mut().next().unwrap();
            p.grad = p.value.map(|x| 2.0 * x);
            adam.update(&mut s).unwrap();
            let cur = loss(&s);
            assert!(cur < prev, "{cur} !< {prev}");
            prev = cur;
        }
    }
}
