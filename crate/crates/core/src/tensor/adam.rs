use serde::{Deserialize, Serialize};

use super::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Bias-corrected Adam with optional L2 weight decay folded into the gradient.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub cfg: AdamConfig,
    pub step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(cfg: AdamConfig, params: &[Tensor<T>]) -> Self {
        Adam {
            cfg,
            step: 0,
            m: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
        }
    }

    pub fn update(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::Shape(format!(
                "adam tracks {} tensors, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.numel() != self.m[i].len() || g.shape != p.shape {
                return Err(Error::Shape(format!(
                    "adam tensor {i}: param {:?}, grad {:?}",
                    p.shape, g.shape
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c = &self.cfg;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let bc1 = T::of(1.0 - c.beta1.powi(t));
        let bc2 = T::of(1.0 - c.beta2.powi(t));
        let (lr, eps, wd) = (T::of(c.lr), T::of(c.eps), T::of(c.weight_decay));
        let one = T::one();
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.data.len() {
                let gj = g.data[j] + wd * p.data[j];
                m[j] = b1 * m[j] + (one - b1) * gj;
                v[j] = b2 * v[j] + (one - b2) * gj * gj;
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                p.data[j] = p.data[j] - lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_is_lr() {
        let mut p = vec![Tensor::<f64>::scalar(0.5)];
        let g = vec![Tensor::scalar(1.0)];
        let mut a = Adam::new(AdamConfig::default(), &p);
        a.update(&mut p, &g).unwrap();
        // m̂ = 1, v̂ = 1, so the step is lr / (1 + eps).
        assert!((0.5 - p[0].item() - 1e-3 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_keeps_param() {
        let mut p = vec![Tensor::<f64>::new(&[2], vec![1.0, -2.0]).unwrap()];
        let g = vec![Tensor::zeros(&[2])];
        let mut a = Adam::new(AdamConfig::default(), &p);
        for _ in 0..5 {
            a.update(&mut p, &g).unwrap();
        }
        assert_eq!(p[0].data, vec![1.0, -2.0]);
    }

    #[test]
    fn constant_gradient_descends_monotonically() {
        let mut p = vec![Tensor::<f64>::scalar(0.0)];
        let g = vec![Tensor::scalar(0.3)];
        let mut a = Adam::new(AdamConfig::default(), &p);
        let mut prev = 0.0;
        for _ in 0..1000 {
            a.update(&mut p, &g).unwrap();
            assert!(p[0].item() < prev);
            prev = p[0].item();
        }
        assert!((prev + 1.0).abs() < 1e-6);
    }

    #[test]
    fn shape_mismatch() {
        let mut p = vec![Tensor::<f32>::zeros(&[2])];
        let mut a = Adam::new(AdamConfig::default(), &p);
        assert!(a.update(&mut p, &[Tensor::zeros(&[3])]).is_err());
    }
}
