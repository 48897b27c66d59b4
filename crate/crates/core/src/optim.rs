//! Adam with bias correction and the cosine learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const LR_MAX: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam<T: Scalar = f32> {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &[Tensor<T>], config: AdamConfig) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();
        Adam {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn moments(&self) -> (&[Tensor<T>], &[Tensor<T>]) {
        (&self.m, &self.v)
    }

    /// One update at learning rate `lr`. Nothing changes if any gradient is
    /// non-finite.
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(
                "adam",
                format!(
                    "{} params, {} grads, state for {}",
                    params.len(),
                    grads.len(),
                    self.m.len()
                ),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.m[i].shape() {
                return Err(Error::shape(
                    "adam",
                    format!("param {i}: {:?} vs grad {:?}", p.shape(), g.shape()),
                ));
            }
            if !g.all_finite() {
                return Err(Error::Numerical(format!("non-finite gradient for parameter {i}")));
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as f64;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - c.beta1), T::lit(1.0 - c.beta2));
        let bc1 = T::lit(1.0 - c.beta1.powf(t));
        let bc2 = T::lit(1.0 - c.beta2.powf(t));
        let (lr, eps) = (T::lit(lr), T::lit(c.eps));
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(&mut self.v)) {
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = b1 * *mv + one_b1 * gv;
                *vv = b2 * *vv + one_b2 * gv * gv;
                let mh = *mv / bc1;
                let vh = *vv / bc2;
                *pv -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// `lr_min + ½(lr_max − lr_min)(1 + cos(π·step/total))`, clamped to `lr_min`
/// past the end.
pub fn cosine_lr(step: u64, total_steps: u64, lr_max: f64, lr_min: f64) -> f64 {
    if total_steps == 0 || step >= total_steps {
        return if total_steps == 0 && step == 0 { lr_max } else { lr_min };
    }
    let frac = step as f64 / total_steps as f64;
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (std::f64::consts::PI * frac).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_sign() {
        let mut p = vec![Tensor::<f64>::vector(vec![1.0, -2.0, 0.5])];
        let g = vec![Tensor::vector(vec![0.3, -4.0, 0.0])];
        let mut opt = Adam::new(&p, AdamConfig::default());
        opt.step(&mut p, &g, 1e-4).unwrap();
        let d = p[0].data();
        assert!((d[0] - (1.0 - 1e-4)).abs() < 1e-10);
        assert!((d[1] - (-2.0 + 1e-4)).abs() < 1e-10);
        assert_eq!(d[2], 0.5);
    }

    #[test]
    fn non_finite_gradient_aborts_without_change() {
        let mut p = vec![Tensor::<f32>::vector(vec![1.0, 2.0])];
        let g = vec![Tensor::vector(vec![f32::NAN, 1.0])];
        let mut opt = Adam::new(&p, AdamConfig::default());
        assert!(matches!(opt.step(&mut p, &g, 1e-3), Err(Error::Numerical(_))));
        assert_eq!(p[0].data(), &[1.0, 2.0]);
        assert_eq!(opt.step, 0);
    }

    #[test]
    fn schedule_endpoints() {
        assert_eq!(cosine_lr(0, 100, 1e-4, 0.0), 1e-4);
        assert!(cosine_lr(100, 100, 1e-4, 0.0).abs() < 1e-20);
        assert!((cosine_lr(50, 100, 1e-4, 2e-5) - 6e-5).abs() < 1e-15);
        assert_eq!(cosine_lr(150, 100, 1e-4, 1e-6), 1e-6);
    }
}
