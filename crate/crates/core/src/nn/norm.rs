//! Batch and layer normalization over NCHW tensors.
//!
//! Both normalize with `eps = 1e-5` by default. Layer norm normalizes across
//! channels independently at every (batch, spatial) position; batch norm
//! normalizes each channel over (batch, height, width).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{Backward, BackwardCtx, GradSink, Tape, Var};
use crate::tensor::{Scalar, Tensor};

pub const NORM_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    BatchNorm,
    LayerNorm,
}

impl std::fmt::Display for NormKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NormKind::BatchNorm => "batch_norm",
            NormKind::LayerNorm => "layer_norm",
        })
    }
}

impl std::str::FromStr for NormKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "batch_norm" | "bn" => Ok(NormKind::BatchNorm),
            "layer_norm" | "ln" => Ok(NormKind::LayerNorm),
            _ => Err(Error::config(format!("unknown norm kind `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Batch-norm running statistics. The training loop is the only writer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T: Scalar = f32> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
    pub momentum: T,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: Tensor::zeros(vec![channels]),
            var: Tensor::ones(vec![channels]),
            momentum: T::lit(BN_MOMENTUM),
        }
    }

    pub fn cast<U: Scalar>(&self) -> RunningStats<U> {
        RunningStats {
            mean: self.mean.cast(),
            var: self.var.cast(),
            momentum: U::lit(self.momentum.to_f64().unwrap_or(BN_MOMENTUM)),
        }
    }
}

/// Channel count and per-channel inner size of a `[B, C, ...]` tensor.
fn channel_layout(op: &'static str, shape: &[usize], c_expected: usize) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::shape(op, format!("needs a channel axis, got {shape:?}")));
    }
    let (b, c) = (shape[0], shape[1]);
    if c != c_expected {
        return Err(Error::shape(
            op,
            format!("{c} channels but parameters for {c_expected}"),
        ));
    }
    Ok((b, c, shape[2..].iter().product()))
}

fn check_affine<T: Scalar>(op: &'static str, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<usize> {
    if gamma.rank() != 1 || gamma.shape() != beta.shape() {
        return Err(Error::shape(
            op,
            format!("gamma {:?} / beta {:?}", gamma.shape(), beta.shape()),
        ));
    }
    Ok(gamma.len())
}

struct LayerNormBackward<T> {
    x: Var,
    gamma: Var,
    beta: Var,
    xhat: Vec<T>,
    inv_std: Vec<T>,
    layout: (usize, usize, usize),
}

impl<T: Scalar> Backward<T> for LayerNormBackward<T> {
    fn backward(&self, ctx: &BackwardCtx<'_, T>, g: &[T], sink: &mut GradSink<'_, T>) {
        let (b, c, s) = self.layout;
        if let Some(dbeta) = sink.slot(self.beta) {
            for n in 0..b {
                for (ch, d) in dbeta.iter_mut().enumerate() {
                    *d += g[(n * c + ch) * s..][..s].iter().copied().sum::<T>();
                }
            }
        }
        if let Some(dgamma) = sink.slot(self.gamma) {
            for n in 0..b {
                for (ch, d) in dgamma.iter_mut().enumerate() {
                    let off = (n * c + ch) * s;
                    *d += g[off..off + s]
                        .iter()
                        .zip(&self.xhat[off..off + s])
                        .map(|(&a, &h)| a * h)
                        .sum::<T>();
                }
            }
        }
        let gamma = ctx.value(self.gamma).data();
        if let Some(dx) = sink.slot(self.x) {
            let cf = T::lit(c as f64);
            let mut sum_d = vec![T::zero(); s];
            let mut sum_dx = vec![T::zero(); s];
            for n in 0..b {
                sum_d.iter_mut().for_each(|v| *v = T::zero());
                sum_dx.iter_mut().for_each(|v| *v = T::zero());
                for (ch, &gm) in gamma.iter().enumerate() {
                    let off = (n * c + ch) * s;
                    for p in 0..s {
                        let d = g[off + p] * gm;
                        sum_d[p] += d;
                        sum_dx[p] += d * self.xhat[off + p];
                    }
                }
                for (ch, &gm) in gamma.iter().enumerate() {
                    let off = (n * c + ch) * s;
                    for p in 0..s {
                        let d = g[off + p] * gm;
                        let inv = self.inv_std[n * s + p];
                        dx[off + p] += inv / cf * (cf * d - sum_d[p] - self.xhat[off + p] * sum_dx[p]);
                    }
                }
            }
        }
    }
}

struct BatchNormBackward<T> {
    x: Var,
    gamma: Var,
    beta: Var,
    xhat: Vec<T>,
    inv_std: Vec<T>,
    layout: (usize, usize, usize),
    train: bool,
}

impl<T: Scalar> Backward<T> for BatchNormBackward<T> {
    fn backward(&self, ctx: &BackwardCtx<'_, T>, g: &[T], sink: &mut GradSink<'_, T>) {
        let (b, c, s) = self.layout;
        let mut sum_g = vec![T::zero(); c];
        let mut sum_gx = vec![T::zero(); c];
        for n in 0..b {
            for ch in 0..c {
                let off = (n * c + ch) * s;
                for p in off..off + s {
                    sum_g[ch] += g[p];
                    sum_gx[ch] += g[p] * self.xhat[p];
                }
            }
        }
        sink.accumulate(self.beta, &sum_g);
        sink.accumulate(self.gamma, &sum_gx);
        let gamma = ctx.value(self.gamma).data();
        if let Some(dx) = sink.slot(self.x) {
            let m = T::lit((b * s) as f64);
            for n in 0..b {
                for ch in 0..c {
                    let off = (n * c + ch) * s;
                    let inv = self.inv_std[ch];
                    let gm = gamma[ch];
                    for p in off..off + s {
                        dx[p] += if self.train {
                            gm * inv / m * (m * g[p] - sum_g[ch] - self.xhat[p] * sum_gx[ch])
                        } else {
                            gm * inv * g[p]
                        };
                    }
                }
            }
        }
    }
}

impl<T: Scalar> Tape<T> {
    /// Normalize across the channel axis at every (batch, spatial) position,
    /// then scale by `gamma` and shift by `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let c = check_affine("layer_norm", self.value(gamma), self.value(beta))?;
        let layout = channel_layout("layer_norm", self.shape(x), c)?;
        let (b, _, s) = layout;
        let xv = self.value(x);
        let xd = xv.data();
        let (gd, bd) = (self.value(gamma).data(), self.value(beta).data());
        let cf = T::lit(c as f64);
        let mut xhat = vec![T::zero(); xd.len()];
        let mut inv_std = vec![T::zero(); b * s];
        let mut out = vec![T::zero(); xd.len()];
        let mut mean = vec![T::zero(); s];
        let mut var = vec![T::zero(); s];
        for n in 0..b {
            mean.iter_mut().for_each(|v| *v = T::zero());
            var.iter_mut().for_each(|v| *v = T::zero());
            for ch in 0..c {
                let row = &xd[(n * c + ch) * s..][..s];
                for (m, &v) in mean.iter_mut().zip(row) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= cf);
            for ch in 0..c {
                let row = &xd[(n * c + ch) * s..][..s];
                for p in 0..s {
                    let d = row[p] - mean[p];
                    var[p] += d * d;
                }
            }
            for p in 0..s {
                inv_std[n * s + p] = T::one() / (var[p] / cf + eps).sqrt();
            }
            for ch in 0..c {
                let off = (n * c + ch) * s;
                for p in 0..s {
                    let h = (xd[off + p] - mean[p]) * inv_std[n * s + p];
                    xhat[off + p] = h;
                    out[off + p] = gd[ch] * h + bd[ch];
                }
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        Ok(self.push_op(
            value,
            &[x, gamma, beta],
            LayerNormBackward {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                layout,
            },
        ))
    }

    /// Batch normalization. Train mode uses batch statistics and blends them
    /// into `stats` (unbiased variance, as in common frameworks); eval mode
    /// applies the running statistics as a fixed affine map.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &mut RunningStats<T>,
        mode: Mode,
        eps: T,
    ) -> Result<Var> {
        let c = check_affine("batch_norm", self.value(gamma), self.value(beta))?;
        let layout = channel_layout("batch_norm", self.shape(x), c)?;
        if stats.mean.len() != c || stats.var.len() != c {
            return Err(Error::shape("batch_norm", "running statistics size mismatch"));
        }
        let (b, _, s) = layout;
        let count = b * s;
        let train = mode == Mode::Train;
        if train && count < 2 {
            return Err(Error::shape(
                "batch_norm",
                format!("training needs at least 2 values per channel, got {count}"),
            ));
        }
        let xv = self.value(x);
        let xd = xv.data();
        let (gd, bd) = (self.value(gamma).data(), self.value(beta).data());
        let (mean, var) = if train {
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for n in 0..b {
                for ch in 0..c {
                    mean[ch] += xd[(n * c + ch) * s..][..s].iter().copied().sum::<T>();
                }
            }
            let m = T::lit(count as f64);
            mean.iter_mut().for_each(|v| *v /= m);
            for n in 0..b {
                for ch in 0..c {
                    var[ch] += xd[(n * c + ch) * s..][..s]
                        .iter()
                        .map(|&v| (v - mean[ch]) * (v - mean[ch]))
                        .sum::<T>();
                }
            }
            var.iter_mut().for_each(|v| *v /= m);
            (mean, var)
        } else {
            (stats.mean.data().to_vec(), stats.var.data().to_vec())
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = vec![T::zero(); xd.len()];
        let mut out = vec![T::zero(); xd.len()];
        for n in 0..b {
            for ch in 0..c {
                let off = (n * c + ch) * s;
                for p in off..off + s {
                    let h = (xd[p] - mean[ch]) * inv_std[ch];
                    xhat[p] = h;
                    out[p] = gd[ch] * h + bd[ch];
                }
            }
        }
        if train {
            let mom = stats.momentum;
            let keep = T::one() - mom;
            let unbias = T::lit(count as f64) / T::lit((count - 1) as f64);
            for ch in 0..c {
                let rm = &mut stats.mean.data_mut()[ch];
                *rm = keep * *rm + mom * mean[ch];
                let rv = &mut stats.var.data_mut()[ch];
                *rv = keep * *rv + mom * var[ch] * unbias;
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        Ok(self.push_op(
            value,
            &[x, gamma, beta],
            BatchNormBackward {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                layout,
                train,
            },
        ))
    }
}
