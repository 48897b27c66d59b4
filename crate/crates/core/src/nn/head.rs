//! Classifier head pieces: spatial pooling, affine map, softmax cross-entropy.

use crate::error::{Error, Result};
use crate::nn::activation::softmax_values;
use crate::tape::{Backward, BackwardCtx, GradSink, Tape, Var};
use crate::tensor::{Scalar, Tensor};

struct PoolBackward {
    x: Var,
    spatial: usize,
}

impl<T: Scalar> Backward<T> for PoolBackward {
    fn backward(&self, _ctx: &BackwardCtx<'_, T>, g: &[T], sink: &mut GradSink<'_, T>) {
        let Some(slot) = sink.slot(self.x) else {
            return;
        };
        let inv = T::one() / T::lit(self.spatial as f64);
        for (bc, &gv) in g.iter().enumerate() {
            slot[bc * self.spatial..][..self.spatial]
                .iter_mut()
                .for_each(|s| *s += gv * inv);
        }
    }
}

struct CrossEntropyBackward<T> {
    logits: Var,
    probs: Vec<T>,
    labels: Vec<usize>,
    classes: usize,
}

impl<T: Scalar> Backward<T> for CrossEntropyBackward<T> {
    fn backward(&self, _ctx: &BackwardCtx<'_, T>, g: &[T], sink: &mut GradSink<'_, T>) {
        let Some(slot) = sink.slot(self.logits) else {
            return;
        };
        let scale = g[0] / T::lit(self.labels.len() as f64);
        for (n, &y) in self.labels.iter().enumerate() {
            for k in 0..self.classes {
                let p = self.probs[n * self.classes + k];
                let target = if k == y { T::one() } else { T::zero() };
                slot[n * self.classes + k] += scale * (p - target);
            }
        }
    }
}

impl<T: Scalar> Tape<T> {
    /// `[B, C, H, W] -> [B, C]` spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 4 {
            return Err(Error::shape("global_avg_pool", format!("rank-4 input, got {shape:?}")));
        }
        let spatial = shape[2] * shape[3];
        let inv = T::one() / T::lit(spatial as f64);
        let out: Vec<T> = self
            .value(x)
            .data()
            .chunks(spatial)
            .map(|c| c.iter().copied().sum::<T>() * inv)
            .collect();
        let value = Tensor::new(vec![shape[0], shape[1]], out)?;
        Ok(self.push_op(value, &[x], PoolBackward { x, spatial }))
    }

    /// `x · w + b` for `x: [B, C_in]`, `w: [C_in, C_out]`, `b: [C_out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        let n = self.shape(b).iter().product::<usize>();
        let b2 = self.reshape(b, vec![1, n])?;
        self.add(y, b2)
    }

    /// Mean negative log-softmax of the true class.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 || shape[0] != labels.len() {
            return Err(Error::shape(
                "cross_entropy",
                format!("logits {shape:?} with {} labels", labels.len()),
            ));
        }
        let classes = shape[1];
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::shape(
                "cross_entropy",
                format!("label {bad} out of range for {classes} classes"),
            ));
        }
        let xd = self.value(logits).data();
        let probs = softmax_values(&shape, xd, 1);
        let mut total = T::zero();
        for (n, &y) in labels.iter().enumerate() {
            let row = &xd[n * classes..][..classes];
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&v| (v - m).exp()).sum::<T>().ln() + m;
            total += lse - row[y];
        }
        let loss = total / T::lit(labels.len() as f64);
        Ok(self.push_op(
            Tensor::scalar(loss),
            &[logits],
            CrossEntropyBackward {
                logits,
                probs,
                labels: labels.to_vec(),
                classes,
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pool_of_constant_map() {
        let mut t = Tape::<f32>::new();
        let x = t.constant(Tensor::full(vec![2, 3, 4, 4], 1.25));
        let p = t.global_avg_pool(x).unwrap();
        assert_eq!(t.shape(p), &[2, 3]);
        assert!(t.value(p).data().iter().all(|&v| v == 1.25));
    }

    #[test]
    fn uniform_logits_loss_is_ln_k() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(Tensor::zeros(vec![3, 10]), true);
        let l = t.cross_entropy(x, &[0, 4, 9]).unwrap();
        assert!((t.value(l).data()[0] - 10f64.ln()).abs() < 1e-12);
        t.backward(l).unwrap();
        let g = t.grad(x).unwrap();
        // softmax - one_hot, averaged over the batch
        assert!((g.data()[0] - (0.1 - 1.0) / 3.0).abs() < 1e-12);
        assert!((g.data()[1] - 0.1 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_label_rejected() {
        let mut t = Tape::<f32>::new();
        let x = t.constant(Tensor::zeros(vec![1, 10]));
        assert!(t.cross_entropy(x, &[10]).is_err());
    }
}
