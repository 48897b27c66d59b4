use crate::error::{Error, Result};
use crate::tape::{Backward, BackwardCtx, GradSink, Tape, Var};
use crate::tensor::{Scalar, Tensor};

/// Channel order produced by the (groups, C/groups) transpose rule:
/// output channel `j` reads input channel `perm[j]`.
pub fn shuffle_permutation(channels: usize, groups: usize) -> Result<Vec<usize>> {
    if groups == 0 || !channels.is_multiple_of(groups) {
        return Err(Error::shape(
            "channel_shuffle",
            format!("{groups} groups do not divide {channels} channels"),
        ));
    }
    let per = channels / groups;
    Ok((0..channels).map(|j| (j % groups) * per + j / groups).collect())
}

pub fn inverse_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (j, &i) in perm.iter().enumerate() {
        inv[i] = j;
    }
    inv
}

struct ConcatBackward {
    parts: Vec<(Var, usize)>,
    batch: usize,
    total: usize,
    inner: usize,
}

impl<T: Scalar> Backward<T> for ConcatBackward {
    fn backward(&self, _ctx: &BackwardCtx<'_, T>, g: &[T], sink: &mut GradSink<'_, T>) {
        let mut start = 0;
        for &(v, c) in &self.parts {
            if let Some(slot) = sink.slot(v) {
                for n in 0..self.batch {
                    let src = &g[(n * self.total + start) * self.inner..][..c * self.inner];
                    let dst = &mut slot[n * c * self.inner..][..c * self.inner];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
            start += c;
        }
    }
}

struct PermuteBackward {
    x: Var,
    perm: Vec<usize>,
    batch: usize,
    inner: usize,
}

impl<T: Scalar> Backward<T> for PermuteBackward {
    fn backward(&self, _ctx: &BackwardCtx<'_, T>, g: &[T], sink: &mut GradSink<'_, T>) {
        let Some(slot) = sink.slot(self.x) else {
            return;
        };
        let c = self.perm.len();
        for n in 0..self.batch {
            for (j, &i) in self.perm.iter().enumerate() {
                let src = &g[(n * c + j) * self.inner..][..self.inner];
                let dst = &mut slot[(n * c + i) * self.inner..][..self.inner];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
    }
}

impl<T: Scalar> Tape<T> {
    /// Concatenate `[B, C_i, ...]` tensors along channels, blocks in order.
    pub fn channel_concat(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs.first().ok_or_else(|| Error::shape("channel_concat", "no inputs"))?;
        let s0 = self.shape(*first).to_vec();
        if s0.len() < 2 {
            return Err(Error::shape("channel_concat", format!("rank of {s0:?}")));
        }
        let mut parts = Vec::with_capacity(xs.len());
        for &x in xs {
            let s = self.shape(x);
            if s.len() != s0.len() || s[0] != s0[0] || s[2..] != s0[2..] {
                return Err(Error::shape(
                    "channel_concat",
                    format!("{s:?} does not match {s0:?} outside the channel axis"),
                ));
            }
            parts.push((x, s[1]));
        }
        let batch = s0[0];
        let inner: usize = s0[2..].iter().product();
        let total: usize = parts.iter().map(|p| p.1).sum();
        let mut out = Vec::with_capacity(batch * total * inner);
        for n in 0..batch {
            for &(x, c) in &parts {
                out.extend_from_slice(&self.value(x).data()[n * c * inner..][..c * inner]);
            }
        }
        let mut shape = s0.clone();
        shape[1] = total;
        let value = Tensor::new(shape, out)?;
        let parents: Vec<Var> = xs.to_vec();
        Ok(self.push_op(
            value,
            &parents,
            ConcatBackward {
                parts,
                batch,
                total,
                inner,
            },
        ))
    }

    /// Reorder channels: output channel `j` is input channel `perm[j]`.
    pub fn permute_channels(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 || shape[1] != perm.len() {
            return Err(Error::shape(
                "permute_channels",
                format!("permutation of {} on {shape:?}", perm.len()),
            ));
        }
        let mut seen = vec![false; perm.len()];
        for &i in perm {
            if i >= perm.len() || std::mem::replace(&mut seen[i], true) {
                return Err(Error::shape("permute_channels", "not a permutation"));
            }
        }
        let (batch, c) = (shape[0], shape[1]);
        let inner: usize = shape[2..].iter().product();
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(xd.len());
        for n in 0..batch {
            for &i in perm {
                out.extend_from_slice(&xd[(n * c + i) * inner..][..inner]);
            }
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.push_op(
            value,
            &[x],
            PermuteBackward {
                x,
                perm: perm.to_vec(),
                batch,
                inner,
            },
        ))
    }

    pub fn channel_shuffle(&mut self, x: Var, groups: usize) -> Result<Var> {
        let c = self
            .shape(x)
            .get(1)
            .copied()
            .ok_or_else(|| Error::shape("channel_shuffle", "missing channel axis"))?;
        let perm = shuffle_permutation(c, groups)?;
        self.permute_channels(x, &perm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_preserves_blocks() {
        let mut t = Tape::<f32>::new();
        let a = t.constant(Tensor::new(vec![1, 2, 1, 1], vec![1., 2.]).unwrap());
        let b = t.constant(Tensor::new(vec![1, 3, 1, 1], vec![3., 4., 5.]).unwrap());
        let c = t.channel_concat(&[a, b]).unwrap();
        assert_eq!(t.shape(c), &[1, 5, 1, 1]);
        assert_eq!(t.value(c).data(), &[1., 2., 3., 4., 5.]);
    }

    #[test]
    fn concat_rejects_spatial_mismatch() {
        let mut t = Tape::<f32>::new();
        let a = t.constant(Tensor::zeros(vec![1, 2, 2, 2]));
        let b = t.constant(Tensor::zeros(vec![1, 2, 3, 3]));
        assert!(matches!(t.channel_concat(&[a, b]), Err(Error::Shape { .. })));
    }

    #[test]
    fn shuffle_transpose_rule() {
        assert_eq!(shuffle_permutation(6, 2).unwrap(), vec![0, 3, 1, 4, 2, 5]);
        assert_eq!(shuffle_permutation(5, 1).unwrap(), vec![0, 1, 2, 3, 4]);
        assert!(shuffle_permutation(5, 2).is_err());
    }

    #[test]
    fn shuffle_then_inverse_is_identity() {
        let mut t = Tape::<f32>::new();
        let data: Vec<f32> = (0..24).map(|v| v as f32).collect();
        let x = t.constant(Tensor::new(vec![2, 6, 2, 1], data.clone()).unwrap());
        let s = t.channel_shuffle(x, 3).unwrap();
        let inv = inverse_permutation(&shuffle_permutation(6, 3).unwrap());
        let back = t.permute_channels(s, &inv).unwrap();
        assert_eq!(t.value(back).data(), data.as_slice());
    }
}
