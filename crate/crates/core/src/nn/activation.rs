//! Pointwise activations, softmax and the softmax linear unit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{Backward, BackwardCtx, GradSink, Tape, Var};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Relu6,
    Hardswish,
    /// tanh approximation
    Gelu,
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Relu6 => "relu6",
            Activation::Hardswish => "hardswish",
            Activation::Gelu => "gelu",
        })
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "relu6" => Ok(Activation::Relu6),
            "hardswish" => Ok(Activation::Hardswish),
            "gelu" => Ok(Activation::Gelu),
            _ => Err(Error::config(format!("unknown activation `{s}`"))),
        }
    }
}

const GELU_C: f64 = 0.044_715;
// sqrt(2 / pi)
const GELU_K: f64 = 0.797_884_560_802_865_4;

impl Activation {
    pub fn apply<T: Scalar>(self, x: T) -> T {
        let zero = T::zero();
        let three = T::lit(3.0);
        let six = T::lit(6.0);
        match self {
            Activation::Relu => x.max(zero),
            Activation::Relu6 => x.max(zero).min(six),
            Activation::Hardswish => x * (x + three).max(zero).min(six) / six,
            Activation::Gelu => {
                let inner = T::lit(GELU_K) * (x + T::lit(GELU_C) * x * x * x);
                T::lit(0.5) * x * (T::one() + inner.tanh())
            }
        }
    }

    /// Derivative. relu and relu6 use 0 at their kinks.
    pub fn derivative<T: Scalar>(self, x: T) -> T {
        let zero = T::zero();
        let one = T::one();
        let three = T::lit(3.0);
        match self {
            Activation::Relu => {
                if x > zero {
                    one
                } else {
                    zero
                }
            }
            Activation::Relu6 => {
                if x > zero && x < T::lit(6.0) {
                    one
                } else {
                    zero
                }
            }
            Activation::Hardswish => {
                if x < -three {
                    zero
                } else if x > three {
                    one
                } else {
                    (T::lit(2.0) * x + three) / T::lit(6.0)
                }
            }
            Activation::Gelu => {
                let k = T::lit(GELU_K);
                let c = T::lit(GELU_C);
                let inner = k * (x + c * x * x * x);
                let th = inner.tanh();
                let sech2 = one - th * th;
                T::lit(0.5) * (one + th) + T::lit(0.5) * x * sech2 * k * (one + T::lit(3.0) * c * x * x)
            }
        }
    }
}

struct ActBackward {
    x: Var,
    kind: Activation,
}

impl<T: Scalar> Backward<T> for ActBackward {
    fn backward(&self, ctx: &BackwardCtx<'_, T>, g: &[T], sink: &mut GradSink<'_, T>) {
        let xd = ctx.value(self.x).data();
        if let Some(slot) = sink.slot(self.x) {
            for ((s, &gi), &xi) in slot.iter_mut().zip(g).zip(xd) {
                *s += gi * self.kind.derivative(xi);
            }
        }
    }
}

struct SoftmaxBackward {
    x: Var,
    outer: usize,
    len: usize,
    inner: usize,
}

impl<T: Scalar> Backward<T> for SoftmaxBackward {
    fn backward(&self, ctx: &BackwardCtx<'_, T>, g: &[T], sink: &mut GradSink<'_, T>) {
        let y = ctx.output().data();
        let Some(slot) = sink.slot(self.x) else {
            return;
        };
        let (len, inner) = (self.len, self.inner);
        for o in 0..self.outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut dot = T::zero();
                for a in 0..len {
                    let p = base + a * inner;
                    dot += g[p] * y[p];
                }
                for a in 0..len {
                    let p = base + a * inner;
                    slot[p] += y[p] * (g[p] - dot);
                }
            }
        }
    }
}

/// Numerically stable softmax along `axis` of a row-major buffer.
pub(crate) fn softmax_values<T: Scalar>(shape: &[usize], x: &[T], axis: usize) -> Vec<T> {
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = vec![T::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut m = T::neg_infinity();
            for a in 0..len {
                m = m.max(x[base + a * inner]);
            }
            let mut z = T::zero();
            for a in 0..len {
                let e = (x[base + a * inner] - m).exp();
                out[base + a * inner] = e;
                z += e;
            }
            for a in 0..len {
                out[base + a * inner] /= z;
            }
        }
    }
    out
}

impl<T: Scalar> Tape<T> {
    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let value = self.value(x).map(|v| kind.apply(v));
        self.push_op(value, &[x], ActBackward { x, kind })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Relu)
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::shape("softmax", format!("axis {axis} on {shape:?}")));
        }
        let out = softmax_values(&shape, self.value(x).data(), axis);
        let backward = SoftmaxBackward {
            x,
            outer: shape[..axis].iter().product(),
            len: shape[axis],
            inner: shape[axis + 1..].iter().product(),
        };
        let value = Tensor::new(shape, out)?;
        Ok(self.push_op(value, &[x], backward))
    }

    /// `x * softmax(x)` with the softmax taken over channels (axis 1)
    /// independently at each batch/spatial position.
    pub fn solu(&mut self, x: Var) -> Result<Var> {
        if self.shape(x).len() < 2 {
            return Err(Error::shape("solu", "input needs a channel axis"));
        }
        let s = self.softmax(x, 1)?;
        self.mul(x, s)
    }

    /// Layer norm over channels applied to the SoLU output.
    pub fn solu_ln(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let s = self.solu(x)?;
        self.layer_norm(s, gamma, beta, eps)
    }
}
