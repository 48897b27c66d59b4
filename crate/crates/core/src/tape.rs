//! Reverse-mode automatic differentiation over a recorded tape.
//!
//! Every operation appends a node holding its forward value together with a
//! backward rule. Nodes are stored in execution order, so parents always
//! precede children and [`Tape::backward`] is a single reverse sweep.

use std::sync::atomic::{AtomicU32, Ordering};

use crate::error::{Error, Result};
use crate::tensor::{numel, strides, Scalar, Tensor};

static NEXT_TAPE: AtomicU32 = AtomicU32::new(1);

/// Handle to a value recorded on a specific tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u32,
    index: u32,
}

impl Var {
    pub(crate) fn index(self) -> usize {
        self.index as usize
    }
}

/// Read access to forward values while running a backward rule.
pub(crate) struct BackwardCtx<'a, T> {
    nodes: &'a [Node<T>],
    output: usize,
}

impl<T: Scalar> BackwardCtx<'_, T> {
    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.index()].value
    }

    pub fn output(&self) -> &Tensor<T> {
        &self.nodes[self.output].value
    }
}

/// Gradient accumulators, indexed by node.
pub(crate) struct GradSink<'a, T> {
    grads: &'a mut [Option<Vec<T>>],
    nodes: &'a [Node<T>],
}

impl<T: Scalar> GradSink<'_, T> {
    pub fn wants(&self, v: Var) -> bool {
        self.nodes[v.index()].requires_grad
    }

    /// Mutable accumulator for `v`, allocated as zeros on first use.
    /// Returns `None` when `v` does not require a gradient.
    pub fn slot(&mut self, v: Var) -> Option<&mut [T]> {
        let node = &self.nodes[v.index()];
        if !node.requires_grad {
            return None;
        }
        let n = node.value.len();
        Some(
            self.grads[v.index()]
                .get_or_insert_with(|| vec![T::zero(); n])
                .as_mut_slice(),
        )
    }

    pub fn accumulate(&mut self, v: Var, g: &[T]) {
        if let Some(slot) = self.slot(v) {
            debug_assert_eq!(slot.len(), g.len());
            for (s, &x) in slot.iter_mut().zip(g) {
                *s += x;
            }
        }
    }
}

pub(crate) trait Backward<T: Scalar>: Send + Sync {
    fn backward(&self, ctx: &BackwardCtx<'_, T>, grad_out: &[T], sink: &mut GradSink<'_, T>);
}

pub(crate) struct Node<T> {
    value: Tensor<T>,
    op: Option<Box<dyn Backward<T>>>,
    requires_grad: bool,
}

pub struct Tape<T: Scalar = f32> {
    id: u32,
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    consumed: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            grads: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    fn check(&self, v: Var) -> usize {
        assert_eq!(v.tape, self.id, "variable belongs to a different tape");
        v.index()
    }

    /// Record an input value. Leaves with `requires_grad` receive a gradient
    /// from [`backward`](Self::backward).
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push_node(value, None, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[self.check(v)].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[self.check(v)].requires_grad
    }

    fn push_node(&mut self, value: Tensor<T>, op: Option<Box<dyn Backward<T>>>, requires_grad: bool) -> Var {
        let index = self.nodes.len() as u32;
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var { tape: self.id, index }
    }

    /// Append the result of an operation over `parents`. The backward rule is
    /// dropped when no parent needs a gradient.
    pub(crate) fn push_op<B: Backward<T> + 'static>(&mut self, value: Tensor<T>, parents: &[Var], op: B) -> Var {
        let requires_grad = parents.iter().any(|&p| self.requires_grad(p));
        let op: Option<Box<dyn Backward<T>>> = if requires_grad { Some(Box::new(op)) } else { None };
        self.push_node(value, op, requires_grad)
    }

    /// Propagate gradients from the scalar `loss` to every grad-enabled leaf.
    /// The tape is consumed: intermediate gradients and backward rules are
    /// released, only leaf gradients remain.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let li = self.check(loss);
        if self.consumed {
            return Err(Error::Autodiff("backward called on a consumed tape".into()));
        }
        if self.nodes[li].value.len() != 1 {
            return Err(Error::Autodiff(format!(
                "loss must be a scalar, got shape {:?}",
                self.nodes[li].value.shape()
            )));
        }
        self.consumed = true;
        if !self.nodes[li].requires_grad {
            return Ok(());
        }
        self.grads[li] = Some(vec![T::one()]);
        for i in (0..=li).rev() {
            let Some(op) = self.nodes[i].op.take() else {
                continue;
            };
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            let ctx = BackwardCtx {
                nodes: &self.nodes,
                output: i,
            };
            let mut sink = GradSink {
                grads: &mut self.grads,
                nodes: &self.nodes,
            };
            op.backward(&ctx, &g, &mut sink);
        }
        Ok(())
    }

    /// Gradient of the last backward pass for `v`, shaped like `v`.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        let i = self.check(v);
        self.grads[i].as_ref().map(|g| {
            Tensor::new(self.nodes[i].value.shape().to_vec(), g.clone()).expect("gradient matches value shape")
        })
    }

    /// Like [`grad`](Self::grad), but a grad-enabled leaf that received no
    /// contribution yields zeros.
    pub fn grad_or_zero(&self, v: Var) -> Tensor<T> {
        self.grad(v)
            .unwrap_or_else(|| Tensor::zeros(self.value(v).shape().to_vec()))
    }
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic with broadcasting of the right operand.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
}

/// Strides of `b` laid over `a`'s shape, zero along broadcast axes.
fn broadcast_strides(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if numel(b) == 1 {
        return Ok(vec![0; a.len()]);
    }
    if a.len() != b.len() {
        return Err(Error::shape(op, format!("cannot broadcast {b:?} to {a:?}")));
    }
    let bs = strides(b);
    a.iter()
        .zip(b)
        .zip(bs)
        .map(|((&da, &db), s)| {
            if db == da {
                Ok(s)
            } else if db == 1 {
                Ok(0)
            } else {
                Err(Error::shape(op, format!("cannot broadcast {b:?} to {a:?}")))
            }
        })
        .collect()
}

/// Visit every flat index of `shape` in row-major order together with the
/// matching offset under `mapped` strides.
pub(crate) fn for_each_mapped(shape: &[usize], mapped: &[usize], mut f: impl FnMut(usize, usize)) {
    let n = numel(shape);
    if shape.is_empty() {
        f(0, 0);
        return;
    }
    let rank = shape.len();
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for i in 0..n {
        f(i, off);
        let mut d = rank - 1;
        loop {
            idx[d] += 1;
            off += mapped[d];
            if idx[d] < shape[d] {
                break;
            }
            off -= mapped[d] * shape[d];
            idx[d] = 0;
            if d == 0 {
                break;
            }
            d -= 1;
        }
    }
}

struct BinaryBackward {
    a: Var,
    b: Var,
    kind: BinaryKind,
    b_map: Option<Vec<usize>>,
}

impl<T: Scalar> Backward<T> for BinaryBackward {
    fn backward(&self, ctx: &BackwardCtx<'_, T>, g: &[T], sink: &mut GradSink<'_, T>) {
        let a_val = ctx.value(self.a);
        let b_val = ctx.value(self.b);
        if sink.wants(self.a) {
            match self.kind {
                BinaryKind::Add | BinaryKind::Sub => sink.accumulate(self.a, g),
                BinaryKind::Mul => {
                    let slot = sink.slot(self.a).expect("wanted");
                    match &self.b_map {
                        None => {
                            for ((s, &gi), &bi) in slot.iter_mut().zip(g).zip(b_val.data()) {
                                *s += gi * bi;
                            }
                        }
                        Some(map) => {
                            let bd = b_val.data();
                            for_each_mapped(a_val.shape(), map, |i, j| slot[i] += g[i] * bd[j]);
                        }
                    }
                }
            }
        }
        if let Some(slot) = sink.slot(self.b) {
            let ad = a_val.data();
            let term = |i: usize| match self.kind {
                BinaryKind::Add => g[i],
                BinaryKind::Sub => -g[i],
                BinaryKind::Mul => g[i] * ad[i],
            };
            match &self.b_map {
                None => {
                    for (i, s) in slot.iter_mut().enumerate() {
                        *s += term(i);
                    }
                }
                Some(map) => for_each_mapped(a_val.shape(), map, |i, j| slot[j] += term(i)),
            }
        }
    }
}

struct ScaleBackward<T> {
    x: Var,
    c: T,
}

impl<T: Scalar> Backward<T> for ScaleBackward<T> {
    fn backward(&self, _ctx: &BackwardCtx<'_, T>, g: &[T], sink: &mut GradSink<'_, T>) {
        if let Some(slot) = sink.slot(self.x) {
            for (s, &gi) in slot.iter_mut().zip(g) {
                *s += gi * self.c;
            }
        }
    }
}

struct MatMulBackward {
    a: Var,
    b: Var,
    m: usize,
    k: usize,
    n: usize,
}

impl<T: Scalar> Backward<T> for MatMulBackward {
    fn backward(&self, ctx: &BackwardCtx<'_, T>, g: &[T], sink: &mut GradSink<'_, T>) {
        let (m, k, n) = (self.m, self.k, self.n);
        let b = ctx.value(self.b).data();
        let a = ctx.value(self.a).data();
        if let Some(da) = sink.slot(self.a) {
            // dA = dC · Bᵀ
            T::gemm(m, n, k, T::one(), g, false, b, true, T::one(), da);
        }
        if let Some(db) = sink.slot(self.b) {
            // dB = Aᵀ · dC
            T::gemm(k, m, n, T::one(), a, true, g, false, T::one(), db);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
    Max,
}

struct ReduceBackward {
    x: Var,
    kind: ReduceKind,
    /// Output offset for each input position (sum/mean).
    map: Vec<usize>,
    count: usize,
    /// Input index selected by each output (max).
    argmax: Vec<usize>,
}

impl<T: Scalar> Backward<T> for ReduceBackward {
    fn backward(&self, ctx: &BackwardCtx<'_, T>, g: &[T], sink: &mut GradSink<'_, T>) {
        let shape = ctx.value(self.x).shape().to_vec();
        let Some(slot) = sink.slot(self.x) else {
            return;
        };
        match self.kind {
            ReduceKind::Sum => for_each_mapped(&shape, &self.map, |i, j| slot[i] += g[j]),
            ReduceKind::Mean => {
                let inv = T::one() / T::lit(self.count as f64);
                for_each_mapped(&shape, &self.map, |i, j| slot[i] += g[j] * inv)
            }
            ReduceKind::Max => {
                for (j, &i) in self.argmax.iter().enumerate() {
                    slot[i] += g[j];
                }
            }
        }
    }
}

struct ReshapeBackward {
    x: Var,
}

impl<T: Scalar> Backward<T> for ReshapeBackward {
    fn backward(&self, _ctx: &BackwardCtx<'_, T>, g: &[T], sink: &mut GradSink<'_, T>) {
        sink.accumulate(self.x, g);
    }
}

impl<T: Scalar> Tape<T> {
    /// Elementwise `a ∘ b`. `b` may be broadcast along singleton extents of
    /// `a` (same rank) or be a single element.
    pub fn binary(&mut self, a: Var, b: Var, kind: BinaryKind) -> Result<Var> {
        let av = self.value(a);
        let bv = self.value(b);
        let b_map = if av.shape() == bv.shape() {
            None
        } else {
            Some(broadcast_strides("elementwise", av.shape(), bv.shape())?)
        };
        let f = |x: T, y: T| match kind {
            BinaryKind::Add => x + y,
            BinaryKind::Sub => x - y,
            BinaryKind::Mul => x * y,
        };
        let out = match &b_map {
            None => av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect(),
            Some(map) => {
                let mut out = vec![T::zero(); av.len()];
                let (ad, bd) = (av.data(), bv.data());
                for_each_mapped(av.shape(), map, |i, j| out[i] = f(ad[i], bd[j]));
                out
            }
        };
        let value = Tensor::new(av.shape().to_vec(), out)?;
        Ok(self.push_op(value, &[a, b], BinaryBackward { a, b, kind, b_map }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Mul)
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let value = self.value(x).map(|v| v * c);
        self.push_op(value, &[x], ScaleBackward { x, c })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            T::one(),
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            T::zero(),
            &mut out,
        );
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push_op(value, &[a, b], MatMulBackward { a, b, m, k, n }))
    }

    /// Reduce over `axes`, removing them from the shape.
    pub fn reduce(&mut self, x: Var, axes: &[usize], kind: ReduceKind) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axes.is_empty() {
            return Err(Error::shape("reduce", "empty reduction axis list"));
        }
        let mut reduced = vec![false; shape.len()];
        for &a in axes {
            if a >= shape.len() {
                return Err(Error::shape("reduce", format!("axis {a} on {shape:?}")));
            }
            reduced[a] = true;
        }
        let out_shape: Vec<usize> = shape
            .iter()
            .zip(&reduced)
            .filter(|(_, &r)| !r)
            .map(|(&d, _)| d)
            .collect();
        let out_strides = strides(&out_shape);
        let mut map = vec![0; shape.len()];
        let mut k = 0;
        for (d, &r) in reduced.iter().enumerate() {
            if !r {
                map[d] = out_strides[k];
                k += 1;
            }
        }
        let out_n = numel(&out_shape);
        let count = numel(&shape) / out_n;
        let xd = self.value(x).data();
        let mut out = vec![T::zero(); out_n];
        let mut argmax = Vec::new();
        match kind {
            ReduceKind::Sum | ReduceKind::Mean => {
                for_each_mapped(&shape, &map, |i, j| out[j] += xd[i]);
                if kind == ReduceKind::Mean {
                    let inv = T::one() / T::lit(count as f64);
                    out.iter_mut().for_each(|v| *v *= inv);
                }
            }
            ReduceKind::Max => {
                let mut seen = vec![false; out_n];
                argmax = vec![0; out_n];
                for_each_mapped(&shape, &map, |i, j| {
                    // strict comparison keeps the first index on ties
                    if !seen[j] || xd[i] > out[j] {
                        seen[j] = true;
                        out[j] = xd[i];
                        argmax[j] = i;
                    }
                });
            }
        }
        let value = Tensor::new(out_shape, out)?;
        Ok(self.push_op(
            value,
            &[x],
            ReduceBackward {
                x,
                kind,
                map,
                count,
                argmax,
            },
        ))
    }

    pub fn sum(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        self.reduce(x, axes, ReduceKind::Sum)
    }

    pub fn mean(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        self.reduce(x, axes, ReduceKind::Mean)
    }

    pub fn max(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        self.reduce(x, axes, ReduceKind::Max)
    }

    fn all_axes(&self, x: Var) -> Vec<usize> {
        (0..self.shape(x).len().max(1)).collect()
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        if self.shape(x).is_empty() {
            return self.reshape(x, vec![]);
        }
        let axes = self.all_axes(x);
        self.sum(x, &axes)
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        if self.shape(x).is_empty() {
            return self.reshape(x, vec![]);
        }
        let axes = self.all_axes(x);
        self.mean(x, &axes)
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push_op(value, &[x], ReshapeBackward { x }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(t: &mut Tape<f64>, shape: &[usize], v: &[f64]) -> Var {
        t.leaf(Tensor::from_f64(shape.to_vec(), v).unwrap(), true)
    }

    #[test]
    fn add_and_mul_values() {
        let mut t = Tape::<f64>::new();
        let a = leaf(&mut t, &[2], &[1.0, 2.0]);
        let b = leaf(&mut t, &[2], &[3.0, 4.0]);
        let s = t.add(a, b).unwrap();
        assert_eq!(t.value(s).data(), &[4.0, 6.0]);
        let x = leaf(&mut t, &[1], &[5.0]);
        let z = leaf(&mut t, &[1], &[0.0]);
        let p = t.mul(x, z).unwrap();
        assert_eq!(t.value(p).data(), &[0.0]);
    }

    #[test]
    fn product_rule_gradient() {
        let mut t = Tape::<f64>::new();
        let a = leaf(&mut t, &[2], &[1.0, 2.0]);
        let b = leaf(&mut t, &[2], &[3.0, 4.0]);
        let p = t.mul(a, b).unwrap();
        let l = t.sum_all(p).unwrap();
        t.backward(l).unwrap();
        assert_eq!(t.grad(a).unwrap().data(), &[3.0, 4.0]);
        assert_eq!(t.grad(b).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn scalar_weight_gradient() {
        let mut t = Tape::<f64>::new();
        let w = leaf(&mut t, &[1], &[2.0]);
        let x = leaf(&mut t, &[1], &[3.0]);
        let p = t.mul(w, x).unwrap();
        let l = t.sum_all(p).unwrap();
        t.backward(l).unwrap();
        assert_eq!(t.grad(w).unwrap().data(), &[3.0]);
        assert_eq!(t.grad(x).unwrap().data(), &[2.0]);
    }

    #[test]
    fn shared_leaf_accumulates() {
        let mut t = Tape::<f64>::new();
        let x = leaf(&mut t, &[1], &[1.5]);
        let y = t.add(x, x).unwrap();
        let l = t.sum_all(y).unwrap();
        t.backward(l).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), &[2.0]);
    }

    #[test]
    fn broadcast_add_reduces_gradient() {
        let mut t = Tape::<f64>::new();
        let a = leaf(&mut t, &[2, 3], &[1., 2., 3., 4., 5., 6.]);
        let b = leaf(&mut t, &[1, 3], &[10., 20., 30.]);
        let s = t.add(a, b).unwrap();
        assert_eq!(t.value(s).data(), &[11., 22., 33., 14., 25., 36.]);
        let l = t.sum_all(s).unwrap();
        t.backward(l).unwrap();
        assert_eq!(t.grad(b).unwrap().data(), &[2., 2., 2.]);
    }

    #[test]
    fn incompatible_broadcast_rejected() {
        let mut t = Tape::<f64>::new();
        let a = leaf(&mut t, &[2, 3], &[0.; 6]);
        let b = leaf(&mut t, &[2, 2], &[0.; 4]);
        assert!(matches!(t.add(a, b), Err(Error::Shape { .. })));
        let c = leaf(&mut t, &[3], &[0.; 3]);
        assert!(t.mul(a, c).is_err());
    }

    #[test]
    fn matmul_cases() {
        let mut t = Tape::<f64>::new();
        let i = leaf(&mut t, &[2, 2], &[1., 0., 0., 1.]);
        let m = leaf(&mut t, &[2, 2], &[1., 2., 3., 4.]);
        let p = t.matmul(i, m).unwrap();
        assert_eq!(t.value(p).data(), &[1., 2., 3., 4.]);
        let r = leaf(&mut t, &[1, 2], &[1., 2.]);
        let c = leaf(&mut t, &[2, 1], &[3., 4.]);
        let q = t.matmul(r, c).unwrap();
        assert_eq!(t.value(q).data(), &[11.]);
        assert!(t.matmul(r, r).is_err());
    }

    #[test]
    fn reductions() {
        let mut t = Tape::<f64>::new();
        let v = leaf(&mut t, &[3], &[1., 2., 3.]);
        let m = t.mean_all(v).unwrap();
        assert_eq!(t.value(m).data(), &[2.0]);
        let a = leaf(&mut t, &[2, 2], &[1., 2., 3., 4.]);
        let s = t.sum(a, &[0]).unwrap();
        assert_eq!(t.value(s).shape(), &[2]);
        assert_eq!(t.value(s).data(), &[4., 6.]);
        assert!(t.sum(a, &[]).is_err());
        assert!(t.sum(a, &[2]).is_err());
    }

    #[test]
    fn max_tie_routes_to_first_index() {
        let mut t = Tape::<f64>::new();
        let v = leaf(&mut t, &[3], &[3., 3., 1.]);
        let m = t.max(v, &[0]).unwrap();
        assert_eq!(t.value(m).data(), &[3.0]);
        t.backward(m).unwrap();
        assert_eq!(t.grad(v).unwrap().data(), &[1., 0., 0.]);
    }

    #[test]
    fn backward_rejects_non_scalar_and_reuse() {
        let mut t = Tape::<f64>::new();
        let v = leaf(&mut t, &[2], &[1., 2.]);
        assert!(matches!(t.backward(v), Err(Error::Autodiff(_))));
        let l = t.sum_all(v).unwrap();
        t.backward(l).unwrap();
        assert!(matches!(t.backward(l), Err(Error::Autodiff(_))));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::<f64>::new();
        let c = t.constant(Tensor::from_f64(vec![2], &[1., 2.]).unwrap());
        let w = leaf(&mut t, &[2], &[3., 4.]);
        let p = t.mul(c, w).unwrap();
        let l = t.sum_all(p).unwrap();
        t.backward(l).unwrap();
        assert!(t.grad(c).is_none());
        assert_eq!(t.grad(w).unwrap().data(), &[1., 2.]);
    }
}
