//! Finite-difference instances for every differentiable operation.

use bottlelab::nn::{Activation, ConvSpec, Mode, RunningStats, NORM_EPS};
use bottlelab::Tensor;
use rand::Rng;

use super::{away_from, grad_check, rng, uniform};

pub const INSTANCES: u64 = 20;

/// Worst relative error per operation name, with the instance count.
#[derive(Default)]
pub struct Errors {
    pub ops: Vec<(String, usize, f64)>,
}

impl Errors {
    pub fn push(&mut self, name: impl AsRef<str>, err: f64) {
        let name = name.as_ref();
        match self.ops.iter_mut().find(|(n, _, _)| n == name) {
            Some(entry) => {
                entry.1 += 1;
                entry.2 = entry.2.max(err);
            }
            None => self.ops.push((name.to_string(), 1, err)),
        }
    }
}

/// Every operation suite, in a fixed order.
pub fn all() -> Errors {
    let mut out = Errors::default();
    for suite in [
        conv2d_general,
        depthwise_conv,
        layer_norm,
        batch_norm_train_and_eval,
        softmax_any_axis,
        solu_and_solu_ln,
        activations,
        pooling_linear_and_loss,
        elementwise_broadcast_and_reductions,
        concat_and_shuffle,
    ] {
        suite(&mut out);
    }
    out
}

pub fn conv2d_general(out: &mut Errors) {
    for seed in 0..INSTANCES {
        let mut r = rng(seed);
        let groups = r.random_range(1..=2usize);
        let cin = groups * r.random_range(1..=2usize);
        let cout = groups * r.random_range(1..=2usize);
        let k = r.random_range(1..=3usize);
        let stride = r.random_range(1..=2usize);
        let pad = r.random_range(0..=k / 2);
        let mut h = r.random_range(k.max(3)..=6);
        while (h + 2 * pad - k) % stride != 0 {
            h += 1;
        }
        let batch = r.random_range(1..=2);
        let with_bias = r.random_bool(0.5);
        let spec = ConvSpec::new(stride, pad, groups);
        let mut inputs = vec![
            uniform(&mut r, &[batch, cin, h, h], -1.0, 1.0),
            uniform(&mut r, &[cout, cin / groups, k, k], -1.0, 1.0),
        ];
        if with_bias {
            inputs.push(uniform(&mut r, &[cout], -1.0, 1.0));
        }
        let err = grad_check(&inputs, seed, |t, v| {
            t.conv2d(v[0], v[1], v.get(2).copied(), spec).unwrap()
        });
        out.push("conv2d", err);
    }
}

pub fn depthwise_conv(out: &mut Errors) {
    for seed in 0..INSTANCES {
        let mut r = rng(100 + seed);
        let c = r.random_range(1..=4usize);
        let k = [3, 5][r.random_range(0..2)];
        let h = r.random_range(3..=6);
        let stride = if seed % 4 == 3 && h % 2 == 1 { 2 } else { 1 };
        let spec = ConvSpec::new(stride, k / 2, c);
        let inputs = vec![
            uniform(&mut r, &[2, c, h, h], -1.0, 1.0),
            uniform(&mut r, &[c, 1, k, k], -1.0, 1.0),
        ];
        let err = grad_check(&inputs, seed, |t, v| {
            t.depthwise_conv2d(v[0], v[1], None, spec).unwrap()
        });
        out.push("depthwise", err);
    }
}

pub fn layer_norm(out: &mut Errors) {
    for seed in 0..INSTANCES {
        let mut r = rng(200 + seed);
        let c = r.random_range(2..=5usize);
        let shape = if seed % 2 == 0 { vec![2, c, 3, 2] } else { vec![3, c] };
        let inputs = vec![
            uniform(&mut r, &shape, -2.0, 2.0),
            uniform(&mut r, &[c], 0.5, 1.5),
            uniform(&mut r, &[c], -0.5, 0.5),
        ];
        let err = grad_check(&inputs, seed, |t, v| t.layer_norm(v[0], v[1], v[2], NORM_EPS).unwrap());
        out.push("layer_norm", err);
    }
}

pub fn batch_norm_train_and_eval(out: &mut Errors) {
    for seed in 0..INSTANCES {
        let mut r = rng(300 + seed);
        let c = r.random_range(1..=4usize);
        let inputs = vec![
            uniform(&mut r, &[3, c, 2, 3], -2.0, 2.0),
            uniform(&mut r, &[c], 0.5, 1.5),
            uniform(&mut r, &[c], -0.5, 0.5),
        ];
        let mut stats = RunningStats::<f64>::new(c);
        stats.mean = uniform(&mut r, &[c], -0.5, 0.5);
        stats.var = uniform(&mut r, &[c], 0.5, 2.0);
        for mode in [Mode::Train, Mode::Eval] {
            let err = grad_check(&inputs, seed, |t, v| {
                let mut s = stats.clone();
                t.batch_norm(v[0], v[1], v[2], &mut s, mode, NORM_EPS).unwrap()
            });
            out.push(format!("batch_norm {mode:?}"), err);
        }
    }
}

pub fn softmax_any_axis(out: &mut Errors) {
    for seed in 0..INSTANCES {
        let mut r = rng(400 + seed);
        let axis = r.random_range(0..3usize);
        let inputs = vec![uniform(&mut r, &[2, 4, 3], -3.0, 3.0)];
        let err = grad_check(&inputs, seed, |t, v| t.softmax(v[0], axis).unwrap());
        out.push("softmax", err);
    }
}

pub fn solu_and_solu_ln(out: &mut Errors) {
    for seed in 0..INSTANCES {
        let mut r = rng(500 + seed);
        let c = r.random_range(2..=6usize);
        let x = well_spread(&mut r, &[2, c, 2, 2]);
        let err = grad_check(std::slice::from_ref(&x), seed, |t, v| t.solu(v[0]).unwrap());
        out.push("solu", err);
        let inputs = vec![x, uniform(&mut r, &[c], 0.8, 1.2), uniform(&mut r, &[c], -0.5, 0.5)];
        let err = grad_check(&inputs, seed, |t, v| t.solu_ln(v[0], v[1], v[2], NORM_EPS).unwrap());
        out.push("solu_ln", err);
    }
}

pub fn activations(out: &mut Errors) {
    let kinks: [(Activation, &[f64]); 4] = [
        (Activation::Relu, &[0.0]),
        (Activation::Relu6, &[0.0, 6.0]),
        (Activation::Hardswish, &[-3.0, 3.0]),
        (Activation::Gelu, &[]),
    ];
    for (act, ks) in kinks {
        for seed in 0..INSTANCES {
            let mut r = rng(600 + seed);
            let x = away_from(&mut r, &[3, 7], -8.0, 8.0, ks, 0.05);
            let err = grad_check(&[x], seed, |t, v| t.activation(v[0], act));
            out.push(format!("{act}"), err);
        }
    }
}

pub fn pooling_linear_and_loss(out: &mut Errors) {
    for seed in 0..INSTANCES {
        let mut r = rng(700 + seed);
        let (b, c, k) = (
            r.random_range(1..=3usize),
            r.random_range(1..=4usize),
            r.random_range(2..=5usize),
        );
        let x = uniform(&mut r, &[b, c, 3, 2], -1.0, 1.0);
        out.push("pool", grad_check(&[x], seed, |t, v| t.global_avg_pool(v[0]).unwrap()));

        let inputs = vec![
            uniform(&mut r, &[b, c], -1.0, 1.0),
            uniform(&mut r, &[c, k], -1.0, 1.0),
            uniform(&mut r, &[k], -1.0, 1.0),
        ];
        out.push(
            "linear",
            grad_check(&inputs, seed, |t, v| t.linear(v[0], v[1], v[2]).unwrap()),
        );

        let labels: Vec<usize> = (0..b).map(|_| r.random_range(0..k)).collect();
        let logits = uniform(&mut r, &[b, k], -3.0, 3.0);
        let err = grad_check(&[logits], seed, |t, v| t.cross_entropy(v[0], &labels).unwrap());
        out.push("cross_entropy", err);
    }
}

pub fn elementwise_broadcast_and_reductions(out: &mut Errors) {
    for seed in 0..INSTANCES {
        let mut r = rng(800 + seed);
        let a = uniform(&mut r, &[2, 3, 4], -2.0, 2.0);
        let b = uniform(&mut r, &[1, 3, 1], -2.0, 2.0);
        let err = grad_check(&[a.clone(), b.clone()], seed, |t, v| {
            let s = t.sub(v[0], v[1]).unwrap();
            let m = t.mul(s, v[1]).unwrap();
            t.add(m, v[0]).unwrap()
        });
        out.push("binary", err);
        let err = grad_check(std::slice::from_ref(&a), seed, |t, v| t.mean(v[0], &[0, 2]).unwrap());
        out.push("mean", err);
        let err = grad_check(std::slice::from_ref(&a), seed, |t, v| t.max(v[0], &[1]).unwrap());
        out.push("max", err);
        let m = uniform(&mut r, &[4, 5], -1.0, 1.0);
        let a2 = a.clone().reshape(vec![6, 4]).unwrap();
        out.push(
            "matmul",
            grad_check(&[a2, m], seed, |t, v| t.matmul(v[0], v[1]).unwrap()),
        );
    }
}

pub fn concat_and_shuffle(out: &mut Errors) {
    for seed in 0..INSTANCES {
        let mut r = rng(900 + seed);
        let a = uniform(&mut r, &[2, 2, 2, 2], -1.0, 1.0);
        let b = uniform(&mut r, &[2, 4, 2, 2], -1.0, 1.0);
        let err = grad_check(&[a, b], seed, |t, v| {
            let c = t.channel_concat(&[v[0], v[1]]).unwrap();
            let s = t.channel_shuffle(c, 2).unwrap();
            t.mul(s, s).unwrap()
        });
        out.push("concat+shuffle", err);
    }
}

/// Uniform sample whose channel spread at every position is well above the
/// norm epsilon, so second-order curvature stays small at the probe step.
pub fn well_spread(r: &mut rand_chacha::ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    loop {
        let x = uniform(r, shape, -2.0, 2.0);
        let (b, c, p) = (shape[0], shape[1], shape[2..].iter().product::<usize>());
        let ok = (0..b * p).all(|i| {
            let (n, q) = (i / p, i % p);
            let v: Vec<f64> = (0..c).map(|ch| x.data()[(n * c + ch) * p + q]).collect();
            let m = v.iter().sum::<f64>() / c as f64;
            v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / c as f64 > 0.25
        });
        if ok {
            return x;
        }
    }
}
