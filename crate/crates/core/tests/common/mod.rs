#![allow(dead_code)]

pub mod ops;

use bottlelab::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-3;
pub const FD_TOL: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Uniform values kept at least `gap` away from each point in `kinks`.
pub fn away_from(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64, kinks: &[f64], gap: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let v = rng.random_range(lo..hi);
            if kinks.iter().all(|k| (v - k).abs() > gap) {
                break v;
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// ‖a − b‖ / max(‖a‖, ‖b‖), 0 when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    // Gradients that vanish exactly (e.g. a shift removed by a later norm)
    // leave only rounding noise on both sides; compare those absolutely.
    norm(&d) / norm(a).max(norm(b)).max(1e-6)
}

/// Central-difference check of `build` on the scalar `sum(build(inputs) ⊙ R)`
/// with a fixed random `R`. Returns the worst relative error over inputs.
pub fn grad_check<F>(inputs: &[Tensor<f64>], seed: u64, build: F) -> f64
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    grad_check_steps(inputs, seed, |_| FD_STEP, build)
}

/// As [`grad_check`], but each input is probed with a step of `FD_STEP`
/// times its RMS. Behind a norm layer the loss is invariant to the scale of
/// the weights feeding it, so this is the absolute check in those units.
pub fn grad_check_scaled<F>(inputs: &[Tensor<f64>], seed: u64, build: F) -> f64
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    grad_check_steps(inputs, seed, scaled_step, build)
}

/// `FD_STEP` times the RMS of `x`; all-zero tensors get the plain step.
pub fn scaled_step(x: &Tensor<f64>) -> f64 {
    let rms = norm(x.data()) / (x.len() as f64).sqrt();
    FD_STEP * if rms > 0.0 { rms } else { 1.0 }
}

fn grad_check_steps<S, F>(inputs: &[Tensor<f64>], seed: u64, step: S, build: F) -> f64
where
    S: Fn(&Tensor<f64>) -> f64,
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    let eval = |xs: &[Tensor<f64>], proj: Option<&Tensor<f64>>| -> (f64, Tensor<f64>) {
        let mut t = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| t.leaf(x.clone(), false)).collect();
        let out = build(&mut t, &vars);
        let v = t.value(out).clone();
        let s = match proj {
            Some(r) => v.data().iter().zip(r.data()).map(|(a, b)| a * b).sum(),
            None => 0.0,
        };
        (s, v)
    };
    let (_, out0) = eval(inputs, None);
    let mut r = rng(seed ^ 0x5eed);
    let proj = uniform(&mut r, out0.shape(), -1.0, 1.0);

    let mut t = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| t.leaf(x.clone(), true)).collect();
    let out = build(&mut t, &vars);
    let p = t.constant(proj.clone());
    let prod = t.mul(out, p).unwrap();
    let loss = t.sum_all(prod).unwrap();
    t.backward(loss).unwrap();

    let mut worst: f64 = 0.0;
    for (i, x) in inputs.iter().enumerate() {
        let analytic = t.grad_or_zero(vars[i]);
        let mut numeric = vec![0.0; x.len()];
        let h = step(x);
        for k in 0..x.len() {
            let mut xs = inputs.to_vec();
            xs[i].data_mut()[k] = x.data()[k] + h;
            let (fp, _) = eval(&xs, Some(&proj));
            xs[i].data_mut()[k] = x.data()[k] - h;
            let (fm, _) = eval(&xs, Some(&proj));
            numeric[k] = (fp - fm) / (2.0 * h);
        }
        let e = rel_err(analytic.data(), &numeric);
        worst = worst.max(e);
    }
    worst
}

/// Direct nested-loop grouped cross-correlation.
pub fn naive_conv(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    bias: Option<&[f64]>,
    stride: usize,
    pad: usize,
    groups: usize,
) -> (Vec<usize>, Vec<f64>) {
    let (b, cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (cout, cin_g, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (wd + 2 * pad - k) / stride + 1;
    let cout_g = cout / groups;
    let mut out = vec![0.0; b * cout * ho * wo];
    for n in 0..b {
        for co in 0..cout {
            let g = co / cout_g;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = bias.map_or(0.0, |bb| bb[co]);
                    for ci in 0..cin_g {
                        let c = g * cin_g + ci;
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xv = x.data()[((n * cin + c) * h + iy as usize) * wd + ix as usize];
                                let wv = w.data()[((co * cin_g + ci) * k + ky) * k + kx];
                                acc += xv * wv;
                            }
                        }
                    }
                    out[((n * cout + co) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    let _ = cin;
    (vec![b, cout, ho, wo], out)
}

/// Widths [8; 4], one block per stage, 32×32 input.
pub fn micro(kind: bottlelab::blocks::BlockKind) -> bottlelab::vessel::VesselConfig {
    let mut cfg = bottlelab::vessel::VesselConfig::new(kind);
    cfg.stage_widths = [8; 4];
    cfg.stage_depths = [1; 4];
    cfg
}

pub fn synthetic(train: usize, test: usize, seed: u64) -> (bottlelab::data::Dataset, bottlelab::data::Dataset) {
    bottlelab::config::synthetic_datasets(bottlelab::config::SyntheticSpec { train, test, seed }).unwrap()
}
