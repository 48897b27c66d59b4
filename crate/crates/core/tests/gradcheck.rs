//! Central finite differences against the tape's analytic gradients, in f64.

mod common;

use bottlelab::blocks::{build_block, BlockConfig, BlockKind};
use bottlelab::nn::{Activation, Mode};
use bottlelab::params::{Init, ParamStore, ParamVars};
use bottlelab::vessel::{build_vessel, Model, VesselConfig};
use bottlelab::{Tape, Tensor, Var};
use common::ops::{self, well_spread, Errors};
use common::{grad_check_scaled, rng, uniform, FD_TOL};
use rand::Rng;

fn check(suite: fn(&mut Errors)) {
    let mut errs = Errors::default();
    suite(&mut errs);
    for (name, n, worst) in &errs.ops {
        assert!(*n >= ops::INSTANCES as usize, "{name}: only {n} instances");
        assert!(*worst < FD_TOL, "{name}: worst relative error {worst:.3e}");
    }
}

#[test]
fn conv2d() {
    check(ops::conv2d_general);
}

#[test]
fn depthwise() {
    check(ops::depthwise_conv);
}

#[test]
fn layer_norm() {
    check(ops::layer_norm);
}

#[test]
fn batch_norm() {
    check(ops::batch_norm_train_and_eval);
}

#[test]
fn softmax() {
    check(ops::softmax_any_axis);
}

#[test]
fn solu_and_solu_ln() {
    check(ops::solu_and_solu_ln);
}

#[test]
fn activations() {
    check(ops::activations);
}

#[test]
fn pooling_linear_and_loss() {
    check(ops::pooling_linear_and_loss);
}

#[test]
fn elementwise_and_reductions() {
    check(ops::elementwise_broadcast_and_reductions);
}

#[test]
fn concat_and_shuffle() {
    check(ops::concat_and_shuffle);
}

/// Rescale the tiny initial weights to unit-gain fan-in scaling and
/// spread the norm affines around their neutral values.
fn fan_in_scale(store: &mut ParamStore<f64>, gain: f64) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let gamma = store.name(id).ends_with("gamma");
        let t = store.get_mut(id);
        let shape = t.shape().to_vec();
        let (scale, shift) = match shape.len() {
            4 => (gain / ((shape[1] * shape[2] * shape[3]) as f64).sqrt(), 0.0),
            1 if gamma => (0.1, 1.0),
            _ => (0.1, 0.0),
        };
        t.data_mut().iter_mut().for_each(|v| *v = *v / 0.02 * scale + shift);
    }
}

fn block_inputs(store: &ParamStore<f64>, x: Tensor<f64>) -> Vec<Tensor<f64>> {
    std::iter::once(x).chain(store.tensors().iter().cloned()).collect()
}

#[test]
fn every_block_kind_end_to_end() {
    let mut failures = Vec::new();
    for kind in BlockKind::ALL {
        for solu in [false, true] {
            let cfg = BlockConfig::new(kind, 8).solu(solu).activation(Activation::Gelu);
            let mut store = ParamStore::<f64>::new();
            let mut init = Init::seeded(kind as u64);
            let g = build_block(&cfg, &mut store, "b.", &mut init).unwrap();
            fan_in_scale(&mut store, 1.0);
            let mut r = rng(1000 + kind as u64);
            let inputs = block_inputs(&store, well_spread(&mut r, &[2, 8, 4, 4]));
            let err = grad_check_scaled(&inputs, 7, |t: &mut Tape<f64>, v: &[Var]| {
                let vars = ParamVars::from(v[1..].to_vec());
                let mut s = store.clone();
                g.forward(t, &vars, s.stats_mut(), v[0], Mode::Train).unwrap()
            });
            eprintln!("{kind} solu={solu}: {err:.3e}");
            if err >= FD_TOL {
                failures.push(format!("{kind} solu={solu}: {err:.3e}"));
            }
        }
    }
    assert!(failures.is_empty(), "{failures:?}");
}

/// Relative error of the full micro vessel gradient on 150 random
/// parameter coordinates, probing each with `shrink` times the RMS-scaled step.
fn micro_vessel_error(kind: BlockKind, solu: bool, shrink: f64) -> f64 {
    let mut cfg = VesselConfig::new(kind);
    cfg.stage_widths = [8; 4];
    cfg.stage_depths = [1; 4];
    cfg.input_resolution = (8, 8);
    cfg.block.solu = solu;
    cfg.block.activation = Activation::Gelu;
    let mut model = build_vessel::<f32>(&cfg, &mut Init::seeded(3)).unwrap().cast::<f64>();
    fan_in_scale(&mut model.store, 0.5);
    let mut r = rng(2000 + kind as u64);
    let x = uniform(&mut r, &[16, 3, 8, 8], -1.0, 1.0);
    let proj = uniform(&mut r, &[16, 10], -1.0, 1.0);
    let loss_of = |m: &mut Model<f64>, grads: bool| -> (f64, Vec<Tensor<f64>>) {
        let mut t = Tape::new();
        let vars = m.store.register(&mut t, grads);
        let xv = t.constant(x.clone());
        let y = m.forward(&mut t, &vars, xv, Mode::Train).unwrap();
        let p = t.constant(proj.clone());
        let prod = t.mul(y, p).unwrap();
        let l = t.sum_all(prod).unwrap();
        let lv = t.value(l).data()[0];
        if !grads {
            return (lv, Vec::new());
        }
        t.backward(l).unwrap();
        (lv, vars.all().iter().map(|&v| t.grad_or_zero(v)).collect())
    };
    let (_, analytic) = loss_of(&mut model, true);
    let mut a = Vec::new();
    let mut n = Vec::new();
    for _ in 0..150 {
        let pi = r.random_range(0..model.store.len());
        let k = r.random_range(0..model.store.tensors()[pi].len());
        let orig = model.store.tensors()[pi].data()[k];
        let h = shrink * common::scaled_step(&model.store.tensors()[pi]);
        model.store.tensors_mut()[pi].data_mut()[k] = orig + h;
        let (fp, _) = loss_of(&mut model, false);
        model.store.tensors_mut()[pi].data_mut()[k] = orig - h;
        let (fm, _) = loss_of(&mut model, false);
        model.store.tensors_mut()[pi].data_mut()[k] = orig;
        a.push(analytic[pi].data()[k]);
        n.push((fp - fm) / (2.0 * h));
    }
    common::rel_err(&a, &n)
}

const VESSEL_KINDS: [BlockKind; 3] = [BlockKind::ConvnextLike, BlockKind::InvertedV3, BlockKind::Nodepth];

#[test]
fn micro_vessel() {
    for kind in VESSEL_KINDS {
        let err = micro_vessel_error(kind, false, 1.0);
        assert!(err < FD_TOL, "vessel {kind}: {err:.3e}");
    }
}

/// Stacked SoLU and norm layers make the loss curvature-limited at the
/// standard step, so this checks the error also vanishes at second order.
#[test]
fn micro_vessel_solu() {
    for kind in VESSEL_KINDS {
        let coarse = micro_vessel_error(kind, true, 1.0);
        let fine = micro_vessel_error(kind, true, 0.01);
        eprintln!("vessel {kind} solu: {coarse:.3e} at h, {fine:.3e} at h/100");
        assert!(coarse < 1e-2, "vessel {kind} solu: {coarse:.3e}");
        assert!(
            fine < FD_TOL && fine < coarse / 100.0,
            "vessel {kind} solu: {coarse:.3e} -> {fine:.3e}"
        );
    }
}
