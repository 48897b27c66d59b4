//! WebAssembly bindings for the static demo page in `www/`.
//!
//! The plain functions do the work and are tested natively; the
//! `#[wasm_bindgen]` wrappers only convert errors.

use bottlelab::blocks::BlockKind;
use bottlelab::config::{synthetic_datasets, SyntheticSpec};
use bottlelab::harness::{build_model, count_table, param_counts};
use bottlelab::interference::{capture, overlap_matrix, summarize, EvalBatch};
use bottlelab::nn::NormKind;
use bottlelab::train::{train, TrainConfig};
use bottlelab::vessel::{fit_budget, VesselConfig};
use bottlelab::{Result, Tape, Tensor};
use wasm_bindgen::prelude::*;

pub const DEMO_WIDTH: usize = 16;
const DEMO_IMAGES: usize = 64;

/// `solu(x)_0` for `x = [t, others...]` at `points` values of `t` evenly
/// spaced over `[-t_max, t_max]`, flattened as `t0, y0, t1, y1, ...`.
pub fn solu_curve(others: &[f64], t_max: f64, points: usize) -> Result<Vec<f64>> {
    let c = 1 + others.len();
    let ts: Vec<f64> = (0..points)
        .map(|i| -t_max + 2.0 * t_max * i as f64 / (points.max(2) - 1) as f64)
        .collect();
    let mut data = Vec::with_capacity(points * c);
    for &t in &ts {
        data.push(t);
        data.extend_from_slice(others);
    }
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::new(vec![points, c], data)?);
    let y = tape.solu(x)?;
    let ys = tape.value(y).data();
    Ok(ts.iter().enumerate().flat_map(|(i, &t)| [t, ys[i * c]]).collect())
}

fn vessel(kind: &str, norm: &str, solu: bool) -> Result<VesselConfig> {
    let kind: BlockKind = kind.parse()?;
    let mut cfg = VesselConfig::new(kind);
    if !norm.is_empty() {
        cfg.block.norm = norm.parse::<NormKind>()?;
    }
    cfg.block.solu = solu;
    Ok(cfg)
}

/// Per-section parameter table at a width multiplier.
pub fn param_table(kind: &str, norm: &str, solu: bool, multiplier: f64) -> Result<String> {
    let mut cfg = vessel(kind, norm, solu)?;
    cfg.width_multiplier = multiplier;
    cfg.validate()?;
    let model = build_model(&cfg, 0)?;
    Ok(count_table(&cfg, &param_counts(&model)))
}

/// `[multiplier, params]` of the budget fit.
pub fn budget_fit(kind: &str, norm: &str, solu: bool, target: usize) -> Result<Vec<f64>> {
    let fit = fit_budget(&vessel(kind, norm, solu)?, target, 0.01)?;
    Ok(vec![fit.config.width_multiplier, fit.params as f64])
}

/// Overlap matrices of every identity block of a small vessel after
/// `epochs` of training on synthetic images.
#[wasm_bindgen]
pub struct OverlapView {
    channels: usize,
    names: Vec<String>,
    matrices: Vec<Vec<f64>>,
    mean_abs: Vec<f64>,
    train_acc: f64,
}

#[wasm_bindgen]
impl OverlapView {
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn layers(&self) -> usize {
        self.matrices.len()
    }

    pub fn name(&self, layer: usize) -> String {
        self.names[layer].clone()
    }

    /// Row-major `C×C`.
    pub fn matrix(&self, layer: usize) -> Vec<f64> {
        self.matrices[layer].clone()
    }

    pub fn mean_abs(&self, layer: usize) -> f64 {
        self.mean_abs[layer]
    }

    pub fn train_acc(&self) -> f64 {
        self.train_acc
    }
}

pub fn overlap_view(kind: &str, solu: bool, epochs: usize, seed: u64) -> Result<OverlapView> {
    let mut cfg = vessel(kind, "", solu)?;
    cfg.stage_widths = [DEMO_WIDTH; 4];
    cfg.stage_depths = [1; 4];
    let mut model = build_model(&cfg, seed)?;
    let (train_set, test_set) = synthetic_datasets(SyntheticSpec {
        train: DEMO_IMAGES,
        test: DEMO_IMAGES,
        seed,
    })?;
    let mut train_acc = 0.0;
    if epochs > 0 {
        let tc = TrainConfig {
            epochs,
            batch_size: 16,
            lr_max: 3e-3,
            augment: false,
            seed,
            ..TrainConfig::default()
        };
        let log = train(&mut model, &train_set, &test_set, &tc, None)?;
        train_acc = log.last().map_or(0.0, |r| r.train_acc);
    }
    let batch = EvalBatch {
        seed: 0,
        size: DEMO_IMAGES,
    };
    let (x, _) = test_set.gather(&batch.indices(test_set.len()))?;
    let caps = capture(&mut model, &x, "demo", batch)?;
    let mut view = OverlapView {
        channels: DEMO_WIDTH,
        names: Vec::new(),
        matrices: Vec::new(),
        mean_abs: Vec::new(),
        train_acc,
    };
    for c in &caps {
        let o = overlap_matrix(c)?;
        view.mean_abs.push(summarize(&c.layer, &o).mean_abs_offdiag);
        view.names.push(c.layer.clone());
        view.matrices.push(o.data);
    }
    Ok(view)
}

fn js<T>(r: Result<T>) -> std::result::Result<T, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = soluCurve)]
pub fn solu_curve_js(others: &[f64], t_max: f64, points: usize) -> std::result::Result<Vec<f64>, JsError> {
    js(solu_curve(others, t_max, points))
}

#[wasm_bindgen(js_name = paramTable)]
pub fn param_table_js(kind: &str, norm: &str, solu: bool, multiplier: f64) -> std::result::Result<String, JsError> {
    js(param_table(kind, norm, solu, multiplier))
}

#[wasm_bindgen(js_name = budgetFit)]
pub fn budget_fit_js(kind: &str, norm: &str, solu: bool, target: usize) -> std::result::Result<Vec<f64>, JsError> {
    js(budget_fit(kind, norm, solu, target))
}

#[wasm_bindgen(js_name = overlapView)]
pub fn overlap_view_js(kind: &str, solu: bool, epochs: usize, seed: u32) -> std::result::Result<OverlapView, JsError> {
    js(overlap_view(kind, solu, epochs, seed as u64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solu_curve_matches_pair_value_and_is_superlinear() {
        let pts = solu_curve(&[0.0], 4.0, 9).unwrap();
        assert_eq!(pts.len(), 18);
        // t = 2 against one zero channel
        let e2 = 2f64.exp();
        assert!((pts[12 + 1] - 2.0 * e2 / (e2 + 1.0)).abs() < 1e-12);
        let pos: Vec<(f64, f64)> = pts.chunks(2).map(|p| (p[0], p[1])).filter(|p| p.0 > 0.0).collect();
        assert!(pos.windows(2).all(|w| w[1].1 / w[1].0 >= w[0].1 / w[0].0));
    }

    #[test]
    fn param_table_totals_match_count() {
        let t = param_table("inverted_v2", "", false, 1.0).unwrap();
        let n = bottlelab::vessel::count_params(&VesselConfig::new(BlockKind::InvertedV2)).unwrap();
        assert!(t.lines().last().unwrap().contains(&n.to_string()));
        assert!(param_table("nope", "", false, 1.0).is_err());
        assert!(param_table("sandglass", "layer_norm", true, 0.5)
            .unwrap()
            .contains("layer_norm"));
    }

    #[test]
    fn budget_fit_lands_within_tolerance() {
        let fit = budget_fit("convnext_like", "", false, 150_000).unwrap();
        assert!((fit[1] - 150_000.0).abs() / 150_000.0 <= 0.01);
    }

    #[test]
    fn overlap_view_has_one_unit_diagonal_matrix_per_block() {
        let v = overlap_view("nodepth", true, 1, 3).unwrap();
        assert_eq!(v.layers(), 4);
        for l in 0..v.layers() {
            let m = v.matrix(l);
            assert_eq!(m.len(), DEMO_WIDTH * DEMO_WIDTH);
            assert!((0..DEMO_WIDTH).all(|i| m[i * DEMO_WIDTH + i] == 1.0 || m[i * DEMO_WIDTH + i] == 0.0));
            assert!((0.0..=1.0).contains(&v.mean_abs(l)));
        }
    }
}
