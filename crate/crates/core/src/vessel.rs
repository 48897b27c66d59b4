//! The comparison vessel: stem, four stages of identity blocks separated by
//! downsampling convolutions, and a pooled classifier head.

use serde::{Deserialize, Serialize};

use crate::blocks::{build_block, BlockConfig, BlockGraph, BlockKind, ConvLayer, NormLayer};
use crate::error::{Error, Result};
use crate::nn::{ConvSpec, Mode, NormKind, NORM_EPS};
use crate::params::{Init, ParamId, ParamStore, ParamVars};
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};

pub const DEFAULT_WIDTHS: [usize; 4] = [24, 48, 96, 192];
pub const DEFAULT_DEPTHS: [usize; 4] = [3, 3, 9, 3];
pub const MIN_WIDTH: usize = 8;
pub const MULTIPLIER_RANGE: (f64, f64) = (0.1, 8.0);
const TOTAL_STRIDE: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VesselConfig {
    /// Template for every identity block; `channels` is set per stage.
    pub block: BlockConfig,
    pub stage_widths: [usize; 4],
    pub stage_depths: [usize; 4],
    pub width_multiplier: f64,
    pub num_classes: usize,
    pub input_resolution: (usize, usize),
}

impl VesselConfig {
    pub fn new(kind: BlockKind) -> Self {
        VesselConfig {
            block: BlockConfig::new(kind, DEFAULT_WIDTHS[0]),
            stage_widths: DEFAULT_WIDTHS,
            stage_depths: DEFAULT_DEPTHS,
            width_multiplier: 1.0,
            num_classes: 10,
            input_resolution: (32, 32),
        }
    }

    /// `max(8, round(m·w))` per stage.
    pub fn effective_widths(&self) -> [usize; 4] {
        widths_at(&self.stage_widths, self.width_multiplier)
    }

    pub fn num_blocks(&self) -> usize {
        self.stage_depths.iter().sum()
    }

    pub fn stage_block(&self, stage: usize) -> BlockConfig {
        BlockConfig {
            channels: self.effective_widths()[stage],
            ..self.block.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage_depths.contains(&0) {
            return Err(Error::config("every stage needs at least one block"));
        }
        if self.stage_widths.contains(&0) {
            return Err(Error::config("stage widths must be positive"));
        }
        if !(self.width_multiplier.is_finite() && self.width_multiplier > 0.0) {
            return Err(Error::config(format!(
                "width multiplier {} must be positive",
                self.width_multiplier
            )));
        }
        if self.num_classes == 0 {
            return Err(Error::config("num_classes must be positive"));
        }
        let (h, w) = self.input_resolution;
        if h == 0 || w == 0 || h % TOTAL_STRIDE != 0 || w % TOTAL_STRIDE != 0 {
            return Err(Error::config(format!(
                "input resolution {h}x{w} is not divisible by the total stride {TOTAL_STRIDE}"
            )));
        }
        for s in 0..4 {
            self.stage_block(s).validate()?;
        }
        Ok(())
    }
}

fn widths_at(base: &[usize; 4], m: f64) -> [usize; 4] {
    base.map(|w| ((m * w as f64).round() as usize).max(MIN_WIDTH))
}

#[derive(Debug, Clone)]
pub struct Downsample {
    pub norm: NormLayer,
    pub conv: ConvLayer,
}

#[derive(Debug, Clone)]
pub struct Stage {
    pub downsample: Option<Downsample>,
    pub blocks: Vec<BlockGraph>,
}

#[derive(Debug, Clone)]
pub struct Head {
    pub norm: NormLayer,
    pub weight: ParamId,
    pub bias: ParamId,
}

#[derive(Debug, Clone)]
pub struct Model<T: Scalar = f32> {
    pub config: VesselConfig,
    pub store: ParamStore<T>,
    pub stem_conv: ConvLayer,
    pub stem_norm: NormLayer,
    pub stages: Vec<Stage>,
    pub head: Head,
}

pub fn build_vessel<T: Scalar>(config: &VesselConfig, init: &mut Init) -> Result<Model<T>> {
    config.validate()?;
    let widths = config.effective_widths();
    let norm = config.block.norm;
    let mut store = ParamStore::new();

    let stem_conv = ConvLayer::build(
        &mut store,
        init,
        "stem.conv",
        3,
        widths[0],
        3,
        ConvSpec::same(3, 1),
        false,
    )?;
    let stem_norm = NormLayer::build(&mut store, "stem.norm", norm, widths[0])?;

    let mut stages = Vec::with_capacity(4);
    for s in 0..4 {
        let downsample = if s == 0 {
            None
        } else {
            let p = format!("stages.{s}.downsample");
            Some(Downsample {
                norm: NormLayer::build(&mut store, &format!("{p}.norm"), norm, widths[s - 1])?,
                conv: ConvLayer::build(
                    &mut store,
                    init,
                    &format!("{p}.conv"),
                    widths[s - 1],
                    widths[s],
                    2,
                    ConvSpec::new(2, 0, 1),
                    true,
                )?,
            })
        };
        let block_cfg = config.stage_block(s);
        let blocks = (0..config.stage_depths[s])
            .map(|b| build_block(&block_cfg, &mut store, &format!("stages.{s}.blocks.{b}."), init))
            .collect::<Result<Vec<_>>>()?;
        stages.push(Stage { downsample, blocks });
    }

    let head_norm = NormLayer::build(&mut store, "head.norm", NormKind::LayerNorm, widths[3])?;
    let weight = store.add("head.linear.weight", init.weight(vec![widths[3], config.num_classes]))?;
    let bias = store.add("head.linear.bias", Tensor::zeros(vec![config.num_classes]))?;

    Ok(Model {
        config: config.clone(),
        store,
        stem_conv,
        stem_norm,
        stages,
        head: Head {
            norm: head_norm,
            weight,
            bias,
        },
    })
}

/// Learnable scalar count of the vessel described by `config`, without
/// materializing the whole model at once.
pub fn count_params(config: &VesselConfig) -> Result<usize> {
    let mut shallow = config.clone();
    shallow.stage_depths = [1; 4];
    let model = build_vessel::<f32>(&shallow, &mut Init::zeros())?;
    let mut total = model.store.total();
    for (s, stage) in model.stages.iter().enumerate() {
        total += (config.stage_depths[s] - 1) * stage.blocks[0].param_count(&model.store);
    }
    Ok(total)
}

impl<T: Scalar> Model<T> {
    pub fn param_count(&self) -> usize {
        self.store.total()
    }

    pub fn blocks(&self) -> impl Iterator<Item = &BlockGraph> {
        self.stages.iter().flat_map(|s| &s.blocks)
    }

    pub fn block_param_ids(&self) -> Vec<ParamId> {
        self.blocks().flat_map(BlockGraph::param_ids).collect()
    }

    /// Names of parameters outside identity blocks: stem, downsampling, head.
    pub fn non_block_param_names(&self) -> Vec<String> {
        let inside: std::collections::HashSet<ParamId> = self.block_param_ids().into_iter().collect();
        self.store
            .ids()
            .filter(|id| !inside.contains(id))
            .map(|id| self.store.name(id).to_string())
            .collect()
    }

    /// Zero the classifier so every logit is 0.
    pub fn zero_head(&mut self) {
        for id in [self.head.weight, self.head.bias] {
            self.store.get_mut(id).data_mut().fill(T::zero());
        }
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            store: self.store.cast(),
            stem_conv: self.stem_conv.clone(),
            stem_norm: self.stem_norm.clone(),
            stages: self.stages.clone(),
            head: self.head.clone(),
        }
    }

    /// Logits `[B, K]` for `x: [B, 3, H, W]`. `vars` must come from
    /// registering `self.store` on `tape`.
    pub fn forward(&mut self, tape: &mut Tape<T>, vars: &ParamVars, x: Var, mode: Mode) -> Result<Var> {
        self.forward_capture(tape, vars, x, mode, None)
    }

    /// As [`Model::forward`], additionally pushing every identity block's
    /// post-residual output onto `capture`.
    pub fn forward_capture(
        &mut self,
        tape: &mut Tape<T>,
        vars: &ParamVars,
        x: Var,
        mode: Mode,
        mut capture: Option<&mut Vec<Var>>,
    ) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        let (h, w) = self.config.input_resolution;
        if shape.len() != 4 || shape[1] != 3 {
            return Err(Error::shape("vessel", format!("expected [B, 3, H, W], got {shape:?}")));
        }
        if (shape[2], shape[3]) != (h, w) {
            return Err(Error::shape(
                "vessel",
                format!("expected {h}x{w} input, got {}x{}", shape[2], shape[3]),
            ));
        }
        let Model {
            store,
            stem_conv,
            stem_norm,
            stages,
            head,
            ..
        } = self;
        let stats = store.stats_mut();
        let mut hcur = stem_conv.forward(tape, vars, x)?;
        hcur = stem_norm.forward(tape, vars, stats, hcur, mode)?;
        for stage in stages.iter() {
            if let Some(ds) = &stage.downsample {
                hcur = ds.norm.forward(tape, vars, stats, hcur, mode)?;
                hcur = ds.conv.forward(tape, vars, hcur)?;
            }
            for block in &stage.blocks {
                hcur = block.forward(tape, vars, stats, hcur, mode)?;
                if let Some(c) = capture.as_deref_mut() {
                    c.push(hcur);
                }
            }
        }
        let pooled = tape.global_avg_pool(hcur)?;
        let normed = tape.layer_norm(
            pooled,
            vars.get(head.norm.gamma),
            vars.get(head.norm.beta),
            T::lit(NORM_EPS),
        )?;
        tape.linear(normed, vars.get(head.weight), vars.get(head.bias))
    }

    /// Gradient-free forward on a fresh tape.
    pub fn predict(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let vars = self.store.register(&mut tape, false);
        let xv = tape.constant(x.clone());
        let y = self.forward(&mut tape, &vars, xv, mode)?;
        Ok(tape.value(y).clone())
    }
}

/// Outcome of [`fit_budget`].
#[derive(Debug, Clone)]
pub struct BudgetFit {
    pub config: VesselConfig,
    pub params: usize,
    /// Every `(multiplier, count)` evaluated, in evaluation order.
    pub path: Vec<(f64, usize)>,
}

/// Multiplier interval `[lo, hi)` whose rounded widths equal `widths`.
fn width_interval(base: &[usize; 4], widths: &[usize; 4]) -> (f64, f64) {
    let mut lo: f64 = 0.0;
    let mut hi = f64::INFINITY;
    for (&b, &r) in base.iter().zip(widths) {
        let b = b as f64;
        let r = r as f64;
        if r > MIN_WIDTH as f64 {
            lo = lo.max((r - 0.5) / b);
        }
        hi = hi.min((r + 0.5) / b);
    }
    (lo, hi)
}

/// Shortest decimal multiplier producing the same widths as `m`.
fn canonical_multiplier(base: &[usize; 4], m: f64) -> f64 {
    let target = widths_at(base, m);
    let (lo, hi) = width_interval(base, &target);
    for digits in 0..=9 {
        let scale = 10f64.powi(digits);
        let c = (lo * scale).ceil() / scale;
        if c < hi && widths_at(base, c) == target {
            return c;
        }
    }
    m
}

/// Binary search on the width multiplier over [0.1, 8] for the vessel whose
/// parameter count is closest to `target`.
pub fn fit_budget(config: &VesselConfig, target: usize, tolerance: f64) -> Result<BudgetFit> {
    if target == 0 {
        return Err(Error::config("target parameter count must be positive"));
    }
    let mut path = Vec::new();
    let mut eval = |m: f64| -> Result<usize> {
        let mut c = config.clone();
        c.width_multiplier = m;
        let n = count_params(&c)?;
        path.push((m, n));
        Ok(n)
    };
    let (mut lo, mut hi) = MULTIPLIER_RANGE;
    let n_lo = eval(lo)?;
    let n_hi = eval(hi)?;
    let t = target as f64;
    let within = |n: usize| (n as f64 - t).abs() / t <= tolerance;
    if (n_lo as f64) > t * (1.0 + tolerance) || (n_hi as f64) < t * (1.0 - tolerance) {
        return Err(Error::config(format!(
            "target {target} parameters is outside the achievable range {n_lo}..={n_hi} \
             for multipliers {lo}..={hi}"
        )));
    }
    // invariant: count(lo) <= target < count(hi), unless target is at an end
    let (mut c_lo, mut c_hi) = (n_lo, n_hi);
    if c_lo < target && c_hi > target {
        while hi - lo > 1e-7 {
            let mid = 0.5 * (lo + hi);
            let n = eval(mid)?;
            if n <= target {
                lo = mid;
                c_lo = n;
            } else {
                hi = mid;
                c_hi = n;
            }
        }
    }
    let (m, params) = if (t - c_lo as f64).abs() <= (c_hi as f64 - t).abs() {
        (lo, c_lo)
    } else {
        (hi, c_hi)
    };
    if !within(params) {
        return Err(Error::config(format!(
            "closest achievable count to {target} is {params} (multiplier {m:.6}); \
             tolerance {tolerance} not met, achievable range {n_lo}..={n_hi}"
        )));
    }
    let mut out = config.clone();
    out.width_multiplier = canonical_multiplier(&config.stage_widths, m);
    Ok(BudgetFit {
        config: out,
        params,
        path,
    })
}

pub fn scale_to_budget(config: &VesselConfig, target: usize, tolerance: f64) -> Result<VesselConfig> {
    fit_budget(config, target, tolerance).map(|f| f.config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn micro(kind: BlockKind) -> VesselConfig {
        VesselConfig {
            stage_widths: [8; 4],
            stage_depths: [1; 4],
            input_resolution: (8, 8),
            ..VesselConfig::new(kind)
        }
    }

    #[test]
    fn default_vessel_has_eighteen_blocks() {
        let m = build_vessel::<f32>(&VesselConfig::new(BlockKind::InvertedV2), &mut Init::zeros()).unwrap();
        assert_eq!(m.blocks().count(), 18);
        assert_eq!(m.param_count(), count_params(&m.config).unwrap());
    }

    #[test]
    fn resolution_must_divide_stride() {
        let mut c = micro(BlockKind::ConvnextLike);
        c.input_resolution = (12, 12);
        assert!(matches!(
            build_vessel::<f32>(&c, &mut Init::zeros()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn small_multiplier_clamps_widths() {
        let mut c = VesselConfig::new(BlockKind::Sandglass);
        c.width_multiplier = 0.1;
        assert_eq!(c.effective_widths(), [8, 8, 10, 19]);
    }

    #[test]
    fn capture_records_every_block() {
        let mut m = build_vessel::<f32>(&micro(BlockKind::Nodepth), &mut Init::seeded(0)).unwrap();
        let mut t = Tape::new();
        let vars = m.store.register(&mut t, false);
        let x = t.constant(Tensor::full(vec![2, 3, 8, 8], 0.5));
        let mut cap = Vec::new();
        let y = m.forward_capture(&mut t, &vars, x, Mode::Eval, Some(&mut cap)).unwrap();
        assert_eq!(cap.len(), 4);
        assert_eq!(t.shape(cap[3]), &[2, 8, 1, 1]);
        assert_eq!(t.shape(y), &[2, 10]);
    }

    #[test]
    fn wrong_input_channels() {
        let mut m = build_vessel::<f32>(&micro(BlockKind::InvertedV3), &mut Init::seeded(0)).unwrap();
        assert!(matches!(
            m.predict(&Tensor::zeros(vec![1, 4, 8, 8]), Mode::Eval),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn canonical_multiplier_prefers_short_decimals() {
        assert_eq!(canonical_multiplier(&DEFAULT_WIDTHS, 1.0012), 1.0);
        let m = canonical_multiplier(&DEFAULT_WIDTHS, 0.73);
        assert_eq!(widths_at(&DEFAULT_WIDTHS, m), widths_at(&DEFAULT_WIDTHS, 0.73));
    }

    #[test]
    fn unreachable_budget_lists_range() {
        let err = scale_to_budget(&micro(BlockKind::ConvnextLike), 10, 0.05).unwrap_err();
        assert!(err.to_string().contains("achievable range"), "{err}");
    }
}
