//! Identity blocks: inverted (MobileNetV2/V3 style), ConvNeXt-like, sandglass
//! and NoDepth bottlenecks, each optionally with a SoLU module in front of
//! the residual add.
//!
//! A block is a flat list of [`Layer`]s ending in [`LayerOp::Residual`].
//! Layer order follows the block's defining composition exactly, e.g. the
//! inverted block is `norm(W_out(σ(norm(W_dw(σ(norm(W_in(x)))))))) + x`.
//! Convolutions carry no bias: every one of them is either followed by a
//! norm or feeds the residual stream directly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, ConvSpec, Mode, NormKind, RunningStats, NORM_EPS};
use crate::params::{Init, ParamId, ParamStore, ParamVars, StatsId};
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    InvertedV2,
    InvertedV3,
    ConvnextLike,
    Sandglass,
    Nodepth,
}

impl BlockKind {
    pub const ALL: [BlockKind; 5] = [
        BlockKind::InvertedV2,
        BlockKind::InvertedV3,
        BlockKind::ConvnextLike,
        BlockKind::Sandglass,
        BlockKind::Nodepth,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BlockKind::InvertedV2 => "inverted_v2",
            BlockKind::InvertedV3 => "inverted_v3",
            BlockKind::ConvnextLike => "convnext_like",
            BlockKind::Sandglass => "sandglass",
            BlockKind::Nodepth => "nodepth",
        }
    }

    pub fn is_inverted(self) -> bool {
        matches!(self, BlockKind::InvertedV2 | BlockKind::InvertedV3)
    }

    pub fn default_expansion(self) -> f64 {
        match self {
            BlockKind::InvertedV2 | BlockKind::InvertedV3 | BlockKind::ConvnextLike => 4.0,
            BlockKind::Sandglass => 0.5,
            BlockKind::Nodepth => 2.0,
        }
    }

    pub fn default_kernel(self) -> usize {
        match self {
            BlockKind::ConvnextLike => 7,
            _ => 3,
        }
    }

    pub fn default_norm(self) -> NormKind {
        match self {
            BlockKind::InvertedV2 | BlockKind::InvertedV3 | BlockKind::Sandglass => NormKind::BatchNorm,
            BlockKind::ConvnextLike | BlockKind::Nodepth => NormKind::LayerNorm,
        }
    }

    pub fn default_activation(self) -> Activation {
        match self {
            BlockKind::InvertedV2 | BlockKind::Sandglass => Activation::Relu6,
            BlockKind::InvertedV3 => Activation::Hardswish,
            BlockKind::ConvnextLike | BlockKind::Nodepth => Activation::Gelu,
        }
    }
}

impl std::fmt::Display for BlockKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for BlockKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        BlockKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config(format!("unknown block kind `{s}`")))
    }
}

/// Declarative description of one identity block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockConfig {
    pub kind: BlockKind,
    pub channels: usize,
    pub expansion: f64,
    pub kernel: usize,
    pub norm: NormKind,
    pub activation: Activation,
    pub solu: bool,
    /// Permit batch norm in the ConvNeXt-like block.
    pub norm_ablation: bool,
}

impl BlockConfig {
    pub fn new(kind: BlockKind, channels: usize) -> Self {
        BlockConfig {
            kind,
            channels,
            expansion: kind.default_expansion(),
            kernel: kind.default_kernel(),
            norm: kind.default_norm(),
            activation: kind.default_activation(),
            solu: false,
            norm_ablation: false,
        }
    }

    pub fn expansion(mut self, alpha: f64) -> Self {
        self.expansion = alpha;
        self
    }

    pub fn kernel(mut self, k: usize) -> Self {
        self.kernel = k;
        self
    }

    pub fn norm(mut self, norm: NormKind) -> Self {
        self.norm = norm;
        self
    }

    pub fn activation(mut self, a: Activation) -> Self {
        self.activation = a;
        self
    }

    pub fn solu(mut self, on: bool) -> Self {
        self.solu = on;
        self
    }

    /// `round(α·C)`, at least 1.
    pub fn expanded(&self) -> usize {
        ((self.expansion * self.channels as f64).round() as usize).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let kind = self.kind;
        if self.channels == 0 {
            return Err(Error::config("block needs at least one channel"));
        }
        if !(self.expansion.is_finite() && self.expansion > 0.0) {
            return Err(Error::config(format!(
                "expansion ratio {} must be positive",
                self.expansion
            )));
        }
        if self.kernel == 0 || self.kernel.is_multiple_of(2) {
            return Err(Error::config(format!("kernel size {} must be odd", self.kernel)));
        }
        match kind {
            BlockKind::InvertedV2 | BlockKind::InvertedV3 | BlockKind::Nodepth if self.expansion < 2.0 => Err(
                Error::config(format!("{kind} needs expansion >= 2, got {}", self.expansion)),
            ),
            BlockKind::Sandglass if self.expansion > 1.0 => Err(Error::config(format!(
                "sandglass needs expansion <= 1, got {}",
                self.expansion
            ))),
            BlockKind::Nodepth if self.norm != NormKind::LayerNorm => Err(Error::config("nodepth requires layer_norm")),
            BlockKind::ConvnextLike if self.norm == NormKind::BatchNorm && !self.norm_ablation => Err(Error::config(
                "convnext_like uses layer_norm; set norm_ablation to request batch_norm",
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    WIn,
    WDw,
    WDw2,
    WMid,
    WOut,
    Norm,
    Act,
    SoluLn,
    /// Start of a bypass branch whose output is concatenated with its input.
    Branch,
    Concat,
    Shuffle,
    Residual,
}

#[derive(Debug, Clone)]
pub struct ConvLayer {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub spec: ConvSpec,
}

impl ConvLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn build<T: Scalar>(
        store: &mut ParamStore<T>,
        init: &mut Init,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        spec: ConvSpec,
        bias: bool,
    ) -> Result<Self> {
        let weight = store.add(
            format!("{name}.weight"),
            init.weight(vec![cout, cin / spec.groups, k, k]),
        )?;
        let bias = if bias {
            Some(store.add(format!("{name}.bias"), Tensor::zeros(vec![cout]))?)
        } else {
            None
        };
        Ok(ConvLayer { weight, bias, spec })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, vars: &ParamVars, x: Var) -> Result<Var> {
        tape.conv2d(x, vars.get(self.weight), self.bias.map(|b| vars.get(b)), self.spec)
    }

    pub fn params(&self) -> Vec<ParamId> {
        std::iter::once(self.weight).chain(self.bias).collect()
    }
}

#[derive(Debug, Clone)]
pub struct NormLayer {
    pub kind: NormKind,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub stats: Option<StatsId>,
}

impl NormLayer {
    pub fn build<T: Scalar>(store: &mut ParamStore<T>, name: &str, kind: NormKind, channels: usize) -> Result<Self> {
        let gamma = store.add(format!("{name}.gamma"), Tensor::ones(vec![channels]))?;
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(vec![channels]))?;
        let stats = match kind {
            NormKind::BatchNorm => Some(store.add_stats(name.to_string(), channels)?),
            NormKind::LayerNorm => None,
        };
        Ok(NormLayer {
            kind,
            gamma,
            beta,
            stats,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        vars: &ParamVars,
        stats: &mut [RunningStats<T>],
        x: Var,
        mode: Mode,
    ) -> Result<Var> {
        let (g, b) = (vars.get(self.gamma), vars.get(self.beta));
        let eps = T::lit(NORM_EPS);
        match (self.kind, self.stats) {
            (NormKind::LayerNorm, _) => tape.layer_norm(x, g, b, eps),
            (NormKind::BatchNorm, Some(id)) => tape.batch_norm(x, g, b, &mut stats[id.index()], mode, eps),
            (NormKind::BatchNorm, None) => Err(Error::config("batch norm layer without running statistics")),
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.gamma, self.beta]
    }
}

#[derive(Debug, Clone)]
pub enum LayerOp {
    Conv(ConvLayer),
    Norm(NormLayer),
    Act(Activation),
    SoluLn {
        gamma: ParamId,
        beta: ParamId,
    },
    /// `concat(h, branch(h))` along channels.
    Branch(Vec<Layer>),
    Shuffle(usize),
    Residual,
}

#[derive(Debug, Clone)]
pub struct Layer {
    pub role: Role,
    pub op: LayerOp,
}

/// A built identity block. Parameters live in the [`ParamStore`] it was
/// built against.
#[derive(Debug, Clone)]
pub struct BlockGraph {
    pub config: BlockConfig,
    pub prefix: String,
    pub layers: Vec<Layer>,
}

struct Builder<'a, T: Scalar> {
    store: &'a mut ParamStore<T>,
    init: &'a mut Init,
    prefix: String,
    norms: usize,
}

impl<T: Scalar> Builder<'_, T> {
    fn name(&self, n: &str) -> String {
        format!("{}{n}", self.prefix)
    }

    fn pointwise(&mut self, role: Role, name: &str, cin: usize, cout: usize) -> Result<Layer> {
        let conv = ConvLayer::build(
            self.store,
            self.init,
            &self.name(name),
            cin,
            cout,
            1,
            ConvSpec::pointwise(),
            false,
        )?;
        Ok(Layer {
            role,
            op: LayerOp::Conv(conv),
        })
    }

    fn depthwise(&mut self, role: Role, name: &str, c: usize, k: usize) -> Result<Layer> {
        let conv = ConvLayer::build(
            self.store,
            self.init,
            &self.name(name),
            c,
            c,
            k,
            ConvSpec::same(k, c),
            false,
        )?;
        Ok(Layer {
            role,
            op: LayerOp::Conv(conv),
        })
    }

    fn norm(&mut self, kind: NormKind, c: usize) -> Result<Layer> {
        self.norms += 1;
        let name = self.name(&format!("norm{}", self.norms));
        Ok(Layer {
            role: Role::Norm,
            op: LayerOp::Norm(NormLayer::build(self.store, &name, kind, c)?),
        })
    }
}

fn act(a: Activation) -> Layer {
    Layer {
        role: Role::Act,
        op: LayerOp::Act(a),
    }
}

fn residual() -> Layer {
    Layer {
        role: Role::Residual,
        op: LayerOp::Residual,
    }
}

fn start<'a, T: Scalar>(
    config: &BlockConfig,
    store: &'a mut ParamStore<T>,
    prefix: &str,
    init: &'a mut Init,
) -> Result<Builder<'a, T>> {
    config.validate()?;
    Ok(Builder {
        store,
        init,
        prefix: prefix.to_string(),
        norms: 0,
    })
}

/// Inverted bottleneck: expand, depthwise in the expanded space, reduce.
pub fn build_inverted<T: Scalar>(
    config: &BlockConfig,
    store: &mut ParamStore<T>,
    prefix: &str,
    init: &mut Init,
) -> Result<BlockGraph> {
    if !config.kind.is_inverted() {
        return Err(Error::config(format!("build_inverted called for {}", config.kind)));
    }
    let mut b = start(config, store, prefix, init)?;
    let (c, e, k, n, a) = (
        config.channels,
        config.expanded(),
        config.kernel,
        config.norm,
        config.activation,
    );
    let layers = vec![
        b.pointwise(Role::WIn, "w_in", c, e)?,
        b.norm(n, e)?,
        act(a),
        b.depthwise(Role::WDw, "w_dw", e, k)?,
        b.norm(n, e)?,
        act(a),
        b.pointwise(Role::WOut, "w_out", e, c)?,
        b.norm(n, c)?,
        residual(),
    ];
    Ok(BlockGraph {
        config: config.clone(),
        prefix: prefix.to_string(),
        layers,
    })
}

/// ConvNeXt-like: depthwise at the input width, one norm, expand, one
/// activation, reduce.
pub fn build_convnext_like<T: Scalar>(
    config: &BlockConfig,
    store: &mut ParamStore<T>,
    prefix: &str,
    init: &mut Init,
) -> Result<BlockGraph> {
    if config.kind != BlockKind::ConvnextLike {
        return Err(Error::config(format!("build_convnext_like called for {}", config.kind)));
    }
    let mut b = start(config, store, prefix, init)?;
    let (c, e, k) = (config.channels, config.expanded(), config.kernel);
    let layers = vec![
        b.depthwise(Role::WDw, "w_dw", c, k)?,
        b.norm(config.norm, c)?,
        b.pointwise(Role::WIn, "w_in", c, e)?,
        act(config.activation),
        b.pointwise(Role::WOut, "w_out", e, c)?,
        residual(),
    ];
    Ok(BlockGraph {
        config: config.clone(),
        prefix: prefix.to_string(),
        layers,
    })
}

/// Sandglass: depthwise at the input width on both ends, reduce then expand
/// in between.
pub fn build_sandglass<T: Scalar>(
    config: &BlockConfig,
    store: &mut ParamStore<T>,
    prefix: &str,
    init: &mut Init,
) -> Result<BlockGraph> {
    if config.kind != BlockKind::Sandglass {
        return Err(Error::config(format!("build_sandglass called for {}", config.kind)));
    }
    let mut b = start(config, store, prefix, init)?;
    let (c, e, k, n) = (config.channels, config.expanded(), config.kernel, config.norm);
    let layers = vec![
        b.depthwise(Role::WDw, "w_dw", c, k)?,
        b.norm(n, c)?,
        b.pointwise(Role::WIn, "w_in", c, e)?,
        b.norm(n, e)?,
        act(config.activation),
        b.pointwise(Role::WOut, "w_out", e, c)?,
        b.norm(n, c)?,
        b.depthwise(Role::WDw2, "w_dw2", c, k)?,
        b.norm(n, c)?,
        residual(),
    ];
    Ok(BlockGraph {
        config: config.clone(),
        prefix: prefix.to_string(),
        layers,
    })
}

/// NoDepth: depthwise at the input width and layer norm, pointwise expansion,
/// then a cheap pointwise branch concatenated with the retained expansion,
/// a two-group channel shuffle and a pointwise reduction.
pub fn build_nodepth<T: Scalar>(
    config: &BlockConfig,
    store: &mut ParamStore<T>,
    prefix: &str,
    init: &mut Init,
) -> Result<BlockGraph> {
    if config.kind != BlockKind::Nodepth {
        return Err(Error::config(format!("build_nodepth called for {}", config.kind)));
    }
    let mut b = start(config, store, prefix, init)?;
    let (c, e, k, a) = (config.channels, config.expanded(), config.kernel, config.activation);
    let branch = vec![b.pointwise(Role::WMid, "w_mid", e, e)?, act(a)];
    let layers = vec![
        b.depthwise(Role::WDw, "w_dw", c, k)?,
        b.norm(NormKind::LayerNorm, c)?,
        b.pointwise(Role::WIn, "w_in", c, e)?,
        act(a),
        Layer {
            role: Role::Branch,
            op: LayerOp::Branch(branch),
        },
        Layer {
            role: Role::Shuffle,
            op: LayerOp::Shuffle(2),
        },
        b.pointwise(Role::WOut, "w_out", 2 * e, c)?,
        residual(),
    ];
    Ok(BlockGraph {
        config: config.clone(),
        prefix: prefix.to_string(),
        layers,
    })
}

/// Insert `ln(SoLU(·))` between the block's branch output and its residual add.
pub fn wrap_solu_residual<T: Scalar>(mut block: BlockGraph, store: &mut ParamStore<T>) -> Result<BlockGraph> {
    if block.is_solu_wrapped() {
        return Err(Error::config(format!("{} is already SoLU-wrapped", block.prefix)));
    }
    let pos = block
        .layers
        .iter()
        .rposition(|l| l.role == Role::Residual)
        .ok_or_else(|| Error::config("block has no residual add"))?;
    let c = block.config.channels;
    let gamma = store.add(format!("{}solu_ln.gamma", block.prefix), Tensor::ones(vec![c]))?;
    let beta = store.add(format!("{}solu_ln.beta", block.prefix), Tensor::zeros(vec![c]))?;
    block.layers.insert(
        pos,
        Layer {
            role: Role::SoluLn,
            op: LayerOp::SoluLn { gamma, beta },
        },
    );
    block.config.solu = true;
    Ok(block)
}

/// Build the block described by `config`, wrapping it with the SoLU module
/// when `config.solu` is set.
pub fn build_block<T: Scalar>(
    config: &BlockConfig,
    store: &mut ParamStore<T>,
    prefix: &str,
    init: &mut Init,
) -> Result<BlockGraph> {
    let base_cfg = BlockConfig {
        solu: false,
        ..config.clone()
    };
    let base = match config.kind {
        BlockKind::InvertedV2 | BlockKind::InvertedV3 => build_inverted(&base_cfg, store, prefix, init)?,
        BlockKind::ConvnextLike => build_convnext_like(&base_cfg, store, prefix, init)?,
        BlockKind::Sandglass => build_sandglass(&base_cfg, store, prefix, init)?,
        BlockKind::Nodepth => build_nodepth(&base_cfg, store, prefix, init)?,
    };
    if config.solu {
        wrap_solu_residual(base, store)
    } else {
        Ok(base)
    }
}

fn collect_roles(layers: &[Layer], out: &mut Vec<Role>) {
    for l in layers {
        out.push(l.role);
        if let LayerOp::Branch(inner) = &l.op {
            collect_roles(inner, out);
            out.push(Role::Concat);
        }
    }
}

fn collect_params(layers: &[Layer], out: &mut Vec<ParamId>) {
    for l in layers {
        match &l.op {
            LayerOp::Conv(c) => out.extend(c.params()),
            LayerOp::Norm(n) => out.extend(n.params()),
            LayerOp::SoluLn { gamma, beta } => out.extend([*gamma, *beta]),
            LayerOp::Branch(inner) => collect_params(inner, out),
            LayerOp::Act(_) | LayerOp::Shuffle(_) | LayerOp::Residual => {}
        }
    }
}

struct RunCtx<'a, T: Scalar> {
    vars: &'a ParamVars,
    stats: &'a mut [RunningStats<T>],
    mode: Mode,
    bypass_solu: bool,
}

fn run_layers<T: Scalar>(layers: &[Layer], tape: &mut Tape<T>, ctx: &mut RunCtx<'_, T>, input: Var) -> Result<Var> {
    let mut h = input;
    for layer in layers {
        h = match &layer.op {
            LayerOp::Conv(c) => c.forward(tape, ctx.vars, h)?,
            LayerOp::Norm(n) => n.forward(tape, ctx.vars, ctx.stats, h, ctx.mode)?,
            LayerOp::Act(a) => tape.activation(h, *a),
            LayerOp::SoluLn { gamma, beta } => {
                if ctx.bypass_solu {
                    h
                } else {
                    tape.solu_ln(h, ctx.vars.get(*gamma), ctx.vars.get(*beta), T::lit(NORM_EPS))?
                }
            }
            LayerOp::Branch(inner) => {
                let b = run_layers(inner, tape, ctx, h)?;
                tape.channel_concat(&[h, b])?
            }
            LayerOp::Shuffle(g) => tape.channel_shuffle(h, *g)?,
            LayerOp::Residual => tape.add(h, input)?,
        };
    }
    Ok(h)
}

impl BlockGraph {
    pub fn channels(&self) -> usize {
        self.config.channels
    }

    pub fn is_solu_wrapped(&self) -> bool {
        self.layers.iter().any(|l| l.role == Role::SoluLn)
    }

    /// Flattened layer roles; a bypass branch appears as
    /// `Branch, <branch roles>, Concat`.
    pub fn role_sequence(&self) -> Vec<Role> {
        let mut out = Vec::new();
        collect_roles(&self.layers, &mut out);
        out
    }

    pub fn count_role(&self, role: Role) -> usize {
        self.role_sequence().iter().filter(|&&r| r == role).count()
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut out = Vec::new();
        collect_params(&self.layers, &mut out);
        out
    }

    pub fn param_count<T: Scalar>(&self, store: &ParamStore<T>) -> usize {
        store.count_of(&self.param_ids())
    }

    /// Channel width seen by each convolution, in layer order.
    pub fn conv_widths<T: Scalar>(&self, store: &ParamStore<T>) -> Vec<(Role, usize, usize)> {
        fn walk<T: Scalar>(layers: &[Layer], store: &ParamStore<T>, out: &mut Vec<(Role, usize, usize)>) {
            for l in layers {
                match &l.op {
                    LayerOp::Conv(c) => {
                        let s = store.get(c.weight).shape();
                        out.push((l.role, s[1] * c.spec.groups, s[0]));
                    }
                    LayerOp::Branch(inner) => walk(inner, store, out),
                    _ => {}
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.layers, store, &mut out);
        out
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        vars: &ParamVars,
        stats: &mut [RunningStats<T>],
        x: Var,
        mode: Mode,
    ) -> Result<Var> {
        self.forward_inner(tape, vars, stats, x, mode, false)
    }

    /// Forward with the SoLU module replaced by the identity.
    pub(crate) fn forward_inner<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        vars: &ParamVars,
        stats: &mut [RunningStats<T>],
        x: Var,
        mode: Mode,
        bypass_solu: bool,
    ) -> Result<Var> {
        let shape = tape.shape(x);
        if shape.len() != 4 || shape[1] != self.config.channels {
            return Err(Error::shape(
                "block",
                format!(
                    "{} expects [B, {}, H, W], got {shape:?}",
                    self.prefix, self.config.channels
                ),
            ));
        }
        let mut ctx = RunCtx {
            vars,
            stats,
            mode,
            bypass_solu,
        };
        run_layers(&self.layers, tape, &mut ctx, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn build(cfg: &BlockConfig) -> (ParamStore<f64>, BlockGraph) {
        let mut store = ParamStore::new();
        let g = build_block(cfg, &mut store, "b.", &mut Init::seeded(1)).unwrap();
        (store, g)
    }

    fn random_input(shape: Vec<usize>, seed: u64) -> Tensor<f64> {
        let mut init = Init::seeded(seed);
        init.trunc_normal(shape, 1.0)
    }

    fn run(store: &mut ParamStore<f64>, g: &BlockGraph, x: &Tensor<f64>, mode: Mode, bypass: bool) -> Tensor<f64> {
        let mut t = Tape::new();
        let vars = store.register(&mut t, false);
        let xv = t.constant(x.clone());
        let y = g
            .forward_inner(&mut t, &vars, store.stats_mut(), xv, mode, bypass)
            .unwrap();
        t.value(y).clone()
    }

    #[test]
    fn config_errors() {
        let bad = [
            BlockConfig::new(BlockKind::InvertedV2, 8).expansion(1.5),
            BlockConfig::new(BlockKind::Sandglass, 8).expansion(2.0),
            BlockConfig::new(BlockKind::Nodepth, 8).norm(NormKind::BatchNorm),
            BlockConfig::new(BlockKind::ConvnextLike, 8).norm(NormKind::BatchNorm),
            BlockConfig::new(BlockKind::InvertedV3, 8).kernel(4),
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))), "{cfg:?}");
        }
        let mut ablate = BlockConfig::new(BlockKind::ConvnextLike, 8).norm(NormKind::BatchNorm);
        ablate.norm_ablation = true;
        assert!(ablate.validate().is_ok());
    }

    #[test]
    fn wrong_builder_rejected() {
        let mut store = ParamStore::<f32>::new();
        let cfg = BlockConfig::new(BlockKind::Sandglass, 8);
        assert!(build_inverted(&cfg, &mut store, "", &mut Init::zeros()).is_err());
    }

    #[test]
    fn wrapping_twice_fails() {
        let (mut store, g) = build(&BlockConfig::new(BlockKind::InvertedV2, 8).solu(true));
        assert!(wrap_solu_residual(g, &mut store).is_err());
    }

    #[test]
    fn zero_weights_give_identity() {
        for kind in BlockKind::ALL {
            let cfg = BlockConfig::new(kind, 8);
            let mut store = ParamStore::<f64>::new();
            let g = build_block(&cfg, &mut store, "z.", &mut Init::zeros()).unwrap();
            let x = random_input(vec![2, 8, 5, 5], 3);
            assert_eq!(run(&mut store, &g, &x, Mode::Eval, false), x, "{kind}");
        }
    }

    #[test]
    fn zero_branch_with_solu_is_identity() {
        let cfg = BlockConfig::new(BlockKind::ConvnextLike, 8).solu(true);
        let mut store = ParamStore::<f64>::new();
        let g = build_block(&cfg, &mut store, "z.", &mut Init::zeros()).unwrap();
        let x = random_input(vec![1, 8, 4, 4], 5);
        let y = run(&mut store, &g, &x, Mode::Eval, false);
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn solu_bypass_matches_base_block() {
        for kind in BlockKind::ALL {
            let base_cfg = BlockConfig::new(kind, 8);
            let (mut s1, base) = build(&base_cfg);
            let (mut s2, wrapped) = build(&base_cfg.clone().solu(true));
            let x = random_input(vec![2, 8, 6, 6], 11);
            for mode in [Mode::Train, Mode::Eval] {
                let a = run(&mut s1, &base, &x, mode, false);
                let b = run(&mut s2, &wrapped, &x, mode, true);
                assert_eq!(a, b, "{kind} {mode:?}");
            }
        }
    }

    #[test]
    fn shape_is_preserved() {
        for kind in BlockKind::ALL {
            for solu in [false, true] {
                let (mut s, g) = build(&BlockConfig::new(kind, 8).solu(solu));
                let x = random_input(vec![2, 8, 16, 16], 2);
                assert_eq!(run(&mut s, &g, &x, Mode::Train, false).shape(), x.shape());
            }
        }
    }

    #[test]
    fn wrong_channel_count_rejected() {
        let (mut s, g) = build(&BlockConfig::new(BlockKind::InvertedV2, 8));
        let mut t = Tape::new();
        let vars = s.register(&mut t, false);
        let x = t.constant(Tensor::zeros(vec![1, 4, 4, 4]));
        assert!(g.forward(&mut t, &vars, s.stats_mut(), x, Mode::Eval).is_err());
    }
}
