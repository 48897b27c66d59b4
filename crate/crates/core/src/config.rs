//! TOML run and study configuration.
//!
//! ```toml
//! out = "runs/inv2"
//!
//! [model]
//! block = "inverted_v2"   # inverted_v2 | inverted_v3 | convnext_like | sandglass | nodepth
//! solu = false
//! # norm, activation, expansion, kernel default per block kind
//! stage_widths = [24, 48, 96, 192]
//! stage_depths = [3, 3, 9, 3]
//! width_multiplier = 1.0
//! # budget = 150000       # overrides width_multiplier via scale_to_budget
//! budget_tolerance = 0.01
//! num_classes = 10
//! input_resolution = [32, 32]
//!
//! [train]
//! profile = "full"        # full: 20 epochs on all records; quick: 10 epochs on 10k
//! # epochs, batch_size, eval_batch_size, seed, lr_max, lr_min, augment,
//! # train_subset, record_time override the profile
//!
//! [data]
//! dir = "data/cifar-10-batches-bin"   # BLAB_DATA_DIR overrides
//! # synthetic = { train = 512, test = 256, seed = 0 }
//! ```
//! Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::blocks::{BlockConfig, BlockKind};
use crate::data::{load_cifar10, synthetic_records, ChannelStats, Dataset, Split};
use crate::error::{Error, Result};
use crate::nn::{Activation, NormKind};
use crate::optim::AdamConfig;
use crate::train::TrainConfig;
use crate::vessel::{scale_to_budget, VesselConfig, DEFAULT_DEPTHS, DEFAULT_WIDTHS};

pub const DATA_DIR_ENV: &str = "BLAB_DATA_DIR";
pub const DEFAULT_DATA_DIR: &str = "data/cifar-10-batches-bin";
pub const DEFAULT_TOLERANCE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub block: BlockKind,
    pub norm: Option<NormKind>,
    pub activation: Option<Activation>,
    pub expansion: Option<f64>,
    pub kernel: Option<usize>,
    pub solu: bool,
    pub norm_ablation: bool,
    pub stage_widths: [usize; 4],
    pub stage_depths: [usize; 4],
    pub width_multiplier: f64,
    pub budget: Option<usize>,
    pub budget_tolerance: f64,
    pub num_classes: usize,
    pub input_resolution: [usize; 2],
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            block: BlockKind::InvertedV2,
            norm: None,
            activation: None,
            expansion: None,
            kernel: None,
            solu: false,
            norm_ablation: false,
            stage_widths: DEFAULT_WIDTHS,
            stage_depths: DEFAULT_DEPTHS,
            width_multiplier: 1.0,
            budget: None,
            budget_tolerance: DEFAULT_TOLERANCE,
            num_classes: 10,
            input_resolution: [32, 32],
        }
    }
}

impl ModelSection {
    /// Vessel at the stated multiplier, ignoring any budget.
    pub fn vessel_unscaled(&self) -> Result<VesselConfig> {
        let kind = self.block;
        let mut block = BlockConfig::new(kind, self.stage_widths[0]);
        if let Some(n) = self.norm {
            block.norm = n;
        }
        if let Some(a) = self.activation {
            block.activation = a;
        }
        if let Some(e) = self.expansion {
            block.expansion = e;
        }
        if let Some(k) = self.kernel {
            block.kernel = k;
        }
        block.solu = self.solu;
        block.norm_ablation = self.norm_ablation;
        let cfg = VesselConfig {
            block,
            stage_widths: self.stage_widths,
            stage_depths: self.stage_depths,
            width_multiplier: self.width_multiplier,
            num_classes: self.num_classes,
            input_resolution: (self.input_resolution[0], self.input_resolution[1]),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Vessel with the budget, if any, applied.
    pub fn vessel(&self) -> Result<VesselConfig> {
        let cfg = self.vessel_unscaled()?;
        match self.budget {
            Some(b) => scale_to_budget(&cfg, b, self.budget_tolerance),
            None => Ok(cfg),
        }
    }

    /// This section with every per-kind default filled in and the budget
    /// replaced by the multiplier it resolved to.
    pub fn resolved(&self) -> Result<ModelSection> {
        let v = self.vessel()?;
        Ok(ModelSection {
            norm: Some(v.block.norm),
            activation: Some(v.block.activation),
            expansion: Some(v.block.expansion),
            kernel: Some(v.block.kernel),
            width_multiplier: v.width_multiplier,
            budget: None,
            ..self.clone()
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    #[default]
    Full,
    Quick,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub profile: Profile,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub eval_batch_size: Option<usize>,
    pub seed: Option<u64>,
    pub lr_max: Option<f64>,
    pub lr_min: Option<f64>,
    pub augment: Option<bool>,
    pub train_subset: Option<usize>,
    pub record_time: Option<bool>,
    pub adam: Option<AdamConfig>,
}

impl TrainSection {
    pub fn train_config(&self) -> TrainConfig {
        let base = match self.profile {
            Profile::Full => TrainConfig::default(),
            Profile::Quick => TrainConfig::quick(),
        };
        TrainConfig {
            epochs: self.epochs.unwrap_or(base.epochs),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            eval_batch_size: self.eval_batch_size.unwrap_or(base.eval_batch_size),
            seed: self.seed.unwrap_or(base.seed),
            lr_max: self.lr_max.unwrap_or(base.lr_max),
            lr_min: self.lr_min.unwrap_or(base.lr_min),
            augment: self.augment.unwrap_or(base.augment),
            train_subset: self.train_subset.or(base.train_subset),
            record_time: self.record_time.unwrap_or(base.record_time),
            adam: self.adam.unwrap_or(base.adam),
            stop_at_train_acc: None,
        }
    }

    pub fn resolved(&self) -> TrainSection {
        let c = self.train_config();
        TrainSection {
            profile: self.profile,
            epochs: Some(c.epochs),
            batch_size: Some(c.batch_size),
            eval_batch_size: Some(c.eval_batch_size),
            seed: Some(c.seed),
            lr_max: Some(c.lr_max),
            lr_min: Some(c.lr_min),
            augment: Some(c.augment),
            train_subset: c.train_subset,
            record_time: Some(c.record_time),
            adam: Some(c.adam),
        }
    }
}

/// In-memory stand-in data in the CIFAR-10 layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub train: usize,
    pub test: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub dir: Option<PathBuf>,
    pub synthetic: Option<SyntheticSpec>,
}

impl DataSection {
    /// Data directory after the environment override.
    pub fn directory(&self) -> PathBuf {
        std::env::var_os(DATA_DIR_ENV)
            .map(PathBuf::from)
            .or_else(|| self.dir.clone())
            .unwrap_or_else(|| PathBuf::from(DEFAULT_DATA_DIR))
    }

    pub fn load(&self) -> Result<(Dataset, Dataset)> {
        match self.synthetic {
            Some(s) => synthetic_datasets(s),
            None => load_cifar10(&self.directory()),
        }
    }
}

pub fn synthetic_datasets(s: SyntheticSpec) -> Result<(Dataset, Dataset)> {
    if s.train == 0 || s.test == 0 {
        return Err(Error::config("synthetic splits need at least one record each"));
    }
    let (p, l) = synthetic_records(s.train, s.seed);
    let stats = ChannelStats::from_pixels(&p);
    let train = Dataset::from_raw(p, l, Split::Train, stats)?;
    let (p, l) = synthetic_records(s.test, s.seed.wrapping_add(1000));
    let test = Dataset::from_raw(p, l, Split::Test, stats)?;
    Ok((train, test))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub out: PathBuf,
    pub model: ModelSection,
    pub train: TrainSection,
    pub data: DataSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            out: PathBuf::from("runs/default"),
            model: ModelSection::default(),
            train: TrainSection::default(),
            data: DataSection::default(),
        }
    }
}

fn parse<T: serde::de::DeserializeOwned>(text: &str, origin: &Path) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::config(format!("{}: {e}", origin.display())))
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        parse(text, Path::new("<config>"))
    }

    pub fn load(path: &Path) -> Result<Self> {
        parse(&read(path)?, path)
    }

    pub fn resolved(&self) -> Result<RunConfig> {
        Ok(RunConfig {
            out: self.out.clone(),
            model: self.model.resolved()?,
            train: self.train.resolved(),
            data: DataSection {
                dir: match self.data.synthetic {
                    Some(_) => self.data.dir.clone(),
                    None => Some(self.data.directory()),
                },
                synthetic: self.data.synthetic,
            },
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }
}

/// One (block, norm) pair of a study; each is trained with and without SoLU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSpec {
    pub block: BlockKind,
    pub norm: Option<NormKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudyConfig {
    pub out: PathBuf,
    /// Crossed with `norms`; ignored when `cells` is non-empty.
    pub kinds: Vec<BlockKind>,
    pub norms: Vec<NormKind>,
    pub cells: Vec<CellSpec>,
    pub seeds: Vec<u64>,
    /// Shared parameter target for every cell.
    pub budget: Option<usize>,
    pub budget_tolerance: f64,
    pub analyze: bool,
    pub model: ModelSection,
    pub train: TrainSection,
    pub data: DataSection,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            out: PathBuf::from("runs/study"),
            kinds: vec![BlockKind::InvertedV2, BlockKind::ConvnextLike],
            norms: Vec::new(),
            cells: Vec::new(),
            seeds: vec![0],
            budget: None,
            budget_tolerance: DEFAULT_TOLERANCE,
            analyze: true,
            model: ModelSection::default(),
            train: TrainSection::default(),
            data: DataSection::default(),
        }
    }
}

impl StudyConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        parse(text, Path::new("<study>"))
    }

    pub fn load(path: &Path) -> Result<Self> {
        parse(&read(path)?, path)
    }

    pub fn cell_list(&self) -> Vec<CellSpec> {
        if !self.cells.is_empty() {
            return self.cells.clone();
        }
        let norms: Vec<Option<NormKind>> = if self.norms.is_empty() {
            vec![None]
        } else {
            self.norms.iter().copied().map(Some).collect()
        };
        self.kinds
            .iter()
            .flat_map(|&block| norms.iter().map(move |&norm| CellSpec { block, norm }))
            .collect()
    }

    /// Model section of one (cell, solu) run: the shared `[model]` section
    /// with the cell's block, norm, SoLU flag and the study budget.
    pub fn model_for(&self, cell: CellSpec, solu: bool) -> ModelSection {
        ModelSection {
            block: cell.block,
            norm: cell.norm.or(self.model.norm),
            // an explicit batch norm on ConvNeXt-like blocks is the ablation
            norm_ablation: self.model.norm_ablation || cell.norm.is_some(),
            solu,
            budget: self.budget.or(self.model.budget),
            budget_tolerance: self.budget_tolerance,
            ..self.model.clone()
        }
    }
}
