//! Named parameter registry and weight initialization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nn::RunningStats;
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StatsId(usize);

impl StatsId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Every learnable tensor of a model under a unique hierarchical name, plus
/// the non-learnable batch-norm statistics.
#[derive(Debug, Clone)]
pub struct ParamStore<T: Scalar = f32> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    stats_names: Vec<String>,
    stats: Vec<RunningStats<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
            stats_names: Vec::new(),
            stats: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.names.contains(&name) || self.stats_names.contains(&name) {
            return Err(Error::config(format!("duplicate parameter name `{name}`")));
        }
        self.names.push(name);
        self.tensors.push(tensor);
        Ok(ParamId(self.tensors.len() - 1))
    }

    pub fn add_stats(&mut self, name: impl Into<String>, channels: usize) -> Result<StatsId> {
        let name = name.into();
        if self.stats_names.contains(&name) {
            return Err(Error::config(format!("duplicate statistics name `{name}`")));
        }
        self.stats_names.push(name);
        self.stats.push(RunningStats::new(channels));
        Ok(StatsId(self.stats.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    /// Number of learnable scalars.
    pub fn total(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn count_of(&self, ids: &[ParamId]) -> usize {
        ids.iter().map(|&id| self.get(id).len()).sum()
    }

    pub fn stats(&self, id: StatsId) -> &RunningStats<T> {
        &self.stats[id.0]
    }

    pub fn stats_mut(&mut self) -> &mut [RunningStats<T>] {
        &mut self.stats
    }

    pub fn stats_iter(&self) -> impl Iterator<Item = (&str, &RunningStats<T>)> {
        self.stats_names.iter().map(String::as_str).zip(&self.stats)
    }

    pub fn stats_names(&self) -> &[String] {
        &self.stats_names
    }

    pub fn set_stats(&mut self, index: usize, stats: RunningStats<T>) {
        self.stats[index] = stats;
    }

    /// Record every parameter as a leaf. Index `i` of the result belongs to
    /// the parameter with id `i`.
    pub fn register(&self, tape: &mut Tape<T>, requires_grad: bool) -> ParamVars {
        ParamVars(
            self.tensors
                .iter()
                .map(|t| tape.leaf(t.clone(), requires_grad))
                .collect(),
        )
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            stats_names: self.stats_names.clone(),
            stats: self.stats.iter().map(RunningStats::cast).collect(),
        }
    }
}

/// Tape handles for a registered [`ParamStore`].
#[derive(Debug, Clone)]
pub struct ParamVars(Vec<Var>);

impl From<Vec<Var>> for ParamVars {
    /// Handles in parameter-id order, e.g. leaves recorded by hand.
    fn from(vars: Vec<Var>) -> Self {
        ParamVars(vars)
    }
}

impl ParamVars {
    pub fn get(&self, id: ParamId) -> Var {
        self.0[id.0]
    }

    pub fn all(&self) -> &[Var] {
        &self.0
    }
}

pub const INIT_STD: f64 = 0.02;

/// Seeded initializer: truncated normal (±2σ, resampled) for weights,
/// ones/zeros for norm affines.
#[derive(Debug, Clone)]
pub struct Init {
    rng: ChaCha8Rng,
    zeroed: bool,
}

impl Init {
    pub fn seeded(seed: u64) -> Self {
        Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
            zeroed: false,
        }
    }

    /// All weights zero. Used when only shapes matter, e.g. counting.
    pub fn zeros() -> Self {
        Init {
            rng: ChaCha8Rng::seed_from_u64(0),
            zeroed: true,
        }
    }

    pub fn trunc_normal<T: Scalar>(&mut self, shape: Vec<usize>, std: f64) -> Tensor<T> {
        let n: usize = shape.iter().product();
        let data = if self.zeroed {
            vec![T::zero(); n]
        } else {
            (0..n)
                .map(|_| loop {
                    let z: f64 = self.rng.sample(StandardNormal);
                    if z.abs() <= 2.0 {
                        break T::lit(z * std);
                    }
                })
                .collect()
        };
        Tensor::new(shape, data).expect("positive extents")
    }

    pub fn weight<T: Scalar>(&mut self, shape: Vec<usize>) -> Tensor<T> {
        self.trunc_normal(shape, INIT_STD)
    }
}
