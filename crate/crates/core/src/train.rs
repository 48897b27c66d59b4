//! Training and evaluation loops, the per-epoch run log and checkpoints.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::checkpoint::save_model;
use crate::data::{batches, mix_seed, sequential, Dataset};
use crate::error::{Error, Result};
use crate::nn::Mode;
use crate::optim::{cosine_lr, Adam, AdamConfig, LR_MAX};
use crate::tape::Tape;
use crate::tensor::{Scalar, Tensor};
use crate::vessel::Model;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub eval_batch_size: usize,
    pub seed: u64,
    pub lr_max: f64,
    pub lr_min: f64,
    pub augment: bool,
    /// Use only the first `n` training records.
    pub train_subset: Option<usize>,
    /// Fill the `seconds` column with wall time. Off by default so run logs
    /// are bitwise reproducible.
    pub record_time: bool,
    pub adam: AdamConfig,
    /// End training after the first epoch whose train accuracy reaches this.
    pub stop_at_train_acc: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 128,
            eval_batch_size: 256,
            seed: 0,
            lr_max: LR_MAX,
            lr_min: 0.0,
            augment: true,
            train_subset: None,
            record_time: false,
            adam: AdamConfig::default(),
            stop_at_train_acc: None,
        }
    }
}

impl TrainConfig {
    pub fn quick() -> Self {
        TrainConfig {
            epochs: 10,
            train_subset: Some(10_000),
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return Err(Error::config("batch sizes must be at least 1"));
        }
        if !(self.lr_max.is_finite() && self.lr_min.is_finite() && self.lr_max >= self.lr_min && self.lr_min >= 0.0) {
            return Err(Error::config(format!(
                "learning rates need 0 <= lr_min <= lr_max, got {} and {}",
                self.lr_min, self.lr_max
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    records: Vec<EpochRecord>,
}

impl RunLog {
    pub fn push(&mut self, r: EpochRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if r.epoch <= last.epoch {
                return Err(Error::config(format!(
                    "epoch {} does not follow epoch {}",
                    r.epoch, last.epoch
                )));
            }
        }
        self.records.push(r);
        Ok(())
    }

    pub fn records(&self) -> &[EpochRecord] {
        &self.records
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    pub fn best_test_acc(&self) -> Option<f64> {
        self.records.iter().map(|r| r.test_acc).reduce(f64::max)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.records {
            w.serialize(r)?;
        }
        if self.records.is_empty() {
            w.write_record(["epoch", "lr", "train_loss", "train_acc", "test_acc", "seconds"])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut log = RunLog::default();
        for r in csv::Reader::from_path(path)?.deserialize() {
            log.push(r?)?;
        }
        Ok(log)
    }
}

/// Number of rows whose argmax (first index on ties) equals the label.
pub fn count_correct<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> usize {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks(k)
        .zip(labels)
        .filter(|(row, &y)| argmax(row) == y)
        .count()
}

pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Mean cross-entropy and top-1 accuracy in eval mode.
pub fn evaluate(model: &mut Model<f32>, data: &Dataset, batch_size: usize) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::config("cannot evaluate on an empty dataset"));
    }
    let mut loss = 0.0;
    let mut correct = 0;
    for b in sequential(data, batch_size) {
        let mut tape = Tape::new();
        let vars = model.store.register(&mut tape, false);
        let x = tape.constant(b.x);
        let logits = model.forward(&mut tape, &vars, x, Mode::Eval)?;
        let l = tape.cross_entropy(logits, &b.labels)?;
        loss += tape.value(l).data()[0] as f64 * b.labels.len() as f64;
        correct += count_correct(tape.value(logits), &b.labels);
    }
    let n = data.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Where [`train`] writes `last.blab`, `best.blab` and `runlog.csv`.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub dir: PathBuf,
}

impl Artifacts {
    pub fn last(&self) -> PathBuf {
        self.dir.join("last.blab")
    }
    pub fn best(&self) -> PathBuf {
        self.dir.join("best.blab")
    }
    pub fn runlog(&self) -> PathBuf {
        self.dir.join("runlog.csv")
    }
}

pub fn train(
    model: &mut Model<f32>,
    train_set: &Dataset,
    test_set: &Dataset,
    cfg: &TrainConfig,
    artifacts: Option<&Artifacts>,
) -> Result<RunLog> {
    train_observed(model, train_set, test_set, cfg, artifacts, &mut |_| {})
}

/// [`train`] calling `observer` after each epoch.
pub fn train_observed(
    model: &mut Model<f32>,
    train_set: &Dataset,
    test_set: &Dataset,
    cfg: &TrainConfig,
    artifacts: Option<&Artifacts>,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<RunLog> {
    cfg.validate()?;
    let subset;
    let train_set = match cfg.train_subset {
        Some(n) if n < train_set.len() => {
            subset = train_set.subset(n);
            &subset
        }
        _ => train_set,
    };
    if train_set.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    if let Some(a) = artifacts {
        std::fs::create_dir_all(&a.dir)?;
    }
    let steps_per_epoch = train_set.len().div_ceil(cfg.batch_size) as u64;
    let total_steps = steps_per_epoch * cfg.epochs as u64;
    let mut opt = Adam::new(model.store.tensors(), cfg.adam);
    let mut log = RunLog::default();
    let mut best = f64::NEG_INFINITY;
    let mut step = 0u64;

    for epoch in 1..=cfg.epochs {
        // No clock on wasm32-unknown-unknown; only read it when asked.
        let started = cfg.record_time.then(Instant::now);
        let epoch_lr = cosine_lr(step, total_steps, cfg.lr_max, cfg.lr_min);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        let seed = mix_seed(cfg.seed, epoch as u64);
        for batch in batches(train_set, cfg.batch_size, seed, cfg.augment) {
            let mut tape = Tape::new();
            let vars = model.store.register(&mut tape, true);
            let x = tape.constant(batch.x);
            let logits = model.forward(&mut tape, &vars, x, Mode::Train)?;
            let loss = tape.cross_entropy(logits, &batch.labels)?;
            let lv = tape.value(loss).data()[0];
            if !lv.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite loss {lv} at epoch {epoch}, step {step}"
                )));
            }
            loss_sum += lv as f64 * batch.labels.len() as f64;
            correct += count_correct(tape.value(logits), &batch.labels);
            tape.backward(loss)?;
            let grads: Vec<Tensor<f32>> = vars.all().iter().map(|&v| tape.grad_or_zero(v)).collect();
            let lr = cosine_lr(step, total_steps, cfg.lr_max, cfg.lr_min);
            opt.step(model.store.tensors_mut(), &grads, lr)?;
            step += 1;
        }
        let (_, test_acc) = evaluate(model, test_set, cfg.eval_batch_size)?;
        let n = train_set.len() as f64;
        let record = EpochRecord {
            epoch,
            lr: epoch_lr,
            train_loss: loss_sum / n,
            train_acc: correct as f64 / n,
            test_acc,
            seconds: started.map_or(0.0, |t| t.elapsed().as_secs_f64()),
        };
        observer(&record);
        let done = cfg.stop_at_train_acc.is_some_and(|t| record.train_acc >= t);
        log.push(record)?;
        if let Some(a) = artifacts {
            save_model(model, &a.last())?;
            if test_acc > best {
                save_model(model, &a.best())?;
            }
            log.write_csv(&a.runlog())?;
        }
        best = best.max(test_acc);
        if done {
            break;
        }
    }
    Ok(log)
}
