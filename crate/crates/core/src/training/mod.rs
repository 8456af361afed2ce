//! Adam, contrastive pretraining, frozen-encoder classifier training, early
//! stopping and cross-validation.

mod adam;
mod classifier;
mod crossval;
mod pretrain;
mod rundir;

use std::fmt::Write as _;

pub use adam::{adam_step, AdamConfig, OptimState};
pub use classifier::{encode_dataset, train_classifier};
pub use crossval::{aggregate_by_subject, crossval, plan_folds, split_subjects, CrossvalConfig, FoldPlan, FoldResult, SubjectSummary};
pub use pretrain::{pretrain_contrastive, validation_loss};
pub use rundir::{write_config_snapshot, RunDir};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::ModelConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Pretrain,
    Classifier,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainPlan {
    pub phase: Phase,
    pub max_epochs: usize,
    pub patience: usize,
    /// Share of training subjects held out for validation when a split is derived.
    pub val_fraction: f64,
    pub seed: u64,
    pub lr: f64,
    pub weight_decay: f64,
    /// Single trials per classifier mini-batch.
    pub batch_size: usize,
    pub n_avg: usize,
    pub n_neg: usize,
}

impl TrainPlan {
    pub fn pretrain() -> Self {
        Self {
            phase: Phase::Pretrain,
            max_epochs: 100,
            patience: 30,
            val_fraction: 0.25,
            seed: 0,
            lr: 1e-3,
            weight_decay: 0.015,
            batch_size: 64,
            n_avg: 3,
            n_neg: 5,
        }
    }

    pub fn classifier() -> Self {
        Self {
            phase: Phase::Classifier,
            lr: 5e-4,
            ..Self::pretrain()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 {
            return Err(Error::config("max_epochs must be positive"));
        }
        if self.patience >= self.max_epochs {
            return Err(Error::config(format!(
                "patience {} must be below max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::config(format!("val_fraction {} outside [0, 1)", self.val_fraction)));
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::config("lr must be positive and weight_decay non-negative"));
        }
        if self.batch_size == 0 || self.n_avg == 0 || self.n_neg == 0 {
            return Err(Error::config("batch_size, n_avg and n_neg must be positive"));
        }
        Ok(())
    }

    /// Learning is better when the validation metric goes up.
    pub fn higher_is_better(&self) -> bool {
        self.phase == Phase::Classifier
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// NaN for epoch 0 (the untrained model).
    pub train_loss: f64,
    pub val_metric: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct History {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_metric: f64,
    pub higher_is_better: bool,
    pub stopped_early: bool,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_metric,seconds\n");
        for r in &self.records {
            let _ = writeln!(s, "{},{:.8},{:.8},{:.3}", r.epoch, r.train_loss, r.val_metric, r.seconds);
        }
        s
    }

    pub fn initial_metric(&self) -> f64 {
        self.records[0].val_metric
    }
}

/// Patience counter over a validation metric.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub higher_is_better: bool,
    pub best: f64,
    pub best_epoch: usize,
    wait: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, higher_is_better: bool) -> Self {
        Self {
            patience,
            higher_is_better,
            best: if higher_is_better { f64::NEG_INFINITY } else { f64::INFINITY },
            best_epoch: 0,
            wait: 0,
        }
    }

    /// Records `metric` for `epoch`; returns `(improved, stop)`.
    pub fn update(&mut self, epoch: usize, metric: f64) -> (bool, bool) {
        let improved = if self.higher_is_better {
            metric > self.best
        } else {
            metric < self.best
        };
        if improved {
            self.best = metric;
            self.best_epoch = epoch;
            self.wait = 0;
        } else {
            self.wait += 1;
        }
        (improved, self.wait > self.patience)
    }
}

pub(crate) fn check_dataset(ds: &Dataset, config: &ModelConfig, what: &str) -> Result<()> {
    let e = &config.encoder;
    if ds.n_channels != e.n_channels || ds.n_samples != e.n_samples {
        return Err(Error::shape(format!(
            "{what} trials are {}x{}, model expects {}x{}",
            ds.n_channels, ds.n_samples, e.n_channels, e.n_samples
        )));
    }
    Ok(())
}
