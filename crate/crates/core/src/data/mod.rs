//! Trials, datasets, the ERPD container, synthetic oddball EEG and the
//! subject-pair sampler.

mod erpd;
mod sampler;
mod synth;

use std::collections::BTreeMap;

pub use erpd::{load_erpd, read_erpd, save_erpd, write_erpd, ERPD_MAGIC, ERPD_VERSION};
pub use sampler::{average_trials, PairSampler, SubjectPairBatch, SubjectSamples};
pub use synth::{synth_generate, Paradigm, SpellerLayout, SynthConfig};

use crate::error::{Error, Result};

pub const DEFAULT_CHANNELS: [&str; 8] = ["Fz", "Cz", "Pz", "P3", "P4", "PO7", "PO8", "Oz"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    NonErp = 0,
    Erp = 1,
}

impl Label {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Label::NonErp),
            1 => Some(Label::Erp),
            _ => None,
        }
    }

    pub fn as_f64(self) -> f64 {
        self as u8 as f64
    }
}

/// One epoch of EEG, channel-major `[M, N]` samples in µV.
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub subject_id: u32,
    pub label: Label,
    /// 1-based speller flash code (rows first, then columns); 0 when unused.
    pub stimulus_code: u32,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub n_channels: usize,
    pub n_samples: usize,
    pub sample_rate: f32,
    pub channel_names: Vec<String>,
    pub trials: Vec<Trial>,
}

impl Dataset {
    pub fn new(n_channels: usize, n_samples: usize, sample_rate: f32, channel_names: Vec<String>) -> Self {
        Self {
            n_channels,
            n_samples,
            sample_rate,
            channel_names,
            trials: Vec::new(),
        }
    }

    pub fn push(&mut self, trial: Trial) -> Result<()> {
        if trial.data.len() != self.n_channels * self.n_samples {
            return Err(Error::shape(format!(
                "trial has {} samples, dataset expects {}x{}",
                trial.data.len(),
                self.n_channels,
                self.n_samples
            )));
        }
        self.trials.push(trial);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    /// subject id → trial indices, in file order.
    pub fn subject_index(&self) -> BTreeMap<u32, Vec<usize>> {
        let mut idx: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, t) in self.trials.iter().enumerate() {
            idx.entry(t.subject_id).or_default().push(i);
        }
        idx
    }

    pub fn subject_ids(&self) -> Vec<u32> {
        self.subject_index().into_keys().collect()
    }

    /// Subjects with at least one trial of each class.
    pub fn usable_subjects(&self) -> Vec<u32> {
        self.subject_index()
            .into_iter()
            .filter(|(_, idx)| {
                let erp = idx.iter().filter(|&&i| self.trials[i].label == Label::Erp).count();
                erp > 0 && erp < idx.len()
            })
            .map(|(s, _)| s)
            .collect()
    }

    /// Copy restricted to the given subjects, preserving trial order.
    pub fn subset(&self, subjects: &[u32]) -> Dataset {
        let mut out = Dataset::new(self.n_channels, self.n_samples, self.sample_rate, self.channel_names.clone());
        out.trials = self
            .trials
            .iter()
            .filter(|t| subjects.contains(&t.subject_id))
            .cloned()
            .collect();
        out
    }

    pub fn epoch_seconds(&self) -> f64 {
        self.n_samples as f64 / self.sample_rate as f64
    }
}
