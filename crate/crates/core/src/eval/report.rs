use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::auc::auc;
use super::speller::{selections, speller_decode};
use crate::data::{Dataset, Label, SpellerLayout};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::tensor::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub layout: SpellerLayout,
    /// Flashes per row and column in one selection.
    pub repetitions: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            layout: SpellerLayout::DEFAULT,
            repetitions: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectResult {
    pub subject_id: u32,
    pub auc: f64,
    pub n_trials: usize,
    /// `None` without stimulus codes.
    pub speller_acc: Option<f64>,
    pub n_selections: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub subjects: Vec<SubjectResult>,
    pub mean_auc: f64,
    /// Population standard deviation over subjects.
    pub std_auc: f64,
    /// Correct selections over all selections, pooled across subjects.
    pub speller_accuracy: Option<f64>,
    pub speller_mean: Option<f64>,
    pub speller_std: Option<f64>,
    pub n_selections: usize,
    pub n_trials: usize,
    pub fingerprint: String,
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// First 16 hex digits of the SHA-256 of `text`.
pub fn fingerprint(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Builds a report from one score per trial of `test`, in dataset order.
pub fn evaluate_scores(test: &Dataset, scores: &[f64], opts: &EvalOptions, fingerprint: &str) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::config("evaluate: empty test set"));
    }
    if scores.len() != test.len() {
        return Err(Error::shape(format!("{} scores for {} trials", scores.len(), test.len())));
    }
    let trials: Vec<_> = test.trials.iter().collect();
    let mut subjects = Vec::new();
    let mut correct_total = 0;
    let mut selections_total = 0;
    let mut any_speller = false;
    for (subject_id, idx) in test.subject_index() {
        let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
        let l: Vec<Label> = idx.iter().map(|&i| trials[i].label).collect();
        let a = auc(&s, &l).map_err(|e| match e {
            Error::UndefinedMetric(m) => Error::UndefinedMetric(format!("subject {subject_id}: {m}")),
            other => other,
        })?;
        let mut speller_acc = None;
        let mut n_sel = 0;
        if let Some(sel) = selections(&trials, &idx, opts.layout, opts.repetitions)? {
            let mut correct = 0;
            for selection in &sel {
                let flashes: Vec<(u32, f64)> = selection
                    .trials
                    .iter()
                    .map(|&i| (trials[i].stimulus_code, scores[i]))
                    .collect();
                if speller_decode(&flashes, opts.layout)? == selection.target {
                    correct += 1;
                }
            }
            n_sel = sel.len();
            if n_sel > 0 {
                speller_acc = Some(correct as f64 / n_sel as f64);
                any_speller = true;
            }
            correct_total += correct;
            selections_total += n_sel;
        }
        subjects.push(SubjectResult {
            subject_id,
            auc: a,
            n_trials: idx.len(),
            speller_acc,
            n_selections: n_sel,
        });
    }
    let aucs: Vec<f64> = subjects.iter().map(|s| s.auc).collect();
    let (mean_auc, std_auc) = mean_std(&aucs);
    let (speller_accuracy, speller_mean, speller_std) = if any_speller {
        let accs: Vec<f64> = subjects.iter().filter_map(|s| s.speller_acc).collect();
        let (m, sd) = mean_std(&accs);
        (Some(correct_total as f64 / selections_total as f64), Some(m), Some(sd))
    } else {
        (None, None, None)
    };
    Ok(EvalReport {
        subjects,
        mean_auc,
        std_auc,
        speller_accuracy,
        speller_mean,
        speller_std,
        n_selections: selections_total,
        n_trials: test.len(),
        fingerprint: fingerprint.to_string(),
    })
}

/// Single-trial logits for every trial, in dataset order.
pub fn predict_logits<T: Scalar>(model: &ModelParams<T>, test: &Dataset) -> Result<Vec<f64>> {
    test.trials.iter().map(|t| model.predict_logit(&t.data)).collect()
}

/// Scores every test trial with `model` and reports per-subject AUC and
/// speller accuracy.
pub fn evaluate<T: Scalar>(model: &ModelParams<T>, test: &Dataset, opts: &EvalOptions) -> Result<EvalReport> {
    let scores = predict_logits(model, test)?;
    evaluate_scores(test, &scores, opts, &fingerprint(&format!("{:?}", model.config)))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"))
}

impl EvalReport {
    /// `key: value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "fingerprint: {}", self.fingerprint);
        let _ = writeln!(s, "n_subjects: {}", self.subjects.len());
        let _ = writeln!(s, "n_trials: {}", self.n_trials);
        let _ = writeln!(s, "auc_mean: {:.6}", self.mean_auc);
        let _ = writeln!(s, "auc_std: {:.6}", self.std_auc);
        let _ = writeln!(s, "speller_accuracy: {}", opt(self.speller_accuracy));
        let _ = writeln!(s, "speller_mean: {}", opt(self.speller_mean));
        let _ = writeln!(s, "speller_std: {}", opt(self.speller_std));
        let _ = writeln!(s, "n_selections: {}", self.n_selections);
        for r in &self.subjects {
            let _ = writeln!(
                s,
                "subject_{}: auc={:.6} n_trials={} speller_acc={}",
                r.subject_id,
                r.auc,
                r.n_trials,
                opt(r.speller_acc)
            );
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("subject_id,auc,n_trials,speller_acc\n");
        for r in &self.subjects {
            let _ = writeln!(s, "{},{:.6},{},{}", r.subject_id, r.auc, r.n_trials, opt(r.speller_acc));
        }
        s
    }

    /// Writes `<stem>.txt` and `<stem>.csv` under `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        let txt = dir.join(format!("{stem}.txt"));
        fs::write(&txt, self.to_text()).map_err(|e| Error::io(&txt, e))?;
        let csv = dir.join(format!("{stem}.csv"));
        fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))
    }
}
