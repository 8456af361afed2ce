use std::collections::BTreeMap;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{pretrain_contrastive, train_classifier, History, TrainPlan};
use crate::contrastive::LossConfig;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::{evaluate, mean_std, EvalOptions, EvalReport};
use crate::model::{ModelConfig, ModelParams};

#[derive(Debug, Clone, PartialEq)]
pub struct CrossvalConfig {
    pub k: usize,
    pub repeats: usize,
    /// Test subjects, never used for training or validation. When empty,
    /// each fold's validation subjects double as its test subjects.
    pub holdout: Vec<u32>,
    pub seed: u64,
    /// Worker threads for concurrent folds.
    pub jobs: usize,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub pretrain: TrainPlan,
    pub classifier: TrainPlan,
    pub eval: EvalOptions,
}

impl Default for CrossvalConfig {
    fn default() -> Self {
        Self {
            k: 5,
            repeats: 2,
            holdout: Vec::new(),
            seed: 0,
            jobs: 1,
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            pretrain: TrainPlan::pretrain(),
            classifier: TrainPlan::classifier(),
            eval: EvalOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub repeat: usize,
    pub fold: usize,
    pub train: Vec<u32>,
    pub val: Vec<u32>,
    pub test: Vec<u32>,
}

#[derive(Debug, Clone)]
pub struct FoldResult {
    pub plan: FoldPlan,
    pub report: EvalReport,
    pub pretrain: History,
    pub classifier: History,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectSummary {
    pub subject_id: u32,
    pub mean_auc: f64,
    pub std_auc: f64,
    pub n_results: usize,
}

fn assert_disjoint(p: &FoldPlan) {
    for s in &p.train {
        assert!(!p.val.contains(s) && !p.test.contains(s), "subject {s} leaks out of training");
    }
    for s in &p.val {
        assert!(p.val == p.test || !p.test.contains(s), "subject {s} is in validation and test");
    }
}

/// Per repeat, shuffles the non-holdout subjects and deals them into `k`
/// folds; fold `f` validates on its own subjects and trains on the rest.
pub fn plan_folds(subjects: &[u32], holdout: &[u32], k: usize, repeats: usize, seed: u64) -> Result<Vec<FoldPlan>> {
    if let Some(h) = holdout.iter().find(|h| !subjects.contains(h)) {
        return Err(Error::config(format!("holdout subject {h} is not in the dataset")));
    }
    let mut pool: Vec<u32> = subjects.iter().copied().filter(|s| !holdout.contains(s)).collect();
    pool.sort_unstable();
    pool.dedup();
    if k < 2 || k > pool.len() {
        return Err(Error::config(format!(
            "k = {k} folds need 2 ≤ k ≤ {} non-holdout subjects",
            pool.len()
        )));
    }
    if repeats == 0 {
        return Err(Error::config("repeats must be positive"));
    }
    let mut plans = Vec::with_capacity(k * repeats);
    for repeat in 0..repeats {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(repeat as u64);
        let mut order = pool.clone();
        order.shuffle(&mut rng);
        for fold in 0..k {
            let mut val: Vec<u32> = order.iter().skip(fold).step_by(k).copied().collect();
            let mut train: Vec<u32> = order.iter().copied().filter(|s| !val.contains(s)).collect();
            val.sort_unstable();
            train.sort_unstable();
            let test = if holdout.is_empty() { val.clone() } else { holdout.to_vec() };
            let plan = FoldPlan {
                repeat,
                fold,
                train,
                val,
                test,
            };
            assert_disjoint(&plan);
            plans.push(plan);
        }
    }
    Ok(plans)
}

/// Seeded subject split: `(train, val)` with `round(fraction · n)` validation
/// subjects (at least one when `fraction > 0`, never all).
pub fn split_subjects(ds: &Dataset, fraction: f64, seed: u64) -> (Vec<u32>, Vec<u32>) {
    let mut subjects = ds.subject_ids();
    subjects.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = subjects.len();
    let mut n_val = (fraction * n as f64).round() as usize;
    if fraction > 0.0 {
        n_val = n_val.max(1);
    }
    n_val = n_val.min(n.saturating_sub(1));
    let mut val = subjects.split_off(n - n_val);
    subjects.sort_unstable();
    val.sort_unstable();
    (subjects, val)
}

fn run_fold(ds: &Dataset, cfg: &CrossvalConfig, plan: &FoldPlan) -> Result<FoldResult> {
    let fold_seed = cfg.seed ^ ((plan.repeat as u64) << 32 | plan.fold as u64).wrapping_mul(0x2545_F491_4F6C_DD1D);
    let train = ds.subset(&plan.train);
    let val = ds.subset(&plan.val);
    let test = ds.subset(&plan.test);
    let mut params = ModelParams::<f32>::init(&cfg.model, fold_seed)?;
    let usable_val = val.usable_subjects().len() >= 2 && plan.val != plan.test;
    let pretrain = pretrain_contrastive(
        &mut params,
        &train,
        usable_val.then_some(&val),
        &cfg.loss,
        &TrainPlan {
            seed: fold_seed,
            ..cfg.pretrain.clone()
        },
    )?;
    let classifier_val = (plan.val != plan.test).then_some(&val);
    let classifier = train_classifier(
        &mut params,
        &train,
        classifier_val,
        &TrainPlan {
            seed: fold_seed,
            ..cfg.classifier.clone()
        },
    )?;
    let report = evaluate(&params, &test, &cfg.eval)?;
    info!(
        "repeat {} fold {}: test auc {:.4} ± {:.4}",
        plan.repeat, plan.fold, report.mean_auc, report.std_auc
    );
    Ok(FoldResult {
        plan: plan.clone(),
        report,
        pretrain,
        classifier,
    })
}

/// Full protocol: for every fold, fresh parameters are pretrained and a
/// classifier trained on the training subjects, then evaluated on the test
/// subjects. Folds run on up to `cfg.jobs` threads; results keep plan order.
pub fn crossval(ds: &Dataset, cfg: &CrossvalConfig) -> Result<Vec<FoldResult>> {
    let plans = plan_folds(&ds.subject_ids(), &cfg.holdout, cfg.k, cfg.repeats, cfg.seed)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs.max(1))
        .build()
        .map_err(|e| Error::config(format!("thread pool: {e}")))?;
    pool.install(|| plans.par_iter().map(|p| run_fold(ds, cfg, p)).collect())
}

/// Mean and population std of each test subject's AUC across folds.
pub fn aggregate_by_subject(results: &[FoldResult]) -> Vec<SubjectSummary> {
    let mut per: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for r in results {
        for s in &r.report.subjects {
            per.entry(s.subject_id).or_default().push(s.auc);
        }
    }
    per.into_iter()
        .map(|(subject_id, mut v)| {
            v.sort_by(f64::total_cmp);
            let (mean_auc, std_auc) = mean_std(&v);
            SubjectSummary {
                subject_id,
                mean_auc,
                std_auc,
                n_results: v.len(),
            }
        })
        .collect()
}
