use std::time::Instant;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{adam_step, AdamConfig, OptimState};
use super::{check_dataset, EarlyStopping, EpochRecord, History, Phase, TrainPlan};
use crate::autodiff::Tape;
use crate::data::{Dataset, Label};
use crate::error::{Error, Result};
use crate::eval::auc;
use crate::model::{classifier_forward, encoder_output, ClassifierVars, Group, ModelParams};
use crate::tensor::{Scalar, Tensor};

/// Frozen-encoder outputs for every trial, in dataset order.
pub fn encode_dataset<T: Scalar>(params: &ModelParams<T>, ds: &Dataset) -> Result<Vec<Tensor<T>>> {
    ds.trials.iter().map(|t| encoder_output(params, &t.data)).collect()
}

fn logits<T: Scalar>(params: &ModelParams<T>, features: &[Tensor<T>]) -> Result<Vec<f64>> {
    features.iter().map(|h| params.classifier_logit(h)).collect()
}

fn batch_step<T: Scalar>(
    params: &mut ModelParams<T>,
    features: &[Tensor<T>],
    targets: &[f64],
    batch: &[usize],
    state: &mut OptimState<T>,
) -> Result<f64> {
    let cfg = params.config.clone();
    let mut tape = Tape::new();
    let vars = ClassifierVars::register(&mut tape, &params.classifier, true);
    let mut zs = Vec::with_capacity(batch.len());
    let mut ys = Vec::with_capacity(batch.len());
    for &i in batch {
        let h = tape.constant(features[i].clone());
        zs.push(classifier_forward(&mut tape, &vars, h, &cfg)?);
        ys.push(targets[i]);
    }
    let loss = tape.bce_with_logits(&zs, &ys)?;
    let value = tape.value(loss).data()[0].as_f64();
    if !value.is_finite() {
        return Err(Error::NonFiniteGradient("classifier loss".into()));
    }
    tape.backward(loss)?;
    let vars = vars.all();
    let grads: Vec<&[T]> = vars.iter().map(|&v| tape.grad(v).expect("trainable leaf")).collect();
    adam_step(&mut params.named_mut(&[Group::Classifier]), &grads, state)?;
    Ok(value)
}

/// Trains the classifier on single trials passed through the frozen encoder,
/// with binary cross-entropy and early stopping on validation AUC (training
/// AUC without `val`). Encoder and projector tensors are never written.
pub fn train_classifier<T: Scalar>(
    params: &mut ModelParams<T>,
    train: &Dataset,
    val: Option<&Dataset>,
    plan: &TrainPlan,
) -> Result<History> {
    plan.validate()?;
    if plan.phase != Phase::Classifier {
        return Err(Error::config("train_classifier needs a classifier plan"));
    }
    check_dataset(train, &params.config, "training")?;
    let labels: Vec<Label> = train.trials.iter().map(|t| t.label).collect();
    if !labels.contains(&Label::Erp) || !labels.contains(&Label::NonErp) {
        return Err(Error::DegenerateBatch("classifier training split has a single class".into()));
    }
    let targets: Vec<f64> = labels.iter().map(|l| l.as_f64()).collect();
    let features = encode_dataset(params, train)?;
    let (val_features, val_labels) = match val {
        Some(v) => {
            check_dataset(v, &params.config, "validation")?;
            (encode_dataset(params, v)?, v.trials.iter().map(|t| t.label).collect())
        }
        None => (features.clone(), labels.clone()),
    };
    let metric = |p: &ModelParams<T>| auc(&logits(p, &val_features)?, &val_labels);

    let mut state = OptimState::new(AdamConfig::new(plan.lr, plan.weight_decay));
    let mut stopper = EarlyStopping::new(plan.patience, true);
    let started = Instant::now();
    let initial = metric(params)?;
    stopper.update(0, initial);
    let mut records = vec![EpochRecord {
        epoch: 0,
        train_loss: f64::NAN,
        val_metric: initial,
        seconds: started.elapsed().as_secs_f64(),
    }];
    let mut best = params.classifier.clone();
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..features.len()).collect();

    for epoch in 1..=plan.max_epochs {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(plan.seed.wrapping_add(epoch as u64)));
        let mut total = 0.0;
        let mut n_batches = 0;
        for batch in order.chunks(plan.batch_size) {
            match batch_step(params, &features, &targets, batch, &mut state) {
                Ok(l) => total += l,
                Err(e @ Error::NonFiniteGradient(_)) => {
                    params.classifier = best;
                    return Err(Error::Divergence {
                        epoch,
                        message: format!("{e}; restored epoch {} weights", stopper.best_epoch),
                    });
                }
                Err(e) => return Err(e),
            }
            n_batches += 1;
        }
        let train_loss = total / n_batches as f64;
        let m = metric(params)?;
        let (improved, stop) = stopper.update(epoch, m);
        if improved {
            best = params.classifier.clone();
        }
        records.push(EpochRecord {
            epoch,
            train_loss,
            val_metric: m,
            seconds: started.elapsed().as_secs_f64(),
        });
        info!("classifier epoch {epoch}: train {train_loss:.5} val auc {m:.4}");
        if stop {
            stopped_early = true;
            break;
        }
    }
    params.classifier = best;
    Ok(History {
        records,
        best_epoch: stopper.best_epoch,
        best_metric: stopper.best,
        higher_is_better: true,
        stopped_early,
    })
}
