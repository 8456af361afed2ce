use std::time::Instant;

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{adam_step, AdamConfig, OptimState};
use super::{check_dataset, EarlyStopping, EpochRecord, History, Phase, TrainPlan};
use crate::autodiff::Tape;
use crate::contrastive::{batch_loss, ntxent_on_tape, LossConfig, SubjectEmbeddings};
use crate::data::{Dataset, PairSampler, SubjectPairBatch, SubjectSamples};
use crate::error::{Error, Result};
use crate::model::{encoder_forward, projector_forward, EncoderVars, Group, Mode, ModelParams, ProjectorVars};
use crate::tensor::{Scalar, Tensor};

/// Sampler epochs averaged into one validation loss.
const VAL_DRAWS: u64 = 4;

const TRAINED: [Group; 2] = [Group::Encoder, Group::Projector];

fn batch_step<T: Scalar>(
    params: &mut ModelParams<T>,
    batch: &SubjectPairBatch,
    tau: f64,
    state: &mut OptimState<T>,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let cfg = params.config.clone();
    let mut tape = Tape::new();
    let ev = EncoderVars::register(&mut tape, &params.encoder, true);
    let pv = ProjectorVars::register(&mut tape, &params.projector, true);
    let mut hs = Vec::new();
    for (x, _) in batch.a.ordered().chain(batch.b.ordered()) {
        let t = Tensor::new(
            vec![cfg.encoder.n_channels, cfg.encoder.n_samples],
            x.iter().map(|&v| T::from_f64(v as f64)).collect(),
        )?;
        let xv = tape.constant(t);
        hs.push(encoder_forward(&mut tape, &ev, xv, &cfg)?);
    }
    let out = projector_forward(&mut tape, &pv, &params.projector, &hs, &cfg, Mode::Train, rng)?;
    let loss = ntxent_on_tape(&mut tape, &out.embeddings, &batch.a.labels(), &batch.b.labels(), tau)?;
    let value = tape.value(loss).data()[0].as_f64();
    if !value.is_finite() {
        return Err(Error::NonFiniteGradient("contrastive loss".into()));
    }
    tape.backward(loss)?;
    let vars: Vec<_> = ev.all().into_iter().chain(pv.all()).collect();
    let grads: Vec<&[T]> = vars.iter().map(|&v| tape.grad(v).expect("trainable leaf")).collect();
    let mut named = params.named_mut(&TRAINED);
    adam_step(&mut named, &grads, state)?;
    drop(named);
    params.update_running_moments(&out.moments);
    Ok(value)
}

fn embed_samples<T: Scalar>(params: &ModelParams<T>, s: &SubjectSamples) -> Result<SubjectEmbeddings<f64>> {
    let samples = s
        .ordered()
        .map(|(x, l)| Ok((params.embed(x)?, l)))
        .collect::<Result<Vec<_>>>()?;
    Ok(SubjectEmbeddings { samples })
}

/// Mean eval-mode contrastive loss over fixed draws of every subject pair in `val`.
pub fn validation_loss<T: Scalar>(params: &ModelParams<T>, sampler: &PairSampler, tau: f64) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for draw in 0..VAL_DRAWS {
        for batch in sampler.epoch(draw)? {
            let a = embed_samples(params, &batch.a)?;
            let b = embed_samples(params, &batch.b)?;
            total += batch_loss(&a, &b, tau)?;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Trains the encoder and projector with the pair loss. The validation
/// metric is the eval-mode loss on `val` pairs, or the epoch's mean training
/// loss without `val`. On return `params` hold the best-validation weights.
pub fn pretrain_contrastive<T: Scalar>(
    params: &mut ModelParams<T>,
    train: &Dataset,
    val: Option<&Dataset>,
    loss: &LossConfig,
    plan: &TrainPlan,
) -> Result<History> {
    plan.validate()?;
    if plan.phase != Phase::Pretrain {
        return Err(Error::config("pretrain_contrastive needs a pretrain plan"));
    }
    check_dataset(train, &params.config, "training")?;
    let tau = loss.temperature;
    let sampler = PairSampler::new(train, plan.n_avg, plan.n_neg, plan.seed)?;
    let val_sampler = match val {
        Some(v) => {
            check_dataset(v, &params.config, "validation")?;
            Some(PairSampler::new(v, plan.n_avg, plan.n_neg, plan.seed ^ 0x005E_ED0F_7A11)?)
        }
        None => {
            warn!("no validation subjects; early stopping tracks the training loss");
            None
        }
    };

    let mut state = OptimState::new(AdamConfig::new(plan.lr, plan.weight_decay));
    let mut stopper = EarlyStopping::new(plan.patience, false);
    let mut records = Vec::new();
    let started = Instant::now();
    let initial = match &val_sampler {
        Some(s) => validation_loss(params, s, tau)?,
        None => f64::INFINITY,
    };
    stopper.update(0, initial);
    records.push(EpochRecord {
        epoch: 0,
        train_loss: f64::NAN,
        val_metric: initial,
        seconds: started.elapsed().as_secs_f64(),
    });
    let mut best = params.clone();
    let mut stopped_early = false;

    for epoch in 1..=plan.max_epochs {
        let batches = sampler.epoch(epoch as u64)?;
        let mut rng = ChaCha8Rng::seed_from_u64(plan.seed.wrapping_add(epoch as u64));
        let mut total = 0.0;
        for batch in &batches {
            match batch_step(params, batch, tau, &mut state, &mut rng) {
                Ok(l) => total += l,
                Err(e @ Error::NonFiniteGradient(_)) => {
                    *params = best;
                    return Err(Error::Divergence {
                        epoch,
                        message: format!("{e}; restored epoch {} weights", stopper.best_epoch),
                    });
                }
                Err(e) => return Err(e),
            }
        }
        let train_loss = total / batches.len() as f64;
        let metric = match &val_sampler {
            Some(s) => validation_loss(params, s, tau)?,
            None => train_loss,
        };
        let (improved, stop) = stopper.update(epoch, metric);
        if improved {
            best = params.clone();
        }
        records.push(EpochRecord {
            epoch,
            train_loss,
            val_metric: metric,
            seconds: started.elapsed().as_secs_f64(),
        });
        info!("pretrain epoch {epoch}: train {train_loss:.5} val {metric:.5}");
        if stop {
            stopped_early = true;
            break;
        }
    }
    *params = best;
    Ok(History {
        records,
        best_epoch: stopper.best_epoch,
        best_metric: stopper.best,
        higher_is_better: false,
        stopped_early,
    })
}
