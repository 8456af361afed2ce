use rand::{Rng, SeedableRng};

use super::{ClassifierParams, EncoderParams, ModelConfig, ModelParams, ProjectorParams};
use crate::autodiff::{BatchMoments, BnMode, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics and dropout.
    Train,
    /// Dropout, but batch norm uses the running moments.
    TrainFrozenNorm,
    Eval,
}

fn register<T: Scalar>(tape: &mut Tape<T>, t: &Tensor<T>, trainable: bool) -> Var {
    if trainable {
        tape.param(t)
    } else {
        tape.constant(t.clone())
    }
}

pub struct EncoderVars {
    pub temporal: Vec<Var>,
    pub spatial: Vec<Var>,
}

impl EncoderVars {
    pub fn register<T: Scalar>(tape: &mut Tape<T>, p: &EncoderParams<T>, trainable: bool) -> Self {
        Self {
            temporal: p.temporal.iter().map(|t| register(tape, t, trainable)).collect(),
            spatial: p.spatial.iter().map(|t| register(tape, t, trainable)).collect(),
        }
    }

    pub fn all(&self) -> Vec<Var> {
        self.temporal.iter().chain(&self.spatial).copied().collect()
    }
}

pub struct ProjectorVars {
    pub temporal: Vec<Var>,
    pub spatial: Vec<Var>,
    pub bn_gamma: Vec<Var>,
    pub bn_beta: Vec<Var>,
}

impl ProjectorVars {
    pub fn register<T: Scalar>(tape: &mut Tape<T>, p: &ProjectorParams<T>, trainable: bool) -> Self {
        let mut reg = |v: &Vec<Tensor<T>>| v.iter().map(|t| register(tape, t, trainable)).collect::<Vec<_>>();
        Self {
            temporal: reg(&p.temporal),
            spatial: reg(&p.spatial),
            bn_gamma: reg(&p.bn_gamma),
            bn_beta: reg(&p.bn_beta),
        }
    }

    pub fn all(&self) -> Vec<Var> {
        self.temporal
            .iter()
            .chain(&self.spatial)
            .chain(&self.bn_gamma)
            .chain(&self.bn_beta)
            .copied()
            .collect()
    }
}

pub struct ClassifierVars {
    pub conv1_weight: Var,
    pub conv1_bias: Var,
    pub conv2_weight: Var,
    pub conv2_bias: Var,
    pub dense_weight: Var,
    pub dense_bias: Var,
}

impl ClassifierVars {
    pub fn register<T: Scalar>(tape: &mut Tape<T>, p: &ClassifierParams<T>, trainable: bool) -> Self {
        Self {
            conv1_weight: register(tape, &p.conv1_weight, trainable),
            conv1_bias: register(tape, &p.conv1_bias, trainable),
            conv2_weight: register(tape, &p.conv2_weight, trainable),
            conv2_bias: register(tape, &p.conv2_bias, trainable),
            dense_weight: register(tape, &p.dense_weight, trainable),
            dense_bias: register(tape, &p.dense_bias, trainable),
        }
    }

    pub fn all(&self) -> Vec<Var> {
        vec![
            self.conv1_weight,
            self.conv1_bias,
            self.conv2_weight,
            self.conv2_bias,
            self.dense_weight,
            self.dense_bias,
        ]
    }
}

fn expect_shape<T: Scalar>(tape: &Tape<T>, v: Var, shape: &[usize], what: &str) -> Result<()> {
    let got = tape.value(v).shape();
    if got != shape {
        return Err(Error::shape(format!("{what}: expected {shape:?}, got {got:?}")));
    }
    Ok(())
}

/// Linear Inception encoder: per branch a depthwise temporal convolution
/// followed by a per-kernel spatial collapse; branches are stacked along the
/// map axis. `[M, N]` → `[B*K1, N]`.
pub fn encoder_forward<T: Scalar>(tape: &mut Tape<T>, vars: &EncoderVars, x: Var, config: &ModelConfig) -> Result<Var> {
    let e = &config.encoder;
    expect_shape(tape, x, &[e.n_channels, e.n_samples], "encoder input")?;
    let mut branches = Vec::with_capacity(e.n_branches());
    for (&temporal, &spatial) in vars.temporal.iter().zip(&vars.spatial) {
        let filtered = tape.conv1d_same(x, temporal, None)?;
        branches.push(tape.channel_collapse(filtered, spatial)?);
    }
    tape.concat_rows(&branches)
}

pub struct ProjectorOutput<T> {
    /// One `[D]` embedding per input.
    pub embeddings: Vec<Var>,
    /// Per-branch batch moments (train mode only).
    pub moments: Vec<BatchMoments<T>>,
}

/// Nonlinear projector over a batch of encoder outputs: average pooling, then
/// an Inception block whose branches each run temporal conv, spatial collapse
/// over the encoder maps, batch norm, ELU and dropout; flattened to `[D]`.
pub fn projector_forward<T: Scalar, R: Rng>(
    tape: &mut Tape<T>,
    vars: &ProjectorVars,
    params: &ProjectorParams<T>,
    hs: &[Var],
    config: &ModelConfig,
    mode: Mode,
    rng: &mut R,
) -> Result<ProjectorOutput<T>> {
    if hs.is_empty() {
        return Err(Error::shape("projector: empty batch"));
    }
    let maps = config.encoder.n_maps();
    let k2 = config.projector.kernels_per_branch;
    let time = config.projector_time();
    let mut pooled = Vec::with_capacity(hs.len());
    for &h in hs {
        expect_shape(tape, h, &[maps, config.encoder.n_samples], "projector input")?;
        pooled.push(tape.avg_pool_time(h, config.projector.pool)?);
    }

    let dropout = config.projector.dropout;
    let mut per_sample: Vec<Vec<Var>> = vec![Vec::new(); hs.len()];
    let mut moments = Vec::new();
    for b in 0..vars.temporal.len() {
        let mut collapsed = Vec::with_capacity(hs.len());
        for &p in &pooled {
            let f = tape.conv1d_same(p, vars.temporal[b], None)?;
            collapsed.push(tape.channel_collapse(f, vars.spatial[b])?);
        }
        let stacked = tape.stack(&collapsed)?;
        let bn_mode = match mode {
            Mode::Train => BnMode::Train,
            Mode::TrainFrozenNorm | Mode::Eval => BnMode::Eval {
                mean: params.running_mean[b].data(),
                var: params.running_var[b].data(),
            },
        };
        let (normed, m) = tape.batch_norm(stacked, vars.bn_gamma[b], vars.bn_beta[b], bn_mode)?;
        moments.extend(m);
        let mut act = tape.elu(normed);
        if mode != Mode::Eval && dropout > 0.0 {
            let keep = T::from_f64(1.0 / (1.0 - dropout));
            let mask: Vec<T> = (0..tape.value(act).len())
                .map(|_| if rng.random::<f64>() < dropout { T::zero() } else { keep })
                .collect();
            act = tape.mask(act, mask)?;
        }
        for (i, sample) in per_sample.iter_mut().enumerate() {
            sample.push(tape.row(act, i, vec![k2, time])?);
        }
    }
    let dim = config.embedding_dim();
    let embeddings = per_sample
        .into_iter()
        .map(|branches| {
            let cat = tape.concat_rows(&branches)?;
            tape.reshape(cat, vec![dim])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ProjectorOutput { embeddings, moments })
}

/// Two temporal conv layers (ELU, average pooling) and a dense readout to one logit.
pub fn classifier_forward<T: Scalar>(
    tape: &mut Tape<T>,
    vars: &ClassifierVars,
    h: Var,
    config: &ModelConfig,
) -> Result<Var> {
    expect_shape(tape, h, &[config.encoder.n_maps(), config.encoder.n_samples], "classifier input")?;
    let pool = config.classifier.pool;
    let c1 = tape.conv1d_multi(h, vars.conv1_weight, Some(vars.conv1_bias))?;
    let a1 = tape.elu(c1);
    let p1 = tape.avg_pool_time(a1, pool)?;
    let c2 = tape.conv1d_multi(p1, vars.conv2_weight, Some(vars.conv2_bias))?;
    let a2 = tape.elu(c2);
    let p2 = tape.avg_pool_time(a2, pool)?;
    let flat = tape.reshape(p2, vec![config.classifier_features()])?;
    tape.dense(flat, vars.dense_weight, vars.dense_bias)
}

/// Inference-only encoder pass on one `[M, N]` trial.
pub fn encoder_output<T: Scalar>(params: &ModelParams<T>, trial: &[f32]) -> Result<Tensor<T>> {
    let e = &params.config.encoder;
    let mut tape = Tape::new();
    let vars = EncoderVars::register(&mut tape, &params.encoder, false);
    let x = Tensor::new(
        vec![e.n_channels, e.n_samples],
        trial.iter().map(|&v| T::from_f64(v as f64)).collect(),
    )?;
    let xv = tape.constant(x);
    let out = encoder_forward(&mut tape, &vars, xv, &params.config)?;
    Ok(tape.value(out).clone())
}

impl<T: Scalar> ModelParams<T> {
    /// Classifier logit for one precomputed encoder output.
    pub fn classifier_logit(&self, features: &Tensor<T>) -> Result<f64> {
        let mut tape = Tape::new();
        let vars = ClassifierVars::register(&mut tape, &self.classifier, false);
        let h = tape.constant(features.clone());
        let z = classifier_forward(&mut tape, &vars, h, &self.config)?;
        Ok(tape.value(z).data()[0].as_f64())
    }

    /// Single-trial logit through the encoder and classifier.
    pub fn predict_logit(&self, trial: &[f32]) -> Result<f64> {
        let h = encoder_output(self, trial)?;
        self.classifier_logit(&h)
    }

    /// Eval-mode projector embedding of one trial.
    pub fn embed(&self, trial: &[f32]) -> Result<Vec<f64>> {
        let e = &self.config.encoder;
        let mut tape = Tape::new();
        let ev = EncoderVars::register(&mut tape, &self.encoder, false);
        let pv = ProjectorVars::register(&mut tape, &self.projector, false);
        let x = Tensor::new(
            vec![e.n_channels, e.n_samples],
            trial.iter().map(|&v| T::from_f64(v as f64)).collect(),
        )?;
        let xv = tape.constant(x);
        let h = encoder_forward(&mut tape, &ev, xv, &self.config)?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let out = projector_forward(&mut tape, &pv, &self.projector, &[h], &self.config, Mode::Eval, &mut rng)?;
        Ok(tape.value(out.embeddings[0]).data().iter().map(|v| v.as_f64()).collect())
    }
}

/// Share of the old running moment kept on each update.
pub const BN_MOMENTUM: f64 = 0.9;

impl<T: Scalar> ModelParams<T> {
    /// Folds per-branch batch moments into the running moments. The running
    /// variance uses the unbiased batch estimate.
    pub fn update_running_moments(&mut self, moments: &[BatchMoments<T>]) {
        let p = &mut self.projector;
        for (b, m) in moments.iter().enumerate() {
            let correction = m.batch as f64 / (m.batch as f64 - 1.0);
            for (r, &v) in p.running_mean[b].data_mut().iter_mut().zip(&m.mean) {
                *r = T::from_f64(BN_MOMENTUM * r.as_f64() + (1.0 - BN_MOMENTUM) * v.as_f64());
            }
            for (r, &v) in p.running_var[b].data_mut().iter_mut().zip(&m.var) {
                *r = T::from_f64(BN_MOMENTUM * r.as_f64() + (1.0 - BN_MOMENTUM) * v.as_f64() * correction);
            }
        }
    }
}
