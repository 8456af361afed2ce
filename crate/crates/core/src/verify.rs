//! Finite-difference suite over every tape operation and both end-to-end
//! losses, in double precision on the reduced model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::gradcheck::{check, GradCheck, FD_STEP};
use crate::autodiff::{BnMode, Tape, Var};
use crate::contrastive::{ntxent_on_tape, DEFAULT_TEMPERATURE};
use crate::data::Label;
use crate::error::Result;
use crate::model::{
    classifier_forward, encoder_forward, projector_forward, ClassifierVars, EncoderVars, Mode, ModelConfig, ModelParams,
    ProjectorVars,
};
use crate::tensor::Tensor;

/// Values in `±[0.1, 1]`, away from the ELU kink.
fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m: f64 = rng.random_range(0.1..1.0);
            if rng.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("sized")
}

/// Scalar probe `Σ wᵢ·vᵢ` with fixed pseudo-random weights.
fn probe(tape: &mut Tape<f64>, v: Var) -> Result<Var> {
    let shape = tape.value(v).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(shape.iter().product::<usize>() as u64);
    let w = tape.constant(rand_tensor(&mut rng, &shape));
    let prod = tape.mul(v, w)?;
    Ok(tape.sum(prod))
}

fn op_checks(rng: &mut ChaCha8Rng) -> Result<Vec<GradCheck>> {
    let h = FD_STEP;
    let mut out = Vec::new();
    let mut t = |s: &[usize]| rand_tensor(rng, s);

    let ins = [t(&[3, 11]), t(&[2, 5]), t(&[2])];
    out.push(check("conv1d_same", &ins, h, |tp, v| {
        let y = tp.conv1d_same(v[0], v[1], Some(v[2]))?;
        probe(tp, y)
    })?);
    let ins = [t(&[3, 9]), t(&[4, 3, 4]), t(&[4])];
    out.push(check("conv1d_multi", &ins, h, |tp, v| {
        let y = tp.conv1d_multi(v[0], v[1], Some(v[2]))?;
        probe(tp, y)
    })?);
    let ins = [t(&[6, 7]), t(&[2, 3])];
    out.push(check("channel_collapse", &ins, h, |tp, v| {
        let y = tp.channel_collapse(v[0], v[1])?;
        probe(tp, y)
    })?);
    let ins = [t(&[3, 9])];
    out.push(check("avg_pool_time", &ins, h, |tp, v| {
        let y = tp.avg_pool_time(v[0], 2)?;
        probe(tp, y)
    })?);
    let ins = [t(&[4, 5])];
    out.push(check("elu", &ins, h, |tp, v| {
        let y = tp.elu(v[0]);
        probe(tp, y)
    })?);
    let ins = [t(&[5, 4]), t(&[4]), t(&[4])];
    out.push(check("batch_norm_train", &ins, h, |tp, v| {
        let (y, _) = tp.batch_norm(v[0], v[1], v[2], BnMode::Train)?;
        probe(tp, y)
    })?);
    let (mean, var) = (vec![0.1, -0.2, 0.0, 0.3], vec![0.5, 1.5, 2.0, 0.8]);
    out.push(check("batch_norm_eval", &ins, h, |tp, v| {
        let (y, _) = tp.batch_norm(v[0], v[1], v[2], BnMode::Eval { mean: &mean, var: &var })?;
        probe(tp, y)
    })?);
    let ins = [t(&[6]), t(&[6, 3]), t(&[3])];
    out.push(check("dense", &ins, h, |tp, v| {
        let y = tp.dense(v[0], v[1], v[2])?;
        probe(tp, y)
    })?);
    let ins = [t(&[2, 3])];
    out.push(check("mask", &ins, h, |tp, v| {
        let y = tp.mask(v[0], vec![0.0, 2.0, 2.0, 0.0, 2.0, 2.0])?;
        probe(tp, y)
    })?);
    let ins = [t(&[2, 4]), t(&[1, 4]), t(&[2, 4])];
    out.push(check("concat_stack_row_reshape", &ins, h, |tp, v| {
        let c = tp.concat_rows(&[v[0], v[1]])?;
        let s = tp.stack(&[v[0], v[2]])?;
        let r = tp.row(s, 1, vec![2, 4])?;
        let flat = tp.reshape(c, vec![12])?;
        let a = probe(tp, flat)?;
        let b = probe(tp, r)?;
        tp.add(a, b)
    })?);
    let ins = [t(&[3, 2]), t(&[3, 2])];
    out.push(check("mul_add_sum", &ins, h, |tp, v| {
        let m = tp.mul(v[0], v[1])?;
        let a = tp.add(m, v[0])?;
        Ok(tp.sum(a))
    })?);
    let ins = [t(&[1]), t(&[1]), t(&[1])];
    out.push(check("bce_with_logits", &ins, h, |tp, v| tp.bce_with_logits(v, &[1.0, 0.0, 1.0]))?);
    let ins: Vec<Tensor<f64>> = (0..6).map(|_| t(&[5])).collect();
    let labels = [Label::Erp, Label::NonErp, Label::NonErp];
    out.push(check("ntxent", &ins, h, |tp, v| {
        ntxent_on_tape(tp, v, &labels, &labels, DEFAULT_TEMPERATURE)
    })?);
    Ok(out)
}

fn end_to_end_checks(rng: &mut ChaCha8Rng) -> Result<Vec<GradCheck>> {
    let cfg = ModelConfig::reduced();
    let params = ModelParams::<f64>::init(&cfg, 11)?;
    let e = &cfg.encoder;
    let xs: Vec<Tensor<f64>> = (0..6).map(|_| rand_tensor(rng, &[e.n_channels, e.n_samples])).collect();
    let labels = [Label::Erp, Label::NonErp, Label::NonErp];
    let b = cfg.encoder.n_branches();
    let mut out = Vec::new();

    let mut ins: Vec<Tensor<f64>> = Vec::new();
    ins.extend(params.encoder.temporal.iter().cloned());
    ins.extend(params.encoder.spatial.iter().cloned());
    ins.extend(params.projector.temporal.iter().cloned());
    ins.extend(params.projector.spatial.iter().cloned());
    ins.extend(params.projector.bn_gamma.iter().cloned());
    ins.extend(params.projector.bn_beta.iter().cloned());
    out.push(check("end_to_end_contrastive", &ins, FD_STEP, |tp, v| {
        let ev = EncoderVars {
            temporal: v[..b].to_vec(),
            spatial: v[b..2 * b].to_vec(),
        };
        let pv = ProjectorVars {
            temporal: v[2 * b..3 * b].to_vec(),
            spatial: v[3 * b..4 * b].to_vec(),
            bn_gamma: v[4 * b..5 * b].to_vec(),
            bn_beta: v[5 * b..6 * b].to_vec(),
        };
        let mut hs = Vec::new();
        for x in &xs {
            let xv = tp.constant(x.clone());
            hs.push(encoder_forward(tp, &ev, xv, &cfg)?);
        }
        let mut drop_rng = ChaCha8Rng::seed_from_u64(5);
        let p = projector_forward(tp, &pv, &params.projector, &hs, &cfg, Mode::Train, &mut drop_rng)?;
        ntxent_on_tape(tp, &p.embeddings, &labels, &labels, DEFAULT_TEMPERATURE)
    })?);

    let c = &params.classifier;
    let mut ins: Vec<Tensor<f64>> = Vec::new();
    ins.extend(params.encoder.temporal.iter().cloned());
    ins.extend(params.encoder.spatial.iter().cloned());
    ins.extend([
        c.conv1_weight.clone(),
        c.conv1_bias.clone(),
        c.conv2_weight.clone(),
        c.conv2_bias.clone(),
        c.dense_weight.clone(),
        c.dense_bias.clone(),
    ]);
    let targets = [1.0, 0.0, 0.0, 1.0];
    out.push(check("end_to_end_bce", &ins, FD_STEP, |tp, v| {
        let ev = EncoderVars {
            temporal: v[..b].to_vec(),
            spatial: v[b..2 * b].to_vec(),
        };
        let k = 2 * b;
        let cv = ClassifierVars {
            conv1_weight: v[k],
            conv1_bias: v[k + 1],
            conv2_weight: v[k + 2],
            conv2_bias: v[k + 3],
            dense_weight: v[k + 4],
            dense_bias: v[k + 5],
        };
        let mut zs = Vec::new();
        for x in xs.iter().take(targets.len()) {
            let xv = tp.constant(x.clone());
            let h = encoder_forward(tp, &ev, xv, &cfg)?;
            zs.push(classifier_forward(tp, &cv, h, &cfg)?);
        }
        tp.bce_with_logits(&zs, &targets)
    })?);
    Ok(out)
}

/// Runs every check; the caller decides pass/fail via [`GradCheck::passed`].
pub fn gradcheck_suite(seed: u64) -> Result<Vec<GradCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut all = op_checks(&mut rng)?;
    all.extend(end_to_end_checks(&mut rng)?);
    Ok(all)
}
