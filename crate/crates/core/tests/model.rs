use erpcl::autodiff::Tape;
use erpcl::model::{
    classifier_forward, encoder_forward, encoder_output, projector_forward, ClassifierVars, EncoderVars, Mode,
    ModelConfig, ModelParams, ProjectorVars,
};
use erpcl::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_trial(rng: &mut ChaCha8Rng, m: usize, n: usize) -> Vec<f32> {
    (0..m * n).map(|_| rng.random_range(-10.0..10.0)).collect()
}

#[test]
fn default_shape_chain() {
    let cfg = ModelConfig::default();
    let p = ModelParams::<f32>::init(&cfg, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = random_trial(&mut rng, 8, 128);
    let h = encoder_output(&p, &x).unwrap();
    assert_eq!(h.shape(), &[24, 128]);
    assert_eq!(p.embed(&x).unwrap().len(), 768);
    let z = p.classifier_logit(&h).unwrap();
    assert!(z.is_finite());
    assert_eq!(cfg.classifier_features(), 256);
}

#[test]
fn encoder_is_linear() {
    let cfg = ModelConfig::default();
    let p = ModelParams::<f64>::init(&cfg, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random_trial(&mut rng, 8, 128);
    let ax: Vec<f32> = x.iter().map(|v| 2.5 * v).collect();
    let h = encoder_output(&p, &x).unwrap();
    let ha = encoder_output(&p, &ax).unwrap();
    for (a, b) in ha.data().iter().zip(h.data()) {
        assert!((a - 2.5 * b).abs() < 1e-6 * (1.0 + b.abs()));
    }
    let zero = encoder_output(&p, &vec![0.0; 8 * 128]).unwrap();
    assert!(zero.data().iter().all(|&v| v == 0.0));
}

#[test]
fn projector_eval_is_deterministic_and_matches_frozen_norm_without_dropout() {
    let mut cfg = ModelConfig::default();
    cfg.projector.dropout = 0.0;
    let mut p = ModelParams::<f64>::init(&cfg, 4).unwrap();
    // non-trivial running moments
    for (i, m) in p.projector.running_mean.iter_mut().enumerate() {
        m.data_mut().iter_mut().for_each(|v| *v = 0.1 * i as f64);
    }
    for v in &mut p.projector.running_var {
        v.data_mut().iter_mut().for_each(|x| *x = 2.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_trial(&mut rng, 8, 128);
    let e1 = p.embed(&x).unwrap();
    assert_eq!(e1, p.embed(&x).unwrap());

    let mut tape = Tape::new();
    let ev = EncoderVars::register(&mut tape, &p.encoder, false);
    let pv = ProjectorVars::register(&mut tape, &p.projector, false);
    let xt = Tensor::new(vec![8, 128], x.iter().map(|&v| v as f64).collect()).unwrap();
    let xv = tape.constant(xt);
    let h = encoder_forward(&mut tape, &ev, xv, &cfg).unwrap();
    let out = projector_forward(&mut tape, &pv, &p.projector, &[h], &cfg, Mode::TrainFrozenNorm, &mut rng).unwrap();
    for (a, b) in tape.value(out.embeddings[0]).data().iter().zip(&e1) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn classifier_with_zero_weights_returns_bias() {
    let cfg = ModelConfig::default();
    let mut p = ModelParams::<f64>::init(&cfg, 6).unwrap();
    p.classifier.dense_weight.data_mut().iter_mut().for_each(|v| *v = 0.0);
    p.classifier.dense_bias.data_mut()[0] = 0.75;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random_trial(&mut rng, 8, 128);
    assert_eq!(p.predict_logit(&x).unwrap(), 0.75);
}

#[test]
fn train_mode_batch_produces_moments_per_branch() {
    let cfg = ModelConfig::reduced();
    let p = ModelParams::<f64>::init(&cfg, 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut tape = Tape::new();
    let ev = EncoderVars::register(&mut tape, &p.encoder, true);
    let pv = ProjectorVars::register(&mut tape, &p.projector, true);
    let hs: Vec<_> = (0..4)
        .map(|_| {
            let x = Tensor::new(vec![2, 16], (0..32).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let xv = tape.constant(x);
            encoder_forward(&mut tape, &ev, xv, &cfg).unwrap()
        })
        .collect();
    let out = projector_forward(&mut tape, &pv, &p.projector, &hs, &cfg, Mode::Train, &mut rng).unwrap();
    assert_eq!(out.embeddings.len(), 4);
    assert_eq!(out.moments.len(), 3);
    assert!(out.moments.iter().all(|m| m.batch == 4));
    for e in &out.embeddings {
        assert_eq!(tape.value(*e).len(), cfg.embedding_dim());
    }

    let cv = ClassifierVars::register(&mut tape, &p.classifier, true);
    let z = classifier_forward(&mut tape, &cv, hs[0], &cfg).unwrap();
    assert_eq!(tape.value(z).shape(), &[1]);
}

#[test]
fn wrong_input_shape_is_rejected() {
    let p = ModelParams::<f32>::init(&ModelConfig::default(), 1).unwrap();
    assert!(encoder_output(&p, &[0.0; 8 * 64]).is_err());
}

#[test]
fn running_moment_update_uses_momentum_and_unbiased_variance() {
    let cfg = ModelConfig::reduced();
    let mut p = ModelParams::<f64>::init(&cfg, 1).unwrap();
    let f = p.projector.running_mean[0].len();
    let m = erpcl::autodiff::BatchMoments {
        mean: vec![1.0; f],
        var: vec![3.0; f],
        batch: 4,
    };
    let moments = vec![m.clone(), m.clone(), m];
    p.update_running_moments(&moments);
    assert!((p.projector.running_mean[0].data()[0] - 0.1).abs() < 1e-12);
    // 0.9·1 + 0.1·(3·4/3)
    assert!((p.projector.running_var[0].data()[0] - 1.3).abs() < 1e-12);
}
