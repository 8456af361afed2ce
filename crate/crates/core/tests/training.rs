use erpcl::contrastive::LossConfig;
use erpcl::data::{synth_generate, Dataset, Label, Paradigm, SynthConfig};
use erpcl::model::{ModelConfig, ModelParams};
use erpcl::training::{pretrain_contrastive, split_subjects, train_classifier, TrainPlan};

fn synth(n_subjects: usize, trials: usize, f: impl FnOnce(&mut SynthConfig)) -> Dataset {
    let mut cfg = SynthConfig {
        n_subjects,
        trials_per_subject: trials,
        noise_uv: (3.0, 5.0),
        seed: 11,
        ..SynthConfig::default()
    };
    f(&mut cfg);
    synth_generate(&cfg).unwrap()
}

fn short(base: TrainPlan, epochs: usize, patience: usize) -> TrainPlan {
    TrainPlan {
        max_epochs: epochs,
        patience,
        ..base
    }
}

#[test]
fn pretraining_lowers_validation_loss() {
    let ds = synth(8, 120, |_| {});
    let (tr, va) = split_subjects(&ds, 0.25, 3);
    assert_eq!((tr.len(), va.len()), (6, 2));
    let mut p = ModelParams::<f32>::init(&ModelConfig::default(), 3).unwrap();
    let h = pretrain_contrastive(
        &mut p,
        &ds.subset(&tr),
        Some(&ds.subset(&va)),
        &LossConfig::default(),
        &short(TrainPlan::pretrain(), 15, 14),
    )
    .unwrap();
    assert_eq!(h.records.len(), 16);
    assert!(h.best_epoch > 0);
    assert!(h.best_metric < h.initial_metric(), "{} vs {}", h.best_metric, h.initial_metric());
}

#[test]
fn patience_zero_stops_at_first_non_improving_epoch() {
    let ds = synth(4, 60, |c| c.amplitude_scale = 0.0);
    let mut p = ModelParams::<f32>::init(&ModelConfig::default(), 1).unwrap();
    let plan = short(TrainPlan::pretrain(), 50, 0);
    let h = pretrain_contrastive(&mut p, &ds.subset(&[1, 2]), Some(&ds.subset(&[3, 4])), &LossConfig::default(), &plan)
        .unwrap();
    assert!(h.stopped_early);
    let last = h.records.len() - 1;
    // every epoch before the last one improved on its predecessor
    for w in h.records[..last].windows(2) {
        assert!(w[1].val_metric < w[0].val_metric);
    }
    assert!(h.records[last].val_metric >= h.records[last - 1].val_metric);
}

#[test]
fn null_data_loss_stays_near_uniform_value() {
    let ds = synth(4, 120, |c| c.amplitude_scale = 0.0);
    let mut p = ModelParams::<f32>::init(&ModelConfig::default(), 5).unwrap();
    let plan = short(TrainPlan::pretrain(), 20, 19);
    let h = pretrain_contrastive(&mut p, &ds.subset(&[1, 2]), Some(&ds.subset(&[3, 4])), &LossConfig::default(), &plan)
        .unwrap();
    let target = 2.0 * 6f64.ln();
    for r in &h.records {
        assert!((r.val_metric - target).abs() < 0.15 * target, "epoch {}: {}", r.epoch, r.val_metric);
    }
}

#[test]
fn classifier_overfits_high_amplitude_pair() {
    let ds = synth(2, 30, |c| {
        c.paradigm = Paradigm::Oddball { target_ratio: 0.3 };
        c.amplitude_scale = 5.0;
    });
    assert_eq!(ds.len(), 60);
    let mut p = ModelParams::<f32>::init(&ModelConfig::default(), 2).unwrap();
    let h = train_classifier(&mut p, &ds, None, &short(TrainPlan::classifier(), 200, 20)).unwrap();
    assert!(h.best_metric >= 0.99, "training AUC {}", h.best_metric);
}

#[test]
fn classifier_training_leaves_encoder_bit_identical() {
    let ds = synth(3, 60, |_| {});
    let mut p = ModelParams::<f32>::init(&ModelConfig::default(), 4).unwrap();
    let before = p.encoder.clone();
    let proj = p.projector.clone();
    train_classifier(&mut p, &ds.subset(&[1, 2]), Some(&ds.subset(&[3])), &short(TrainPlan::classifier(), 3, 2))
        .unwrap();
    for (a, b) in before.temporal.iter().chain(&before.spatial).zip(p.encoder.temporal.iter().chain(&p.encoder.spatial)) {
        let ab: Vec<u32> = a.data().iter().map(|v| v.to_bits()).collect();
        let bb: Vec<u32> = b.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(ab, bb);
    }
    assert_eq!(proj.temporal[0].data(), p.projector.temporal[0].data());
}

#[test]
fn imbalanced_split_trains_and_reports_auc() {
    let ds = synth(3, 120, |_| {});
    let targets = ds.trials.iter().filter(|t| t.label == Label::Erp).count();
    assert_eq!(ds.len(), 5 * targets + targets);
    let mut p = ModelParams::<f32>::init(&ModelConfig::default(), 6).unwrap();
    let h = train_classifier(&mut p, &ds.subset(&[1, 2]), Some(&ds.subset(&[3])), &short(TrainPlan::classifier(), 5, 4))
        .unwrap();
    assert!(h.higher_is_better);
    assert!(h.best_metric > 0.6 && h.best_metric <= 1.0, "{}", h.best_metric);
}

#[test]
fn single_class_training_split_is_rejected() {
    let mut ds = synth(2, 60, |_| {});
    ds.trials.retain(|t| t.label == Label::NonErp);
    let mut p = ModelParams::<f32>::init(&ModelConfig::default(), 6).unwrap();
    assert!(train_classifier(&mut p, &ds, None, &short(TrainPlan::classifier(), 2, 1)).is_err());
}

#[test]
fn identical_seeds_give_identical_runs() {
    let ds = synth(4, 60, |_| {});
    let run = || {
        let mut p = ModelParams::<f32>::init(&ModelConfig::default(), 9).unwrap();
        let plan = TrainPlan { seed: 9, ..short(TrainPlan::pretrain(), 3, 2) };
        let h1 = pretrain_contrastive(&mut p, &ds.subset(&[1, 2]), Some(&ds.subset(&[3, 4])), &LossConfig::default(), &plan)
            .unwrap();
        let h2 = train_classifier(&mut p, &ds.subset(&[1, 2]), Some(&ds.subset(&[3, 4])), &short(TrainPlan::classifier(), 3, 2))
            .unwrap();
        let metrics: Vec<(u64, u64)> = h1
            .records
            .iter()
            .chain(&h2.records)
            .map(|r| (r.train_loss.to_bits(), r.val_metric.to_bits()))
            .collect();
        (metrics, p.classifier.dense_weight.data().to_vec())
    };
    assert_eq!(run(), run());
}

#[test]
fn patience_must_be_below_max_epochs() {
    let ds = synth(2, 60, |_| {});
    let mut p = ModelParams::<f32>::init(&ModelConfig::default(), 1).unwrap();
    assert!(pretrain_contrastive(&mut p, &ds, None, &LossConfig::default(), &short(TrainPlan::pretrain(), 5, 5)).is_err());
}
