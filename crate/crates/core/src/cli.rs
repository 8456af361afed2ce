//! Command-line front end. Every subcommand writes its resolved settings to
//! `<out>/config.txt` before doing any work.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::contrastive::{LossConfig, DEFAULT_TEMPERATURE};
use crate::data::{load_erpd, save_erpd, synth_generate, Dataset, Paradigm, SpellerLayout, SynthConfig, Trial};
use crate::error::{Error, Result};
use crate::eval::{evaluate, evaluate_scores, fingerprint, lda_baseline, EvalOptions, DEFAULT_DECIMATION, DEFAULT_SHRINKAGE};
use crate::model::{Checkpoint, Group, ModelConfig, ModelParams};
use crate::training::{
    aggregate_by_subject, crossval, pretrain_contrastive, split_subjects, train_classifier, CrossvalConfig, RunDir,
    TrainPlan,
};
use crate::verify::gradcheck_suite;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "erpcl", version, about = "Contrastive pretraining for cross-subject ERP detection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic ERPD dataset.
    Synth(SynthArgs),
    /// Contrastive pretraining of the encoder and projector.
    Pretrain(PretrainArgs),
    /// Classifier training on a frozen pretrained encoder.
    Train(TrainArgs),
    /// Evaluate a trained model on a test set.
    Eval(EvalArgs),
    /// Full cross-validation protocol.
    Crossval(CrossvalArgs),
    /// Finite-difference gradient checks.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    pub subjects: u32,
    #[arg(long, default_value_t = SynthConfig::default().trials_per_subject as u32)]
    pub trials: u32,
    /// Oddball target ratio; the default is the 6×6 row-column speller.
    #[arg(long)]
    pub oddball: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub amplitude_scale: f64,
    #[arg(long, default_value_t = SynthConfig::default().noise_uv.0)]
    pub noise_min: f64,
    #[arg(long, default_value_t = SynthConfig::default().noise_uv.1)]
    pub noise_max: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Clone)]
pub struct ModelArgs {
    /// Temporal kernels per encoder branch.
    #[arg(long, default_value_t = 8)]
    pub kernels: u32,
    /// Encoder branches; branch b uses kernel length fs / 2^(b+1).
    #[arg(long, default_value_t = 3)]
    pub branches: u32,
}

#[derive(Debug, Args, Clone)]
pub struct PlanArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Learning rate (default 1e-3 for pretraining, 5e-4 for the classifier).
    #[arg(long)]
    pub lr: Option<f32>,
    #[arg(long, default_value_t = 0.015)]
    pub weight_decay: f32,
    #[arg(long, default_value_t = 100)]
    pub epochs: u32,
    #[arg(long, default_value_t = 30)]
    pub patience: u32,
    /// Share of training subjects used for validation.
    #[arg(long, default_value_t = 0.25)]
    pub val_fraction: f64,
    #[arg(long, default_value_t = 3)]
    pub n_avg: u32,
    #[arg(long, default_value_t = 5)]
    pub n_neg: u32,
    #[arg(long, default_value_t = DEFAULT_TEMPERATURE as f32)]
    pub temperature: f32,
    #[arg(long, default_value_t = 64)]
    pub batch_size: u32,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub plan: PlanArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Encoder checkpoint written by `pretrain`.
    #[arg(long)]
    pub encoder: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub plan: PlanArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Full model checkpoint written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub arch: ModelArgs,
    /// Flashes per row and column in one speller selection.
    #[arg(long, default_value_t = 1)]
    pub repetitions: u32,
    /// Also score the shrinkage-LDA baseline fitted on this dataset.
    #[arg(long)]
    pub lda_train: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_SHRINKAGE)]
    pub shrinkage: f64,
}

#[derive(Debug, Args)]
pub struct CrossvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub k: u32,
    #[arg(long, default_value_t = 2)]
    pub repeats: u32,
    /// Comma-separated test subject ids.
    #[arg(long, value_delimiter = ',')]
    pub holdout: Vec<u32>,
    #[arg(long, default_value_t = 1)]
    pub jobs: u32,
    /// Classifier learning rate.
    #[arg(long, default_value_t = 5e-4)]
    pub classifier_lr: f32,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub plan: PlanArgs,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Exit code for an error: 1 for bad inputs or settings, 2 for failures while running.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::Shape(_)
        | Error::Rank(_)
        | Error::Format { .. }
        | Error::Io { .. }
        | Error::BatchComposition(_)
        | Error::Sampling(_)
        | Error::Protocol(_) => EXIT_VALIDATION,
        _ => EXIT_RUNTIME,
    }
}

fn model_config(ds: &Dataset, m: &ModelArgs) -> Result<ModelConfig> {
    if m.branches == 0 || m.kernels == 0 {
        return Err(Error::config("--branches and --kernels must be positive"));
    }
    let fs = ds.sample_rate.round() as usize;
    let mut cfg = ModelConfig::default();
    cfg.encoder.n_channels = ds.n_channels;
    cfg.encoder.n_samples = ds.n_samples;
    cfg.encoder.sample_rate = ds.sample_rate;
    cfg.encoder.kernels_per_branch = m.kernels as usize;
    cfg.encoder.kernel_lengths = (0..m.branches).map(|b| (fs >> (b + 1)).max(1)).collect();
    cfg.validate()?;
    Ok(cfg)
}

fn plan(p: &PlanArgs, base: TrainPlan) -> TrainPlan {
    TrainPlan {
        max_epochs: p.epochs as usize,
        patience: p.patience as usize,
        val_fraction: p.val_fraction,
        seed: p.seed,
        lr: p.lr.map_or(base.lr, f64::from),
        weight_decay: p.weight_decay as f64,
        batch_size: p.batch_size as usize,
        n_avg: p.n_avg as usize,
        n_neg: p.n_neg as usize,
        ..base
    }
}

fn model_entries(cfg: &ModelConfig) -> Vec<(String, String)> {
    let e = &cfg.encoder;
    vec![
        ("n_channels".into(), e.n_channels.to_string()),
        ("n_samples".into(), e.n_samples.to_string()),
        ("sample_rate".into(), e.sample_rate.to_string()),
        ("kernel_lengths".into(), format!("{:?}", e.kernel_lengths)),
        ("kernels_per_branch".into(), e.kernels_per_branch.to_string()),
        ("projector_pool".into(), cfg.projector.pool.to_string()),
        ("projector_kernels".into(), cfg.projector.kernels_per_branch.to_string()),
        ("dropout".into(), cfg.projector.dropout.to_string()),
        ("classifier_filters".into(), format!("{:?}", cfg.classifier.filters)),
        ("classifier_kernel_lengths".into(), format!("{:?}", cfg.classifier.kernel_lengths)),
        ("classifier_pool".into(), cfg.classifier.pool.to_string()),
        ("embedding_dim".into(), cfg.embedding_dim().to_string()),
    ]
}

fn plan_entries(prefix: &str, p: &TrainPlan) -> Vec<(String, String)> {
    [
        ("max_epochs", p.max_epochs.to_string()),
        ("patience", p.patience.to_string()),
        ("val_fraction", p.val_fraction.to_string()),
        ("seed", p.seed.to_string()),
        ("lr", p.lr.to_string()),
        ("weight_decay", p.weight_decay.to_string()),
        ("batch_size", p.batch_size.to_string()),
        ("n_avg", p.n_avg.to_string()),
        ("n_neg", p.n_neg.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (format!("{prefix}{k}"), v))
    .collect()
}

fn path_entry(key: &str, p: &Path) -> (String, String) {
    (key.to_string(), p.display().to_string())
}

fn synth(a: &SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        n_subjects: a.subjects as usize,
        trials_per_subject: a.trials as usize,
        paradigm: match a.oddball {
            Some(r) => Paradigm::Oddball { target_ratio: r },
            None => Paradigm::Speller(SpellerLayout::DEFAULT),
        },
        amplitude_scale: a.amplitude_scale,
        noise_uv: (a.noise_min, a.noise_max),
        seed: a.seed,
        ..SynthConfig::default()
    };
    let run = RunDir::create(&a.out)?;
    run.write_config(&[
        ("command".to_string(), "synth".to_string()),
        ("subjects".into(), cfg.n_subjects.to_string()),
        ("trials_per_subject".into(), cfg.trials_per_subject.to_string()),
        ("paradigm".into(), format!("{:?}", cfg.paradigm)),
        ("n_samples".into(), cfg.n_samples.to_string()),
        ("sample_rate".into(), cfg.sample_rate.to_string()),
        ("latency_ms".into(), format!("{:?}", cfg.latency_ms)),
        ("amplitude_uv".into(), format!("{:?}", cfg.amplitude_uv)),
        ("amplitude_scale".into(), cfg.amplitude_scale.to_string()),
        ("bump_sigma_ms".into(), cfg.bump_sigma_ms.to_string()),
        ("ar_coefficient".into(), cfg.ar_coefficient.to_string()),
        ("noise_uv".into(), format!("{:?}", cfg.noise_uv)),
        ("common_noise".into(), cfg.common_noise.to_string()),
        ("spatial_jitter".into(), cfg.spatial_jitter.to_string()),
        ("seed".into(), cfg.seed.to_string()),
    ])?;
    let ds = synth_generate(&cfg)?;
    let path = a.out.join("dataset.erpd");
    save_erpd(&ds, &path)?;
    println!("wrote {} trials to {}", ds.len(), path.display());
    Ok(())
}

fn pretrain(a: &PretrainArgs) -> Result<()> {
    let ds = load_erpd(&a.data)?;
    let cfg = model_config(&ds, &a.model)?;
    let plan = plan(&a.plan, TrainPlan::pretrain());
    plan.validate()?;
    let loss = LossConfig::new(a.plan.temperature as f64)?;
    let run = RunDir::create(&a.out)?;
    let mut entries = vec![("command".to_string(), "pretrain".to_string()), path_entry("data", &a.data)];
    entries.push(("temperature".into(), loss.temperature.to_string()));
    entries.extend(model_entries(&cfg));
    entries.extend(plan_entries("", &plan));
    run.write_config(&entries)?;

    let (train_ids, val_ids) = split_subjects(&ds, plan.val_fraction, plan.seed);
    let train = ds.subset(&train_ids);
    let val = ds.subset(&val_ids);
    let mut params = ModelParams::<f32>::init(&cfg, plan.seed)?;
    let val_ref = (val.usable_subjects().len() >= 2).then_some(&val);
    let history = pretrain_contrastive(&mut params, &train, val_ref, &loss, &plan)?;
    run.write_metrics("pretrain", &history)?;
    let ckpt = params.to_checkpoint(&[Group::Encoder, Group::Projector, Group::ProjectorState]);
    let path = run.save_checkpoint("encoder.erpw", &ckpt)?;
    println!(
        "best epoch {} validation loss {:.5} (initial {:.5}); wrote {}",
        history.best_epoch,
        history.best_metric,
        history.initial_metric(),
        path.display()
    );
    Ok(())
}

fn train(a: &TrainArgs) -> Result<()> {
    let ds = load_erpd(&a.data)?;
    let cfg = model_config(&ds, &a.model)?;
    let plan = plan(&a.plan, TrainPlan::classifier());
    plan.validate()?;
    let run = RunDir::create(&a.out)?;
    let mut entries = vec![
        ("command".to_string(), "train".to_string()),
        path_entry("data", &a.data),
        path_entry("encoder", &a.encoder),
    ];
    entries.extend(model_entries(&cfg));
    entries.extend(plan_entries("", &plan));
    run.write_config(&entries)?;

    let mut params = ModelParams::<f32>::init(&cfg, plan.seed)?;
    params.apply_checkpoint(&Checkpoint::load(&a.encoder)?, &[Group::Encoder])?;
    let (train_ids, val_ids) = split_subjects(&ds, plan.val_fraction, plan.seed);
    let train = ds.subset(&train_ids);
    let val = ds.subset(&val_ids);
    let val_ref = (!val.is_empty()).then_some(&val);
    let history = train_classifier(&mut params, &train, val_ref, &plan)?;
    run.write_metrics("classifier", &history)?;
    let all = [Group::Encoder, Group::Projector, Group::ProjectorState, Group::Classifier];
    let path = run.save_checkpoint("model.erpw", &params.to_checkpoint(&all))?;
    println!(
        "best epoch {} validation AUC {:.4}; wrote {}",
        history.best_epoch,
        history.best_metric,
        path.display()
    );
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<()> {
    let ds = load_erpd(&a.data)?;
    let cfg = model_config(&ds, &a.arch)?;
    let run = RunDir::create(&a.out)?;
    run.write_config(&[
        ("command".to_string(), "eval".to_string()),
        path_entry("data", &a.data),
        path_entry("model", &a.model),
        ("repetitions".into(), a.repetitions.to_string()),
        (
            "lda_train".into(),
            a.lda_train.as_ref().map_or("none".into(), |p| p.display().to_string()),
        ),
        ("shrinkage".into(), a.shrinkage.to_string()),
    ])?;
    let mut params = ModelParams::<f32>::init(&cfg, 0)?;
    params.apply_checkpoint(&Checkpoint::load(&a.model)?, &[Group::Encoder, Group::Classifier])?;
    let opts = EvalOptions {
        layout: SpellerLayout::DEFAULT,
        repetitions: a.repetitions as usize,
    };
    let report = evaluate(&params, &ds, &opts)?;
    report.write(&run.path, "report")?;
    print!("{}", report.to_text());
    if let Some(lda_path) = &a.lda_train {
        let train = load_erpd(lda_path)?;
        let tr: Vec<&Trial> = train.trials.iter().collect();
        let te: Vec<&Trial> = ds.trials.iter().collect();
        let scores = lda_baseline(&tr, &te, ds.n_channels, a.shrinkage, DEFAULT_DECIMATION)?;
        let lda = evaluate_scores(&ds, &scores, &opts, &fingerprint(&format!("lda {}", a.shrinkage)))?;
        lda.write(&run.path, "lda_report")?;
        println!("lda_auc_mean: {:.6}", lda.mean_auc);
    }
    Ok(())
}

fn run_crossval(a: &CrossvalArgs) -> Result<()> {
    let ds = load_erpd(&a.data)?;
    let model = model_config(&ds, &a.model)?;
    let pre = plan(&a.plan, TrainPlan::pretrain());
    let cls = TrainPlan {
        lr: a.classifier_lr as f64,
        ..plan(&a.plan, TrainPlan::classifier())
    };
    pre.validate()?;
    cls.validate()?;
    let cfg = CrossvalConfig {
        k: a.k as usize,
        repeats: a.repeats as usize,
        holdout: a.holdout.clone(),
        seed: a.plan.seed,
        jobs: a.jobs as usize,
        model,
        loss: LossConfig::new(a.plan.temperature as f64)?,
        pretrain: pre,
        classifier: cls,
        eval: EvalOptions::default(),
    };
    let run = RunDir::create(&a.out)?;
    let mut entries = vec![
        ("command".to_string(), "crossval".to_string()),
        path_entry("data", &a.data),
        ("k".into(), cfg.k.to_string()),
        ("repeats".into(), cfg.repeats.to_string()),
        ("holdout".into(), format!("{:?}", cfg.holdout)),
        ("jobs".into(), cfg.jobs.to_string()),
        ("temperature".into(), cfg.loss.temperature.to_string()),
    ];
    entries.extend(model_entries(&cfg.model));
    entries.extend(plan_entries("pretrain.", &cfg.pretrain));
    entries.extend(plan_entries("classifier.", &cfg.classifier));
    run.write_config(&entries)?;

    let results = crossval(&ds, &cfg)?;
    let mut folds = String::from("repeat,fold,train_subjects,val_subjects,auc_mean,auc_std\n");
    for r in &results {
        let ids = |v: &[u32]| v.iter().map(u32::to_string).collect::<Vec<_>>().join(" ");
        folds.push_str(&format!(
            "{},{},{},{},{:.6},{:.6}\n",
            r.plan.repeat,
            r.plan.fold,
            ids(&r.plan.train),
            ids(&r.plan.val),
            r.report.mean_auc,
            r.report.std_auc
        ));
        r.report
            .write(&run.path, &format!("report_r{}_f{}", r.plan.repeat, r.plan.fold))?;
    }
    let p = run.path.join("folds.csv");
    fs::write(&p, folds).map_err(|e| Error::io(&p, e))?;
    let mut summary = String::from("subject_id,auc_mean,auc_std,n_results\n");
    for s in aggregate_by_subject(&results) {
        summary.push_str(&format!("{},{:.6},{:.6},{}\n", s.subject_id, s.mean_auc, s.std_auc, s.n_results));
    }
    let p = run.path.join("summary.csv");
    fs::write(&p, &summary).map_err(|e| Error::io(&p, e))?;
    print!("{summary}");
    Ok(())
}

fn gradcheck(a: &GradcheckArgs) -> Result<bool> {
    let results = gradcheck_suite(a.seed)?;
    println!("{:<28} {:>10} {:>14}  status", "check", "elements", "max_rel_error");
    let mut ok = true;
    for r in &results {
        let status = if r.passed() { "ok" } else { "FAIL" };
        ok &= r.passed();
        println!("{:<28} {:>10} {:>14.3e}  {status}", r.name, r.checked, r.max_rel_error);
    }
    Ok(ok)
}

/// Parses `argv` (program name first) and runs the subcommand; returns the exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    let outcome = match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Pretrain(a) => pretrain(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Crossval(a) => run_crossval(a),
        Command::Gradcheck(a) => match gradcheck(a) {
            Ok(true) => Ok(()),
            Ok(false) => {
                eprintln!("error: gradient check failed");
                return EXIT_RUNTIME;
            }
            Err(e) => Err(e),
        },
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
