//! Synthetic oddball EEG with per-subject P300 latency, amplitude and
//! topography, on AR(1) background noise.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Dataset, Label, Trial, DEFAULT_CHANNELS};
use crate::error::{Error, Result};

/// Relative P300 weight per default channel (Fz, Cz, Pz, P3, P4, PO7, PO8, Oz).
const BASE_TOPOGRAPHY: [f64; 8] = [0.25, 0.55, 1.0, 0.75, 0.75, 0.9, 0.9, 0.6];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpellerLayout {
    pub rows: usize,
    pub cols: usize,
}

impl SpellerLayout {
    pub const DEFAULT: SpellerLayout = SpellerLayout { rows: 6, cols: 6 };

    /// Flashes in one single-trial selection.
    pub fn flashes(&self) -> usize {
        self.rows + self.cols
    }

    pub fn row_code(&self, row: usize) -> u32 {
        row as u32 + 1
    }

    pub fn col_code(&self, col: usize) -> u32 {
        (self.rows + col) as u32 + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Paradigm {
    /// Row-column speller: each selection flashes every row and column once;
    /// the two flashes containing the target cell are ERP trials.
    Speller(SpellerLayout),
    /// Plain oddball with the given fraction of ERP trials and no stimulus codes.
    Oddball { target_ratio: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_subjects: usize,
    pub trials_per_subject: usize,
    pub paradigm: Paradigm,
    pub n_samples: usize,
    pub sample_rate: f32,
    /// Uniform range of per-subject P300 peak latency.
    pub latency_ms: (f64, f64),
    /// Uniform range of per-subject P300 peak amplitude at the strongest channel.
    pub amplitude_uv: (f64, f64),
    /// Multiplies every amplitude; 0 produces label-independent data.
    pub amplitude_scale: f64,
    pub bump_sigma_ms: f64,
    pub ar_coefficient: f64,
    /// Uniform range of per-subject stationary background-noise standard deviation.
    pub noise_uv: (f64, f64),
    /// Share of noise variance coming from a source common to all channels.
    pub common_noise: f64,
    /// Relative standard deviation of per-subject topography perturbation.
    pub spatial_jitter: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_subjects: 10,
            trials_per_subject: 240,
            paradigm: Paradigm::Speller(SpellerLayout::DEFAULT),
            n_samples: 128,
            sample_rate: 128.0,
            latency_ms: (280.0, 350.0),
            amplitude_uv: (3.0, 8.0),
            amplitude_scale: 1.0,
            bump_sigma_ms: 45.0,
            ar_coefficient: 0.95,
            noise_uv: (3.0, 5.0),
            common_noise: 0.5,
            spatial_jitter: 0.25,
            seed: 0,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.n_subjects == 0 || self.trials_per_subject == 0 || self.n_samples == 0 {
            return Err(Error::config("subjects, trials and samples must be positive"));
        }
        if !(self.sample_rate > 0.0) {
            return Err(Error::config("sample rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.ar_coefficient) {
            return Err(Error::config("AR(1) coefficient must be in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.common_noise) {
            return Err(Error::config("common noise share must be in [0, 1]"));
        }
        if self.latency_ms.0 > self.latency_ms.1
            || self.amplitude_uv.0 > self.amplitude_uv.1
            || self.noise_uv.0 > self.noise_uv.1
            || self.noise_uv.0 < 0.0
            || self.amplitude_scale < 0.0
            || self.bump_sigma_ms <= 0.0
        {
            return Err(Error::config("invalid parameter range"));
        }
        match self.paradigm {
            Paradigm::Speller(l) => {
                if l.rows == 0 || l.cols == 0 {
                    return Err(Error::config("speller layout needs rows and columns"));
                }
                if !self.trials_per_subject.is_multiple_of(l.flashes()) {
                    return Err(Error::config(format!(
                        "speller trials per subject must be a multiple of {} flashes",
                        l.flashes()
                    )));
                }
            }
            Paradigm::Oddball { target_ratio } => {
                if !(target_ratio > 0.0 && target_ratio < 1.0) {
                    return Err(Error::config("target ratio must be in (0, 1)"));
                }
            }
        }
        Ok(())
    }
}

struct SubjectModel {
    latency_s: f64,
    amplitude: f64,
    topography: Vec<f64>,
    noise_std: f64,
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn ar1(rng: &mut ChaCha8Rng, n: usize, coef: f64, std: f64, out: &mut [f64]) {
    let stationary = Normal::new(0.0, std).unwrap();
    let innovation = Normal::new(0.0, std * (1.0 - coef * coef).sqrt()).unwrap();
    let mut x = stationary.sample(rng);
    for (i, o) in out.iter_mut().enumerate().take(n) {
        if i > 0 {
            x = coef * x + innovation.sample(rng);
        }
        *o = x;
    }
}

/// Generates a labelled multi-subject dataset. Subject ids run from 1.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let m = DEFAULT_CHANNELS.len();
    let n = cfg.n_samples;
    let fs = cfg.sample_rate as f64;
    let mut ds = Dataset::new(m, n, cfg.sample_rate, DEFAULT_CHANNELS.iter().map(|s| s.to_string()).collect());
    ds.trials.reserve(cfg.n_subjects * cfg.trials_per_subject);

    for s in 0..cfg.n_subjects {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(s as u64 + 1);
        let jitter = Normal::new(0.0, cfg.spatial_jitter.max(0.0)).unwrap();
        let subject = SubjectModel {
            latency_s: uniform(&mut rng, cfg.latency_ms) / 1000.0,
            amplitude: uniform(&mut rng, cfg.amplitude_uv) * cfg.amplitude_scale,
            topography: BASE_TOPOGRAPHY
                .iter()
                .map(|w| (w * (1.0 + jitter.sample(&mut rng))).max(0.05))
                .collect(),
            noise_std: uniform(&mut rng, cfg.noise_uv),
        };
        let sigma = cfg.bump_sigma_ms / 1000.0;
        let bump: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / fs - subject.latency_s;
                subject.amplitude * (-(t * t) / (2.0 * sigma * sigma)).exp()
            })
            .collect();

        let plan = label_plan(cfg, &mut rng);
        let indep = (1.0 - cfg.common_noise).sqrt();
        let common = cfg.common_noise.sqrt();
        let mut shared = vec![0.0; n];
        let mut own = vec![0.0; n];
        for (label, code) in plan {
            ar1(&mut rng, n, cfg.ar_coefficient, subject.noise_std, &mut shared);
            let mut data = Vec::with_capacity(m * n);
            for c in 0..m {
                ar1(&mut rng, n, cfg.ar_coefficient, subject.noise_std, &mut own);
                let w = subject.topography[c];
                for i in 0..n {
                    let mut v = indep * own[i] + common * shared[i];
                    if label == Label::Erp {
                        v += w * bump[i];
                    }
                    data.push(v as f32);
                }
            }
            ds.trials.push(Trial {
                subject_id: s as u32 + 1,
                label,
                stimulus_code: code,
                data,
            });
        }
    }
    Ok(ds)
}

fn label_plan(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<(Label, u32)> {
    match cfg.paradigm {
        Paradigm::Speller(layout) => {
            let mut plan = Vec::with_capacity(cfg.trials_per_subject);
            for _ in 0..cfg.trials_per_subject / layout.flashes() {
                let row = rng.random_range(0..layout.rows);
                let col = rng.random_range(0..layout.cols);
                let mut codes: Vec<u32> = (1..=layout.flashes() as u32).collect();
                codes.shuffle(rng);
                for code in codes {
                    let hit = code == layout.row_code(row) || code == layout.col_code(col);
                    plan.push((if hit { Label::Erp } else { Label::NonErp }, code));
                }
            }
            plan
        }
        Paradigm::Oddball { target_ratio } => {
            let n = cfg.trials_per_subject;
            let n_erp = ((n as f64 * target_ratio).round() as usize).clamp(1, n.saturating_sub(1).max(1));
            let mut plan: Vec<(Label, u32)> = (0..n)
                .map(|i| (if i < n_erp { Label::Erp } else { Label::NonErp }, 0))
                .collect();
            plan.shuffle(rng);
            plan
        }
    }
}
