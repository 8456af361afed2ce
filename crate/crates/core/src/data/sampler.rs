//! Subject-pair mini-batches of trial-averaged samples.

use std::collections::BTreeMap;

use log::warn;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Dataset, Label, Trial};
use crate::error::{Error, Result};

/// Element-wise mean of exactly `n_avg` trials sharing subject and label.
pub fn average_trials(trials: &[&Trial], n_avg: usize) -> Result<Vec<f32>> {
    if n_avg == 0 || trials.len() != n_avg {
        return Err(Error::Sampling(format!(
            "expected {n_avg} trials to average, got {}",
            trials.len()
        )));
    }
    let first = trials[0];
    if trials
        .iter()
        .any(|t| t.subject_id != first.subject_id || t.label != first.label || t.data.len() != first.data.len())
    {
        return Err(Error::Sampling("averaged trials must share subject, label and shape".into()));
    }
    let mut acc = vec![0.0f64; first.data.len()];
    for t in trials {
        for (a, &v) in acc.iter_mut().zip(&t.data) {
            *a += v as f64;
        }
    }
    Ok(acc.into_iter().map(|v| (v / n_avg as f64) as f32).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectSamples {
    pub subject_id: u32,
    pub erp: Vec<Vec<f32>>,
    pub non_erp: Vec<Vec<f32>>,
}

impl SubjectSamples {
    /// Samples in batch order (ERP first) with their labels.
    pub fn ordered(&self) -> impl Iterator<Item = (&[f32], Label)> {
        self.erp
            .iter()
            .map(|s| (s.as_slice(), Label::Erp))
            .chain(self.non_erp.iter().map(|s| (s.as_slice(), Label::NonErp)))
    }

    pub fn labels(&self) -> Vec<Label> {
        self.ordered().map(|(_, l)| l).collect()
    }
}

/// Contrastive mini-batch for one unordered subject pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectPairBatch {
    pub a: SubjectSamples,
    pub b: SubjectSamples,
    pub n_avg: usize,
}

impl SubjectPairBatch {
    pub fn new(a: SubjectSamples, b: SubjectSamples, n_avg: usize, n_anchor: usize, n_neg: usize) -> Result<Self> {
        if a.subject_id == b.subject_id {
            return Err(Error::BatchComposition(format!("pair repeats subject {}", a.subject_id)));
        }
        for s in [&a, &b] {
            if s.erp.len() != n_anchor || s.non_erp.len() != n_neg {
                return Err(Error::BatchComposition(format!(
                    "subject {} has {} ERP / {} non-ERP samples, expected {n_anchor} / {n_neg}",
                    s.subject_id,
                    s.erp.len(),
                    s.non_erp.len()
                )));
            }
        }
        Ok(Self { a, b, n_avg })
    }

    pub fn subjects(&self) -> (u32, u32) {
        (self.a.subject_id, self.b.subject_id)
    }
}

struct SubjectPool {
    erp: Vec<usize>,
    non_erp: Vec<usize>,
}

/// Traverses every unordered pair of usable subjects once per epoch, in a
/// seeded shuffled order. Trials are drawn without replacement within a batch
/// and with replacement across batches.
pub struct PairSampler<'a> {
    dataset: &'a Dataset,
    pools: BTreeMap<u32, SubjectPool>,
    n_avg: usize,
    n_neg: usize,
    n_anchor: usize,
    seed: u64,
}

impl<'a> PairSampler<'a> {
    pub fn new(dataset: &'a Dataset, n_avg: usize, n_neg: usize, seed: u64) -> Result<Self> {
        Self::with_anchors(dataset, n_avg, n_neg, 1, seed)
    }

    pub fn with_anchors(dataset: &'a Dataset, n_avg: usize, n_neg: usize, n_anchor: usize, seed: u64) -> Result<Self> {
        if n_avg == 0 || n_neg == 0 || n_anchor == 0 {
            return Err(Error::config("n_avg, n_neg and n_anchor must be positive"));
        }
        let mut pools = BTreeMap::new();
        for (subject, idx) in dataset.subject_index() {
            let (erp, non_erp): (Vec<usize>, Vec<usize>) =
                idx.into_iter().partition(|&i| dataset.trials[i].label == Label::Erp);
            if erp.len() < n_avg * n_anchor || non_erp.len() < n_avg * n_neg {
                warn!(
                    "subject {subject} skipped: {} ERP / {} non-ERP trials, need {} / {}",
                    erp.len(),
                    non_erp.len(),
                    n_avg * n_anchor,
                    n_avg * n_neg
                );
                continue;
            }
            pools.insert(subject, SubjectPool { erp, non_erp });
        }
        if pools.len() < 2 {
            return Err(Error::Sampling(format!(
                "need at least 2 usable subjects, found {}",
                pools.len()
            )));
        }
        Ok(Self {
            dataset,
            pools,
            n_avg,
            n_neg,
            n_anchor,
            seed,
        })
    }

    pub fn subjects(&self) -> Vec<u32> {
        self.pools.keys().copied().collect()
    }

    pub fn pairs_per_epoch(&self) -> usize {
        let n = self.pools.len();
        n * (n - 1) / 2
    }

    /// The epoch's pair order.
    pub fn epoch_pairs(&self, epoch: u64) -> Vec<(u32, u32)> {
        let subjects = self.subjects();
        let mut pairs = Vec::with_capacity(self.pairs_per_epoch());
        for (i, &a) in subjects.iter().enumerate() {
            for &b in &subjects[i + 1..] {
                pairs.push((a, b));
            }
        }
        pairs.shuffle(&mut self.rng(epoch, 0));
        pairs
    }

    /// All batches of one epoch. Deterministic in `(seed, epoch)`.
    pub fn epoch(&self, epoch: u64) -> Result<Vec<SubjectPairBatch>> {
        self.epoch_pairs(epoch)
            .into_iter()
            .enumerate()
            .map(|(k, (a, b))| {
                let mut rng = self.rng(epoch, k as u64 + 1);
                let sa = self.draw(a, &mut rng)?;
                let sb = self.draw(b, &mut rng)?;
                SubjectPairBatch::new(sa, sb, self.n_avg, self.n_anchor, self.n_neg)
            })
            .collect()
    }

    fn rng(&self, epoch: u64, batch: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        rng.set_stream(batch);
        rng
    }

    fn draw(&self, subject: u32, rng: &mut ChaCha8Rng) -> Result<SubjectSamples> {
        let pool = &self.pools[&subject];
        let mut averaged = |idx: &[usize], groups: usize| -> Result<Vec<Vec<f32>>> {
            let picked: Vec<usize> = idx.choose_multiple(rng, groups * self.n_avg).copied().collect();
            picked
                .chunks(self.n_avg)
                .map(|chunk| {
                    let trials: Vec<&Trial> = chunk.iter().map(|&i| &self.dataset.trials[i]).collect();
                    average_trials(&trials, self.n_avg)
                })
                .collect()
        };
        let erp = averaged(&pool.erp, self.n_anchor)?;
        let non_erp = averaged(&pool.non_erp, self.n_neg)?;
        Ok(SubjectSamples {
            subject_id: subject,
            erp,
            non_erp,
        })
    }
}
