//! Cross-subject NT-Xent loss.
//!
//! For a subject pair {A, B}, each ERP embedding of A is an anchor whose only
//! positive is B's matching ERP embedding; B's non-ERP embeddings are its
//! negatives. Within-subject pairs never enter the loss. The pair loss is the
//! sum over A-anchors and B-anchors.

use crate::autodiff::{CustomOp, Tape, Var};
use crate::data::Label;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const DEFAULT_TEMPERATURE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub temperature: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            temperature: DEFAULT_TEMPERATURE,
        }
    }
}

impl LossConfig {
    pub fn new(temperature: f64) -> Result<Self> {
        check_temperature(temperature)?;
        Ok(Self { temperature })
    }
}

fn check_temperature(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::config(format!("temperature must be > 0, got {tau}")))
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Cosine similarity; errors on mismatched lengths or a zero-norm input.
pub fn cosine_sim<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("cosine_sim: lengths {} and {}", a.len(), b.len())));
    }
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == T::zero() || nb == T::zero() || !(na * nb).is_finite() {
        return Err(Error::DegenerateVector("cosine similarity of a zero-norm vector".into()));
    }
    Ok(dot(a, b) / (na * nb))
}

/// `-log(exp(s_pos/τ) / Σ_c exp(s_c/τ))` accumulated in double precision.
fn neg_log_softmax(sims: &[f64], positive: usize, tau: f64) -> f64 {
    let scaled: Vec<f64> = sims.iter().map(|s| s / tau).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scaled.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    lse - scaled[positive]
}

/// Loss for one anchor. Exactly one candidate must be flagged positive; the
/// denominator runs over all candidates including the positive.
pub fn ntxent_per_anchor<T: Scalar>(anchor: &[T], candidates: &[(&[T], bool)], temperature: f64) -> Result<f64> {
    check_temperature(temperature)?;
    if candidates.is_empty() {
        return Err(Error::config("ntxent: no candidates"));
    }
    let positives: Vec<usize> = candidates
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.1.then_some(i))
        .collect();
    let &[positive] = positives.as_slice() else {
        return Err(Error::config(format!(
            "ntxent: expected exactly one positive candidate, got {}",
            positives.len()
        )));
    };
    let sims = candidates
        .iter()
        .map(|(c, _)| cosine_sim(anchor, c).map(Scalar::as_f64))
        .collect::<Result<Vec<_>>>()?;
    Ok(neg_log_softmax(&sims, positive, temperature))
}

/// Embeddings of one subject within a pair batch.
#[derive(Debug, Clone)]
pub struct SubjectEmbeddings<T> {
    pub samples: Vec<(Vec<T>, Label)>,
}

/// Which rows of a flattened pair batch form each anchor's softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    pub anchor: usize,
    pub positive: usize,
    pub negatives: Vec<usize>,
}

/// Anchors for a pair batch whose samples are listed A first, then B.
/// The i-th ERP of one subject pairs with the i-th ERP of the other.
pub fn pair_layout(labels_a: &[Label], labels_b: &[Label]) -> Result<Vec<AnchorSet>> {
    let offset = labels_a.len();
    let idx = |labels: &[Label], base: usize, want: Label| -> Vec<usize> {
        labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == want)
            .map(|(i, _)| base + i)
            .collect()
    };
    let erp_a = idx(labels_a, 0, Label::Erp);
    let erp_b = idx(labels_b, offset, Label::Erp);
    let non_a = idx(labels_a, 0, Label::NonErp);
    let non_b = idx(labels_b, offset, Label::NonErp);
    if erp_a.is_empty() || erp_b.is_empty() {
        return Err(Error::BatchComposition("each subject needs at least one ERP sample".into()));
    }
    if erp_a.len() != erp_b.len() {
        return Err(Error::BatchComposition(format!(
            "unequal ERP counts across the pair ({} vs {})",
            erp_a.len(),
            erp_b.len()
        )));
    }
    let mut anchors = Vec::with_capacity(2 * erp_a.len());
    for (&a, &b) in erp_a.iter().zip(&erp_b) {
        anchors.push(AnchorSet {
            anchor: a,
            positive: b,
            negatives: non_b.clone(),
        });
    }
    for (&b, &a) in erp_b.iter().zip(&erp_a) {
        anchors.push(AnchorSet {
            anchor: b,
            positive: a,
            negatives: non_a.clone(),
        });
    }
    Ok(anchors)
}

fn layout_loss<T: Scalar>(rows: &[&[T]], anchors: &[AnchorSet], tau: f64) -> Result<f64> {
    let mut total = 0.0;
    for a in anchors {
        let mut cands: Vec<(&[T], bool)> = vec![(rows[a.positive], true)];
        cands.extend(a.negatives.iter().map(|&n| (rows[n], false)));
        total += ntxent_per_anchor(rows[a.anchor], &cands, tau)?;
    }
    Ok(total)
}

/// Total pair loss `L = Σ l^A + Σ l^B`.
pub fn batch_loss<T: Scalar>(a: &SubjectEmbeddings<T>, b: &SubjectEmbeddings<T>, temperature: f64) -> Result<f64> {
    check_temperature(temperature)?;
    let la: Vec<Label> = a.samples.iter().map(|s| s.1).collect();
    let lb: Vec<Label> = b.samples.iter().map(|s| s.1).collect();
    let anchors = pair_layout(&la, &lb)?;
    let rows: Vec<&[T]> = a.samples.iter().chain(&b.samples).map(|s| s.0.as_slice()).collect();
    layout_loss(&rows, &anchors, temperature)
}

struct NtXentOp {
    anchors: Vec<AnchorSet>,
    tau: f64,
}

impl<T: Scalar> CustomOp<T> for NtXentOp {
    fn name(&self) -> &'static str {
        "ntxent"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, grad_out: &[T]) -> Vec<Vec<T>> {
        let scale = grad_out[0].as_f64();
        let rows: Vec<Vec<f64>> = inputs.iter().map(|t| t.data().iter().map(|v| v.as_f64()).collect()).collect();
        let norms: Vec<f64> = rows.iter().map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
        let mut grads: Vec<Vec<f64>> = rows.iter().map(|r| vec![0.0; r.len()]).collect();
        for a in &self.anchors {
            let cands: Vec<usize> = std::iter::once(a.positive).chain(a.negatives.iter().copied()).collect();
            let sims: Vec<f64> = cands
                .iter()
                .map(|&c| dot(&rows[a.anchor], &rows[c]) / (norms[a.anchor] * norms[c]))
                .collect();
            let scaled: Vec<f64> = sims.iter().map(|s| s / self.tau).collect();
            let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scaled.iter().map(|v| (v - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            for (j, (&c, &s)) in cands.iter().zip(&sims).enumerate() {
                let dl_ds = (exps[j] / z - if j == 0 { 1.0 } else { 0.0 }) / self.tau * scale;
                let (na, nc) = (norms[a.anchor], norms[c]);
                for k in 0..rows[c].len() {
                    let da = rows[c][k] / (na * nc) - s * rows[a.anchor][k] / (na * na);
                    let dc = rows[a.anchor][k] / (na * nc) - s * rows[c][k] / (nc * nc);
                    grads[a.anchor][k] += dl_ds * da;
                    grads[c][k] += dl_ds * dc;
                }
            }
        }
        grads
            .into_iter()
            .map(|g| g.into_iter().map(T::from_f64).collect())
            .collect()
    }
}

/// Records the pair loss on the tape. `embeddings` lists subject A's samples
/// followed by subject B's, with labels in the same order.
pub fn ntxent_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    embeddings: &[Var],
    labels_a: &[Label],
    labels_b: &[Label],
    temperature: f64,
) -> Result<Var> {
    check_temperature(temperature)?;
    if embeddings.len() != labels_a.len() + labels_b.len() {
        return Err(Error::BatchComposition("one label per embedding required".into()));
    }
    let anchors = pair_layout(labels_a, labels_b)?;
    let loss = {
        let rows: Vec<&[T]> = embeddings.iter().map(|&v| tape.value(v).data()).collect();
        layout_loss(&rows, &anchors, temperature)?
    };
    Ok(tape.custom(
        embeddings,
        Tensor::scalar(T::from_f64(loss)),
        Box::new(NtXentOp {
            anchors,
            tau: temperature,
        }),
    ))
}
