//! AUC, speller decoding, per-subject reports and the LDA baseline.

mod auc;
mod lda;
mod report;
mod speller;

pub use auc::auc;
pub use lda::{lda_baseline, lda_features, Lda, DEFAULT_DECIMATION, DEFAULT_SHRINKAGE};
pub use report::{evaluate, evaluate_scores, fingerprint, mean_std, predict_logits, EvalOptions, EvalReport, SubjectResult};
pub use speller::{selections, speller_decode, Selection};
