use crate::data::Label;
use crate::error::{Error, Result};

/// Area under the ROC curve as the Mann–Whitney statistic: the fraction of
/// (positive, negative) pairs ranked correctly, ties counting one half.
pub fn auc(scores: &[f64], labels: &[Label]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::shape(format!(
            "auc: {} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::UndefinedMetric("auc: NaN score".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l == Label::Erp).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("auc needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // twice the rank sum keeps tied (half-integer) ranks exact
    let mut twice_rank_sum_pos: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share their mean; twice that is i + j + 2
        let twice_rank = (i + j + 2) as u128;
        let pos_in_block = order[i..=j].iter().filter(|&&k| labels[k] == Label::Erp).count() as u128;
        twice_rank_sum_pos += twice_rank * pos_in_block;
        i = j + 1;
    }
    let np = n_pos as u128;
    // 2U = 2R - n_pos (n_pos + 1)
    let twice_u = twice_rank_sum_pos - np * (np + 1);
    Ok(twice_u as f64 / 2.0 / (n_pos as f64 * n_neg as f64))
}
