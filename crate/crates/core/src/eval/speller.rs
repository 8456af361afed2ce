//! Row-column speller decoding.

use crate::data::{Label, SpellerLayout, Trial};
use crate::error::{Error, Result};

/// Predicted `(row, column)` from per-flash scores.
///
/// `flashes` pairs 1-based stimulus codes (rows `1..=R`, columns `R+1..=R+C`)
/// with classifier scores; repeated codes are summed. Every row and column
/// must be flashed at least once. Ties go to the lowest index.
pub fn speller_decode(flashes: &[(u32, f64)], layout: SpellerLayout) -> Result<(usize, usize)> {
    let mut row_sum = vec![0.0; layout.rows];
    let mut col_sum = vec![0.0; layout.cols];
    let mut row_seen = vec![false; layout.rows];
    let mut col_seen = vec![false; layout.cols];
    for &(code, score) in flashes {
        let idx = code as usize;
        if idx == 0 || idx > layout.flashes() {
            return Err(Error::Protocol(format!(
                "stimulus code {code} outside 1..={}",
                layout.flashes()
            )));
        }
        if idx <= layout.rows {
            row_sum[idx - 1] += score;
            row_seen[idx - 1] = true;
        } else {
            col_sum[idx - 1 - layout.rows] += score;
            col_seen[idx - 1 - layout.rows] = true;
        }
    }
    if let Some(r) = row_seen.iter().position(|s| !s) {
        return Err(Error::Protocol(format!("row {r} was never flashed")));
    }
    if let Some(c) = col_seen.iter().position(|s| !s) {
        return Err(Error::Protocol(format!("column {c} was never flashed")));
    }
    Ok((argmax(&row_sum), argmax(&col_sum)))
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// One selection: its flashes (code, trial index) and the attended cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub trials: Vec<usize>,
    pub target: (usize, usize),
}

/// Splits one subject's trials (in recording order) into consecutive
/// selections of `layout.flashes() * repetitions` flashes. Returns `None`
/// when the trials carry no stimulus codes.
pub fn selections(trials: &[&Trial], indices: &[usize], layout: SpellerLayout, repetitions: usize) -> Result<Option<Vec<Selection>>> {
    if indices.iter().all(|&i| trials[i].stimulus_code == 0) {
        return Ok(None);
    }
    let block = layout.flashes() * repetitions.max(1);
    if !indices.len().is_multiple_of(block) {
        return Err(Error::Protocol(format!(
            "{} flashes is not a whole number of {block}-flash selections",
            indices.len()
        )));
    }
    let mut out = Vec::with_capacity(indices.len() / block);
    for chunk in indices.chunks(block) {
        let mut row = None;
        let mut col = None;
        for &i in chunk {
            let t = trials[i];
            let code = t.stimulus_code as usize;
            if code == 0 || code > layout.flashes() {
                return Err(Error::Protocol(format!("trial {i} has stimulus code {code}")));
            }
            if t.label == Label::Erp {
                let cell = if code <= layout.rows {
                    &mut row
                } else {
                    &mut col
                };
                let value = if code <= layout.rows { code - 1 } else { code - 1 - layout.rows };
                if cell.is_some_and(|v| v != value) {
                    return Err(Error::Protocol("selection has two target rows or columns".into()));
                }
                *cell = Some(value);
            }
        }
        match (row, col) {
            (Some(r), Some(c)) => out.push(Selection {
                trials: chunk.to_vec(),
                target: (r, c),
            }),
            _ => return Err(Error::Protocol("selection lacks a target row or column".into())),
        }
    }
    Ok(Some(out))
}
