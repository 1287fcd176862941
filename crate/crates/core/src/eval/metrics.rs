use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub weighted_f1: f64,
}

impl Metrics {
    /// Arithmetic mean of each field, summed in the given order.
    pub fn mean<'a>(items: impl IntoIterator<Item = &'a Metrics>) -> Option<Metrics> {
        let mut n = 0usize;
        let mut acc = 0.0;
        let mut f1 = 0.0;
        for m in items {
            n += 1;
            acc += m.accuracy;
            f1 += m.weighted_f1;
        }
        (n > 0).then(|| Metrics {
            accuracy: acc / n as f64,
            weighted_f1: f1 / n as f64,
        })
    }
}

fn check_lengths<S>(preds: &[S], golds: &[S]) -> Result<()> {
    if preds.len() != golds.len() {
        return Err(Error::LengthMismatch(preds.len(), golds.len()));
    }
    if golds.is_empty() {
        return Err(Error::Empty);
    }
    Ok(())
}

pub fn accuracy<S: AsRef<str>>(preds: &[S], golds: &[S]) -> Result<f64> {
    check_lengths(preds, golds)?;
    let hits = preds
        .iter()
        .zip(golds)
        .filter(|(p, g)| p.as_ref() == g.as_ref())
        .count();
    Ok(hits as f64 / golds.len() as f64)
}

/// Support-weighted mean of per-class F1. A class with zero precision and
/// recall scores 0; classes absent from `golds` carry no weight.
pub fn weighted_f1<S: AsRef<str>, L: AsRef<str>>(preds: &[S], golds: &[S], label_set: &[L]) -> Result<f64> {
    check_lengths(preds, golds)?;
    let k = label_set.len();
    let index = |label: &str, row: usize| {
        label_set
            .iter()
            .position(|l| l.as_ref() == label)
            .ok_or_else(|| Error::UnknownLabel {
                label: label.to_string(),
                row,
            })
    };
    let mut tp = vec![0usize; k];
    let mut pred_count = vec![0usize; k];
    let mut gold_count = vec![0usize; k];
    for (row, (p, g)) in preds.iter().zip(golds).enumerate() {
        let pi = index(p.as_ref(), row)?;
        let gi = index(g.as_ref(), row)?;
        pred_count[pi] += 1;
        gold_count[gi] += 1;
        if pi == gi {
            tp[pi] += 1;
        }
    }
    let n = golds.len() as f64;
    let mut total = 0.0;
    for c in 0..k {
        if gold_count[c] == 0 {
            continue;
        }
        let recall = tp[c] as f64 / gold_count[c] as f64;
        let precision = if pred_count[c] == 0 {
            0.0
        } else {
            tp[c] as f64 / pred_count[c] as f64
        };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        total += gold_count[c] as f64 / n * f1;
    }
    Ok(total)
}

pub fn metrics<S: AsRef<str>, L: AsRef<str>>(preds: &[S], golds: &[S], label_set: &[L]) -> Result<Metrics> {
    Ok(Metrics {
        accuracy: accuracy(preds, golds)?,
        weighted_f1: weighted_f1(preds, golds, label_set)?,
    })
}
