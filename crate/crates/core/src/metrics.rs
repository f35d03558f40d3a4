//! Evaluation metrics for ordering, classification and score prediction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::BinaryLabel;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedPair {
    pub score_original: f64,
    pub score_permuted: f64,
}

/// Fraction of pairs where the original scores strictly higher.
pub fn pairwise_ranking_accuracy(pairs: &[RankedPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty(
            "pairwise ranking accuracy over no pairs".into(),
        ));
    }
    if pairs
        .iter()
        .any(|p| !p.score_original.is_finite() || !p.score_permuted.is_finite())
    {
        return Err(Error::NonFinite("ranked pair score".into()));
    }
    let correct = pairs
        .iter()
        .filter(|p| p.score_original > p.score_permuted)
        .count();
    Ok(correct as f64 / pairs.len() as f64)
}

fn same_len(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::Contract(format!(
            "{what}: {a} predictions for {b} gold labels"
        )));
    }
    Ok(())
}

pub fn accuracy<T: PartialEq>(pred: &[T], gold: &[T]) -> Result<f64> {
    same_len(pred.len(), gold.len(), "accuracy")?;
    if gold.is_empty() {
        return Err(Error::Empty("accuracy over no examples".into()));
    }
    let hits = pred.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / gold.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FBeta {
    pub value: f64,
    pub precision: f64,
    pub recall: f64,
    /// Set when precision or recall is undefined or both are zero; `value`
    /// is then 0.
    pub degenerate: bool,
}

/// F-beta of the `non_coherent` class.
pub fn f_beta_low(pred: &[BinaryLabel], gold: &[BinaryLabel], beta: f64) -> Result<FBeta> {
    same_len(pred.len(), gold.len(), "f_beta_low")?;
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::Config(format!("beta {beta} must be positive")));
    }
    let pos = BinaryLabel::NonCoherent;
    let tp = pred
        .iter()
        .zip(gold)
        .filter(|(p, g)| **p == pos && **g == pos)
        .count();
    let pred_pos = pred.iter().filter(|p| **p == pos).count();
    let gold_pos = gold.iter().filter(|g| **g == pos).count();
    let ratio = |a: usize, b: usize| {
        if b == 0 {
            None
        } else {
            Some(a as f64 / b as f64)
        }
    };
    let (p, r) = (ratio(tp, pred_pos), ratio(tp, gold_pos));
    let b2 = beta * beta;
    match (p, r) {
        (Some(p), Some(r)) if b2 * p + r > 0.0 => Ok(FBeta {
            value: (1.0 + b2) * p * r / (b2 * p + r),
            precision: p,
            recall: r,
            degenerate: false,
        }),
        _ => Ok(FBeta {
            value: 0.0,
            precision: p.unwrap_or(0.0),
            recall: r.unwrap_or(0.0),
            degenerate: true,
        }),
    }
}

/// 1-based ranks with ties sharing the mean of the ranks they span.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa * sbb).sqrt())
}

/// Spearman's rho: Pearson correlation of average ranks. A constant
/// prediction carries no ranking information and scores 0.
pub fn spearman(pred: &[f64], gold: &[f64]) -> Result<f64> {
    same_len(pred.len(), gold.len(), "spearman")?;
    if gold.len() < 2 {
        return Err(Error::Contract("spearman needs at least two points".into()));
    }
    if pred.iter().chain(gold).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("spearman input".into()));
    }
    if gold.iter().all(|&g| g == gold[0]) {
        return Err(Error::Undefined(
            "spearman with constant gold scores".into(),
        ));
    }
    Ok(pearson(&average_ranks(pred), &average_ranks(gold)).unwrap_or(0.0))
}

/// One line of a metrics report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub task: String,
    pub metric: String,
    pub value: f64,
    pub n: usize,
}
