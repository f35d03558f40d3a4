use super::BinaryLabel;
use crate::error::{Error, Result};

fn check_scores(scores: &[u8]) -> Result<()> {
    match scores.iter().find(|s| !(1..=3).contains(*s)) {
        Some(s) => Err(Error::Label(format!("expert score {s} not in 1..=3"))),
        None => Ok(()),
    }
}

/// `non_coherent` when at least two experts gave the lowest score.
pub fn derive_binary_label(scores: &[u8]) -> Result<BinaryLabel> {
    check_scores(scores)?;
    if scores.iter().filter(|&&s| s == 1).count() >= 2 {
        Ok(BinaryLabel::NonCoherent)
    } else {
        Ok(BinaryLabel::Other)
    }
}

pub fn derive_gold_score(scores: &[u8]) -> Result<f64> {
    check_scores(scores)?;
    if scores.is_empty() {
        return Err(Error::Label("no expert scores".into()));
    }
    Ok(scores.iter().map(|&s| f64::from(s)).sum::<f64>() / scores.len() as f64)
}
