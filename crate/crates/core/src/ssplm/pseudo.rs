use alloc::vec::Vec;

use crate::math;
use crate::{Error, Result};

/// Confident positives and negatives of a score map; the band between the
/// two thresholds is discarded.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelSets {
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
    pub tau_pos: f64,
    pub tau_neg: f64,
    pub q_pos: f64,
    pub q_neg: f64,
}

impl PseudoLabelSets {
    pub fn len(&self) -> usize {
        self.positives.len() + self.negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Thresholds are linear-interpolation quantiles of the flattened scores;
/// positives satisfy `s > τ_pos`, negatives `s < τ_neg`.
pub fn select_pseudo_labels(scores: &[f64], q_pos: f64, q_neg: f64) -> Result<PseudoLabelSets> {
    if scores.is_empty() {
        return Err(Error::Empty("score map"));
    }
    if !(0.0 <= q_neg && q_neg < q_pos && q_pos <= 1.0) {
        return Err(Error::Config(alloc::format!(
            "need 0 <= q_neg < q_pos <= 1, got {q_neg}, {q_pos}"
        )));
    }
    let sorted = math::sorted(scores);
    let tau_pos = math::quantile_sorted(&sorted, q_pos);
    let tau_neg = math::quantile_sorted(&sorted, q_neg);
    let positives: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] > tau_pos).collect();
    let negatives: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] < tau_neg).collect();
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::DegeneratePseudoSets {
            positives: positives.len(),
            negatives: negatives.len(),
        });
    }
    Ok(PseudoLabelSets {
        positives,
        negatives,
        tau_pos,
        tau_neg,
        q_pos,
        q_neg,
    })
}
