use alloc::vec::Vec;

use crate::diff::{Graph, NodeId};
use crate::{Error, Result};

/// `ω_i = |Ω| / (2·|Ω_class(i)|)` for hard labels in {0, 1}.
pub fn wbce_weights(labels: &[f64]) -> Result<Vec<f64>> {
    let pos = labels.iter().filter(|&&y| y > 0.5).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::DegeneratePseudoSets {
            positives: pos,
            negatives: neg,
        });
    }
    let n = labels.len() as f64;
    let (wp, wn) = (n / (2.0 * pos as f64), n / (2.0 * neg as f64));
    Ok(labels.iter().map(|&y| if y > 0.5 { wp } else { wn }).collect())
}

/// Class-balanced mean BCE over the pseudo-labelled pixels.
pub fn loss_wbce(g: &mut Graph<'_>, p: NodeId, labels: &[f64]) -> Result<NodeId> {
    let w = wbce_weights(labels)?;
    g.bce(p, labels, &w)
}

/// Mean squared difference between predictions on originals and views.
pub fn loss_self(g: &mut Graph<'_>, p: NodeId, p_aug: NodeId) -> Result<NodeId> {
    let (a, b) = (g.value(p).len(), g.value(p_aug).len());
    if a != b {
        return Err(Error::LengthMismatch(a, b));
    }
    let d = g.sub(p, p_aug)?;
    let s = g.sum_squares(d)?;
    g.scale(s, 1.0 / a as f64)
}
