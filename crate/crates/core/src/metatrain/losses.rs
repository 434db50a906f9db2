use crate::diff::{Graph, NodeId};
use crate::{Error, Result};

/// Mean cross-entropy of `logits: [m, N]` against 0-based way labels.
pub fn loss_cl(g: &mut Graph<'_>, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
    if labels.is_empty() {
        return Err(Error::Empty("loss_cl"));
    }
    g.cross_entropy(logits, labels)
}

/// Mean binary cross-entropy of probabilities `p` against hard pseudo-labels.
pub fn loss_de(g: &mut Graph<'_>, p: NodeId, labels: &[f64]) -> Result<NodeId> {
    g.bce(p, labels, &alloc::vec![1.0; labels.len()])
}

/// `cl + β·de + γ·phy`; a missing detection term counts as zero.
pub fn total_loss(
    g: &mut Graph<'_>,
    cl: NodeId,
    de: Option<NodeId>,
    phy: NodeId,
    beta: f64,
    gamma: f64,
) -> Result<NodeId> {
    let phy = g.scale(phy, gamma)?;
    let mut t = g.add(cl, phy)?;
    if let Some(de) = de {
        let de = g.scale(de, beta)?;
        t = g.add(t, de)?;
    }
    Ok(t)
}
