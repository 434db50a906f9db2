use alloc::format;

use crate::dctma::linear;
use crate::diff::{Graph, Init, NodeId, ParamBuilder, ParamId, Tensor};
use crate::{Error, Result};

/// Two-layer MLP `R^B → R^{d_e}` under `prior/`.
#[derive(Debug, Clone)]
pub struct PriorEncoderParams {
    pub hidden: (ParamId, ParamId),
    pub out: (ParamId, ParamId),
    pub bands: usize,
}

/// Affine head `R^{d_ada} → R^{d_e}` under `align/`.
#[derive(Debug, Clone)]
pub struct AlignEncoderParams {
    pub proj: (ParamId, ParamId),
    pub adapter_width: usize,
}

impl PriorEncoderParams {
    pub fn build(b: &mut ParamBuilder<'_>, bands: usize, hidden: usize, width: usize) -> Result<Self> {
        Ok(Self {
            hidden: (
                b.param("prior/hidden_w", &[hidden, bands], Init::FanIn(1.0))?,
                b.param("prior/hidden_b", &[1, hidden], Init::Zeros)?,
            ),
            out: (
                b.param("prior/out_w", &[width, hidden], Init::FanIn(1.0))?,
                b.param("prior/out_b", &[1, width], Init::Zeros)?,
            ),
            bands,
        })
    }
}

impl AlignEncoderParams {
    pub fn build(b: &mut ParamBuilder<'_>, adapter_width: usize, width: usize) -> Result<Self> {
        Ok(Self {
            proj: (
                b.param("align/proj_w", &[width, adapter_width], Init::FanIn(1.0))?,
                b.param("align/proj_b", &[1, width], Init::Zeros)?,
            ),
            adapter_width,
        })
    }
}

pub fn prior_encode(g: &mut Graph<'_>, p: &PriorEncoderParams, t_prior: &[f64]) -> Result<NodeId> {
    if t_prior.len() != p.bands {
        return Err(Error::BandMismatch {
            expected: p.bands,
            got: t_prior.len(),
        });
    }
    let t = g.constant(Tensor::row(t_prior.to_vec()))?;
    let h = linear(g, t, p.hidden)?;
    let h = g.relu(h)?;
    linear(g, h, p.out)
}

/// Projects adapter features `[k, d_ada]` into the embedding space.
pub fn align_encode(g: &mut Graph<'_>, p: &AlignEncoderParams, h_ada: NodeId) -> Result<NodeId> {
    if g.value(h_ada).cols() != p.adapter_width {
        return Err(Error::Shape {
            op: "align_encode",
            detail: format!("width {}, expected {}", g.value(h_ada).cols(), p.adapter_width),
        });
    }
    linear(g, h_ada, p.proj)
}

/// `(1/K)·Σ_k ‖E_a(h_k) - e_prior‖²` over the support adapter features.
///
/// Only the adapter and alignment head sit on this path, so the loss reaches
/// the adapter even when the backbone is frozen.
pub fn physical_loss(
    g: &mut Graph<'_>,
    p: &AlignEncoderParams,
    support: &[NodeId],
    e_prior: NodeId,
) -> Result<NodeId> {
    if support.is_empty() {
        return Err(Error::Empty("support"));
    }
    let h = g.concat_rows(support)?;
    let a = align_encode(g, p, h)?;
    let neg = g.scale(e_prior, -1.0)?;
    let diff = g.add_row(a, neg)?;
    let s = g.sum_squares(diff)?;
    g.scale(s, 1.0 / support.len() as f64)
}
