use crate::diff::{Graph, Init, NodeId, ParamBuilder, ParamId};
use crate::Result;

/// Classification rows `W_cls: [classes, d_e]` under `cls/` and the binary
/// detector `w_det: [1, d_e]`, `b_det: [1, 1]` under `det/`.
#[derive(Debug, Clone)]
pub struct Heads {
    pub cls: ParamId,
    pub det_w: ParamId,
    pub det_b: ParamId,
    pub classes: usize,
}

impl Heads {
    pub const CLS: &'static str = "cls/w";

    pub fn build(b: &mut ParamBuilder<'_>, classes: usize, width: usize) -> Result<Self> {
        Ok(Self {
            cls: b.param(Self::CLS, &[classes.max(1), width], Init::FanIn(1.0))?,
            det_w: b.param("det/w", &[1, width], Init::FanIn(1.0))?,
            det_b: b.param("det/b", &[1, 1], Init::Zeros)?,
            classes: classes.max(1),
        })
    }

    /// Stacks the classification rows of the given classes into `[n, d_e]`.
    pub fn select(&self, g: &mut Graph<'_>, rows: &[usize]) -> Result<NodeId> {
        let w = g.param(self.cls);
        let parts = rows
            .iter()
            .map(|&r| g.slice_rows(w, r, 1))
            .collect::<Result<alloc::vec::Vec<_>>>()?;
        g.concat_rows(&parts)
    }
}
