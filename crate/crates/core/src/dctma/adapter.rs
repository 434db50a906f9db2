use super::{build_partition, dct_matrix, group_encode, spectral_gate, FreqPartition};
use super::{FusionParams, SpectralBranchParams, SsmParams};
use crate::diff::{Graph, NodeId, ParamBuilder, Tensor};
use crate::hsi::Patch;
use crate::model::ModelConfig;
use crate::{Error, Result};

/// All adapter tensors, registered under `dctma/`.
#[derive(Debug, Clone)]
pub struct AdapterParams {
    pub bands: usize,
    pub partition: FreqPartition,
    pub masking: bool,
    pub spectral: SpectralBranchParams,
    pub ssm: SsmParams,
    pub fusion: FusionParams,
    dct: Tensor,
}

impl AdapterParams {
    pub fn build(b: &mut ParamBuilder<'_>, cfg: &ModelConfig) -> Result<Self> {
        let partition = build_partition(cfg.bands, cfg.rho_low, cfg.rho_mid)?;
        let spectral = SpectralBranchParams::build(b, cfg.bands, cfg.group_width)?;
        let ssm = SsmParams::build(b, cfg.bands, cfg.state_size, cfg.delta_init)?;
        let fusion = FusionParams::build(b, cfg.group_width, cfg.bands, cfg.adapter_width)?;
        Ok(Self {
            bands: cfg.bands,
            partition,
            masking: cfg.freq_masking,
            spectral,
            ssm,
            fusion,
            dct: dct_matrix(cfg.bands),
        })
    }

    /// Adapter feature `[1, d_ada]` of a token matrix `[s², B]` already on the tape.
    pub fn forward_tokens(&self, g: &mut Graph<'_>, tokens: NodeId) -> Result<NodeId> {
        let (_, b) = (g.value(tokens).rows(), g.value(tokens).cols());
        if b != self.bands {
            return Err(Error::BandMismatch {
                expected: self.bands,
                got: b,
            });
        }
        let dct = g.constant(self.dct.clone())?;
        let coeffs = g.matmul_t(tokens, dct)?;
        let z = group_encode(g, coeffs, &self.partition, &self.spectral, self.masking)?;
        let w_att = g.param(self.spectral.w_att);
        let (_, e_spec) = spectral_gate(g, z, w_att)?;
        let e_spa = super::selective_scan(g, tokens, &self.ssm)?;
        super::cross_gate_fuse(g, &self.fusion, e_spec, e_spa)
    }
}

pub fn dctma_forward(g: &mut Graph<'_>, adapter: &AdapterParams, patch: &Patch) -> Result<NodeId> {
    if patch.bands != adapter.bands {
        return Err(Error::BandMismatch {
            expected: adapter.bands,
            got: patch.bands,
        });
    }
    let tokens = g.constant(patch.tokens())?;
    adapter.forward_tokens(g, tokens)
}
