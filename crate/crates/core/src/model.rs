//! The assembled detector: adapter, backbone, prior and alignment encoders
//! and the two heads, all in one [`ParamStore`].

use alloc::format;
use alloc::vec::Vec;

use crate::dctma::AdapterParams;
use crate::diff::{Graph, NodeId, ParamBuilder, ParamStore, ParamValues};
use crate::hsi::Patch;
use crate::metatrain::Heads;
use crate::pgte::{backbone_encode, prior_encode, AlignEncoderParams, BackboneParams, PriorEncoderParams};
use crate::{Error, Result};

/// Widths and structural switches of the detector.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub bands: usize,
    pub patch: usize,
    pub rho_low: f64,
    pub rho_mid: f64,
    pub freq_masking: bool,
    /// `d`: width of each frequency-group descriptor.
    pub group_width: usize,
    /// `d_ada`: adapter output width.
    pub adapter_width: usize,
    pub state_size: usize,
    pub delta_init: f64,
    /// `d_e`: embedding width shared by backbone, prior and alignment encoders.
    pub embed_width: usize,
    pub heads: usize,
    pub blocks: usize,
    pub ffn_mult: usize,
    pub prior_hidden: usize,
}

impl ModelConfig {
    pub fn new(bands: usize) -> Self {
        Self {
            bands,
            patch: 5,
            rho_low: 0.25,
            rho_mid: 0.60,
            freq_masking: true,
            group_width: 64,
            adapter_width: 64,
            state_size: 16,
            delta_init: 0.1,
            embed_width: 64,
            heads: 4,
            blocks: 2,
            ffn_mult: 2,
            prior_hidden: 128,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch % 2 == 0 {
            return Err(Error::EvenWindow(self.patch));
        }
        crate::dctma::build_partition(self.bands, self.rho_low, self.rho_mid)?;
        let widths = [
            ("group_width", self.group_width),
            ("adapter_width", self.adapter_width),
            ("state_size", self.state_size),
            ("embed_width", self.embed_width),
            ("blocks", self.blocks),
            ("ffn_mult", self.ffn_mult),
            ("prior_hidden", self.prior_hidden),
        ];
        if let Some((name, _)) = widths.iter().find(|(_, w)| *w == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.heads == 0 || self.embed_width % self.heads != 0 {
            return Err(Error::Config(format!(
                "embed_width {} not divisible by heads {}",
                self.embed_width, self.heads
            )));
        }
        if !(self.delta_init > 0.0) {
            return Err(Error::NonPositiveStep(self.delta_init));
        }
        Ok(())
    }
}

/// Tape nodes produced for one patch.
#[derive(Debug, Clone, Copy)]
pub struct PatchNodes {
    pub tokens: NodeId,
    pub h_ada: NodeId,
    pub e: NodeId,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    pub adapter: AdapterParams,
    pub backbone: BackboneParams,
    pub prior: PriorEncoderParams,
    pub align: AlignEncoderParams,
    pub heads: Heads,
}

impl Model {
    fn build(b: &mut ParamBuilder<'_>, cfg: &ModelConfig, classes: usize) -> Result<Self> {
        cfg.validate()?;
        let adapter = AdapterParams::build(b, cfg)?;
        let backbone = BackboneParams::build(
            b,
            cfg.adapter_width,
            cfg.bands,
            cfg.patch * cfg.patch,
            cfg.embed_width,
            cfg.heads,
            cfg.blocks,
            cfg.ffn_mult,
        )?;
        let prior = PriorEncoderParams::build(b, cfg.bands, cfg.prior_hidden, cfg.embed_width)?;
        let align = AlignEncoderParams::build(b, cfg.adapter_width, cfg.embed_width)?;
        let heads = Heads::build(b, classes, cfg.embed_width)?;
        Ok(Self {
            cfg: cfg.clone(),
            adapter,
            backbone,
            prior,
            align,
            heads,
        })
    }

    /// Fresh parameters with `classes` rows in the classification head.
    pub fn init(cfg: &ModelConfig, classes: usize, seed: u64) -> Result<(Self, ParamStore)> {
        let mut store = ParamStore::new();
        let model = Self::build(&mut ParamBuilder::init(&mut store, seed), cfg, classes)?;
        Ok((model, store))
    }

    /// Binds to an existing store, checking every name and shape.
    pub fn bind(cfg: &ModelConfig, store: &mut ParamStore) -> Result<Self> {
        let classes = store.entry(store.id(Heads::CLS)?).shape[0];
        let model = Self::build(&mut ParamBuilder::bind(store), cfg, classes)?;
        if store.len() != model.param_count() {
            return Err(Error::Config(format!(
                "checkpoint has {} tensors, model expects {}",
                store.len(),
                model.param_count()
            )));
        }
        Ok(model)
    }

    fn param_count(&self) -> usize {
        let mut s = ParamStore::new();
        Self::build(&mut ParamBuilder::init(&mut s, 0), &self.cfg, self.heads.classes)
            .map(|_| s.len())
            .unwrap_or(0)
    }

    pub fn forward(&self, g: &mut Graph<'_>, patch: &Patch) -> Result<PatchNodes> {
        if patch.side != self.cfg.patch {
            return Err(Error::Shape {
                op: "forward",
                detail: format!("patch side {}, model expects {}", patch.side, self.cfg.patch),
            });
        }
        let tokens = g.constant(patch.tokens())?;
        let h_ada = self.adapter.forward_tokens(g, tokens)?;
        let e = backbone_encode(g, &self.backbone, h_ada, tokens)?;
        Ok(PatchNodes { tokens, h_ada, e })
    }

    /// `P = σ(w_detᵀ e + b)` as a `[m, 1]` column for embeddings `[m, d_e]`.
    pub fn detect(&self, g: &mut Graph<'_>, e: NodeId) -> Result<NodeId> {
        let w = g.param(self.heads.det_w);
        let b = g.param(self.heads.det_b);
        let z = g.matmul_t(e, w)?;
        let z = g.add_row(z, b)?;
        g.sigmoid(z)
    }

    /// Embedding of one patch, no gradients kept.
    pub fn embed(&self, values: &ParamValues, patch: &Patch) -> Result<Vec<f64>> {
        let mut g = Graph::new(values);
        let n = self.forward(&mut g, patch)?;
        Ok(g.value(n.e).data().to_vec())
    }

    /// Embedding and detection probability of one patch.
    pub fn embed_detect(&self, values: &ParamValues, patch: &Patch) -> Result<(Vec<f64>, f64)> {
        let mut g = Graph::new(values);
        let n = self.forward(&mut g, patch)?;
        let p = self.detect(&mut g, n.e)?;
        Ok((g.value(n.e).data().to_vec(), g.value(p).item()))
    }

    pub fn prior_embedding(&self, values: &ParamValues, t_prior: &[f64]) -> Result<Vec<f64>> {
        let mut g = Graph::new(values);
        let e = prior_encode(&mut g, &self.prior, t_prior)?;
        Ok(g.value(e).data().to_vec())
    }
}
