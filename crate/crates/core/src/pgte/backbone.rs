use alloc::format;
use alloc::vec::Vec;

use crate::dctma::linear;
use crate::diff::{Graph, Init, NodeId, ParamBuilder, ParamId};
use crate::{Error, Result};

#[derive(Debug, Clone)]
struct Block {
    ln1: (ParamId, ParamId),
    q: (ParamId, ParamId),
    k: (ParamId, ParamId),
    v: (ParamId, ParamId),
    o: (ParamId, ParamId),
    ln2: (ParamId, ParamId),
    ff1: (ParamId, ParamId),
    ff2: (ParamId, ParamId),
}

/// Pre-norm transformer over `1 + s²` tokens: the adapter feature followed
/// by one projection of each raw pixel spectrum, plus learned positions.
#[derive(Debug, Clone)]
pub struct BackboneParams {
    tok_ada: (ParamId, ParamId),
    tok_raw: (ParamId, ParamId),
    pos: ParamId,
    blocks: Vec<Block>,
    ln_f: (ParamId, ParamId),
    pub width: usize,
    pub heads: usize,
    pub adapter_width: usize,
    pub bands: usize,
    pub tokens: usize,
}

fn dense(b: &mut ParamBuilder<'_>, name: &str, out: usize, inp: usize) -> Result<(ParamId, ParamId)> {
    Ok((
        b.param(&format!("{name}_w"), &[out, inp], Init::FanIn(1.0))?,
        b.param(&format!("{name}_b"), &[1, out], Init::Zeros)?,
    ))
}

fn norm(b: &mut ParamBuilder<'_>, name: &str, width: usize) -> Result<(ParamId, ParamId)> {
    Ok((
        b.param(&format!("{name}_gain"), &[1, width], Init::Constant(1.0))?,
        b.param(&format!("{name}_bias"), &[1, width], Init::Zeros)?,
    ))
}

impl BackboneParams {
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        b: &mut ParamBuilder<'_>,
        adapter_width: usize,
        bands: usize,
        pixels: usize,
        width: usize,
        heads: usize,
        blocks: usize,
        ffn_mult: usize,
    ) -> Result<Self> {
        if heads == 0 || width % heads != 0 {
            return Err(Error::Config(format!("embedding width {width} not divisible by {heads} heads")));
        }
        let tok_ada = dense(b, "backbone/tok_ada", width, adapter_width)?;
        let tok_raw = dense(b, "backbone/tok_raw", width, bands)?;
        let pos = b.param("backbone/pos", &[pixels + 1, width], Init::FanIn(0.1))?;
        let mut list = Vec::with_capacity(blocks);
        for i in 0..blocks {
            let p = format!("backbone/block{i}");
            list.push(Block {
                ln1: norm(b, &format!("{p}/ln1"), width)?,
                q: dense(b, &format!("{p}/q"), width, width)?,
                k: dense(b, &format!("{p}/k"), width, width)?,
                v: dense(b, &format!("{p}/v"), width, width)?,
                o: dense(b, &format!("{p}/o"), width, width)?,
                ln2: norm(b, &format!("{p}/ln2"), width)?,
                ff1: dense(b, &format!("{p}/ff1"), ffn_mult * width, width)?,
                ff2: dense(b, &format!("{p}/ff2"), width, ffn_mult * width)?,
            });
        }
        Ok(Self {
            tok_ada,
            tok_raw,
            pos,
            blocks: list,
            ln_f: norm(b, "backbone/ln_f", width)?,
            width,
            heads,
            adapter_width,
            bands,
            tokens: pixels + 1,
        })
    }
}

fn layer_norm(g: &mut Graph<'_>, x: NodeId, (gain, bias): (ParamId, ParamId)) -> Result<NodeId> {
    let gn = g.param(gain);
    let bn = g.param(bias);
    g.layer_norm(x, gn, bn)
}

fn attention(g: &mut Graph<'_>, x: NodeId, blk: &Block, heads: usize, width: usize) -> Result<NodeId> {
    let q = linear(g, x, blk.q)?;
    let k = linear(g, x, blk.k)?;
    let v = linear(g, x, blk.v)?;
    let dh = width / heads;
    let inv = 1.0 / crate::math::sqrt(dh as f64);
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = g.slice_cols(q, h * dh, dh)?;
        let kh = g.slice_cols(k, h * dh, dh)?;
        let vh = g.slice_cols(v, h * dh, dh)?;
        let s = g.matmul_t(qh, kh)?;
        let s = g.scale(s, inv)?;
        let a = g.softmax_rows(s)?;
        outs.push(g.matmul(a, vh)?);
    }
    let cat = if heads == 1 { outs[0] } else { g.concat_cols(&outs)? };
    linear(g, cat, blk.o)
}

/// Embeds one patch: `h_ada: [1, d_ada]` and the raw `tokens: [s², B]` to `e: [1, d_e]`.
pub fn backbone_encode(g: &mut Graph<'_>, p: &BackboneParams, h_ada: NodeId, tokens: NodeId) -> Result<NodeId> {
    let hv = g.value(h_ada);
    if hv.rows() != 1 || hv.cols() != p.adapter_width {
        return Err(Error::Shape {
            op: "backbone_encode",
            detail: format!("adapter feature {:?}, expected [1, {}]", hv.shape(), p.adapter_width),
        });
    }
    let tv = g.value(tokens);
    if tv.cols() != p.bands || tv.rows() + 1 != p.tokens {
        return Err(Error::Shape {
            op: "backbone_encode",
            detail: format!("tokens {:?}, expected [{}, {}]", tv.shape(), p.tokens - 1, p.bands),
        });
    }
    let first = linear(g, h_ada, p.tok_ada)?;
    let rest = linear(g, tokens, p.tok_raw)?;
    let x = g.concat_rows(&[first, rest])?;
    let pos = g.param(p.pos);
    let mut x = g.add(x, pos)?;
    for blk in &p.blocks {
        let n = layer_norm(g, x, blk.ln1)?;
        let a = attention(g, n, blk, p.heads, p.width)?;
        x = g.add(x, a)?;
        let n = layer_norm(g, x, blk.ln2)?;
        let f = linear(g, n, blk.ff1)?;
        let f = g.gelu(f)?;
        let f = linear(g, f, blk.ff2)?;
        x = g.add(x, f)?;
    }
    let x = layer_norm(g, x, p.ln_f)?;
    g.mean_rows(x)
}
