use crate::diff::{Graph, Init, NodeId, ParamBuilder, ParamId};
use crate::Result;

/// Branch projections, sigmoid cross-gates and the fusion layer.
#[derive(Debug, Clone)]
pub struct FusionParams {
    pub proj_spec: (ParamId, ParamId),
    pub proj_spa: (ParamId, ParamId),
    pub gate_spa_to_spec: (ParamId, ParamId),
    pub gate_spec_to_spa: (ParamId, ParamId),
    pub fuse: (ParamId, ParamId),
    pub width: usize,
}

fn affine(b: &mut ParamBuilder<'_>, name: &str, out: usize, inp: usize) -> Result<(ParamId, ParamId)> {
    Ok((
        b.param(&alloc::format!("dctma/fusion/{name}_w"), &[out, inp], Init::FanIn(1.0))?,
        b.param(&alloc::format!("dctma/fusion/{name}_b"), &[1, out], Init::Zeros)?,
    ))
}

impl FusionParams {
    pub fn build(b: &mut ParamBuilder<'_>, spec_width: usize, spa_width: usize, width: usize) -> Result<Self> {
        Ok(Self {
            proj_spec: affine(b, "proj_spec", width, spec_width)?,
            proj_spa: affine(b, "proj_spa", width, spa_width)?,
            gate_spa_to_spec: affine(b, "gate_spa_to_spec", width, width)?,
            gate_spec_to_spa: affine(b, "gate_spec_to_spa", width, width)?,
            fuse: affine(b, "fuse", width, 2 * width)?,
            width,
        })
    }
}

/// Every intermediate of the cross-gated fusion.
#[derive(Debug, Clone, Copy)]
pub struct CrossGate {
    pub spec: NodeId,
    pub spa: NodeId,
    pub h_spec: NodeId,
    pub h_spa: NodeId,
    pub out: NodeId,
}

pub(crate) fn linear(g: &mut Graph<'_>, x: NodeId, (w, b): (ParamId, ParamId)) -> Result<NodeId> {
    let wn = g.param(w);
    let bn = g.param(b);
    let y = g.matmul_t(x, wn)?;
    g.add_row(y, bn)
}

pub fn cross_gate(
    g: &mut Graph<'_>,
    p: &FusionParams,
    e_spec: NodeId,
    e_spa: NodeId,
) -> Result<CrossGate> {
    let spec = linear(g, e_spec, p.proj_spec)?;
    let spa = linear(g, e_spa, p.proj_spa)?;
    let pre = linear(g, spa, p.gate_spa_to_spec)?;
    let gate = g.sigmoid(pre)?;
    let h_spec = g.mul(spec, gate)?;
    let pre = linear(g, spec, p.gate_spec_to_spa)?;
    let gate = g.sigmoid(pre)?;
    let h_spa = g.mul(spa, gate)?;
    let cat = g.concat_cols(&[h_spec, h_spa])?;
    let out = linear(g, cat, p.fuse)?;
    Ok(CrossGate {
        spec,
        spa,
        h_spec,
        h_spa,
        out,
    })
}

pub fn cross_gate_fuse(g: &mut Graph<'_>, p: &FusionParams, e_spec: NodeId, e_spa: NodeId) -> Result<NodeId> {
    Ok(cross_gate(g, p, e_spec, e_spa)?.out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::{ParamStore, Tensor};
    use alloc::vec;
    use alloc::vec::Vec;

    fn setup() -> (ParamStore, FusionParams) {
        let mut s = ParamStore::new();
        let p = FusionParams::build(&mut ParamBuilder::init(&mut s, 4), 3, 5, 4).unwrap();
        (s, p)
    }

    fn run(s: &ParamStore, p: &FusionParams, spec: Vec<f64>, spa: Vec<f64>) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let v = s.values();
        let mut g = Graph::new(&v);
        let a = g.constant(Tensor::row(spec)).unwrap();
        let b = g.constant(Tensor::row(spa)).unwrap();
        let c = cross_gate(&mut g, p, a, b).unwrap();
        let f = |n: NodeId| g.value(n).data().to_vec();
        (f(c.spec), f(c.spa), f(c.h_spec), f(c.h_spa))
    }

    #[test]
    fn zero_gates_halve() {
        let (mut s, p) = setup();
        s.set_value(p.gate_spa_to_spec.0, vec![0.0; 16]).unwrap();
        s.set_value(p.gate_spec_to_spa.0, vec![0.0; 16]).unwrap();
        let (spec, spa, hs, ha) = run(&s, &p, vec![0.3, -1.0, 2.0], vec![1.0, 0.5, -0.5, 0.2, 0.9]);
        for (h, e) in hs.iter().zip(&spec).chain(ha.iter().zip(&spa)) {
            assert_eq!(*h, 0.5 * e);
        }
    }

    #[test]
    fn zero_spatial_feature_halves_spectral() {
        let (s, p) = setup();
        let (spec, spa, hs, _) = run(&s, &p, vec![0.3, -1.0, 2.0], vec![0.0; 5]);
        assert!(spa.iter().all(|&v| v == 0.0));
        for (h, e) in hs.iter().zip(&spec) {
            assert_eq!(*h, 0.5 * e);
        }
    }

    #[test]
    fn saturated_gates_pass_through() {
        let (mut s, p) = setup();
        for gate in [p.gate_spa_to_spec, p.gate_spec_to_spa] {
            s.set_value(gate.0, vec![0.0; 16]).unwrap();
            s.set_value(gate.1, vec![20.0; 4]).unwrap();
        }
        let (spec, spa, hs, ha) = run(&s, &p, vec![0.3, -1.0, 2.0], vec![1.0, 0.5, -0.5, 0.2, 0.9]);
        for (h, e) in hs.iter().zip(&spec).chain(ha.iter().zip(&spa)) {
            assert!((h - e).abs() < 1e-8);
        }
    }
}
