use alloc::format;

use super::{FreqGroup, FreqPartition};
use crate::diff::{Graph, Init, NodeId, ParamBuilder, ParamId, Tensor};
use crate::Result;

/// Group projections `W_g: [d, B]` and the shared gating vector `w_att: [1, d]`.
#[derive(Debug, Clone)]
pub struct SpectralBranchParams {
    pub w: [ParamId; 3],
    pub w_att: ParamId,
    pub width: usize,
}

impl SpectralBranchParams {
    pub fn build(b: &mut ParamBuilder<'_>, bands: usize, width: usize) -> Result<Self> {
        let mut w = [ParamId(0); 3];
        for (slot, g) in w.iter_mut().zip(FreqGroup::ALL) {
            *slot = b.param(
                &format!("dctma/spectral/w_{}", g.name()),
                &[width, bands],
                Init::FanIn(1.0),
            )?;
        }
        let w_att = b.param("dctma/spectral/w_att", &[1, width], Init::FanIn(1.0))?;
        Ok(Self { w, w_att, width })
    }
}

/// Pooled group descriptors `z_g = mean_t relu(W_g·M_g·f_t)`, each `[1, d]`.
///
/// `coeffs` is the token-major coefficient matrix `[s², B]`. With `masking`
/// off every group sees the full spectrum.
pub fn group_encode(
    g: &mut Graph<'_>,
    coeffs: NodeId,
    partition: &FreqPartition,
    params: &SpectralBranchParams,
    masking: bool,
) -> Result<[NodeId; 3]> {
    let mut z = [coeffs; 3];
    for (k, grp) in FreqGroup::ALL.into_iter().enumerate() {
        let input = if masking {
            let mask = g.constant(Tensor::row(partition.mask(grp)))?;
            g.mul_row(coeffs, mask)?
        } else {
            coeffs
        };
        let w = g.param(params.w[k]);
        let proj = g.matmul_t(input, w)?;
        let act = g.relu(proj)?;
        z[k] = g.mean_rows(act)?;
    }
    Ok(z)
}

/// Softmax gating over the three descriptors. Returns `(α: [1, 3], E_spec: [1, d])`.
pub fn spectral_gate(g: &mut Graph<'_>, z: [NodeId; 3], w_att: NodeId) -> Result<(NodeId, NodeId)> {
    let stacked = g.concat_rows(&z)?;
    let scores = g.matmul_t(w_att, stacked)?;
    let alpha = g.softmax_rows(scores)?;
    let e = g.matmul(alpha, stacked)?;
    Ok((alpha, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dctma::build_partition;
    use crate::diff::ParamStore;
    use alloc::vec;
    use alloc::vec::Vec;
    use rand::Rng as _;

    fn gate(zs: [Vec<f64>; 3], w: Vec<f64>) -> (Vec<f64>, Vec<f64>) {
        let mut g = Graph::detached();
        let z = zs.map(|v| g.constant(Tensor::row(v)).unwrap());
        let w = g.constant(Tensor::row(w)).unwrap();
        let (a, e) = spectral_gate(&mut g, z, w).unwrap();
        (g.value(a).data().to_vec(), g.value(e).data().to_vec())
    }

    #[test]
    fn identical_descriptors_split_evenly() {
        let z = vec![0.3, -1.0, 2.0];
        let (a, e) = gate([z.clone(), z.clone(), z.clone()], vec![1.0, 2.0, 3.0]);
        assert!(a.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
        for (x, y) in e.iter().zip(&z) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn dominant_score() {
        let (a, _) = gate([vec![10.0], vec![0.0], vec![0.0]], vec![1.0]);
        let tail = 1.0 / (libm::exp(10.0) + 2.0);
        assert!((a[0] - 0.99991).abs() < 1e-5);
        assert!((a[1] - 4.54e-5).abs() < 1e-7);
        assert!((a[1] - tail).abs() < 1e-15 && (a[2] - tail).abs() < 1e-15);
    }

    #[test]
    fn shift_invariant() {
        let w = vec![1.0, 0.0];
        let (a0, _) = gate([vec![1.0, 5.0], vec![2.0, 5.0], vec![-1.0, 5.0]], w.clone());
        let (a1, _) = gate([vec![8.0, 5.0], vec![9.0, 5.0], vec![6.0, 5.0]], w);
        for (x, y) in a0.iter().zip(&a1) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    fn setup(bands: usize, d: usize, seed: u64) -> (ParamStore, SpectralBranchParams) {
        let mut s = ParamStore::new();
        let p = SpectralBranchParams::build(&mut ParamBuilder::init(&mut s, seed), bands, d).unwrap();
        (s, p)
    }

    #[test]
    fn zero_projection_gives_activation_at_zero() {
        let (mut s, p) = setup(6, 4, 1);
        for id in p.w {
            s.set_value(id, vec![0.0; 24]).unwrap();
        }
        let part = build_partition(6, 0.34, 0.67).unwrap();
        let vals = s.values();
        let mut g = Graph::new(&vals);
        let f = g.constant(Tensor::matrix(9, 6, (0..54).map(|v| v as f64).collect()).unwrap()).unwrap();
        let z = group_encode(&mut g, f, &part, &p, true).unwrap();
        for zk in z {
            assert!(g.value(zk).data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn masking_equals_zeroed_columns() {
        let (bands, d, t) = (10, 5, 9);
        let (s, p) = setup(bands, d, 2);
        let part = build_partition(bands, 0.25, 0.6).unwrap();
        let mut r = crate::rng::seeded(9);
        let f: Vec<f64> = (0..t * bands).map(|_| r.random_range(-1.0..1.0)).collect();
        let vals = s.values();
        let mut g = Graph::new(&vals);
        let fnode = g.constant(Tensor::matrix(t, bands, f.clone()).unwrap()).unwrap();
        let z = group_encode(&mut g, fnode, &part, &p, true).unwrap();
        for (k, grp) in FreqGroup::ALL.into_iter().enumerate() {
            let range = part.range(grp);
            let w = vals.get(p.w[k]).data();
            // explicit matrix with columns outside the group zeroed
            let wz: Vec<f64> = (0..d * bands)
                .map(|i| if range.contains(&(i % bands)) { w[i] } else { 0.0 })
                .collect();
            let mut want = vec![0.0; d];
            for tok in 0..t {
                for o in 0..d {
                    let dot: f64 = (0..bands).map(|c| wz[o * bands + c] * f[tok * bands + c]).sum();
                    want[o] += dot.max(0.0) / t as f64;
                }
            }
            for (a, b) in g.value(z[k]).data().iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_token_pool_is_identity() {
        let (s, p) = setup(4, 3, 5);
        let part = build_partition(4, 0.25, 0.5).unwrap();
        let vals = s.values();
        let mut g = Graph::new(&vals);
        let f = g.constant(Tensor::row(vec![0.5, -0.2, 0.1, 0.9])).unwrap();
        let z = group_encode(&mut g, f, &part, &p, false).unwrap();
        let w = g.param(p.w[0]);
        let proj = g.matmul_t(f, w).unwrap();
        let act = g.relu(proj).unwrap();
        assert_eq!(g.value(z[0]).data(), g.value(act).data());
    }
}
