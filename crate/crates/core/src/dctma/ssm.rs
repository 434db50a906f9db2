use alloc::vec::Vec;

use crate::diff::{Graph, Init, NodeId, ParamBuilder, ParamId};
use crate::diff::zoh_factors;
use crate::math;
use crate::{Error, Result};

/// Selective state-space parameters for `D` channels and `N` states.
///
/// `A = -exp(a_log)` keeps the diagonal strictly negative. Per token,
/// `Δ = softplus(W_Δ·x + b_Δ)`, `B = W_B·x` and `C = W_C·x`.
#[derive(Debug, Clone)]
pub struct SsmParams {
    pub a_log: ParamId,
    pub w_delta: ParamId,
    pub b_delta: ParamId,
    pub w_b: ParamId,
    pub w_c: ParamId,
    pub channels: usize,
    pub state: usize,
}

impl SsmParams {
    pub fn build(
        b: &mut ParamBuilder<'_>,
        channels: usize,
        state: usize,
        delta_init: f64,
    ) -> Result<Self> {
        if delta_init <= 0.0 {
            return Err(Error::NonPositiveStep(delta_init));
        }
        let ramp = (1..=state).map(|k| math::ln(k as f64) as f32).collect();
        Ok(Self {
            a_log: b.param("dctma/ssm/a_log", &[1, state], Init::Values(ramp))?,
            w_delta: b.param("dctma/ssm/w_delta", &[channels, channels], Init::FanIn(0.1))?,
            b_delta: b.param(
                "dctma/ssm/b_delta",
                &[1, channels],
                Init::Constant(math::softplus_inv(delta_init) as f32),
            )?,
            w_b: b.param("dctma/ssm/w_b", &[state, channels], Init::FanIn(1.0))?,
            w_c: b.param("dctma/ssm/w_c", &[state, channels], Init::FanIn(1.0))?,
            channels,
            state,
        })
    }
}

/// Zero-order-hold discretisation of a diagonal system for one step `dt`:
/// `Ā_k = exp(dt·a_k)`, `B̄_k = ((exp(dt·a_k) - 1)/a_k)·b_k`, switching to
/// `B̄_k = dt·b_k` when `|dt·a_k| < 1e-6`.
pub fn zoh_discretize(a: &[f64], dt: f64, b: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(dt > 0.0) {
        return Err(Error::NonPositiveStep(dt));
    }
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    Ok(a.iter()
        .zip(b)
        .map(|(&ak, &bk)| {
            let z = zoh_factors(ak, dt);
            (z.abar, z.bfac * bk)
        })
        .unzip())
}

/// Runs the scan over `tokens: [T, D]` and mean-pools the outputs to `[1, D]`.
pub fn selective_scan(g: &mut Graph<'_>, tokens: NodeId, p: &SsmParams) -> Result<NodeId> {
    let y = scan_outputs(g, tokens, p)?;
    g.mean_rows(y)
}

pub(crate) fn scan_outputs(g: &mut Graph<'_>, tokens: NodeId, p: &SsmParams) -> Result<NodeId> {
    let w_delta = g.param(p.w_delta);
    let b_delta = g.param(p.b_delta);
    let pre = g.matmul_t(tokens, w_delta)?;
    let pre = g.add_row(pre, b_delta)?;
    let delta = g.softplus(pre)?;
    let w_b = g.param(p.w_b);
    let bc = g.matmul_t(tokens, w_b)?;
    let w_c = g.param(p.w_c);
    let cc = g.matmul_t(tokens, w_c)?;
    let a_log = g.param(p.a_log);
    let a = g.exp(a_log)?;
    let a = g.scale(a, -1.0)?;
    g.selective_scan(tokens, delta, bc, cc, a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::{ParamStore, Tensor};
    use alloc::vec;
    use rand::Rng as _;

    #[test]
    fn zoh_scalar() {
        let (a, b) = zoh_discretize(&[-1.0], 0.1, &[1.0]).unwrap();
        assert!((a[0] - 0.904_837).abs() < 1e-6);
        assert!((b[0] - 0.095_162_6).abs() < 1e-7);
    }

    #[test]
    fn zoh_limits() {
        let (a, b) = zoh_discretize(&[0.0], 0.3, &[2.0]).unwrap();
        assert_eq!((a[0], b[0]), (1.0, 0.6));
        let (a, b) = zoh_discretize(&[-2.0], 1e-12, &[1.0]).unwrap();
        assert!((a[0] - 1.0).abs() < 1e-11 && b[0].abs() < 1e-11);
        assert!(zoh_discretize(&[-1.0], 0.0, &[1.0]).is_err());
        assert!(zoh_discretize(&[-1.0], -0.5, &[1.0]).is_err());
    }

    #[test]
    fn stable_for_negative_a() {
        let mut r = crate::rng::seeded(2);
        for _ in 0..500 {
            let a = -r.random_range(1e-3..50.0);
            let dt = r.random_range(1e-4..5.0);
            let (ab, _) = zoh_discretize(&[a], dt, &[1.0]).unwrap();
            assert!(ab[0].abs() < 1.0);
        }
    }

    fn setup(d: usize, n: usize) -> (ParamStore, SsmParams) {
        let mut s = ParamStore::new();
        let p = SsmParams::build(&mut ParamBuilder::init(&mut s, 11), d, n, 0.1).unwrap();
        (s, p)
    }

    #[test]
    fn initial_step_and_ramp() {
        let (s, p) = setup(4, 16);
        let v = s.values();
        let a: Vec<f64> = v.get(p.a_log).data().iter().map(|x| -libm::exp(*x)).collect();
        for (k, ak) in a.iter().enumerate() {
            assert!((ak + (k + 1) as f64).abs() < 1e-5);
        }
        let bd = v.get(p.b_delta).data()[0];
        assert!((math::softplus(bd) - 0.1).abs() < 1e-6);
    }

    #[test]
    fn zero_tokens_zero_output() {
        let (s, p) = setup(4, 3);
        let v = s.values();
        let mut g = Graph::new(&v);
        let x = g.constant(Tensor::zeros(&[5, 4])).unwrap();
        let e = selective_scan(&mut g, x, &p).unwrap();
        assert!(g.value(e).data().iter().all(|&y| y == 0.0));
    }

    #[test]
    fn single_step() {
        let (s, p) = setup(3, 2);
        let v = s.values();
        let x = vec![0.4, -0.7, 1.1];
        let mut g = Graph::new(&v);
        let xn = g.constant(Tensor::row(x.clone())).unwrap();
        let e = selective_scan(&mut g, xn, &p).unwrap();
        let lin = |w: &Tensor, r: usize| -> f64 { (0..3).map(|c| w.get(r, c) * x[c]).sum() };
        let a: Vec<f64> = v.get(p.a_log).data().iter().map(|l| -libm::exp(*l)).collect();
        for ch in 0..3 {
            let dt = math::softplus(lin(v.get(p.w_delta), ch) + v.get(p.b_delta).data()[ch]);
            let bk: Vec<f64> = (0..2).map(|k| lin(v.get(p.w_b), k)).collect();
            let (_, bbar) = zoh_discretize(&a, dt, &bk).unwrap();
            let want: f64 = (0..2).map(|k| lin(v.get(p.w_c), k) * bbar[k] * x[ch]).sum();
            assert!((g.value(e).data()[ch] - want).abs() < 1e-14);
        }
    }
}
