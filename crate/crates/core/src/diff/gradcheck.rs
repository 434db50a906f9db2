use alloc::vec::Vec;

use rand::Rng as _;

use super::graph::{Graph, NodeId};
use super::store::{ParamId, ParamStore, ParamValues};
use crate::rng;
use crate::{Error, Result};

/// Outcome of a finite-difference audit.
#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    /// Max over probed coordinates of `|analytic - fd| / max(1, |fd|)`.
    pub max_rel_error: f64,
    pub worst: Option<(ParamId, usize)>,
    pub coords: usize,
}

/// Draws `count` coordinates uniformly from the trainable entries whose name
/// starts with `prefix` (`""` for all).
pub fn sample_coords(store: &ParamStore, prefix: &str, count: usize, seed: u64) -> Vec<(ParamId, usize)> {
    let ids: Vec<ParamId> = store
        .ids_with_prefix(prefix)
        .filter(|&id| !store.entry(id).frozen)
        .collect();
    let total: usize = ids.iter().map(|&id| store.entry(id).value.len()).sum();
    if total == 0 {
        return Vec::new();
    }
    let mut r = rng::seeded(seed);
    (0..count)
        .map(|_| {
            let mut flat = r.random_range(0..total);
            for &id in &ids {
                let n = store.entry(id).value.len();
                if flat < n {
                    return (id, flat);
                }
                flat -= n;
            }
            unreachable!()
        })
        .collect()
}

/// Compares reverse-mode gradients of the objective built by `build` against
/// central differences at the given coordinates.
///
/// The probe step for coordinate `θ` is `h·(1 + |θ|)`. The objective is
/// evaluated twice at the unperturbed point; any bit-level difference is
/// reported as [`Error::NonDeterministic`].
pub fn finite_difference_check<F>(
    store: &ParamStore,
    h: f64,
    coords: &[(ParamId, usize)],
    build: F,
) -> Result<FdReport>
where
    F: Fn(&mut Graph<'_>) -> Result<NodeId>,
{
    let base = store.values();
    let eval = |vals: &ParamValues| -> Result<f64> {
        let mut g = Graph::new(vals);
        let loss = build(&mut g)?;
        Ok(g.value(loss).item())
    };
    let f0 = eval(&base)?;
    if eval(&base)?.to_bits() != f0.to_bits() {
        return Err(Error::NonDeterministic);
    }
    let grads = {
        let mut g = Graph::new(&base);
        let loss = build(&mut g)?;
        g.backward(loss)?
    };
    let mut report = FdReport {
        max_rel_error: 0.0,
        worst: None,
        coords: coords.len(),
    };
    let mut probe = base.clone();
    for &(id, i) in coords {
        let theta = base.get(id).data()[i];
        let step = h * (1.0 + theta.abs());
        let (tp, tm) = (theta + step, theta - step);
        probe.set(id, i, tp);
        let fp = eval(&probe)?;
        probe.set(id, i, tm);
        let fm = eval(&probe)?;
        probe.set(id, i, theta);
        let fd = (fp - fm) / (tp - tm);
        let analytic = grads.get(id).map_or(0.0, |g| g[i]);
        let err = (analytic - fd).abs() / fd.abs().max(1.0);
        if report.worst.is_none() || err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst = Some((id, i));
        }
    }
    Ok(report)
}
