use alloc::vec::Vec;

use crate::hsi::LabelMap;
use crate::{Error, Result};

/// `P_d` and `P_f` sampled on the uniform threshold grid `τ_k = k/G`.
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurves {
    pub tau: Vec<f64>,
    pub pd: Vec<f64>,
    pub pf: Vec<f64>,
    pub targets: usize,
    pub background: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocReport {
    pub curves: RocCurves,
    pub auc_pf_pd: f64,
    pub auc_tau_pd: f64,
    pub auc_tau_pf: f64,
    pub auc_oa: f64,
    /// `+∞` when `auc_tau_pf = 0`; see `snpr_infinite`.
    pub auc_snpr: f64,
    pub snpr_infinite: bool,
}

/// Detection predicate is `score ≥ τ`. Non-zero labels are targets.
pub fn roc_curves(scores: &[f64], truth: &LabelMap, grid: usize) -> Result<RocCurves> {
    if scores.len() != truth.labels().len() {
        return Err(Error::LengthMismatch(scores.len(), truth.labels().len()));
    }
    if grid == 0 {
        return Err(Error::Config("grid size must be positive".into()));
    }
    if scores.iter().any(|s| !(0.0..=1.0).contains(s)) {
        return Err(Error::Unnormalized);
    }
    let mut tgt = Vec::new();
    let mut bg = Vec::new();
    for (&s, &l) in scores.iter().zip(truth.labels()) {
        if l != 0 { tgt.push(s) } else { bg.push(s) }
    }
    if tgt.is_empty() || bg.is_empty() {
        return Err(Error::MissingClass);
    }
    tgt.sort_by(f64::total_cmp);
    bg.sort_by(f64::total_cmp);
    let frac_at_least = |v: &[f64], t: f64| (v.len() - v.partition_point(|&s| s < t)) as f64 / v.len() as f64;
    let tau: Vec<f64> = (0..=grid).map(|k| k as f64 / grid as f64).collect();
    Ok(RocCurves {
        pd: tau.iter().map(|&t| frac_at_least(&tgt, t)).collect(),
        pf: tau.iter().map(|&t| frac_at_least(&bg, t)).collect(),
        tau,
        targets: tgt.len(),
        background: bg.len(),
    })
}

fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 1..x.len() {
        s += 0.5 * (x[k] - x[k - 1]).abs() * (y[k] + y[k - 1]);
    }
    s
}

/// `(AUC_OA, AUC_SNPR, snpr_infinite)` from the three base areas.
pub fn composite_metrics(pf_pd: f64, tau_pd: f64, tau_pf: f64) -> (f64, f64, bool) {
    let oa = pf_pd + tau_pd - tau_pf;
    if tau_pf == 0.0 {
        (oa, f64::INFINITY, true)
    } else {
        (oa, tau_pd / tau_pf, false)
    }
}

/// Trapezoidal areas. The `(P_f, P_d)` points are sorted by `P_f` then `P_d`
/// and anchored at the origin; vertical steps add no area.
pub fn auc_suite(curves: RocCurves) -> Result<RocReport> {
    let n = curves.tau.len();
    if curves.pd.len() != n || curves.pf.len() != n {
        return Err(Error::LengthMismatch(curves.pd.len().max(curves.pf.len()), n));
    }
    if n < 2 {
        return Err(Error::Empty("threshold grid"));
    }
    let mut pts: Vec<(f64, f64)> = curves.pf.iter().copied().zip(curves.pd.iter().copied()).collect();
    pts.push((0.0, 0.0));
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let auc_pf_pd = trapezoid(&xs, &ys);
    let auc_tau_pd = trapezoid(&curves.tau, &curves.pd);
    let auc_tau_pf = trapezoid(&curves.tau, &curves.pf);
    let (auc_oa, auc_snpr, snpr_infinite) = composite_metrics(auc_pf_pd, auc_tau_pd, auc_tau_pf);
    Ok(RocReport {
        curves,
        auc_pf_pd,
        auc_tau_pd,
        auc_tau_pf,
        auc_oa,
        auc_snpr,
        snpr_infinite,
    })
}

pub fn roc_report(scores: &[f64], truth: &LabelMap, grid: usize) -> Result<RocReport> {
    auc_suite(roc_curves(scores, truth, grid)?)
}
