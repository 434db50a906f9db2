use alloc::vec::Vec;

use super::{augment, select_pseudo_labels, wbce_weights, AugmentConfig, PseudoLabelSets};
use crate::diff::{adamw_update, Graph, OptimConfig, ParamGrads, ParamStore, ParamValues};
use crate::exec::Executor;
use crate::hsi::{extract_patch, HsiCube};
use crate::math;
use crate::model::Model;
use crate::pgte::{cosine, Prototype};
use crate::rng;
use crate::{Error, Result};

/// Starting point of the detection head on the target scene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HeadInit {
    /// Use the head as trained on the source scene.
    Keep,
    /// `w = κ·p/‖p‖`, bias set so the median pixel sits at `P = 0.5`.
    Prototype { scale: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TtaConfig {
    pub iterations: usize,
    /// Weight of the consistency term.
    pub eta: f64,
    pub q_pos: f64,
    pub q_neg: f64,
    /// Pseudo-label sets are recomputed every `refresh` iterations.
    pub refresh: usize,
    pub augment: AugmentConfig,
    pub head_init: HeadInit,
    pub optim: OptimConfig,
    pub seed: u64,
}

impl Default for TtaConfig {
    fn default() -> Self {
        Self {
            iterations: 50,
            eta: 0.4,
            q_pos: 0.95,
            q_neg: 0.05,
            refresh: 10,
            augment: AugmentConfig::default(),
            head_init: HeadInit::Keep,
            optim: OptimConfig::default(),
            seed: 0,
        }
    }
}

impl TtaConfig {
    pub fn validate(&self) -> Result<()> {
        self.optim.validate()?;
        if !(0.0 <= self.q_neg && self.q_neg < self.q_pos && self.q_pos <= 1.0) {
            return Err(Error::Config("need 0 <= q_neg < q_pos <= 1".into()));
        }
        if !(self.eta >= 0.0) {
            return Err(Error::Config("eta must be non-negative".into()));
        }
        if self.refresh == 0 {
            return Err(Error::Config("refresh interval must be positive".into()));
        }
        if !(self.augment.noise_std >= 0.0) {
            return Err(Error::Config("noise std must be non-negative".into()));
        }
        if let HeadInit::Prototype { scale } = self.head_init {
            if !(scale > 0.0) {
                return Err(Error::Config("head scale must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TtaRecord {
    pub iteration: usize,
    pub loss_wbce: f64,
    pub loss_self: f64,
    pub objective: f64,
    pub positives: usize,
    pub negatives: usize,
}

#[derive(Debug, Clone)]
pub struct TtaOutcome {
    /// Detection probabilities min-max scaled to `[0, 1]`, row-major `H·W`.
    pub map: Vec<f64>,
    /// Raw head output before scaling.
    pub raw: Vec<f64>,
    pub initial_sets: PseudoLabelSets,
    pub trace: Vec<TtaRecord>,
}

fn pixel_embeddings<E: Executor>(
    model: &Model,
    values: &ParamValues,
    cube: &HsiCube,
    exec: &E,
) -> Result<Vec<(Vec<f64>, f64)>> {
    let (w, s) = (cube.width(), model.cfg.patch);
    exec.map(cube.pixels(), |idx| {
        let patch = extract_patch(cube, idx / w, idx % w, s)?;
        model.embed_detect(values, &patch)
    })
    .into_iter()
    .collect()
}

/// Cosine similarity of every pixel embedding to the prototype, row-major.
pub fn similarity_map<E: Executor>(
    model: &Model,
    values: &ParamValues,
    cube: &HsiCube,
    proto: &Prototype,
    exec: &E,
) -> Result<Vec<f64>> {
    if proto.norm() == 0.0 {
        return Err(Error::ZeroPrototype);
    }
    Ok(pixel_embeddings(model, values, cube, exec)?
        .iter()
        .map(|(e, _)| cosine(e, &proto.p))
        .collect())
}

/// Raw detection-head probability of every pixel, row-major.
pub fn detection_map<E: Executor>(model: &Model, values: &ParamValues, cube: &HsiCube, exec: &E) -> Result<Vec<f64>> {
    Ok(pixel_embeddings(model, values, cube, exec)?
        .into_iter()
        .map(|(_, p)| p)
        .collect())
}

/// Affine rescale to `[0, 1]`; a constant map becomes all zeros.
pub fn min_max_normalize(v: &[f64]) -> Vec<f64> {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return alloc::vec![0.0; v.len()];
    }
    v.iter().map(|x| (x - lo) / (hi - lo)).collect()
}

fn init_head<E: Executor>(
    model: &Model,
    store: &mut ParamStore,
    cube: &HsiCube,
    proto: &Prototype,
    scale: f64,
    exec: &E,
) -> Result<()> {
    let n = proto.norm();
    let w: Vec<f64> = proto.p.iter().map(|v| scale * v / n).collect();
    let values = store.values();
    let mut logits: Vec<f64> = pixel_embeddings(model, &values, cube, exec)?
        .iter()
        .map(|(e, _)| e.iter().zip(&w).map(|(a, b)| a * b).sum())
        .collect();
    logits.sort_by(f64::total_cmp);
    let median = math::quantile_sorted(&logits, 0.5);
    store.set_value(model.heads.det_w, w.iter().map(|&v| v as f32).collect())?;
    store.set_value(model.heads.det_b, alloc::vec![-median as f32])?;
    Ok(())
}

struct Step {
    grads: ParamGrads,
    wbce: f64,
    consistency: f64,
}

#[allow(clippy::too_many_arguments)]
fn sample_step(
    model: &Model,
    values: &ParamValues,
    cube: &HsiCube,
    cfg: &TtaConfig,
    iteration: usize,
    pixel: usize,
    label: f64,
    weight: f64,
    count: usize,
) -> Result<Step> {
    let w = cube.width();
    let patch = extract_patch(cube, pixel / w, pixel % w, model.cfg.patch)?;
    let view = augment(&patch, &cfg.augment, rng::derive(cfg.seed, &[iteration as u64, pixel as u64]))?;
    let mut g = Graph::new(values);
    let a = model.forward(&mut g, &patch)?;
    let b = model.forward(&mut g, &view)?;
    let pa = model.detect(&mut g, a.e)?;
    let pb = model.detect(&mut g, b.e)?;
    let inv = 1.0 / count as f64;
    let bce = g.bce(pa, &[label], &[weight])?;
    let d = g.sub(pa, pb)?;
    let sq = g.sum_squares(d)?;
    let t1 = g.scale(bce, inv)?;
    let t2 = g.scale(sq, cfg.eta * inv)?;
    let j = g.add(t1, t2)?;
    Ok(Step {
        grads: g.backward(j)?,
        wbce: g.value(t1).item(),
        consistency: g.value(sq).item() * inv,
    })
}

pub const FROZEN_DURING_TTA: [&str; 4] = ["backbone/", "prior/", "align/", "cls/"];

/// Adapts `dctma/` and `det/` on the unlabelled scene with the prototype held
/// fixed, minimising `L_wbce + η·L_self` over the current pseudo-labelled
/// pixels, and returns the final detection map. Optimizer state starts from
/// zero, as it does for a store read from a checkpoint.
pub fn tta_adapt<E: Executor>(
    model: &Model,
    store: &mut ParamStore,
    cube: &HsiCube,
    proto: &Prototype,
    cfg: &TtaConfig,
    exec: &E,
) -> Result<TtaOutcome> {
    cfg.validate()?;
    store.reset_optimizer();
    for p in FROZEN_DURING_TTA {
        store.set_frozen_prefix(p, true);
    }
    store.set_frozen_prefix("dctma/", false);
    store.set_frozen_prefix("det/", false);
    if let HeadInit::Prototype { scale } = cfg.head_init {
        init_head(model, store, cube, proto, scale, exec)?;
    }

    let values = store.values();
    let initial_sets = select_pseudo_labels(&similarity_map(model, &values, cube, proto, exec)?, cfg.q_pos, cfg.q_neg)?;
    let mut sets = initial_sets.clone();
    let mut trace = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let values = store.values();
        if it > 0 && it % cfg.refresh == 0 {
            // keep the previous sets if the refreshed map is degenerate
            if let Ok(s) = select_pseudo_labels(&similarity_map(model, &values, cube, proto, exec)?, cfg.q_pos, cfg.q_neg) {
                sets = s;
            }
        }
        let mut pixels: Vec<(usize, f64)> = sets.positives.iter().map(|&i| (i, 1.0)).collect();
        pixels.extend(sets.negatives.iter().map(|&i| (i, 0.0)));
        let labels: Vec<f64> = pixels.iter().map(|p| p.1).collect();
        let weights = wbce_weights(&labels)?;
        let n = pixels.len();
        let steps = exec.map(n, |k| sample_step(model, &values, cube, cfg, it, pixels[k].0, pixels[k].1, weights[k], n));
        let mut sum = ParamGrads::zeros_like(&values);
        let (mut wbce, mut cons) = (0.0, 0.0);
        for s in steps {
            let s = s?;
            sum.add(&s.grads);
            wbce += s.wbce;
            cons += s.consistency;
        }
        store.fill_gradients(&sum)?;
        adamw_update(store, &cfg.optim)?;
        trace.push(TtaRecord {
            iteration: it,
            loss_wbce: wbce,
            loss_self: cons,
            objective: wbce + cfg.eta * cons,
            positives: sets.positives.len(),
            negatives: sets.negatives.len(),
        });
    }
    let raw = detection_map(model, &store.values(), cube, exec)?;
    Ok(TtaOutcome {
        map: min_max_normalize(&raw),
        raw,
        initial_sets,
        trace,
    })
}
