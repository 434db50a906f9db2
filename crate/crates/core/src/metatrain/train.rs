use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use super::{loss_cl, loss_de, total_loss};
use crate::diff::{adamw_update, Graph, NodeId, OptimConfig, ParamGrads, ParamStore, ParamValues};
use crate::exec::Executor;
use crate::hsi::{sample_episode, Episode, HsiCube, LabelMap};
use crate::model::Model;
use crate::pgte::{cosine, physical_loss, prior_encode, rectify_prototype};
use crate::rng;
use crate::ssplm::select_pseudo_labels;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub episodes_per_batch: usize,
    pub ways: usize,
    pub shots: usize,
    pub queries_per_class: usize,
    pub beta: f64,
    pub gamma: f64,
    pub lambda: f64,
    /// Quantile levels for the source-phase detection pseudo-labels.
    pub q_pos: f64,
    pub q_neg: f64,
    pub freeze_backbone: bool,
    pub optim: OptimConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 10_000,
            episodes_per_batch: 32,
            ways: 10,
            shots: 2,
            queries_per_class: 15,
            beta: 1.0,
            gamma: 0.1,
            lambda: 0.7,
            q_pos: 0.9,
            q_neg: 0.1,
            freeze_backbone: false,
            optim: OptimConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.optim.validate()?;
        if !(self.beta >= 0.0 && self.gamma >= 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::BlendOutOfRange(self.lambda));
        }
        if !(0.0 <= self.q_neg && self.q_neg < self.q_pos && self.q_pos <= 1.0) {
            return Err(Error::Config("need 0 <= q_neg < q_pos <= 1".into()));
        }
        if self.episodes_per_batch == 0 || self.ways == 0 || self.shots == 0 || self.queries_per_class == 0 {
            return Err(Error::Config("batch, ways, shots and queries must be positive".into()));
        }
        Ok(())
    }
}

/// Labelled source scene with one prior spectrum per class.
#[derive(Debug, Clone)]
pub struct SourceDomain<'a> {
    pub cube: &'a HsiCube,
    pub labels: &'a LabelMap,
    pub priors: BTreeMap<u16, Vec<f64>>,
    /// Sorted class ids; a class's position is its row in `W_cls`.
    pub classes: Vec<u16>,
}

impl<'a> SourceDomain<'a> {
    /// Classes without an explicit prior fall back to their mean spectrum.
    pub fn new(cube: &'a HsiCube, labels: &'a LabelMap, given: &BTreeMap<u16, Vec<f64>>) -> Result<Self> {
        if !labels.matches(cube) {
            return Err(Error::Config("label map does not match cube".into()));
        }
        let classes = labels.classes();
        let priors = class_priors(cube, labels, given)?;
        Ok(Self {
            cube,
            labels,
            priors,
            classes,
        })
    }

    fn row(&self, class: u16) -> usize {
        self.classes.binary_search(&class).unwrap_or(0)
    }
}

pub fn class_priors(
    cube: &HsiCube,
    labels: &LabelMap,
    given: &BTreeMap<u16, Vec<f64>>,
) -> Result<BTreeMap<u16, Vec<f64>>> {
    let b = cube.bands();
    let mut out = BTreeMap::new();
    for class in labels.classes() {
        if let Some(p) = given.get(&class) {
            if p.len() != b {
                return Err(Error::BandMismatch { expected: b, got: p.len() });
            }
            out.insert(class, p.clone());
            continue;
        }
        let mut mean = alloc::vec![0.0; b];
        let mut n = 0usize;
        for (idx, &l) in labels.labels().iter().enumerate() {
            if l == class {
                let spec = cube.spectrum(idx / cube.width(), idx % cube.width());
                mean.iter_mut().zip(spec).for_each(|(m, &v)| *m += v as f64);
                n += 1;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        out.insert(class, mean);
    }
    Ok(out)
}

/// Per-iteration mean losses over the batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub iteration: usize,
    pub loss_cl: f64,
    pub loss_de: f64,
    pub loss_phy: f64,
    pub loss_total: f64,
}

/// Loss nodes of one episode.
#[derive(Debug, Clone, Copy)]
pub struct EpisodeLoss {
    pub total: NodeId,
    pub cl: NodeId,
    pub de: Option<NodeId>,
    pub phy: NodeId,
}

/// Builds the full objective of one episode on `g`.
///
/// One way, picked by the episode seed, stands in for the target: its
/// rectified prototype scores the query embeddings by cosine similarity and
/// the quantile rule turns the scores into hard labels for the detection
/// head. Degenerate label sets drop the detection term.
pub fn episode_objective(
    g: &mut Graph<'_>,
    model: &Model,
    source: &SourceDomain<'_>,
    ep: &Episode,
    cfg: &TrainConfig,
) -> Result<EpisodeLoss> {
    let side = model.cfg.patch;
    let support = Episode::patches(source.cube, &ep.support, side)?;
    let query = Episode::patches(source.cube, &ep.query, side)?;
    let s_nodes = support.iter().map(|p| model.forward(g, p)).collect::<Result<Vec<_>>>()?;
    let q_nodes = query.iter().map(|p| model.forward(g, p)).collect::<Result<Vec<_>>>()?;

    let rows: Vec<usize> = ep.classes.iter().map(|&c| source.row(c)).collect();
    let w_sel = model.heads.select(g, &rows)?;
    let q_e: Vec<NodeId> = q_nodes.iter().map(|n| n.e).collect();
    let eq = g.concat_rows(&q_e)?;
    let logits = g.matmul_t(eq, w_sel)?;
    let labels: Vec<usize> = ep.query.iter().map(|s| s.way).collect();
    let cl = loss_cl(g, logits, &labels)?;

    let mut phy_terms = Vec::with_capacity(ep.ways);
    let mut priors = Vec::with_capacity(ep.ways);
    for (way, class) in ep.classes.iter().enumerate() {
        let t = source.priors.get(class).ok_or(Error::MissingClass)?;
        let ep_node = prior_encode(g, &model.prior, t)?;
        let h: Vec<NodeId> = ep
            .support
            .iter()
            .zip(&s_nodes)
            .filter(|(s, _)| s.way == way)
            .map(|(_, n)| n.h_ada)
            .collect();
        phy_terms.push(physical_loss(g, &model.align, &h, ep_node)?);
        priors.push(ep_node);
    }
    let mut phy = phy_terms[0];
    for &t in &phy_terms[1..] {
        phy = g.add(phy, t)?;
    }
    let phy = g.scale(phy, 1.0 / ep.ways as f64)?;

    let target = (rng::derive(ep.seed, &[0x7d]) % ep.ways as u64) as usize;
    let support_e: Vec<Vec<f64>> = ep
        .support
        .iter()
        .zip(&s_nodes)
        .filter(|(s, _)| s.way == target)
        .map(|(_, n)| g.value(n.e).data().to_vec())
        .collect();
    let proto = rectify_prototype(
        ep.classes[target],
        &support_e,
        g.value(priors[target]).data(),
        cfg.lambda,
    )?;
    let scores: Vec<f64> = q_nodes.iter().map(|n| cosine(g.value(n.e).data(), &proto.p)).collect();
    let de = match select_pseudo_labels(&scores, cfg.q_pos, cfg.q_neg) {
        Ok(sets) => {
            let mut picked = Vec::new();
            let mut yhat = Vec::new();
            for &i in &sets.positives {
                picked.push(q_e[i]);
                yhat.push(1.0);
            }
            for &i in &sets.negatives {
                picked.push(q_e[i]);
                yhat.push(0.0);
            }
            let e = g.concat_rows(&picked)?;
            let p = model.detect(g, e)?;
            Some(loss_de(g, p, &yhat)?)
        }
        Err(Error::DegeneratePseudoSets { .. }) => None,
        Err(e) => return Err(e),
    };
    let total = total_loss(g, cl, de, phy, cfg.beta, cfg.gamma)?;
    Ok(EpisodeLoss { total, cl, de, phy })
}

pub fn draw_episode(source: &SourceDomain<'_>, cfg: &TrainConfig, iteration: usize, index: usize) -> Result<Episode> {
    sample_episode(
        source.cube,
        source.labels,
        cfg.ways,
        cfg.shots,
        cfg.ways * cfg.queries_per_class,
        rng::derive(cfg.seed, &[iteration as u64, index as u64]),
    )
}

fn episode_grads(
    model: &Model,
    values: &ParamValues,
    source: &SourceDomain<'_>,
    cfg: &TrainConfig,
    iteration: usize,
    index: usize,
) -> Result<(ParamGrads, [f64; 4])> {
    let ep = draw_episode(source, cfg, iteration, index)?;
    let mut g = Graph::new(values);
    let l = episode_objective(&mut g, model, source, &ep, cfg)?;
    let grads = g.backward(l.total)?;
    let de = l.de.map_or(0.0, |d| g.value(d).item());
    Ok((
        grads,
        [g.value(l.cl).item(), de, g.value(l.phy).item(), g.value(l.total).item()],
    ))
}

/// Runs `cfg.iterations` AdamW steps, each on the mean objective of a batch
/// of freshly drawn episodes. Episodes are evaluated through `exec`; their
/// gradients are reduced in index order before the single update.
pub fn meta_train_run<E: Executor>(
    model: &Model,
    store: &mut ParamStore,
    source: &SourceDomain<'_>,
    cfg: &TrainConfig,
    exec: &E,
) -> Result<Vec<LossRecord>> {
    cfg.validate()?;
    if source.classes.len() > model.heads.classes {
        return Err(Error::Config(alloc::format!(
            "{} source classes but the classification head has {} rows",
            source.classes.len(),
            model.heads.classes
        )));
    }
    if cfg.freeze_backbone {
        store.set_frozen_prefix("backbone/", true);
    }
    let mut trace = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let values = store.values();
        let results = exec.map(cfg.episodes_per_batch, |k| episode_grads(model, &values, source, cfg, it, k));
        let mut sum = ParamGrads::zeros_like(&values);
        let mut losses = [0.0; 4];
        for r in results {
            let (g, l) = r?;
            sum.add(&g);
            losses.iter_mut().zip(l).for_each(|(a, b)| *a += b);
        }
        let inv = 1.0 / cfg.episodes_per_batch as f64;
        sum.scale(inv);
        store.fill_gradients(&sum)?;
        adamw_update(store, &cfg.optim)?;
        trace.push(LossRecord {
            iteration: it,
            loss_cl: losses[0] * inv,
            loss_de: losses[1] * inv,
            loss_phy: losses[2] * inv,
            loss_total: losses[3] * inv,
        });
    }
    Ok(trace)
}
