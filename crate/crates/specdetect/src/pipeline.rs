//! End-to-end runs: synthetic scene pairs, meta-training, prototype
//! construction, detection and adaptation.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use specdetect_core::diff::ParamStore;
use specdetect_core::eval::{roc_report, RocReport};
use specdetect_core::exec::Executor;
use specdetect_core::hsi::{extract_patch, normalize_bands, synth_scene, synthetic_prior, HsiCube, LabelMap};
use specdetect_core::metatrain::{meta_train_run, LossRecord, SourceDomain};
use specdetect_core::model::Model;
use specdetect_core::pgte::{rectify_prototype, Prototype};
use specdetect_core::rng;
use specdetect_core::ssplm::{detection_map, min_max_normalize, similarity_map, tta_adapt, TtaOutcome};
use specdetect_core::{Error, Result};

use crate::config::RunConfig;

/// A normalised scene with its labels and the material priors used to build it.
#[derive(Debug, Clone)]
pub struct Scene {
    pub cube: HsiCube,
    pub labels: LabelMap,
    pub priors: BTreeMap<u16, Vec<f64>>,
}

/// Source scene for training and a target scene with a different material.
#[derive(Debug, Clone)]
pub struct ScenePair {
    pub source: Scene,
    pub target: Scene,
    /// Prior of the target material, scaled like the target cube.
    pub target_prior: Vec<f64>,
}

/// Source labels are the background classes plus one extra class for the
/// implanted material. Target labels mark implants with 1.
pub fn synthetic_pair(cfg: &RunConfig, seed: u64) -> Result<ScenePair> {
    let bands = cfg.synth_bands;
    let src_materials: Vec<_> = (0..cfg.source_materials as u64)
        .map(|m| synthetic_prior(bands, rng::derive(seed, &[10, m])))
        .collect();
    let tgt_prior = synthetic_prior(bands, rng::derive(seed, &[11]));

    let src = synth_scene(&cfg.source_synth(rng::derive(seed, &[20])), &src_materials)?;
    let (src_cube, src_scale) = normalize_bands(&src.cube);
    let first = cfg.source_classes as u16 + 1;
    let src_labels: Vec<u16> = src
        .labels
        .labels()
        .iter()
        .zip(&src.material)
        .map(|(&l, m)| m.map_or(l, |m| first + m as u16))
        .collect();
    let src_priors: BTreeMap<u16, Vec<f64>> = src_materials
        .iter()
        .enumerate()
        .map(|(m, p)| (first + m as u16, src_scale.apply(&p.values)))
        .collect();

    let tgt = synth_scene(&cfg.synth(rng::derive(seed, &[21])), std::slice::from_ref(&tgt_prior))?;
    let (tgt_cube, tgt_scale) = normalize_bands(&tgt.cube);
    let target_prior = tgt_scale.apply(&tgt_prior.values);
    let mut tgt_priors = BTreeMap::new();
    tgt_priors.insert(1, target_prior.clone());
    Ok(ScenePair {
        source: Scene {
            labels: LabelMap::new(src_cube.height(), src_cube.width(), src_labels)?,
            cube: src_cube,
            priors: src_priors,
        },
        target: Scene {
            labels: tgt.truth(),
            cube: tgt_cube,
            priors: tgt_priors,
        },
        target_prior,
    })
}

/// Fresh model sized for `source`, trained with the configured schedule.
pub fn train_model<E: Executor>(
    cfg: &RunConfig,
    source: &Scene,
    exec: &E,
) -> Result<(Model, ParamStore, Vec<LossRecord>)> {
    let domain = SourceDomain::new(&source.cube, &source.labels, &source.priors)?;
    let mcfg = cfg.model(source.cube.bands());
    let (model, mut store) = Model::init(&mcfg, domain.classes.len(), rng::derive(cfg.seed, &[1]))?;
    let trace = meta_train_run(&model, &mut store, &domain, &cfg.train(), exec)?;
    Ok((model, store, trace))
}

/// `k` labelled pixels drawn by seed.
pub fn pick_support(labels: &LabelMap, k: usize, seed: u64) -> Result<Vec<(usize, usize)>> {
    let w = labels.width();
    let mut px: Vec<usize> = (0..labels.labels().len()).filter(|&i| labels.labels()[i] != 0).collect();
    if px.len() < k {
        return Err(Error::InsufficientSamples {
            class: 1,
            available: px.len(),
            needed: k,
        });
    }
    let mut r = rng::seeded(seed);
    let (picked, _) = px.partial_shuffle(&mut r, k);
    let mut out: Vec<(usize, usize)> = picked.iter().map(|&i| (i / w, i % w)).collect();
    out.sort_unstable();
    Ok(out)
}

/// Rectified prototype of the target material from support pixels and its prior.
pub fn target_prototype(
    model: &Model,
    store: &ParamStore,
    cube: &HsiCube,
    support: &[(usize, usize)],
    prior: &[f64],
    lambda: f64,
) -> Result<Prototype> {
    let values = store.values();
    let embeddings = support
        .iter()
        .map(|&(i, j)| model.embed(&values, &extract_patch(cube, i, j, model.cfg.patch)?))
        .collect::<Result<Vec<_>>>()?;
    let e_prior = model.prior_embedding(&values, prior)?;
    rectify_prototype(1, &embeddings, &e_prior, lambda)
}

pub fn baseline_map<E: Executor>(model: &Model, store: &ParamStore, cube: &HsiCube, proto: &Prototype, exec: &E) -> Result<Vec<f64>> {
    Ok(min_max_normalize(&similarity_map(model, &store.values(), cube, proto, exec)?))
}

pub fn head_map<E: Executor>(model: &Model, store: &ParamStore, cube: &HsiCube, exec: &E) -> Result<Vec<f64>> {
    Ok(min_max_normalize(&detection_map(model, &store.values(), cube, exec)?))
}

pub fn adapt<E: Executor>(
    cfg: &RunConfig,
    model: &Model,
    store: &mut ParamStore,
    cube: &HsiCube,
    proto: &Prototype,
    exec: &E,
) -> Result<TtaOutcome> {
    tta_adapt(model, store, cube, proto, &cfg.tta(), exec)
}

/// AUC summaries of one seeded synthetic experiment.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub seed: u64,
    pub baseline: RocReport,
    pub unadapted: RocReport,
    pub adapted: RocReport,
    pub train_trace: Vec<LossRecord>,
    pub outcome: TtaOutcome,
}

/// Scene pair, meta-training, prototype, baseline, un-adapted head and
/// adapted head, all evaluated on the full target scene.
pub fn synthetic_experiment<E: Executor>(cfg: &RunConfig, seed: u64, exec: &E) -> Result<Experiment> {
    let mut cfg = cfg.clone();
    cfg.seed = seed;
    cfg.validate().map_err(|e| Error::Config(e.to_string()))?;
    let pair = synthetic_pair(&cfg, seed)?;
    let (model, mut store, train_trace) = train_model(&cfg, &pair.source, exec)?;
    let support = pick_support(&pair.target.labels, cfg.shots, rng::derive(seed, &[30]))?;
    let proto = target_prototype(&model, &store, &pair.target.cube, &support, &pair.target_prior, cfg.lambda)?;
    let truth = &pair.target.labels;
    let baseline = roc_report(&baseline_map(&model, &store, &pair.target.cube, &proto, exec)?, truth, cfg.grid)?;
    let mut zero = cfg.clone();
    zero.tta_iterations = 0;
    let mut probe = store.clone();
    let unadapted = adapt(&zero, &model, &mut probe, &pair.target.cube, &proto, exec)?;
    let unadapted = roc_report(&unadapted.map, truth, cfg.grid)?;
    let outcome = adapt(&cfg, &model, &mut store, &pair.target.cube, &proto, exec)?;
    let adapted = roc_report(&outcome.map, truth, cfg.grid)?;
    Ok(Experiment {
        seed,
        baseline,
        unadapted,
        adapted,
        train_trace,
        outcome,
    })
}

/// Finite-difference audit of the full training objective on one episode.
#[derive(Debug, Clone)]
pub struct GradientAudit {
    /// `(namespace, coordinates probed, max relative error)`.
    pub namespaces: Vec<(String, usize, f64)>,
    pub episode_has_detection_term: bool,
}

impl GradientAudit {
    pub fn max_rel_error(&self) -> f64 {
        self.namespaces.iter().map(|n| n.2).fold(0.0, f64::max)
    }
}

/// Toy scene and model: `bands` bands, `patch` window, width `width` for every
/// hidden layer. All trainable namespaces are probed at `coords` coordinates.
pub fn gradient_audit(bands: usize, patch: usize, width: usize, coords: usize, seed: u64) -> Result<GradientAudit> {
    use specdetect_core::diff::{finite_difference_check, sample_coords};
    use specdetect_core::hsi::SynthConfig;
    use specdetect_core::metatrain::{draw_episode, episode_objective, TrainConfig};
    use specdetect_core::model::ModelConfig;

    let scene = synth_scene(
        &SynthConfig {
            height: 12,
            width: 12,
            bands,
            background_classes: 3,
            length_scale: 0.2,
            implants: 0,
            abundance_min: 0.5,
            abundance_max: 1.0,
            noise_std: 0.01,
            region_size: 6,
            seed: rng::derive(seed, &[1]),
        },
        &[],
    )?;
    let (cube, _) = normalize_bands(&scene.cube);
    let priors: BTreeMap<u16, Vec<f64>> = BTreeMap::new();
    let domain = SourceDomain::new(&cube, &scene.labels, &priors)?;
    let mcfg = ModelConfig {
        patch,
        group_width: width,
        adapter_width: width,
        state_size: 4,
        embed_width: width,
        heads: 2,
        blocks: 1,
        prior_hidden: width,
        ..ModelConfig::new(bands)
    };
    let (model, store) = Model::init(&mcfg, domain.classes.len(), rng::derive(seed, &[2]))?;
    let tcfg = TrainConfig {
        ways: 3,
        shots: 2,
        queries_per_class: 4,
        q_pos: 0.8,
        q_neg: 0.2,
        seed: rng::derive(seed, &[3]),
        ..TrainConfig::default()
    };
    let ep = draw_episode(&domain, &tcfg, 0, 0)?;
    let build = |g: &mut specdetect_core::diff::Graph<'_>| episode_objective(g, &model, &domain, &ep, &tcfg).map(|l| l.total);
    let has_de = {
        let values = store.values();
        let mut g = specdetect_core::diff::Graph::new(&values);
        episode_objective(&mut g, &model, &domain, &ep, &tcfg)?.de.is_some()
    };
    let mut namespaces = Vec::new();
    for (k, ns) in ["dctma/", "backbone/", "prior/", "align/", "cls/", "det/"].into_iter().enumerate() {
        let c = sample_coords(&store, ns, coords, rng::derive(seed, &[4, k as u64]));
        let r = finite_difference_check(&store, 1e-3, &c, build)?;
        namespaces.push((ns.to_string(), r.coords, r.max_rel_error));
    }
    Ok(GradientAudit {
        namespaces,
        episode_has_detection_term: has_de,
    })
}
