//! Desk-scale synthetic scenes with known ground truth.
//!
//! Background classes are smooth random spectra (squared-exponential
//! correlation along the band axis) laid out as Voronoi regions. Implants are
//! linear mixtures `y = α·t + (1 - α)·b + ε` of a prior `t` with the pixel's
//! clean background `b`, sharing the pixel's noise draw `ε`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;

use super::cube::{HsiCube, LabelMap};
use super::prior::SpectralPrior;
use crate::math;
use crate::rng::{self, Rng};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub background_classes: usize,
    /// Correlation length along the band axis, as a fraction of the spectral range.
    pub length_scale: f64,
    pub implants: usize,
    pub abundance_min: f64,
    pub abundance_max: f64,
    pub noise_std: f64,
    /// Typical side of a homogeneous background region, in pixels.
    pub region_size: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            height: 48,
            width: 48,
            bands: 32,
            background_classes: 4,
            length_scale: 0.15,
            implants: 20,
            abundance_min: 0.4,
            abundance_max: 1.0,
            noise_std: 0.01,
            region_size: 8,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synth: {m}")));
        if self.height == 0 || self.width == 0 || self.bands == 0 {
            return bad("extents must be positive");
        }
        if self.background_classes == 0 || self.background_classes > self.height * self.width {
            return bad("background class count out of range");
        }
        if !(0.0 <= self.abundance_min
            && self.abundance_min <= self.abundance_max
            && self.abundance_max <= 1.0)
        {
            return bad("need 0 <= abundance_min <= abundance_max <= 1");
        }
        if self.implants >= self.height * self.width {
            return bad("implant count must be below the pixel count");
        }
        if !(self.length_scale > 0.0) || !(self.noise_std >= 0.0) || self.region_size == 0 {
            return bad("length scale, noise and region size must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthScene {
    pub cube: HsiCube,
    /// Background class per pixel, `1..=background_classes`.
    pub labels: LabelMap,
    pub mask: Vec<bool>,
    /// Index of the prior implanted at each pixel, `None` for background.
    pub material: Vec<Option<usize>>,
    /// Class mean spectra, index `c - 1` for class `c`.
    pub class_spectra: Vec<Vec<f64>>,
}

impl SynthScene {
    pub fn truth(&self) -> LabelMap {
        LabelMap::from_mask(self.cube.height(), self.cube.width(), &self.mask)
            .expect("mask matches cube")
    }

    pub fn implant_pixels(&self) -> Vec<(usize, usize)> {
        let w = self.cube.width();
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(k, _)| (k / w, k % w))
            .collect()
    }
}

struct SmoothSampler {
    chol: Vec<f64>,
    n: usize,
}

impl SmoothSampler {
    fn new(bands: usize, length_scale: f64) -> Self {
        let pos = |b: usize| if bands > 1 { b as f64 / (bands - 1) as f64 } else { 0.0 };
        let mut k = vec![0.0; bands * bands];
        for i in 0..bands {
            for j in 0..bands {
                let d = pos(i) - pos(j);
                k[i * bands + j] = math::exp(-d * d / (2.0 * length_scale * length_scale));
            }
            k[i * bands + i] += 1e-6;
        }
        Self {
            chol: cholesky(&k, bands),
            n: bands,
        }
    }

    fn draw(&self, r: &mut Rng) -> Vec<f64> {
        let z: Vec<f64> = (0..self.n).map(|_| r.sample(StandardNormal)).collect();
        (0..self.n)
            .map(|i| (0..=i).map(|j| self.chol[i * self.n + j] * z[j]).sum())
            .collect()
    }
}

fn cholesky(a: &[f64], n: usize) -> Vec<f64> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i * n + k] * l[j * n + k]).sum();
            if i == j {
                l[i * n + i] = math::sqrt((a[i * n + i] - s).max(1e-12));
            } else {
                l[i * n + j] = (a[i * n + j] - s) / l[j * n + j];
            }
        }
    }
    l
}

/// Generates a labelled scene with implanted sub-pixel targets.
pub fn synth_scene(cfg: &SynthConfig, priors: &[SpectralPrior]) -> Result<SynthScene> {
    cfg.validate()?;
    if cfg.implants > 0 && priors.is_empty() {
        return Err(Error::Config("implants need at least one prior".into()));
    }
    if let Some(p) = priors.iter().find(|p| p.bands() != cfg.bands) {
        return Err(Error::BandMismatch {
            expected: cfg.bands,
            got: p.bands(),
        });
    }
    let (h, w, b) = (cfg.height, cfg.width, cfg.bands);
    let sampler = SmoothSampler::new(b, cfg.length_scale);

    let mut class_rng = rng::seeded(rng::derive(cfg.seed, &[1]));
    let class_spectra: Vec<Vec<f64>> = (0..cfg.background_classes)
        .map(|_| {
            let offset = 0.35 + 0.3 * class_rng.random::<f64>();
            sampler
                .draw(&mut class_rng)
                .into_iter()
                .map(|v| offset + 0.12 * v)
                .collect()
        })
        .collect();

    let labels = voronoi_layout(cfg);

    let mut cube_data = Vec::with_capacity(h * w * b);
    let mut clean = Vec::with_capacity(h * w * b);
    let mut noise = Vec::with_capacity(h * w * b);
    let mut px_rng = rng::seeded(rng::derive(cfg.seed, &[2]));
    for &class in &labels {
        let base = &class_spectra[class as usize - 1];
        let gain = 1.0 + 0.05 * px_rng.sample::<f64, _>(StandardNormal);
        let wiggle = sampler.draw(&mut px_rng);
        for k in 0..b {
            let c = base[k] * gain + 0.02 * wiggle[k];
            let e = cfg.noise_std * px_rng.sample::<f64, _>(StandardNormal);
            clean.push(c);
            noise.push(e);
            cube_data.push((c + e) as f32);
        }
    }

    let mut mask = vec![false; h * w];
    let mut material = vec![None; h * w];
    let mut imp_rng = rng::seeded(rng::derive(cfg.seed, &[3]));
    let mut order: Vec<usize> = (0..h * w).collect();
    let (picked, _) = order.partial_shuffle(&mut imp_rng, cfg.implants);
    for (n, &px) in picked.iter().enumerate() {
        mask[px] = true;
        material[px] = Some(n % priors.len());
        let t = &priors[n % priors.len()].values;
        let alpha = if cfg.abundance_max > cfg.abundance_min {
            imp_rng.random_range(cfg.abundance_min..=cfg.abundance_max)
        } else {
            cfg.abundance_min
        };
        for k in 0..b {
            let idx = px * b + k;
            cube_data[idx] = (alpha * t[k] + (1.0 - alpha) * clean[idx] + noise[idx]) as f32;
        }
    }

    let cube = HsiCube::new(h, w, b, cube_data)?;
    Ok(SynthScene {
        cube,
        labels: LabelMap::new(h, w, labels)?,
        mask,
        material,
        class_spectra,
    })
}

fn voronoi_layout(cfg: &SynthConfig) -> Vec<u16> {
    let (h, w) = (cfg.height, cfg.width);
    let sites_n = (h * w / (cfg.region_size * cfg.region_size)).max(cfg.background_classes);
    let mut r = rng::seeded(rng::derive(cfg.seed, &[4]));
    let sites: Vec<(f64, f64, u16)> = (0..sites_n)
        .map(|s| {
            let class = if s < cfg.background_classes {
                s as u16 + 1
            } else {
                r.random_range(1..=cfg.background_classes as u16)
            };
            (r.random::<f64>() * h as f64, r.random::<f64>() * w as f64, class)
        })
        .collect();
    let mut labels = Vec::with_capacity(h * w);
    for i in 0..h {
        for j in 0..w {
            let (pi, pj) = (i as f64 + 0.5, j as f64 + 0.5);
            let best = sites
                .iter()
                .map(|&(si, sj, c)| ((si - pi) * (si - pi) + (sj - pj) * (sj - pj), c))
                .min_by(|a, b| a.0.total_cmp(&b.0))
                .map(|(_, c)| c)
                .unwrap_or(1);
            labels.push(best);
        }
    }
    labels
}

/// A smooth random signature with a few absorption features, usable as a
/// target material for synthetic scenes.
pub fn synthetic_prior(bands: usize, seed: u64) -> SpectralPrior {
    let mut r = rng::seeded(rng::derive(seed, &[5]));
    let sampler = SmoothSampler::new(bands, 0.2);
    let base = sampler.draw(&mut r);
    let pos = |k: usize| if bands > 1 { k as f64 / (bands - 1) as f64 } else { 0.0 };
    let dips: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                0.15 + 0.7 * r.random::<f64>(),
                0.04 + 0.04 * r.random::<f64>(),
                0.15 + 0.15 * r.random::<f64>(),
            )
        })
        .collect();
    let slope = 0.2 * (r.random::<f64>() - 0.5);
    let values = (0..bands)
        .map(|k| {
            let x = pos(k);
            let absorb: f64 = dips
                .iter()
                .map(|&(c, wd, depth)| depth * math::exp(-(x - c) * (x - c) / (2.0 * wd * wd)))
                .sum();
            0.55 + 0.08 * base[k] + slope * (x - 0.5) - absorb
        })
        .collect();
    SpectralPrior {
        material: format!("synthetic-{seed}"),
        values,
    }
}
