use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::{Error, Result};

/// Clean library spectrum of a target material, resampled to the scene bands.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralPrior {
    pub material: String,
    pub values: Vec<f64>,
}

impl SpectralPrior {
    pub fn new(material: &str, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Prior("spectrum must be non-empty and finite".into()));
        }
        Ok(Self {
            material: material.to_string(),
            values,
        })
    }

    pub fn bands(&self) -> usize {
        self.values.len()
    }
}

/// Parses `wavelength,value` lines or one bare value per line. `#` starts a
/// comment; blank lines are ignored.
pub fn parse_prior_text(text: &str) -> Result<Vec<(Option<f64>, f64)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let num = |s: &str| {
            s.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Prior(format!("line {}: cannot parse `{}`", n + 1, s.trim())))
        };
        let entry = match line.split_once(',') {
            Some((wl, v)) => (Some(num(wl)?), num(v)?),
            None => (None, num(line)?),
        };
        out.push(entry);
    }
    if out.is_empty() {
        return Err(Error::Prior("no samples".into()));
    }
    let with_wl = out.iter().filter(|(w, _)| w.is_some()).count();
    if with_wl != 0 && with_wl != out.len() {
        return Err(Error::Prior("mixed bare and wavelength,value lines".into()));
    }
    Ok(out)
}

/// Piecewise-linear interpolation of `(xs, ys)` at `targets`; values outside
/// the sampled range take the nearest endpoint. `xs` must be strictly increasing.
pub fn resample_linear(xs: &[f64], ys: &[f64], targets: &[f64]) -> Result<Vec<f64>> {
    if xs.len() < 2 || xs.len() != ys.len() {
        return Err(Error::Prior("interpolation needs at least two samples".into()));
    }
    if xs.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Prior("wavelengths are not strictly increasing".into()));
    }
    Ok(targets
        .iter()
        .map(|&t| {
            if t <= xs[0] {
                return ys[0];
            }
            if t >= xs[xs.len() - 1] {
                return ys[ys.len() - 1];
            }
            let k = xs.partition_point(|&x| x <= t) - 1;
            let f = (t - xs[k]) / (xs[k + 1] - xs[k]);
            ys[k] + f * (ys[k + 1] - ys[k])
        })
        .collect())
}

/// Builds a prior with `band_count` values from prior-file text. Matching
/// lengths are taken verbatim; otherwise the samples are linearly
/// interpolated onto `grid` (the cube's wavelengths) or, without one, onto an
/// even grid spanning the file's own range.
pub fn load_prior(
    material: &str,
    text: &str,
    band_count: usize,
    grid: Option<&[f64]>,
) -> Result<SpectralPrior> {
    let samples = parse_prior_text(text)?;
    let ys: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let wls: Option<Vec<f64>> = samples.iter().map(|s| s.0).collect();
    if let Some(w) = &wls {
        if w.windows(2).any(|p| p[1] <= p[0]) {
            return Err(Error::Prior("wavelengths are not strictly increasing".into()));
        }
    }
    if ys.len() == band_count {
        return SpectralPrior::new(material, ys);
    }
    if ys.len() < 2 {
        return Err(Error::Prior("interpolation needs at least two samples".into()));
    }
    let even = |lo: f64, hi: f64| -> Vec<f64> {
        if band_count == 1 {
            return alloc::vec![lo];
        }
        (0..band_count)
            .map(|b| lo + (hi - lo) * b as f64 / (band_count - 1) as f64)
            .collect()
    };
    let values = match (wls, grid) {
        (Some(w), Some(g)) => resample_linear(&w, &ys, g)?,
        (Some(w), None) => resample_linear(&w, &ys, &even(w[0], w[w.len() - 1]))?,
        (None, _) => {
            let xs = even_positions(ys.len());
            resample_linear(&xs, &ys, &even(0.0, 1.0))?
        }
    };
    if values.len() != band_count {
        return Err(Error::BandMismatch {
            expected: band_count,
            got: values.len(),
        });
    }
    SpectralPrior::new(material, values)
}

fn even_positions(n: usize) -> Vec<f64> {
    (0..n).map(|k| k as f64 / (n - 1) as f64).collect()
}
