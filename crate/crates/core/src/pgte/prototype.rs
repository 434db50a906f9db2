use alloc::vec::Vec;

use crate::{Error, Result};

/// Rectified class anchor `p = λ·mean + (1-λ)·e_prior`, with both parts kept.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototype {
    pub class: u16,
    pub p: Vec<f64>,
    pub lambda: f64,
    pub support_mean: Vec<f64>,
    pub e_prior: Vec<f64>,
}

impl Prototype {
    pub fn norm(&self) -> f64 {
        crate::math::sqrt(self.p.iter().map(|v| v * v).sum())
    }
}

pub fn rectify_prototype(
    class: u16,
    support: &[Vec<f64>],
    e_prior: &[f64],
    lambda: f64,
) -> Result<Prototype> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::BlendOutOfRange(lambda));
    }
    if support.is_empty() {
        return Err(Error::Empty("support"));
    }
    let d = e_prior.len();
    let mut mean = alloc::vec![0.0; d];
    for e in support {
        if e.len() != d {
            return Err(Error::LengthMismatch(e.len(), d));
        }
        mean.iter_mut().zip(e).for_each(|(m, v)| *m += v);
    }
    let k = support.len() as f64;
    mean.iter_mut().for_each(|m| *m /= k);
    let p = mean
        .iter()
        .zip(e_prior)
        .map(|(m, e)| lambda * m + (1.0 - lambda) * e)
        .collect();
    Ok(Prototype {
        class,
        p,
        lambda,
        support_mean: mean,
        e_prior: e_prior.to_vec(),
    })
}

/// Cosine similarity; zero-norm `e` scores 0.
pub fn cosine(e: &[f64], p: &[f64]) -> f64 {
    let (mut dot, mut ne, mut np) = (0.0, 0.0, 0.0);
    for (a, b) in e.iter().zip(p) {
        dot += a * b;
        ne += a * a;
        np += b * b;
    }
    if ne == 0.0 || np == 0.0 {
        return 0.0;
    }
    dot / (crate::math::sqrt(ne) * crate::math::sqrt(np))
}
