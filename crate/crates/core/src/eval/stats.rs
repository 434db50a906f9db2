use alloc::vec::Vec;

use crate::hsi::LabelMap;
use crate::math;
use crate::{Error, Result};

/// min, lower quartile, median, upper quartile, max.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiveNumber {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeparabilityStats {
    pub target: FiveNumber,
    pub background: FiveNumber,
}

pub fn five_number(values: &[f64]) -> Result<FiveNumber> {
    if values.is_empty() {
        return Err(Error::Empty("score population"));
    }
    let s = math::sorted(values);
    Ok(FiveNumber {
        min: s[0],
        q1: math::quantile_sorted(&s, 0.25),
        median: math::quantile_sorted(&s, 0.5),
        q3: math::quantile_sorted(&s, 0.75),
        max: s[s.len() - 1],
    })
}

pub fn separability_stats(scores: &[f64], truth: &LabelMap) -> Result<SeparabilityStats> {
    if scores.len() != truth.labels().len() {
        return Err(Error::LengthMismatch(scores.len(), truth.labels().len()));
    }
    let (t, b): (Vec<(f64, u16)>, Vec<(f64, u16)>) = scores
        .iter()
        .copied()
        .zip(truth.labels().iter().copied())
        .partition(|&(_, l)| l != 0);
    if t.is_empty() || b.is_empty() {
        return Err(Error::MissingClass);
    }
    let pick = |v: Vec<(f64, u16)>| v.into_iter().map(|p| p.0).collect::<Vec<_>>();
    Ok(SeparabilityStats {
        target: five_number(&pick(t))?,
        background: five_number(&pick(b))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_quartiles() {
        let f = five_number(&[3.0, 0.0, 4.0, 1.0, 2.0]).unwrap();
        assert_eq!((f.min, f.q1, f.median, f.q3, f.max), (0.0, 1.0, 2.0, 3.0, 4.0));
        let c = five_number(&[0.9, 0.9]).unwrap();
        assert!([c.min, c.q1, c.median, c.q3, c.max].iter().all(|&v| v == 0.9));
    }

    #[test]
    fn split_by_truth() {
        let t = LabelMap::from_mask(1, 4, &[true, false, true, false]).unwrap();
        let s = separability_stats(&[0.9, 0.1, 0.8, 0.3], &t).unwrap();
        assert_eq!((s.target.min, s.target.max), (0.8, 0.9));
        assert_eq!((s.background.min, s.background.max), (0.1, 0.3));
        let none = LabelMap::from_mask(1, 2, &[false, false]).unwrap();
        assert_eq!(separability_stats(&[0.1, 0.2], &none), Err(Error::MissingClass));
    }
}
