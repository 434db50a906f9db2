use alloc::vec::Vec;
use core::ops::Range;

use crate::math;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FreqGroup {
    Low,
    Mid,
    High,
}

impl FreqGroup {
    pub const ALL: [FreqGroup; 3] = [FreqGroup::Low, FreqGroup::Mid, FreqGroup::High];

    pub fn name(self) -> &'static str {
        match self {
            FreqGroup::Low => "low",
            FreqGroup::Mid => "mid",
            FreqGroup::High => "high",
        }
    }
}

/// Split of the `B` DCT coefficient indices into three contiguous groups.
/// Ranges are zero-based: low is `0..⌊ρ_L·B⌋`, mid runs to `⌊ρ_M·B⌋`, high to `B`.
#[derive(Debug, Clone, PartialEq)]
pub struct FreqPartition {
    pub rho_low: f64,
    pub rho_mid: f64,
    pub bands: usize,
    pub low: Range<usize>,
    pub mid: Range<usize>,
    pub high: Range<usize>,
}

impl FreqPartition {
    pub fn range(&self, g: FreqGroup) -> Range<usize> {
        match g {
            FreqGroup::Low => self.low.clone(),
            FreqGroup::Mid => self.mid.clone(),
            FreqGroup::High => self.high.clone(),
        }
    }

    pub fn sizes(&self) -> [usize; 3] {
        [self.low.len(), self.mid.len(), self.high.len()]
    }

    /// 0/1 diagonal of the group's hard mask.
    pub fn mask(&self, g: FreqGroup) -> Vec<f64> {
        let r = self.range(g);
        (0..self.bands).map(|k| if r.contains(&k) { 1.0 } else { 0.0 }).collect()
    }
}

// Guards the floor against products like 0.29·100 = 28.999999999999996.
fn floor_ratio(rho: f64, b: usize) -> usize {
    math::floor(rho * b as f64 + 1e-9) as usize
}

pub fn build_partition(bands: usize, rho_low: f64, rho_mid: f64) -> Result<FreqPartition> {
    if !(0.0 < rho_low && rho_low < rho_mid && rho_mid < 1.0) {
        return Err(Error::Config(alloc::format!(
            "need 0 < rho_low < rho_mid < 1, got {rho_low}, {rho_mid}"
        )));
    }
    let l = floor_ratio(rho_low, bands);
    let m = floor_ratio(rho_mid, bands).min(bands);
    if l == 0 {
        return Err(Error::EmptyGroup("low"));
    }
    if m <= l {
        return Err(Error::EmptyGroup("mid"));
    }
    if m >= bands {
        return Err(Error::EmptyGroup("high"));
    }
    Ok(FreqPartition {
        rho_low,
        rho_mid,
        bands,
        low: 0..l,
        mid: l..m,
        high: m..bands,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_ratios_on_128_bands() {
        let p = build_partition(128, 0.25, 0.60).unwrap();
        assert_eq!(p.sizes(), [32, 44, 52]);
    }

    #[test]
    fn minimal_partition() {
        let p = build_partition(3, 0.34, 0.67).unwrap();
        assert_eq!((p.low, p.mid, p.high), (0..1, 1..2, 2..3));
    }

    #[test]
    fn empty_groups_rejected() {
        assert_eq!(build_partition(4, 0.1, 0.5), Err(Error::EmptyGroup("low")));
        assert_eq!(build_partition(4, 0.25, 0.4), Err(Error::EmptyGroup("mid")));
        assert_eq!(build_partition(4, 0.25, 0.9).unwrap().high, 3..4);
        assert!(build_partition(10, 0.6, 0.5).is_err());
    }

    #[test]
    fn masks_sum_to_identity() {
        for b in 3..64 {
            if let Ok(p) = build_partition(b, 0.25, 0.6) {
                let sum: Vec<f64> = (0..b)
                    .map(|k| FreqGroup::ALL.iter().map(|&g| p.mask(g)[k]).sum())
                    .collect();
                assert!(sum.iter().all(|&s| s == 1.0));
            }
        }
    }
}
