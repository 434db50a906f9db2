use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// `H × W × B` reflectance cube, band-interleaved-by-pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct HsiCube {
    height: usize,
    width: usize,
    bands: usize,
    data: Vec<f32>,
    wavelengths: Option<Vec<f64>>,
}

impl HsiCube {
    pub fn new(height: usize, width: usize, bands: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || bands == 0 {
            return Err(Error::Config(format!("empty cube {height}x{width}x{bands}")));
        }
        let n = height
            .checked_mul(width)
            .and_then(|v| v.checked_mul(bands))
            .ok_or_else(|| Error::Config("cube extents overflow".into()))?;
        if n != data.len() {
            return Err(Error::LengthMismatch(n, data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "cube" });
        }
        Ok(Self {
            height,
            width,
            bands,
            data,
            wavelengths: None,
        })
    }

    pub fn with_wavelengths(mut self, wl: Vec<f64>) -> Result<Self> {
        if wl.len() != self.bands {
            return Err(Error::BandMismatch {
                expected: self.bands,
                got: wl.len(),
            });
        }
        if wl.windows(2).any(|w| w[1] <= w[0]) || wl.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("wavelengths must be strictly increasing".into()));
        }
        self.wavelengths = Some(wl);
        Ok(self)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn wavelengths(&self) -> Option<&[f64]> {
        self.wavelengths.as_deref()
    }

    pub fn spectrum(&self, i: usize, j: usize) -> &[f32] {
        let off = (i * self.width + j) * self.bands;
        &self.data[off..off + self.bands]
    }

    pub fn spectrum_mut(&mut self, i: usize, j: usize) -> &mut [f32] {
        let off = (i * self.width + j) * self.bands;
        &mut self.data[off..off + self.bands]
    }
}

/// Integer class map; 0 is unlabelled/background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    labels: Vec<u16>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<u16>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::LengthMismatch(height * width, labels.len()));
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    /// Binary truth map from a pixel mask (1 = target).
    pub fn from_mask(height: usize, width: usize, mask: &[bool]) -> Result<Self> {
        Self::new(height, width, mask.iter().map(|&m| m as u16).collect())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn get(&self, i: usize, j: usize) -> u16 {
        self.labels[i * self.width + j]
    }

    pub fn matches(&self, cube: &HsiCube) -> bool {
        self.height == cube.height() && self.width == cube.width()
    }

    /// Sorted distinct non-zero class ids.
    pub fn classes(&self) -> Vec<u16> {
        let mut seen = vec![false; u16::MAX as usize + 1];
        for &l in &self.labels {
            seen[l as usize] = true;
        }
        (1..=u16::MAX).filter(|&c| seen[c as usize]).collect()
    }
}

/// Per-band extrema recorded by [`normalize_bands`].
#[derive(Debug, Clone, PartialEq)]
pub struct BandScaling {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl BandScaling {
    /// Maps a normalised spectrum back to the original range.
    pub fn invert(&self, spectrum: &[f64]) -> Vec<f64> {
        spectrum
            .iter()
            .enumerate()
            .map(|(b, v)| self.min[b] + v * (self.max[b] - self.min[b]))
            .collect()
    }

    /// Applies the recorded scaling to an external spectrum (e.g. a prior).
    pub fn apply(&self, spectrum: &[f64]) -> Vec<f64> {
        spectrum
            .iter()
            .enumerate()
            .map(|(b, v)| {
                let range = self.max[b] - self.min[b];
                if range > 0.0 {
                    (v - self.min[b]) / range
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// Min-max scales every band to `[0, 1]` over the whole scene. Constant bands
/// map to 0.
pub fn normalize_bands(cube: &HsiCube) -> (HsiCube, BandScaling) {
    let b = cube.bands();
    let mut min = vec![f64::INFINITY; b];
    let mut max = vec![f64::NEG_INFINITY; b];
    for px in cube.data().chunks(b) {
        for (k, &v) in px.iter().enumerate() {
            min[k] = min[k].min(v as f64);
            max[k] = max[k].max(v as f64);
        }
    }
    let mut data = Vec::with_capacity(cube.data().len());
    for px in cube.data().chunks(b) {
        for (k, &v) in px.iter().enumerate() {
            let range = max[k] - min[k];
            data.push(if range > 0.0 {
                ((v as f64 - min[k]) / range) as f32
            } else {
                0.0
            });
        }
    }
    let out = HsiCube {
        data,
        ..cube.clone()
    };
    (out, BandScaling { min, max })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_affine_and_constant() {
        let c = HsiCube::new(1, 3, 2, vec![2.0, 5.0, 4.0, 5.0, 6.0, 5.0]).unwrap();
        let (n, s) = normalize_bands(&c);
        let band0: Vec<f32> = n.data().chunks(2).map(|p| p[0]).collect();
        let band1: Vec<f32> = n.data().chunks(2).map(|p| p[1]).collect();
        assert_eq!(band0, vec![0.0, 0.5, 1.0]);
        assert_eq!(band1, vec![0.0, 0.0, 0.0]);
        assert_eq!(s.min, vec![2.0, 5.0]);
        assert_eq!(s.invert(&[0.5, 0.0]), vec![4.0, 5.0]);
    }

    #[test]
    fn normalize_is_idempotent() {
        let data: Vec<f32> = (0..60).map(|i| ((i * 37) % 11) as f32 * 0.3 - 1.0).collect();
        let c = HsiCube::new(3, 4, 5, data).unwrap();
        let (once, _) = normalize_bands(&c);
        let (twice, _) = normalize_bands(&once);
        assert_eq!(once, twice);
    }

    #[test]
    fn rejects_bad_wavelengths_and_nan() {
        let c = HsiCube::new(1, 1, 3, vec![0.0; 3]).unwrap();
        assert!(c.clone().with_wavelengths(vec![400.0, 500.0, 450.0]).is_err());
        assert!(c.with_wavelengths(vec![400.0, 500.0]).is_err());
        assert!(HsiCube::new(1, 1, 1, vec![f32::NAN]).is_err());
        assert!(HsiCube::new(0, 1, 1, vec![]).is_err());
    }
}
