use alloc::vec::Vec;

use super::cube::HsiCube;
use crate::diff::Tensor;
use crate::{Error, Result};

/// `s × s × B` window around a pixel, stored row-major with the band axis
/// innermost, so row `r·s + c` of [`Patch::tokens`] is one pixel spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub center: (usize, usize),
    pub side: usize,
    pub bands: usize,
    pub values: Vec<f64>,
}

impl Patch {
    pub fn from_values(side: usize, bands: usize, values: Vec<f64>) -> Result<Self> {
        if side % 2 == 0 {
            return Err(Error::EvenWindow(side));
        }
        if values.len() != side * side * bands {
            return Err(Error::LengthMismatch(side * side * bands, values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "patch" });
        }
        Ok(Self {
            center: (0, 0),
            side,
            bands,
            values,
        })
    }

    /// Patch whose every position holds the same spectrum.
    pub fn uniform(side: usize, spectrum: &[f64]) -> Result<Self> {
        let mut values = Vec::with_capacity(side * side * spectrum.len());
        for _ in 0..side * side {
            values.extend_from_slice(spectrum);
        }
        Self::from_values(side, spectrum.len(), values)
    }

    pub fn token_count(&self) -> usize {
        self.side * self.side
    }

    /// Flattened spatial token sequence `[s², B]`.
    pub fn tokens(&self) -> Tensor {
        Tensor::from_parts(self.token_count(), self.bands, self.values.clone())
    }

    pub fn at(&self, r: usize, c: usize) -> &[f64] {
        let off = (r * self.side + c) * self.bands;
        &self.values[off..off + self.bands]
    }

    pub fn center_spectrum(&self) -> &[f64] {
        let h = self.side / 2;
        self.at(h, h)
    }
}

/// Reflects `k` into `0..n` about the edges without repeating the edge sample
/// (`-1 → 1`, `n → n - 2`).
pub fn mirror_index(k: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut m = k.rem_euclid(period);
    if m >= n as isize {
        m = period - m;
    }
    m as usize
}

/// Window of odd side `s` centred on `(i, j)`; out-of-range positions are
/// filled by mirror reflection.
pub fn extract_patch(cube: &HsiCube, i: usize, j: usize, s: usize) -> Result<Patch> {
    if s % 2 == 0 {
        return Err(Error::EvenWindow(s));
    }
    if i >= cube.height() || j >= cube.width() {
        return Err(Error::OutOfBounds {
            i,
            j,
            height: cube.height(),
            width: cube.width(),
        });
    }
    let half = (s / 2) as isize;
    let mut values = Vec::with_capacity(s * s * cube.bands());
    for di in -half..=half {
        let r = mirror_index(i as isize + di, cube.height());
        for dj in -half..=half {
            let c = mirror_index(j as isize + dj, cube.width());
            values.extend(cube.spectrum(r, c).iter().map(|&v| v as f64));
        }
    }
    Ok(Patch {
        center: (i, j),
        side: s,
        bands: cube.bands(),
        values,
    })
}
