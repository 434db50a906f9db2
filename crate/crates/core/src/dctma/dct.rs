use alloc::vec::Vec;

use crate::diff::Tensor;
use crate::hsi::Patch;
use crate::math;

/// Orthonormal DCT-II matrix `C[k][i] = s_k·cos(π(2i+1)k / 2n)`, with
/// `s_0 = √(1/n)` and `s_k = √(2/n)` otherwise.
pub fn dct_matrix(n: usize) -> Tensor {
    let mut c = Vec::with_capacity(n * n);
    let nf = n as f64;
    for k in 0..n {
        let s = if k == 0 { math::sqrt(1.0 / nf) } else { math::sqrt(2.0 / nf) };
        for i in 0..n {
            c.push(s * math::cos(core::f64::consts::PI * (2 * i + 1) as f64 * k as f64 / (2.0 * nf)));
        }
    }
    Tensor::from_parts(n, n, c)
}

/// DCT along the spectral axis of the flattened `[B, s²]` patch matrix.
/// Returns the `[B, s²]` coefficient matrix.
pub fn dct_spectral(patch: &Patch) -> Tensor {
    apply_columns(&dct_matrix(patch.bands), patch, false)
}

/// Inverse of [`dct_spectral`] (transpose of the orthonormal matrix).
pub fn idct_spectral(coeffs: &Tensor) -> Tensor {
    let (b, t) = (coeffs.rows(), coeffs.cols());
    let c = dct_matrix(b);
    let mut out = alloc::vec![0.0; b * t];
    for i in 0..b {
        for k in 0..b {
            let ck = c.get(k, i);
            for col in 0..t {
                out[i * t + col] += ck * coeffs.get(k, col);
            }
        }
    }
    Tensor::from_parts(b, t, out)
}

fn apply_columns(c: &Tensor, patch: &Patch, transpose: bool) -> Tensor {
    let (b, t) = (patch.bands, patch.token_count());
    let mut out = alloc::vec![0.0; b * t];
    for tok in 0..t {
        let spec = &patch.values[tok * b..(tok + 1) * b];
        for k in 0..b {
            let mut acc = 0.0;
            for (i, &x) in spec.iter().enumerate() {
                acc += if transpose { c.get(i, k) } else { c.get(k, i) } * x;
            }
            out[k * t + tok] = acc;
        }
    }
    Tensor::from_parts(b, t, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::Rng as _;

    /// Direct DCT-II sum, written independently of the matrix routine.
    fn dct_direct(x: &[f64]) -> Vec<f64> {
        let n = x.len() as f64;
        (0..x.len())
            .map(|k| {
                let s: f64 = x
                    .iter()
                    .enumerate()
                    .map(|(i, v)| v * libm::cos(core::f64::consts::PI / n * (i as f64 + 0.5) * k as f64))
                    .sum();
                s * if k == 0 { libm::sqrt(1.0 / n) } else { libm::sqrt(2.0 / n) }
            })
            .collect()
    }

    #[test]
    fn constant_spectrum_goes_to_dc() {
        let p = Patch::uniform(1, &[2.0; 4]).unwrap();
        let f = dct_spectral(&p);
        assert!((f.data()[0] - 4.0).abs() < 1e-12);
        assert!(f.data()[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn two_band_difference() {
        let p = Patch::uniform(1, &[1.0, -1.0]).unwrap();
        let f = dct_spectral(&p);
        assert!(f.data()[0].abs() < 1e-12);
        assert!((f.data()[1] - 1.414_213_562_373_095).abs() < 1e-12);
    }

    #[test]
    fn matches_direct_sum_and_inverts() {
        let mut r = crate::rng::seeded(4);
        let spec: Vec<f64> = (0..16).map(|_| r.random::<f64>()).collect();
        let p = Patch::uniform(1, &spec).unwrap();
        let f = dct_spectral(&p);
        for (a, b) in f.data().iter().zip(dct_direct(&spec)) {
            assert!((a - b).abs() < 1e-12);
        }
        let back = idct_spectral(&f);
        for (a, b) in back.data().iter().zip(&spec) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn columns_are_per_token() {
        let vals = vec![1.0, 2.0, 3.0, 0.0, 0.0, 1.0, 5.0, 5.0, 5.0];
        let p = Patch::from_values(1, 9, vals.clone()).unwrap();
        let f = dct_spectral(&p);
        assert_eq!(f.shape(), &[9, 1]);
        let direct = dct_direct(&vals);
        for (a, b) in f.data().iter().zip(direct) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
