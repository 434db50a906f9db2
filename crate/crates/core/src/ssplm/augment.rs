use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::hsi::Patch;
use crate::rng;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    /// Standard deviation of the additive spectral noise.
    pub noise_std: f64,
    pub rotations: bool,
    pub flips: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            noise_std: 0.01,
            rotations: true,
            flips: true,
        }
    }
}

/// `quarter_turns` clockwise rotations, then the optional flips.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Transform {
    pub quarter_turns: u8,
    pub flip_h: bool,
    pub flip_v: bool,
}

pub fn draw_transform(cfg: &AugmentConfig, r: &mut rng::Rng) -> Transform {
    Transform {
        quarter_turns: if cfg.rotations { r.random_range(0..4u8) } else { 0 },
        flip_h: cfg.flips && r.random_bool(0.5),
        flip_v: cfg.flips && r.random_bool(0.5),
    }
}

pub fn apply_transform(patch: &Patch, t: Transform) -> Patch {
    let (s, b) = (patch.side, patch.bands);
    let mut values = Vec::with_capacity(patch.values.len());
    for r in 0..s {
        for c in 0..s {
            // undo the flips, then the rotation, to find the source pixel
            let r1 = if t.flip_v { s - 1 - r } else { r };
            let c1 = if t.flip_h { s - 1 - c } else { c };
            let (mut sr, mut sc) = (r1, c1);
            for _ in 0..t.quarter_turns % 4 {
                (sr, sc) = (s - 1 - sc, sr);
            }
            values.extend_from_slice(patch.at(sr, sc));
        }
    }
    Patch {
        center: patch.center,
        side: s,
        bands: b,
        values,
    }
}

/// One hybrid view: a random rotation, random flips, then i.i.d. Gaussian
/// noise on every value. Fully determined by `seed`.
pub fn augment(patch: &Patch, cfg: &AugmentConfig, seed: u64) -> Result<Patch> {
    if !(cfg.noise_std >= 0.0) {
        return Err(Error::Config("noise std must be non-negative".into()));
    }
    let mut r = rng::seeded(seed);
    let mut out = apply_transform(patch, draw_transform(cfg, &mut r));
    if cfg.noise_std > 0.0 {
        for v in &mut out.values {
            *v += cfg.noise_std * r.sample::<f64, _>(StandardNormal);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn marked(s: usize) -> Patch {
        Patch::from_values(s, 2, (0..s * s * 2).map(|v| v as f64).collect()).unwrap()
    }

    #[test]
    fn identity_draw() {
        let p = marked(3);
        let cfg = AugmentConfig {
            noise_std: 0.0,
            rotations: false,
            flips: false,
        };
        assert_eq!(augment(&p, &cfg, 9).unwrap(), p);
    }

    #[test]
    fn four_turns_close() {
        let p = marked(5);
        let mut q = p.clone();
        let turn = Transform {
            quarter_turns: 1,
            ..Transform::default()
        };
        for _ in 0..4 {
            q = apply_transform(&q, turn);
        }
        assert_eq!(q, p);
        assert_ne!(apply_transform(&p, turn), p);
    }

    #[test]
    fn half_turn_swaps_corners() {
        let p = Patch::from_values(3, 1, vec![1.0, 0.0, 2.0, 0.0, 5.0, 0.0, 3.0, 0.0, 4.0]).unwrap();
        let half = Transform {
            quarter_turns: 2,
            ..Transform::default()
        };
        let q = apply_transform(&p, half);
        assert_eq!((q.at(0, 0)[0], q.at(2, 2)[0]), (4.0, 1.0));
        assert_eq!((q.at(0, 2)[0], q.at(2, 0)[0]), (3.0, 2.0));
        assert_eq!(q.at(1, 1)[0], 5.0);
        // index-map oracle: (r, c) <- (s-1-r, s-1-c)
        for r in 0..3 {
            for c in 0..3 {
                assert_eq!(q.at(r, c), p.at(2 - r, 2 - c));
            }
        }
    }

    #[test]
    fn quarter_turn_is_clockwise() {
        let p = marked(3);
        let q = apply_transform(&p, Transform { quarter_turns: 1, ..Transform::default() });
        for r in 0..3 {
            for c in 0..3 {
                assert_eq!(q.at(r, c), p.at(2 - c, r));
            }
        }
    }

    #[test]
    fn noiseless_views_keep_values() {
        let p = marked(5);
        let cfg = AugmentConfig {
            noise_std: 0.0,
            ..AugmentConfig::default()
        };
        for seed in 0..20 {
            let q = augment(&p, &cfg, seed).unwrap();
            assert_eq!((q.side, q.bands), (p.side, p.bands));
            let mut a = q.values.clone();
            a.sort_by(f64::total_cmp);
            assert_eq!(a, p.values);
            // spectra move as whole pixels
            for px in q.values.chunks(2) {
                assert_eq!(px[1], px[0] + 1.0);
            }
        }
        let noisy = AugmentConfig::default();
        assert_eq!(augment(&p, &noisy, 3).unwrap(), augment(&p, &noisy, 3).unwrap());
        assert_ne!(augment(&p, &noisy, 3).unwrap(), augment(&p, &noisy, 4).unwrap());
    }
}
