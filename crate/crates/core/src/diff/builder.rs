use alloc::vec::Vec;

use rand::Rng as _;

use super::{ParamId, ParamStore};
use crate::rng;
use crate::{Error, Result};

/// How a fresh parameter is filled.
#[derive(Debug, Clone)]
pub enum Init {
    /// `U(-1/√fan_in, 1/√fan_in)` with `fan_in` the last extent, times `gain`.
    FanIn(f64),
    Zeros,
    Constant(f32),
    Values(Vec<f32>),
}

/// Registers parameters on a fresh store, or looks them up on an existing one.
///
/// Model code describes its parameters once through [`ParamBuilder::param`];
/// the same description initialises a new model or binds to a checkpoint.
/// Random draws are keyed on the parameter name, so adding a tensor never
/// changes the initial values of the others.
pub struct ParamBuilder<'s> {
    store: &'s mut ParamStore,
    seed: Option<u64>,
}

impl<'s> ParamBuilder<'s> {
    pub fn init(store: &'s mut ParamStore, seed: u64) -> Self {
        Self {
            store,
            seed: Some(seed),
        }
    }

    pub fn bind(store: &'s mut ParamStore) -> Self {
        Self { store, seed: None }
    }

    pub fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<ParamId> {
        let Some(seed) = self.seed else {
            let id = self.store.id(name)?;
            if self.store.entry(id).shape != shape {
                return Err(Error::Shape {
                    op: "bind",
                    detail: alloc::format!(
                        "{name}: checkpoint {:?}, model {:?}",
                        self.store.entry(id).shape,
                        shape
                    ),
                });
            }
            return Ok(id);
        };
        let n: usize = shape.iter().product();
        let value = match init {
            Init::FanIn(gain) => {
                let fan_in = *shape.last().unwrap_or(&1) as f64;
                let bound = gain / crate::math::sqrt(fan_in);
                let mut r = rng::seeded(rng::derive(seed, &[name_hash(name)]));
                (0..n)
                    .map(|_| (r.random_range(-bound..=bound)) as f32)
                    .collect()
            }
            Init::Zeros => alloc::vec![0.0; n],
            Init::Constant(c) => alloc::vec![c; n],
            Init::Values(v) => v,
        };
        self.store.register(name, shape, value)
    }
}

fn name_hash(name: &str) -> u64 {
    // FNV-1a
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}
