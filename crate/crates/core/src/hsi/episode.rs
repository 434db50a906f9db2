use alloc::format;
use alloc::vec::Vec;

use rand::seq::{IndexedRandom, SliceRandom};

use super::cube::{HsiCube, LabelMap};
use super::patch::{extract_patch, Patch};
use crate::rng;
use crate::{Error, Result};

/// One labelled pixel of an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sample {
    pub i: usize,
    pub j: usize,
    /// Source-scene class id.
    pub class: u16,
    /// Position of the class among the episode's ways, `0..N`.
    pub way: usize,
}

/// N-way K-shot task: `N·K` support samples and `M_q` query samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Episode {
    pub ways: usize,
    pub shots: usize,
    pub classes: Vec<u16>,
    pub support: Vec<Sample>,
    pub query: Vec<Sample>,
    pub seed: u64,
}

impl Episode {
    pub fn support_of(&self, way: usize) -> impl Iterator<Item = &Sample> {
        self.support.iter().filter(move |s| s.way == way)
    }

    pub fn patches(cube: &HsiCube, samples: &[Sample], side: usize) -> Result<Vec<Patch>> {
        samples
            .iter()
            .map(|s| extract_patch(cube, s.i, s.j, side))
            .collect()
    }
}

/// Draws an episode. Classes are picked without replacement among the labelled
/// classes of `labels`; `query_total` is split as evenly as possible across the
/// ways (earlier ways take the remainder). Fully determined by `seed`.
pub fn sample_episode(
    cube: &HsiCube,
    labels: &LabelMap,
    ways: usize,
    shots: usize,
    query_total: usize,
    seed: u64,
) -> Result<Episode> {
    if !labels.matches(cube) {
        return Err(Error::Config("label map does not match cube".into()));
    }
    if ways == 0 || shots == 0 {
        return Err(Error::Config("ways and shots must be positive".into()));
    }
    let classes = labels.classes();
    if classes.len() < ways {
        return Err(Error::Config(format!(
            "{ways}-way episode needs {ways} classes, scene has {}",
            classes.len()
        )));
    }
    let mut r = rng::seeded(seed);
    let mut chosen: Vec<u16> = classes.choose_multiple(&mut r, ways).copied().collect();
    chosen.sort_unstable();
    let per_query = query_total.div_ceil(ways);

    let mut support = Vec::with_capacity(ways * shots);
    let mut query = Vec::with_capacity(query_total);
    for (way, &class) in chosen.iter().enumerate() {
        let mut pixels: Vec<(usize, usize)> = (0..labels.height())
            .flat_map(|i| (0..labels.width()).map(move |j| (i, j)))
            .filter(|&(i, j)| labels.get(i, j) == class)
            .collect();
        let q = query_total / ways + usize::from(way < query_total % ways);
        if pixels.len() < shots + per_query {
            return Err(Error::InsufficientSamples {
                class,
                available: pixels.len(),
                needed: shots + per_query,
            });
        }
        let (picked, _) = pixels.partial_shuffle(&mut r, shots + q);
        let sample = |&(i, j): &(usize, usize)| Sample { i, j, class, way };
        support.extend(picked[..shots].iter().map(sample));
        query.extend(picked[shots..].iter().map(sample));
    }
    Ok(Episode {
        ways,
        shots,
        classes: chosen,
        support,
        query,
        seed,
    })
}
