//! Scenes, patches, episodes and spectral priors.

mod cube;
mod episode;
mod patch;
mod prior;
mod synth;

pub use cube::{normalize_bands, BandScaling, HsiCube, LabelMap};
pub use episode::{sample_episode, Episode, Sample};
pub use patch::{extract_patch, mirror_index, Patch};
pub use prior::{load_prior, parse_prior_text, resample_linear, SpectralPrior};
pub use synth::{synth_scene, synthetic_prior, SynthConfig, SynthScene};
