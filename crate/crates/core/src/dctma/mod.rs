//! Frequency-aware spectral adapter.
//!
//! A patch is read two ways. The spectral branch takes an orthonormal DCT-II
//! down every pixel spectrum, splits the coefficients into low/mid/high
//! groups, encodes and pools each group and mixes the three descriptors with
//! softmax gating. The spatial branch runs a selective state-space scan over
//! the row-major pixel sequence. The two results modulate each other through
//! sigmoid cross-gates and a fusion projection produces the adapter feature.

mod adapter;
mod dct;
pub(crate) mod fusion;
mod partition;
mod spectral;
mod ssm;

pub use adapter::{dctma_forward, AdapterParams};
pub use dct::{dct_matrix, dct_spectral, idct_spectral};
pub use fusion::{cross_gate, cross_gate_fuse, CrossGate, FusionParams};
pub(crate) use fusion::linear;
pub use partition::{build_partition, FreqGroup, FreqPartition};
pub use spectral::{group_encode, spectral_gate, SpectralBranchParams};
pub use ssm::{selective_scan, zoh_discretize, SsmParams};
