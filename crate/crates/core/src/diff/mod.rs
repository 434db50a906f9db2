//! Minimal dense-tensor arithmetic with reverse-mode gradients.
//!
//! Parameters live in a [`ParamStore`] as 32-bit values; every forward pass
//! works on a 64-bit [`ParamValues`] snapshot through a [`Graph`] tape.

mod builder;
mod gradcheck;
mod graph;
mod optim;
mod store;
mod tensor;

pub use builder::{Init, ParamBuilder};
pub use gradcheck::{finite_difference_check, sample_coords, FdReport};
pub use graph::{Graph, NodeId};
pub(crate) use graph::zoh_factors;
pub use optim::{adamw_update, OptimConfig};
pub use store::{backward_gradients, ParamEntry, ParamGrads, ParamId, ParamStore, ParamValues};
pub use tensor::Tensor;
