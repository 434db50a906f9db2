//! Tri-encoder: transformer backbone, prior MLP and alignment head, plus
//! the physical consistency loss and prototype rectification.

mod backbone;
mod prior;
mod prototype;

pub use backbone::{backbone_encode, BackboneParams};
pub use prior::{align_encode, physical_loss, prior_encode, AlignEncoderParams, PriorEncoderParams};
pub use prototype::{cosine, rectify_prototype, Prototype};
