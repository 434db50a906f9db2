//! Few-shot hyperspectral target detection.
//!
//! The crate is `no_std` (with `alloc`) and holds every numerical piece of the
//! pipeline:
//!
//! * [`diff`]: dense tensors, a reverse-mode tape, the parameter store with
//!   freeze flags, AdamW and a finite-difference gradient auditor.
//! * [`hsi`]: cubes, label maps, patches, episodes, spectral priors and the
//!   synthetic scene generator.
//! * [`dctma`]: the DCT/selective-scan spectral adapter.
//! * [`pgte`]: backbone, prior and alignment encoders, prototype rectification.
//! * [`metatrain`]: episodic dual-task training.
//! * [`ssplm`]: pseudo-labelling and test-time adaptation.
//! * [`eval`]: threshold-swept ROC curves and AUC metrics.
//!
//! File formats, threading and the command line live in the `specdetect`
//! companion crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod dctma;
pub mod diff;
pub mod error;
pub mod eval;
pub mod exec;
pub mod hsi;
pub mod math;
pub mod metatrain;
pub mod model;
pub mod pgte;
pub mod rng;
pub mod ssplm;

pub use error::{Error, Result};
