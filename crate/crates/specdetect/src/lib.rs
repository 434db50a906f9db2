pub mod cli;
pub mod config;
pub mod exec;
pub mod formats;
pub mod pipeline;

pub use specdetect_core as core;
