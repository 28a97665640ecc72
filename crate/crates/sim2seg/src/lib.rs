//! Sim-to-real unknown-object instance segmentation: synthetic data
//! generation, unpaired image translation, paired mask generation,
//! post-processing and evaluation, driven by the `sim2seg` tool.

pub mod checkpoint;
pub mod config;
pub mod convert;
pub mod dataset;
pub mod error;
pub mod io;
pub mod losses;
pub mod nn;
pub mod pipeline;
pub mod segmentation;
pub mod toy;
pub mod translation;

pub use error::{Error, Result};
