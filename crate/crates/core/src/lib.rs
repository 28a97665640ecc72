//! Pure algorithms for sim-to-real unknown-object instance segmentation.
//!
//! The crate is `no_std` and only needs an allocator. It carries the shared
//! raster and geometry types, the randomized bin-picking scene synthesis with
//! deterministic settling and rendering providers, the edge preprocessing
//! used in front of the mask generator, the watershed post-processing that
//! turns a generated grayscale mask into instances, and the per-object
//! mPA / mIoU evaluation with optimal instance matching.
//!
//! Everything that touches files, the network training stack and the CLI
//! lives in the `sim2seg` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod encode;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod imaging;
mod math;
pub mod noise;
pub mod postproc;
pub mod raster;
pub mod replay;
pub mod sample;
pub mod synth;

pub use error::CoreError;
pub use geometry::{point_cloud_from_depth, project_cloud, CameraModel, Point3, Quaternion};
pub use raster::{BinaryMap, DepthMap, ImageBuffer, InstanceMask, ValueDomain};
pub use sample::{
    validate_sample, DomainDataset, DomainItem, DomainTag, LightSpec, NoiseProfile, ObjectPose,
    SyntheticSample, Violation,
};
