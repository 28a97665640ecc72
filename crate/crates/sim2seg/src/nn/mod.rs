//! A small CPU neural-network engine: NCHW tensors, reverse-mode autodiff,
//! convolution layers, optimizer state and tensor archives.

pub mod archive;
pub mod graph;
pub mod kernels;
pub mod nets;
pub mod params;
pub mod tensor;

pub use archive::Archive;
pub use graph::{Grads, Graph, Var};
pub use nets::{Knockout, PatchDiscriminator, PatchSpec, ResnetGenerator, ResnetSpec, UnetGenerator, UnetSpec, Upsampling};
pub use params::{linear_decay_lr, Adam, Param, ParamSet};
pub use tensor::{Shape, Tensor};
