//! Reconstruction of dynamic MR image sequences from undersampled k-space
//! with an adaptive, patch-wise shallow convolutional regularizer.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod baselines;
pub mod error;
pub mod exec;
pub mod export;
pub mod metrics;
pub mod operators;
pub mod patches;
pub mod phantom;
pub mod pipeline;
pub mod shallownet;
pub mod solvers;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{ComplexVolume, Dims, KSpaceData, SampleLayout, SamplingKind};
pub use num_complex;
