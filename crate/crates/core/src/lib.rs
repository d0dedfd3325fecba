//! Building blocks for PET/CT tumor-segmentation pipelines: NIfTI volume
//! I/O, intensity and geometric preprocessing, patch sampling, augmentation,
//! Dice-based evaluation with leaderboard ranking, the Wilcoxon/bootstrap
//! significance protocol, and verified loss/schedule kernels.
//!
//! The crate never trains or runs networks; the boundary is files in,
//! files out, so any external trainer can slot in between `prep` and `eval`.

pub mod geometry;
pub mod metrics;
pub mod nifti;
pub mod numerics;
pub mod pipeline;
pub mod rng;
pub mod sampler;
pub mod stats;
pub mod volume;

pub use nifti::{read_nifti, write_nifti, Datatype, NiftiError, NiftiHeader};
pub use volume::{MaskPair, MultiChannelVolume, Volume3D, VolumeError};
