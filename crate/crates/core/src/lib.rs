//! Active-vision reconstruction of multi-object voxel scenes.
//!
//! Camera views chosen on a discrete viewing sphere are rendered, lifted
//! into 3D feature volumes, rotated into the frame of the first view and
//! fused by a 3D convolutional GRU. Decode heads predict occupancy,
//! instance embeddings and category logits; a policy picks the next view.
//!
//! The crate is organised bottom-up:
//!
//! - [`scene`]: procedural ground-truth scenes and the `VXG1` file format
//! - [`camera`]: viewing sphere, poses, action graph, egomotion noise
//! - [`render`]: grid-traversal raycaster producing RGB, depth and masks
//! - [`lift`]: unprojection into feature volumes and rigid warping
//! - [`nn`]: a small reverse-mode tensor engine (conv3d, losses, SGD)
//! - [`memory`]: the recurrent memory, decode heads, episodes and training
//! - [`cluster`]: k-means, oversegment-and-merge, cluster classification
//! - [`policy`]: view-selection baselines and REINFORCE training
//! - [`metrics`]: IoU, percent increase and the evaluation harness
//! - [`config`] / [`experiment`]: run configuration and orchestration

pub mod camera;
pub mod cluster;
pub mod config;
pub mod error;
pub mod experiment;
pub mod lift;
pub mod memory;
pub mod metrics;
pub mod nn;
pub mod policy;
pub mod render;
pub mod rng;
pub mod scene;
pub mod selftest;
pub mod tensor_io;

pub use error::{Error, Result};

/// Version string stamped into every artifact written to disk.
pub const CODE_VERSION: &str = concat!("geomem ", env!("CARGO_PKG_VERSION"));
