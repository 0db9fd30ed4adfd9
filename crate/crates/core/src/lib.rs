//! Incremental LiDAR mapping into a truncated signed distance field.
//!
//! Posed scans are fused into voxel-aligned submaps. Each submap pairs an
//! explicit sparse voxel grid (structure, free space, sampling guidance) with
//! an implicit multiresolution hash feature field decoded by a small MLP that
//! is shared across submaps. New submaps distill features from their
//! predecessor over the overlap region, retired submaps are replayed from
//! key-scans, and each submap is meshed with marching cubes.
//!
//! The [`synth`] module provides analytic scenes and a LiDAR simulator used as
//! ground truth throughout the test suite.

pub mod config;
pub mod dynamic;
pub mod error;
pub mod evaluator;
pub mod field;
pub mod mesher;
pub mod pipeline;
pub mod sampler;
pub mod scan_io;
pub mod sparse_grid;
pub mod spatial;
pub mod submap;
pub mod synth;
pub mod trainer;

pub use config::{CenterMode, Config};
pub use error::{MapError, Result};

pub type Vec3 = nalgebra::Vector3<f64>;

/// Integer voxel index in a submap's local lattice.
pub type VoxelCoord = [i64; 3];

/// Deterministic 64-bit mixer used to derive independent RNG seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
