//! Shared geometry, identifiers and hashing primitives.

mod geometry;
mod hash;
mod ids;

pub use geometry::{
    cycle_period, distance, grid_of, region_of, search_radius, Coord, Geometry, GridCoord,
    GridIndex, RegionCoord, RegionIndex,
};
pub use hash::{merkle_root, sha256, sha256_concat, Digest};
pub use ids::{LogicalComputerId, NodeAddress, ObjectId, RegionId};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("coordinate ({x}, {y}) lies outside the map")]
    OutsideMap { x: f64, y: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("merkle root of an empty leaf list is undefined")]
    EmptyLeaves,
}
