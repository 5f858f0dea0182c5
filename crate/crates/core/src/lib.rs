//! Deterministic simulation of peer-to-peer virtual-world content sharing.
//!
//! Two overlays cooperate: a ring of addressing bots maps logical computers to
//! replica addresses, and a 2-D coordinate overlay of region bots maps map
//! locations to objects and region inventories. Clients retrieve nearby
//! content by walking grids outward from their position and skip downloads
//! whose Merkle hashes already match the local cache.

pub mod can;
pub mod chord;
pub mod cli;
pub mod client;
pub mod inventory;
pub mod model;
pub mod sim;
