//! Brute-force oracles and builders shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vwshare::can::CanOverlay;
use vwshare::chord::{ChordConfig, ChordRing, Key};
use vwshare::inventory::{FileProperties, ObjectEntry, ObjectProperties};
use vwshare::model::{Coord, Geometry, GridIndex, LogicalComputerId, NodeAddress, ObjectId};

pub const BITS: u32 = 32;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A stabilized ring of `n` bots; addresses differ per seed.
pub fn ring(n: u32, seed: u64) -> ChordRing {
    let mut ring = ChordRing::new(ChordConfig { bits: BITS, ..ChordConfig::default() });
    for i in 0..n {
        ring.join(NodeAddress(seed as u32 * 100_000 + i)).expect("distinct ids");
    }
    ring.stabilize_all();
    ring
}

/// The bot whose segment `[id, next id)` holds `key`, by scanning all ids.
pub fn ring_owner_scan(ids: &[Key], key: Key) -> Key {
    ids.iter().copied().filter(|&id| id <= key).max().unwrap_or_else(|| *ids.iter().max().expect("non-empty ring"))
}

pub fn random_key(rng: &mut ChaCha8Rng) -> Key {
    rng.gen::<u64>() & ((1u64 << BITS) - 1)
}

pub fn geometry() -> Geometry {
    Geometry::new(1500.0, 1200.0, 100.0, 9).expect("default map")
}

/// A coordinate overlay grown to `n` bots by random joins.
pub fn can(n: u32, seed: u64) -> CanOverlay {
    let mut rng = rng(seed);
    let mut can = CanOverlay::new(geometry(), NodeAddress(0));
    for i in 1..n {
        can.join_random(NodeAddress(i), NodeAddress(0), &mut rng).expect("room to split");
    }
    can
}

/// The bot with a zone covering `g`, by scanning every zone.
pub fn can_owner_scan(can: &CanOverlay, g: GridIndex) -> NodeAddress {
    let owners: Vec<NodeAddress> = can.bots().filter(|b| b.zones.iter().any(|z| z.contains(g))).map(|b| b.address).collect();
    assert_eq!(owners.len(), 1, "zones overlap or leave a gap at {g:?}");
    owners[0]
}

pub fn random_grid(g: &Geometry, rng: &mut ChaCha8Rng) -> GridIndex {
    GridIndex::new(rng.gen_range(0..g.grids_x()), rng.gen_range(0..g.grids_y()))
}

/// An object with `types` file types of `files` random files each.
pub fn random_object(types: usize, files: usize, rng: &mut ChaCha8Rng) -> ObjectEntry {
    let groups = (0..types)
        .map(|t| {
            let fs = (0..files)
                .map(|f| {
                    let len = rng.gen_range(1..64);
                    (FileProperties::named(format!("f{f}")), (0..len).map(|_| rng.gen()).collect())
                })
                .collect();
            (format!("T{t}"), fs)
        })
        .collect();
    ObjectEntry::build(
        ObjectId::new(format!("obj{}", rng.gen::<u32>())),
        Coord::new(rng.gen_range(0.0..1500.0), rng.gen_range(0.0..1200.0)),
        LogicalComputerId::new("Logical-Computer-100"),
        ObjectProperties::new("Object", "Author", "1"),
        groups,
    )
    .expect("non-empty object")
}
