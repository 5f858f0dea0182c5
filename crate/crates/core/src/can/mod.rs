//! 2-D coordinate overlay of region bots: the location mapping service.
//!
//! The unit square of the overlay is the normalized map; zone edges are
//! rounded to whole grids, so every bot manages one or more complete grids.

mod zone;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chord::{key_of, ChordError, ChordRing, Key};
use crate::inventory::{Inventory, ObjectEntry};
use crate::model::{Coord, Geometry, GridIndex, LogicalComputerId, ModelError, NodeAddress, ObjectId, RegionCoord, RegionIndex};

pub use zone::Zone;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CanError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("unknown region bot {0}")]
    UnknownBot(NodeAddress),
    #[error("greedy routing made no progress after {hops} hops; retry")]
    Retry { hops: u32 },
    #[error("zone of the owner is a single grid and cannot be split")]
    Unsplittable,
    #[error("object `{0}` already exists")]
    AlreadyExists(ObjectId),
    #[error("inventory for region ({0}, {1}) already exists")]
    InventoryExists(u32, u32),
    #[error("nothing stored at the requested location")]
    NotFound,
    #[error("grid is managed by {owner}")]
    WrongOwner { owner: NodeAddress },
    #[error("cannot remove the last region bot")]
    LastBot,
    #[error("address {0} already in the overlay")]
    DuplicateAddress(NodeAddress),
    #[error("no join point could be split after {0} attempts")]
    JoinFailed(u32),
}

/// Location record of one object, stored by the bot managing the object's grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectLocationRecord {
    pub oid: ObjectId,
    pub ocoord: Coord,
    pub lcid: LogicalComputerId,
    /// Cached addressing bot in charge of `lcid`.
    pub addressing_bot: NodeAddress,
    pub cache_version: u64,
}

#[derive(Debug, Clone, Default)]
pub struct LoadCounters {
    pub handled: u64,
    pub forwarded: u64,
}

impl LoadCounters {
    pub fn total(&self) -> u64 {
        self.handled + self.forwarded
    }
}

#[derive(Debug, Clone)]
pub struct RegionBot {
    pub address: NodeAddress,
    pub zones: Vec<Zone>,
    pub neighbors: BTreeSet<NodeAddress>,
    pub objects: BTreeMap<GridIndex, BTreeMap<ObjectId, ObjectLocationRecord>>,
    pub inventories: BTreeMap<RegionIndex, Inventory>,
    /// Lifetime totals.
    pub load: LoadCounters,
    /// Counters since the last load sample.
    pub window: LoadCounters,
}

impl RegionBot {
    fn new(address: NodeAddress, zones: Vec<Zone>) -> Self {
        Self {
            address,
            zones,
            neighbors: BTreeSet::new(),
            objects: BTreeMap::new(),
            inventories: BTreeMap::new(),
            load: LoadCounters::default(),
            window: LoadCounters::default(),
        }
    }

    pub fn owns(&self, g: GridIndex) -> bool {
        self.zones.iter().any(|z| z.contains(g))
    }

    pub fn object_count(&self) -> usize {
        self.objects.values().map(BTreeMap::len).sum()
    }

    fn distance_to(&self, px: f64, py: f64) -> f64 {
        self.zones.iter().map(|z| z.distance_to(px, py)).fold(f64::INFINITY, f64::min)
    }

    fn centroid_distance(&self, px: f64, py: f64) -> f64 {
        self.zones
            .iter()
            .map(|z| {
                let (cx, cy) = z.centroid();
                (cx - px).hypot(cy - py)
            })
            .fold(f64::INFINITY, f64::min)
    }

    fn count_handled(&mut self) {
        self.load.handled += 1;
        self.window.handled += 1;
    }

    fn count_forwarded(&mut self) {
        self.load.forwarded += 1;
        self.window.forwarded += 1;
    }
}

/// Result of routing to a coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Route {
    pub owner: NodeAddress,
    pub hops: u32,
}

/// Reply to a grid request: the grid's objects and its edge neighbours.
#[derive(Debug, Clone, PartialEq)]
pub struct GridReply {
    pub objects: Vec<(ObjectId, Coord)>,
    pub neighbors: Vec<(NodeAddress, GridIndex)>,
}

/// Outcome of one cache freshness pass over a bot's records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RefreshStats {
    pub lookups: u32,
    pub hops: u32,
    pub rewrites: u32,
    pub failures: u32,
}

#[derive(Debug, Clone)]
pub struct CanOverlay {
    geometry: Geometry,
    bots: BTreeMap<NodeAddress, RegionBot>,
    owner_map: Vec<NodeAddress>,
}

/// Maps a map point into the overlay's unit square, `(x/X, y/Y)`.
pub fn normalize(p: Coord, geometry: &Geometry) -> Result<(f64, f64), ModelError> {
    geometry.check(p)?;
    Ok((p.x / geometry.width, p.y / geometry.height))
}

impl CanOverlay {
    /// A single bootstrap bot owning the whole grid space.
    pub fn new(geometry: Geometry, first: NodeAddress) -> Self {
        let full = Zone::new(0, 0, geometry.grids_x(), geometry.grids_y());
        let mut bots = BTreeMap::new();
        bots.insert(first, RegionBot::new(first, vec![full]));
        Self { geometry, bots, owner_map: vec![first; geometry.grid_count()] }
    }

    /// Builds an overlay from an explicit zone layout. Zones must tile the map.
    pub fn with_zones(geometry: Geometry, layout: Vec<(NodeAddress, Zone)>) -> Self {
        let first = layout.first().expect("non-empty layout").0;
        let mut overlay = Self { geometry, bots: BTreeMap::new(), owner_map: vec![first; geometry.grid_count()] };
        for (address, zone) in layout {
            overlay.bots.entry(address).or_insert_with(|| RegionBot::new(address, Vec::new())).zones.push(zone);
        }
        overlay.rebuild_owner_map();
        overlay.rebuild_neighbors();
        overlay
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn len(&self) -> usize {
        self.bots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bots.is_empty()
    }

    pub fn bot(&self, address: NodeAddress) -> Option<&RegionBot> {
        self.bots.get(&address)
    }

    pub fn bots(&self) -> impl Iterator<Item = &RegionBot> {
        self.bots.values()
    }

    pub fn addresses(&self) -> impl Iterator<Item = NodeAddress> + '_ {
        self.bots.keys().copied()
    }

    pub fn contains(&self, address: NodeAddress) -> bool {
        self.bots.contains_key(&address)
    }

    fn slot(&self, g: GridIndex) -> usize {
        g.iy as usize * self.geometry.grids_x() as usize + g.ix as usize
    }

    /// Global-view owner of a grid (engine bookkeeping, not a routed query).
    pub fn owner_of_grid(&self, g: GridIndex) -> NodeAddress {
        self.owner_map[self.slot(g)]
    }

    fn rebuild_owner_map(&mut self) {
        for bot in self.bots.values() {
            for zone in &bot.zones {
                for g in zone.grids() {
                    let slot = g.iy as usize * self.geometry.grids_x() as usize + g.ix as usize;
                    self.owner_map[slot] = bot.address;
                }
            }
        }
    }

    /// Edge-adjacent grids of `g` that lie on the map, in W, E, S, N order.
    pub fn adjacent_grids(&self, g: GridIndex) -> Vec<GridIndex> {
        let (gx, gy) = (self.geometry.grids_x(), self.geometry.grids_y());
        let mut out = Vec::with_capacity(4);
        if g.ix > 0 {
            out.push(GridIndex::new(g.ix - 1, g.iy));
        }
        if g.ix + 1 < gx {
            out.push(GridIndex::new(g.ix + 1, g.iy));
        }
        if g.iy > 0 {
            out.push(GridIndex::new(g.ix, g.iy - 1));
        }
        if g.iy + 1 < gy {
            out.push(GridIndex::new(g.ix, g.iy + 1));
        }
        out
    }

    fn rebuild_neighbors(&mut self) {
        let mut sets: BTreeMap<NodeAddress, BTreeSet<NodeAddress>> =
            self.bots.keys().map(|a| (*a, BTreeSet::new())).collect();
        for iy in 0..self.geometry.grids_y() {
            for ix in 0..self.geometry.grids_x() {
                let g = GridIndex::new(ix, iy);
                let owner = self.owner_of_grid(g);
                for n in self.adjacent_grids(g) {
                    let other = self.owner_of_grid(n);
                    if other != owner {
                        sets.get_mut(&owner).expect("live owner").insert(other);
                    }
                }
            }
        }
        for (address, set) in sets {
            self.bots.get_mut(&address).expect("live").neighbors = set;
        }
    }

    /// Greedy routing towards the centre of `target`: each step forwards to
    /// the neighbour whose zone lies closest to the target, ties broken by
    /// centroid distance and then by the smaller address.
    pub fn route_to_grid(&mut self, start: NodeAddress, target: GridIndex) -> Result<Route, CanError> {
        if !self.bots.contains_key(&start) {
            return Err(CanError::UnknownBot(start));
        }
        let (px, py) = (target.ix as f64 + 0.5, target.iy as f64 + 0.5);
        let limit = self.bots.len() as u32 + 8;
        let mut current = start;
        let mut hops = 0;
        loop {
            let bot = &self.bots[&current];
            if bot.owns(target) {
                self.bots.get_mut(&current).expect("live").count_handled();
                return Ok(Route { owner: current, hops });
            }
            let here = bot.distance_to(px, py);
            let best = bot
                .neighbors
                .iter()
                .filter_map(|a| self.bots.get(a))
                .map(|n| (n.distance_to(px, py), n.centroid_distance(px, py), n.address))
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));
            match best {
                Some((d, _, next)) if d < here && hops < limit => {
                    self.bots.get_mut(&current).expect("live").count_forwarded();
                    current = next;
                    hops += 1;
                }
                _ => return Err(CanError::Retry { hops }),
            }
        }
    }

    pub fn route(&mut self, start: NodeAddress, target: Coord) -> Result<Route, CanError> {
        let g = self.geometry.grid_index(target)?;
        self.route_to_grid(start, g)
    }

    /// Adds `address` by splitting the zone fragment that contains `point`.
    /// The new bot takes the right (or top) half.
    pub fn join_at(&mut self, address: NodeAddress, point: GridIndex, start: NodeAddress) -> Result<Route, CanError> {
        if self.bots.contains_key(&address) {
            return Err(CanError::DuplicateAddress(address));
        }
        let route = self.route_to_grid(start, point)?;
        let owner = self.bots.get_mut(&route.owner).expect("live");
        let idx = owner.zones.iter().position(|z| z.contains(point)).expect("owner holds the grid");
        let (keep, give) = owner.zones[idx].split().ok_or(CanError::Unsplittable)?;
        owner.zones[idx] = keep;
        let mut fresh = RegionBot::new(address, vec![give]);
        let moving: Vec<GridIndex> = owner.objects.keys().filter(|g| give.contains(**g)).copied().collect();
        for g in moving {
            let records = owner.objects.remove(&g).expect("present");
            fresh.objects.insert(g, records);
        }
        let geometry = self.geometry;
        let moving: Vec<RegionIndex> = owner
            .inventories
            .keys()
            .filter(|r| give.contains(geometry.region_anchor_grid(**r)))
            .copied()
            .collect();
        for r in moving {
            let inv = owner.inventories.remove(&r).expect("present");
            fresh.inventories.insert(r, inv);
        }
        self.bots.insert(address, fresh);
        self.rebuild_owner_map();
        self.rebuild_neighbors();
        Ok(route)
    }

    /// Joins at random points, redirecting away from single-grid owners.
    pub fn join_random<R: Rng>(&mut self, address: NodeAddress, start: NodeAddress, rng: &mut R) -> Result<Route, CanError> {
        const ATTEMPTS: u32 = 64;
        for _ in 0..ATTEMPTS {
            let point = GridIndex::new(rng.gen_range(0..self.geometry.grids_x()), rng.gen_range(0..self.geometry.grids_y()));
            match self.join_at(address, point, start) {
                Err(CanError::Unsplittable) => continue,
                other => return other,
            }
        }
        Err(CanError::JoinFailed(ATTEMPTS))
    }

    /// Graceful departure. Each zone fragment goes to the smallest-address
    /// bot that can absorb it as a rectangle, otherwise to the smallest-address
    /// abutting bot as an extra fragment.
    pub fn leave(&mut self, address: NodeAddress) -> Result<RegionBot, CanError> {
        if !self.bots.contains_key(&address) {
            return Err(CanError::UnknownBot(address));
        }
        if self.bots.len() == 1 {
            return Err(CanError::LastBot);
        }
        let mut leaving = self.bots.remove(&address).expect("checked");
        // A fragment may touch only the leaving bot's other fragments; it is
        // handed over once one of those has a new owner.
        let mut pending: VecDeque<Zone> = leaving.zones.iter().copied().collect();
        let mut stalled = 0;
        while let Some(zone) = pending.pop_front() {
            let merge_target = self
                .bots
                .values()
                .find_map(|b| b.zones.iter().position(|z| z.merge(&zone).is_some()).map(|i| (b.address, i)));
            let abutting = self.bots.values().find(|b| b.zones.iter().any(|z| z.abuts(&zone))).map(|b| b.address);
            if merge_target.is_none() && abutting.is_none() {
                stalled += 1;
                assert!(stalled <= pending.len() + 1, "leaving zones are disconnected from the overlay");
                pending.push_back(zone);
                continue;
            }
            stalled = 0;
            let receiver = match merge_target {
                Some((addr, i)) => {
                    let bot = self.bots.get_mut(&addr).expect("live");
                    bot.zones[i] = bot.zones[i].merge(&zone).expect("checked");
                    addr
                }
                None => {
                    let addr = abutting.expect("checked");
                    self.bots.get_mut(&addr).expect("live").zones.push(zone);
                    addr
                }
            };
            let bot = self.bots.get_mut(&receiver).expect("live");
            let grids: Vec<GridIndex> = leaving.objects.keys().filter(|g| zone.contains(**g)).copied().collect();
            for g in grids {
                bot.objects.insert(g, leaving.objects.remove(&g).expect("present"));
            }
            let geometry = self.geometry;
            let regions: Vec<RegionIndex> = leaving
                .inventories
                .keys()
                .filter(|r| zone.contains(geometry.region_anchor_grid(**r)))
                .copied()
                .collect();
            for r in regions {
                bot.inventories.insert(r, leaving.inventories.remove(&r).expect("present"));
            }
            coalesce(&mut bot.zones);
        }
        self.rebuild_owner_map();
        self.rebuild_neighbors();
        Ok(leaving)
    }

    pub fn object_create(&mut self, start: NodeAddress, record: ObjectLocationRecord) -> Result<Route, CanError> {
        let g = self.geometry.grid_index(record.ocoord)?;
        let route = self.route_to_grid(start, g)?;
        let bot = self.bots.get_mut(&route.owner).expect("live");
        let slot = bot.objects.entry(g).or_default();
        if slot.contains_key(&record.oid) {
            return Err(CanError::AlreadyExists(record.oid));
        }
        slot.insert(record.oid.clone(), record);
        Ok(route)
    }

    fn region_index(&self, rcoord: RegionCoord) -> Result<RegionIndex, CanError> {
        self.geometry
            .region_index_of_corner(rcoord)
            .ok_or(CanError::Model(ModelError::OutsideMap { x: rcoord.x, y: rcoord.y }))
    }

    pub fn inventory_create(&mut self, start: NodeAddress, inv: Inventory) -> Result<Route, CanError> {
        let r = self.region_index(inv.rcoord)?;
        let route = self.route_to_grid(start, self.geometry.region_anchor_grid(r))?;
        let bot = self.bots.get_mut(&route.owner).expect("live");
        if bot.inventories.contains_key(&r) {
            return Err(CanError::InventoryExists(r.rx, r.ry));
        }
        bot.inventories.insert(r, inv);
        Ok(route)
    }

    /// Routed insert-or-replace of one object in its region's inventory.
    pub fn inventory_upsert(&mut self, start: NodeAddress, obj: &ObjectEntry) -> Result<Route, CanError> {
        let r = self.geometry.region_index(obj.ocoord)?;
        let route = self.route_to_grid(start, self.geometry.region_anchor_grid(r))?;
        let bot = self.bots.get_mut(&route.owner).expect("live");
        let inv = bot.inventories.get_mut(&r).ok_or(CanError::NotFound)?;
        inv.upsert(obj.clone());
        Ok(route)
    }

    /// Looks up the record of the object located exactly at `coord`.
    pub fn object_location_retrieval(
        &mut self,
        start: NodeAddress,
        coord: Coord,
        oid: Option<&ObjectId>,
    ) -> Result<(ObjectLocationRecord, Route), CanError> {
        let g = self.geometry.grid_index(coord)?;
        let route = self.route_to_grid(start, g)?;
        let bot = &self.bots[&route.owner];
        let record = bot
            .objects
            .get(&g)
            .and_then(|records| match oid {
                Some(oid) => records.get(oid),
                None => records.values().find(|r| r.ocoord == coord),
            })
            .cloned()
            .ok_or(CanError::NotFound)?;
        Ok((record, route))
    }

    pub fn inventory_retrieval(&mut self, start: NodeAddress, rcoord: RegionCoord) -> Result<(Inventory, Route), CanError> {
        let r = self.region_index(rcoord)?;
        let route = self.route_to_grid(start, self.geometry.region_anchor_grid(r))?;
        let inv = self.bots[&route.owner].inventories.get(&r).cloned().ok_or(CanError::NotFound)?;
        Ok((inv, route))
    }

    /// Direct query to `bot` for the four edge neighbours of `grid`, each
    /// paired with the bot managing it.
    pub fn neighbor_query(&mut self, bot: NodeAddress, grid: GridIndex) -> Result<Vec<(NodeAddress, GridIndex)>, CanError> {
        let owner = self.owner_of_grid(grid);
        let target = self.bots.get_mut(&bot).ok_or(CanError::UnknownBot(bot))?;
        target.count_handled();
        if owner != bot {
            return Err(CanError::WrongOwner { owner });
        }
        Ok(self.adjacent_grids(grid).into_iter().map(|g| (self.owner_of_grid(g), g)).collect())
    }

    /// Direct grid request: the objects on `grid` plus its neighbour pairs.
    pub fn grid_request(&mut self, bot: NodeAddress, grid: GridIndex) -> Result<GridReply, CanError> {
        let neighbors = self.neighbor_query(bot, grid)?;
        let objects = self.bots[&bot]
            .objects
            .get(&grid)
            .map(|m| m.values().map(|r| (r.oid.clone(), r.ocoord)).collect())
            .unwrap_or_default();
        Ok(GridReply { objects, neighbors })
    }

    /// Direct storage-address query to `bot` for one object on `grid`.
    pub fn location_query(&mut self, bot: NodeAddress, grid: GridIndex, oid: &ObjectId) -> Result<ObjectLocationRecord, CanError> {
        let owner = self.owner_of_grid(grid);
        let target = self.bots.get_mut(&bot).ok_or(CanError::UnknownBot(bot))?;
        target.count_handled();
        if owner != bot {
            return Err(CanError::WrongOwner { owner });
        }
        target.objects.get(&grid).and_then(|m| m.get(oid)).cloned().ok_or(CanError::NotFound)
    }

    /// Re-resolves the addressing bot of every record held by `bot` through
    /// routed ring lookups starting at `ring_entry`, rewriting stale entries.
    pub fn cache_refresh(&mut self, bot: NodeAddress, ring: &mut ChordRing, ring_entry: Key) -> Result<RefreshStats, CanError> {
        let bits = ring.config().bits;
        let target = self.bots.get_mut(&bot).ok_or(CanError::UnknownBot(bot))?;
        let mut stats = RefreshStats::default();
        for record in target.objects.values_mut().flat_map(|m| m.values_mut()) {
            stats.lookups += 1;
            match ring.lookup(ring_entry, key_of(&record.lcid, bits)) {
                Ok(found) => {
                    stats.hops += found.hops;
                    if found.owner_address != record.addressing_bot {
                        record.addressing_bot = found.owner_address;
                        record.cache_version += 1;
                        stats.rewrites += 1;
                    }
                }
                Err(ChordError::RetryAfterStabilization { hops }) => {
                    stats.hops += hops;
                    stats.failures += 1;
                }
                Err(_) => stats.failures += 1,
            }
        }
        Ok(stats)
    }

    /// Zeroes every bot's window counters and returns the previous values.
    pub fn take_load_window(&mut self) -> Vec<(NodeAddress, u64)> {
        self.bots
            .values_mut()
            .map(|b| {
                let total = b.window.total();
                b.window = LoadCounters::default();
                (b.address, total)
            })
            .collect()
    }

    /// Adds a bot's load window to a departing tally before it leaves.
    pub fn window_of(&self, address: NodeAddress) -> u64 {
        self.bots.get(&address).map_or(0, |b| b.window.total())
    }
}

/// Merges fragments of one bot pairwise while their union stays rectangular.
fn coalesce(zones: &mut Vec<Zone>) {
    'outer: loop {
        for i in 0..zones.len() {
            for j in i + 1..zones.len() {
                if let Some(m) = zones[i].merge(&zones[j]) {
                    zones[i] = m;
                    zones.remove(j);
                    continue 'outer;
                }
            }
        }
        return;
    }
}
