//! Client-side retrieval: CRC inventory construction, proximity-based grid
//! traversal, hash-checked loading and cache eviction.
//!
//! Timing: one cycle per message. Requests that do not depend on each other
//! are in flight together (the region inventory fetches, the route to the
//! origin grid, each traversal wavefront, the sweep's location queries).
//! Object loads go through a single loader one at a time, in the order the
//! strategy produces them.

mod storage;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::can::{CanError, CanOverlay, GridReply};
use crate::chord::{key_of, ChordRing, DirectError, MappingRecord};
use crate::inventory::{diff_objects, recompute_hashes, Inventory, ObjectEntry};
use crate::model::{distance, Coord, Geometry, GridIndex, ModelError, NodeAddress, ObjectId, RegionIndex};

pub use storage::{LogicalComputer, Storage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Grid traversal outward from the client, with cached addressing bots.
    #[serde(rename = "improved", alias = "proximity")]
    Proximity,
    /// CRC inventory order, full ring lookup per object.
    Basic,
    /// Basic, sorted by distance to the client.
    DistanceSorted,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Proximity, Strategy::Basic, Strategy::DistanceSorted];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Proximity => "improved",
            Strategy::Basic => "basic",
            Strategy::DistanceSorted => "distance_sorted",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "improved" | "proximity" => Ok(Strategy::Proximity),
            "basic" => Ok(Strategy::Basic),
            "distance_sorted" => Ok(Strategy::DistanceSorted),
            other => Err(format!("unknown strategy `{other}` (expected improved, basic or distance_sorted)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClientConfig {
    pub r_search: f64,
    pub perception_range: f64,
    /// Byte budget of the object cache; `None` is unbounded.
    pub cache_capacity: Option<u64>,
}

/// Message counts by category. Their sum is the message total.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HopTally {
    pub ring_routing: u64,
    pub region_routing: u64,
    /// Client requests and replies, and messages between a client and a known bot.
    pub direct: u64,
    /// File payload messages, one per file.
    pub transfers: u64,
}

impl HopTally {
    pub fn total(&self) -> u64 {
        self.ring_routing + self.region_routing + self.direct + self.transfers
    }

    pub fn add(&mut self, other: &HopTally) {
        self.ring_routing += other.ring_routing;
        self.region_routing += other.region_routing;
        self.direct += other.direct;
        self.transfers += other.transfers;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoadSource {
    Cache,
    Network,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoadPhase {
    /// Found by grid traversal, `level` expansions from the origin grid.
    Traversal { level: u32 },
    Sweep,
    List,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadEvent {
    pub oid: ObjectId,
    /// Cycles since the retrieval cycle started.
    pub time: u64,
    pub messages: u64,
    pub source: LoadSource,
    pub phase: LoadPhase,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Deferral {
    /// No route to the object's location record or mapping.
    Unreachable,
    NoReplica,
    /// Downloaded content did not reproduce the inventory's OHash.
    Integrity,
}

/// Merged, radius-filtered inventory of the client's neighbour regions.
#[derive(Debug, Clone, PartialEq)]
pub struct CrcInventory {
    pub objects: Vec<ObjectEntry>,
    pub origin: Coord,
    pub radius: f64,
    /// Set when some region could not be reached this cycle.
    pub retry: bool,
}

impl CrcInventory {
    pub fn get(&self, oid: &ObjectId) -> Option<&ObjectEntry> {
        self.objects.iter().find(|o| &o.oid == oid)
    }

    pub fn oids(&self) -> BTreeSet<ObjectId> {
        self.objects.iter().map(|o| o.oid.clone()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct CycleReport {
    pub strategy: Strategy,
    pub crc: CrcInventory,
    pub loaded: BTreeSet<ObjectId>,
    pub events: Vec<LoadEvent>,
    pub deferred: Vec<(ObjectId, Deferral)>,
    pub hops: HopTally,
    pub crc_ready: u64,
    pub total_delay: u64,
    pub perceived_delay: u64,
    pub grids_visited: usize,
}

impl CycleReport {
    pub fn transfers(&self) -> u64 {
        self.hops.transfers
    }
}

/// The services a client talks to.
pub struct Network<'a> {
    pub can: &'a mut CanOverlay,
    pub ring: &'a mut ChordRing,
    pub storage: &'a Storage,
}

/// Regions whose inventories cover the search area around `p0`: the region
/// of `p0`, the adjacent region on the side of each axis half `p0` lies in,
/// and their shared diagonal when both exist.
pub fn neighbor_regions(geometry: &Geometry, p0: Coord) -> Result<Vec<RegionIndex>, ModelError> {
    let r = geometry.region_index(p0)?;
    let s = geometry.region_side();
    let half = s / 2.0;
    let side = |offset: f64, index: u32, count: u32| -> Option<u32> {
        if offset < half {
            index.checked_sub(1)
        } else if offset > half && index + 1 < count {
            Some(index + 1)
        } else {
            None
        }
    };
    let nx = side(p0.x - r.rx as f64 * s, r.rx, geometry.regions_x());
    let ny = side(p0.y - r.ry as f64 * s, r.ry, geometry.regions_y());
    let mut out = vec![r];
    if let Some(x) = nx {
        out.push(RegionIndex::new(x, r.ry));
    }
    if let Some(y) = ny {
        out.push(RegionIndex::new(r.rx, y));
    }
    if let (Some(x), Some(y)) = (nx, ny) {
        out.push(RegionIndex::new(x, y));
    }
    Ok(out)
}

/// Where a load learns the object's addressing bot.
#[derive(Debug, Clone, Copy)]
enum Hint {
    /// Full ring lookup.
    None,
    /// Ask the region bot that listed the object on `grid`.
    Region { bot: NodeAddress, grid: GridIndex },
    /// Already known from a location record.
    Addressing(NodeAddress),
}

/// One pending load: the CRC entry, when it became loadable and how to
/// find its addressing bot.
struct Pending<'c> {
    obj: &'c ObjectEntry,
    ready: u64,
    hint: Hint,
    phase: LoadPhase,
}

struct LoadOutcome {
    latency: u64,
    hops: HopTally,
    source: LoadSource,
    result: Result<(), Deferral>,
}

#[derive(Default)]
struct Loader {
    free_at: u64,
    hops: HopTally,
    events: Vec<LoadEvent>,
    deferred: Vec<(ObjectId, Deferral)>,
    loaded: BTreeSet<ObjectId>,
}

#[derive(Debug, Clone)]
pub struct Client {
    pub position: Coord,
    /// World units per cycle.
    pub velocity: f64,
    pub config: ClientConfig,
    /// Region inventories as last fetched.
    pub inventories: BTreeMap<RegionIndex, Inventory>,
    /// Local object cache, file contents included; doubles as the local inventory.
    pub cache: BTreeMap<ObjectId, ObjectEntry>,
    /// Grids explored in the current cycle.
    pub visited: BTreeSet<GridIndex>,
    can_entry: Option<NodeAddress>,
    ring_entry: Option<NodeAddress>,
}

impl Client {
    pub fn new(position: Coord, velocity: f64, config: ClientConfig) -> Self {
        Self {
            position,
            velocity,
            config,
            inventories: BTreeMap::new(),
            cache: BTreeMap::new(),
            visited: BTreeSet::new(),
            can_entry: None,
            ring_entry: None,
        }
    }

    /// Sets the bots the client first contacts on each overlay.
    pub fn set_entries(&mut self, can: Option<NodeAddress>, ring: Option<NodeAddress>) {
        self.can_entry = can;
        self.ring_entry = ring;
    }

    pub fn entries(&self) -> (Option<NodeAddress>, Option<NodeAddress>) {
        (self.can_entry, self.ring_entry)
    }

    pub fn cache_bytes(&self) -> u64 {
        self.cache.values().map(ObjectEntry::payload_bytes).sum()
    }

    fn live_can_entry(&mut self, can: &CanOverlay, hops: &mut HopTally) -> Option<NodeAddress> {
        if let Some(a) = self.can_entry {
            if can.contains(a) {
                return Some(a);
            }
            // The message to the departed contact is lost.
            hops.direct += 1;
        }
        self.can_entry = can.addresses().next();
        self.can_entry
    }

    fn live_ring_entry(&mut self, ring: &ChordRing, hops: &mut HopTally) -> Option<u64> {
        if let Some(id) = self.ring_entry.and_then(|a| ring.id_of(a)) {
            return Some(id);
        }
        if self.ring_entry.is_some() {
            hops.direct += 1;
        }
        let first = ring.bots().next()?;
        self.ring_entry = Some(first.address);
        Some(first.id)
    }

    /// Client request routed through the region overlay to the owner of `target`.
    /// Returns the owner and the round-trip latency.
    fn region_request(&mut self, can: &mut CanOverlay, target: GridIndex, hops: &mut HopTally) -> Option<(NodeAddress, u64)> {
        let entry = self.live_can_entry(can, hops)?;
        match can.route_to_grid(entry, target) {
            Ok(route) => {
                hops.direct += 2;
                hops.region_routing += route.hops as u64;
                Some((route.owner, 2 + route.hops as u64))
            }
            Err(CanError::Retry { hops: h }) => {
                hops.direct += 1;
                hops.region_routing += h as u64;
                None
            }
            Err(_) => None,
        }
    }

    /// Full ring lookup of the mapping record of `obj`'s logical computer.
    fn ring_mapping(&mut self, ring: &mut ChordRing, obj: &ObjectEntry, hops: &mut HopTally) -> (Option<MappingRecord>, u64) {
        let Some(entry) = self.live_ring_entry(ring, hops) else {
            return (None, 0);
        };
        let key = key_of(&obj.lcid, ring.config().bits);
        match ring.lookup(entry, key) {
            Ok(found) => {
                hops.direct += 2;
                hops.ring_routing += found.hops as u64;
                let record = ring.bot(found.owner).and_then(|b| b.store.get(&(key, obj.lcid.clone())).cloned());
                (record, 2 + found.hops as u64)
            }
            Err(crate::chord::ChordError::RetryAfterStabilization { hops: h }) => {
                hops.direct += 1;
                hops.ring_routing += h as u64;
                (None, 1 + h as u64)
            }
            Err(_) => (None, 0),
        }
    }

    /// Fetches the regions' inventories concurrently and merges them into
    /// the CRC inventory. Returns the inventory and the cycle it is complete.
    pub fn construct_crc_inventory(&mut self, net: &mut Network, hops: &mut HopTally) -> Result<(CrcInventory, u64), ModelError> {
        let geometry = *net.can.geometry();
        let p0 = self.position;
        let mut crc = CrcInventory { objects: Vec::new(), origin: p0, radius: self.config.r_search, retry: false };
        let mut ready = 0;
        let mut seen = BTreeSet::new();
        for r in neighbor_regions(&geometry, p0)? {
            let Some((owner, latency)) = self.region_request(net.can, geometry.region_anchor_grid(r), hops) else {
                crc.retry = true;
                continue;
            };
            ready = ready.max(latency);
            let Some(inv) = net.can.bot(owner).and_then(|b| b.inventories.get(&r)).cloned() else {
                continue;
            };
            for obj in &inv.objects {
                if distance(obj.ocoord, p0) <= self.config.r_search && seen.insert(obj.oid.clone()) {
                    crc.objects.push(obj.clone());
                }
            }
            self.inventories.insert(r, inv);
        }
        Ok((crc, ready))
    }

    /// Storage-address query to the region bot listing `oid` on `grid`,
    /// following a wrong-owner redirect or re-routing if the bot has left.
    fn storage_address(&mut self, can: &mut CanOverlay, bot: NodeAddress, grid: GridIndex, oid: &ObjectId, hops: &mut HopTally) -> (Option<NodeAddress>, u64) {
        match can.location_query(bot, grid, oid) {
            Ok(record) => {
                hops.direct += 2;
                (Some(record.addressing_bot), 2)
            }
            Err(CanError::WrongOwner { owner }) => {
                hops.direct += 4;
                (can.location_query(owner, grid, oid).ok().map(|r| r.addressing_bot), 4)
            }
            Err(CanError::UnknownBot(_)) => {
                hops.direct += 1;
                let Some((owner, latency)) = self.region_request(can, grid, hops) else {
                    return (None, 1);
                };
                let found = can.bot(owner).and_then(|b| b.objects.get(&grid)).and_then(|m| m.get(oid)).map(|r| r.addressing_bot);
                (found, 1 + latency)
            }
            Err(_) => {
                hops.direct += 2;
                (None, 2)
            }
        }
    }

    /// Compares the cached OHash with the CRC entry and downloads only the
    /// stale files.
    fn load_content(&mut self, net: &mut Network, remote: &ObjectEntry, hint: Hint) -> LoadOutcome {
        let mut hops = HopTally::default();
        let local = self.cache.get(&remote.oid);
        if local.map(|l| l.ohash) == Some(remote.ohash) {
            return LoadOutcome { latency: 0, hops, source: LoadSource::Cache, result: Ok(()) };
        }
        let plan = diff_objects(local, remote);
        if plan.file_transfers() == 0 && !plan.object_needed {
            // Only the property block changed; the inventory carries it.
            let result = self.install(remote, None, &plan.stale_files);
            return LoadOutcome { latency: 0, hops, source: LoadSource::Cache, result };
        }

        let mut latency = 0;
        let mut record = None;
        let mut fall_back = true;
        let addressing = match hint {
            Hint::None => None,
            Hint::Addressing(bot) => Some(bot),
            Hint::Region { bot, grid } => {
                let (found, l) = self.storage_address(net.can, bot, grid, &remote.oid, &mut hops);
                latency += l;
                found
            }
        };
        if let Some(bot) = addressing {
            match net.ring.query_direct(bot, &remote.lcid) {
                Ok(found) => {
                    hops.direct += 2;
                    latency += 2;
                    record = found.ok();
                    fall_back = record.is_none();
                }
                Err(DirectError::WrongOwner) => {
                    hops.direct += 2;
                    latency += 2;
                }
                Err(DirectError::Departed) => {
                    hops.direct += 1;
                    latency += 1;
                }
            }
        }
        if fall_back {
            let (found, l) = self.ring_mapping(net.ring, remote, &mut hops);
            latency += l;
            record = found;
        }
        let Some(record) = record else {
            return LoadOutcome { latency, hops, source: LoadSource::Network, result: Err(Deferral::Unreachable) };
        };

        let mut served = None;
        for replica in &record.replicas {
            hops.direct += 1;
            latency += 1;
            if let Some(full) = net.storage.fetch(*replica, &remote.oid) {
                served = Some(full);
                break;
            }
        }
        let Some(full) = served else {
            return LoadOutcome { latency, hops, source: LoadSource::Network, result: Err(Deferral::NoReplica) };
        };
        // Payload messages travel back together.
        hops.transfers += plan.file_transfers() as u64;
        latency += 1;
        let result = self.install(remote, Some(full), &plan.stale_files);
        LoadOutcome { latency, hops, source: LoadSource::Network, result }
    }

    /// Assembles the new local copy from downloaded and cached files and
    /// checks it against the inventory's OHash.
    fn install(&mut self, remote: &ObjectEntry, full: Option<&ObjectEntry>, stale: &BTreeSet<(String, String)>) -> Result<(), Deferral> {
        let local = self.cache.get(&remote.oid);
        let mut fresh = remote.catalog();
        for group in &mut fresh.file_types {
            for file in &mut group.files {
                let key = (group.type_name.clone(), file.name().to_owned());
                let source = if stale.contains(&key) { full } else { local };
                file.content = source
                    .and_then(|o| o.file_type(&key.0))
                    .and_then(|g| g.file(&key.1))
                    .and_then(|f| f.content.clone());
            }
        }
        match recompute_hashes(&fresh) {
            Ok(checked) if checked.ohash == remote.ohash => {
                self.cache.insert(remote.oid.clone(), checked);
                Ok(())
            }
            _ => {
                self.cache.remove(&remote.oid);
                Err(Deferral::Integrity)
            }
        }
    }

    fn run_load(&mut self, net: &mut Network, loader: &mut Loader, job: Pending) {
        let start = loader.free_at.max(job.ready);
        let outcome = self.load_content(net, job.obj, job.hint);
        loader.hops.add(&outcome.hops);
        let done = start + outcome.latency;
        loader.free_at = done;
        match outcome.result {
            Ok(()) => {
                loader.loaded.insert(job.obj.oid.clone());
                loader.events.push(LoadEvent {
                    oid: job.obj.oid.clone(),
                    time: done,
                    messages: outcome.hops.total(),
                    source: outcome.source,
                    phase: job.phase,
                });
            }
            Err(reason) => loader.deferred.push((job.obj.oid.clone(), reason)),
        }
    }

    /// Sends a grid request to `bot`, following one wrong-owner redirect or
    /// re-routing when the bot has left. Returns the reply and its latency.
    fn grid_request(&mut self, can: &mut CanOverlay, bot: NodeAddress, grid: GridIndex, hops: &mut HopTally) -> Option<(GridReply, NodeAddress, u64)> {
        match can.grid_request(bot, grid) {
            Ok(reply) => {
                hops.direct += 2;
                Some((reply, bot, 2))
            }
            Err(CanError::WrongOwner { owner }) => {
                hops.direct += 2;
                let reply = can.grid_request(owner, grid).ok()?;
                hops.direct += 2;
                Some((reply, owner, 4))
            }
            Err(_) => {
                hops.direct += 1;
                let (owner, latency) = self.region_request(can, grid, hops)?;
                let reply = can.grid_request(owner, grid).ok()?;
                hops.direct += 2;
                Some((reply, owner, 1 + latency + 2))
            }
        }
    }

    /// Breadth-first grid traversal from the grid holding the client, then
    /// an individual sweep for CRC objects the traversal did not reach.
    fn proximity(&mut self, net: &mut Network, crc: &CrcInventory, crc_ready: u64, loader: &mut Loader, hops: &mut HopTally) {
        let geometry = *net.can.geometry();
        let p0 = self.position;
        let mut discovered = BTreeSet::new();
        let mut traversal_end = 0;
        let g0 = geometry.grid_index(p0).expect("client inside map");
        if let Some((owner, latency)) = self.region_request(net.can, g0, hops) {
            self.can_entry = Some(owner);
            traversal_end = latency;
            let mut queue = VecDeque::from([(owner, g0, latency, 0u32)]);
            while let Some((bot, g, sent, level)) = queue.pop_front() {
                if self.visited.contains(&g) || distance(geometry.grid_coord(g).corner(), p0) > self.config.r_search {
                    continue;
                }
                self.visited.insert(g);
                let Some((reply, replier, latency)) = self.grid_request(net.can, bot, g, hops) else {
                    continue;
                };
                let arrived = sent + latency;
                traversal_end = traversal_end.max(arrived);
                for (oid, _) in &reply.objects {
                    let Some(obj) = crc.get(oid) else { continue };
                    if !discovered.insert(obj.oid.clone()) {
                        continue;
                    }
                    let job = Pending {
                        obj,
                        ready: arrived.max(crc_ready),
                        hint: Hint::Region { bot: replier, grid: g },
                        phase: LoadPhase::Traversal { level },
                    };
                    self.run_load(net, loader, job);
                }
                for (nb, ng) in reply.neighbors {
                    if !self.visited.contains(&ng) {
                        queue.push_back((nb, ng, arrived, level + 1));
                    }
                }
            }
        }

        let sweep_start = traversal_end.max(crc_ready);
        for obj in &crc.objects {
            if discovered.contains(&obj.oid) {
                continue;
            }
            if self.cache.get(&obj.oid).map(|c| c.ohash) == Some(obj.ohash) {
                // Up to date locally; no location query needed.
                let job = Pending { obj, ready: sweep_start, hint: Hint::None, phase: LoadPhase::Sweep };
                self.run_load(net, loader, job);
                continue;
            }
            let grid = geometry.grid_index(obj.ocoord).expect("inventory objects lie inside the map");
            let Some((owner, latency)) = self.region_request(net.can, grid, hops) else {
                loader.deferred.push((obj.oid.clone(), Deferral::Unreachable));
                continue;
            };
            let hint = net
                .can
                .bot(owner)
                .and_then(|b| b.objects.get(&grid))
                .and_then(|m| m.get(&obj.oid))
                .map_or(Hint::None, |r| Hint::Addressing(r.addressing_bot));
            let job = Pending { obj, ready: sweep_start + latency, hint, phase: LoadPhase::Sweep };
            self.run_load(net, loader, job);
        }
    }

    /// One retrieval cycle at the current position with `strategy`.
    pub fn run_cycle(&mut self, net: &mut Network, strategy: Strategy) -> CycleReport {
        self.visited.clear();
        let mut hops = HopTally::default();
        let (crc, crc_ready) = self.construct_crc_inventory(net, &mut hops).expect("client inside map");
        let mut loader = Loader { free_at: crc_ready, ..Loader::default() };
        match strategy {
            Strategy::Proximity => self.proximity(net, &crc, crc_ready, &mut loader, &mut hops),
            Strategy::Basic | Strategy::DistanceSorted => {
                let mut order: Vec<&ObjectEntry> = crc.objects.iter().collect();
                if strategy == Strategy::DistanceSorted {
                    order.sort_by(|a, b| distance(a.ocoord, crc.origin).total_cmp(&distance(b.ocoord, crc.origin)));
                }
                for obj in order {
                    let job = Pending { obj, ready: crc_ready, hint: Hint::None, phase: LoadPhase::List };
                    self.run_load(net, &mut loader, job);
                }
            }
        }
        hops.add(&loader.hops);

        let times: BTreeMap<&ObjectId, u64> = loader.events.iter().map(|e| (&e.oid, e.time)).collect();
        let total_delay = times.values().copied().fold(crc_ready, u64::max);
        let perceived_delay = crc
            .objects
            .iter()
            .filter(|o| distance(o.ocoord, crc.origin) <= self.config.perception_range)
            .filter_map(|o| times.get(&o.oid).copied())
            .fold(crc_ready, u64::max);
        self.evict_cache();
        CycleReport {
            strategy,
            grids_visited: self.visited.len(),
            crc,
            loaded: loader.loaded,
            events: loader.events,
            deferred: loader.deferred,
            hops,
            crc_ready,
            total_delay,
            perceived_delay,
        }
    }

    /// Evicts the farthest objects until the cache fits its budget. Objects
    /// inside the perception range go only after all others.
    pub fn evict_cache(&mut self) -> Vec<ObjectId> {
        let Some(capacity) = self.config.cache_capacity else {
            return Vec::new();
        };
        let mut size = self.cache_bytes();
        if size <= capacity {
            return Vec::new();
        }
        let p = self.position;
        let range = self.config.perception_range;
        let mut order: Vec<(bool, f64, ObjectId)> = self
            .cache
            .values()
            .map(|o| {
                let d = distance(o.ocoord, p);
                (d > range, d, o.oid.clone())
            })
            .collect();
        // Outside the range first, then farthest first.
        order.sort_by(|a, b| b.0.cmp(&a.0).then(b.1.total_cmp(&a.1)).then(a.2.cmp(&b.2)));
        let mut evicted = Vec::new();
        for (_, _, oid) in order {
            if size <= capacity {
                break;
            }
            if let Some(obj) = self.cache.remove(&oid) {
                size -= obj.payload_bytes();
                evicted.push(oid);
            }
        }
        evicted
    }
}

#[cfg(test)]
mod tests;
