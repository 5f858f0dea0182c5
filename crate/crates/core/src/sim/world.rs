use std::collections::{BTreeMap, BTreeSet};

use rand::distributions::Alphanumeric;
use rand::Rng;

use crate::can::{CanOverlay, ObjectLocationRecord};
use crate::chord::{key_of, ChordConfig, ChordRing, Key};
use crate::client::{LogicalComputer, Network, Storage};
use crate::inventory::{recompute_hashes, FileProperties, Inventory, InventoryError, ObjectEntry, ObjectProperties};
use crate::model::{Coord, Geometry, LogicalComputerId, NodeAddress, ObjectId, RegionId};

use super::SimConfig;

const RING_BASE: u32 = 1_000_000;
const REGION_BASE: u32 = 2_000_000;
const REPLICA_BASE: u32 = 3_000_000;

/// Churn events applied in one dynamics step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct ChurnEvents {
    pub ring_joins: u32,
    pub ring_leaves: u32,
    pub region_joins: u32,
    pub region_leaves: u32,
    pub replica_changes: u32,
}

impl ChurnEvents {
    pub fn add(&mut self, other: &ChurnEvents) {
        self.ring_joins += other.ring_joins;
        self.ring_leaves += other.ring_leaves;
        self.region_joins += other.region_joins;
        self.region_leaves += other.region_leaves;
        self.replica_changes += other.replica_changes;
    }
}

/// Both overlays, the replicated stores and the global object registry.
#[derive(Debug, Clone)]
pub struct World {
    pub config: SimConfig,
    pub geometry: Geometry,
    pub can: CanOverlay,
    pub ring: ChordRing,
    pub storage: Storage,
    /// Every object with its contents, keyed by OID.
    pub registry: BTreeMap<ObjectId, ObjectEntry>,
    /// Window load carried by region bots that left since the last sample.
    pub departed_load: u64,
    next_ring: u32,
    next_region: u32,
    next_replica: u32,
}

fn random_text<R: Rng>(rng: &mut R, len: usize) -> String {
    rng.sample_iter(&Alphanumeric).take(len).map(char::from).collect()
}

impl World {
    /// Builds the overlays and registers `config.objects` objects at uniform
    /// random coordinates under round-robin logical computers.
    pub fn build<R: Rng>(config: &SimConfig, rng: &mut R) -> Self {
        let geometry = config.geometry().expect("validated config");
        let mut ring = ChordRing::new(ChordConfig { bits: config.ring_bits, ..ChordConfig::default() });
        for i in 0..config.addressing_bots {
            ring.join(NodeAddress(RING_BASE + i)).expect("distinct addresses");
        }
        ring.stabilize_all();
        let mut can = CanOverlay::new(geometry, NodeAddress(REGION_BASE));
        for i in 1..config.region_bots {
            can.join_random(NodeAddress(REGION_BASE + i), NodeAddress(REGION_BASE), rng).expect("space left to split");
        }
        let mut world = World {
            config: config.clone(),
            geometry,
            can,
            ring,
            storage: Storage::new(),
            registry: BTreeMap::new(),
            departed_load: 0,
            next_ring: RING_BASE + config.addressing_bots,
            next_region: REGION_BASE + config.region_bots,
            next_replica: REPLICA_BASE,
        };

        for ry in 0..geometry.regions_y() {
            for rx in 0..geometry.regions_x() {
                let rcoord = geometry.region_coord(crate::model::RegionIndex::new(rx, ry));
                let inv = Inventory::new(RegionId::new(random_text(rng, 30)), rcoord);
                let entry = world.can_entry();
                world.can.inventory_create(entry, inv).expect("fresh region");
            }
        }

        let computers: Vec<LogicalComputerId> =
            (0..config.logical_computers()).map(|j| LogicalComputerId::new(format!("Logical-Computer-{}", 100 + j))).collect();
        for lcid in &computers {
            let replicas: BTreeSet<NodeAddress> = (0..config.replicas).map(|_| world.fresh_replica()).collect();
            let entry = world.ring_entry();
            world.ring.mapping_create(entry, lcid, replicas.clone()).expect("fresh computer");
            world.storage.add(LogicalComputer { lcid: lcid.clone(), replicas, objects: BTreeMap::new() });
        }
        for i in 0..config.objects {
            let lcid = computers[(i % computers.len() as u32) as usize].clone();
            let coord = Coord::new(rng.gen_range(0.0..geometry.width), rng.gen_range(0.0..geometry.height));
            let oid = loop {
                let oid = ObjectId::new(random_text(rng, 25));
                if !world.registry.contains_key(&oid) {
                    break oid;
                }
            };
            let obj = world.make_object(oid, coord, lcid, &format!("Object {}", i + 1), rng);
            world.register(obj);
        }
        world
    }

    fn make_object<R: Rng>(&self, oid: ObjectId, coord: Coord, lcid: LogicalComputerId, name: &str, rng: &mut R) -> ObjectEntry {
        let props = ObjectProperties::new(name, lcid.as_str(), "1");
        let groups = (0..self.config.file_types)
            .map(|t| {
                let files = (0..self.config.files_per_type)
                    .map(|f| {
                        let content: Vec<u8> = (0..self.config.file_bytes).map(|_| rng.gen()).collect();
                        (FileProperties::named(format!("file{f:02}")), content)
                    })
                    .collect();
                (format!("type{t:02}"), files)
            })
            .collect();
        ObjectEntry::build(oid, coord, lcid, props, groups).expect("non-empty object")
    }

    /// Stores the object at its logical computer, its location record on the
    /// region overlay and its catalog entry in the region inventory.
    fn register(&mut self, obj: ObjectEntry) {
        let entry = self.ring_entry();
        let bits = self.ring.config().bits;
        let owner = self.ring.lookup(entry, key_of(&obj.lcid, bits)).expect("stabilized ring").owner_address;
        let record = ObjectLocationRecord {
            oid: obj.oid.clone(),
            ocoord: obj.ocoord,
            lcid: obj.lcid.clone(),
            addressing_bot: owner,
            cache_version: 0,
        };
        let can_entry = self.can_entry();
        self.can.object_create(can_entry, record).expect("unique oid");
        self.can.inventory_upsert(can_entry, &obj).expect("region inventory exists");
        self.storage.computer_mut(&obj.lcid).expect("registered computer").objects.insert(obj.oid.clone(), obj.clone());
        self.registry.insert(obj.oid.clone(), obj);
    }

    fn fresh_replica(&mut self) -> NodeAddress {
        self.next_replica += 1;
        NodeAddress(self.next_replica - 1)
    }

    pub fn can_entry(&self) -> NodeAddress {
        self.can.addresses().next().expect("overlay never empties")
    }

    pub fn ring_entry(&self) -> Key {
        self.ring.ids().next().expect("ring never empties")
    }

    pub fn network(&mut self) -> Network<'_> {
        Network { can: &mut self.can, ring: &mut self.ring, storage: &self.storage }
    }

    /// Replaces one file's content, rehashes the object and publishes the
    /// new catalog entry to its region inventory.
    pub fn mutate_file(&mut self, oid: &ObjectId, type_name: &str, file: &str, content: Vec<u8>) -> Result<ObjectEntry, InventoryError> {
        let mut obj = self.registry.get(oid).cloned().ok_or_else(|| InventoryError::Parse {
            path: oid.to_string(),
            message: "unknown object".into(),
        })?;
        let slot = obj
            .file_types
            .iter_mut()
            .find(|g| g.type_name == type_name)
            .and_then(|g| g.files.iter_mut().find(|f| f.name() == file))
            .ok_or_else(|| InventoryError::MissingContent { type_name: type_name.into(), file: file.into() })?;
        slot.content = Some(content);
        let obj = recompute_hashes(&obj)?;
        let entry = self.can_entry();
        self.can.inventory_upsert(entry, &obj).expect("region inventory exists");
        self.storage.computer_mut(&obj.lcid).expect("registered").objects.insert(oid.clone(), obj.clone());
        self.registry.insert(oid.clone(), obj.clone());
        Ok(obj)
    }

    /// One dynamics draw per overlay: an independent join draw and leave
    /// draw, plus a replica change with the join probability.
    pub fn churn_step<R: Rng>(&mut self, rng: &mut R) -> ChurnEvents {
        let (p_join, p_leave) = (self.config.p_join, self.config.p_leave);
        let mut ev = ChurnEvents::default();

        if rng.gen_bool(p_join) {
            let address = NodeAddress(self.next_ring);
            self.next_ring += 1;
            if self.ring.join(address).is_ok() {
                ev.ring_joins += 1;
            }
        }
        if rng.gen_bool(p_leave) && self.ring.len() > 1 {
            let ids: Vec<Key> = self.ring.ids().collect();
            let victim = ids[rng.gen_range(0..ids.len())];
            self.ring.leave(victim).expect("live bot");
            ev.ring_leaves += 1;
        }

        if rng.gen_bool(p_join) {
            let address = NodeAddress(self.next_region);
            self.next_region += 1;
            let entry = self.can_entry();
            if self.can.join_random(address, entry, rng).is_ok() {
                ev.region_joins += 1;
            }
        }
        if rng.gen_bool(p_leave) && self.can.len() > 1 {
            let addrs: Vec<NodeAddress> = self.can.addresses().collect();
            let victim = addrs[rng.gen_range(0..addrs.len())];
            self.departed_load += self.can.window_of(victim);
            self.can.leave(victim).expect("live bot");
            ev.region_leaves += 1;
        }

        if rng.gen_bool(p_join) {
            let lcids: Vec<LogicalComputerId> = self.storage.computers().map(|lc| lc.lcid.clone()).collect();
            if !lcids.is_empty() {
                let lcid = &lcids[rng.gen_range(0..lcids.len())];
                let old: Vec<NodeAddress> = self.storage.computer(lcid).expect("listed").replicas.iter().copied().collect();
                let gone = old[rng.gen_range(0..old.len())];
                let fresh = self.fresh_replica();
                let replicas = self.storage.replace_replica(lcid, gone, fresh).expect("member replica");
                let entry = self.ring_entry();
                if self.ring.mapping_update(entry, lcid, replicas).is_ok() {
                    ev.replica_changes += 1;
                }
            }
        }
        ev
    }

    /// Ring entry used by a region bot for its freshness lookups.
    pub fn refresh_entry(&self, bot: NodeAddress) -> Key {
        let ids: Vec<Key> = self.ring.ids().collect();
        ids[bot.0 as usize % ids.len()]
    }

    /// Differences between the region bots' object records and the registry.
    pub fn consistency_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut seen: BTreeMap<&ObjectId, usize> = BTreeMap::new();
        for bot in self.can.bots() {
            for (grid, records) in &bot.objects {
                for (oid, record) in records {
                    *seen.entry(oid).or_default() += 1;
                    if !bot.owns(*grid) {
                        out.push(format!("{oid} held outside its owner's zone"));
                    }
                    if self.geometry.grid_index(record.ocoord).ok() != Some(*grid) {
                        out.push(format!("{oid} filed under the wrong grid"));
                    }
                }
            }
        }
        out.extend(seen.iter().filter(|(_, n)| **n > 1).map(|(oid, n)| format!("{oid} stored {n} times")));
        out.extend(self.registry.keys().filter(|oid| !seen.contains_key(oid)).map(|oid| format!("{oid} lost")));
        out.extend(seen.keys().filter(|oid| !self.registry.contains_key(**oid)).map(|oid| format!("{oid} unknown")));
        out
    }
}
