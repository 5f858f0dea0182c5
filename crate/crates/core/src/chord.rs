//! Ring overlay of addressing bots: the object resource lookup service that
//! maps a logical computer ID to the addresses of its replica nodes.
//!
//! A bot owns the half-open key segment `[own id, successor id)`, wrapping
//! around the `2^b` key space. Finger entry `i` holds the first live bot whose
//! clockwise distance lies in `[2^i, 2^(i+1))`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{sha256, LogicalComputerId, NodeAddress};

pub type Key = u64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChordError {
    #[error("the ring has no live bots")]
    Empty,
    #[error("no mapping for logical computer `{0}`")]
    NotFound(LogicalComputerId),
    #[error("mapping for logical computer `{0}` already exists")]
    AlreadyExists(LogicalComputerId),
    #[error("routing dead end after {hops} hops; retry after stabilization")]
    RetryAfterStabilization { hops: u32 },
    #[error("unknown addressing bot {0}")]
    UnknownBot(NodeAddress),
    #[error("replica set must not be empty")]
    EmptyReplicas,
    #[error("cannot remove the last bot of the ring")]
    LastBot,
    #[error("key {0} is already taken by a live bot")]
    DuplicateId(Key),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChordConfig {
    /// Key length in bits.
    pub bits: u32,
    pub stabilization_period: u64,
}

impl Default for ChordConfig {
    fn default() -> Self {
        Self { bits: 32, stabilization_period: 1 }
    }
}

impl ChordConfig {
    pub fn key_space(&self) -> u128 {
        1u128 << self.bits
    }

    fn mask(&self) -> u64 {
        if self.bits >= 64 {
            u64::MAX
        } else {
            (1u64 << self.bits) - 1
        }
    }
}

/// Truncates SHA-256 of `text` to `bits` bits.
pub fn hash_key(text: &str, bits: u32) -> Key {
    let digest = sha256(text.as_bytes());
    let mut word = [0u8; 8];
    word.copy_from_slice(&digest.0[..8]);
    let value = u64::from_be_bytes(word);
    if bits >= 64 {
        value
    } else {
        value >> (64 - bits)
    }
}

pub fn key_of(lcid: &LogicalComputerId, bits: u32) -> Key {
    hash_key(lcid.as_str(), bits)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingRecord {
    pub lcid: LogicalComputerId,
    pub replicas: BTreeSet<NodeAddress>,
    pub version: u64,
}

#[derive(Debug, Clone)]
pub struct AddressingBot {
    pub id: Key,
    pub address: NodeAddress,
    pub successor: Key,
    pub predecessor: Key,
    pub fingers: Vec<Option<Key>>,
    pub store: BTreeMap<(Key, LogicalComputerId), MappingRecord>,
    pub handled: u64,
    pub forwarded: u64,
    next_finger: usize,
}

/// Result of a routed lookup.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Lookup {
    pub owner: Key,
    pub owner_address: NodeAddress,
    /// Inter-bot forwards, including attempts that hit a departed bot.
    pub hops: u32,
}

/// Failure of a direct (unrouted) request to a specific bot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum DirectError {
    #[error("bot has left the ring")]
    Departed,
    #[error("bot is not in charge of the key")]
    WrongOwner,
}

#[derive(Debug, Clone)]
pub struct ChordRing {
    config: ChordConfig,
    bots: BTreeMap<Key, AddressingBot>,
    by_address: BTreeMap<NodeAddress, Key>,
}

/// `true` when `key ∈ [start, end)` on the ring; `start == end` is the whole ring.
pub fn in_segment(key: Key, start: Key, end: Key) -> bool {
    if start == end {
        true
    } else if start < end {
        start <= key && key < end
    } else {
        key >= start || key < end
    }
}

impl ChordRing {
    pub fn new(config: ChordConfig) -> Self {
        Self { config, bots: BTreeMap::new(), by_address: BTreeMap::new() }
    }

    pub fn config(&self) -> &ChordConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.bots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bots.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = Key> + '_ {
        self.bots.keys().copied()
    }

    pub fn bot(&self, id: Key) -> Option<&AddressingBot> {
        self.bots.get(&id)
    }

    pub fn bots(&self) -> impl Iterator<Item = &AddressingBot> {
        self.bots.values()
    }

    pub fn id_of(&self, address: NodeAddress) -> Option<Key> {
        self.by_address.get(&address).copied()
    }

    pub fn contains_address(&self, address: NodeAddress) -> bool {
        self.by_address.contains_key(&address)
    }

    /// Clockwise distance from `a` to `b`.
    pub fn distance(&self, a: Key, b: Key) -> u64 {
        b.wrapping_sub(a) & self.config.mask()
    }

    /// Derives a free ring id for a new bot from its address.
    pub fn id_for_address(&self, address: NodeAddress) -> Key {
        (0u32..)
            .map(|salt| hash_key(&format!("addressing-bot-{}-{salt}", address.0), self.config.bits))
            .find(|id| !self.bots.contains_key(id))
            .expect("key space larger than ring")
    }

    fn successor_of_key(&self, key: Key) -> Option<Key> {
        self.bots.range(key..).next().or_else(|| self.bots.iter().next()).map(|(k, _)| *k)
    }

    /// Global-view owner, used by maintenance and by the engine's bookkeeping.
    pub fn owner_of(&self, key: Key) -> Option<Key> {
        self.bots.range(..=key).next_back().or_else(|| self.bots.iter().next_back()).map(|(k, _)| *k)
    }

    fn next_live_after(&self, id: Key) -> Option<Key> {
        let bump = id.wrapping_add(1) & self.config.mask();
        if bump == 0 && id != 0 {
            return self.bots.keys().next().copied();
        }
        self.successor_of_key(bump)
    }

    fn finger_target(&self, id: Key, level: usize) -> Option<Key> {
        let start = id.wrapping_add(1u64 << level) & self.config.mask();
        let candidate = self.successor_of_key(start)?;
        let d = self.distance(id, candidate);
        let lo = 1u128 << level;
        let hi = 1u128 << (level + 1);
        (candidate != id && (d as u128) >= lo && (d as u128) < hi).then_some(candidate)
    }

    fn rebuild_fingers(&mut self, id: Key) {
        let fingers: Vec<Option<Key>> = (0..self.config.bits as usize).map(|i| self.finger_target(id, i)).collect();
        if let Some(bot) = self.bots.get_mut(&id) {
            bot.fingers = fingers;
        }
    }

    fn repair_neighbors(&mut self, id: Key) {
        let succ = self.next_live_after(id).unwrap_or(id);
        let pred = self.owner_of(id.wrapping_sub(1) & self.config.mask()).unwrap_or(id);
        let pred = if pred == id && self.bots.len() > 1 {
            self.bots.range(..id).next_back().or_else(|| self.bots.iter().next_back()).map(|(k, _)| *k).unwrap_or(id)
        } else {
            pred
        };
        if let Some(bot) = self.bots.get_mut(&id) {
            bot.successor = succ;
            bot.predecessor = pred;
        }
    }

    /// One maintenance round: every bot refreshes its ring neighbors and one
    /// finger level, round-robin.
    pub fn stabilize_step(&mut self) {
        let ids: Vec<Key> = self.bots.keys().copied().collect();
        for id in ids {
            self.repair_neighbors(id);
            let level = self.bots[&id].next_finger;
            let target = self.finger_target(id, level);
            let bits = self.config.bits as usize;
            let bot = self.bots.get_mut(&id).expect("live");
            bot.fingers[level] = target;
            bot.next_finger = (level + 1) % bits;
        }
    }

    /// Rebuilds every finger of every bot.
    pub fn stabilize_all(&mut self) {
        let ids: Vec<Key> = self.bots.keys().copied().collect();
        for id in ids {
            self.repair_neighbors(id);
            self.rebuild_fingers(id);
        }
    }

    /// Adds a bot with the given address. The new bot takes over the keys of
    /// its segment from its predecessor and builds its own fingers; other
    /// bots learn about it through stabilization.
    pub fn join(&mut self, address: NodeAddress) -> Result<Key, ChordError> {
        let id = self.id_for_address(address);
        self.join_with_id(address, id)?;
        Ok(id)
    }

    pub fn join_with_id(&mut self, address: NodeAddress, id: Key) -> Result<(), ChordError> {
        if self.bots.contains_key(&id) {
            return Err(ChordError::DuplicateId(id));
        }
        let bits = self.config.bits as usize;
        let mut bot = AddressingBot {
            id,
            address,
            successor: id,
            predecessor: id,
            fingers: vec![None; bits],
            store: BTreeMap::new(),
            handled: 0,
            forwarded: 0,
            next_finger: 0,
        };
        if let Some(pred) = self.owner_of(id) {
            let succ = self.bots[&pred].successor;
            let pred_bot = self.bots.get_mut(&pred).expect("live");
            let moving: Vec<(Key, LogicalComputerId)> =
                pred_bot.store.keys().filter(|(k, _)| in_segment(*k, id, succ)).cloned().collect();
            for key in moving {
                let record = pred_bot.store.remove(&key).expect("present");
                bot.store.insert(key, record);
            }
            pred_bot.successor = id;
            bot.predecessor = pred;
            bot.successor = if succ == pred { pred } else { succ };
            if let Some(succ_bot) = self.bots.get_mut(&bot.successor) {
                succ_bot.predecessor = id;
            }
        }
        self.bots.insert(id, bot);
        self.by_address.insert(address, id);
        self.rebuild_fingers(id);
        Ok(())
    }

    /// Graceful departure: the bot's records move to its predecessor, whose
    /// segment absorbs the departed one.
    pub fn leave(&mut self, id: Key) -> Result<AddressingBot, ChordError> {
        if !self.bots.contains_key(&id) {
            return Err(ChordError::Empty);
        }
        if self.bots.len() == 1 {
            return Err(ChordError::LastBot);
        }
        let mut bot = self.bots.remove(&id).expect("checked");
        self.by_address.remove(&bot.address);
        let (pred, succ) = (bot.predecessor, bot.successor);
        let pred_bot = self.bots.get_mut(&pred).expect("ring neighbors are live");
        pred_bot.store.append(&mut bot.store);
        pred_bot.successor = succ;
        if let Some(succ_bot) = self.bots.get_mut(&succ) {
            succ_bot.predecessor = pred;
        }
        Ok(bot)
    }

    /// Routes from `start` towards the owner of `key`, greedily forwarding to
    /// the finger with the largest clockwise progress that does not pass `key`.
    pub fn lookup(&mut self, start: Key, key: Key) -> Result<Lookup, ChordError> {
        if self.bots.is_empty() {
            return Err(ChordError::Empty);
        }
        if !self.bots.contains_key(&start) {
            return Err(ChordError::UnknownBot(NodeAddress(u32::MAX)));
        }
        let limit = 2 * self.config.bits + self.bots.len() as u32;
        let mut current = start;
        let mut hops = 0u32;
        loop {
            let bot = &self.bots[&current];
            if in_segment(key, bot.id, bot.successor) {
                let address = bot.address;
                self.bots.get_mut(&current).expect("live").handled += 1;
                return Ok(Lookup { owner: current, owner_address: address, hops });
            }
            let target = self.distance(current, key);
            let mut candidates: Vec<Key> = bot
                .fingers
                .iter()
                .flatten()
                .copied()
                .chain(std::iter::once(bot.successor))
                .filter(|&f| f != current && self.distance(current, f) <= target)
                .collect();
            candidates.sort_by(|&a, &b| self.distance(current, b).cmp(&self.distance(current, a)).then(a.cmp(&b)));
            candidates.dedup();
            let mut next = None;
            for candidate in candidates {
                hops += 1;
                if self.bots.contains_key(&candidate) {
                    next = Some(candidate);
                    break;
                }
            }
            let Some(next) = next else {
                return Err(ChordError::RetryAfterStabilization { hops });
            };
            self.bots.get_mut(&current).expect("live").forwarded += 1;
            current = next;
            if hops > limit {
                return Err(ChordError::RetryAfterStabilization { hops });
            }
        }
    }

    pub fn entry_bot(&self, address: NodeAddress) -> Result<Key, ChordError> {
        self.id_of(address).ok_or(ChordError::UnknownBot(address))
    }

    pub fn mapping_create(
        &mut self,
        start: Key,
        lcid: &LogicalComputerId,
        replicas: BTreeSet<NodeAddress>,
    ) -> Result<Lookup, ChordError> {
        if replicas.is_empty() {
            return Err(ChordError::EmptyReplicas);
        }
        let key = key_of(lcid, self.config.bits);
        let found = self.lookup(start, key)?;
        let bot = self.bots.get_mut(&found.owner).expect("live");
        let slot = (key, lcid.clone());
        if bot.store.contains_key(&slot) {
            return Err(ChordError::AlreadyExists(lcid.clone()));
        }
        bot.store.insert(slot, MappingRecord { lcid: lcid.clone(), replicas, version: 1 });
        Ok(found)
    }

    pub fn mapping_update(
        &mut self,
        start: Key,
        lcid: &LogicalComputerId,
        replicas: BTreeSet<NodeAddress>,
    ) -> Result<(MappingRecord, Lookup), ChordError> {
        if replicas.is_empty() {
            return Err(ChordError::EmptyReplicas);
        }
        let key = key_of(lcid, self.config.bits);
        let found = self.lookup(start, key)?;
        let bot = self.bots.get_mut(&found.owner).expect("live");
        let record = bot.store.get_mut(&(key, lcid.clone())).ok_or_else(|| ChordError::NotFound(lcid.clone()))?;
        record.replicas = replicas;
        record.version += 1;
        Ok((record.clone(), found))
    }

    pub fn mapping_query(&mut self, start: Key, lcid: &LogicalComputerId) -> Result<(MappingRecord, Lookup), ChordError> {
        let key = key_of(lcid, self.config.bits);
        let found = self.lookup(start, key)?;
        let record = self.bots[&found.owner]
            .store
            .get(&(key, lcid.clone()))
            .cloned()
            .ok_or_else(|| ChordError::NotFound(lcid.clone()))?;
        Ok((record, found))
    }

    /// Unrouted query sent straight to the bot at `address`, as done with a
    /// cached addressing bot.
    pub fn query_direct(
        &mut self,
        address: NodeAddress,
        lcid: &LogicalComputerId,
    ) -> Result<Result<MappingRecord, ChordError>, DirectError> {
        let id = self.id_of(address).ok_or(DirectError::Departed)?;
        let key = key_of(lcid, self.config.bits);
        let bot = self.bots.get_mut(&id).expect("indexed");
        if !in_segment(key, bot.id, bot.successor) {
            bot.handled += 1;
            return Err(DirectError::WrongOwner);
        }
        bot.handled += 1;
        Ok(bot.store.get(&(key, lcid.clone())).cloned().ok_or_else(|| ChordError::NotFound(lcid.clone())))
    }

    pub fn record_count(&self) -> usize {
        self.bots.values().map(|b| b.store.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ring_with(ids: &[Key], bits: u32) -> ChordRing {
        let mut ring = ChordRing::new(ChordConfig { bits, stabilization_period: 1 });
        for (i, &id) in ids.iter().enumerate() {
            ring.join_with_id(NodeAddress(i as u32), id).unwrap();
        }
        ring.stabilize_all();
        ring
    }

    // Oracle: the owner is the live id with the largest value ≤ key, else the
    // largest id overall (wraparound).
    fn scan_owner(ids: &[Key], key: Key) -> Key {
        ids.iter().copied().filter(|&id| id <= key).max().unwrap_or_else(|| *ids.iter().max().unwrap())
    }

    #[test]
    fn small_ring_ownership() {
        let mut ring = ring_with(&[10, 50, 200], 8);
        for (key, owner) in [(60, 50), (5, 200), (10, 10), (255, 200), (199, 50)] {
            assert_eq!(scan_owner(&[10, 50, 200], key), owner);
            for start in [10, 50, 200] {
                assert_eq!(ring.lookup(start, key).unwrap().owner, owner, "key {key} from {start}");
            }
        }
    }

    #[test]
    fn fingers_respect_ranges() {
        let ring = ring_with(&[3, 17, 40, 99, 130, 250], 8);
        for bot in ring.bots() {
            for (i, f) in bot.fingers.iter().enumerate() {
                if let Some(f) = f {
                    let d = ring.distance(bot.id, *f) as u128;
                    assert!(d >= 1 << i && d < 1 << (i + 1));
                }
            }
        }
    }

    #[test]
    fn key_of_properties() {
        let a = LogicalComputerId::new("LC-1");
        assert_eq!(key_of(&a, 32), key_of(&a, 32));
        for bits in [8, 16, 32] {
            assert!((key_of(&a, bits) as u128) < 1u128 << bits);
        }
        let mut seen = std::collections::HashSet::new();
        let mut collisions = 0;
        for i in 0..10_000 {
            if !seen.insert(key_of(&LogicalComputerId::new(format!("lc-{i}")), 32)) {
                collisions += 1;
            }
        }
        // birthday expectation: 10^8 / 2^33 ≈ 0.012
        assert!(collisions < 5);
    }

    #[test]
    fn mapping_lifecycle() {
        let mut ring = ring_with(&[10, 50, 200], 8);
        let lc = LogicalComputerId::new("LC-1");
        let set = |xs: &[u32]| xs.iter().map(|&x| NodeAddress(x)).collect::<BTreeSet<_>>();
        ring.mapping_create(10, &lc, set(&[1, 2, 3])).unwrap();
        assert_eq!(ring.mapping_query(50, &lc).unwrap().0.replicas, set(&[1, 2, 3]));
        assert!(matches!(ring.mapping_create(200, &lc, set(&[1])), Err(ChordError::AlreadyExists(_))));
        let (rec, _) = ring.mapping_update(200, &lc, set(&[1, 2, 4])).unwrap();
        assert_eq!(rec.version, 2);
        assert_eq!(ring.mapping_query(10, &lc).unwrap().0.replicas, set(&[1, 2, 4]));
        assert!(matches!(
            ring.mapping_query(10, &LogicalComputerId::new("LC-unknown")),
            Err(ChordError::NotFound(_))
        ));
    }

    fn insert_raw(ring: &mut ChordRing, key: Key) {
        let owner = ring.owner_of(key).unwrap();
        let lc = LogicalComputerId::new(format!("raw-{key}"));
        ring.bots.get_mut(&owner).unwrap().store.insert(
            (key, lc.clone()),
            MappingRecord { lcid: lc, replicas: [NodeAddress(0)].into(), version: 1 },
        );
    }

    fn keys_at(ring: &ChordRing, id: Key) -> Vec<Key> {
        ring.bot(id).unwrap().store.keys().map(|(k, _)| *k).collect()
    }

    #[test]
    fn join_and_leave_hand_over_keys() {
        let mut ring = ring_with(&[10, 200], 8);
        for key in [5, 60, 100, 210] {
            insert_raw(&mut ring, key);
        }
        assert_eq!(keys_at(&ring, 10), vec![60, 100]);
        let before: Vec<_> = ring.bots().map(|b| (b.id, b.store.clone())).collect();
        ring.join_with_id(NodeAddress(9), 50).unwrap();
        ring.stabilize_all();
        assert_eq!(keys_at(&ring, 50), vec![60, 100]);
        assert!(keys_at(&ring, 10).is_empty());
        ring.leave(50).unwrap();
        ring.stabilize_all();
        assert_eq!(keys_at(&ring, 10), vec![60, 100]);
        let after: Vec<_> = ring.bots().map(|b| (b.id, b.store.clone())).collect();
        assert_eq!(before, after);
        assert!(matches!(ring_with(&[1], 8).leave(1), Err(ChordError::LastBot)));
    }

    #[test]
    fn segments_partition_key_space() {
        let mut ring = ring_with(&[7, 91, 92, 180, 255], 8);
        ring.join_with_id(NodeAddress(77), 0).unwrap();
        ring.leave(92).unwrap();
        ring.stabilize_all();
        for key in 0..=255u64 {
            let owners: Vec<Key> = ring.bots().filter(|b| in_segment(key, b.id, b.successor)).map(|b| b.id).collect();
            assert_eq!(owners.len(), 1, "key {key}");
        }
    }

    #[test]
    fn stale_cached_bot_is_detected() {
        let mut ring = ring_with(&[10, 50, 200], 8);
        let lc = LogicalComputerId::new("LC-7");
        let found = ring.mapping_create(10, &lc, [NodeAddress(1)].into()).unwrap();
        assert!(ring.query_direct(found.owner_address, &lc).unwrap().is_ok());
        ring.leave(found.owner).unwrap();
        assert_eq!(ring.query_direct(found.owner_address, &lc), Err(DirectError::Departed));
        let other = ring.bots().find(|b| !in_segment(key_of(&lc, 8), b.id, b.successor)).map(|b| b.address);
        if let Some(addr) = other {
            assert_eq!(ring.query_direct(addr, &lc), Err(DirectError::WrongOwner));
        }
    }

    #[test]
    fn single_bot_ring() {
        let mut ring = ring_with(&[42], 8);
        assert_eq!(ring.lookup(42, 7).unwrap(), Lookup { owner: 42, owner_address: NodeAddress(0), hops: 0 });
    }
}
