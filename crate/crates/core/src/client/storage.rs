use std::collections::{BTreeMap, BTreeSet};

use crate::inventory::ObjectEntry;
use crate::model::{LogicalComputerId, NodeAddress, ObjectId};

/// A user's replicated store. Every replica serves the same payloads.
#[derive(Debug, Clone)]
pub struct LogicalComputer {
    pub lcid: LogicalComputerId,
    pub replicas: BTreeSet<NodeAddress>,
    /// Full objects, file contents included.
    pub objects: BTreeMap<ObjectId, ObjectEntry>,
}

/// All logical computers plus the replica-node index.
#[derive(Debug, Clone, Default)]
pub struct Storage {
    computers: BTreeMap<LogicalComputerId, LogicalComputer>,
    by_replica: BTreeMap<NodeAddress, LogicalComputerId>,
}

impl Storage {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, lc: LogicalComputer) {
        for r in &lc.replicas {
            self.by_replica.insert(*r, lc.lcid.clone());
        }
        self.computers.insert(lc.lcid.clone(), lc);
    }

    pub fn computer(&self, lcid: &LogicalComputerId) -> Option<&LogicalComputer> {
        self.computers.get(lcid)
    }

    pub fn computer_mut(&mut self, lcid: &LogicalComputerId) -> Option<&mut LogicalComputer> {
        self.computers.get_mut(lcid)
    }

    pub fn computers(&self) -> impl Iterator<Item = &LogicalComputer> {
        self.computers.values()
    }

    /// Swaps one replica node of `lcid` for `fresh`; returns the new replica set.
    pub fn replace_replica(&mut self, lcid: &LogicalComputerId, old: NodeAddress, fresh: NodeAddress) -> Option<BTreeSet<NodeAddress>> {
        let lc = self.computers.get_mut(lcid)?;
        if !lc.replicas.remove(&old) {
            return None;
        }
        lc.replicas.insert(fresh);
        self.by_replica.remove(&old);
        self.by_replica.insert(fresh, lcid.clone());
        Some(lc.replicas.clone())
    }

    /// Serves `oid` from the replica node at `address`, if that node is live
    /// and belongs to a logical computer holding the object.
    pub fn fetch(&self, address: NodeAddress, oid: &ObjectId) -> Option<&ObjectEntry> {
        let lcid = self.by_replica.get(&address)?;
        self.computers.get(lcid)?.objects.get(oid)
    }
}
