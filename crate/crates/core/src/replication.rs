//! Delta-based anti-entropy.
//!
//! Local mutations (and remote deltas that inflate local state) are appended
//! to a sequence-numbered [`DeltaBuffer`]. On every tick each active-view peer
//! is sent the deltas above its cumulative ack floor, joined per key. Peers
//! whose floor falls below the oldest retained entry get the full store
//! instead. Entries every peer has acknowledged are garbage-collected.
//!
//! [`ReplicationMode::FullState`] is the naive reference: it ships the whole
//! store whenever it changed since the peer's last ack.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::crdt::{CrdtState, Delta, NodeId};
use crate::runtime::Millis;
use crate::store::{Store, StoreKey};
use crate::wire::Message;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplicationMode {
    #[default]
    Delta,
    FullState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplicationConfig {
    pub sync_interval_ms: Millis,
    pub buffer_capacity: usize,
    pub mode: ReplicationMode,
}

impl Default for ReplicationConfig {
    fn default() -> Self {
        Self {
            sync_interval_ms: 1000,
            buffer_capacity: 1024,
            mode: ReplicationMode::Delta,
        }
    }
}

impl ReplicationConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.sync_interval_ms == 0 {
            return Err("sync_interval_ms must be > 0".into());
        }
        if self.buffer_capacity == 0 {
            return Err("buffer_capacity must be > 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct BufferedDelta {
    key: StoreKey,
    delta: Delta,
    /// Peer the delta was received from; it is not echoed back there.
    source: Option<NodeId>,
}

#[derive(Debug, Clone)]
pub struct DeltaBuffer {
    entries: BTreeMap<u64, BufferedDelta>,
    next_seq: u64,
    capacity: usize,
}

impl DeltaBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            entries: BTreeMap::new(),
            next_seq: 1,
            capacity: capacity.max(1),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Highest sequence number assigned so far (0 if none).
    pub fn last_seq(&self) -> u64 {
        self.next_seq - 1
    }

    /// Lowest retained sequence number, or `next_seq` when empty.
    pub fn first_retained(&self) -> u64 {
        self.entries.keys().next().copied().unwrap_or(self.next_seq)
    }

    fn push(&mut self, key: StoreKey, delta: Delta, source: Option<NodeId>) -> u64 {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.entries.insert(seq, BufferedDelta { key, delta, source });
        while self.entries.len() > self.capacity {
            self.entries.pop_first();
        }
        seq
    }

    /// Drops entries with sequence number `<= floor`.
    fn gc(&mut self, floor: u64) {
        while let Some((&seq, _)) = self.entries.first_key_value() {
            if seq > floor {
                break;
            }
            self.entries.pop_first();
        }
    }

    fn range(&self, from: u64, to: u64) -> impl Iterator<Item = (&u64, &BufferedDelta)> {
        self.entries.range(from..=to)
    }
}

/// Highest contiguous sequence number each active peer acknowledged.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AckMap {
    floors: BTreeMap<NodeId, u64>,
}

impl AckMap {
    pub fn get(&self, peer: NodeId) -> Option<u64> {
        self.floors.get(&peer).copied()
    }

    pub fn peers(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.floors.keys().copied()
    }

    fn reset(&mut self, peer: NodeId) {
        self.floors.insert(peer, 0);
    }

    fn remove(&mut self, peer: NodeId) {
        self.floors.remove(&peer);
    }

    /// Raises the floor; returns whether it moved. Unknown peers are ignored.
    fn raise(&mut self, peer: NodeId, seq: u64) -> bool {
        match self.floors.get_mut(&peer) {
            Some(f) if seq > *f => {
                *f = seq;
                true
            }
            _ => false,
        }
    }

    fn min_floor(&self) -> Option<u64> {
        self.floors.values().copied().min()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeltaGroup {
    pub sender: NodeId,
    pub start_seq: u64,
    pub end_seq: u64,
    pub items: Vec<(StoreKey, Delta)>,
}

impl DeltaGroup {
    pub fn into_message(self) -> Message {
        Message::DeltaGroup {
            start_seq: self.start_seq,
            end_seq: self.end_seq,
            items: self.items,
        }
    }
}

/// Per-node replication state.
#[derive(Debug, Clone)]
pub struct Replicator {
    config: ReplicationConfig,
    buffer: DeltaBuffer,
    acks: AckMap,
    /// Store version for full-state mode: bumped on every local or inflating
    /// remote change.
    version: u64,
}

#[derive(Debug, Default)]
pub struct Applied {
    pub inflated: Vec<StoreKey>,
    pub rejected: usize,
}

impl Replicator {
    pub fn new(config: ReplicationConfig) -> Self {
        Self {
            buffer: DeltaBuffer::new(config.buffer_capacity),
            config,
            acks: AckMap::default(),
            version: 0,
        }
    }

    pub fn config(&self) -> &ReplicationConfig {
        &self.config
    }

    pub fn buffer(&self) -> &DeltaBuffer {
        &self.buffer
    }

    pub fn acks(&self) -> &AckMap {
        &self.acks
    }

    pub fn record_local_delta(&mut self, key: StoreKey, delta: Delta) -> u64 {
        self.record(key, delta, None)
    }

    fn record(&mut self, key: StoreKey, delta: Delta, source: Option<NodeId>) -> u64 {
        match self.config.mode {
            ReplicationMode::Delta => self.buffer.push(key, delta, source),
            ReplicationMode::FullState => {
                self.version += 1;
                self.version
            }
        }
    }

    pub fn peer_up(&mut self, peer: NodeId) {
        self.acks.reset(peer);
    }

    pub fn peer_down(&mut self, peer: NodeId) {
        self.acks.remove(peer);
        self.gc();
    }

    fn last_seq(&self) -> u64 {
        match self.config.mode {
            ReplicationMode::Delta => self.buffer.last_seq(),
            ReplicationMode::FullState => self.version,
        }
    }

    fn full_state(&self, store: &Store) -> Message {
        Message::FullState {
            seq: self.last_seq(),
            items: store.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
        }
    }

    /// Messages to ship this sync interval, one per peer with pending data.
    pub fn anti_entropy_tick(&mut self, store: &Store) -> Vec<(NodeId, Message)> {
        let last = self.last_seq();
        let peers: Vec<(NodeId, u64)> = self.acks.floors.iter().map(|(&p, &f)| (p, f)).collect();
        let mut out = Vec::new();
        for (peer, floor) in peers {
            if floor >= last {
                continue;
            }
            if self.config.mode == ReplicationMode::FullState
                || floor + 1 < self.buffer.first_retained()
            {
                out.push((peer, self.full_state(store)));
                continue;
            }
            let mut joined: BTreeMap<StoreKey, Delta> = BTreeMap::new();
            for (_, entry) in self.buffer.range(floor + 1, last) {
                if entry.source == Some(peer) {
                    continue;
                }
                match joined.get_mut(&entry.key) {
                    Some(acc) => acc.merge(&entry.delta).expect("buffered deltas match key type"),
                    None => {
                        joined.insert(entry.key.clone(), entry.delta.clone());
                    }
                }
            }
            if joined.is_empty() {
                // everything pending came from this peer
                self.acks.raise(peer, last);
                continue;
            }
            out.push((
                peer,
                Message::DeltaGroup {
                    start_seq: floor + 1,
                    end_seq: last,
                    items: joined.into_iter().collect(),
                },
            ));
        }
        self.gc();
        out
    }

    fn apply_items(&mut self, store: &mut Store, sender: NodeId, items: &[(StoreKey, CrdtState)]) -> Applied {
        let mut applied = Applied::default();
        for (key, delta) in items {
            match store.join_remote(key, delta) {
                Ok(Some(fresh)) => {
                    self.record(key.clone(), fresh, Some(sender));
                    applied.inflated.push(key.clone());
                }
                Ok(None) => {}
                Err(_) => applied.rejected += 1,
            }
        }
        applied
    }

    /// Joins every item, re-buffers the inflating ones and acknowledges
    /// `end_seq`. Stale senders are handled the same way.
    pub fn on_delta_group(&mut self, store: &mut Store, group: &DeltaGroup) -> (Message, Applied) {
        let applied = self.apply_items(store, group.sender, &group.items);
        (Message::Ack { seq: group.end_seq }, applied)
    }

    pub fn on_full_state(
        &mut self,
        store: &mut Store,
        sender: NodeId,
        seq: u64,
        items: &[(StoreKey, CrdtState)],
    ) -> (Message, Applied) {
        let applied = self.apply_items(store, sender, items);
        (Message::Ack { seq }, applied)
    }

    pub fn on_ack(&mut self, peer: NodeId, seq: u64) {
        if self.acks.raise(peer, seq) {
            self.gc();
        }
    }

    /// Removes entries at or below the minimum floor of the active peers.
    pub fn gc(&mut self) {
        if let Some(floor) = self.acks.min_floor() {
            self.buffer.gc(floor);
        }
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        if self.buffer.len() > self.config.buffer_capacity.max(1) {
            return Err(format!(
                "delta buffer holds {} entries, capacity {}",
                self.buffer.len(),
                self.config.buffer_capacity
            ));
        }
        if let Some((&first, _)) = self.buffer.entries.first_key_value() {
            if first >= self.buffer.next_seq {
                return Err("delta buffer entry beyond next_seq".into());
            }
        }
        let last = self.last_seq();
        if let Some((p, f)) = self.acks.floors.iter().find(|(_, &f)| f > last) {
            return Err(format!("ack floor {f} of {p} exceeds last sequence {last}"));
        }
        Ok(())
    }

    /// Keys touched by buffered deltas.
    pub fn pending_keys(&self) -> BTreeSet<StoreKey> {
        self.buffer.entries.values().map(|e| e.key.clone()).collect()
    }
}
