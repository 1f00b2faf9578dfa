//! Plumtree epidemic broadcast trees.
//!
//! Payloads travel eagerly along a spanning tree carved out of the active
//! view; the remaining active links carry batched `IHave` announcements.
//! Duplicates prune redundant tree edges and missing announcements graft
//! new ones.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::crdt::NodeId;
use crate::runtime::{Millis, NodeEvent, Outbox, Timer};
use crate::wire::Message;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MessageId {
    pub origin: NodeId,
    pub seq: u64,
}

impl fmt::Display for MessageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.origin, self.seq)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BroadcastConfig {
    pub graft_timeout_ms: Millis,
    /// Delay before trying the next announcer after a graft went unanswered.
    pub second_chance_ms: Millis,
    pub ihave_interval_ms: Millis,
    pub cache_capacity: usize,
}

impl Default for BroadcastConfig {
    fn default() -> Self {
        Self {
            graft_timeout_ms: 200,
            second_chance_ms: 400,
            ihave_interval_ms: 100,
            cache_capacity: 256,
        }
    }
}

impl BroadcastConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.graft_timeout_ms == 0 || self.second_chance_ms == 0 || self.ihave_interval_ms == 0 {
            return Err("broadcast timeouts must be > 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
struct Missing {
    announcers: VecDeque<NodeId>,
    timer_armed: bool,
}

/// A payload handed to the layer above.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery {
    pub id: MessageId,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct BroadcastState {
    config: BroadcastConfig,
    origin: NodeId,
    next_seq: u64,
    eager: BTreeSet<NodeId>,
    lazy: BTreeSet<NodeId>,
    delivered: BTreeSet<MessageId>,
    missing: BTreeMap<MessageId, Missing>,
    cache: IndexMap<MessageId, Vec<u8>>,
    pending_ihave: BTreeMap<NodeId, Vec<MessageId>>,
    flush_armed: bool,
}

impl BroadcastState {
    /// `origin` names this node in message ids. It should change across
    /// restarts so that fresh broadcasts are not mistaken for old ones.
    pub fn new(origin: NodeId, config: BroadcastConfig) -> Self {
        Self {
            config,
            origin,
            next_seq: 0,
            eager: BTreeSet::new(),
            lazy: BTreeSet::new(),
            delivered: BTreeSet::new(),
            missing: BTreeMap::new(),
            cache: IndexMap::new(),
            pending_ihave: BTreeMap::new(),
            flush_armed: false,
        }
    }

    pub fn eager(&self) -> &BTreeSet<NodeId> {
        &self.eager
    }

    pub fn lazy(&self) -> &BTreeSet<NodeId> {
        &self.lazy
    }

    pub fn has_delivered(&self, id: &MessageId) -> bool {
        self.delivered.contains(id)
    }

    pub fn is_missing(&self, id: &MessageId) -> bool {
        self.missing.contains_key(id)
    }

    pub fn cached(&self, id: &MessageId) -> bool {
        self.cache.contains_key(id)
    }

    fn is_peer(&self, p: NodeId) -> bool {
        self.eager.contains(&p) || self.lazy.contains(&p)
    }

    pub fn neighbor_up(&mut self, peer: NodeId) {
        self.lazy.remove(&peer);
        self.eager.insert(peer);
    }

    pub fn neighbor_down(&mut self, peer: NodeId) {
        self.eager.remove(&peer);
        self.lazy.remove(&peer);
        self.pending_ihave.remove(&peer);
        for m in self.missing.values_mut() {
            m.announcers.retain(|&a| a != peer);
        }
    }

    fn remember(&mut self, id: MessageId, payload: &[u8]) {
        if self.config.cache_capacity == 0 {
            return;
        }
        self.cache.shift_remove(&id);
        if self.cache.len() >= self.config.cache_capacity {
            self.cache.shift_remove_index(0);
        }
        self.cache.insert(id, payload.to_vec());
    }

    fn announce(&mut self, id: MessageId, except: Option<NodeId>, out: &mut Outbox) {
        for &p in &self.lazy {
            if Some(p) != except {
                self.pending_ihave.entry(p).or_default().push(id);
            }
        }
        if !self.pending_ihave.is_empty() && !self.flush_armed {
            self.flush_armed = true;
            out.timer(self.config.ihave_interval_ms, Timer::IHaveFlush);
        }
    }

    /// Originates a broadcast. The payload is delivered locally at once.
    pub fn broadcast(&mut self, payload: Vec<u8>, out: &mut Outbox) -> Delivery {
        let id = MessageId {
            origin: self.origin,
            seq: self.next_seq,
        };
        self.next_seq += 1;
        self.delivered.insert(id);
        self.remember(id, &payload);
        for &p in &self.eager {
            out.send(
                p,
                Message::Gossip {
                    id,
                    round: 0,
                    payload: payload.clone(),
                },
            );
        }
        self.announce(id, None, out);
        out.event(NodeEvent::Delivered { id, round: 0 });
        Delivery { id, payload }
    }

    /// Handles a broadcast-layer message, returning a fresh delivery if any.
    pub fn on_message(&mut self, from: NodeId, msg: &Message, out: &mut Outbox) -> Option<Delivery> {
        match msg {
            Message::Gossip { id, round, payload } => return self.on_gossip(from, *id, *round, payload, out),
            Message::IHave { ids } => {
                for id in ids {
                    self.on_ihave(from, *id, out);
                }
            }
            Message::Graft { id } => self.on_graft(from, *id, out),
            Message::Prune if self.eager.remove(&from) => {
                self.lazy.insert(from);
            }
            _ => {}
        }
        None
    }

    fn on_gossip(
        &mut self,
        from: NodeId,
        id: MessageId,
        round: u32,
        payload: &[u8],
        out: &mut Outbox,
    ) -> Option<Delivery> {
        if !self.is_peer(from) {
            return None;
        }
        if self.delivered.contains(&id) {
            if self.eager.remove(&from) {
                self.lazy.insert(from);
            }
            out.send(from, Message::Prune);
            return None;
        }
        self.delivered.insert(id);
        self.missing.remove(&id);
        self.remember(id, payload);
        for &p in &self.eager {
            if p != from {
                out.send(
                    p,
                    Message::Gossip {
                        id,
                        round: round + 1,
                        payload: payload.to_vec(),
                    },
                );
            }
        }
        self.announce(id, Some(from), out);
        self.lazy.remove(&from);
        self.eager.insert(from);
        out.event(NodeEvent::Delivered { id, round: round + 1 });
        Some(Delivery {
            id,
            payload: payload.to_vec(),
        })
    }

    fn on_ihave(&mut self, from: NodeId, id: MessageId, out: &mut Outbox) {
        if self.delivered.contains(&id) || !self.is_peer(from) {
            return;
        }
        let m = self.missing.entry(id).or_default();
        if !m.announcers.contains(&from) {
            m.announcers.push_back(from);
        }
        if !m.timer_armed {
            m.timer_armed = true;
            out.timer(self.config.graft_timeout_ms, Timer::GraftTimeout(id));
        }
    }

    fn on_graft(&mut self, from: NodeId, id: MessageId, out: &mut Outbox) {
        if !self.is_peer(from) {
            return;
        }
        self.lazy.remove(&from);
        self.eager.insert(from);
        if let Some(payload) = self.cache.get(&id) {
            out.send(
                from,
                Message::Gossip {
                    id,
                    round: 0,
                    payload: payload.clone(),
                },
            );
        }
    }

    pub fn on_timer(&mut self, _now: Millis, timer: &Timer, out: &mut Outbox) {
        match timer {
            Timer::IHaveFlush => {
                self.flush_armed = false;
                for (peer, ids) in std::mem::take(&mut self.pending_ihave) {
                    if self.is_peer(peer) {
                        out.send(peer, Message::IHave { ids });
                    }
                }
            }
            Timer::GraftTimeout(id) => self.on_graft_timeout(*id, out),
            _ => {}
        }
    }

    fn on_graft_timeout(&mut self, id: MessageId, out: &mut Outbox) {
        if self.delivered.contains(&id) {
            self.missing.remove(&id);
            return;
        }
        let Some(m) = self.missing.get_mut(&id) else {
            return;
        };
        let next = loop {
            match m.announcers.pop_front() {
                Some(a) if self.eager.contains(&a) || self.lazy.contains(&a) => break Some(a),
                Some(_) => continue,
                None => break None,
            }
        };
        match next {
            Some(a) => {
                out.timer(self.config.second_chance_ms, Timer::GraftTimeout(id));
                self.lazy.remove(&a);
                self.eager.insert(a);
                out.send(a, Message::Graft { id });
            }
            None => {
                // wait for a fresh announcement to re-arm the timer
                self.missing.remove(&id);
            }
        }
    }

    pub fn check_invariants(&self, active: &BTreeSet<NodeId>) -> Result<(), String> {
        if let Some(p) = self.eager.intersection(&self.lazy).next() {
            return Err(format!("{p} is both eager and lazy"));
        }
        let union: BTreeSet<NodeId> = self.eager.union(&self.lazy).copied().collect();
        if &union != active {
            return Err(format!("eager+lazy {union:?} != active view {active:?}"));
        }
        if let Some(id) = self.missing.keys().find(|id| self.delivered.contains(id)) {
            return Err(format!("{id} is both delivered and missing"));
        }
        if self.cache.len() > self.config.cache_capacity {
            return Err("payload cache over capacity".into());
        }
        Ok(())
    }
}
