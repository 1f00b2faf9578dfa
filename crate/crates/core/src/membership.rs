//! HyParView partial-view membership.
//!
//! Each node keeps a small symmetric *active* view used for all traffic and a
//! larger *passive* view of backup peers. Joins spread through random walks,
//! failures (missed heartbeats) are repaired by promoting passive peers, and
//! periodic shuffles keep passive views fresh.
//!
//! Two additions beyond the base protocol keep partitions recoverable:
//! failed peers stay in the passive view marked *suspect*, and every
//! `probe_interval_ms` a node re-offers itself to one suspect. A node that
//! receives such an offer from a peer it also suspects accepts it even when
//! full, so links severed by a partition are restored once it heals.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IteratorRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::crdt::NodeId;
use crate::runtime::{Millis, NodeEvent, Outbox, Timer, ViewChange};
use crate::wire::Message;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MembershipConfig {
    /// Active view capacity.
    pub active_max: usize,
    /// Passive view capacity.
    pub passive_max: usize,
    /// Active random walk length (ForwardJoin and Shuffle TTL).
    pub active_walk: u32,
    /// Walk step at which a ForwardJoin records the joiner passively.
    pub passive_walk: u32,
    pub shuffle_interval_ms: Millis,
    pub shuffle_active: usize,
    pub shuffle_passive: usize,
    pub heartbeat_interval_ms: Millis,
    /// Consecutive missed heartbeats before a peer is declared failed.
    pub failure_threshold: u32,
    pub join_timeout_ms: Millis,
    /// Passes over the contact list before an unconfirmed join is
    /// abandoned. A join is confirmed only by the contact or its walk, so a
    /// node that others joined through still retries its own.
    pub join_attempts: u32,
    pub neighbor_timeout_ms: Millis,
    pub probe_interval_ms: Millis,
    /// Full passes over the passive view after which an unsuccessful repair
    /// gives up (while the active view is non-empty).
    pub repair_rounds: u32,
}

impl Default for MembershipConfig {
    fn default() -> Self {
        Self {
            active_max: 5,
            passive_max: 30,
            active_walk: 6,
            passive_walk: 3,
            shuffle_interval_ms: 10_000,
            shuffle_active: 3,
            shuffle_passive: 4,
            heartbeat_interval_ms: 1000,
            failure_threshold: 3,
            join_timeout_ms: 2000,
            join_attempts: 10,
            neighbor_timeout_ms: 1000,
            probe_interval_ms: 2000,
            repair_rounds: 3,
        }
    }
}

impl MembershipConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.active_max < 1 {
            return Err("active_max must be >= 1".into());
        }
        if self.passive_walk > self.active_walk {
            return Err("passive_walk must be <= active_walk".into());
        }
        if self.shuffle_active > self.active_max {
            return Err("shuffle_active must be <= active_max".into());
        }
        if self.shuffle_passive > self.passive_max {
            return Err("shuffle_passive must be <= passive_max".into());
        }
        if self.join_attempts == 0 {
            return Err("join_attempts must be >= 1".into());
        }
        if self.heartbeat_interval_ms == 0 || self.shuffle_interval_ms == 0 {
            return Err("heartbeat and shuffle intervals must be > 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MembershipView {
    pub me: NodeId,
    pub active: BTreeSet<NodeId>,
    pub passive: BTreeSet<NodeId>,
}

impl MembershipView {
    fn new(me: NodeId) -> Self {
        Self {
            me,
            active: BTreeSet::new(),
            passive: BTreeSet::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Membership {
    config: MembershipConfig,
    view: MembershipView,
    contacts: Vec<NodeId>,
    rng: ChaCha8Rng,
    last_heard: BTreeMap<NodeId, Millis>,
    suspects: BTreeSet<NodeId>,
    pending: Option<NodeId>,
    tried: BTreeSet<NodeId>,
    wanted: u32,
    exhausted_rounds: u32,
    joining: Option<u32>,
    last_probe: Millis,
    last_shuffle_sample: Vec<NodeId>,
}

impl Membership {
    pub fn new(me: NodeId, config: MembershipConfig, contacts: Vec<NodeId>, rng: ChaCha8Rng) -> Self {
        let mut seen = BTreeSet::new();
        let contacts: Vec<NodeId> = contacts
            .into_iter()
            .filter(|&c| c != me && seen.insert(c))
            .collect();
        let mut view = MembershipView::new(me);
        view.passive = contacts.iter().copied().take(config.passive_max).collect();
        Self {
            config,
            view,
            contacts,
            rng,
            last_heard: BTreeMap::new(),
            suspects: BTreeSet::new(),
            pending: None,
            tried: BTreeSet::new(),
            wanted: 0,
            exhausted_rounds: 0,
            joining: None,
            last_probe: 0,
            last_shuffle_sample: Vec::new(),
        }
    }

    pub fn me(&self) -> NodeId {
        self.view.me
    }

    pub fn config(&self) -> &MembershipConfig {
        &self.config
    }

    pub fn view(&self) -> &MembershipView {
        &self.view
    }

    pub fn active(&self) -> &BTreeSet<NodeId> {
        &self.view.active
    }

    pub fn passive(&self) -> &BTreeSet<NodeId> {
        &self.view.passive
    }

    pub fn suspects(&self) -> &BTreeSet<NodeId> {
        &self.suspects
    }

    pub fn is_active(&self, peer: NodeId) -> bool {
        self.view.active.contains(&peer)
    }

    /// Arms the periodic timers and, if `join` is set, joins through the
    /// first contact. Contacts are kept for rejoining either way.
    pub fn start(&mut self, now: Millis, join: bool, out: &mut Outbox) {
        self.last_probe = now;
        out.timer(self.config.heartbeat_interval_ms, Timer::Heartbeat);
        out.timer(self.config.shuffle_interval_ms, Timer::Shuffle);
        if join && !self.contacts.is_empty() {
            self.start_join(0, out);
        }
    }

    /// Joins the overlay via `contact`, falling back to the configured
    /// contacts if it does not answer.
    pub fn join(&mut self, contact: NodeId, out: &mut Outbox) {
        if contact == self.me() {
            return;
        }
        if let Some(pos) = self.contacts.iter().position(|&c| c == contact) {
            self.start_join(pos as u32, out);
        } else {
            self.contacts.insert(0, contact);
            self.start_join(0, out);
        }
    }

    fn start_join(&mut self, attempt: u32, out: &mut Outbox) {
        let contact = self.contacts[attempt as usize % self.contacts.len()];
        self.joining = Some(attempt);
        out.send(contact, Message::Join);
        out.timer(self.config.join_timeout_ms, Timer::JoinTimeout { attempt });
    }

    /// Records liveness evidence for `peer`.
    pub fn heard_from(&mut self, peer: NodeId, now: Millis) {
        if let Some(t) = self.last_heard.get_mut(&peer) {
            *t = now;
        }
    }

    fn pick<'a, I: IntoIterator<Item = &'a NodeId>>(rng: &mut ChaCha8Rng, it: I) -> Option<NodeId> {
        it.into_iter().copied().choose(rng)
    }

    fn add_active(&mut self, peer: NodeId, now: Millis, out: &mut Outbox) {
        if peer == self.me() {
            return;
        }
        if self.view.active.contains(&peer) {
            // a known peer re-introducing itself may have restarted
            self.last_heard.insert(peer, now);
            out.view.push(ViewChange::Up(peer));
            return;
        }
        if self.view.active.len() >= self.config.active_max {
            let victim = Self::pick(&mut self.rng, &self.view.active).expect("full view is non-empty");
            self.remove_active(victim, out);
            out.send(victim, Message::Disconnect);
            self.add_passive(victim);
        }
        self.view.passive.remove(&peer);
        self.suspects.remove(&peer);
        self.view.active.insert(peer);
        self.last_heard.insert(peer, now);
        out.view.push(ViewChange::Up(peer));
        if self.view.active.len() >= self.config.active_max {
            self.wanted = 0;
        } else {
            self.wanted = self.wanted.saturating_sub(1);
        }
    }

    fn remove_active(&mut self, peer: NodeId, out: &mut Outbox) -> bool {
        if self.view.active.remove(&peer) {
            self.last_heard.remove(&peer);
            out.view.push(ViewChange::Down(peer));
            true
        } else {
            false
        }
    }

    fn add_passive(&mut self, peer: NodeId) {
        self.add_passive_preferring(peer, &[]);
    }

    fn add_passive_preferring(&mut self, peer: NodeId, evict_first: &[NodeId]) {
        if peer == self.me() || self.view.active.contains(&peer) || self.view.passive.contains(&peer) {
            return;
        }
        if self.config.passive_max == 0 {
            return;
        }
        if self.view.passive.len() >= self.config.passive_max {
            let victim = evict_first
                .iter()
                .copied()
                .find(|n| self.view.passive.contains(n))
                .or_else(|| Self::pick(&mut self.rng, &self.view.passive))
                .expect("full passive view is non-empty");
            self.view.passive.remove(&victim);
            self.suspects.remove(&victim);
        }
        self.view.passive.insert(peer);
    }

    pub fn on_message(&mut self, now: Millis, from: NodeId, msg: &Message, out: &mut Outbox) {
        match msg {
            Message::Join => self.on_join(now, from, out),
            Message::ForwardJoin { joiner, ttl } => self.on_forward_join(now, from, *joiner, *ttl, out),
            Message::Neighbor { high_priority } => self.on_neighbor(now, from, *high_priority, out),
            Message::NeighborAccept => self.on_neighbor_accept(now, from, out),
            Message::NeighborReject => self.on_neighbor_reject(now, from, out),
            Message::Disconnect => self.on_disconnect(now, from, out),
            Message::Shuffle { origin, ttl, nodes } => self.on_shuffle(from, *origin, *ttl, nodes, out),
            Message::ShuffleReply { nodes } => {
                let sent = std::mem::take(&mut self.last_shuffle_sample);
                self.integrate(nodes, &sent);
            }
            Message::Heartbeat => self.on_heartbeat(from, out),
            _ => {}
        }
    }

    fn on_join(&mut self, now: Millis, joiner: NodeId, out: &mut Outbox) {
        if joiner == self.me() {
            return;
        }
        self.add_active(joiner, now, out);
        out.send(joiner, Message::NeighborAccept);
        let others: Vec<NodeId> = self.view.active.iter().copied().filter(|&p| p != joiner).collect();
        for p in others {
            out.send(
                p,
                Message::ForwardJoin {
                    joiner,
                    ttl: self.config.active_walk,
                },
            );
        }
    }

    /// One step of a join random walk.
    pub fn on_forward_join(&mut self, now: Millis, sender: NodeId, joiner: NodeId, ttl: u32, out: &mut Outbox) {
        if joiner == self.me() {
            return;
        }
        let terminal = ttl == 0 || self.view.active.len() <= 1;
        if !terminal {
            if ttl == self.config.passive_walk {
                self.add_passive(joiner);
            }
            let next = Self::pick(
                &mut self.rng,
                self.view.active.iter().filter(|&&p| p != sender && p != joiner),
            );
            if let Some(next) = next {
                out.send(next, Message::ForwardJoin { joiner, ttl: ttl - 1 });
                return;
            }
        }
        if !self.view.active.contains(&joiner) {
            self.add_active(joiner, now, out);
            out.send(joiner, Message::Neighbor { high_priority: true });
        }
    }

    fn join_contact(&self) -> Option<NodeId> {
        self.joining.map(|a| self.contacts[a as usize % self.contacts.len()])
    }

    fn on_neighbor(&mut self, now: Millis, from: NodeId, high_priority: bool, out: &mut Outbox) {
        if from == self.me() {
            return;
        }
        if high_priority && self.joining.is_some() {
            // the end of our join walk
            self.joining = None;
        }
        let accept = high_priority
            || self.view.active.contains(&from)
            || self.view.active.len() < self.config.active_max
            || self.suspects.contains(&from)
            || self.pending == Some(from);
        if accept {
            if self.pending == Some(from) {
                self.pending = None;
            }
            self.add_active(from, now, out);
            out.send(from, Message::NeighborAccept);
        } else {
            out.send(from, Message::NeighborReject);
            self.add_passive(from);
        }
    }

    fn on_neighbor_accept(&mut self, now: Millis, from: NodeId, out: &mut Outbox) {
        if self.pending == Some(from) {
            self.pending = None;
            self.tried.clear();
            self.exhausted_rounds = 0;
        }
        if self.join_contact() == Some(from) {
            self.joining = None;
        }
        if !self.view.active.contains(&from) {
            self.add_active(from, now, out);
        }
        self.try_promote(out);
    }

    fn on_neighbor_reject(&mut self, _now: Millis, from: NodeId, out: &mut Outbox) {
        self.suspects.remove(&from);
        if self.pending == Some(from) {
            self.pending = None;
            self.tried.insert(from);
            self.try_promote(out);
        }
    }

    fn on_disconnect(&mut self, _now: Millis, from: NodeId, out: &mut Outbox) {
        if self.remove_active(from, out) {
            self.add_passive(from);
            self.wanted += 1;
            self.try_promote(out);
        }
    }

    fn on_heartbeat(&mut self, from: NodeId, out: &mut Outbox) {
        if self.view.active.contains(&from) || self.pending == Some(from) || self.joining.is_some() {
            return;
        }
        // the sender believes we are neighbors; we do not
        out.send(from, Message::Disconnect);
    }

    /// Drops a failed active peer and starts looking for a replacement.
    pub fn on_peer_failure(&mut self, peer: NodeId, out: &mut Outbox) {
        if !self.remove_active(peer, out) {
            return;
        }
        self.add_passive(peer);
        if self.view.passive.contains(&peer) {
            self.suspects.insert(peer);
        }
        self.wanted += 1;
        self.try_promote(out);
    }

    /// Sends a Neighbor request to a random untried passive peer, if a
    /// replacement is wanted and none is outstanding.
    fn try_promote(&mut self, out: &mut Outbox) {
        if self.pending.is_some() {
            return;
        }
        if self.view.active.len() >= self.config.active_max {
            self.wanted = 0;
            return;
        }
        if self.wanted == 0 && !self.view.active.is_empty() {
            return;
        }
        let fresh = Self::pick(
            &mut self.rng,
            self.view
                .passive
                .iter()
                .filter(|p| !self.tried.contains(p) && !self.suspects.contains(p)),
        );
        let candidate = fresh.or_else(|| {
            Self::pick(
                &mut self.rng,
                self.view.passive.iter().filter(|p| !self.tried.contains(p)),
            )
        });
        let Some(candidate) = candidate else {
            self.tried.clear();
            self.exhausted_rounds += 1;
            if self.exhausted_rounds >= self.config.repair_rounds && !self.view.active.is_empty() {
                self.wanted = 0;
                self.exhausted_rounds = 0;
            }
            return;
        };
        self.tried.insert(candidate);
        self.pending = Some(candidate);
        out.send(
            candidate,
            Message::Neighbor {
                high_priority: self.view.active.is_empty(),
            },
        );
        out.timer(self.config.neighbor_timeout_ms, Timer::NeighborTimeout(candidate));
    }

    pub fn on_timer(&mut self, now: Millis, timer: &Timer, out: &mut Outbox) {
        match timer {
            Timer::Heartbeat => self.heartbeat_tick(now, out),
            Timer::Shuffle => self.shuffle_tick(out),
            Timer::JoinTimeout { attempt } => self.on_join_timeout(*attempt, out),
            Timer::Rejoin => {
                if self.view.active.is_empty() && self.joining.is_none() && !self.contacts.is_empty() {
                    self.start_join(0, out);
                }
            }
            Timer::NeighborTimeout(peer) if self.pending == Some(*peer) => {
                self.pending = None;
                if self.view.passive.contains(peer) {
                    self.suspects.insert(*peer);
                }
                self.try_promote(out);
            }
            _ => {}
        }
    }

    fn on_join_timeout(&mut self, attempt: u32, out: &mut Outbox) {
        if self.joining != Some(attempt) {
            return;
        }
        let next = attempt + 1;
        let pass_done = (next as usize).is_multiple_of(self.contacts.len());
        if self.view.active.is_empty() && pass_done {
            self.joining = None;
            out.event(NodeEvent::JoinFailed);
            out.timer(self.config.shuffle_interval_ms, Timer::Rejoin);
        } else if next as usize >= self.contacts.len() * self.config.join_attempts as usize {
            self.joining = None;
        } else {
            self.start_join(next, out);
        }
    }

    fn heartbeat_tick(&mut self, now: Millis, out: &mut Outbox) {
        for &p in &self.view.active {
            out.send(p, Message::Heartbeat);
        }
        let deadline = self.config.heartbeat_interval_ms * u64::from(self.config.failure_threshold);
        let failed: Vec<NodeId> = self
            .view
            .active
            .iter()
            .copied()
            .filter(|p| self.last_heard.get(p).is_some_and(|&t| now.saturating_sub(t) > deadline))
            .collect();
        for p in failed {
            self.on_peer_failure(p, out);
        }
        if self.view.active.is_empty() && self.pending.is_none() {
            if !self.view.passive.is_empty() {
                self.wanted = self.wanted.max(1);
                self.try_promote(out);
            } else if self.joining.is_none() && !self.contacts.is_empty() {
                self.start_join(0, out);
            }
        }
        if now.saturating_sub(self.last_probe) >= self.config.probe_interval_ms {
            self.last_probe = now;
            let suspect = Self::pick(
                &mut self.rng,
                self.suspects.iter().filter(|s| self.view.passive.contains(s)),
            );
            if let Some(s) = suspect {
                out.send(s, Message::Neighbor { high_priority: false });
            }
        }
        out.timer(self.config.heartbeat_interval_ms, Timer::Heartbeat);
    }

    /// Starts a shuffle random walk and tops up an under-full active view.
    /// The top-up is what merges overlays that formed separately, e.g. when
    /// a join was lost and later nodes joined through the stranded node.
    pub fn shuffle_tick(&mut self, out: &mut Outbox) {
        self.tried.clear();
        if self.view.active.len() < self.config.active_max {
            self.wanted = self.wanted.max(1);
        }
        self.try_promote(out);
        if let Some(target) = Self::pick(&mut self.rng, &self.view.active) {
            let mut sample = vec![self.me()];
            sample.extend(
                self.view
                    .active
                    .iter()
                    .copied()
                    .filter(|&p| p != target)
                    .choose_multiple(&mut self.rng, self.config.shuffle_active),
            );
            sample.extend(
                self.view
                    .passive
                    .iter()
                    .copied()
                    .choose_multiple(&mut self.rng, self.config.shuffle_passive),
            );
            self.last_shuffle_sample = sample.clone();
            out.send(
                target,
                Message::Shuffle {
                    origin: self.me(),
                    ttl: self.config.active_walk,
                    nodes: sample,
                },
            );
        }
        out.timer(self.config.shuffle_interval_ms, Timer::Shuffle);
    }

    fn on_shuffle(&mut self, sender: NodeId, origin: NodeId, ttl: u32, nodes: &[NodeId], out: &mut Outbox) {
        if origin == self.me() {
            return;
        }
        let ttl = ttl.saturating_sub(1);
        if ttl > 0 && self.view.active.len() > 1 {
            let next = Self::pick(
                &mut self.rng,
                self.view.active.iter().filter(|&&p| p != sender && p != origin),
            );
            if let Some(next) = next {
                out.send(
                    next,
                    Message::Shuffle {
                        origin,
                        ttl,
                        nodes: nodes.to_vec(),
                    },
                );
                return;
            }
        }
        let reply: Vec<NodeId> = self
            .view
            .passive
            .iter()
            .copied()
            .filter(|&p| p != origin)
            .choose_multiple(&mut self.rng, nodes.len());
        out.send(origin, Message::ShuffleReply { nodes: reply.clone() });
        self.integrate(nodes, &reply);
    }

    fn integrate(&mut self, nodes: &[NodeId], evict_first: &[NodeId]) {
        for &n in nodes {
            self.add_passive_preferring(n, evict_first);
        }
    }

    /// Returns a uniformly random active peer, if any.
    pub fn random_active(&mut self) -> Option<NodeId> {
        Self::pick(&mut self.rng, &self.view.active)
    }

    pub fn random_unit(&mut self) -> f64 {
        self.rng.gen()
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        let v = &self.view;
        if v.active.len() > self.config.active_max {
            return Err(format!("{}: active view {} > {}", v.me, v.active.len(), self.config.active_max));
        }
        if v.passive.len() > self.config.passive_max {
            return Err(format!("{}: passive view {} > {}", v.me, v.passive.len(), self.config.passive_max));
        }
        if v.active.contains(&v.me) || v.passive.contains(&v.me) {
            return Err(format!("{}: self in own view", v.me));
        }
        if let Some(p) = v.active.intersection(&v.passive).next() {
            return Err(format!("{}: {} in both active and passive views", v.me, p));
        }
        Ok(())
    }
}
