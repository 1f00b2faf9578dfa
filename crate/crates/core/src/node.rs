//! One cluster node: store, replication, membership, broadcast and tasks
//! behind a single serial event handler.

use serde::{Deserialize, Serialize};

use crate::broadcast::{BroadcastConfig, BroadcastState, Delivery, MessageId};
use crate::codec::{CodecError, Reader, Writer};
use crate::crdt::{CrdtState, Delta, MutatorOp, NodeId, QueryResult};
use crate::membership::{Membership, MembershipConfig};
use crate::replication::{DeltaGroup, ReplicationConfig, Replicator};
use crate::runtime::{derive_rng, Millis, NodeEvent, Outbox, Timer, ViewChange};
use crate::sim::sensor::SensorConfig;
use crate::store::{Store, StoreError, StoreKey};
use crate::task::{self, ExecutionResult, NodeEnv, SchedulerConfig, TaskError, TaskRegistry, TaskRuntime, TaskSpec};
use crate::wire::Message;

const PAYLOAD_APP: u8 = 0x00;
const PAYLOAD_STORE_DELTA: u8 = 0x01;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NodeConfig {
    pub membership: MembershipConfig,
    pub replication: ReplicationConfig,
    pub broadcast: BroadcastConfig,
    pub scheduler: SchedulerConfig,
    pub sensors: SensorConfig,
}

impl NodeConfig {
    pub fn validate(&self) -> Result<(), Vec<String>> {
        let mut errs = Vec::new();
        let checks = [
            ("membership", self.membership.validate()),
            ("replication", self.replication.validate()),
            ("broadcast", self.broadcast.validate()),
            ("scheduler", self.scheduler.validate()),
            ("sensors", self.sensors.validate()),
        ];
        for (section, r) in checks {
            if let Err(e) = r {
                errs.push(format!("{section}: {e}"));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }
}

/// Actor id for CRDT dots and counter entries: the network id in the low
/// half, the incarnation in the high half.
pub fn actor_id(node: NodeId, epoch: u32) -> NodeId {
    NodeId(node.raw() | (u64::from(epoch) << 32))
}

fn encode_store_delta(key: &StoreKey, delta: &Delta) -> Vec<u8> {
    let mut w = Writer::new();
    w.u8(PAYLOAD_STORE_DELTA);
    key.encode_into(&mut w);
    delta.encode_into(&mut w);
    w.into_bytes()
}

fn decode_store_delta(bytes: &[u8]) -> Result<(StoreKey, Delta), CodecError> {
    let mut r = Reader::new(bytes);
    r.u8()?;
    let key = StoreKey::decode_from(&mut r)?;
    let delta = CrdtState::decode_from(&mut r)?;
    r.finish()?;
    Ok((key, delta))
}

#[derive(Debug, Clone)]
pub struct Node {
    env: NodeEnv,
    store: Store,
    replicator: Replicator,
    membership: Membership,
    broadcast: BroadcastState,
    tasks: TaskRuntime,
    config: NodeConfig,
    lamport: u64,
}

impl Node {
    pub fn new(
        node: NodeId,
        epoch: u32,
        seed: u64,
        config: NodeConfig,
        contacts: Vec<NodeId>,
        registry: TaskRegistry,
    ) -> Self {
        let actor = actor_id(node, epoch);
        let env = NodeEnv {
            node,
            actor,
            epoch,
            seed,
            sensors: config.sensors,
        };
        let domain = |d: u64| derive_rng(seed, &[d, node.raw(), u64::from(epoch)]);
        Self {
            store: Store::new(),
            replicator: Replicator::new(config.replication.clone()),
            membership: Membership::new(node, config.membership.clone(), contacts, domain(1)),
            broadcast: BroadcastState::new(actor, config.broadcast.clone()),
            tasks: TaskRuntime::new(registry, config.scheduler.clone(), domain(2)),
            env,
            config,
            lamport: 0,
        }
    }

    pub fn id(&self) -> NodeId {
        self.env.node
    }

    pub fn actor(&self) -> NodeId {
        self.env.actor
    }

    pub fn epoch(&self) -> u32 {
        self.env.epoch
    }

    pub fn config(&self) -> &NodeConfig {
        &self.config
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn replicator(&self) -> &Replicator {
        &self.replicator
    }

    pub fn membership(&self) -> &Membership {
        &self.membership
    }

    pub fn broadcast_state(&self) -> &BroadcastState {
        &self.broadcast
    }

    pub fn tasks(&self) -> &TaskRuntime {
        &self.tasks
    }

    /// Arms periodic timers; `join` triggers the initial overlay join.
    pub fn start(&mut self, now: Millis, join: bool) -> Outbox {
        let mut out = Outbox::new();
        self.membership.start(now, join, &mut out);
        out.timer(self.config.replication.sync_interval_ms, Timer::AntiEntropy);
        out.timer(self.config.scheduler.cycle_ms, Timer::Scheduler);
        self.settle(&mut out);
        out
    }

    /// Applies pending view changes to the layers above membership.
    fn settle(&mut self, out: &mut Outbox) {
        for change in std::mem::take(&mut out.view) {
            match change {
                ViewChange::Up(p) => {
                    self.replicator.peer_up(p);
                    self.broadcast.neighbor_up(p);
                    out.event(NodeEvent::PeerUp(p));
                }
                ViewChange::Down(p) => {
                    self.replicator.peer_down(p);
                    self.broadcast.neighbor_down(p);
                    out.event(NodeEvent::PeerDown(p));
                }
            }
        }
    }

    fn observe_clock(&mut self, items: &[(StoreKey, Delta)]) {
        for (_, d) in items {
            if let CrdtState::LWWRegister(r) = d {
                self.lamport = self.lamport.max(r.timestamp());
            }
        }
    }

    /// Decodes and handles one datagram.
    pub fn on_bytes(&mut self, now: Millis, bytes: &[u8]) -> Outbox {
        match Message::decode(bytes) {
            Ok((from, msg)) => self.on_message(now, from, &msg),
            Err(e) => {
                let mut out = Outbox::new();
                out.event(NodeEvent::DecodeError(e.to_string()));
                out
            }
        }
    }

    pub fn on_message(&mut self, now: Millis, from: NodeId, msg: &Message) -> Outbox {
        let mut out = Outbox::new();
        self.membership.heard_from(from, now);
        let mut tasks_changed = false;
        match msg {
            Message::DeltaGroup {
                start_seq,
                end_seq,
                items,
            } => {
                self.observe_clock(items);
                let group = DeltaGroup {
                    sender: from,
                    start_seq: *start_seq,
                    end_seq: *end_seq,
                    items: items.clone(),
                };
                let (ack, applied) = self.replicator.on_delta_group(&mut self.store, &group);
                tasks_changed = applied.inflated.contains(&task::tasks_key());
                out.send(from, ack);
            }
            Message::FullState { seq, items } => {
                self.observe_clock(items);
                let (ack, applied) = self.replicator.on_full_state(&mut self.store, from, *seq, items);
                tasks_changed = applied.inflated.contains(&task::tasks_key());
                out.send(from, ack);
            }
            Message::Ack { seq } => self.replicator.on_ack(from, *seq),
            Message::Gossip { .. } | Message::IHave { .. } | Message::Graft { .. } | Message::Prune => {
                if let Some(d) = self.broadcast.on_message(from, msg, &mut out) {
                    tasks_changed = self.on_delivery(&d);
                }
            }
            _ => self.membership.on_message(now, from, msg, &mut out),
        }
        self.settle(&mut out);
        if tasks_changed {
            self.tasks.reconcile(&self.store);
        }
        out
    }

    /// Joins a broadcast store delta. Returns whether the tasks set grew.
    fn on_delivery(&mut self, d: &Delivery) -> bool {
        if d.payload.first() != Some(&PAYLOAD_STORE_DELTA) {
            return false;
        }
        let Ok((key, delta)) = decode_store_delta(&d.payload) else {
            return false;
        };
        self.observe_clock(std::slice::from_ref(&(key.clone(), delta.clone())));
        match self.store.join_remote(&key, &delta) {
            Ok(Some(fresh)) => {
                let is_tasks = key == task::tasks_key();
                self.replicator.record_local_delta(key, fresh);
                is_tasks
            }
            _ => false,
        }
    }

    pub fn on_timer(&mut self, now: Millis, timer: &Timer) -> Outbox {
        let mut out = Outbox::new();
        match timer {
            Timer::AntiEntropy => {
                for (to, msg) in self.replicator.anti_entropy_tick(&self.store) {
                    out.send(to, msg);
                }
                out.timer(self.config.replication.sync_interval_ms, Timer::AntiEntropy);
            }
            Timer::Scheduler => {
                self.tasks.reconcile(&self.store);
                let mut deltas = Vec::new();
                self.tasks
                    .find_and_start_task(&self.env, now, &mut self.store, &mut deltas, &mut out);
                self.record(deltas);
                out.timer(self.config.scheduler.cycle_ms, Timer::Scheduler);
            }
            Timer::SenseTick(task) => {
                let mut deltas = Vec::new();
                self.tasks
                    .on_sense_tick(&self.env, now, &mut self.store, &mut deltas, &mut out, task);
                self.record(deltas);
            }
            Timer::GraftTimeout(_) | Timer::IHaveFlush => self.broadcast.on_timer(now, timer, &mut out),
            _ => self.membership.on_timer(now, timer, &mut out),
        }
        self.settle(&mut out);
        out
    }

    fn record(&mut self, deltas: Vec<(StoreKey, Delta)>) {
        for (k, d) in deltas {
            self.replicator.record_local_delta(k, d);
        }
    }

    /// Local store update. Register assignments are stamped with the node's
    /// Lamport clock.
    pub fn update(&mut self, key: &StoreKey, op: &MutatorOp) -> Result<QueryResult, StoreError> {
        let op = match op {
            MutatorOp::Assign { value, clock } => MutatorOp::Assign {
                value: value.clone(),
                clock: (*clock).max(self.lamport),
            },
            other => other.clone(),
        };
        let (value, delta) = self.store.update(key, &op, self.env.actor)?;
        if let CrdtState::LWWRegister(r) = &delta {
            self.lamport = self.lamport.max(r.timestamp());
        }
        self.replicator.record_local_delta(key.clone(), delta);
        Ok(value)
    }

    pub fn read(&self, name: &str, ty: Option<crate::crdt::CrdtType>) -> Result<QueryResult, StoreError> {
        self.store.read(name, ty)
    }

    fn announce(&mut self, deltas: &[(StoreKey, Delta)], out: &mut Outbox) {
        for (k, d) in deltas {
            self.replicator.record_local_delta(k.clone(), d.clone());
            self.broadcast.broadcast(encode_store_delta(k, d), out);
        }
    }

    /// Adds a task and announces it over the broadcast tree.
    pub fn add_task(&mut self, spec: &TaskSpec) -> Result<Outbox, TaskError> {
        let deltas = task::add_task(&mut self.store, self.env.actor, spec)?;
        let mut out = Outbox::new();
        if !self.tasks.registry().contains(&spec.kind) {
            out.event(NodeEvent::TaskSkipped {
                task: spec.name.clone(),
                reason: format!("kind {:?} unknown on this node", spec.kind),
            });
        }
        self.announce(&deltas, &mut out);
        self.tasks.reconcile(&self.store);
        Ok(out)
    }

    pub fn remove_task(&mut self, name: &str) -> Outbox {
        let deltas = task::remove_task(&mut self.store, self.env.actor, name);
        let mut out = Outbox::new();
        self.announce(&deltas, &mut out);
        self.tasks.reconcile(&self.store);
        out
    }

    pub fn start_task(&mut self, now: Millis, name: &str) -> (ExecutionResult, Outbox) {
        let mut out = Outbox::new();
        let mut deltas = Vec::new();
        let r = self
            .tasks
            .start_task(&self.env, now, &mut self.store, &mut deltas, &mut out, name);
        self.record(deltas);
        (r, out)
    }

    pub fn start_all_tasks(&mut self, now: Millis) -> (Vec<ExecutionResult>, Outbox) {
        let mut out = Outbox::new();
        let mut deltas = Vec::new();
        let r = self
            .tasks
            .start_all_tasks(&self.env, now, &mut self.store, &mut deltas, &mut out);
        self.record(deltas);
        (r, out)
    }

    pub fn find_and_start_task(&mut self, now: Millis) -> (Option<ExecutionResult>, Outbox) {
        let mut out = Outbox::new();
        let mut deltas = Vec::new();
        let r = self
            .tasks
            .find_and_start_task(&self.env, now, &mut self.store, &mut deltas, &mut out);
        self.record(deltas);
        (r, out)
    }

    /// Broadcasts an opaque application payload.
    pub fn broadcast(&mut self, payload: &[u8]) -> Option<(MessageId, Outbox)> {
        if payload.is_empty() {
            return None;
        }
        let mut out = Outbox::new();
        let mut body = Vec::with_capacity(payload.len() + 1);
        body.push(PAYLOAD_APP);
        body.extend_from_slice(payload);
        let d = self.broadcast.broadcast(body, &mut out);
        Some((d.id, out))
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        let me = self.env.node;
        self.membership.check_invariants()?;
        self.broadcast
            .check_invariants(self.membership.active())
            .map_err(|e| format!("{me}: {e}"))?;
        self.replicator.check_invariants().map_err(|e| format!("{me}: {e}"))?;
        for (k, v) in self.store.iter() {
            if v.crdt_type() != k.ty {
                return Err(format!("{me}: key {k} holds a {}", v.crdt_type()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crdt::CrdtType;
    use crate::task::Targets;

    fn node(id: u64, contacts: &[u64]) -> Node {
        Node::new(
            NodeId(id),
            0,
            7,
            NodeConfig::default(),
            contacts.iter().map(|&c| NodeId(c)).collect(),
            TaskRegistry::standard(),
        )
    }

    /// Delivers every send between the two nodes until quiet.
    fn pump(a: &mut Node, b: &mut Node, mut pending: Vec<(NodeId, NodeId, Message)>) {
        while let Some((from, to, msg)) = (!pending.is_empty()).then(|| pending.remove(0)) {
            let target = if to == a.id() { &mut *a } else { &mut *b };
            let out = target.on_message(0, from, &msg);
            pending.extend(out.sends.into_iter().map(|(t, m)| (to, t, m)));
        }
    }

    fn sends(from: NodeId, out: Outbox) -> Vec<(NodeId, NodeId, Message)> {
        out.sends.into_iter().map(|(t, m)| (from, t, m)).collect()
    }

    #[test]
    fn actor_ids_differ_per_incarnation() {
        assert_eq!(actor_id(NodeId(3), 0), NodeId(3));
        assert_ne!(actor_id(NodeId(3), 1), actor_id(NodeId(3), 0));
    }

    #[test]
    fn two_nodes_join_and_replicate() {
        let mut a = node(0, &[]);
        let mut b = node(1, &[0]);
        a.start(0, false);
        let out = b.start(0, true);
        let from = b.id();
        pump(&mut a, &mut b, sends(from, out));
        assert!(a.membership().is_active(b.id()));
        assert!(b.membership().is_active(a.id()));

        let key = StoreKey::new("c", CrdtType::GCounter);
        a.update(&key, &MutatorOp::Increment(3)).unwrap();
        let out = a.on_timer(1000, &Timer::AntiEntropy);
        let from = a.id();
        pump(&mut a, &mut b, sends(from, out));
        assert_eq!(b.read("c", None).unwrap(), QueryResult::Counter(3));
        assert!(a.replicator().buffer().is_empty());
        a.check_invariants().unwrap();
        b.check_invariants().unwrap();
    }

    #[test]
    fn task_announcement_reaches_peer_by_broadcast() {
        let mut a = node(0, &[]);
        let mut b = node(1, &[0]);
        a.start(0, false);
        let out = b.start(0, true);
        let from = b.id();
        pump(&mut a, &mut b, sends(from, out));
        let spec = TaskSpec::new("t", Targets::All, "set_collect");
        let out = a.add_task(&spec).unwrap();
        let from = a.id();
        pump(&mut a, &mut b, sends(from, out));
        assert!(task::visible_tasks(b.store()).contains_key("t"));
    }

    #[test]
    fn register_assignments_follow_observed_clock() {
        let mut a = node(0, &[]);
        let key = StoreKey::new("r", CrdtType::LWWRegister);
        let remote = crate::crdt::LWWRegister::with(b"x".to_vec(), 40, NodeId(9));
        let items = vec![(StoreKey::new("other", CrdtType::LWWRegister), CrdtState::LWWRegister(remote))];
        a.on_message(
            0,
            NodeId(9),
            &Message::FullState { seq: 1, items },
        );
        a.update(&key, &MutatorOp::Assign { value: b"y".to_vec(), clock: 0 }).unwrap();
        match a.store().get(&key) {
            Some(CrdtState::LWWRegister(r)) => assert!(r.timestamp() > 40),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn garbage_bytes_report_decode_error() {
        let mut a = node(0, &[]);
        let out = a.on_bytes(0, &[1, 2, 3]);
        assert!(matches!(out.events[..], [NodeEvent::DecodeError(_)]));
    }
}
