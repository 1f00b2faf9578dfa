//! Replicated task model.
//!
//! Tasks are [`TaskSpec`] values stored as canonical JSON elements of an
//! add-wins set under [`TASKS_KEY`]. Every node periodically scans the set
//! and runs the tasks that target it through a local [`TaskRegistry`] of
//! pre-registered behaviours. All task effects are CRDT updates, so running
//! a task more than once, or on several nodes, is harmless.

pub mod kinds;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::IteratorRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::crdt::{CrdtState, CrdtType, Delta, MutatorOp, NodeId, QueryResult};
use crate::runtime::{Millis, NodeEvent, Outbox};
use crate::sim::sensor::SensorConfig;
use crate::store::{Store, StoreKey};

pub use kinds::SensePipeline;

/// Store key of the tasks set.
pub const TASKS_KEY: &str = "sys/tasks";

pub fn tasks_key() -> StoreKey {
    StoreKey::new(TASKS_KEY, CrdtType::AWSet)
}

pub fn exec_log_key(task: &str) -> StoreKey {
    StoreKey::new(format!("sys/exec/{task}"), CrdtType::GSet)
}

pub fn result_key(task: &str, leaf: &str, ty: CrdtType) -> StoreKey {
    StoreKey::new(format!("result/{task}/{leaf}"), ty)
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Targets {
    All,
    Nodes(BTreeSet<NodeId>),
}

impl Targets {
    pub fn includes(&self, node: NodeId) -> bool {
        match self {
            Targets::All => true,
            Targets::Nodes(set) => set.contains(&node),
        }
    }
}

impl Serialize for Targets {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Targets::All => s.serialize_str("all"),
            Targets::Nodes(set) => s.collect_seq(set.iter().map(|n| n.raw())),
        }
    }
}

impl<'de> Deserialize<'de> for Targets {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Word(String),
            Nodes(Vec<u64>),
        }
        match Repr::deserialize(d)? {
            Repr::Word(w) if w == "all" => Ok(Targets::All),
            Repr::Word(w) => Err(serde::de::Error::custom(format!(
                "targets must be \"all\" or a list of node ids, got {w:?}"
            ))),
            Repr::Nodes(ids) => Ok(Targets::Nodes(ids.into_iter().map(NodeId).collect())),
        }
    }
}

/// A task parameter value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
}

impl Scalar {
    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            Scalar::Int(i) => Some(i as f64),
            Scalar::Float(f) => Some(f),
            _ => None,
        }
    }

    pub fn as_u64(&self) -> Option<u64> {
        match *self {
            Scalar::Int(i) => u64::try_from(i).ok(),
            Scalar::Float(f) if f >= 0.0 && f.fract() == 0.0 && f < u64::MAX as f64 => Some(f as u64),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Scalar::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match *self {
            Scalar::Bool(b) => Some(b),
            _ => None,
        }
    }
}

pub type Params = BTreeMap<String, Scalar>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub name: String,
    pub targets: Targets,
    pub kind: String,
    #[serde(default)]
    pub params: Params,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TaskError {
    #[error("malformed task spec: {0}")]
    Malformed(String),
}

impl TaskSpec {
    pub fn new(name: impl Into<String>, targets: Targets, kind: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            targets,
            kind: kind.into(),
            params: Params::new(),
        }
    }

    pub fn param(mut self, key: &str, value: Scalar) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }

    pub fn validate(&self) -> Result<(), TaskError> {
        if self.name.is_empty() {
            return Err(TaskError::Malformed("name must be non-empty".into()));
        }
        if self.kind.is_empty() {
            return Err(TaskError::Malformed("kind must be non-empty".into()));
        }
        if let Targets::Nodes(set) = &self.targets {
            if set.is_empty() {
                return Err(TaskError::Malformed("target list must be non-empty".into()));
            }
        }
        if let Some((k, _)) = self.params.iter().find(|(_, v)| matches!(v, Scalar::Float(f) if !f.is_finite())) {
            return Err(TaskError::Malformed(format!("param {k} is not finite")));
        }
        Ok(())
    }

    /// Canonical element bytes in the tasks set.
    pub fn encode(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("task spec serializes")
    }

    pub fn decode(bytes: &[u8]) -> Option<Self> {
        serde_json::from_slice(bytes).ok()
    }
}

/// Node identity and configuration visible to task behaviours.
#[derive(Debug, Clone)]
pub struct NodeEnv {
    /// Network identity, stable across restarts.
    pub node: NodeId,
    /// CRDT actor identity, fresh per incarnation.
    pub actor: NodeId,
    pub epoch: u32,
    pub seed: u64,
    pub sensors: SensorConfig,
}

pub struct TaskContext<'a> {
    pub env: &'a NodeEnv,
    pub now: Millis,
    pub store: &'a mut Store,
    /// Store deltas produced so far, to be handed to replication.
    pub deltas: &'a mut Vec<(StoreKey, Delta)>,
    pub pipelines: &'a mut BTreeMap<String, SensePipeline>,
    pub out: &'a mut Outbox,
}

impl TaskContext<'_> {
    pub fn update(&mut self, key: &StoreKey, op: &MutatorOp) -> Result<QueryResult, String> {
        let (value, delta) = self
            .store
            .update(key, op, self.env.actor)
            .map_err(|e| e.to_string())?;
        self.deltas.push((key.clone(), delta));
        Ok(value)
    }

    pub fn join(&mut self, key: &StoreKey, delta: Delta) -> Result<bool, String> {
        let fresh = self.store.join_remote(key, &delta).map_err(|e| e.to_string())?;
        let inflated = fresh.is_some();
        if let Some(fresh) = fresh {
            self.deltas.push((key.clone(), fresh));
        }
        Ok(inflated)
    }
}

pub type TaskFn = fn(&mut TaskContext<'_>, &TaskSpec) -> Result<(), String>;
pub type ValidateFn = fn(&Params) -> Result<(), String>;

#[derive(Clone, Copy)]
pub struct TaskKindDef {
    pub run: TaskFn,
    pub validate: ValidateFn,
}

impl fmt::Debug for TaskKindDef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("TaskKindDef")
    }
}

#[derive(Debug, Clone, Default)]
pub struct TaskRegistry {
    kinds: BTreeMap<String, TaskKindDef>,
}

impl TaskRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    /// The shipped kinds: `sense_aggregate`, `counter_bump`, `set_collect`.
    pub fn standard() -> Self {
        let mut r = Self::empty();
        r.register("sense_aggregate", kinds::sense_aggregate, kinds::validate_sense_aggregate);
        r.register("counter_bump", kinds::counter_bump, kinds::validate_counter_bump);
        r.register("set_collect", kinds::set_collect, kinds::validate_none);
        r
    }

    pub fn register(&mut self, kind: &str, run: TaskFn, validate: ValidateFn) {
        self.kinds.insert(kind.to_string(), TaskKindDef { run, validate });
    }

    pub fn get(&self, kind: &str) -> Option<TaskKindDef> {
        self.kinds.get(kind).copied()
    }

    pub fn contains(&self, kind: &str) -> bool {
        self.kinds.contains_key(kind)
    }

    pub fn kinds(&self) -> impl Iterator<Item = &str> {
        self.kinds.keys().map(String::as_str)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    #[default]
    LeastLoad,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulerConfig {
    pub cycle_ms: Millis,
    pub selection: Selection,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            cycle_ms: 5000,
            selection: Selection::LeastLoad,
        }
    }
}

impl SchedulerConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.cycle_ms == 0 {
            return Err("scheduler.cycle_ms must be > 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SkipReason {
    UnknownTask,
    UnknownKind(String),
    NotTargeted,
    Failed(String),
}

impl fmt::Display for SkipReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SkipReason::UnknownTask => f.write_str("unknown task"),
            SkipReason::UnknownKind(k) => write!(f, "unknown kind {k:?}"),
            SkipReason::NotTargeted => f.write_str("node not targeted"),
            SkipReason::Failed(e) => write!(f, "failed: {e}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExecutionResult {
    Executed { task: String, count: u64 },
    Skipped { task: String, reason: SkipReason },
}

impl ExecutionResult {
    pub fn task(&self) -> &str {
        match self {
            ExecutionResult::Executed { task, .. } | ExecutionResult::Skipped { task, .. } => task,
        }
    }

    pub fn executed(&self) -> bool {
        matches!(self, ExecutionResult::Executed { .. })
    }
}

/// Tasks visible in `store`, one spec per name. Concurrent specs sharing a
/// name resolve to the greatest encoding.
pub fn visible_tasks(store: &Store) -> BTreeMap<String, TaskSpec> {
    let mut out: BTreeMap<String, (Vec<u8>, TaskSpec)> = BTreeMap::new();
    if let Some(CrdtState::AWSet(set)) = store.get(&tasks_key()) {
        for body in set.entries().keys() {
            let Some(spec) = TaskSpec::decode(body) else { continue };
            match out.get(&spec.name) {
                Some((best, _)) if best >= body => {}
                _ => {
                    out.insert(spec.name.clone(), (body.clone(), spec));
                }
            }
        }
    }
    out.into_iter().map(|(k, (_, s))| (k, s)).collect()
}

fn bodies_named(store: &Store, name: &str) -> Vec<Vec<u8>> {
    match store.get(&tasks_key()) {
        Some(CrdtState::AWSet(set)) => set
            .entries()
            .keys()
            .filter(|b| TaskSpec::decode(b).is_some_and(|s| s.name == name))
            .cloned()
            .collect(),
        _ => Vec::new(),
    }
}

/// Adds `spec` to the tasks set, replacing visible specs with the same name.
pub fn add_task(store: &mut Store, actor: NodeId, spec: &TaskSpec) -> Result<Vec<(StoreKey, Delta)>, TaskError> {
    spec.validate()?;
    let key = tasks_key();
    let body = spec.encode();
    let mut deltas = Vec::new();
    for old in bodies_named(store, &spec.name) {
        if old != body {
            let (_, d) = store
                .update(&key, &MutatorOp::Remove(old), actor)
                .map_err(|e| TaskError::Malformed(e.to_string()))?;
            deltas.push((key.clone(), d));
        }
    }
    let (_, d) = store
        .update(&key, &MutatorOp::Add(body), actor)
        .map_err(|e| TaskError::Malformed(e.to_string()))?;
    deltas.push((key, d));
    Ok(deltas)
}

/// Observed-removes every visible spec named `name`.
pub fn remove_task(store: &mut Store, actor: NodeId, name: &str) -> Vec<(StoreKey, Delta)> {
    let key = tasks_key();
    bodies_named(store, name)
        .into_iter()
        .filter_map(|old| store.update(&key, &MutatorOp::Remove(old), actor).ok())
        .map(|(_, d)| (key.clone(), d))
        .collect()
}

/// Number of execution-log records for `task`.
pub fn load_of(store: &Store, task: &str) -> usize {
    match store.get(&exec_log_key(task)) {
        Some(CrdtState::GSet(s)) => s.elements().len(),
        _ => 0,
    }
}

/// Per-node scheduler and execution state.
#[derive(Debug, Clone)]
pub struct TaskRuntime {
    registry: TaskRegistry,
    config: SchedulerConfig,
    /// Spec body each task was last started with on this node.
    started: BTreeMap<String, Vec<u8>>,
    exec_counts: BTreeMap<String, u64>,
    pipelines: BTreeMap<String, SensePipeline>,
    rng: ChaCha8Rng,
}

impl TaskRuntime {
    pub fn new(registry: TaskRegistry, config: SchedulerConfig, rng: ChaCha8Rng) -> Self {
        Self {
            registry,
            config,
            started: BTreeMap::new(),
            exec_counts: BTreeMap::new(),
            pipelines: BTreeMap::new(),
            rng,
        }
    }

    pub fn config(&self) -> &SchedulerConfig {
        &self.config
    }

    pub fn registry(&self) -> &TaskRegistry {
        &self.registry
    }

    pub fn pipelines(&self) -> &BTreeMap<String, SensePipeline> {
        &self.pipelines
    }

    pub fn executions(&self, task: &str) -> u64 {
        self.exec_counts.get(task).copied().unwrap_or(0)
    }

    pub fn start_task(
        &mut self,
        env: &NodeEnv,
        now: Millis,
        store: &mut Store,
        deltas: &mut Vec<(StoreKey, Delta)>,
        out: &mut Outbox,
        name: &str,
    ) -> ExecutionResult {
        let result = self.run(env, now, store, deltas, out, name);
        match &result {
            ExecutionResult::Executed { task, .. } => out.event(NodeEvent::TaskExecuted { task: task.clone() }),
            ExecutionResult::Skipped { task, reason } => out.event(NodeEvent::TaskSkipped {
                task: task.clone(),
                reason: reason.to_string(),
            }),
        }
        result
    }

    fn run(
        &mut self,
        env: &NodeEnv,
        now: Millis,
        store: &mut Store,
        deltas: &mut Vec<(StoreKey, Delta)>,
        out: &mut Outbox,
        name: &str,
    ) -> ExecutionResult {
        let skip = |reason| ExecutionResult::Skipped {
            task: name.to_string(),
            reason,
        };
        let Some(spec) = visible_tasks(store).remove(name) else {
            return skip(SkipReason::UnknownTask);
        };
        if !spec.targets.includes(env.node) {
            return skip(SkipReason::NotTargeted);
        }
        let Some(def) = self.registry.get(&spec.kind) else {
            return skip(SkipReason::UnknownKind(spec.kind.clone()));
        };
        if let Err(e) = (def.validate)(&spec.params) {
            return skip(SkipReason::Failed(e));
        }
        let mut ctx = TaskContext {
            env,
            now,
            store,
            deltas,
            pipelines: &mut self.pipelines,
            out,
        };
        if let Err(e) = (def.run)(&mut ctx, &spec) {
            return skip(SkipReason::Failed(e));
        }
        self.started.insert(spec.name.clone(), spec.encode());
        let count = self.exec_counts.entry(spec.name.clone()).or_default();
        *count += 1;
        let count = *count;
        let record = serde_json::json!({
            "bucket": count.ilog2(),
            "node": env.node.raw(),
        })
        .to_string()
        .into_bytes();
        let key = exec_log_key(&spec.name);
        if let Ok((_, d)) = store.update(&key, &MutatorOp::Add(record), env.actor) {
            deltas.push((key, d));
        }
        ExecutionResult::Executed { task: spec.name, count }
    }

    /// Tasks that target this node, have a known kind, and were not started
    /// here with their current spec.
    pub fn eligible(&self, env: &NodeEnv, store: &Store) -> Vec<TaskSpec> {
        visible_tasks(store)
            .into_values()
            .filter(|s| s.targets.includes(env.node) && self.registry.contains(&s.kind))
            .filter(|s| self.started.get(&s.name) != Some(&s.encode()))
            .collect()
    }

    pub fn find_and_start_task(
        &mut self,
        env: &NodeEnv,
        now: Millis,
        store: &mut Store,
        deltas: &mut Vec<(StoreKey, Delta)>,
        out: &mut Outbox,
    ) -> Option<ExecutionResult> {
        let eligible = self.eligible(env, store);
        let chosen = match self.config.selection {
            Selection::LeastLoad => eligible
                .iter()
                .min_by_key(|s| (load_of(store, &s.name), s.name.clone()))
                .map(|s| s.name.clone()),
            Selection::Random => eligible.iter().map(|s| s.name.clone()).choose(&mut self.rng),
        }?;
        Some(self.start_task(env, now, store, deltas, out, &chosen))
    }

    pub fn start_all_tasks(
        &mut self,
        env: &NodeEnv,
        now: Millis,
        store: &mut Store,
        deltas: &mut Vec<(StoreKey, Delta)>,
        out: &mut Outbox,
    ) -> Vec<ExecutionResult> {
        let names: Vec<String> = visible_tasks(store)
            .into_values()
            .filter(|s| s.targets.includes(env.node))
            .map(|s| s.name)
            .collect();
        names
            .iter()
            .map(|n| self.start_task(env, now, store, deltas, out, n))
            .collect()
    }

    /// Forgets removed tasks and stops their pipelines.
    pub fn reconcile(&mut self, store: &Store) {
        let visible = visible_tasks(store);
        self.pipelines.retain(|name, _| visible.contains_key(name));
        self.started.retain(|name, _| visible.contains_key(name));
    }

    pub fn on_sense_tick(
        &mut self,
        env: &NodeEnv,
        now: Millis,
        store: &mut Store,
        deltas: &mut Vec<(StoreKey, Delta)>,
        out: &mut Outbox,
        task: &str,
    ) {
        let Some(p) = self.pipelines.get_mut(task) else { return };
        p.tick(env, now, store, deltas, out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::derive_rng;

    fn env(node: u64) -> NodeEnv {
        NodeEnv {
            node: NodeId(node),
            actor: NodeId(node),
            epoch: 0,
            seed: 1,
            sensors: SensorConfig::default(),
        }
    }

    fn runtime() -> TaskRuntime {
        TaskRuntime::new(TaskRegistry::standard(), SchedulerConfig::default(), derive_rng(0, &[]))
    }

    fn bump(name: &str, targets: Targets) -> TaskSpec {
        TaskSpec::new(name, targets, "counter_bump").param("amount", Scalar::Int(2))
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = TaskSpec::new("t", Targets::Nodes([NodeId(3), NodeId(1)].into()), "sense_aggregate")
            .param("threshold", Scalar::Float(0.5))
            .param("sensor", Scalar::Str("temp1".into()))
            .param("window", Scalar::Int(10));
        let bytes = spec.encode();
        assert_eq!(
            String::from_utf8(bytes.clone()).unwrap(),
            r#"{"name":"t","targets":[1,3],"kind":"sense_aggregate","params":{"sensor":"temp1","threshold":0.5,"window":10}}"#
        );
        assert_eq!(TaskSpec::decode(&bytes).unwrap(), spec);
        let all: TaskSpec = serde_json::from_str(r#"{"name":"x","targets":"all","kind":"k"}"#).unwrap();
        assert_eq!(all.targets, Targets::All);
        assert!(serde_json::from_str::<TaskSpec>(r#"{"name":"x","targets":"some","kind":"k"}"#).is_err());
    }

    #[test]
    fn malformed_specs_rejected() {
        let mut s = Store::new();
        assert!(add_task(&mut s, NodeId(1), &TaskSpec::new("", Targets::All, "k")).is_err());
        assert!(add_task(&mut s, NodeId(1), &TaskSpec::new("t", Targets::Nodes(BTreeSet::new()), "k")).is_err());
        assert!(s.is_empty());
    }

    #[test]
    fn same_spec_twice_is_one_entry_and_new_body_replaces() {
        let mut s = Store::new();
        add_task(&mut s, NodeId(1), &bump("t", Targets::All)).unwrap();
        add_task(&mut s, NodeId(1), &bump("t", Targets::All)).unwrap();
        assert_eq!(visible_tasks(&s).len(), 1);
        let changed = bump("t", Targets::All).param("amount", Scalar::Int(5));
        add_task(&mut s, NodeId(1), &changed).unwrap();
        assert_eq!(visible_tasks(&s)["t"], changed);
        match s.read(TASKS_KEY, None).unwrap() {
            QueryResult::Set(set) => assert_eq!(set.len(), 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn remove_then_concurrent_add_wins() {
        let mut a = Store::new();
        let d = add_task(&mut a, NodeId(1), &bump("t", Targets::All)).unwrap();
        let mut b = a.clone();
        remove_task(&mut a, NodeId(1), "t");
        assert!(visible_tasks(&a).is_empty());
        // b re-adds without having seen the removal
        let d2 = add_task(&mut b, NodeId(2), &bump("t", Targets::All)).unwrap();
        for (k, v) in d.iter().chain(&d2) {
            a.join_remote(k, v).unwrap();
        }
        let key = tasks_key();
        b.join_remote(&key, a.get(&key).unwrap()).unwrap();
        assert!(visible_tasks(&a).contains_key("t"));
        assert_eq!(a.get(&key), b.get(&key));
        assert!(remove_task(&mut Store::new(), NodeId(1), "absent").is_empty());
    }

    #[test]
    fn targeting_and_unknown_kinds_skip() {
        let mut s = Store::new();
        let mut rt = runtime();
        let mut deltas = Vec::new();
        let mut out = Outbox::new();
        add_task(&mut s, NodeId(1), &bump("t", Targets::Nodes([NodeId(2)].into()))).unwrap();
        add_task(&mut s, NodeId(1), &TaskSpec::new("u", Targets::All, "nope")).unwrap();
        let r = rt.start_task(&env(1), 0, &mut s, &mut deltas, &mut out, "t");
        assert_eq!(
            r,
            ExecutionResult::Skipped {
                task: "t".into(),
                reason: SkipReason::NotTargeted
            }
        );
        let r = rt.start_task(&env(1), 0, &mut s, &mut deltas, &mut out, "u");
        assert!(matches!(r, ExecutionResult::Skipped { reason: SkipReason::UnknownKind(_), .. }));
        let r = rt.start_task(&env(1), 0, &mut s, &mut deltas, &mut out, "zzz");
        assert!(matches!(r, ExecutionResult::Skipped { reason: SkipReason::UnknownTask, .. }));
        assert_eq!(load_of(&s, "t"), 0);
        assert!(rt.find_and_start_task(&env(1), 0, &mut s, &mut deltas, &mut out).is_none());
    }

    #[test]
    fn least_loaded_task_is_chosen_first() {
        let mut s = Store::new();
        add_task(&mut s, NodeId(1), &bump("a", Targets::All)).unwrap();
        add_task(&mut s, NodeId(1), &bump("b", Targets::All)).unwrap();
        for n in 10..13 {
            let mut rt = runtime();
            let mut deltas = Vec::new();
            rt.start_task(&env(n), 0, &mut s, &mut deltas, &mut Outbox::new(), "a");
        }
        assert_eq!(load_of(&s, "a"), 3);
        let mut rt = runtime();
        let mut deltas = Vec::new();
        let mut out = Outbox::new();
        let r = rt.find_and_start_task(&env(1), 0, &mut s, &mut deltas, &mut out).unwrap();
        assert_eq!(r.task(), "b");
        let r = rt.find_and_start_task(&env(1), 0, &mut s, &mut deltas, &mut out).unwrap();
        assert_eq!(r.task(), "a");
        assert!(rt.find_and_start_task(&env(1), 0, &mut s, &mut deltas, &mut out).is_none());
    }

    #[test]
    fn start_all_runs_eligible_in_name_order() {
        let mut s = Store::new();
        for name in ["c", "a", "b"] {
            add_task(&mut s, NodeId(1), &bump(name, Targets::All)).unwrap();
        }
        add_task(&mut s, NodeId(1), &bump("x", Targets::Nodes([NodeId(9)].into()))).unwrap();
        let mut rt = runtime();
        let mut deltas = Vec::new();
        let results = rt.start_all_tasks(&env(1), 0, &mut s, &mut deltas, &mut Outbox::new());
        let names: Vec<&str> = results.iter().map(|r| r.task()).collect();
        assert_eq!(names, ["a", "b", "c"]);
        assert!(results.iter().all(ExecutionResult::executed));
    }

    #[test]
    fn execution_log_buckets() {
        let mut s = Store::new();
        add_task(&mut s, NodeId(1), &bump("t", Targets::All)).unwrap();
        let mut rt = runtime();
        let mut deltas = Vec::new();
        for _ in 0..4 {
            rt.start_task(&env(1), 0, &mut s, &mut deltas, &mut Outbox::new(), "t");
        }
        // counts 1, 2-3, 4 fall into buckets 0, 1, 2
        assert_eq!(load_of(&s, "t"), 3);
        assert_eq!(rt.executions("t"), 4);
    }

    #[test]
    fn removal_stops_rescheduling() {
        let mut s = Store::new();
        add_task(&mut s, NodeId(1), &bump("t", Targets::All)).unwrap();
        let mut rt = runtime();
        let mut deltas = Vec::new();
        let mut out = Outbox::new();
        rt.find_and_start_task(&env(1), 0, &mut s, &mut deltas, &mut out).unwrap();
        remove_task(&mut s, NodeId(1), "t");
        rt.reconcile(&s);
        assert!(rt.find_and_start_task(&env(1), 0, &mut s, &mut deltas, &mut out).is_none());
    }
}
