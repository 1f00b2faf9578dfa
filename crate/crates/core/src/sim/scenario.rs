//! Scenario files (TOML or JSON).
//!
//! ```toml
//! seed = 7
//! horizon_ms = 60000
//! nodes = 9
//!
//! [topology]
//! kind = "edges"            # or line, ring, star, full, random (with degree)
//! edges = [[0, 1], [1, 2]]
//!
//! [link]
//! loss = 0.0
//! latency_min_ms = 5
//! latency_max_ms = 20
//!
//! [[faults]]
//! action = "partition"      # or heal, kill, restart (with node)
//! at_ms = 20000
//! groups = [[0, 1, 2], [3, 4, 5, 6, 7, 8]]
//!
//! [[tasks]]
//! action = "add"            # or remove, start, start_all
//! at_ms = 5000
//! node = 0
//! name = "temps"
//! kind = "sense_aggregate"
//! targets = [2, 5, 7]
//! params = { sensor = "temp1", delta_interval = 1000, window = 10 }
//!
//! [[updates]]
//! at_ms = 1000
//! node = 3
//! key = "hits"
//! type = "gcounter"
//! op = "increment"
//! amount = 2
//!
//! [[assertions]]
//! kind = "converged"
//! ```
//!
//! `membership`, `replication`, `broadcast`, `scheduler` and `sensors`
//! sections override the node defaults field by field.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::broadcast::BroadcastConfig;
use crate::crdt::{CrdtType, MutatorOp};
use crate::membership::MembershipConfig;
use crate::node::NodeConfig;
use crate::replication::ReplicationConfig;
use crate::runtime::Millis;
use crate::sim::link::{LinkModel, Partition};
use crate::sim::sensor::SensorConfig;
use crate::sim::topology::Topology;
use crate::store::StoreKey;
use crate::task::{Params, SchedulerConfig, TaskSpec, Targets};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    pub horizon_ms: Millis,
    pub nodes: usize,
    /// Node `i` starts at `i * join_stagger_ms`.
    pub join_stagger_ms: Millis,
    /// Period of the store-convergence probe recorded in the metrics.
    pub probe_interval_ms: Millis,
    pub topology: Topology,
    pub link: LinkModel,
    pub link_overrides: Vec<LinkOverride>,
    pub membership: MembershipConfig,
    pub replication: ReplicationConfig,
    pub broadcast: BroadcastConfig,
    pub scheduler: SchedulerConfig,
    pub sensors: SensorConfig,
    pub faults: Vec<FaultSpec>,
    pub tasks: Vec<TaskAction>,
    pub updates: Vec<UpdateSpec>,
    pub broadcasts: Vec<BroadcastSpec>,
    pub assertions: Vec<Assertion>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            seed: 0,
            horizon_ms: 60_000,
            nodes: 1,
            join_stagger_ms: 100,
            probe_interval_ms: 1000,
            topology: Topology::default(),
            link: LinkModel::default(),
            link_overrides: Vec::new(),
            membership: MembershipConfig::default(),
            replication: ReplicationConfig::default(),
            broadcast: BroadcastConfig::default(),
            scheduler: SchedulerConfig::default(),
            sensors: SensorConfig::default(),
            faults: Vec::new(),
            tasks: Vec::new(),
            updates: Vec::new(),
            broadcasts: Vec::new(),
            assertions: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkOverride {
    pub a: usize,
    pub b: usize,
    pub loss: Option<f64>,
    pub latency_min_ms: Option<Millis>,
    pub latency_max_ms: Option<Millis>,
}

impl LinkOverride {
    pub fn apply(&self, base: LinkModel) -> LinkModel {
        LinkModel {
            loss: self.loss.unwrap_or(base.loss),
            latency_min_ms: self.latency_min_ms.unwrap_or(base.latency_min_ms),
            latency_max_ms: self.latency_max_ms.unwrap_or(base.latency_max_ms),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case", deny_unknown_fields)]
pub enum FaultSpec {
    Partition { at_ms: Millis, groups: Vec<Vec<usize>> },
    Heal { at_ms: Millis },
    Kill { at_ms: Millis, node: usize },
    Restart { at_ms: Millis, node: usize },
}

impl FaultSpec {
    pub fn at(&self) -> Millis {
        match *self {
            FaultSpec::Partition { at_ms, .. }
            | FaultSpec::Heal { at_ms }
            | FaultSpec::Kill { at_ms, .. }
            | FaultSpec::Restart { at_ms, .. } => at_ms,
        }
    }
}

fn all_targets() -> Targets {
    Targets::All
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskAction {
    Add {
        at_ms: Millis,
        node: usize,
        name: String,
        kind: String,
        #[serde(default = "all_targets")]
        targets: Targets,
        #[serde(default)]
        params: Params,
    },
    Remove {
        at_ms: Millis,
        node: usize,
        name: String,
    },
    Start {
        at_ms: Millis,
        node: usize,
        name: String,
    },
    StartAll {
        at_ms: Millis,
        node: usize,
    },
}

impl TaskAction {
    pub fn at(&self) -> Millis {
        match *self {
            TaskAction::Add { at_ms, .. }
            | TaskAction::Remove { at_ms, .. }
            | TaskAction::Start { at_ms, .. }
            | TaskAction::StartAll { at_ms, .. } => at_ms,
        }
    }

    pub fn node(&self) -> usize {
        match *self {
            TaskAction::Add { node, .. }
            | TaskAction::Remove { node, .. }
            | TaskAction::Start { node, .. }
            | TaskAction::StartAll { node, .. } => node,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpName {
    Increment,
    Decrement,
    Add,
    Remove,
    Assign,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UpdateSpec {
    pub at_ms: Millis,
    pub node: usize,
    pub key: String,
    #[serde(rename = "type")]
    pub ty: CrdtType,
    pub op: OpName,
    pub amount: Option<u64>,
    pub value: Option<String>,
}

impl UpdateSpec {
    pub fn key(&self) -> StoreKey {
        StoreKey::new(self.key.clone(), self.ty)
    }

    pub fn mutator(&self) -> Result<MutatorOp, String> {
        let value = || {
            self.value
                .clone()
                .map(String::into_bytes)
                .ok_or_else(|| format!("op {:?} needs a value", self.op))
        };
        let op = match self.op {
            OpName::Increment => MutatorOp::Increment(self.amount.unwrap_or(1)),
            OpName::Decrement => MutatorOp::Decrement(self.amount.unwrap_or(1)),
            OpName::Add => MutatorOp::Add(value()?),
            OpName::Remove => MutatorOp::Remove(value()?),
            OpName::Assign => MutatorOp::Assign { value: value()?, clock: 0 },
        };
        let allowed = match self.ty {
            CrdtType::GCounter => matches!(op, MutatorOp::Increment(_)),
            CrdtType::PNCounter => matches!(op, MutatorOp::Increment(_) | MutatorOp::Decrement(_)),
            CrdtType::GSet => matches!(op, MutatorOp::Add(_)),
            CrdtType::AWSet => matches!(op, MutatorOp::Add(_) | MutatorOp::Remove(_)),
            CrdtType::LWWRegister => matches!(op, MutatorOp::Assign { .. }),
        };
        if !allowed {
            return Err(format!("op {:?} is not valid on a {}", self.op, self.ty));
        }
        if matches!(op, MutatorOp::Increment(0) | MutatorOp::Decrement(0)) {
            return Err("amount must be >= 1".into());
        }
        Ok(op)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BroadcastSpec {
    pub at_ms: Millis,
    pub node: usize,
    pub payload: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Assertion {
    /// All live nodes hold byte-identical stores at the horizon.
    Converged,
    /// The active-view overlay over live nodes is connected.
    Connected,
    /// `key` reads as `expected` (JSON rendering) on the given or all live
    /// nodes.
    Value {
        key: String,
        #[serde(rename = "type")]
        ty: CrdtType,
        expected: serde_json::Value,
        #[serde(default)]
        nodes: Option<Vec<usize>>,
    },
    /// Each listed node executed `task`; with `exclusive`, no other node did.
    TaskExecuted {
        task: String,
        nodes: Vec<usize>,
        #[serde(default)]
        exclusive: bool,
    },
}

impl fmt::Display for Assertion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Assertion::Converged => f.write_str("converged"),
            Assertion::Connected => f.write_str("connected"),
            Assertion::Value { key, ty, expected, .. } => write!(f, "value {key}:{ty} == {expected}"),
            Assertion::TaskExecuted { task, nodes, exclusive } => {
                write!(f, "task {task} executed on {nodes:?}{}", if *exclusive { " only" } else { "" })
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid scenario:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
}

impl Scenario {
    pub fn from_toml_str(s: &str) -> Result<Self, ScenarioError> {
        let sc: Scenario = toml::from_str(s).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn from_json_str(s: &str) -> Result<Self, ScenarioError> {
        let sc: Scenario = serde_json::from_str(s).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        sc.validate()?;
        Ok(sc)
    }

    /// Loads by extension: `.json` is JSON, anything else TOML.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if path.extension().is_some_and(|e| e == "json") {
            Self::from_json_str(&text)
        } else {
            Self::from_toml_str(&text)
        }
    }

    pub fn node_config(&self) -> NodeConfig {
        NodeConfig {
            membership: self.membership.clone(),
            replication: self.replication.clone(),
            broadcast: self.broadcast.clone(),
            scheduler: self.scheduler.clone(),
            sensors: self.sensors,
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let mut errs = Vec::new();
        let n = self.nodes;
        let node_ref = |what: String, id: usize, errs: &mut Vec<String>| {
            if id >= n {
                errs.push(format!("{what}: node {id} out of range (nodes = {n})"));
            }
        };
        if n == 0 {
            errs.push("nodes: must be >= 1".into());
        }
        if self.horizon_ms == 0 {
            errs.push("horizon_ms: must be > 0".into());
        }
        if self.probe_interval_ms == 0 {
            errs.push("probe_interval_ms: must be > 0".into());
        }
        if let Err(e) = self.topology.validate(n) {
            errs.push(format!("topology: {e}"));
        }
        if let Err(e) = self.link.validate() {
            errs.push(format!("link: {e}"));
        }
        for (i, o) in self.link_overrides.iter().enumerate() {
            node_ref(format!("link_overrides[{i}].a"), o.a, &mut errs);
            node_ref(format!("link_overrides[{i}].b"), o.b, &mut errs);
            if let Err(e) = o.apply(self.link).validate() {
                errs.push(format!("link_overrides[{i}]: {e}"));
            }
        }
        if let Err(es) = self.node_config().validate() {
            errs.extend(es);
        }

        // fault times and kill/restart ordering per node
        let mut faults: Vec<(usize, &FaultSpec)> = self.faults.iter().enumerate().collect();
        faults.sort_by_key(|(i, f)| (f.at(), *i));
        let mut alive = vec![true; n];
        for (i, f) in faults {
            let field = format!("faults[{i}]");
            if f.at() > self.horizon_ms {
                errs.push(format!("{field}: at_ms {} after horizon {}", f.at(), self.horizon_ms));
            }
            match f {
                FaultSpec::Partition { groups, .. } => {
                    if let Err(e) = Partition::split(n, groups) {
                        errs.push(format!("{field}.groups: {e}"));
                    }
                }
                FaultSpec::Heal { .. } => {}
                FaultSpec::Kill { node, .. } => {
                    node_ref(field.clone(), *node, &mut errs);
                    if *node < n {
                        if !alive[*node] {
                            errs.push(format!("{field}: node {node} is already dead"));
                        }
                        alive[*node] = false;
                    }
                }
                FaultSpec::Restart { node, .. } => {
                    node_ref(field.clone(), *node, &mut errs);
                    if *node < n {
                        if alive[*node] {
                            errs.push(format!("{field}: node {node} restarted while alive"));
                        }
                        alive[*node] = true;
                    }
                }
            }
        }
        for (i, t) in self.tasks.iter().enumerate() {
            let field = format!("tasks[{i}]");
            node_ref(field.clone(), t.node(), &mut errs);
            if t.at() > self.horizon_ms {
                errs.push(format!("{field}: at_ms after horizon"));
            }
            if let TaskAction::Add {
                name,
                kind,
                targets,
                params,
                ..
            } = t
            {
                let spec = TaskSpec {
                    name: name.clone(),
                    targets: targets.clone(),
                    kind: kind.clone(),
                    params: params.clone(),
                };
                if let Err(e) = spec.validate() {
                    errs.push(format!("{field}: {e}"));
                }
                if let Targets::Nodes(ids) = targets {
                    for id in ids {
                        node_ref(format!("{field}.targets"), id.raw() as usize, &mut errs);
                    }
                }
            }
        }
        for (i, u) in self.updates.iter().enumerate() {
            let field = format!("updates[{i}]");
            node_ref(field.clone(), u.node, &mut errs);
            if u.at_ms > self.horizon_ms {
                errs.push(format!("{field}: at_ms after horizon"));
            }
            if u.key.is_empty() {
                errs.push(format!("{field}.key: must be non-empty"));
            }
            if let Err(e) = u.mutator() {
                errs.push(format!("{field}: {e}"));
            }
        }
        for (i, b) in self.broadcasts.iter().enumerate() {
            let field = format!("broadcasts[{i}]");
            node_ref(field.clone(), b.node, &mut errs);
            if b.payload.is_empty() {
                errs.push(format!("{field}.payload: must be non-empty"));
            }
            if b.at_ms > self.horizon_ms {
                errs.push(format!("{field}: at_ms after horizon"));
            }
        }
        for (i, a) in self.assertions.iter().enumerate() {
            let field = format!("assertions[{i}]");
            match a {
                Assertion::Value { nodes: Some(ids), .. } | Assertion::TaskExecuted { nodes: ids, .. } => {
                    for &id in ids {
                        node_ref(field.clone(), id, &mut errs);
                    }
                }
                _ => {}
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError::Invalid(errs))
        }
    }

    /// Per-pair link overrides keyed by `(low, high)`.
    pub fn override_map(&self) -> BTreeMap<(usize, usize), LinkModel> {
        self.link_overrides
            .iter()
            .map(|o| ((o.a.min(o.b), o.a.max(o.b)), o.apply(self.link)))
            .collect()
    }
}
