//! State-based CRDTs with delta-mutators.
//!
//! Every type forms a join-semilattice: [`join`] is commutative, associative
//! and idempotent, and [`mutate`] returns a delta whose join with the prior
//! state equals the mutated state. States are kept normalized (causal
//! contexts compacted, empty entries dropped) so that structural equality and
//! the canonical encoding agree.

mod counter;
mod dot;
mod encoding;
mod register;
mod set;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use counter::{GCounter, PNCounter};
pub use dot::{CausalContext, Dot, NodeId};
pub use register::LWWRegister;
pub use set::{AWSet, GSet};

/// Delta fragments have the same shape as the state they apply to.
pub type Delta = CrdtState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CrdtType {
    GCounter,
    PNCounter,
    GSet,
    AWSet,
    LWWRegister,
}

impl CrdtType {
    pub const ALL: [CrdtType; 5] = [
        CrdtType::GCounter,
        CrdtType::PNCounter,
        CrdtType::GSet,
        CrdtType::AWSet,
        CrdtType::LWWRegister,
    ];

    pub fn tag(self) -> u8 {
        match self {
            CrdtType::GCounter => 1,
            CrdtType::PNCounter => 2,
            CrdtType::GSet => 3,
            CrdtType::AWSet => 4,
            CrdtType::LWWRegister => 5,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.tag() == tag)
    }

    pub fn name(self) -> &'static str {
        match self {
            CrdtType::GCounter => "gcounter",
            CrdtType::PNCounter => "pncounter",
            CrdtType::GSet => "gset",
            CrdtType::AWSet => "awset",
            CrdtType::LWWRegister => "lwwregister",
        }
    }

    pub fn bottom(self) -> CrdtState {
        match self {
            CrdtType::GCounter => CrdtState::GCounter(GCounter::new()),
            CrdtType::PNCounter => CrdtState::PNCounter(PNCounter::new()),
            CrdtType::GSet => CrdtState::GSet(GSet::new()),
            CrdtType::AWSet => CrdtState::AWSet(AWSet::new()),
            CrdtType::LWWRegister => CrdtState::LWWRegister(LWWRegister::new()),
        }
    }
}

impl fmt::Display for CrdtType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for CrdtType {
    type Err = CrdtError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|t| t.name() == s.to_ascii_lowercase())
            .ok_or_else(|| CrdtError::UnknownType(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CrdtError {
    #[error("type mismatch: expected {expected}, found {found}")]
    TypeMismatch { expected: CrdtType, found: CrdtType },
    #[error("operation {op} is not valid for {ty}")]
    InvalidOp { op: &'static str, ty: CrdtType },
    #[error("counter amounts must be positive")]
    NonPositiveAmount,
    #[error("set elements must be non-empty")]
    EmptyElement,
    #[error("unknown crdt type {0:?}")]
    UnknownType(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CrdtState {
    GCounter(GCounter),
    PNCounter(PNCounter),
    GSet(GSet),
    AWSet(AWSet),
    LWWRegister(LWWRegister),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MutatorOp {
    Increment(u64),
    Decrement(u64),
    Add(Vec<u8>),
    Remove(Vec<u8>),
    /// Register write. `clock` is the writer's logical clock; the stored stamp
    /// ends up strictly greater than it.
    Assign { value: Vec<u8>, clock: u64 },
}

impl MutatorOp {
    pub fn name(&self) -> &'static str {
        match self {
            MutatorOp::Increment(_) => "increment",
            MutatorOp::Decrement(_) => "decrement",
            MutatorOp::Add(_) => "add",
            MutatorOp::Remove(_) => "remove",
            MutatorOp::Assign { .. } => "assign",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum QueryResult {
    Counter(i64),
    Set(BTreeSet<Vec<u8>>),
    Register(Vec<u8>),
}

impl QueryResult {
    /// Renders byte strings as UTF-8 when possible, otherwise as `0x`-hex.
    pub fn to_json(&self) -> serde_json::Value {
        match self {
            QueryResult::Counter(v) => serde_json::Value::from(*v),
            QueryResult::Set(s) => s.iter().map(|e| bytes_to_json(e)).collect(),
            QueryResult::Register(v) => bytes_to_json(v),
        }
    }
}

pub(crate) fn bytes_to_json(b: &[u8]) -> serde_json::Value {
    match std::str::from_utf8(b) {
        Ok(s) => serde_json::Value::from(s),
        Err(_) => {
            let hex: String = b.iter().map(|x| format!("{x:02x}")).collect();
            serde_json::Value::from(format!("0x{hex}"))
        }
    }
}

impl CrdtState {
    pub fn crdt_type(&self) -> CrdtType {
        match self {
            CrdtState::GCounter(_) => CrdtType::GCounter,
            CrdtState::PNCounter(_) => CrdtType::PNCounter,
            CrdtState::GSet(_) => CrdtType::GSet,
            CrdtState::AWSet(_) => CrdtType::AWSet,
            CrdtState::LWWRegister(_) => CrdtType::LWWRegister,
        }
    }

    pub fn is_bottom(&self) -> bool {
        match self {
            CrdtState::GCounter(c) => c.is_bottom(),
            CrdtState::PNCounter(c) => c.is_bottom(),
            CrdtState::GSet(s) => s.is_bottom(),
            CrdtState::AWSet(s) => s.is_bottom(),
            CrdtState::LWWRegister(r) => r.is_bottom(),
        }
    }

    /// The smallest fragment of `self` whose join with `prior` equals
    /// `prior ⊔ self`. Bottom when `self ≤ prior`.
    pub fn difference(&self, prior: &CrdtState) -> Result<Delta, CrdtError> {
        Ok(match (self, prior) {
            (CrdtState::GCounter(a), CrdtState::GCounter(b)) => CrdtState::GCounter(a.difference(b)),
            (CrdtState::PNCounter(a), CrdtState::PNCounter(b)) => CrdtState::PNCounter(a.difference(b)),
            (CrdtState::GSet(a), CrdtState::GSet(b)) => CrdtState::GSet(a.difference(b)),
            (CrdtState::AWSet(a), CrdtState::AWSet(b)) => CrdtState::AWSet(a.difference(b)),
            (CrdtState::LWWRegister(a), CrdtState::LWWRegister(b)) => CrdtState::LWWRegister(a.difference(b)),
            _ => {
                return Err(CrdtError::TypeMismatch {
                    expected: prior.crdt_type(),
                    found: self.crdt_type(),
                })
            }
        })
    }

    /// In-place join. Leaves `self` untouched on a type mismatch.
    pub fn merge(&mut self, other: &CrdtState) -> Result<(), CrdtError> {
        match (self, other) {
            (CrdtState::GCounter(a), CrdtState::GCounter(b)) => a.merge(b),
            (CrdtState::PNCounter(a), CrdtState::PNCounter(b)) => a.merge(b),
            (CrdtState::GSet(a), CrdtState::GSet(b)) => a.merge(b),
            (CrdtState::AWSet(a), CrdtState::AWSet(b)) => a.merge(b),
            (CrdtState::LWWRegister(a), CrdtState::LWWRegister(b)) => a.merge(b),
            (a, b) => {
                return Err(CrdtError::TypeMismatch {
                    expected: a.crdt_type(),
                    found: b.crdt_type(),
                })
            }
        }
        Ok(())
    }

    pub fn value(&self) -> QueryResult {
        match self {
            CrdtState::GCounter(c) => QueryResult::Counter(c.value() as i64),
            CrdtState::PNCounter(c) => QueryResult::Counter(c.value()),
            CrdtState::GSet(s) => QueryResult::Set(s.elements().clone()),
            CrdtState::AWSet(s) => QueryResult::Set(s.elements().cloned().collect()),
            CrdtState::LWWRegister(r) => QueryResult::Register(r.value().to_vec()),
        }
    }

    /// Applies `op` in place and returns the delta it produced.
    pub fn apply(&mut self, op: &MutatorOp, actor: NodeId) -> Result<Delta, CrdtError> {
        let ty = self.crdt_type();
        let invalid = || CrdtError::InvalidOp { op: op.name(), ty };
        match op {
            MutatorOp::Increment(0) | MutatorOp::Decrement(0) => {
                return Err(CrdtError::NonPositiveAmount)
            }
            MutatorOp::Add(e) | MutatorOp::Remove(e) if e.is_empty() => {
                return Err(CrdtError::EmptyElement)
            }
            _ => {}
        }
        let delta = match (self, op) {
            (CrdtState::GCounter(c), MutatorOp::Increment(n)) => {
                CrdtState::GCounter(c.increment(actor, *n))
            }
            (CrdtState::PNCounter(c), MutatorOp::Increment(n)) => {
                CrdtState::PNCounter(c.increment(actor, *n))
            }
            (CrdtState::PNCounter(c), MutatorOp::Decrement(n)) => {
                CrdtState::PNCounter(c.decrement(actor, *n))
            }
            (CrdtState::GSet(s), MutatorOp::Add(e)) => CrdtState::GSet(s.add(e.clone())),
            (CrdtState::AWSet(s), MutatorOp::Add(e)) => CrdtState::AWSet(s.add(actor, e.clone())),
            (CrdtState::AWSet(s), MutatorOp::Remove(e)) => CrdtState::AWSet(s.remove(e)),
            (CrdtState::LWWRegister(r), MutatorOp::Assign { value, clock }) => {
                CrdtState::LWWRegister(r.assign(actor, value.clone(), *clock))
            }
            _ => return Err(invalid()),
        };
        Ok(delta)
    }
}

/// Least upper bound of two states of the same type.
pub fn join(a: &CrdtState, b: &CrdtState) -> Result<CrdtState, CrdtError> {
    let mut out = a.clone();
    out.merge(b)?;
    Ok(out)
}

/// Returns the mutated state together with the delta that produced it.
pub fn mutate(
    state: &CrdtState,
    op: &MutatorOp,
    actor: NodeId,
) -> Result<(CrdtState, Delta), CrdtError> {
    let mut next = state.clone();
    let delta = next.apply(op, actor)?;
    Ok((next, delta))
}

pub fn value(state: &CrdtState) -> QueryResult {
    state.value()
}

/// Lattice order: `a ≤ b` iff `a ⊔ b = b`.
pub fn leq(a: &CrdtState, b: &CrdtState) -> Result<bool, CrdtError> {
    Ok(&join(a, b)? == b)
}
