use std::cmp::Ordering;

use super::NodeId;

/// Last-writer-wins register ordered by `(timestamp, writer)`.
///
/// The value bytes act as a final tie-break so that join stays a total order
/// even for states no correct writer could produce (two values under one
/// stamp).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LWWRegister {
    value: Vec<u8>,
    timestamp: u64,
    writer: NodeId,
}

impl LWWRegister {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(value: Vec<u8>, timestamp: u64, writer: NodeId) -> Self {
        Self {
            value,
            timestamp,
            writer,
        }
    }

    pub fn value(&self) -> &[u8] {
        &self.value
    }

    pub fn timestamp(&self) -> u64 {
        self.timestamp
    }

    pub fn writer(&self) -> NodeId {
        self.writer
    }

    pub fn is_bottom(&self) -> bool {
        self.timestamp == 0 && self.writer == NodeId(0) && self.value.is_empty()
    }

    fn order_key(&self) -> (u64, NodeId, &[u8]) {
        (self.timestamp, self.writer, &self.value)
    }

    /// Writes `value` with a stamp strictly above both the current stamp and
    /// the caller's logical clock. The delta is the whole new register.
    pub fn assign(&mut self, actor: NodeId, value: Vec<u8>, clock: u64) -> LWWRegister {
        self.timestamp = self.timestamp.max(clock) + 1;
        self.writer = actor;
        self.value = value;
        self.clone()
    }

    /// `self` if it would win against `prior`, bottom otherwise.
    pub fn difference(&self, prior: &LWWRegister) -> LWWRegister {
        if self.order_key() > prior.order_key() {
            self.clone()
        } else {
            LWWRegister::new()
        }
    }

    pub fn merge(&mut self, other: &LWWRegister) {
        if other.order_key().cmp(&self.order_key()) == Ordering::Greater {
            *self = other.clone();
        }
    }
}
