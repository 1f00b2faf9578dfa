use std::collections::BTreeMap;

use super::NodeId;

/// Grow-only counter: one monotone entry per contributing node.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GCounter {
    entries: BTreeMap<NodeId, u64>,
}

impl GCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries<I: IntoIterator<Item = (NodeId, u64)>>(entries: I) -> Self {
        let mut c = Self::new();
        for (n, v) in entries {
            if v > 0 {
                let e = c.entries.entry(n).or_insert(0);
                *e = (*e).max(v);
            }
        }
        c
    }

    pub fn entries(&self) -> &BTreeMap<NodeId, u64> {
        &self.entries
    }

    pub fn get(&self, node: NodeId) -> u64 {
        self.entries.get(&node).copied().unwrap_or(0)
    }

    pub fn value(&self) -> u64 {
        self.entries.values().sum()
    }

    pub fn is_bottom(&self) -> bool {
        self.entries.is_empty()
    }

    /// Increments `actor`'s entry; returns the single-entry delta.
    pub fn increment(&mut self, actor: NodeId, amount: u64) -> GCounter {
        let e = self.entries.entry(actor).or_insert(0);
        *e += amount;
        GCounter::from_entries([(actor, *e)])
    }

    /// Entries of `self` that exceed `prior`.
    pub fn difference(&self, prior: &GCounter) -> GCounter {
        GCounter::from_entries(
            self.entries
                .iter()
                .filter(|(&n, &v)| v > prior.get(n))
                .map(|(&n, &v)| (n, v)),
        )
    }

    pub fn merge(&mut self, other: &GCounter) {
        for (&n, &v) in &other.entries {
            let e = self.entries.entry(n).or_insert(0);
            *e = (*e).max(v);
        }
    }
}

/// Counter supporting increments and decrements as two grow-only halves.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PNCounter {
    pub(crate) inc: GCounter,
    pub(crate) dec: GCounter,
}

impl PNCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_parts(inc: GCounter, dec: GCounter) -> Self {
        Self { inc, dec }
    }

    pub fn increments(&self) -> &GCounter {
        &self.inc
    }

    pub fn decrements(&self) -> &GCounter {
        &self.dec
    }

    pub fn value(&self) -> i64 {
        self.inc.value() as i64 - self.dec.value() as i64
    }

    pub fn is_bottom(&self) -> bool {
        self.inc.is_bottom() && self.dec.is_bottom()
    }

    pub fn increment(&mut self, actor: NodeId, amount: u64) -> PNCounter {
        PNCounter::from_parts(self.inc.increment(actor, amount), GCounter::new())
    }

    pub fn decrement(&mut self, actor: NodeId, amount: u64) -> PNCounter {
        PNCounter::from_parts(GCounter::new(), self.dec.increment(actor, amount))
    }

    pub fn difference(&self, prior: &PNCounter) -> PNCounter {
        PNCounter::from_parts(
            self.increments().difference(prior.increments()),
            self.decrements().difference(prior.decrements()),
        )
    }

    pub fn merge(&mut self, other: &PNCounter) {
        self.inc.merge(&other.inc);
        self.dec.merge(&other.dec);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const A: NodeId = NodeId(1);
    const B: NodeId = NodeId(2);

    #[test]
    fn pointwise_max_and_sum() {
        let a = GCounter::from_entries([(A, 3)]);
        let b = GCounter::from_entries([(B, 5)]);
        let mut j = a.clone();
        j.merge(&b);
        assert_eq!(j, GCounter::from_entries([(A, 3), (B, 5)]));
        assert_eq!(j.value(), 8);
    }

    #[test]
    fn increment_delta_is_single_entry() {
        let mut c = GCounter::new();
        let d = c.increment(A, 4);
        assert_eq!(d, GCounter::from_entries([(A, 4)]));
        assert_eq!(c, d);
        let d2 = c.increment(A, 1);
        assert_eq!(d2.entries().len(), 1);
        assert_eq!(d2.get(A), 5);
    }

    #[test]
    fn pn_value_can_go_negative() {
        let mut c = PNCounter::new();
        c.increment(A, 2);
        c.decrement(B, 5);
        assert_eq!(c.value(), -3);
    }
}
