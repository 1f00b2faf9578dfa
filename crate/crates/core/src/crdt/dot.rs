//! Node identifiers, dots and causal contexts.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

/// Opaque, totally ordered node identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u64);

impl NodeId {
    pub const fn new(id: u64) -> Self {
        Self(id)
    }

    pub const fn raw(self) -> u64 {
        self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

impl From<u64> for NodeId {
    fn from(v: u64) -> Self {
        Self(v)
    }
}

/// A unique event tag: the `counter`-th event produced by `origin`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Dot {
    pub origin: NodeId,
    pub counter: u64,
}

impl Dot {
    pub const fn new(origin: NodeId, counter: u64) -> Self {
        Self { origin, counter }
    }
}

impl fmt::Display for Dot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.origin, self.counter)
    }
}

/// The set of dots a replica has observed, stored as a per-origin contiguous
/// prefix plus a cloud of dots beyond that prefix.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CausalContext {
    compact: BTreeMap<NodeId, u64>,
    cloud: BTreeSet<Dot>,
}

impl CausalContext {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.compact.is_empty() && self.cloud.is_empty()
    }

    pub fn compact_entries(&self) -> &BTreeMap<NodeId, u64> {
        &self.compact
    }

    pub fn cloud(&self) -> &BTreeSet<Dot> {
        &self.cloud
    }

    pub fn contains(&self, dot: &Dot) -> bool {
        self.compact.get(&dot.origin).is_some_and(|&max| dot.counter <= max)
            || self.cloud.contains(dot)
    }

    /// Highest counter observed for `origin`, contiguous or not.
    pub fn max_counter(&self, origin: NodeId) -> u64 {
        let compact = self.compact.get(&origin).copied().unwrap_or(0);
        let cloud = self
            .cloud
            .range(Dot::new(origin, 0)..=Dot::new(origin, u64::MAX))
            .next_back()
            .map_or(0, |d| d.counter);
        compact.max(cloud)
    }

    /// A fresh dot for `origin`. Does not record it.
    pub fn next_dot(&self, origin: NodeId) -> Dot {
        Dot::new(origin, self.max_counter(origin) + 1)
    }

    pub fn insert(&mut self, dot: Dot) {
        if !self.contains(&dot) {
            self.cloud.insert(dot);
            self.compact();
        }
    }

    pub fn join(&mut self, other: &CausalContext) {
        for (&origin, &max) in &other.compact {
            let e = self.compact.entry(origin).or_insert(0);
            *e = (*e).max(max);
        }
        self.cloud.extend(other.cloud.iter().copied());
        self.compact();
    }

    /// Folds cloud dots that extend the contiguous prefix into it and drops
    /// cloud dots already covered by the prefix.
    pub fn compact(&mut self) {
        if self.cloud.is_empty() {
            return;
        }
        let cloud = std::mem::take(&mut self.cloud);
        for dot in cloud {
            let max = self.compact.entry(dot.origin).or_insert(0);
            if dot.counter == *max + 1 {
                *max += 1;
            } else if dot.counter > *max {
                self.cloud.insert(dot);
            }
        }
        self.compact.retain(|_, max| *max > 0);
    }

    /// Dots observed here but not in `other`.
    pub fn minus(&self, other: &CausalContext) -> CausalContext {
        let mut dots = BTreeSet::new();
        for (&origin, &max) in &self.compact {
            let from = other.compact.get(&origin).copied().unwrap_or(0) + 1;
            for counter in from..=max {
                let d = Dot::new(origin, counter);
                if !other.cloud.contains(&d) {
                    dots.insert(d);
                }
            }
        }
        dots.extend(self.cloud.iter().filter(|d| !other.contains(d)).copied());
        dots.into_iter().collect()
    }

    /// Iterates every observed dot. Intended for small contexts (tests,
    /// oracles); the compact part is expanded.
    pub fn dots(&self) -> impl Iterator<Item = Dot> + '_ {
        self.compact
            .iter()
            .flat_map(|(&o, &max)| (1..=max).map(move |c| Dot::new(o, c)))
            .chain(self.cloud.iter().copied())
    }

    pub(crate) fn from_parts(compact: BTreeMap<NodeId, u64>, cloud: BTreeSet<Dot>) -> Self {
        let mut cc = Self { compact, cloud };
        cc.compact();
        cc
    }

    /// Checks the normalization invariants.
    pub fn is_normalized(&self) -> bool {
        self.compact.values().all(|&m| m > 0)
            && self.cloud.iter().all(|d| {
                let max = self.compact.get(&d.origin).copied().unwrap_or(0);
                d.counter > max + 1
            })
    }
}

impl FromIterator<Dot> for CausalContext {
    fn from_iter<I: IntoIterator<Item = Dot>>(iter: I) -> Self {
        Self::from_parts(BTreeMap::new(), iter.into_iter().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const A: NodeId = NodeId(1);
    const B: NodeId = NodeId(2);

    #[test]
    fn contiguous_dots_fold_into_prefix() {
        let mut cc = CausalContext::new();
        cc.insert(Dot::new(A, 2));
        assert_eq!(cc.cloud().len(), 1);
        cc.insert(Dot::new(A, 1));
        assert!(cc.cloud().is_empty());
        assert_eq!(cc.compact_entries()[&A], 2);
        assert!(cc.is_normalized());
    }

    #[test]
    fn next_dot_accounts_for_cloud() {
        let cc: CausalContext = [Dot::new(A, 3)].into_iter().collect();
        assert_eq!(cc.next_dot(A), Dot::new(A, 4));
        assert_eq!(cc.next_dot(B), Dot::new(B, 1));
    }

    #[test]
    fn join_is_union() {
        let x: CausalContext = [Dot::new(A, 1), Dot::new(B, 3)].into_iter().collect();
        let y: CausalContext = [Dot::new(A, 2), Dot::new(B, 1)].into_iter().collect();
        let mut j = x.clone();
        j.join(&y);
        let mut dots: Vec<_> = j.dots().collect();
        dots.sort();
        assert_eq!(
            dots,
            vec![Dot::new(A, 1), Dot::new(A, 2), Dot::new(B, 1), Dot::new(B, 3)]
        );
        assert!(j.is_normalized());
    }
}
