use std::collections::{BTreeMap, BTreeSet};

use super::{CausalContext, Dot, NodeId};

/// Grow-only set of opaque byte strings.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GSet {
    elements: BTreeSet<Vec<u8>>,
}

impl GSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn elements(&self) -> &BTreeSet<Vec<u8>> {
        &self.elements
    }

    pub fn contains(&self, e: &[u8]) -> bool {
        self.elements.contains(e)
    }

    pub fn is_bottom(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn add(&mut self, e: Vec<u8>) -> GSet {
        self.elements.insert(e.clone());
        [e].into_iter().collect()
    }

    pub fn difference(&self, prior: &GSet) -> GSet {
        self.elements.difference(&prior.elements).cloned().collect()
    }

    pub fn merge(&mut self, other: &GSet) {
        self.elements.extend(other.elements.iter().cloned());
    }
}

impl FromIterator<Vec<u8>> for GSet {
    fn from_iter<I: IntoIterator<Item = Vec<u8>>>(iter: I) -> Self {
        Self {
            elements: iter.into_iter().collect(),
        }
    }
}

/// Add-wins observed-remove set.
///
/// Each live element carries the dots of the adds that produced it; the
/// causal context records every dot this replica has seen, so a dot that is
/// in the context but absent from `entries` has been removed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AWSet {
    entries: BTreeMap<Vec<u8>, BTreeSet<Dot>>,
    context: CausalContext,
}

impl AWSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn from_parts(
        entries: BTreeMap<Vec<u8>, BTreeSet<Dot>>,
        context: CausalContext,
    ) -> Self {
        let mut s = Self { entries, context };
        s.entries.retain(|_, dots| !dots.is_empty());
        s
    }

    pub fn entries(&self) -> &BTreeMap<Vec<u8>, BTreeSet<Dot>> {
        &self.entries
    }

    pub fn context(&self) -> &CausalContext {
        &self.context
    }

    pub fn contains(&self, e: &[u8]) -> bool {
        self.entries.contains_key(e)
    }

    pub fn elements(&self) -> impl Iterator<Item = &Vec<u8>> {
        self.entries.keys()
    }

    pub fn is_bottom(&self) -> bool {
        self.entries.is_empty() && self.context.is_empty()
    }

    /// Every dot in `entries` must be covered by the context.
    pub fn is_well_formed(&self) -> bool {
        self.context.is_normalized()
            && self
                .entries
                .values()
                .all(|dots| !dots.is_empty() && dots.iter().all(|d| self.context.contains(d)))
    }

    /// Tags `e` with a fresh dot from `actor`, superseding the dots this
    /// replica has observed for `e`.
    pub fn add(&mut self, actor: NodeId, e: Vec<u8>) -> AWSet {
        let dot = self.context.next_dot(actor);
        let old = self.entries.insert(e.clone(), BTreeSet::from([dot])).unwrap_or_default();
        self.context.insert(dot);

        let delta_ctx: CausalContext = old.into_iter().chain([dot]).collect();
        AWSet::from_parts(BTreeMap::from([(e, BTreeSet::from([dot]))]), delta_ctx)
    }

    /// Removes every observed instance of `e`. The delta has no entries and a
    /// context covering the removed dots.
    pub fn remove(&mut self, e: &[u8]) -> AWSet {
        let old = self.entries.remove(e).unwrap_or_default();
        AWSet::from_parts(BTreeMap::new(), old.into_iter().collect())
    }

    /// The part of `self` that `prior` lacks: add dots `prior` has not seen,
    /// plus context for those dots and for the adds of `prior` that `self`
    /// has removed.
    pub fn difference(&self, prior: &AWSet) -> AWSet {
        let entries: BTreeMap<Vec<u8>, BTreeSet<Dot>> = self
            .entries
            .iter()
            .map(|(e, dots)| {
                let fresh = dots.iter().filter(|d| !prior.context.contains(d)).copied().collect();
                (e.clone(), fresh)
            })
            .collect();
        let mut context = self.context.minus(&prior.context);
        let empty = BTreeSet::new();
        for (e, dots) in &prior.entries {
            let live = self.entries.get(e).unwrap_or(&empty);
            for d in dots {
                if self.context.contains(d) && !live.contains(d) {
                    context.insert(*d);
                }
            }
        }
        AWSet::from_parts(entries, context)
    }

    pub fn merge(&mut self, other: &AWSet) {
        let mut merged = BTreeMap::new();
        let keys: BTreeSet<&Vec<u8>> = self.entries.keys().chain(other.entries.keys()).collect();
        let empty = BTreeSet::new();
        for key in keys {
            let mine = self.entries.get(key).unwrap_or(&empty);
            let theirs = other.entries.get(key).unwrap_or(&empty);
            let kept: BTreeSet<Dot> = mine
                .iter()
                .filter(|d| theirs.contains(d) || !other.context.contains(d))
                .chain(theirs.iter().filter(|d| !self.context.contains(d)))
                .copied()
                .collect();
            if !kept.is_empty() {
                merged.insert(key.clone(), kept);
            }
        }
        self.entries = merged;
        self.context.join(&other.context);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const A: NodeId = NodeId(1);
    const B: NodeId = NodeId(2);

    fn x() -> Vec<u8> {
        b"x".to_vec()
    }

    #[test]
    fn add_assigns_first_dot() {
        let mut s = AWSet::new();
        let d = s.add(A, x());
        assert_eq!(s.entries()[&x()], BTreeSet::from([Dot::new(A, 1)]));
        assert_eq!(d.entries().len(), 1);
        assert_eq!(d.context().dots().collect::<Vec<_>>(), vec![Dot::new(A, 1)]);
    }

    #[test]
    fn remove_delta_carries_context_only() {
        let mut a = AWSet::new();
        a.add(A, x());
        let mut b = a.clone();
        let d = b.remove(&x());
        assert!(!b.contains(&x()));
        assert!(d.entries().is_empty());
        assert!(d.context().contains(&Dot::new(A, 1)));
    }

    #[test]
    fn concurrent_add_beats_remove() {
        let mut a = AWSet::new();
        a.add(A, x());
        let mut b = a.clone();
        a.add(A, x());
        b.remove(&x());
        let mut m = a.clone();
        m.merge(&b);
        assert!(m.contains(&x()));
        let mut m2 = b.clone();
        m2.merge(&a);
        assert_eq!(m, m2);
    }

    #[test]
    fn removing_absent_element_is_empty_delta() {
        let mut s = AWSet::new();
        let d = s.remove(b"nope");
        assert!(d.is_bottom());
    }

    #[test]
    fn merge_keeps_unseen_dots_of_other_side() {
        let mut a = AWSet::new();
        let mut b = AWSet::new();
        a.add(A, x());
        b.add(B, x());
        a.merge(&b);
        assert_eq!(a.entries()[&x()].len(), 2);
        assert!(a.is_well_formed());
    }
}
