//! Physical topologies. They decide join contacts and which pairs use
//! per-link overrides; any live node can still address any other.

use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Topology {
    Edges { edges: Vec<[usize; 2]> },
    Line,
    #[default]
    Ring,
    Star,
    Full,
    /// Random spanning tree plus extra edges up to the mean degree.
    Random { degree: usize },
}

impl Topology {
    pub fn validate(&self, n: usize) -> Result<(), String> {
        if let Topology::Edges { edges } = self {
            for &[a, b] in edges {
                if a >= n || b >= n {
                    return Err(format!("edge ({a}, {b}) references a node >= {n}"));
                }
                if a == b {
                    return Err(format!("self-loop on node {a}"));
                }
            }
        }
        Ok(())
    }

    /// Undirected edge set, each pair as `(low, high)`.
    pub fn edges(&self, n: usize, rng: &mut ChaCha8Rng) -> BTreeSet<(usize, usize)> {
        let norm = |a: usize, b: usize| (a.min(b), a.max(b));
        let mut out = BTreeSet::new();
        match self {
            Topology::Edges { edges } => out.extend(edges.iter().map(|&[a, b]| norm(a, b))),
            Topology::Line => out.extend((1..n).map(|i| (i - 1, i))),
            Topology::Ring => {
                out.extend((1..n).map(|i| (i - 1, i)));
                if n > 2 {
                    out.insert((0, n - 1));
                }
            }
            Topology::Star => out.extend((1..n).map(|i| (0, i))),
            Topology::Full => {
                for a in 0..n {
                    out.extend((a + 1..n).map(|b| (a, b)));
                }
            }
            Topology::Random { degree } => {
                for i in 1..n {
                    out.insert(norm(rng.gen_range(0..i), i));
                }
                let max_edges = n * n.saturating_sub(1) / 2;
                let target = (n * degree / 2).min(max_edges);
                while out.len() < target {
                    let a = rng.gen_range(0..n);
                    let b = rng.gen_range(0..n);
                    if a != b {
                        out.insert(norm(a, b));
                    }
                }
            }
        }
        out
    }
}

/// Join contacts per node: lower-index neighbours first, then the rest.
pub fn contacts(n: usize, edges: &BTreeSet<(usize, usize)>) -> Vec<Vec<usize>> {
    let mut lower = vec![Vec::new(); n];
    let mut higher = vec![Vec::new(); n];
    for &(a, b) in edges {
        lower[b].push(a);
        higher[a].push(b);
    }
    lower
        .into_iter()
        .zip(higher)
        .map(|(mut lo, hi)| {
            lo.sort_unstable();
            lo.extend(hi);
            lo
        })
        .collect()
}

/// Whether the undirected graph over `nodes` with `edges` is connected.
pub fn is_connected(nodes: &BTreeSet<usize>, edges: &BTreeSet<(usize, usize)>) -> bool {
    components(nodes, edges).len() <= 1
}

pub fn components(nodes: &BTreeSet<usize>, edges: &BTreeSet<(usize, usize)>) -> Vec<BTreeSet<usize>> {
    let mut seen = BTreeSet::new();
    let mut comps = Vec::new();
    for &start in nodes {
        if seen.contains(&start) {
            continue;
        }
        let mut comp = BTreeSet::from([start]);
        let mut stack = vec![start];
        seen.insert(start);
        while let Some(v) = stack.pop() {
            for &(a, b) in edges {
                let w = if a == v {
                    b
                } else if b == v {
                    a
                } else {
                    continue;
                };
                if nodes.contains(&w) && seen.insert(w) {
                    comp.insert(w);
                    stack.push(w);
                }
            }
        }
        comps.push(comp);
    }
    comps
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::derive_rng;

    #[test]
    fn generators() {
        let mut rng = derive_rng(1, &[]);
        assert_eq!(Topology::Line.edges(4, &mut rng).len(), 3);
        assert_eq!(Topology::Ring.edges(4, &mut rng).len(), 4);
        assert_eq!(Topology::Star.edges(5, &mut rng).len(), 4);
        assert_eq!(Topology::Full.edges(5, &mut rng).len(), 10);
        assert!(Topology::Ring.edges(1, &mut rng).is_empty());
        let all: BTreeSet<usize> = (0..20).collect();
        for seed in 0..20 {
            let e = Topology::Random { degree: 3 }.edges(20, &mut derive_rng(seed, &[]));
            assert!(is_connected(&all, &e));
            assert!(e.len() >= 30);
        }
    }

    #[test]
    fn contact_order() {
        let e: BTreeSet<_> = [(0, 2), (1, 2), (2, 5)].into();
        assert_eq!(contacts(6, &e)[2], vec![0, 1, 5]);
        assert_eq!(contacts(6, &e)[0], vec![2]);
        assert!(contacts(6, &e)[3].is_empty());
    }

    #[test]
    fn validation_and_components() {
        assert!(Topology::Edges { edges: vec![[0, 9]] }.validate(3).is_err());
        assert!(Topology::Edges { edges: vec![[1, 1]] }.validate(3).is_err());
        let nodes: BTreeSet<usize> = (0..4).collect();
        let comps = components(&nodes, &[(0, 1), (2, 3)].into());
        assert_eq!(comps.len(), 2);
    }
}
