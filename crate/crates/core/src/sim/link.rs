//! Link behaviour between node pairs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::runtime::Millis;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkModel {
    pub loss: f64,
    pub latency_min_ms: Millis,
    pub latency_max_ms: Millis,
}

impl Default for LinkModel {
    fn default() -> Self {
        Self {
            loss: 0.0,
            latency_min_ms: 5,
            latency_max_ms: 20,
        }
    }
}

impl LinkModel {
    pub fn lossless(latency_min_ms: Millis, latency_max_ms: Millis) -> Self {
        Self {
            loss: 0.0,
            latency_min_ms,
            latency_max_ms,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.loss) {
            return Err(format!("loss {} outside [0, 1]", self.loss));
        }
        if self.latency_min_ms > self.latency_max_ms {
            return Err(format!(
                "latency_min_ms {} > latency_max_ms {}",
                self.latency_min_ms, self.latency_max_ms
            ));
        }
        Ok(())
    }
}

/// Per-pair overrides on top of a default model. Links are symmetric.
#[derive(Debug, Clone, Default)]
pub struct Links {
    default: LinkModel,
    overrides: BTreeMap<(usize, usize), LinkModel>,
}

impl Links {
    pub fn new(default: LinkModel) -> Self {
        Self {
            default,
            overrides: BTreeMap::new(),
        }
    }

    fn pair(a: usize, b: usize) -> (usize, usize) {
        (a.min(b), a.max(b))
    }

    pub fn set(&mut self, a: usize, b: usize, model: LinkModel) {
        self.overrides.insert(Self::pair(a, b), model);
    }

    pub fn get(&self, a: usize, b: usize) -> LinkModel {
        self.overrides.get(&Self::pair(a, b)).copied().unwrap_or(self.default)
    }

    pub fn default_model(&self) -> LinkModel {
        self.default
    }
}

/// Partition state: each node belongs to one group; links across groups are
/// down.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Partition {
    group_of: Option<Vec<usize>>,
}

impl Partition {
    pub fn split(n: usize, groups: &[Vec<usize>]) -> Result<Self, String> {
        let mut group_of = vec![usize::MAX; n];
        for (g, members) in groups.iter().enumerate() {
            for &m in members {
                if m >= n {
                    return Err(format!("node {m} out of range"));
                }
                if group_of[m] != usize::MAX {
                    return Err(format!("node {m} appears in more than one group"));
                }
                group_of[m] = g;
            }
        }
        if let Some(m) = group_of.iter().position(|&g| g == usize::MAX) {
            return Err(format!("node {m} is in no group"));
        }
        Ok(Self {
            group_of: Some(group_of),
        })
    }

    pub fn heal(&mut self) {
        self.group_of = None;
    }

    pub fn is_active(&self) -> bool {
        self.group_of.is_some()
    }

    pub fn connected(&self, a: usize, b: usize) -> bool {
        match &self.group_of {
            None => true,
            Some(g) => g[a] == g[b],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_are_symmetric() {
        let mut l = Links::new(LinkModel::default());
        l.set(3, 1, LinkModel::lossless(1, 1));
        assert_eq!(l.get(1, 3), LinkModel::lossless(1, 1));
        assert_eq!(l.get(1, 2), LinkModel::default());
    }

    #[test]
    fn partitions_validate_groups() {
        assert!(Partition::split(3, &[vec![0], vec![1, 2]]).is_ok());
        assert!(Partition::split(3, &[vec![0, 1], vec![1, 2]]).is_err());
        assert!(Partition::split(3, &[vec![0, 1]]).is_err());
        let mut p = Partition::split(4, &[vec![0, 1], vec![2, 3]]).unwrap();
        assert!(p.connected(0, 1));
        assert!(!p.connected(1, 2));
        p.heal();
        assert!(p.connected(1, 2));
    }

    #[test]
    fn model_validation() {
        assert!(LinkModel { loss: 1.5, ..Default::default() }.validate().is_err());
        assert!(LinkModel::lossless(9, 3).validate().is_err());
    }
}
