#![allow(dead_code)]

use std::collections::BTreeMap;

use edgemesh::crdt::{CrdtState, CrdtType, MutatorOp, NodeId};
use edgemesh::runtime::Millis;
use edgemesh::sim::scenario::{OpName, Scenario, UpdateSpec};
use edgemesh::sim::topology::Topology;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub const ELEMENTS: [&[u8]; 4] = [b"a", b"b", b"c", b"d"];

/// A random mutator valid for `ty`.
pub fn random_op(ty: CrdtType, rng: &mut ChaCha8Rng, clock: &mut u64) -> MutatorOp {
    let pick = |rng: &mut ChaCha8Rng| ELEMENTS.choose(rng).unwrap().to_vec();
    match ty {
        CrdtType::GCounter => MutatorOp::Increment(rng.gen_range(1..=5)),
        CrdtType::PNCounter => {
            if rng.gen_bool(0.5) {
                MutatorOp::Increment(rng.gen_range(1..=5))
            } else {
                MutatorOp::Decrement(rng.gen_range(1..=5))
            }
        }
        CrdtType::GSet => MutatorOp::Add(pick(rng)),
        CrdtType::AWSet => {
            if rng.gen_bool(0.6) {
                MutatorOp::Add(pick(rng))
            } else {
                MutatorOp::Remove(pick(rng))
            }
        }
        CrdtType::LWWRegister => {
            // Occasionally reuse a clock so that ties on the timestamp occur.
            if rng.gen_bool(0.7) {
                *clock += 1;
            }
            MutatorOp::Assign {
                value: pick(rng),
                clock: *clock,
            }
        }
    }
}

/// Three reachable states of `ty` produced by replicas that mutate and
/// occasionally merge each other.
pub fn reachable_states(ty: CrdtType, rng: &mut ChaCha8Rng) -> [CrdtState; 3] {
    let mut replicas = [ty.bottom(), ty.bottom(), ty.bottom()];
    let mut clock = 0;
    let steps = rng.gen_range(0..14);
    for _ in 0..steps {
        let i = rng.gen_range(0..3);
        if rng.gen_bool(0.25) {
            let j = rng.gen_range(0..3);
            let other = replicas[j].clone();
            replicas[i].merge(&other).unwrap();
        } else {
            let op = random_op(ty, rng, &mut clock);
            replicas[i].apply(&op, NodeId(i as u64 + 1)).unwrap();
        }
    }
    replicas
}

/// Workload used by the replication criteria: node-private counter, set and
/// add/remove traffic, with the expected counter totals.
pub struct Workload {
    pub updates: Vec<UpdateSpec>,
    pub gcounter_total: u64,
    pub pncounter_total: i64,
}

fn spec(at_ms: Millis, node: usize, key: &str, ty: CrdtType, op: OpName, amount: Option<u64>, value: Option<String>) -> UpdateSpec {
    UpdateSpec {
        at_ms,
        node,
        key: key.to_string(),
        ty,
        op,
        amount,
        value,
    }
}

pub fn mixed_workload(seed: u64, nodes: usize, count: usize, from: Millis, to: Millis) -> Workload {
    let mut rng = rng(seed ^ 0x3f1e);
    let mut updates = Vec::new();
    let mut gcounter_total = 0;
    let mut pncounter_total = 0;
    for i in 0..count {
        let at = rng.gen_range(from..to);
        let node = rng.gen_range(0..nodes);
        let u = match rng.gen_range(0..5) {
            0 => {
                let n = rng.gen_range(1..=9);
                gcounter_total += n;
                spec(at, node, "hits", CrdtType::GCounter, OpName::Increment, Some(n), None)
            }
            1 => {
                let n = rng.gen_range(1..=9);
                if rng.gen_bool(0.5) {
                    pncounter_total += n as i64;
                    spec(at, node, "level", CrdtType::PNCounter, OpName::Increment, Some(n), None)
                } else {
                    pncounter_total -= n as i64;
                    spec(at, node, "level", CrdtType::PNCounter, OpName::Decrement, Some(n), None)
                }
            }
            2 => spec(at, node, "seen", CrdtType::GSet, OpName::Add, None, Some(format!("n{node}-{i}"))),
            _ => {
                let e = format!("n{node}-e{}", rng.gen_range(0..4));
                let op = if rng.gen_bool(0.6) { OpName::Add } else { OpName::Remove };
                spec(at, node, "members", CrdtType::AWSet, op, None, Some(e))
            }
        };
        updates.push(u);
    }
    updates.sort_by_key(|u| u.at_ms);
    Workload {
        updates,
        gcounter_total,
        pncounter_total,
    }
}

/// `count` increments of one GCounter spread over random nodes.
pub fn counter_workload(seed: u64, nodes: usize, count: usize, from: Millis, to: Millis) -> (Vec<UpdateSpec>, u64) {
    let mut rng = rng(seed ^ 0xc0);
    let mut total = 0;
    let mut updates: Vec<UpdateSpec> = (0..count)
        .map(|_| {
            let n = rng.gen_range(1..=3);
            total += n;
            spec(rng.gen_range(from..to), rng.gen_range(0..nodes), "ctr", CrdtType::GCounter, OpName::Increment, Some(n), None)
        })
        .collect();
    updates.sort_by_key(|u| u.at_ms);
    (updates, total)
}

/// Updates touching shared keys from every node, including register writes
/// and contended set elements.
pub fn contended_workload(seed: u64, nodes: usize, count: usize, from: Millis, to: Millis) -> Vec<UpdateSpec> {
    let mut rng = rng(seed ^ 0x9a);
    let mut updates = Vec::new();
    for i in 0..count {
        // Round-robin first so every node (and so every island) writes.
        let node = if i < nodes { i } else { rng.gen_range(0..nodes) };
        let at = rng.gen_range(from..to);
        let e = format!("e{}", rng.gen_range(0..5));
        let u = match rng.gen_range(0..5) {
            0 => spec(at, node, "hits", CrdtType::GCounter, OpName::Increment, Some(rng.gen_range(1..4)), None),
            1 => spec(at, node, "mode", CrdtType::LWWRegister, OpName::Assign, None, Some(format!("v{node}-{i}"))),
            2 => spec(at, node, "tags", CrdtType::AWSet, OpName::Add, None, Some(e)),
            3 => spec(at, node, "tags", CrdtType::AWSet, OpName::Remove, None, Some(e)),
            _ => spec(at, node, "log", CrdtType::GSet, OpName::Add, None, Some(format!("n{node}-{i}"))),
        };
        updates.push(u);
    }
    updates.sort_by_key(|u| u.at_ms);
    updates
}

pub fn base_scenario(seed: u64, nodes: usize, topology: Topology) -> Scenario {
    Scenario {
        seed,
        nodes,
        topology,
        ..Scenario::default()
    }
}

/// Nodes reachable from `start` over `edges` by flooding.
pub fn flood(start: usize, edges: &std::collections::BTreeSet<(usize, usize)>) -> std::collections::BTreeSet<usize> {
    let mut adj: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &(a, b) in edges {
        adj.entry(a).or_default().push(b);
        adj.entry(b).or_default().push(a);
    }
    let mut seen = std::collections::BTreeSet::from([start]);
    let mut stack = vec![start];
    while let Some(x) = stack.pop() {
        for &y in adj.get(&x).map(Vec::as_slice).unwrap_or(&[]) {
            if seen.insert(y) {
                stack.push(y);
            }
        }
    }
    seen
}

/// Random split of `0..n` into `k` non-empty groups.
pub fn random_groups(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(rng);
    let mut groups = vec![Vec::new(); k];
    for (i, id) in ids.into_iter().enumerate() {
        let g = if i < k { i } else { rng.gen_range(0..k) };
        groups[g].push(id);
    }
    for g in &mut groups {
        g.sort_unstable();
    }
    groups
}

/// The nine-node reference deployment used by the task and determinism
/// checks.
pub const SENSOR_FIELD_EDGES: [[usize; 2]; 14] = [
    [0, 1],
    [0, 2],
    [1, 2],
    [2, 5],
    [1, 3],
    [4, 5],
    [4, 3],
    [4, 1],
    [4, 6],
    [5, 6],
    [5, 8],
    [5, 7],
    [7, 8],
    [6, 7],
];

pub fn sensor_field_topology() -> Topology {
    Topology::Edges {
        edges: SENSOR_FIELD_EDGES.to_vec(),
    }
}
