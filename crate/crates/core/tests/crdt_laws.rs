mod common;

use std::collections::{BTreeMap, BTreeSet};

use edgemesh::crdt::{join, leq, mutate, value, CrdtState, CrdtType, MutatorOp, NodeId, QueryResult};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::reachable_states;

fn any_type() -> impl Strategy<Value = CrdtType> {
    prop::sample::select(CrdtType::ALL.to_vec())
}

fn states(ty: CrdtType, seed: u64) -> [CrdtState; 3] {
    reachable_states(ty, &mut ChaCha8Rng::seed_from_u64(seed))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn join_is_a_semilattice(ty in any_type(), seed in any::<u64>()) {
        let [a, b, c] = states(ty, seed);
        prop_assert_eq!(join(&a, &b).unwrap(), join(&b, &a).unwrap());
        prop_assert_eq!(
            join(&join(&a, &b).unwrap(), &c).unwrap(),
            join(&a, &join(&b, &c).unwrap()).unwrap()
        );
        prop_assert_eq!(join(&a, &a).unwrap(), a.clone());
        prop_assert_eq!(join(&a, &ty.bottom()).unwrap(), a);
    }

    #[test]
    fn deltas_inflate_and_reproduce_the_mutation(ty in any_type(), seed in any::<u64>()) {
        let [a, _, _] = states(ty, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
        let mut clock = rng.gen_range(0..20);
        let op = common::random_op(ty, &mut rng, &mut clock);
        let (next, delta) = mutate(&a, &op, NodeId(1)).unwrap();
        prop_assert!(leq(&a, &next).unwrap());
        prop_assert_eq!(join(&a, &delta).unwrap().encode(), next.encode());
    }

    #[test]
    fn difference_carries_exactly_what_is_missing(ty in any_type(), seed in any::<u64>()) {
        let [a, b, _] = states(ty, seed);
        let fresh = b.difference(&a).unwrap();
        prop_assert_eq!(join(&a, &fresh).unwrap(), join(&a, &b).unwrap());
        prop_assert!(leq(&fresh, &b).unwrap());
        prop_assert!(b.difference(&join(&a, &b).unwrap()).unwrap().is_bottom());
    }

    #[test]
    fn canonical_encoding_round_trips(ty in any_type(), seed in any::<u64>()) {
        let [a, b, _] = states(ty, seed);
        let ab = join(&a, &b).unwrap();
        let bytes = ab.encode();
        prop_assert_eq!(bytes.len(), ab.encoded_len());
        prop_assert_eq!(CrdtState::decode(&bytes).unwrap(), ab.clone());
        prop_assert_eq!(join(&b, &a).unwrap().encode(), bytes);
    }

    #[test]
    fn gcounter_entries_never_decrease(seed in any::<u64>()) {
        let [a, b, _] = states(CrdtType::GCounter, seed);
        let CrdtState::GCounter(before) = &a else { unreachable!() };
        let CrdtState::GCounter(after) = join(&a, &b).unwrap() else { unreachable!() };
        for (n, v) in before.entries() {
            prop_assert!(after.get(*n) >= *v);
        }
        prop_assert_eq!(after.value(), after.entries().values().sum::<u64>());
    }
}

fn set_of(items: &[&str]) -> BTreeSet<Vec<u8>> {
    items.iter().map(|s| s.as_bytes().to_vec()).collect()
}

#[test]
fn concurrent_add_and_remove_of_seen_element_keeps_it() {
    let (base, _) = mutate(&CrdtType::AWSet.bottom(), &MutatorOp::Add(b"x".to_vec()), NodeId(1)).unwrap();
    let (on_a, _) = mutate(&base, &MutatorOp::Add(b"x".to_vec()), NodeId(1)).unwrap();
    let (on_b, _) = mutate(&base, &MutatorOp::Remove(b"x".to_vec()), NodeId(2)).unwrap();
    assert_eq!(value(&on_b), QueryResult::Set(BTreeSet::new()));
    assert_eq!(value(&join(&on_a, &on_b).unwrap()), QueryResult::Set(set_of(&["x"])));
}

/// Replays a random op multiset on three replicas with random merges, then
/// merges everything and compares against a sequential replay.
#[test]
fn thousand_random_ops_converge_to_the_sequential_replay() {
    for ty in [CrdtType::GCounter, CrdtType::PNCounter, CrdtType::GSet] {
        let mut rng = ChaCha8Rng::seed_from_u64(99 + u64::from(ty.tag()));
        let mut replicas = vec![ty.bottom(); 3];
        let mut sequential = ty.bottom();
        let mut expected_sum: i64 = 0;
        let mut expected_set = BTreeSet::new();
        let mut clock = 0;
        for _ in 0..1000 {
            let r = rng.gen_range(0..3);
            let op = common::random_op(ty, &mut rng, &mut clock);
            match &op {
                MutatorOp::Increment(n) => expected_sum += *n as i64,
                MutatorOp::Decrement(n) => expected_sum -= *n as i64,
                MutatorOp::Add(e) => {
                    expected_set.insert(e.clone());
                }
                _ => unreachable!(),
            }
            replicas[r].apply(&op, NodeId(r as u64 + 1)).unwrap();
            sequential.apply(&op, NodeId(r as u64 + 1)).unwrap();
            if rng.gen_bool(0.1) {
                let from = replicas[rng.gen_range(0..3)].clone();
                replicas[r].merge(&from).unwrap();
            }
        }
        let merged = replicas.iter().fold(ty.bottom(), |acc, s| join(&acc, s).unwrap());
        let want = match ty {
            CrdtType::GSet => QueryResult::Set(expected_set.clone()),
            _ => QueryResult::Counter(expected_sum),
        };
        assert_eq!(value(&merged), want, "{ty}");
        assert_eq!(value(&sequential), want, "{ty}");
        for r in &replicas {
            assert_eq!(join(r, &merged).unwrap(), merged);
        }
    }
}

// Add-wins oracle ----------------------------------------------------------

/// Reference semantics written directly over add events: an element is
/// present iff some add of it has been seen and not covered by a remove that
/// observed it.
#[derive(Clone, Default)]
struct OracleReplica {
    seen: BTreeSet<(usize, u32)>,
    removed: BTreeSet<(usize, u32)>,
}

#[derive(Clone, Copy, Debug)]
enum Step {
    Add(usize, usize),
    Remove(usize, usize),
    Merge { from: usize, into: usize },
}

fn alphabet(replicas: usize, elements: usize) -> Vec<Step> {
    let mut steps = Vec::new();
    for r in 0..replicas {
        for e in 0..elements {
            steps.push(Step::Add(r, e));
            steps.push(Step::Remove(r, e));
        }
        for into in 0..replicas {
            if into != r {
                steps.push(Step::Merge { from: r, into });
            }
        }
    }
    steps
}

fn element(e: usize) -> Vec<u8> {
    vec![b'a' + e as u8]
}

struct Run {
    oracle: Vec<OracleReplica>,
    /// event id -> element
    events: BTreeMap<(usize, u32), usize>,
    next: u32,
    impls: Vec<CrdtState>,
}

impl Run {
    fn new(replicas: usize) -> Self {
        Self {
            oracle: vec![OracleReplica::default(); replicas],
            events: BTreeMap::new(),
            next: 0,
            impls: vec![CrdtType::AWSet.bottom(); replicas],
        }
    }

    fn step(&mut self, s: Step) {
        match s {
            Step::Add(r, e) => {
                self.next += 1;
                let ev = (r, self.next);
                self.events.insert(ev, e);
                self.oracle[r].seen.insert(ev);
                self.impls[r].apply(&MutatorOp::Add(element(e)), NodeId(r as u64 + 1)).unwrap();
            }
            Step::Remove(r, e) => {
                let o = &mut self.oracle[r];
                let covered: Vec<_> = o.seen.iter().filter(|ev| self.events[ev] == e).copied().collect();
                o.removed.extend(covered);
                self.impls[r].apply(&MutatorOp::Remove(element(e)), NodeId(r as u64 + 1)).unwrap();
            }
            Step::Merge { from, into } => {
                let src = self.oracle[from].clone();
                self.oracle[into].seen.extend(src.seen);
                self.oracle[into].removed.extend(src.removed);
                let s = self.impls[from].clone();
                self.impls[into].merge(&s).unwrap();
            }
        }
    }

    fn oracle_members(&self, r: usize) -> BTreeSet<Vec<u8>> {
        let o = &self.oracle[r];
        o.seen.difference(&o.removed).map(|ev| element(self.events[ev])).collect()
    }

    fn check(&mut self) -> Result<(), String> {
        let n = self.impls.len();
        for r in 0..n {
            if value(&self.impls[r]) != QueryResult::Set(self.oracle_members(r)) {
                return Err(format!("replica {r} diverged from oracle before full merge"));
            }
        }
        for into in 0..n {
            for from in 0..n {
                if from != into {
                    self.step(Step::Merge { from, into });
                }
            }
        }
        for into in 0..n {
            for from in 0..n {
                if from != into {
                    self.step(Step::Merge { from, into });
                }
            }
        }
        let want = self.oracle_members(0);
        for r in 0..n {
            if value(&self.impls[r]) != QueryResult::Set(want.clone()) {
                return Err(format!("replica {r} diverged from oracle after full merge"));
            }
        }
        Ok(())
    }
}

fn exhaust(replicas: usize, elements: usize, len: usize) -> usize {
    let steps = alphabet(replicas, elements);
    let total = steps.len().pow(len as u32);
    for mut code in 0..total {
        let mut seq = Vec::with_capacity(len);
        for _ in 0..len {
            seq.push(steps[code % steps.len()]);
            code /= steps.len();
        }
        let mut run = Run::new(replicas);
        for &s in &seq {
            run.step(s);
        }
        if let Err(e) = run.check() {
            panic!("{e}: {seq:?}");
        }
    }
    total
}

#[test]
fn add_wins_matches_oracle_for_all_short_interleavings() {
    assert_eq!(exhaust(3, 4, 3), 30usize.pow(3));
    assert_eq!(exhaust(3, 2, 4), 18usize.pow(4));
}

#[test]
fn add_wins_matches_oracle_for_random_long_interleavings() {
    let steps = alphabet(3, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20_000 {
        let len = rng.gen_range(1..=12);
        let seq: Vec<Step> = (0..len).map(|_| steps[rng.gen_range(0..steps.len())]).collect();
        let mut run = Run::new(3);
        for &s in &seq {
            run.step(s);
        }
        if let Err(e) = run.check() {
            panic!("{e}: {seq:?}");
        }
    }
}
