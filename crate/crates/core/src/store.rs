//! Named CRDT variables: the developer-facing replicated key/value store.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::codec::{CodecError, Reader, Writer};
use crate::crdt::{CrdtError, CrdtState, CrdtType, Delta, MutatorOp, NodeId, QueryResult};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StoreKey {
    pub name: String,
    pub ty: CrdtType,
}

impl StoreKey {
    pub fn new(name: impl Into<String>, ty: CrdtType) -> Self {
        Self {
            name: name.into(),
            ty,
        }
    }

    pub fn encode_into(&self, w: &mut Writer) {
        w.bytes(self.name.as_bytes()).u8(self.ty.tag());
    }

    pub fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let name = r.string()?;
        let tag = r.u8()?;
        let ty = CrdtType::from_tag(tag).ok_or(CodecError::InvalidTag { what: "crdt", tag })?;
        Ok(Self { name, ty })
    }
}

impl fmt::Display for StoreKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.name, self.ty)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StoreError {
    #[error("key name must be non-empty")]
    EmptyName,
    #[error("key {name:?} is declared as {existing}, not {requested}")]
    TypeConflict {
        name: String,
        existing: CrdtType,
        requested: CrdtType,
    },
    #[error("key {0:?} not found")]
    NotFound(String),
    #[error(transparent)]
    Crdt(#[from] CrdtError),
}

/// Map from key to CRDT state.
///
/// Local declarations enforce one type per name. Remote state is keyed by the
/// full `(name, type)` pair so that a conflicting declaration made on the
/// other side of a partition still converges instead of being dropped.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Store {
    entries: BTreeMap<StoreKey, CrdtState>,
}

impl Store {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&StoreKey, &CrdtState)> {
        self.entries.iter()
    }

    pub fn get(&self, key: &StoreKey) -> Option<&CrdtState> {
        self.entries.get(key)
    }

    fn types_of<'a>(&'a self, name: &'a str) -> impl Iterator<Item = CrdtType> + 'a {
        self.entries.keys().filter(move |k| k.name == name).map(|k| k.ty)
    }

    /// Binds `key` to its bottom state if absent. Returns whether a new
    /// binding was created.
    pub fn declare(&mut self, key: &StoreKey) -> Result<bool, StoreError> {
        if key.name.is_empty() {
            return Err(StoreError::EmptyName);
        }
        if self.entries.contains_key(key) {
            return Ok(false);
        }
        if let Some(existing) = self.types_of(&key.name).next() {
            return Err(StoreError::TypeConflict {
                name: key.name.clone(),
                existing,
                requested: key.ty,
            });
        }
        self.entries.insert(key.clone(), key.ty.bottom());
        Ok(true)
    }

    /// Applies a local mutation, declaring the key first if needed.
    pub fn update(
        &mut self,
        key: &StoreKey,
        op: &MutatorOp,
        actor: NodeId,
    ) -> Result<(QueryResult, Delta), StoreError> {
        self.declare(key)?;
        let state = self.entries.get_mut(key).expect("declared above");
        let delta = state.apply(op, actor)?;
        Ok((state.value(), delta))
    }

    /// Joins a remote delta or state. Returns the fragment that was new to
    /// this replica, or `None` if nothing inflated.
    pub fn join_remote(&mut self, key: &StoreKey, delta: &Delta) -> Result<Option<Delta>, StoreError> {
        if key.name.is_empty() {
            return Err(StoreError::EmptyName);
        }
        if delta.crdt_type() != key.ty {
            return Err(CrdtError::TypeMismatch {
                expected: key.ty,
                found: delta.crdt_type(),
            }
            .into());
        }
        let state = self.entries.entry(key.clone()).or_insert_with(|| key.ty.bottom());
        let fresh = delta.difference(state)?;
        if fresh.is_bottom() {
            return Ok(None);
        }
        state.merge(&fresh)?;
        Ok(Some(fresh))
    }

    /// Local read. With a type, an absent key reads as bottom; without one,
    /// the name must resolve to exactly one declared type.
    pub fn read(&self, name: &str, ty: Option<CrdtType>) -> Result<QueryResult, StoreError> {
        match ty {
            Some(ty) => {
                let key = StoreKey::new(name, ty);
                Ok(self.entries.get(&key).map_or_else(|| ty.bottom().value(), |s| s.value()))
            }
            None => {
                let ty = self
                    .types_of(name)
                    .next()
                    .ok_or_else(|| StoreError::NotFound(name.to_string()))?;
                Ok(self.entries[&StoreKey::new(name, ty)].value())
            }
        }
    }

    /// Canonical encoding of the whole store.
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.len_prefix(self.entries.len());
        for (k, v) in &self.entries {
            k.encode_into(&mut w);
            v.encode_into(&mut w);
        }
        w.into_bytes()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::new(bytes);
        let n = r.len_prefix(6)?;
        let mut entries = BTreeMap::new();
        for _ in 0..n {
            let k = StoreKey::decode_from(&mut r)?;
            let v = CrdtState::decode_from(&mut r)?;
            entries.insert(k, v);
        }
        r.finish()?;
        Ok(Self { entries })
    }

    /// One JSON object per key, in key order.
    pub fn dump_lines(&self) -> Vec<String> {
        self.dump_filtered(|_| true)
    }

    pub fn dump_filtered(&self, keep: impl Fn(&StoreKey) -> bool) -> Vec<String> {
        self.entries
            .iter()
            .filter(|(k, _)| keep(k))
            .map(|(k, v)| {
                serde_json::json!({
                    "key": k.name,
                    "type": k.ty.name(),
                    "value": v.value().to_json(),
                })
                .to_string()
            })
            .collect()
    }

    /// Canonical encoding restricted to keys accepted by `keep`.
    pub fn encode_filtered(&self, keep: impl Fn(&StoreKey) -> bool) -> Vec<u8> {
        let sub = Store {
            entries: self
                .entries
                .iter()
                .filter(|(k, _)| keep(k))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        };
        sub.encode()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    const A: NodeId = NodeId(1);
    const B: NodeId = NodeId(2);

    #[test]
    fn declare_is_idempotent() {
        let mut s = Store::new();
        let k = StoreKey::new("temp_sum", CrdtType::GCounter);
        assert!(s.declare(&k).unwrap());
        assert!(!s.declare(&k).unwrap());
        assert_eq!(s.len(), 1);
        assert_eq!(s.get(&k), Some(&CrdtType::GCounter.bottom()));
    }

    #[test]
    fn redeclare_with_other_type_fails() {
        let mut s = Store::new();
        s.declare(&StoreKey::new("k", CrdtType::GCounter)).unwrap();
        let err = s.declare(&StoreKey::new("k", CrdtType::GSet)).unwrap_err();
        assert!(matches!(err, StoreError::TypeConflict { .. }));
        assert_eq!(
            s.declare(&StoreKey::new("", CrdtType::GSet)).unwrap_err(),
            StoreError::EmptyName
        );
    }

    #[test]
    fn update_auto_declares() {
        let mut s = Store::new();
        let k = StoreKey::new("c", CrdtType::GCounter);
        let (v, _) = s.update(&k, &MutatorOp::Increment(4), A).unwrap();
        assert_eq!(v, QueryResult::Counter(4));
    }

    #[test]
    fn reads_of_absent_keys() {
        let s = Store::new();
        assert_eq!(s.read("x", Some(CrdtType::GCounter)).unwrap(), QueryResult::Counter(0));
        assert_eq!(
            s.read("x", Some(CrdtType::AWSet)).unwrap(),
            QueryResult::Set(BTreeSet::new())
        );
        assert_eq!(s.read("x", None).unwrap_err(), StoreError::NotFound("x".into()));
    }

    #[test]
    fn two_nodes_adding_converge_to_union() {
        let k = StoreKey::new("s", CrdtType::AWSet);
        let mut a = Store::new();
        let mut b = Store::new();
        let (_, da) = a.update(&k, &MutatorOp::Add(b"a".to_vec()), A).unwrap();
        let (_, db) = b.update(&k, &MutatorOp::Add(b"b".to_vec()), B).unwrap();
        assert!(a.join_remote(&k, &db).unwrap().is_some());
        assert!(b.join_remote(&k, &da).unwrap().is_some());
        assert!(b.join_remote(&k, &da).unwrap().is_none());
        assert_eq!(a, b);
        assert_eq!(
            a.read("s", None).unwrap(),
            QueryResult::Set([b"a".to_vec(), b"b".to_vec()].into())
        );
    }

    #[test]
    fn conflicting_remote_types_coexist() {
        let mut a = Store::new();
        a.declare(&StoreKey::new("k", CrdtType::GCounter)).unwrap();
        let (_, d) = Store::new()
            .update(&StoreKey::new("k", CrdtType::GSet), &MutatorOp::Add(b"e".to_vec()), B)
            .unwrap();
        assert!(a.join_remote(&StoreKey::new("k", CrdtType::GSet), &d).unwrap().is_some());
        assert_eq!(a.len(), 2);
    }

    #[test]
    fn encoding_round_trips() {
        let mut s = Store::new();
        s.update(&StoreKey::new("c", CrdtType::PNCounter), &MutatorOp::Decrement(3), A)
            .unwrap();
        s.update(&StoreKey::new("r", CrdtType::LWWRegister), &MutatorOp::Assign { value: b"v".to_vec(), clock: 4 }, A)
            .unwrap();
        assert_eq!(Store::decode(&s.encode()).unwrap(), s);
    }

    #[test]
    fn dump_is_json_lines() {
        let mut s = Store::new();
        s.update(&StoreKey::new("c", CrdtType::GCounter), &MutatorOp::Increment(2), A)
            .unwrap();
        assert_eq!(s.dump_lines(), vec![r#"{"key":"c","type":"gcounter","value":2}"#]);
    }
}
