//! Canonical binary encoding.
//!
//! Layout: one type tag byte followed by the body. Integers are big-endian,
//! byte strings and collections are `u32` length-prefixed, and every
//! collection is written in ascending key order, so equal (normalized)
//! states always encode to identical bytes.

use std::collections::{BTreeMap, BTreeSet};

use super::{
    AWSet, CausalContext, CrdtState, CrdtType, Dot, GCounter, GSet, LWWRegister, NodeId, PNCounter,
};
use crate::codec::{CodecError, Reader, Writer};

impl CrdtState {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.encode_into(&mut w);
        w.into_bytes()
    }

    pub fn encode_into(&self, w: &mut Writer) {
        w.u8(self.crdt_type().tag());
        match self {
            CrdtState::GCounter(c) => encode_gcounter(c, w),
            CrdtState::PNCounter(c) => {
                encode_gcounter(c.increments(), w);
                encode_gcounter(c.decrements(), w);
            }
            CrdtState::GSet(s) => {
                w.len_prefix(s.elements().len());
                for e in s.elements() {
                    w.bytes(e);
                }
            }
            CrdtState::AWSet(s) => {
                w.len_prefix(s.entries().len());
                for (e, dots) in s.entries() {
                    w.bytes(e);
                    encode_dots(dots, w);
                }
                encode_context(s.context(), w);
            }
            CrdtState::LWWRegister(r) => {
                w.u64(r.timestamp()).u64(r.writer().raw()).bytes(r.value());
            }
        }
    }

    pub fn encoded_len(&self) -> usize {
        self.encode().len()
    }

    /// Decodes a complete buffer; trailing bytes are an error.
    pub fn decode(bytes: &[u8]) -> Result<CrdtState, CodecError> {
        let mut r = Reader::new(bytes);
        let s = Self::decode_from(&mut r)?;
        r.finish()?;
        Ok(s)
    }

    pub fn decode_from(r: &mut Reader<'_>) -> Result<CrdtState, CodecError> {
        let tag = r.u8()?;
        let ty = CrdtType::from_tag(tag).ok_or(CodecError::InvalidTag { what: "crdt", tag })?;
        Ok(match ty {
            CrdtType::GCounter => CrdtState::GCounter(decode_gcounter(r)?),
            CrdtType::PNCounter => {
                let inc = decode_gcounter(r)?;
                let dec = decode_gcounter(r)?;
                CrdtState::PNCounter(PNCounter::from_parts(inc, dec))
            }
            CrdtType::GSet => {
                let n = r.len_prefix(4)?;
                let mut s = BTreeSet::new();
                for _ in 0..n {
                    s.insert(r.bytes()?);
                }
                CrdtState::GSet(s.into_iter().collect::<GSet>())
            }
            CrdtType::AWSet => {
                let n = r.len_prefix(8)?;
                let mut entries = BTreeMap::new();
                for _ in 0..n {
                    let e = r.bytes()?;
                    let dots = decode_dots(r)?;
                    entries.insert(e, dots);
                }
                let ctx = decode_context(r)?;
                let s = AWSet::from_parts(entries, ctx);
                if !s.is_well_formed() {
                    return Err(CodecError::Invalid("awset dot outside causal context".into()));
                }
                CrdtState::AWSet(s)
            }
            CrdtType::LWWRegister => {
                let ts = r.u64()?;
                let writer = NodeId(r.u64()?);
                let value = r.bytes()?;
                CrdtState::LWWRegister(LWWRegister::with(value, ts, writer))
            }
        })
    }
}

fn encode_gcounter(c: &GCounter, w: &mut Writer) {
    w.len_prefix(c.entries().len());
    for (n, v) in c.entries() {
        w.u64(n.raw()).u64(*v);
    }
}

fn decode_gcounter(r: &mut Reader<'_>) -> Result<GCounter, CodecError> {
    let n = r.len_prefix(16)?;
    let mut entries = Vec::with_capacity(n);
    for _ in 0..n {
        entries.push((NodeId(r.u64()?), r.u64()?));
    }
    Ok(GCounter::from_entries(entries))
}

fn encode_dots(dots: &BTreeSet<Dot>, w: &mut Writer) {
    w.len_prefix(dots.len());
    for d in dots {
        w.u64(d.origin.raw()).u64(d.counter);
    }
}

fn decode_dots(r: &mut Reader<'_>) -> Result<BTreeSet<Dot>, CodecError> {
    let n = r.len_prefix(16)?;
    let mut dots = BTreeSet::new();
    for _ in 0..n {
        let origin = NodeId(r.u64()?);
        let counter = r.u64()?;
        if counter == 0 {
            return Err(CodecError::Invalid("dot counter must be >= 1".into()));
        }
        dots.insert(Dot::new(origin, counter));
    }
    Ok(dots)
}

fn encode_context(cc: &CausalContext, w: &mut Writer) {
    w.len_prefix(cc.compact_entries().len());
    for (n, max) in cc.compact_entries() {
        w.u64(n.raw()).u64(*max);
    }
    encode_dots(cc.cloud(), w);
}

fn decode_context(r: &mut Reader<'_>) -> Result<CausalContext, CodecError> {
    let n = r.len_prefix(16)?;
    let mut compact = BTreeMap::new();
    for _ in 0..n {
        let origin = NodeId(r.u64()?);
        let max = r.u64()?;
        compact.insert(origin, max);
    }
    let cloud = decode_dots(r)?;
    Ok(CausalContext::from_parts(compact, cloud))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crdt::MutatorOp;

    #[test]
    fn equal_states_encode_identically_regardless_of_history() {
        let a = NodeId(1);
        let b = NodeId(2);
        let mut x = CrdtType::AWSet.bottom();
        let mut y = CrdtType::AWSet.bottom();
        let dx = x.apply(&MutatorOp::Add(b"p".to_vec()), a).unwrap();
        let dy = y.apply(&MutatorOp::Add(b"q".to_vec()), b).unwrap();
        x.merge(&dy).unwrap();
        y.merge(&dx).unwrap();
        assert_eq!(x, y);
        assert_eq!(x.encode(), y.encode());
    }

    #[test]
    fn gcounter_layout() {
        let s = CrdtState::GCounter(GCounter::from_entries([(NodeId(7), 3)]));
        let mut expected = vec![1, 0, 0, 0, 1];
        expected.extend_from_slice(&7u64.to_be_bytes());
        expected.extend_from_slice(&3u64.to_be_bytes());
        assert_eq!(s.encode(), expected);
    }

    #[test]
    fn decode_rejects_bad_tag_and_truncation() {
        assert!(matches!(
            CrdtState::decode(&[9]),
            Err(CodecError::InvalidTag { .. })
        ));
        let enc = CrdtState::GCounter(GCounter::from_entries([(NodeId(7), 3)])).encode();
        assert!(CrdtState::decode(&enc[..enc.len() - 1]).is_err());
    }

    #[test]
    fn decode_rejects_dangling_dot() {
        // entry dot (1,5) with an empty context
        let mut w = Writer::new();
        w.u8(CrdtType::AWSet.tag()).u32(1).bytes(b"x").u32(1).u64(1).u64(5).u32(0).u32(0);
        assert!(CrdtState::decode(&w.into_bytes()).is_err());
    }
}
