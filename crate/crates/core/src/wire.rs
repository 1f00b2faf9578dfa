//! Wire format shared by every protocol layer.
//!
//! Each message starts with a fixed 26-byte header:
//!
//! ```text
//! version:u8 | type:u8 | sender:u64 | start_seq:u64 | end_seq:u64
//! ```
//!
//! The sequence range is only meaningful for replication messages
//! (`DeltaGroup` uses both ends, `FullState`/`Ack` use `end_seq`) and is zero
//! otherwise. The body follows, encoded with the canonical CRDT encoding.

use std::fmt;

use crate::broadcast::MessageId;
use crate::codec::{CodecError, Reader, Writer};
use crate::crdt::{CrdtState, Delta, NodeId};
use crate::store::StoreKey;

pub const WIRE_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 26;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    DeltaGroup {
        start_seq: u64,
        end_seq: u64,
        items: Vec<(StoreKey, Delta)>,
    },
    FullState {
        seq: u64,
        items: Vec<(StoreKey, CrdtState)>,
    },
    Ack {
        seq: u64,
    },
    Join,
    ForwardJoin {
        joiner: NodeId,
        ttl: u32,
    },
    Neighbor {
        high_priority: bool,
    },
    NeighborAccept,
    NeighborReject,
    Disconnect,
    Shuffle {
        origin: NodeId,
        ttl: u32,
        nodes: Vec<NodeId>,
    },
    ShuffleReply {
        nodes: Vec<NodeId>,
    },
    Heartbeat,
    Gossip {
        id: MessageId,
        round: u32,
        payload: Vec<u8>,
    },
    IHave {
        ids: Vec<MessageId>,
    },
    Graft {
        id: MessageId,
    },
    Prune,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MessageKind {
    DeltaGroup,
    FullState,
    Ack,
    Join,
    ForwardJoin,
    Neighbor,
    NeighborAccept,
    NeighborReject,
    Disconnect,
    Shuffle,
    ShuffleReply,
    Heartbeat,
    Gossip,
    IHave,
    Graft,
    Prune,
}

impl MessageKind {
    pub const ALL: [MessageKind; 16] = [
        MessageKind::DeltaGroup,
        MessageKind::FullState,
        MessageKind::Ack,
        MessageKind::Join,
        MessageKind::ForwardJoin,
        MessageKind::Neighbor,
        MessageKind::NeighborAccept,
        MessageKind::NeighborReject,
        MessageKind::Disconnect,
        MessageKind::Shuffle,
        MessageKind::ShuffleReply,
        MessageKind::Heartbeat,
        MessageKind::Gossip,
        MessageKind::IHave,
        MessageKind::Graft,
        MessageKind::Prune,
    ];

    pub fn code(self) -> u8 {
        match self {
            MessageKind::DeltaGroup => 0x01,
            MessageKind::FullState => 0x02,
            MessageKind::Ack => 0x03,
            MessageKind::Join => 0x10,
            MessageKind::ForwardJoin => 0x11,
            MessageKind::Neighbor => 0x12,
            MessageKind::NeighborAccept => 0x13,
            MessageKind::NeighborReject => 0x14,
            MessageKind::Disconnect => 0x15,
            MessageKind::Shuffle => 0x16,
            MessageKind::ShuffleReply => 0x17,
            MessageKind::Heartbeat => 0x18,
            MessageKind::Gossip => 0x20,
            MessageKind::IHave => 0x21,
            MessageKind::Graft => 0x22,
            MessageKind::Prune => 0x23,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.code() == code)
    }

    pub fn name(self) -> &'static str {
        match self {
            MessageKind::DeltaGroup => "delta_group",
            MessageKind::FullState => "full_state",
            MessageKind::Ack => "ack",
            MessageKind::Join => "join",
            MessageKind::ForwardJoin => "forward_join",
            MessageKind::Neighbor => "neighbor",
            MessageKind::NeighborAccept => "neighbor_accept",
            MessageKind::NeighborReject => "neighbor_reject",
            MessageKind::Disconnect => "disconnect",
            MessageKind::Shuffle => "shuffle",
            MessageKind::ShuffleReply => "shuffle_reply",
            MessageKind::Heartbeat => "heartbeat",
            MessageKind::Gossip => "gossip",
            MessageKind::IHave => "ihave",
            MessageKind::Graft => "graft",
            MessageKind::Prune => "prune",
        }
    }

    pub fn is_replication(self) -> bool {
        matches!(
            self,
            MessageKind::DeltaGroup | MessageKind::FullState | MessageKind::Ack
        )
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Message {
    pub fn kind(&self) -> MessageKind {
        match self {
            Message::DeltaGroup { .. } => MessageKind::DeltaGroup,
            Message::FullState { .. } => MessageKind::FullState,
            Message::Ack { .. } => MessageKind::Ack,
            Message::Join => MessageKind::Join,
            Message::ForwardJoin { .. } => MessageKind::ForwardJoin,
            Message::Neighbor { .. } => MessageKind::Neighbor,
            Message::NeighborAccept => MessageKind::NeighborAccept,
            Message::NeighborReject => MessageKind::NeighborReject,
            Message::Disconnect => MessageKind::Disconnect,
            Message::Shuffle { .. } => MessageKind::Shuffle,
            Message::ShuffleReply { .. } => MessageKind::ShuffleReply,
            Message::Heartbeat => MessageKind::Heartbeat,
            Message::Gossip { .. } => MessageKind::Gossip,
            Message::IHave { .. } => MessageKind::IHave,
            Message::Graft { .. } => MessageKind::Graft,
            Message::Prune => MessageKind::Prune,
        }
    }

    fn seq_range(&self) -> (u64, u64) {
        match self {
            Message::DeltaGroup {
                start_seq, end_seq, ..
            } => (*start_seq, *end_seq),
            Message::FullState { seq, .. } | Message::Ack { seq } => (0, *seq),
            _ => (0, 0),
        }
    }

    /// Encodes with the fixed header.
    pub fn encode(&self, sender: NodeId) -> Vec<u8> {
        let (start, end) = self.seq_range();
        let mut w = Writer::with_capacity(64);
        w.u8(WIRE_VERSION)
            .u8(self.kind().code())
            .u64(sender.raw())
            .u64(start)
            .u64(end);
        match self {
            Message::DeltaGroup { items, .. } | Message::FullState { items, .. } => {
                w.len_prefix(items.len());
                for (k, s) in items {
                    k.encode_into(&mut w);
                    s.encode_into(&mut w);
                }
            }
            Message::ForwardJoin { joiner, ttl } => {
                w.u64(joiner.raw()).u32(*ttl);
            }
            Message::Neighbor { high_priority } => {
                w.u8(u8::from(*high_priority));
            }
            Message::Shuffle { origin, ttl, nodes } => {
                w.u64(origin.raw()).u32(*ttl);
                encode_nodes(nodes, &mut w);
            }
            Message::ShuffleReply { nodes } => encode_nodes(nodes, &mut w),
            Message::Gossip { id, round, payload } => {
                encode_id(id, &mut w);
                w.u32(*round).bytes(payload);
            }
            Message::IHave { ids } => {
                w.len_prefix(ids.len());
                for id in ids {
                    encode_id(id, &mut w);
                }
            }
            Message::Graft { id } => encode_id(id, &mut w),
            Message::Ack { .. }
            | Message::Join
            | Message::NeighborAccept
            | Message::NeighborReject
            | Message::Disconnect
            | Message::Heartbeat
            | Message::Prune => {}
        }
        w.into_bytes()
    }

    /// Decodes a full frame into `(sender, message)`.
    pub fn decode(bytes: &[u8]) -> Result<(NodeId, Message), CodecError> {
        let mut r = Reader::new(bytes);
        let version = r.u8()?;
        if version != WIRE_VERSION {
            return Err(CodecError::Version(version));
        }
        let code = r.u8()?;
        let kind = MessageKind::from_code(code).ok_or(CodecError::InvalidTag {
            what: "message",
            tag: code,
        })?;
        let sender = NodeId(r.u64()?);
        let start = r.u64()?;
        let end = r.u64()?;
        let msg = match kind {
            MessageKind::DeltaGroup => Message::DeltaGroup {
                start_seq: start,
                end_seq: end,
                items: decode_items(&mut r)?,
            },
            MessageKind::FullState => Message::FullState {
                seq: end,
                items: decode_items(&mut r)?,
            },
            MessageKind::Ack => Message::Ack { seq: end },
            MessageKind::Join => Message::Join,
            MessageKind::ForwardJoin => Message::ForwardJoin {
                joiner: NodeId(r.u64()?),
                ttl: r.u32()?,
            },
            MessageKind::Neighbor => Message::Neighbor {
                high_priority: match r.u8()? {
                    0 => false,
                    1 => true,
                    tag => return Err(CodecError::InvalidTag { what: "priority", tag }),
                },
            },
            MessageKind::NeighborAccept => Message::NeighborAccept,
            MessageKind::NeighborReject => Message::NeighborReject,
            MessageKind::Disconnect => Message::Disconnect,
            MessageKind::Shuffle => Message::Shuffle {
                origin: NodeId(r.u64()?),
                ttl: r.u32()?,
                nodes: decode_nodes(&mut r)?,
            },
            MessageKind::ShuffleReply => Message::ShuffleReply {
                nodes: decode_nodes(&mut r)?,
            },
            MessageKind::Heartbeat => Message::Heartbeat,
            MessageKind::Gossip => Message::Gossip {
                id: decode_id(&mut r)?,
                round: r.u32()?,
                payload: r.bytes()?,
            },
            MessageKind::IHave => {
                let n = r.len_prefix(16)?;
                let mut ids = Vec::with_capacity(n);
                for _ in 0..n {
                    ids.push(decode_id(&mut r)?);
                }
                Message::IHave { ids }
            }
            MessageKind::Graft => Message::Graft {
                id: decode_id(&mut r)?,
            },
            MessageKind::Prune => Message::Prune,
        };
        r.finish()?;
        Ok((sender, msg))
    }
}

fn encode_nodes(nodes: &[NodeId], w: &mut Writer) {
    w.len_prefix(nodes.len());
    for n in nodes {
        w.u64(n.raw());
    }
}

fn decode_nodes(r: &mut Reader<'_>) -> Result<Vec<NodeId>, CodecError> {
    let n = r.len_prefix(8)?;
    (0..n).map(|_| r.u64().map(NodeId)).collect()
}

fn encode_id(id: &MessageId, w: &mut Writer) {
    w.u64(id.origin.raw()).u64(id.seq);
}

fn decode_id(r: &mut Reader<'_>) -> Result<MessageId, CodecError> {
    Ok(MessageId {
        origin: NodeId(r.u64()?),
        seq: r.u64()?,
    })
}

fn decode_items(r: &mut Reader<'_>) -> Result<Vec<(StoreKey, CrdtState)>, CodecError> {
    let n = r.len_prefix(6)?;
    let mut items = Vec::with_capacity(n);
    for _ in 0..n {
        let k = StoreKey::decode_from(r)?;
        let s = CrdtState::decode_from(r)?;
        if s.crdt_type() != k.ty {
            return Err(CodecError::Invalid(format!(
                "item {} carries a {} state",
                k,
                s.crdt_type()
            )));
        }
        items.push((k, s));
    }
    Ok(items)
}
