//! Effects returned by the per-node protocol handlers.
//!
//! Handlers never perform I/O or arm real timers: they return an [`Outbox`]
//! that the driver (the simulator, or a transport) turns into deliveries and
//! timer events.

use crate::broadcast::MessageId;
use crate::crdt::NodeId;
use crate::wire::Message;

/// Simulated time in milliseconds.
pub type Millis = u64;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Timer {
    Heartbeat,
    Shuffle,
    AntiEntropy,
    Scheduler,
    JoinTimeout { attempt: u32 },
    Rejoin,
    NeighborTimeout(NodeId),
    GraftTimeout(MessageId),
    IHaveFlush,
    SenseTick(String),
}

impl Timer {
    pub fn name(&self) -> &'static str {
        match self {
            Timer::Heartbeat => "heartbeat",
            Timer::Shuffle => "shuffle",
            Timer::AntiEntropy => "anti_entropy",
            Timer::Scheduler => "scheduler",
            Timer::JoinTimeout { .. } => "join_timeout",
            Timer::Rejoin => "rejoin",
            Timer::NeighborTimeout(_) => "neighbor_timeout",
            Timer::GraftTimeout(_) => "graft_timeout",
            Timer::IHaveFlush => "ihave_flush",
            Timer::SenseTick(_) => "sense_tick",
        }
    }
}

/// Active-view changes reported by membership to the layers above it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViewChange {
    /// Peer entered the active view, or re-announced itself (floors reset).
    Up(NodeId),
    Down(NodeId),
}

/// Observable things a node did, for metrics and scenario assertions.
#[derive(Debug, Clone, PartialEq)]
pub enum NodeEvent {
    Delivered {
        id: MessageId,
        round: u32,
    },
    TaskExecuted {
        task: String,
    },
    TaskSkipped {
        task: String,
        reason: String,
    },
    MeanFlushed {
        task: String,
        window: u64,
        mean: f64,
        samples: Vec<f64>,
        propagated: bool,
    },
    PeerUp(NodeId),
    PeerDown(NodeId),
    JoinFailed,
    DecodeError(String),
}

#[derive(Debug, Default)]
pub struct Outbox {
    pub sends: Vec<(NodeId, Message)>,
    pub timers: Vec<(Millis, Timer)>,
    pub view: Vec<ViewChange>,
    pub events: Vec<NodeEvent>,
}

impl Outbox {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn send(&mut self, to: NodeId, msg: Message) {
        self.sends.push((to, msg));
    }

    pub fn timer(&mut self, after: Millis, timer: Timer) {
        self.timers.push((after, timer));
    }

    pub fn event(&mut self, ev: NodeEvent) {
        self.events.push(ev);
    }

    pub fn is_empty(&self) -> bool {
        self.sends.is_empty() && self.timers.is_empty() && self.view.is_empty() && self.events.is_empty()
    }

    pub fn extend(&mut self, other: Outbox) {
        self.sends.extend(other.sends);
        self.timers.extend(other.timers);
        self.view.extend(other.view);
        self.events.extend(other.events);
    }
}

/// Independent deterministic stream for one `(seed, domain...)` tuple.
pub fn derive_rng(seed: u64, domain: &[u64]) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    // FNV-1a over the domain words picks the ChaCha stream
    let stream = domain
        .iter()
        .fold(0xcbf2_9ce4_8422_2325_u64, |h, &w| (h ^ w).wrapping_mul(0x0000_0100_0000_01b3));
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
