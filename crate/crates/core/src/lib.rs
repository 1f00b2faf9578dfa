//! Replicated state and task execution for simulated IoT edge clusters.
//!
//! Nodes keep named delta-state CRDTs ([`store`]) in sync by anti-entropy
//! ([`replication`]) over a HyParView overlay ([`membership`]), spread
//! application messages along Plumtree broadcast trees ([`broadcast`]) and
//! discover work through a replicated task model ([`task`]). The [`sim`] module drives
//! whole clusters deterministically.

pub mod aggregation;
pub mod broadcast;
pub mod codec;
pub mod crdt;
pub mod membership;
pub mod node;
pub mod replication;
pub mod runtime;
pub mod sim;
pub mod store;
pub mod task;
pub mod wire;
