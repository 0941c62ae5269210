//! Decentralized microservice placement across a compute continuum.
//!
//! Every computational domain runs a Local Domain Manager (LDM). The current
//! Raft leader scans the affinity graph for a service whose co-location gain
//! outweighs the latency of moving it, broadcasts a migration proposal, and
//! the other LDMs vote using a local cost-benefit rule. Approved migrations
//! are committed through the replicated log and applied by every node.
//!
//! The crate is organised bottom-up:
//!
//! - [`affinity`]: affinity graph, placement, cross-domain cost and an exact oracle
//! - [`proposal`]: leader-side candidate scoring
//! - [`vote`]: follower-side voting rule
//! - [`raft`]: crash-fault-tolerant consensus state machine
//! - [`membership`]: gossip discovery, failure detection and latency probing
//! - [`event`]: structured event records and derived statistics
//! - [`node`]: the LDM composing all of the above
//! - [`sim`]: deterministic discrete-event harness, scenarios and sweeps

pub mod affinity;
pub mod error;
pub mod event;
pub mod membership;
pub mod node;
pub mod proposal;
pub mod raft;
pub mod rng;
pub mod sim;
pub mod time;
pub mod vote;

pub use affinity::{AffinityGraph, DomainId, LatencyMatrix, Placement, ServiceId, ServiceRecord};
pub use error::{Error, Result};
pub use time::SimTime;
