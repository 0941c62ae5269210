//! Structured event records and the statistics derived from them.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::affinity::{DomainId, ServiceId};
use crate::membership::{registration_time, RegistrationObservation, RegistrationStats};
use crate::vote::Decision;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventKind {
    NodeStarted {
        replayed_entries: u64,
    },
    NodeCrashed,
    MemberUp {
        peer: DomainId,
    },
    MemberSuspect {
        peer: DomainId,
    },
    MemberDown {
        peer: DomainId,
    },
    JoinFailed {
        attempts: u32,
    },
    LeaderElected {
        term: u64,
    },
    ProposalCreated {
        proposal_id: String,
        service: ServiceId,
        source: DomainId,
        target: DomainId,
        q_score: f64,
        term: u64,
    },
    VoteCast {
        proposal_id: String,
        voter: DomainId,
        decision: Decision,
        p_lat: f64,
        i_local: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reason: Option<String>,
    },
    ProposalCommitted {
        proposal_id: String,
        service: ServiceId,
        source: DomainId,
        target: DomainId,
        term: u64,
        index: u64,
        positive: usize,
        negative: usize,
        abstain: usize,
    },
    ProposalRejected {
        proposal_id: String,
        service: ServiceId,
        target: DomainId,
        reason: String,
        positive: usize,
        negative: usize,
        abstain: usize,
    },
    MigrationExecuted {
        proposal_id: String,
        service: ServiceId,
        source: DomainId,
        target: DomainId,
        success: bool,
    },
    Rollback {
        proposal_id: String,
        service: ServiceId,
        restored_domain: DomainId,
    },
    CostSnapshot {
        cost: f64,
        applied_index: u64,
    },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::NodeStarted { .. } => "node_started",
            EventKind::NodeCrashed => "node_crashed",
            EventKind::MemberUp { .. } => "member_up",
            EventKind::MemberSuspect { .. } => "member_suspect",
            EventKind::MemberDown { .. } => "member_down",
            EventKind::JoinFailed { .. } => "join_failed",
            EventKind::LeaderElected { .. } => "leader_elected",
            EventKind::ProposalCreated { .. } => "proposal_created",
            EventKind::VoteCast { .. } => "vote_cast",
            EventKind::ProposalCommitted { .. } => "proposal_committed",
            EventKind::ProposalRejected { .. } => "proposal_rejected",
            EventKind::MigrationExecuted { .. } => "migration_executed",
            EventKind::Rollback { .. } => "rollback",
            EventKind::CostSnapshot { .. } => "cost_snapshot",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub time_ms: f64,
    pub node: DomainId,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VotingStats {
    /// `(proposal_id, proposal-to-commit delay in ms)` in creation order.
    pub durations: Vec<(String, f64)>,
    pub mean_ms: Option<f64>,
    pub stddev_ms: Option<f64>,
    /// Proposals created but never committed (rejected, abandoned or cut off).
    pub unmatched: Vec<String>,
}

/// Proposal-to-commit delay of every committed proposal.
pub fn voting_latency(events: &[EventRecord]) -> VotingStats {
    let mut created: Vec<(&str, f64)> = Vec::new();
    let mut committed: BTreeMap<&str, f64> = BTreeMap::new();
    for e in events {
        match &e.kind {
            EventKind::ProposalCreated { proposal_id, .. } => created.push((proposal_id, e.time_ms)),
            EventKind::ProposalCommitted { proposal_id, .. } => {
                committed.entry(proposal_id).or_insert(e.time_ms);
            }
            _ => {}
        }
    }
    let mut stats = VotingStats::default();
    for (id, t0) in created {
        match committed.get(id) {
            Some(t1) => stats.durations.push((id.to_owned(), t1 - t0)),
            None => stats.unmatched.push(id.to_owned()),
        }
    }
    let values: Vec<f64> = stats.durations.iter().map(|(_, d)| *d).collect();
    if !values.is_empty() {
        let (mean, sd) = mean_stddev(&values);
        stats.mean_ms = Some(mean);
        stats.stddev_ms = Some(sd);
    }
    stats
}

/// Population mean and standard deviation.
pub fn mean_stddev(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Registration statistics for every node start found in `events`.
pub fn registration_stats(events: &[EventRecord], members: &[DomainId]) -> Vec<RegistrationStats> {
    let observations: Vec<RegistrationObservation> = events
        .iter()
        .filter_map(|e| match &e.kind {
            EventKind::NodeStarted { .. } => Some(RegistrationObservation::Started {
                node: e.node.clone(),
                at_ms: e.time_ms,
            }),
            EventKind::MemberUp { peer } => Some(RegistrationObservation::MemberUp {
                observer: e.node.clone(),
                peer: peer.clone(),
                at_ms: e.time_ms,
            }),
            _ => None,
        })
        .collect();
    registration_time(&observations, members)
}
