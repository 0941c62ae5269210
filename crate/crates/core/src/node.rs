//! The Local Domain Manager: one node composing consensus, membership,
//! proposal and voting into a single event-driven state machine.
//!
//! A node owns four stores:
//!
//! - the domain state store: the placement view derived from the initial
//!   placement plus every applied log entry,
//! - the peer domain store: gossip membership and the latency view,
//! - the migration state store: the in-flight migration and rollback
//!   checkpoints,
//! - the event log: an append-only list of structured events.
//!
//! Only the Raft persistent state survives a crash.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::affinity::{
    apply_migration, total_cross_domain_cost, AffinityGraph, DomainId, LatencyMatrix, Placement, ServiceCatalog, ServiceId,
};
use crate::error::{Error, Result};
use crate::event::EventKind;
use crate::membership::{GossipConfig, GossipMessage, Membership, MembershipEvent};
use crate::proposal::{qualifying_candidates, MigrationProposal, ProposalParams};
use crate::raft::{LogEntry, Payload, PersistentState, QuorumTally, RaftConfig, RaftMessage, RaftNode};
use crate::rng::{self, unit_hash, SimRng};
use crate::time::SimTime;
use crate::vote::{evaluate_proposal, Decision, ImpactHistory, Vote, VoteParams};

/// Tunable protocol parameters, as found under `params` in a scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    pub gamma_proposal: f64,
    pub theta_proposal: f64,
    pub gamma_vote: f64,
    pub theta_vote: f64,
    pub epsilon: f64,
    pub proposals_per_term: u32,
    pub optimize_interval_ms: f64,
    pub rejection_cooldown_ticks: u64,
    /// Vote deadline as a multiple of the largest known link latency.
    pub vote_deadline_factor: f64,
    /// Probability that a committed migration fails to execute.
    pub execution_failure_rate: f64,
    /// Serialization cost per message on the sender's egress, in ms.
    pub send_overhead_ms: f64,
    pub gossip: GossipConfig,
    pub raft: RaftConfig,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            gamma_proposal: 1.0,
            theta_proposal: 0.0,
            gamma_vote: 0.25,
            theta_vote: 0.3,
            epsilon: 1e-9,
            proposals_per_term: 1,
            optimize_interval_ms: 100.0,
            rejection_cooldown_ticks: 5,
            vote_deadline_factor: 10.0,
            execution_failure_rate: 0.0,
            send_overhead_ms: 0.2,
            gossip: GossipConfig::default(),
            raft: RaftConfig::default(),
        }
    }
}

impl Params {
    pub fn proposal(&self) -> Result<ProposalParams> {
        ProposalParams::new(self.gamma_proposal, self.theta_proposal).map_err(|e| Error::validation("params.gamma_proposal", e.to_string()))
    }

    pub fn vote(&self) -> Result<VoteParams> {
        VoteParams::new(self.gamma_vote, self.theta_vote, self.epsilon).map_err(|e| Error::validation("params.gamma_vote", e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.proposal()?;
        self.vote()?;
        if self.proposals_per_term < 1 {
            return Err(Error::validation("params.proposals_per_term", "must be at least 1"));
        }
        if !(self.optimize_interval_ms > 0.0 && self.optimize_interval_ms.is_finite()) {
            return Err(Error::validation("params.optimize_interval_ms", "must be positive"));
        }
        if !(self.vote_deadline_factor > 0.0 && self.vote_deadline_factor.is_finite()) {
            return Err(Error::validation("params.vote_deadline_factor", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.execution_failure_rate) {
            return Err(Error::validation("params.execution_failure_rate", "must lie in [0, 1]"));
        }
        if !(self.send_overhead_ms >= 0.0 && self.send_overhead_ms.is_finite()) {
            return Err(Error::validation("params.send_overhead_ms", "must be non-negative"));
        }
        self.gossip.validate()?;
        self.raft.validate()
    }
}

/// Cluster-wide configuration every node boots with.
#[derive(Clone, Debug)]
pub struct ClusterSetup {
    pub members: Vec<DomainId>,
    pub graph: AffinityGraph,
    pub services: ServiceCatalog,
    pub initial_placement: Placement,
    /// Configured link latencies; the starting point of every latency view.
    pub latency_prior: LatencyMatrix,
    pub capacities: BTreeMap<DomainId, usize>,
    pub params: Params,
    pub proposal_params: ProposalParams,
    pub vote_params: VoteParams,
    pub seeds: Vec<DomainId>,
    pub rng_seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Message {
    Raft(RaftMessage),
    Gossip(GossipMessage),
    /// `base_index` is the leader's applied index the proposal was scored
    /// against; voters wait until they have applied as much.
    Propose { proposal: MigrationProposal, base_index: u64 },
    VoteReply(Vote),
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Timer {
    Raft,
    Gossip,
    Ping,
    Optimize,
    VoteDeadline(String),
    JoinRetry,
}

#[derive(Debug, Default)]
pub struct Outbox {
    pub messages: Vec<(DomainId, Message)>,
    pub timers: Vec<(SimTime, Timer)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Proposed,
    Voting,
    Committed,
    Executing,
    Done,
    RolledBack,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InFlight {
    pub proposal: MigrationProposal,
    pub phase: Phase,
}

/// Undo record for an executed migration.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub service: ServiceId,
    pub source: DomainId,
    pub target: DomainId,
    pub failed: bool,
}

#[derive(Clone, Debug)]
struct VoteRound {
    proposal: MigrationProposal,
    tally: QuorumTally,
    responders: BTreeSet<DomainId>,
}

pub struct Ldm {
    setup: Arc<ClusterSetup>,
    id: DomainId,
    rng: SimRng,
    raft: RaftNode,
    membership: Membership,
    // Domain state store.
    placement: Placement,
    // Peer domain store latency view, rebuilt lazily from probes.
    latency_view: LatencyMatrix,
    latency_dirty: bool,
    // Migration state store.
    in_flight: Option<InFlight>,
    checkpoints: BTreeMap<String, Checkpoint>,
    pending_rollback: Option<String>,
    // Event log.
    events: Vec<(SimTime, EventKind)>,
    // Voting.
    impact_history: ImpactHistory,
    cast_votes: BTreeMap<String, Vote>,
    deferred: Option<(DomainId, MigrationProposal, u64)>,
    round: Option<VoteRound>,
    // Leader bookkeeping.
    was_leader_in: Option<u64>,
    proposals_this_term: u32,
    proposal_seq: u64,
    rollback_proposed: Option<String>,
    opt_ticks: u64,
    cooldown: BTreeMap<(ServiceId, DomainId), u64>,
    raft_timer_at: SimTime,
    replaying: bool,
}

impl Ldm {
    /// Boots a node. With `persisted`, the Raft state is recovered and the
    /// committed prefix replayed onto the initial placement.
    pub fn start(setup: Arc<ClusterSetup>, id: DomainId, boot: u32, persisted: Option<PersistentState>, now: SimTime) -> Result<(Self, Outbox)> {
        let index = setup
            .members
            .iter()
            .position(|m| *m == id)
            .ok_or_else(|| Error::InvalidArgument(format!("{id} is not a cluster member")))?;
        let mut rng = rng::node_stream(setup.rng_seed, index, boot);
        let raft_config = setup.params.raft;
        let raft = match persisted {
            Some(state) => RaftNode::recover_from_log(id.clone(), setup.members.clone(), raft_config, state, now, &mut rng)?,
            None => RaftNode::new(id.clone(), setup.members.clone(), raft_config, now, &mut rng),
        };
        let gossip = GossipConfig {
            seeds: setup.seeds.clone(),
            ..setup.params.gossip.clone()
        };
        let mut node = Self {
            placement: setup.initial_placement.clone(),
            latency_view: setup.latency_prior.clone(),
            id: id.clone(),
            rng,
            raft,
            membership: Membership::new(id, gossip),
            latency_dirty: false,
            in_flight: None,
            checkpoints: BTreeMap::new(),
            pending_rollback: None,
            events: Vec::new(),
            impact_history: ImpactHistory::default(),
            cast_votes: BTreeMap::new(),
            deferred: None,
            round: None,
            was_leader_in: None,
            proposals_this_term: 0,
            proposal_seq: 0,
            rollback_proposed: None,
            opt_ticks: 0,
            cooldown: BTreeMap::new(),
            raft_timer_at: SimTime::MAX,
            replaying: false,
            setup,
        };
        let mut out = Outbox::default();
        node.replaying = true;
        let replayed = node.apply_committed(now);
        node.replaying = false;
        node.log(now, EventKind::NodeStarted { replayed_entries: replayed });

        let mut gossip_out = Vec::new();
        node.membership.join(&mut gossip_out);
        node.ship_gossip(gossip_out, &mut out);
        if !node.membership.is_joined() {
            out.timers.push((now.plus_ms(node.membership.config().join_retry_ms), Timer::JoinRetry));
        }
        let cfg = node.membership.config().clone();
        let gossip_phase = node.rng.random_range(0.0..cfg.round_interval_ms);
        out.timers.push((now.plus_ms(gossip_phase), Timer::Gossip));
        out.timers.push((now.plus_ms(cfg.ping_interval_ms), Timer::Ping));
        out.timers.push((now.plus_ms(node.setup.params.optimize_interval_ms), Timer::Optimize));
        node.after(now, &mut out);
        Ok((node, out))
    }

    pub fn id(&self) -> &DomainId {
        &self.id
    }

    pub fn raft(&self) -> &RaftNode {
        &self.raft
    }

    pub fn membership(&self) -> &Membership {
        &self.membership
    }

    pub fn placement(&self) -> &Placement {
        &self.placement
    }

    pub fn persistent(&self) -> &PersistentState {
        self.raft.persistent()
    }

    pub fn is_leader(&self) -> bool {
        self.raft.is_leader()
    }

    pub fn migration_state(&self) -> Option<&InFlight> {
        self.in_flight.as_ref()
    }

    pub fn checkpoints(&self) -> &BTreeMap<String, Checkpoint> {
        &self.checkpoints
    }

    pub fn has_open_round(&self) -> bool {
        self.round.is_some()
    }

    /// Removes and returns the events logged since the previous call.
    pub fn drain_events(&mut self) -> Vec<(SimTime, EventKind)> {
        std::mem::take(&mut self.events)
    }

    /// Latency view: configured prior overridden by probe measurements.
    /// When both ends measured a link the two values are averaged.
    pub fn latency_view(&mut self) -> &LatencyMatrix {
        if self.latency_dirty {
            self.rebuild_latency_view();
        }
        &self.latency_view
    }

    fn rebuild_latency_view(&mut self) {
        let mut probes: BTreeMap<&DomainId, BTreeMap<&DomainId, f64>> = BTreeMap::new();
        probes.insert(&self.id, self.membership.probes().iter().map(|(d, v)| (d, *v)).collect());
        for peer in self.membership.peers() {
            probes.insert(peer.domain(), peer.digest.probes.iter().map(|(d, v)| (d, *v)).collect());
        }
        let mut view = self.setup.latency_prior.clone();
        let prior: Vec<(DomainId, DomainId)> = self.setup.latency_prior.links().map(|(a, b, _)| (a.clone(), b.clone())).collect();
        for (a, b) in prior {
            let ab = probes.get(&a).and_then(|m| m.get(&b)).copied();
            let ba = probes.get(&b).and_then(|m| m.get(&a)).copied();
            let measured = match (ab, ba) {
                (Some(x), Some(y)) => Some((x + y) / 2.0),
                (x, y) => x.or(y),
            };
            if let Some(ms) = measured {
                // Both endpoints are distinct and the value is finite.
                let _ = view.set(&a, &b, ms);
            }
        }
        self.latency_view = view;
        self.latency_dirty = false;
    }

    fn log(&mut self, now: SimTime, kind: EventKind) {
        self.events.push((now, kind));
    }

    fn ship_raft(out: &mut Outbox, msgs: Vec<(DomainId, RaftMessage)>) {
        out.messages.extend(msgs.into_iter().map(|(to, m)| (to, Message::Raft(m))));
    }

    fn ship_gossip(&self, msgs: Vec<(DomainId, GossipMessage)>, out: &mut Outbox) {
        out.messages.extend(msgs.into_iter().map(|(to, m)| (to, Message::Gossip(m))));
    }

    fn absorb_membership(&mut self, now: SimTime, events: Vec<MembershipEvent>) {
        for e in events {
            let kind = match e {
                MembershipEvent::MemberUp(peer) => EventKind::MemberUp { peer },
                MembershipEvent::Suspect(peer) => EventKind::MemberSuspect { peer },
                MembershipEvent::Down(peer) => EventKind::MemberDown { peer },
                MembershipEvent::JoinFailed { attempts } => EventKind::JoinFailed { attempts },
                MembershipEvent::LatencyMeasured { .. } => {
                    self.latency_dirty = true;
                    continue;
                }
            };
            self.log(now, kind);
        }
    }

    pub fn on_timer(&mut self, now: SimTime, timer: Timer, out: &mut Outbox) {
        match timer {
            Timer::Raft => {
                if now != self.raft_timer_at {
                    return;
                }
                self.raft_timer_at = SimTime::MAX;
                let mut msgs = Vec::new();
                self.raft.tick(now, &mut self.rng, &mut msgs);
                Self::ship_raft(out, msgs);
            }
            Timer::Gossip => {
                let mut msgs = Vec::new();
                let mut events = Vec::new();
                self.membership.gossip_round(now, &mut self.rng, &mut msgs, &mut events);
                self.ship_gossip(msgs, out);
                self.absorb_membership(now, events);
                out.timers.push((now.plus_ms(self.membership.config().round_interval_ms), Timer::Gossip));
            }
            Timer::Ping => {
                let mut msgs = Vec::new();
                self.membership.measure_latency(now, &mut msgs);
                self.ship_gossip(msgs, out);
                out.timers.push((now.plus_ms(self.membership.config().ping_interval_ms), Timer::Ping));
            }
            Timer::JoinRetry => {
                let mut msgs = Vec::new();
                let mut events = Vec::new();
                if let Some(delay) = self.membership.retry_join(&mut msgs, &mut events) {
                    out.timers.push((now.plus_ms(delay), Timer::JoinRetry));
                }
                self.ship_gossip(msgs, out);
                self.absorb_membership(now, events);
            }
            Timer::Optimize => {
                self.opt_ticks += 1;
                self.optimization_tick(now, out);
                out.timers.push((now.plus_ms(self.setup.params.optimize_interval_ms), Timer::Optimize));
            }
            Timer::VoteDeadline(id) => {
                if self.round.as_ref().is_some_and(|r| r.proposal.proposal_id == id) {
                    self.reject_round(now, "vote deadline passed");
                }
            }
        }
        self.after(now, out);
    }

    pub fn on_message(&mut self, now: SimTime, from: &DomainId, msg: Message, out: &mut Outbox) {
        match msg {
            Message::Raft(m) => {
                let mut msgs = Vec::new();
                self.raft.handle(now, from, m, &mut self.rng, &mut msgs);
                Self::ship_raft(out, msgs);
            }
            Message::Gossip(m) => {
                let mut msgs = Vec::new();
                let mut events = Vec::new();
                if matches!(m, GossipMessage::Digest { .. } | GossipMessage::Join { .. }) {
                    self.latency_dirty = true;
                }
                self.membership.handle(now, from, m, &mut msgs, &mut events);
                self.ship_gossip(msgs, out);
                self.absorb_membership(now, events);
            }
            Message::Propose { proposal, base_index } => self.handle_proposal(now, from, proposal, base_index, out),
            Message::VoteReply(vote) => self.handle_vote(from, vote),
        }
        self.after(now, out);
    }

    /// Housekeeping after every input: apply commits, track leadership,
    /// close decided rounds and keep the Raft timer armed.
    fn after(&mut self, now: SimTime, out: &mut Outbox) {
        self.apply_committed(now);

        let term = self.raft.term();
        if self.raft.is_leader() {
            if self.was_leader_in != Some(term) {
                self.was_leader_in = Some(term);
                self.proposals_this_term = 0;
                self.rollback_proposed = None;
                self.log(now, EventKind::LeaderElected { term });
                self.snapshot_cost(now);
            }
        } else {
            self.was_leader_in = None;
        }
        if let Some(round) = &self.round {
            if !self.raft.is_leader() || round.proposal.term != term {
                self.reject_round(now, "leadership lost");
            }
        }
        self.close_round(now, out);
        self.maybe_propose_rollback(out);
        self.retry_deferred(now, out);

        let deadline = self.raft.next_deadline();
        if deadline < self.raft_timer_at {
            self.raft_timer_at = deadline;
            out.timers.push((deadline, Timer::Raft));
        }
    }

    fn snapshot_cost(&mut self, now: SimTime) {
        if let Ok(cost) = total_cross_domain_cost(&self.setup.graph, &self.placement) {
            let applied_index = self.raft.last_applied();
            self.log(now, EventKind::CostSnapshot { cost, applied_index });
        }
    }

    fn apply_committed(&mut self, now: SimTime) -> u64 {
        let entries = self.raft.take_committed();
        let n = entries.len() as u64;
        for entry in entries {
            self.apply_entry(now, entry);
        }
        n
    }

    fn apply_entry(&mut self, now: SimTime, entry: LogEntry) {
        match entry.payload {
            Payload::Noop => {}
            Payload::MigrationCommit { proposal, tally } => {
                let id = proposal.proposal_id.clone();
                let at_source = self.placement.domain_of(&proposal.service) == Some(&proposal.source);
                if !at_source || !self.placement.has_domain(&proposal.target) {
                    // Cannot happen with a single in-flight migration; kept
                    // defensive so a malformed entry is a no-op everywhere.
                    return;
                }
                let full = self
                    .setup
                    .capacities
                    .get(&proposal.target)
                    .is_some_and(|cap| self.placement.count_in(&proposal.target) >= *cap);
                let failed = full || unit_hash(self.setup.rng_seed, &id) < self.setup.params.execution_failure_rate;
                if let Ok(next) = apply_migration(&self.placement, &proposal.service, &proposal.target) {
                    self.placement = next;
                }
                self.checkpoints.insert(
                    id.clone(),
                    Checkpoint {
                        service: proposal.service.clone(),
                        source: proposal.source.clone(),
                        target: proposal.target.clone(),
                        failed,
                    },
                );
                self.in_flight = Some(InFlight {
                    proposal: proposal.clone(),
                    phase: if failed { Phase::Executing } else { Phase::Done },
                });
                if failed {
                    self.pending_rollback = Some(id.clone());
                }
                if self.replaying {
                    return;
                }
                if self.id == proposal.source || self.id == proposal.target {
                    self.log(
                        now,
                        EventKind::MigrationExecuted {
                            proposal_id: id.clone(),
                            service: proposal.service.clone(),
                            source: proposal.source.clone(),
                            target: proposal.target.clone(),
                            success: !failed,
                        },
                    );
                }
                if self.raft.is_leader() {
                    self.log(
                        now,
                        EventKind::ProposalCommitted {
                            proposal_id: id,
                            service: proposal.service,
                            source: proposal.source,
                            target: proposal.target,
                            term: entry.term,
                            index: entry.index,
                            positive: tally.positive,
                            negative: tally.negative,
                            abstain: tally.abstain,
                        },
                    );
                    if !failed {
                        self.snapshot_cost(now);
                    }
                }
            }
            Payload::Rollback { proposal_id } => {
                let Some(cp) = self.checkpoints.get(&proposal_id).cloned() else {
                    return;
                };
                if !cp.failed || self.pending_rollback.as_deref() != Some(proposal_id.as_str()) {
                    return;
                }
                if let Ok(prev) = apply_migration(&self.placement, &cp.service, &cp.source) {
                    self.placement = prev;
                }
                self.pending_rollback = None;
                if let Some(f) = self.in_flight.as_mut().filter(|f| f.proposal.proposal_id == proposal_id) {
                    f.phase = Phase::RolledBack;
                }
                let until = self.opt_ticks + self.setup.params.rejection_cooldown_ticks;
                self.cooldown.insert((cp.service.clone(), cp.target.clone()), until);
                if self.replaying {
                    return;
                }
                if self.id == cp.source || self.id == cp.target || self.raft.is_leader() {
                    self.log(
                        now,
                        EventKind::Rollback {
                            proposal_id,
                            service: cp.service,
                            restored_domain: cp.source,
                        },
                    );
                }
                if self.raft.is_leader() {
                    self.snapshot_cost(now);
                }
            }
        }
    }

    fn maybe_propose_rollback(&mut self, out: &mut Outbox) {
        let Some(id) = self.pending_rollback.clone() else {
            return;
        };
        if !self.raft.is_leader() || !self.raft.is_settled() || self.rollback_proposed.as_ref() == Some(&id) {
            return;
        }
        let mut msgs = Vec::new();
        if self.raft.propose(Payload::Rollback { proposal_id: id.clone() }, &mut msgs).is_ok() {
            self.rollback_proposed = Some(id);
        }
        Self::ship_raft(out, msgs);
    }

    /// Leader-side optimization step: pick the best qualifying candidate
    /// over the committed placement and open a vote round for it.
    fn optimization_tick(&mut self, now: SimTime, out: &mut Outbox) {
        if !self.raft.is_leader() || !self.raft.is_settled() || self.round.is_some() || self.pending_rollback.is_some() {
            return;
        }
        self.cooldown.retain(|_, until| *until > self.opt_ticks);
        let setup = self.setup.clone();
        let latencies = self.latency_view().clone();
        let candidate = qualifying_candidates(&setup.graph, &self.placement, &setup.services, &latencies, &setup.proposal_params)
            .into_iter()
            .find(|c| !self.cooldown.contains_key(&(c.service.clone(), c.target_domain.clone())));
        let Some(candidate) = candidate else {
            return;
        };
        if self.proposals_this_term >= setup.params.proposals_per_term {
            // Budget spent: move to a fresh term and carry on from there.
            let mut msgs = Vec::new();
            self.raft.start_election(now, &mut self.rng, &mut msgs);
            Self::ship_raft(out, msgs);
            return;
        }
        self.proposals_this_term += 1;
        self.proposal_seq += 1;
        let term = self.raft.term();
        let id = format!("{}-{}-{}", self.id, term, self.proposal_seq);
        let proposal = MigrationProposal::from_candidate(id.clone(), &candidate, term);
        self.log(
            now,
            EventKind::ProposalCreated {
                proposal_id: id.clone(),
                service: proposal.service.clone(),
                source: proposal.source.clone(),
                target: proposal.target.clone(),
                q_score: proposal.q_score,
                term,
            },
        );
        let mut tally = QuorumTally::new(setup.members.len());
        tally.record(true);
        self.log(
            now,
            EventKind::VoteCast {
                proposal_id: id.clone(),
                voter: self.id.clone(),
                decision: Decision::Positive,
                p_lat: 0.0,
                i_local: 0.0,
                reason: Some("proposer".into()),
            },
        );
        let base_index = self.raft.last_applied();
        for peer in setup.members.iter().filter(|m| **m != self.id) {
            out.messages.push((
                peer.clone(),
                Message::Propose {
                    proposal: proposal.clone(),
                    base_index,
                },
            ));
        }
        let max_latency = latencies.max_entry();
        let deadline = now.plus_ms(setup.params.vote_deadline_factor * max_latency.max(1.0));
        out.timers.push((deadline, Timer::VoteDeadline(id)));
        self.in_flight = Some(InFlight {
            proposal: proposal.clone(),
            phase: Phase::Voting,
        });
        self.round = Some(VoteRound {
            proposal,
            tally,
            responders: [self.id.clone()].into(),
        });
    }

    fn handle_proposal(&mut self, now: SimTime, from: &DomainId, proposal: MigrationProposal, base_index: u64, out: &mut Outbox) {
        if let Some(prev) = self.cast_votes.get(&proposal.proposal_id) {
            out.messages.push((from.clone(), Message::VoteReply(prev.clone())));
            return;
        }
        if proposal.term < self.raft.term() {
            let vote = Vote::refusal(&proposal.proposal_id, &self.id, "stale term");
            self.cast(now, from, vote, out);
            return;
        }
        if self.raft.last_applied() < base_index {
            self.deferred = Some((from.clone(), proposal, base_index));
            return;
        }
        self.evaluate(now, from, proposal, out);
    }

    fn retry_deferred(&mut self, now: SimTime, out: &mut Outbox) {
        let ready = self.deferred.as_ref().is_some_and(|(_, _, base)| self.raft.last_applied() >= *base);
        if ready {
            let (from, proposal, _) = self.deferred.take().expect("checked above");
            if !self.cast_votes.contains_key(&proposal.proposal_id) {
                self.evaluate(now, &from, proposal, out);
            }
        }
    }

    fn evaluate(&mut self, now: SimTime, from: &DomainId, proposal: MigrationProposal, out: &mut Outbox) {
        let setup = self.setup.clone();
        let vote = if !setup.graph.contains(&proposal.service) || !setup.services.contains_key(&proposal.service) {
            Vote::refusal(&proposal.proposal_id, &self.id, "unknown service")
        } else if !self.placement.has_domain(&proposal.source) || !self.placement.has_domain(&proposal.target) {
            Vote::refusal(&proposal.proposal_id, &self.id, "unknown domain")
        } else if self.placement.domain_of(&proposal.service) != Some(&proposal.source) {
            Vote::refusal(&proposal.proposal_id, &self.id, "placement mismatch")
        } else {
            let latencies = self.latency_view().clone();
            let mut history = self.impact_history;
            match evaluate_proposal(&proposal, &setup.graph, &self.placement, &latencies, &mut history, &setup.vote_params, &self.id) {
                Ok(v) => {
                    self.impact_history = history;
                    v
                }
                Err(e) => Vote::refusal(&proposal.proposal_id, &self.id, e.to_string()),
            }
        };
        self.cast(now, from, vote, out);
    }

    fn cast(&mut self, now: SimTime, to: &DomainId, vote: Vote, out: &mut Outbox) {
        self.log(
            now,
            EventKind::VoteCast {
                proposal_id: vote.proposal_id.clone(),
                voter: vote.voter.clone(),
                decision: vote.decision,
                p_lat: vote.p_lat,
                i_local: vote.i_local,
                reason: vote.reason.clone(),
            },
        );
        self.cast_votes.insert(vote.proposal_id.clone(), vote.clone());
        out.messages.push((to.clone(), Message::VoteReply(vote)));
    }

    fn handle_vote(&mut self, from: &DomainId, vote: Vote) {
        let Some(round) = self.round.as_mut() else {
            return;
        };
        if round.proposal.proposal_id != vote.proposal_id || vote.voter != *from || !round.responders.insert(from.clone()) {
            return;
        }
        round.tally.record(vote.is_positive());
    }

    /// Appends an approved round to the log or drops a hopeless one.
    fn close_round(&mut self, now: SimTime, out: &mut Outbox) {
        let Some(round) = &self.round else {
            return;
        };
        if round.tally.approved() {
            let round = self.round.take().expect("checked above");
            let mut msgs = Vec::new();
            let payload = Payload::MigrationCommit {
                proposal: round.proposal.clone(),
                tally: round.tally,
            };
            match self.raft.propose(payload, &mut msgs) {
                Ok(_) => {
                    self.in_flight = Some(InFlight {
                        proposal: round.proposal,
                        phase: Phase::Committed,
                    });
                }
                Err(_) => {
                    self.round = Some(round);
                    self.reject_round(now, "leadership lost");
                }
            }
            Self::ship_raft(out, msgs);
            // A single-member cluster commits synchronously.
            self.apply_committed(now);
        } else if round.tally.hopeless() {
            self.reject_round(now, "quorum unreachable");
        }
    }

    fn reject_round(&mut self, now: SimTime, reason: &str) {
        let Some(round) = self.round.take() else {
            return;
        };
        let p = round.proposal;
        let until = self.opt_ticks + self.setup.params.rejection_cooldown_ticks;
        self.cooldown.insert((p.service.clone(), p.target.clone()), until);
        self.in_flight = None;
        self.log(
            now,
            EventKind::ProposalRejected {
                proposal_id: p.proposal_id,
                service: p.service,
                target: p.target,
                reason: reason.to_owned(),
                positive: round.tally.positive,
                negative: round.tally.negative,
                abstain: round.tally.abstain,
            },
        );
    }
}
