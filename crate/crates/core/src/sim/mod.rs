//! Deterministic discrete-event harness.
//!
//! A run is a pure function of `(scenario, faults, seed)`: one event queue
//! keyed by `(time, sequence)`, ChaCha8 streams for every random draw and
//! ordered maps everywhere iteration order matters.

pub mod faults;
pub mod metrics;
pub mod network;
pub mod queue;
pub mod safety;
pub mod scenario;
pub mod sweep;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::affinity::{total_cross_domain_cost, DomainId, Placement, ServiceId};
use crate::error::Result;
use crate::event::{EventKind, EventRecord};
use crate::node::{ClusterSetup, Ldm, Message, Outbox, Timer};
use crate::proposal::qualifying_candidates;
use crate::raft::PersistentState;
use crate::rng;
use crate::time::SimTime;

use faults::{CompiledFaults, NodeFault, NodeRef};
use network::{Delivery, Network};
use queue::EventQueue;
use safety::{SafetyMonitor, Violation};
use scenario::Scenario;

/// Retry interval of a leader crash scheduled while no leader exists.
pub const LEADER_POLL_MS: f64 = 10.0;

enum SimEvent {
    Start(DomainId),
    Deliver { from: DomainId, to: DomainId, msg: Message },
    Timer { node: DomainId, boot: u32, timer: Timer },
    Fault(NodeFault),
}

struct Slot {
    node: Option<Ldm>,
    boot: u32,
    persisted: Option<PersistentState>,
}

/// Remaining improving move at the end of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualCandidate {
    pub service: ServiceId,
    pub source: DomainId,
    pub target: DomainId,
    pub q_score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub duration_ms: f64,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub final_placement: BTreeMap<ServiceId, DomainId>,
    /// Node whose view is reported: the live node with the most applied entries.
    pub reporting_node: Option<DomainId>,
    pub oracle_cost: Option<f64>,
    pub oracle_placement: Option<BTreeMap<ServiceId, DomainId>>,
    pub matches_oracle: Option<bool>,
    pub proposals_created: usize,
    pub proposals_committed: usize,
    pub proposals_rejected: usize,
    pub rollbacks: usize,
    pub leader_elections: usize,
    pub final_term: u64,
    pub live_nodes: usize,
    /// Live nodes at the same applied index hold identical placements.
    pub placements_agree: bool,
    pub quiescent: bool,
    pub residual_candidates: Vec<ResidualCandidate>,
    pub messages_sent: u64,
    pub messages_dropped: u64,
    pub violations: Vec<String>,
}

pub struct RunOutput {
    pub events: Vec<EventRecord>,
    pub summary: RunSummary,
    pub violations: Vec<(SimTime, Violation)>,
    /// Persistent state of every node that ever started, live or crashed.
    pub logs: BTreeMap<DomainId, PersistentState>,
    /// Placement views of live nodes.
    pub placements: BTreeMap<DomainId, Placement>,
    /// Live nodes at the end of the run.
    pub live: Vec<DomainId>,
}

/// Placement as a plain service → domain map.
pub fn placement_map(p: &Placement) -> BTreeMap<ServiceId, DomainId> {
    p.iter().map(|(s, d)| (s.clone(), d.clone())).collect()
}

/// Improving moves left in `placement` under the scenario's parameters.
pub fn residual_candidates(scenario: &Scenario, placement: &Placement) -> Vec<ResidualCandidate> {
    let params = scenario.params().proposal().expect("validated");
    qualifying_candidates(&scenario.graph, placement, &scenario.services, &scenario.latency, &params)
        .into_iter()
        .map(|c| ResidualCandidate {
            service: c.service,
            source: c.current_domain,
            target: c.target_domain,
            q_score: c.q_score,
        })
        .collect()
}

pub struct Simulation {
    setup: Arc<ClusterSetup>,
    queue: EventQueue<SimEvent>,
    network: Network,
    slots: BTreeMap<DomainId, Slot>,
    events: Vec<EventRecord>,
    monitor: SafetyMonitor,
    last_crashed: Option<DomainId>,
    now: SimTime,
    sent: u64,
    dropped: u64,
}

impl Simulation {
    pub fn new(scenario: &Scenario, faults: &CompiledFaults, seed: u64) -> Self {
        let setup = Arc::new(scenario.cluster_setup(seed));
        let mut network = Network::new(
            scenario.latency.clone(),
            scenario.config.jitter_ms,
            scenario.config.drop_rate,
            scenario.params().send_overhead_ms,
            rng::stream(seed, rng::NETWORK_STREAM),
        );
        for p in &faults.partitions {
            network.add_partition(p.clone());
        }
        for w in &faults.drop_windows {
            network.add_drop_window(w.clone());
        }
        let mut queue = EventQueue::new();
        let mut slots = BTreeMap::new();
        for m in &scenario.members {
            queue.push(scenario.start_times[m], SimEvent::Start(m.clone()));
            slots.insert(
                m.clone(),
                Slot {
                    node: None,
                    boot: 0,
                    persisted: None,
                },
            );
        }
        for (at, f) in &faults.node_faults {
            queue.push(*at, SimEvent::Fault(f.clone()));
        }
        Self {
            setup,
            queue,
            network,
            slots,
            events: Vec::new(),
            monitor: SafetyMonitor::new(),
            last_crashed: None,
            now: SimTime::ZERO,
            sent: 0,
            dropped: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn node(&self, id: &DomainId) -> Option<&Ldm> {
        self.slots.get(id).and_then(|s| s.node.as_ref())
    }

    pub fn events(&self) -> &[EventRecord] {
        &self.events
    }

    fn record(&mut self, at: SimTime, node: &DomainId, kind: EventKind) {
        self.events.push(EventRecord {
            time_ms: at.as_ms(),
            node: node.clone(),
            kind,
        });
    }

    fn flush(&mut self, id: &DomainId, boot: u32, out: Outbox) {
        let now = self.now;
        for (at, timer) in out.timers {
            self.queue.push(
                at.max(now),
                SimEvent::Timer {
                    node: id.clone(),
                    boot,
                    timer,
                },
            );
        }
        for (to, msg) in out.messages {
            self.sent += 1;
            match self.network.deliver(now, id, &to) {
                Delivery::At(at) => {
                    self.queue.push(
                        at,
                        SimEvent::Deliver {
                            from: id.clone(),
                            to,
                            msg,
                        },
                    );
                }
                Delivery::Dropped(_) => self.dropped += 1,
            }
        }
        let Some(node) = self.slots.get_mut(id).and_then(|s| s.node.as_mut()) else {
            return;
        };
        for (at, kind) in node.drain_events() {
            self.events.push(EventRecord {
                time_ms: at.as_ms(),
                node: id.clone(),
                kind,
            });
        }
        self.monitor.observe(now, id, node.is_leader(), node.persistent());
    }

    fn boot(&mut self, id: &DomainId) {
        let slot = self.slots.get_mut(id).expect("member");
        if slot.node.is_some() {
            return;
        }
        let persisted = slot.persisted.take();
        if let Some(p) = &persisted {
            self.monitor.node_restarted(id, p);
        }
        let boot = slot.boot;
        match Ldm::start(self.setup.clone(), id.clone(), boot, persisted.clone(), self.now) {
            Ok((node, out)) => {
                self.slots.get_mut(id).expect("member").node = Some(node);
                self.flush(id, boot, out);
            }
            Err(e) => {
                // Recovery refused the persisted log; keep it for inspection.
                self.slots.get_mut(id).expect("member").persisted = persisted;
                self.monitor_error(id, e.to_string());
            }
        }
    }

    fn monitor_error(&mut self, id: &DomainId, detail: String) {
        let v = Violation::Durability {
            node: id.clone(),
            index: 0,
            detail,
        };
        self.monitor.report(self.now, v);
    }

    fn resolve(&self, r: &NodeRef) -> Option<DomainId> {
        match r {
            NodeRef::Named(d) => Some(d.clone()),
            NodeRef::LastCrashed => self.last_crashed.clone(),
            NodeRef::Leader => self
                .slots
                .iter()
                .filter_map(|(id, s)| s.node.as_ref().filter(|n| n.is_leader()).map(|n| (n.raft().term(), id)))
                .max_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(a.1)))
                .map(|(_, id)| id.clone()),
        }
    }

    fn crash(&mut self, id: &DomainId) {
        let Some(slot) = self.slots.get_mut(id) else {
            return;
        };
        let Some(node) = slot.node.take() else {
            return;
        };
        slot.persisted = Some(node.persistent().clone());
        slot.boot += 1;
        self.network.reset_sender(id);
        self.last_crashed = Some(id.clone());
        let now = self.now;
        self.record(now, id, EventKind::NodeCrashed);
    }

    fn step(&mut self, at: SimTime, ev: SimEvent) {
        self.now = at;
        match ev {
            SimEvent::Start(id) => self.boot(&id),
            SimEvent::Fault(NodeFault::Crash(r)) => match self.resolve(&r) {
                Some(id) => self.crash(&id),
                // No leader right now: strike as soon as one emerges.
                None if r == NodeRef::Leader => {
                    self.queue.push(at.plus_ms(LEADER_POLL_MS), SimEvent::Fault(NodeFault::Crash(r)));
                }
                None => {}
            },
            SimEvent::Fault(NodeFault::Restart(r)) => {
                if let Some(id) = self.resolve(&r) {
                    let started = self.slots.get(&id).is_some_and(|s| s.persisted.is_some());
                    if started {
                        self.boot(&id);
                    }
                }
            }
            SimEvent::Timer { node, boot, timer } => {
                let Some(slot) = self.slots.get_mut(&node) else {
                    return;
                };
                if slot.boot != boot {
                    return;
                }
                let Some(ldm) = slot.node.as_mut() else {
                    return;
                };
                let mut out = Outbox::default();
                ldm.on_timer(at, timer, &mut out);
                self.flush(&node, boot, out);
            }
            SimEvent::Deliver { from, to, msg } => {
                let Some(slot) = self.slots.get_mut(&to) else {
                    return;
                };
                let boot = slot.boot;
                let Some(ldm) = slot.node.as_mut() else {
                    self.dropped += 1;
                    return;
                };
                let mut out = Outbox::default();
                ldm.on_message(at, &from, msg, &mut out);
                self.flush(&to, boot, out);
            }
        }
    }

    /// Processes every event scheduled up to and including `until`.
    pub fn run_until(&mut self, until: SimTime) {
        while let Some(t) = self.queue.peek_time() {
            if t > until {
                break;
            }
            let (at, ev) = self.queue.pop().expect("peeked");
            debug_assert!(at >= self.now, "time moved backwards");
            self.step(at, ev);
        }
        self.now = self.now.max(until);
    }

    fn logs(&self) -> BTreeMap<DomainId, PersistentState> {
        self.slots
            .iter()
            .filter_map(|(id, s)| {
                s.node
                    .as_ref()
                    .map(|n| n.persistent().clone())
                    .or_else(|| s.persisted.clone())
                    .map(|p| (id.clone(), p))
            })
            .collect()
    }

    pub fn finish(mut self, scenario: &Scenario, seed: u64) -> RunOutput {
        let logs = self.logs();
        let refs: BTreeMap<DomainId, &PersistentState> = logs.iter().map(|(k, v)| (k.clone(), v)).collect();
        let now = self.now;
        self.monitor.check_logs(now, &refs);

        let live: Vec<DomainId> = self.slots.iter().filter(|(_, s)| s.node.is_some()).map(|(id, _)| id.clone()).collect();
        let placements: BTreeMap<DomainId, Placement> = live
            .iter()
            .map(|id| (id.clone(), self.node(id).expect("live").placement().clone()))
            .collect();
        let applied: BTreeMap<&DomainId, u64> = live.iter().map(|id| (id, self.node(id).expect("live").raft().last_applied())).collect();
        let reporting = live.iter().max_by(|a, b| applied[a].cmp(&applied[b]).then(b.cmp(a))).cloned();
        let placements_agree = live.iter().all(|a| {
            live.iter()
                .all(|b| applied[a] != applied[b] || placements[a] == placements[b])
        });
        let final_placement = reporting.as_ref().map_or_else(|| scenario.placement.clone(), |id| placements[id].clone());
        let final_cost = total_cross_domain_cost(&scenario.graph, &final_placement).expect("placed");
        let oracle = scenario.oracle().ok();
        let residual = residual_candidates(scenario, &final_placement);

        let count = |name: &str| self.events.iter().filter(|e| e.kind.name() == name).count();
        let violations = self.monitor.violations().to_vec();
        let summary = RunSummary {
            seed,
            duration_ms: scenario.config.duration_ms,
            initial_cost: scenario.initial_cost(),
            final_cost,
            final_placement: placement_map(&final_placement),
            reporting_node: reporting,
            oracle_cost: oracle.as_ref().map(|(_, c)| *c),
            oracle_placement: oracle.as_ref().map(|(p, _)| placement_map(p)),
            matches_oracle: oracle.as_ref().map(|(p, _)| *p == final_placement),
            proposals_created: count("proposal_created"),
            proposals_committed: count("proposal_committed"),
            proposals_rejected: count("proposal_rejected"),
            rollbacks: count("rollback"),
            leader_elections: count("leader_elected"),
            final_term: logs.values().map(|p| p.current_term).max().unwrap_or(0),
            live_nodes: live.len(),
            placements_agree,
            quiescent: residual.is_empty(),
            residual_candidates: residual,
            messages_sent: self.sent,
            messages_dropped: self.dropped,
            violations: violations.iter().map(|(t, v)| format!("{t}: {v}")).collect(),
        };
        RunOutput {
            events: self.events,
            summary,
            violations,
            logs,
            placements,
            live,
        }
    }
}

/// Runs `scenario` for its configured duration. `seed` overrides the
/// scenario's own seed.
pub fn run(scenario: &Scenario, faults: &CompiledFaults, seed: Option<u64>) -> Result<RunOutput> {
    let seed = seed.unwrap_or(scenario.rng_seed());
    let mut sim = Simulation::new(scenario, faults, seed);
    sim.run_until(scenario.duration());
    Ok(sim.finish(scenario, seed))
}
