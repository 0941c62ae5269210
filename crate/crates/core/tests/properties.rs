//! Whole-run properties checked over generated scenarios and fault schedules.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use ldm_core::affinity::{ServiceCatalog, ServiceRecord};
use ldm_core::event::{EventKind, EventRecord};
use ldm_core::proposal::{qualifying_candidates, ranked_candidates, select_candidate, ProposalParams};
use ldm_core::raft::quorum_size;
use ldm_core::rng;
use ldm_core::sim::faults::FaultSchedule;
use ldm_core::sim::scenario::Scenario;
use ldm_core::sim::sweep::{generate, SweepMetric};
use ldm_core::sim::run;
use ldm_core::{AffinityGraph, DomainId, LatencyMatrix, Placement, ServiceId};
use proptest::prelude::*;

fn paper_analog() -> Scenario {
    Scenario::load(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios/paper_analog.json")).unwrap()
}

fn faulty_run(n: usize, seed: u64) -> (Scenario, Vec<EventRecord>) {
    let sc = generate(&paper_analog(), n, SweepMetric::Voting, seed as usize).unwrap();
    let schedule = FaultSchedule::random(&mut rng::stream(seed, 7), &sc.members, sc.config.duration_ms, (n - 1) / 2);
    let faults = schedule.compile(&sc.members).unwrap();
    let out = run(&sc, &faults, Some(seed)).unwrap();
    assert!(out.violations.is_empty(), "{:?}", out.summary.violations);
    (sc, out.events)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn event_stream_is_time_ordered(seed in 0u64..10_000, n in 3usize..=5) {
        let (_, events) = faulty_run(n, seed);
        prop_assert!(events.windows(2).all(|w| w[0].time_ms <= w[1].time_ms));
    }

    #[test]
    fn leaders_run_one_round_at_a_time(seed in 0u64..10_000, n in 3usize..=5) {
        let (_, events) = faulty_run(n, seed);
        let mut open: BTreeMap<DomainId, String> = BTreeMap::new();
        for e in &events {
            match &e.kind {
                EventKind::ProposalCreated { proposal_id, .. } => {
                    prop_assert!(!open.contains_key(&e.node), "{} opened {} while {:?} was open", e.node, proposal_id, open.get(&e.node));
                    open.insert(e.node.clone(), proposal_id.clone());
                }
                // Another leader may finish an approved proposal.
                EventKind::ProposalCommitted { proposal_id, .. } | EventKind::ProposalRejected { proposal_id, .. } => {
                    open.retain(|_, id| id != proposal_id);
                }
                // An open round never survives a crash or a lost term.
                EventKind::NodeCrashed | EventKind::LeaderElected { .. } => {
                    open.remove(&e.node);
                }
                _ => {}
            }
        }
    }

    #[test]
    fn commits_carry_a_positive_quorum(seed in 0u64..10_000, n in 3usize..=5) {
        let (sc, events) = faulty_run(n, seed);
        let quorum = quorum_size(sc.members.len());
        for e in &events {
            if let EventKind::ProposalCommitted { positive, negative, abstain, .. } = &e.kind {
                prop_assert!(*positive >= quorum);
                prop_assert!(*positive + *negative + *abstain <= sc.members.len());
            }
        }
    }

    #[test]
    fn proposals_always_clear_the_threshold(seed in 0u64..10_000) {
        let (sc, events) = faulty_run(3, seed);
        let theta = sc.params().theta_proposal;
        for e in &events {
            if let EventKind::ProposalCreated { q_score, source, target, .. } = &e.kind {
                prop_assert!(*q_score > theta);
                prop_assert_ne!(source, target);
            }
        }
    }
}

fn leader_within(events: &[EventRecord], from_ms: f64, bound_ms: f64) -> bool {
    events
        .iter()
        .any(|e| e.time_ms >= from_ms && e.time_ms <= from_ms + bound_ms && matches!(e.kind, EventKind::LeaderElected { .. }))
}

#[test]
fn leader_emerges_within_ten_timeouts_with_a_minority_down() {
    let template = paper_analog();
    let bound = 10.0 * template.params().raft.election_timeout_max_ms;
    for seed in 0..30 {
        let sc = generate(&template, 5, SweepMetric::Voting, seed).unwrap();
        let crash = format!(
            r#"{{"actions": [{{"action": "crash", "at_ms": 0, "node": "{}"}}, {{"action": "crash", "at_ms": 0, "node": "{}"}}]}}"#,
            sc.members[1], sc.members[3]
        );
        let faults = FaultSchedule::from_json(&crash).unwrap().compile(&sc.members).unwrap();
        let out = run(&sc, &faults, Some(seed as u64)).unwrap();
        assert!(leader_within(&out.events, 0.0, bound), "seed {seed}: no leader within {bound} ms");
    }
}

#[test]
fn shipped_scenarios_never_end_costlier() {
    for name in ["paper_analog.json", "minimal.json"] {
        let sc = Scenario::load(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)).unwrap();
        for seed in 0..5 {
            let out = run(&sc, &Default::default(), Some(seed)).unwrap();
            assert!(out.summary.final_cost <= out.summary.initial_cost, "{name} seed {seed}");
        }
    }
}

#[test]
fn first_recognition_happens_at_a_seed() {
    let template = paper_analog();
    for n in [3, 5, 10] {
        for rep in 0..3 {
            let sc = generate(&template, n, SweepMetric::Registration, rep).unwrap();
            let out = run(&sc, &Default::default(), None).unwrap();
            let late = sc.members.last().unwrap();
            let stats = ldm_core::event::registration_stats(&out.events, &sc.members);
            let s = stats.iter().find(|s| &s.node == late).unwrap();
            let first = s.first_observer.as_ref().unwrap();
            assert!(sc.seeds.contains(first), "n={n} rep={rep}: first observer {first}");
        }
    }
}

/// Edges, home domains, migratable flags and the three link latencies.
type EngineInstance = (Vec<(usize, usize, u32)>, Vec<usize>, Vec<bool>, Vec<u32>);

fn engine_instance() -> impl Strategy<Value = EngineInstance> {
    let edges = proptest::collection::vec((0usize..7, 0usize..7, 1u32..15), 0..14);
    let homes = proptest::collection::vec(0usize..3, 7);
    let migratable = proptest::collection::vec(proptest::bool::weighted(0.8), 7);
    let lat = proptest::collection::vec(1u32..300, 3);
    (edges, homes, migratable, lat)
}

type Engine = (AffinityGraph, Placement, ServiceCatalog, LatencyMatrix);

fn build((edges, homes, migratable, lat): &EngineInstance) -> Engine {
    let sid = |i: usize| ServiceId::from(format!("s{i}").as_str());
    let did = |i: usize| DomainId::from(format!("d{i}").as_str());
    let mut g = AffinityGraph::new();
    let mut seen = BTreeSet::new();
    for i in 0..homes.len() {
        g.add_service(sid(i));
    }
    for (a, b, w) in edges {
        if a != b && seen.insert((*a.min(b), *a.max(b))) {
            g.add_edge(&sid(*a), &sid(*b), *w as f64).unwrap();
        }
    }
    let mut p = Placement::new((0..3).map(did));
    let mut catalog = ServiceCatalog::new();
    for (i, h) in homes.iter().enumerate() {
        p.assign(sid(i), did(*h)).unwrap();
        catalog.insert(sid(i), ServiceRecord { id: sid(i), migratable: migratable[i] });
    }
    let mut l = LatencyMatrix::new();
    l.set(&did(0), &did(1), lat[0] as f64).unwrap();
    l.set(&did(0), &did(2), lat[1] as f64).unwrap();
    l.set(&did(1), &did(2), lat[2] as f64).unwrap();
    (g, p, catalog, l)
}

proptest! {
    #[test]
    fn selection_is_the_argmax(inst in engine_instance(), theta in -5.0f64..5.0) {
        let (g, p, catalog, l) = build(&inst);
        let params = ProposalParams::new(1.0, theta).unwrap();
        for d in p.domains().clone() {
            let ranked = ranked_candidates(&g, &p, &catalog, &l, &d, &params);
            match select_candidate(&g, &p, &catalog, &l, &d, &params) {
                Some(best) => prop_assert!(ranked.iter().all(|c| c.q_score <= best.q_score)),
                None => prop_assert!(ranked.iter().all(|c| c.q_score <= theta)),
            }
        }
    }

    #[test]
    fn no_selection_anywhere_means_fixpoint(inst in engine_instance(), theta in -5.0f64..5.0) {
        let (g, p, catalog, l) = build(&inst);
        let params = ProposalParams::new(1.0, theta).unwrap();
        let none_anywhere = p.domains().iter().all(|d| select_candidate(&g, &p, &catalog, &l, d, &params).is_none());
        prop_assert_eq!(none_anywhere, qualifying_candidates(&g, &p, &catalog, &l, &params).is_empty());
    }
}
