//! Browser bindings: run the shipped scenario, solve placements exactly and
//! plot the proposal and vote penalty curves.
//!
//! Every export takes and returns JSON text so the page needs no glue beyond
//! `JSON.parse`. The `*_json` functions hold the logic and are what the
//! native tests exercise.

use ldm_core::event::{voting_latency, EventKind, EventRecord};
use ldm_core::proposal::{latency_penalty, ProposalParams};
use ldm_core::sim::faults::{CompiledFaults, FaultSchedule};
use ldm_core::sim::scenario::Scenario;
use ldm_core::sim::{placement_map, run};
use ldm_core::vote::{affinity_penalty_weight, VoteParams};
use serde::Serialize;
use serde_json::json;
use wasm_bindgen::prelude::*;

const DEFAULT_SCENARIO: &str = include_str!("../../core/scenarios/paper_analog.json");
const LEADER_CRASH: &str = include_str!("../../core/scenarios/faults/leader_crash.json");

/// Event kinds worth drawing on the timeline.
const TIMELINE: [&str; 8] = [
    "node_crashed",
    "node_started",
    "leader_elected",
    "proposal_created",
    "proposal_committed",
    "proposal_rejected",
    "rollback",
    "cost_snapshot",
];

#[derive(Serialize)]
struct CurvePoint {
    x: f64,
    y: f64,
}

fn load(json: &str) -> Result<Scenario, String> {
    Scenario::from_json(json).map_err(|e| e.to_string())
}

/// Runs `scenario` with an optional leader crash and reports the summary,
/// the notable events and per-proposal voting latency.
pub fn run_json(scenario: &str, seed: u64, crash_leader: bool) -> Result<String, String> {
    let sc = load(scenario)?;
    let faults = if crash_leader {
        FaultSchedule::from_json(LEADER_CRASH)
            .and_then(|f| f.compile(&sc.members))
            .map_err(|e| e.to_string())?
    } else {
        CompiledFaults::default()
    };
    let out = run(&sc, &faults, Some(seed)).map_err(|e| e.to_string())?;
    let timeline: Vec<&EventRecord> = out.events.iter().filter(|e| TIMELINE.contains(&e.kind.name())).collect();
    let cost_trace: Vec<CurvePoint> = out
        .events
        .iter()
        .filter_map(|e| match e.kind {
            EventKind::CostSnapshot { cost, .. } => Some(CurvePoint { x: e.time_ms, y: cost }),
            _ => None,
        })
        .collect();
    let voting = voting_latency(&out.events);
    let value = json!({
        "members": sc.members,
        "summary": out.summary,
        "timeline": timeline,
        "cost_trace": cost_trace,
        "voting_ms": voting.durations,
    });
    Ok(value.to_string())
}

/// Exhaustive optimum for `scenario`, with the moves that reach it.
pub fn optimal_placement_json(scenario: &str) -> Result<String, String> {
    let sc = load(scenario)?;
    let (best, cost) = sc.oracle().map_err(|e| e.to_string())?;
    let moves: Vec<_> = sc
        .placement
        .diff(&best)
        .into_iter()
        .map(|(s, from, to)| json!({"service": s, "from": from, "to": to}))
        .collect();
    Ok(json!({
        "cost": cost,
        "initial_cost": sc.initial_cost(),
        "placement": placement_map(&best),
        "initial_placement": placement_map(&sc.placement),
        "moves": moves,
    })
    .to_string())
}

/// Proposal latency penalty over affinity gain, and vote weight over
/// normalised impact, each sampled at `points` positions.
pub fn penalty_curves_json(ell: f64, gamma_proposal: f64, gamma_vote: f64, points: usize) -> Result<String, String> {
    let pp = ProposalParams::new(gamma_proposal, 0.0).map_err(|e| e.to_string())?;
    let vp = VoteParams::new(gamma_vote, 0.3, 1e-9).map_err(|e| e.to_string())?;
    if !(ell.is_finite() && ell >= 0.0) {
        return Err(format!("latency must be finite and non-negative, got {ell}"));
    }
    let points = points.clamp(2, 1_000);
    let max_gain = 8.0 * gamma_proposal;
    let steps = (points - 1) as f64;
    let penalty: Vec<CurvePoint> = (0..points)
        .map(|i| {
            let x = -max_gain / 4.0 + (max_gain * 1.25) * i as f64 / steps;
            CurvePoint {
                x,
                y: latency_penalty(ell, x, &pp),
            }
        })
        .collect();
    let score: Vec<CurvePoint> = penalty.iter().map(|p| CurvePoint { x: p.x, y: p.x - p.y }).collect();
    let weight: Vec<CurvePoint> = (0..points)
        .map(|i| {
            let x = i as f64 / steps;
            CurvePoint {
                x,
                y: affinity_penalty_weight(x, &vp),
            }
        })
        .collect();
    Ok(json!({"penalty": penalty, "score": score, "weight": weight}).to_string())
}

#[wasm_bindgen]
pub fn default_scenario() -> String {
    DEFAULT_SCENARIO.to_owned()
}

#[wasm_bindgen]
pub fn run_scenario(scenario: &str, seed: u64, crash_leader: bool) -> Result<String, JsError> {
    run_json(scenario, seed, crash_leader).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn optimal_placement(scenario: &str) -> Result<String, JsError> {
    optimal_placement_json(scenario).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn penalty_curves(ell: f64, gamma_proposal: f64, gamma_vote: f64, points: usize) -> Result<String, JsError> {
    penalty_curves_json(ell, gamma_proposal, gamma_vote, points).map_err(|e| JsError::new(&e))
}
