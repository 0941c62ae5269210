//! Follower-side cost-benefit voting.
//!
//! A voter measures how much its own services depend on the migrating
//! service (`I_local`). Unaffected voters approve immediately. Otherwise the
//! impact is normalised against the voter's historical extremes, turned into
//! a sigmoid weight and applied to the latency change the move causes from
//! the voter's point of view:
//!
//! ```text
//! Ĩ     = (I − I_min) / (I_max − I_min + ε)
//! Δℓ    = ℓ(target, voter) − ℓ(source, voter)
//! W_aff = 1 / (1 + exp(−Ĩ / γ_vote))
//! P_lat = Δℓ · W_aff / ℓ_max
//! ```
//!
//! The vote is positive iff `P_lat < θ_vote`.

use serde::{Deserialize, Serialize};

use crate::affinity::{cluster_affinity, AffinityGraph, DomainId, LatencyMatrix, Placement, ServiceId};
use crate::error::{Error, Result};
use crate::proposal::MigrationProposal;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoteParams {
    pub gamma_vote: f64,
    pub theta_vote: f64,
    pub epsilon: f64,
}

impl VoteParams {
    pub fn new(gamma_vote: f64, theta_vote: f64, epsilon: f64) -> Result<Self> {
        if !(gamma_vote > 0.0 && gamma_vote.is_finite()) {
            return Err(Error::InvalidArgument(format!("gamma_vote must be positive, got {gamma_vote}")));
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
        }
        if !theta_vote.is_finite() {
            return Err(Error::InvalidArgument("theta_vote must be finite".into()));
        }
        Ok(Self {
            gamma_vote,
            theta_vote,
            epsilon,
        })
    }
}

impl Default for VoteParams {
    fn default() -> Self {
        Self {
            gamma_vote: 0.25,
            theta_vote: 0.3,
            epsilon: 1e-9,
        }
    }
}

/// Running extremes of observed local impact, kept for the node's lifetime.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ImpactHistory {
    pub i_min: f64,
    pub i_max: f64,
    pub observed: bool,
}

impl ImpactHistory {
    pub fn observe(self, i: f64) -> Self {
        if self.observed {
            Self {
                i_min: self.i_min.min(i),
                i_max: self.i_max.max(i),
                observed: true,
            }
        } else {
            Self {
                i_min: i,
                i_max: i,
                observed: true,
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Positive,
    Negative,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vote {
    pub proposal_id: String,
    pub voter: DomainId,
    pub decision: Decision,
    pub p_lat: f64,
    pub i_local: f64,
    /// Set when the vote was cast without running the pipeline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl Vote {
    pub fn is_positive(&self) -> bool {
        self.decision == Decision::Positive
    }

    pub fn refusal(proposal_id: &str, voter: &DomainId, reason: impl Into<String>) -> Self {
        Self {
            proposal_id: proposal_id.to_owned(),
            voter: voter.clone(),
            decision: Decision::Negative,
            p_lat: 0.0,
            i_local: 0.0,
            reason: Some(reason.into()),
        }
    }
}

/// Summed affinity between `m` and the services placed in `voter_domain`.
pub fn local_impact(graph: &AffinityGraph, placement: &Placement, m: &ServiceId, voter_domain: &DomainId) -> Result<f64> {
    if placement.domain_of(m).is_none() {
        return Err(Error::InvalidArgument(format!("service {m} is not placed")));
    }
    cluster_affinity(graph, placement, m, voter_domain)
}

/// Folds `i_local` into the extremes, then normalises it against them.
pub fn normalize_impact(i_local: f64, history: ImpactHistory, params: &VoteParams) -> (f64, ImpactHistory) {
    let updated = history.observe(i_local);
    let normalized = (i_local - updated.i_min) / (updated.i_max - updated.i_min + params.epsilon);
    (normalized, updated)
}

pub fn latency_difference(latencies: &LatencyMatrix, source: &DomainId, target: &DomainId, voter: &DomainId) -> Result<f64> {
    Ok(latencies.get(target, voter)? - latencies.get(source, voter)?)
}

pub fn affinity_penalty_weight(normalized_impact: f64, params: &VoteParams) -> f64 {
    1.0 / (1.0 + (-normalized_impact / params.gamma_vote).exp())
}

pub fn scaled_latency_penalty(delta_ell: f64, w_aff: f64, ell_max: f64) -> Result<f64> {
    if ell_max.is_nan() || ell_max <= 0.0 {
        return Err(Error::InvalidState(format!("ell_max must be positive, got {ell_max}")));
    }
    Ok(delta_ell * w_aff / ell_max)
}

/// Runs the full voting rule for `voter_domain`, updating `history`.
///
/// `ℓ_max` is the largest entry of `latencies`. The history is only
/// modified when evaluation succeeds.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_proposal(
    proposal: &MigrationProposal,
    graph: &AffinityGraph,
    placement: &Placement,
    latencies: &LatencyMatrix,
    history: &mut ImpactHistory,
    params: &VoteParams,
    voter_domain: &DomainId,
) -> Result<Vote> {
    let i_local = local_impact(graph, placement, &proposal.service, voter_domain)?;
    if i_local == 0.0 {
        *history = history.observe(0.0);
        return Ok(Vote {
            proposal_id: proposal.proposal_id.clone(),
            voter: voter_domain.clone(),
            decision: Decision::Positive,
            p_lat: 0.0,
            i_local,
            reason: None,
        });
    }
    let (normalized, updated) = normalize_impact(i_local, *history, params);
    let delta_ell = latency_difference(latencies, &proposal.source, &proposal.target, voter_domain)?;
    let w_aff = affinity_penalty_weight(normalized, params);
    let p_lat = scaled_latency_penalty(delta_ell, w_aff, latencies.max_entry())?;
    *history = updated;
    Ok(Vote {
        proposal_id: proposal.proposal_id.clone(),
        voter: voter_domain.clone(),
        decision: if p_lat < params.theta_vote {
            Decision::Positive
        } else {
            Decision::Negative
        },
        p_lat,
        i_local,
        reason: None,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn sid(s: &str) -> ServiceId {
        ServiceId::from(s)
    }
    fn did(s: &str) -> DomainId {
        DomainId::from(s)
    }

    #[test]
    fn local_impact_examples() {
        let mut g = AffinityGraph::new();
        g.add_edge(&sid("m"), &sid("x"), 4.0).unwrap();
        g.add_edge(&sid("m"), &sid("y"), 1.0).unwrap();
        let mut p = Placement::new([did("S"), did("V"), did("O")]);
        for (s, d) in [("m", "S"), ("x", "V"), ("y", "V")] {
            p.assign(sid(s), did(d)).unwrap();
        }
        assert_eq!(local_impact(&g, &p, &sid("m"), &did("V")).unwrap(), 5.0);
        assert_eq!(local_impact(&g, &p, &sid("m"), &did("O")).unwrap(), 0.0);
        p.assign(sid("x"), did("O")).unwrap();
        assert_eq!(local_impact(&g, &p, &sid("m"), &did("V")).unwrap(), 1.0);
        assert!(local_impact(&g, &p, &sid("nope"), &did("V")).is_err());
    }

    #[test]
    fn normalization_examples() {
        let params = VoteParams::default();
        let (n, h) = normalize_impact(7.0, ImpactHistory::default(), &params);
        assert_eq!(n, 0.0);
        assert_eq!((h.i_min, h.i_max, h.observed), (7.0, 7.0, true));

        let history = ImpactHistory { i_min: 2.0, i_max: 2.0, observed: true };
        assert_eq!(normalize_impact(2.0, history, &params).0, 0.0);

        let history = ImpactHistory { i_min: 0.0, i_max: 10.0, observed: true };
        let (n, _) = normalize_impact(12.0, history, &params);
        assert!(n <= 1.0 && n > 0.99);
    }

    #[test]
    fn latency_difference_edge_cases() {
        let mut lat = LatencyMatrix::new();
        lat.set(&did("S"), &did("T"), 88.0).unwrap();
        lat.set(&did("S"), &did("V"), 88.0).unwrap();
        lat.set(&did("T"), &did("V"), 196.0).unwrap();
        assert_eq!(latency_difference(&lat, &did("S"), &did("T"), &did("T")).unwrap(), -88.0);
        assert_eq!(latency_difference(&lat, &did("S"), &did("T"), &did("S")).unwrap(), 88.0);
        assert_eq!(latency_difference(&lat, &did("S"), &did("T"), &did("V")).unwrap(), 108.0);
        assert!(matches!(
            latency_difference(&lat, &did("S"), &did("X"), &did("V")),
            Err(Error::InvalidState(_))
        ));
    }

    #[test]
    fn scaled_penalty_guards_ell_max() {
        assert_eq!(scaled_latency_penalty(0.0, 0.7, 10.0).unwrap(), 0.0);
        assert_eq!(scaled_latency_penalty(-50.0, 0.5, 100.0).unwrap(), -0.25);
        assert!(matches!(scaled_latency_penalty(1.0, 0.5, 0.0), Err(Error::InvalidState(_))));
    }

    #[test]
    fn fast_path_ignores_latency() {
        let mut g = AffinityGraph::new();
        g.add_edge(&sid("m"), &sid("x"), 3.0).unwrap();
        let mut p = Placement::new([did("S"), did("T")]);
        p.assign(sid("m"), did("S")).unwrap();
        p.assign(sid("x"), did("T")).unwrap();
        let mut lat = LatencyMatrix::new();
        lat.set(&did("S"), &did("T"), 500.0).unwrap();
        let proposal = MigrationProposal {
            proposal_id: "p1".into(),
            service: sid("m"),
            source: did("S"),
            target: did("T"),
            q_score: 1.0,
            term: 1,
        };
        // Source loses m but has no other dependency on it.
        let mut h = ImpactHistory::default();
        let vote = evaluate_proposal(&proposal, &g, &p, &lat, &mut h, &VoteParams::default(), &did("S")).unwrap();
        assert!(vote.is_positive());
        assert_eq!(vote.i_local, 0.0);
        assert!(h.observed);
        assert_eq!(h.i_max, 0.0);
    }

    proptest! {
        #[test]
        fn normalized_in_unit_interval(mut seq in proptest::collection::vec(0.0f64..100.0, 1..20)) {
            let params = VoteParams::default();
            let mut h = ImpactHistory::default();
            for i in seq.drain(..) {
                let (n, next) = normalize_impact(i, h, &params);
                prop_assert!((0.0..=1.0).contains(&n));
                prop_assert!(next.i_min <= next.i_max);
                h = next;
            }
        }

        #[test]
        fn weight_monotone_and_bounded(a in 0.0f64..1.0, b in 0.0f64..1.0, gamma in 0.05f64..5.0) {
            let params = VoteParams::new(gamma, 0.3, 1e-9).unwrap();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let (wl, wh) = (affinity_penalty_weight(lo, &params), affinity_penalty_weight(hi, &params));
            prop_assert!(wl >= 0.5 && wh < 1.0);
            prop_assert!(wl <= wh);
            if hi - lo > 1e-6 { prop_assert!(wl < wh); }
        }

        #[test]
        fn approaching_move_always_approved(delta in -1000.0f64..-1e-6, w in 0.5f64..1.0, ell_max in 1.0f64..1000.0, theta in 1e-9f64..1.0) {
            let p = scaled_latency_penalty(delta, w, ell_max).unwrap();
            prop_assert!(p < theta);
        }
    }
}
