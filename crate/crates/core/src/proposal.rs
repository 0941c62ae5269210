//! Leader-side migration candidate selection.
//!
//! A service is a candidate when some foreign domain has strictly more
//! affinity to it than its current domain. Its score is
//! `Q = ΔA − L`, where `ΔA = A_inter − A_intra` and the latency penalty `L`
//! shrinks sigmoidally as the affinity gain grows:
//!
//! ```text
//! L = ℓ / (1 + exp(ΔA / γ))   if ΔA > 0
//! L = ℓ                       otherwise
//! ```

use std::cmp::Ordering;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::affinity::{affinity_profile, AffinityGraph, DomainId, LatencyMatrix, Placement, ServiceCatalog, ServiceId};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProposalParams {
    /// Affinity-gain sensitivity; larger values flatten the penalty curve.
    pub gamma_proposal: f64,
    /// A candidate is proposed only when its score exceeds this threshold.
    pub theta_proposal: f64,
}

impl ProposalParams {
    pub fn new(gamma_proposal: f64, theta_proposal: f64) -> Result<Self> {
        if !(gamma_proposal > 0.0 && gamma_proposal.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "gamma_proposal must be positive, got {gamma_proposal}"
            )));
        }
        if !theta_proposal.is_finite() {
            return Err(Error::InvalidArgument("theta_proposal must be finite".into()));
        }
        Ok(Self {
            gamma_proposal,
            theta_proposal,
        })
    }
}

impl Default for ProposalParams {
    fn default() -> Self {
        Self {
            gamma_proposal: 1.0,
            theta_proposal: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub service: ServiceId,
    pub current_domain: DomainId,
    pub target_domain: DomainId,
    pub a_intra: f64,
    pub a_inter: f64,
    pub delta_a: f64,
    pub latency_penalty: f64,
    pub q_score: f64,
}

/// Unit of agreement: move `service` from `source` to `target`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MigrationProposal {
    pub proposal_id: String,
    pub service: ServiceId,
    pub source: DomainId,
    pub target: DomainId,
    pub q_score: f64,
    pub term: u64,
}

impl MigrationProposal {
    pub fn from_candidate(proposal_id: String, candidate: &CandidateScore, term: u64) -> Self {
        Self {
            proposal_id,
            service: candidate.service.clone(),
            source: candidate.current_domain.clone(),
            target: candidate.target_domain.clone(),
            q_score: candidate.q_score,
            term,
        }
    }
}

/// Best foreign domain for `m`: `(A_intra, A_inter, argmax)`; ties go to the
/// lowest domain id. `None` when there is no foreign domain.
fn best_foreign(graph: &AffinityGraph, placement: &Placement, m: &ServiceId, local: &DomainId) -> Result<Option<(f64, f64, DomainId)>> {
    let profile = affinity_profile(graph, placement, m)?;
    let a_intra = profile.get(local).copied().unwrap_or(0.0);
    let mut best: Option<(f64, &DomainId)> = None;
    for (d, a) in &profile {
        if d == local {
            continue;
        }
        if best.is_none_or(|(b, _)| *a > b) {
            best = Some((*a, d));
        }
    }
    Ok(best.map(|(a_inter, d)| (a_intra, a_inter, d.clone())))
}

/// Migratable services in `local_domain` that are not already in their
/// highest-affinity domain. A tie between the current domain and the best
/// foreign domain keeps the service where it is.
pub fn filter_candidates(
    graph: &AffinityGraph,
    placement: &Placement,
    services: &ServiceCatalog,
    local_domain: &DomainId,
) -> BTreeSet<ServiceId> {
    placement
        .services_in(local_domain)
        .filter(|s| services.get(*s).is_some_and(|r| r.migratable))
        .filter(|s| {
            matches!(best_foreign(graph, placement, s, local_domain), Ok(Some((intra, inter, _))) if inter > intra)
        })
        .cloned()
        .collect()
}

/// `ΔA = A_inter − A_intra` and the domain attaining `A_inter`.
pub fn affinity_gain(graph: &AffinityGraph, placement: &Placement, m: &ServiceId, local_domain: &DomainId) -> Result<(f64, DomainId)> {
    if placement.domain_of(m) != Some(local_domain) {
        return Err(Error::InvalidArgument(format!("service {m} is not placed in {local_domain}")));
    }
    match best_foreign(graph, placement, m, local_domain)? {
        Some((intra, inter, target)) => Ok((inter - intra, target)),
        None => Err(Error::NoCandidate("single-domain system has no migration target".into())),
    }
}

/// Sigmoid-scaled latency penalty for moving across a link of `ell` ms.
pub fn latency_penalty(ell: f64, delta_a: f64, params: &ProposalParams) -> f64 {
    if delta_a > 0.0 {
        ell / (1.0 + (delta_a / params.gamma_proposal).exp())
    } else {
        ell
    }
}

/// Full score of `m` against its best foreign domain.
pub fn score_candidate(
    graph: &AffinityGraph,
    placement: &Placement,
    latencies: &LatencyMatrix,
    m: &ServiceId,
    local_domain: &DomainId,
    params: &ProposalParams,
) -> Result<CandidateScore> {
    let (a_intra, a_inter, target) = best_foreign(graph, placement, m, local_domain)?
        .ok_or_else(|| Error::NoCandidate("single-domain system has no migration target".into()))?;
    let delta_a = a_inter - a_intra;
    let ell = latencies.get(local_domain, &target)?;
    let latency_penalty = latency_penalty(ell, delta_a, params);
    Ok(CandidateScore {
        service: m.clone(),
        current_domain: local_domain.clone(),
        target_domain: target,
        a_intra,
        a_inter,
        delta_a,
        latency_penalty,
        q_score: delta_a - latency_penalty,
    })
}

/// Ordering used everywhere a single candidate must be picked: highest Q,
/// then lowest service id, then lowest target id.
pub fn candidate_order(a: &CandidateScore, b: &CandidateScore) -> Ordering {
    b.q_score
        .total_cmp(&a.q_score)
        .then_with(|| a.service.cmp(&b.service))
        .then_with(|| a.target_domain.cmp(&b.target_domain))
}

/// Scores of every filtered candidate in `local_domain`, best first. No
/// threshold is applied.
pub fn ranked_candidates(
    graph: &AffinityGraph,
    placement: &Placement,
    services: &ServiceCatalog,
    latencies: &LatencyMatrix,
    local_domain: &DomainId,
    params: &ProposalParams,
) -> Vec<CandidateScore> {
    let mut scored: Vec<CandidateScore> = filter_candidates(graph, placement, services, local_domain)
        .iter()
        .filter_map(|m| score_candidate(graph, placement, latencies, m, local_domain, params).ok())
        .collect();
    scored.sort_by(candidate_order);
    scored
}

/// The max-Q candidate of `local_domain` if its score beats the threshold.
pub fn select_candidate(
    graph: &AffinityGraph,
    placement: &Placement,
    services: &ServiceCatalog,
    latencies: &LatencyMatrix,
    local_domain: &DomainId,
    params: &ProposalParams,
) -> Option<CandidateScore> {
    ranked_candidates(graph, placement, services, latencies, local_domain, params)
        .into_iter()
        .next()
        .filter(|c| c.q_score > params.theta_proposal)
}

/// Every candidate in every domain whose score beats the threshold, best first.
pub fn qualifying_candidates(
    graph: &AffinityGraph,
    placement: &Placement,
    services: &ServiceCatalog,
    latencies: &LatencyMatrix,
    params: &ProposalParams,
) -> Vec<CandidateScore> {
    let mut all: Vec<CandidateScore> = placement
        .domains()
        .iter()
        .flat_map(|d| ranked_candidates(graph, placement, services, latencies, d, params))
        .filter(|c| c.q_score > params.theta_proposal)
        .collect();
    all.sort_by(candidate_order);
    all
}
