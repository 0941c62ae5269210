//! Affinity graph, placement state and the cross-domain cost objective.
//!
//! Affinities are non-negative weights on unordered service pairs. A
//! [`Placement`] assigns every service to exactly one domain; the quantity
//! being minimised is the total weight of edges whose endpoints live in
//! different domains.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(try_from = "String", into = "String")]
        pub struct $name(Arc<str>);

        impl $name {
            pub fn new(id: impl AsRef<str>) -> Result<Self> {
                let id = id.as_ref();
                if id.is_empty() {
                    return Err(Error::InvalidArgument(concat!(stringify!($name), " must be non-empty").into()));
                }
                Ok($name(Arc::from(id)))
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl TryFrom<String> for $name {
            type Error = Error;

            fn try_from(s: String) -> Result<Self> {
                $name::new(s)
            }
        }

        impl From<$name> for String {
            fn from(id: $name) -> String {
                id.0.to_string()
            }
        }

        impl From<&str> for $name {
            /// Panics on an empty string; intended for literals.
            fn from(s: &str) -> Self {
                $name::new(s).expect("identifier literal must be non-empty")
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }
    };
}

string_id!(
    /// Microservice identifier.
    ServiceId
);
string_id!(
    /// Computational domain identifier. Each domain is managed by one LDM,
    /// so this also names the node.
    DomainId
);

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceRecord {
    pub id: ServiceId,
    pub migratable: bool,
}

/// Service catalog keyed by id.
pub type ServiceCatalog = BTreeMap<ServiceId, ServiceRecord>;

/// Weighted undirected graph over services.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AffinityGraph {
    adjacency: BTreeMap<ServiceId, BTreeMap<ServiceId, f64>>,
}

impl AffinityGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_service(&mut self, id: ServiceId) {
        self.adjacency.entry(id).or_default();
    }

    /// Inserts or replaces the edge `a`–`b`.
    pub fn add_edge(&mut self, a: &ServiceId, b: &ServiceId, weight: f64) -> Result<()> {
        if a == b {
            return Err(Error::InvalidArgument(format!("self-edge on service {a}")));
        }
        if !weight.is_finite() || weight < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "affinity {a}-{b} must be finite and non-negative, got {weight}"
            )));
        }
        self.adjacency.entry(a.clone()).or_default().insert(b.clone(), weight);
        self.adjacency.entry(b.clone()).or_default().insert(a.clone(), weight);
        Ok(())
    }

    pub fn contains(&self, id: &ServiceId) -> bool {
        self.adjacency.contains_key(id)
    }

    pub fn services(&self) -> impl Iterator<Item = &ServiceId> {
        self.adjacency.keys()
    }

    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    pub fn weight(&self, a: &ServiceId, b: &ServiceId) -> Option<f64> {
        self.adjacency.get(a)?.get(b).copied()
    }

    pub fn neighbors<'a>(&'a self, id: &ServiceId) -> impl Iterator<Item = (&'a ServiceId, f64)> + 'a {
        self.adjacency
            .get(id)
            .into_iter()
            .flat_map(|n| n.iter().map(|(v, w)| (v, *w)))
    }

    /// Each undirected edge once, with `a < b`.
    pub fn edges(&self) -> impl Iterator<Item = (&ServiceId, &ServiceId, f64)> {
        self.adjacency.iter().flat_map(|(a, n)| {
            n.iter().filter(move |(b, _)| a < *b).map(move |(b, w)| (a, b, *w))
        })
    }

    pub fn incident_weight(&self, id: &ServiceId) -> f64 {
        self.neighbors(id).map(|(_, w)| w).fold(0.0, |acc, w| acc + w)
    }
}

/// Total assignment of services to domains.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    domains: BTreeSet<DomainId>,
    assignment: BTreeMap<ServiceId, DomainId>,
}

impl Placement {
    pub fn new(domains: impl IntoIterator<Item = DomainId>) -> Self {
        Self {
            domains: domains.into_iter().collect(),
            assignment: BTreeMap::new(),
        }
    }

    pub fn assign(&mut self, service: ServiceId, domain: DomainId) -> Result<()> {
        if !self.domains.contains(&domain) {
            return Err(Error::InvalidArgument(format!("unknown domain {domain}")));
        }
        self.assignment.insert(service, domain);
        Ok(())
    }

    pub fn domain_of(&self, service: &ServiceId) -> Option<&DomainId> {
        self.assignment.get(service)
    }

    pub fn domains(&self) -> &BTreeSet<DomainId> {
        &self.domains
    }

    pub fn has_domain(&self, domain: &DomainId) -> bool {
        self.domains.contains(domain)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ServiceId, &DomainId)> {
        self.assignment.iter()
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn services_in<'a>(&'a self, domain: &'a DomainId) -> impl Iterator<Item = &'a ServiceId> + 'a {
        self.assignment.iter().filter(move |(_, d)| *d == domain).map(|(s, _)| s)
    }

    pub fn count_in(&self, domain: &DomainId) -> usize {
        self.services_in(domain).count()
    }

    /// Services whose domain differs between `self` and `other`.
    pub fn diff<'a>(&'a self, other: &'a Placement) -> Vec<(&'a ServiceId, &'a DomainId, &'a DomainId)> {
        self.assignment
            .iter()
            .filter_map(|(s, d)| match other.domain_of(s) {
                Some(o) if o != d => Some((s, d, o)),
                _ => None,
            })
            .collect()
    }
}

fn require_service<'a>(placement: &'a Placement, m: &ServiceId) -> Result<&'a DomainId> {
    placement
        .domain_of(m)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown service {m}")))
}

/// Sum of affinities between `m` and its neighbours currently placed in `c`.
pub fn cluster_affinity(graph: &AffinityGraph, placement: &Placement, m: &ServiceId, c: &DomainId) -> Result<f64> {
    if !graph.contains(m) {
        return Err(Error::InvalidArgument(format!("unknown service {m}")));
    }
    if !placement.has_domain(c) {
        return Err(Error::InvalidArgument(format!("unknown domain {c}")));
    }
    Ok(graph
        .neighbors(m)
        .filter(|(v, _)| placement.domain_of(v) == Some(c))
        .map(|(_, w)| w)
        .fold(0.0, |acc, w| acc + w))
}

/// Cluster affinity of `m` towards every domain, in domain order.
pub fn affinity_profile(graph: &AffinityGraph, placement: &Placement, m: &ServiceId) -> Result<BTreeMap<DomainId, f64>> {
    if !graph.contains(m) {
        return Err(Error::InvalidArgument(format!("unknown service {m}")));
    }
    let mut profile: BTreeMap<DomainId, f64> = placement.domains().iter().map(|d| (d.clone(), 0.0)).collect();
    for (v, w) in graph.neighbors(m) {
        if let Some(d) = placement.domain_of(v) {
            *profile.get_mut(d).expect("placement domains are closed") += w;
        }
    }
    Ok(profile)
}

/// Total weight of edges crossing domain boundaries.
pub fn total_cross_domain_cost(graph: &AffinityGraph, placement: &Placement) -> Result<f64> {
    let mut cost = 0.0;
    for (a, b, w) in graph.edges() {
        let da = placement
            .domain_of(a)
            .ok_or_else(|| Error::InvalidState(format!("service {a} missing from placement")))?;
        let db = placement
            .domain_of(b)
            .ok_or_else(|| Error::InvalidState(format!("service {b} missing from placement")))?;
        if da != db {
            cost += w;
        }
    }
    for s in graph.services() {
        if placement.domain_of(s).is_none() {
            return Err(Error::InvalidState(format!("service {s} missing from placement")));
        }
    }
    Ok(cost)
}

/// Copy of `placement` with `m` moved to `target`.
pub fn apply_migration(placement: &Placement, m: &ServiceId, target: &DomainId) -> Result<Placement> {
    require_service(placement, m)?;
    let mut next = placement.clone();
    next.assign(m.clone(), target.clone())?;
    Ok(next)
}

/// Largest number of free services the exhaustive oracle will enumerate.
pub const ORACLE_FREE_SERVICE_BOUND: usize = 16;

/// Exact minimum-cost placement by exhaustive search.
///
/// Services absent from `fixed` are free. Free services are enumerated in id
/// order and each tries domains in id order; the first placement reaching the
/// minimum wins, which makes ties resolve lexicographically. Partial
/// assignments whose cost already matches the incumbent are pruned, which
/// does not change the result since costs only grow.
pub fn oracle_optimal_placement(
    graph: &AffinityGraph,
    domains: &BTreeSet<DomainId>,
    fixed: &BTreeMap<ServiceId, DomainId>,
) -> Result<(Placement, f64)> {
    if domains.is_empty() {
        return Err(Error::InvalidArgument("oracle needs at least one domain".into()));
    }
    for (s, d) in fixed {
        if !graph.contains(s) {
            return Err(Error::InvalidArgument(format!("fixed service {s} not in graph")));
        }
        if !domains.contains(d) {
            return Err(Error::InvalidArgument(format!("fixed service {s} on unknown domain {d}")));
        }
    }
    let free: Vec<ServiceId> = graph.services().filter(|s| !fixed.contains_key(*s)).cloned().collect();
    if free.len() > ORACLE_FREE_SERVICE_BOUND {
        return Err(Error::CapacityExceeded(format!(
            "{} free services exceed the exhaustive bound of {}",
            free.len(),
            ORACLE_FREE_SERVICE_BOUND
        )));
    }

    let domain_list: Vec<&DomainId> = domains.iter().collect();
    let index: BTreeMap<&ServiceId, usize> = free.iter().enumerate().map(|(i, s)| (s, i)).collect();

    // Cost contributed when free[i] lands on domain d: its edges towards fixed
    // services and towards free services enumerated earlier.
    let fixed_cost: Vec<Vec<f64>> = free
        .iter()
        .map(|s| {
            domain_list
                .iter()
                .map(|d| {
                    graph
                        .neighbors(s)
                        .filter_map(|(v, w)| fixed.get(v).filter(|fd| fd != d).map(|_| w))
                        .fold(0.0, |acc, w| acc + w)
                })
                .collect()
        })
        .collect();
    let earlier: Vec<Vec<(usize, f64)>> = free
        .iter()
        .enumerate()
        .map(|(i, s)| {
            graph
                .neighbors(s)
                .filter_map(|(v, w)| index.get(v).filter(|j| **j < i).map(|j| (*j, w)))
                .collect()
        })
        .collect();
    let base: f64 = graph
        .edges()
        .filter(|(a, b, _)| matches!((fixed.get(*a), fixed.get(*b)), (Some(x), Some(y)) if x != y))
        .map(|(_, _, w)| w)
        .fold(0.0, |acc, w| acc + w);

    struct Search<'a> {
        fixed_cost: &'a [Vec<f64>],
        earlier: &'a [Vec<(usize, f64)>],
        domains: usize,
        current: Vec<usize>,
        best: Option<(f64, Vec<usize>)>,
    }

    impl Search<'_> {
        fn descend(&mut self, i: usize, partial: f64) {
            if let Some((best, _)) = &self.best {
                if partial >= *best {
                    return;
                }
            }
            if i == self.current.len() {
                self.best = Some((partial, self.current.clone()));
                return;
            }
            for d in 0..self.domains {
                let step = self.fixed_cost[i][d]
                    + self.earlier[i]
                        .iter()
                        .filter(|(j, _)| self.current[*j] != d)
                        .map(|(_, w)| w)
                        .sum::<f64>();
                self.current[i] = d;
                self.descend(i + 1, partial + step);
            }
        }
    }

    let mut search = Search {
        fixed_cost: &fixed_cost,
        earlier: &earlier,
        domains: domain_list.len(),
        current: vec![0; free.len()],
        best: None,
    };
    search.descend(0, base);
    let (_, choice) = search.best.expect("at least one assignment exists");

    let mut placement = Placement::new(domains.iter().cloned());
    for (s, d) in fixed {
        placement.assign(s.clone(), d.clone())?;
    }
    for (s, d) in free.iter().zip(choice) {
        placement.assign(s.clone(), domain_list[d].clone())?;
    }
    let cost = total_cross_domain_cost(graph, &placement)?;
    Ok((placement, cost))
}

/// Symmetric inter-domain latency table in milliseconds.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LatencyMatrix {
    entries: BTreeMap<(DomainId, DomainId), f64>,
}

impl LatencyMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sets both directions of the link `a`–`b`.
    pub fn set(&mut self, a: &DomainId, b: &DomainId, ms: f64) -> Result<()> {
        if !ms.is_finite() || ms < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "latency {a}|{b} must be finite and non-negative, got {ms}"
            )));
        }
        if a == b {
            if ms != 0.0 {
                return Err(Error::InvalidArgument(format!("latency {a}|{a} must be 0")));
            }
            return Ok(());
        }
        self.entries.insert((a.clone(), b.clone()), ms);
        self.entries.insert((b.clone(), a.clone()), ms);
        Ok(())
    }

    pub fn get(&self, a: &DomainId, b: &DomainId) -> Result<f64> {
        if a == b {
            return Ok(0.0);
        }
        self.entries
            .get(&(a.clone(), b.clone()))
            .copied()
            .ok_or_else(|| Error::InvalidState(format!("no latency entry for {a}|{b}")))
    }

    pub fn max_entry(&self) -> f64 {
        self.entries.values().copied().fold(0.0, f64::max)
    }

    /// Mean of the distinct off-diagonal links.
    pub fn mean_entry(&self) -> Option<f64> {
        let links: Vec<f64> = self.links().map(|(_, _, ms)| ms).collect();
        (!links.is_empty()).then(|| links.iter().sum::<f64>() / links.len() as f64)
    }

    /// Each link once, with `a < b`.
    pub fn links(&self) -> impl Iterator<Item = (&DomainId, &DomainId, f64)> {
        self.entries.iter().filter(|((a, b), _)| a < b).map(|((a, b), ms)| (a, b, *ms))
    }

    /// True when every unordered pair of `domains` has an entry.
    pub fn covers<'a>(&self, domains: impl IntoIterator<Item = &'a DomainId> + Clone) -> bool {
        domains.clone().into_iter().all(|a| {
            domains
                .clone()
                .into_iter()
                .all(|b| a == b || self.entries.contains_key(&(a.clone(), b.clone())))
        })
    }
}

impl Serialize for LatencyMatrix {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut map = serializer.serialize_map(None)?;
        for (a, b, ms) in self.links() {
            map.serialize_entry(&format!("{a}|{b}"), &ms)?;
        }
        map.end()
    }
}
