//! Scenario files: JSON schema, loading and validation.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::affinity::{
    oracle_optimal_placement, total_cross_domain_cost, AffinityGraph, DomainId, LatencyMatrix, Placement, ServiceCatalog, ServiceId,
    ServiceRecord,
};
use crate::error::{Error, Result};
use crate::node::{ClusterSetup, Params};
use crate::time::SimTime;

fn default_jitter() -> f64 {
    5.0
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub id: String,
    /// Maximum number of services the domain can host.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity: Option<usize>,
    /// Boot time of the domain's manager.
    #[serde(default)]
    pub start_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceSpec {
    pub id: String,
    pub domain: String,
    #[serde(default = "yes")]
    pub migratable: bool,
}

/// On-disk scenario, before validation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub domains: Vec<DomainSpec>,
    /// One-way link latency keyed `"A|B"`.
    #[serde(default)]
    pub latency_ms: BTreeMap<String, f64>,
    /// Half-width of the uniform jitter distribution.
    #[serde(default = "default_jitter")]
    pub jitter_ms: f64,
    #[serde(default)]
    pub drop_rate: f64,
    pub services: Vec<ServiceSpec>,
    #[serde(default)]
    pub affinity: Vec<(String, String, f64)>,
    #[serde(default)]
    pub params: Params,
    /// Gossip seeds; defaults to the first two domains.
    #[serde(default)]
    pub seeds: Vec<String>,
    pub duration_ms: f64,
    #[serde(default)]
    pub rng_seed: u64,
}

/// A validated scenario with its derived model objects.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub config: ScenarioConfig,
    /// Domains in file order.
    pub members: Vec<DomainId>,
    pub graph: AffinityGraph,
    pub services: ServiceCatalog,
    pub placement: Placement,
    pub latency: LatencyMatrix,
    pub capacities: BTreeMap<DomainId, usize>,
    pub seeds: Vec<DomainId>,
    pub start_times: BTreeMap<DomainId, SimTime>,
}

/// 1-based line of the first occurrence of `needle` in `text`.
pub(crate) fn line_of(text: &str, needle: &str) -> Option<usize> {
    text.lines().position(|l| l.contains(needle)).map(|i| i + 1)
}

/// Builds a validation error and locates it in `raw` when possible.
pub(crate) fn located(raw: Option<&str>, field: impl Into<String>, needle: &str, message: impl Into<String>) -> Error {
    Error::Validation {
        field: field.into(),
        line: raw.and_then(|t| line_of(t, needle)),
        message: message.into(),
    }
}

fn parse_error(e: serde_json::Error) -> Error {
    let message = e.to_string();
    // serde_json appends " at line L column C"; the line is reported separately.
    let trimmed = message.split(" at line ").next().unwrap_or(&message).to_owned();
    let field = trimmed
        .split('`')
        .nth(1)
        .filter(|_| trimmed.starts_with("unknown field") || trimmed.starts_with("missing field"))
        .unwrap_or("(document)")
        .to_owned();
    Error::Validation {
        field,
        line: (e.line() > 0).then_some(e.line()),
        message: trimmed,
    }
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(parse_error)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(self) -> Result<Scenario> {
        self.validate_with_source(None)
    }

    fn validate_with_source(self, raw: Option<&str>) -> Result<Scenario> {
        let err = |field: String, needle: &str, message: String| located(raw, field, needle, message);

        if self.domains.is_empty() {
            return Err(err("domains".into(), "\"domains\"", "at least one domain is required".into()));
        }
        let mut members = Vec::new();
        let mut capacities = BTreeMap::new();
        let mut start_times = BTreeMap::new();
        for (i, d) in self.domains.iter().enumerate() {
            let field = format!("domains[{i}].id");
            let needle = format!("\"{}\"", d.id);
            let id = DomainId::new(&d.id).map_err(|e| err(field.clone(), &needle, e.to_string()))?;
            if d.id.contains('|') {
                return Err(err(field, &needle, "domain ids may not contain '|'".into()));
            }
            if members.contains(&id) {
                return Err(err(field, &needle, format!("duplicate domain {}", d.id)));
            }
            if !(d.start_ms >= 0.0 && d.start_ms.is_finite()) {
                return Err(err(format!("domains[{i}].start_ms"), &needle, "must be non-negative".into()));
            }
            if let Some(cap) = d.capacity {
                capacities.insert(id.clone(), cap);
            }
            start_times.insert(id.clone(), SimTime::from_ms(d.start_ms));
            members.push(id);
        }
        let domain_set: BTreeSet<DomainId> = members.iter().cloned().collect();

        let mut latency = LatencyMatrix::new();
        let mut seen: BTreeMap<(DomainId, DomainId), f64> = BTreeMap::new();
        for (key, ms) in &self.latency_ms {
            let field = format!("latency_ms.{key}");
            let needle = format!("\"{key}\"");
            let Some((a, b)) = key.split_once('|') else {
                return Err(err(field, &needle, "key must have the form \"A|B\"".into()));
            };
            let (a, b) = match (DomainId::new(a), DomainId::new(b)) {
                (Ok(a), Ok(b)) if domain_set.contains(&a) && domain_set.contains(&b) => (a, b),
                _ => return Err(err(field, &needle, "unknown domain in latency key".into())),
            };
            if a == b {
                if *ms != 0.0 {
                    return Err(err(field, &needle, "diagonal latency must be 0".into()));
                }
                continue;
            }
            if !(ms.is_finite() && *ms >= 0.0) {
                return Err(err(field, &needle, "latency must be finite and non-negative".into()));
            }
            let pair = if a < b { (a.clone(), b.clone()) } else { (b.clone(), a.clone()) };
            if let Some(prev) = seen.insert(pair, *ms) {
                if prev != *ms {
                    return Err(err(field, &needle, format!("asymmetric latency: {prev} vs {ms}")));
                }
            }
            latency.set(&a, &b, *ms).map_err(|e| err(format!("latency_ms.{key}"), &needle, e.to_string()))?;
        }
        for (i, a) in members.iter().enumerate() {
            for b in &members[i + 1..] {
                if latency.get(a, b).is_err() {
                    return Err(err("latency_ms".into(), "\"latency_ms\"", format!("missing latency for {a}|{b}")));
                }
            }
        }
        if !(self.jitter_ms >= 0.0 && self.jitter_ms.is_finite()) {
            return Err(err("jitter_ms".into(), "\"jitter_ms\"", "must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.drop_rate) {
            return Err(err("drop_rate".into(), "\"drop_rate\"", "must lie in [0, 1]".into()));
        }

        let mut graph = AffinityGraph::new();
        let mut services = ServiceCatalog::new();
        let mut placement = Placement::new(members.iter().cloned());
        for (i, s) in self.services.iter().enumerate() {
            let needle = format!("\"{}\"", s.id);
            let id = ServiceId::new(&s.id).map_err(|e| err(format!("services[{i}].id"), &needle, e.to_string()))?;
            if services.contains_key(&id) {
                return Err(err(format!("services[{i}].id"), &needle, format!("duplicate service {}", s.id)));
            }
            let domain = DomainId::new(&s.domain)
                .ok()
                .filter(|d| domain_set.contains(d))
                .ok_or_else(|| err(format!("services[{i}].domain"), &needle, format!("unknown domain {}", s.domain)))?;
            graph.add_service(id.clone());
            placement
                .assign(id.clone(), domain)
                .map_err(|e| err(format!("services[{i}].domain"), &needle, e.to_string()))?;
            services.insert(
                id.clone(),
                ServiceRecord {
                    id,
                    migratable: s.migratable,
                },
            );
        }
        for (dom, cap) in &capacities {
            if placement.count_in(dom) > *cap {
                return Err(err(
                    "domains.capacity".into(),
                    &format!("\"{dom}\""),
                    format!("{dom} starts with more services than its capacity {cap}"),
                ));
            }
        }
        let mut edges = BTreeSet::new();
        for (i, (a, b, w)) in self.affinity.iter().enumerate() {
            let field = format!("affinity[{i}]");
            let needle = format!("\"{a}\", \"{b}\"");
            let (sa, sb) = match (ServiceId::new(a), ServiceId::new(b)) {
                (Ok(x), Ok(y)) if services.contains_key(&x) && services.contains_key(&y) => (x, y),
                _ => return Err(err(field, &needle, format!("unknown service in edge {a}-{b}"))),
            };
            let key = if sa < sb { (sa.clone(), sb.clone()) } else { (sb.clone(), sa.clone()) };
            if !edges.insert(key) {
                return Err(err(field, &needle, format!("duplicate edge {a}-{b}")));
            }
            graph.add_edge(&sa, &sb, *w).map_err(|e| err(field, &needle, e.to_string()))?;
        }

        self.params.validate().map_err(|e| match e {
            Error::Validation { field, message, .. } => {
                let key = field.rsplit('.').next().unwrap_or(&field).to_owned();
                err(field, &format!("\"{key}\""), message)
            }
            other => other,
        })?;

        let mut seeds = Vec::new();
        for (i, s) in self.seeds.iter().enumerate() {
            let id = DomainId::new(s)
                .ok()
                .filter(|d| domain_set.contains(d))
                .ok_or_else(|| err(format!("seeds[{i}]"), "\"seeds\"", format!("unknown seed {s}")))?;
            if !seeds.contains(&id) {
                seeds.push(id);
            }
        }
        if seeds.is_empty() {
            seeds = members.iter().take(2).cloned().collect();
        }
        if !(self.duration_ms > 0.0 && self.duration_ms.is_finite()) {
            return Err(err("duration_ms".into(), "\"duration_ms\"", "must be positive".into()));
        }

        Ok(Scenario {
            config: self,
            members,
            graph,
            services,
            placement,
            latency,
            capacities,
            seeds,
            start_times,
        })
    }
}

impl Scenario {
    /// Parses and validates; errors carry the offending field and line.
    pub fn from_json(text: &str) -> Result<Self> {
        ScenarioConfig::from_json(text)?.validate_with_source(Some(text))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_json(&text)
    }

    pub fn rng_seed(&self) -> u64 {
        self.config.rng_seed
    }

    pub fn duration(&self) -> SimTime {
        SimTime::from_ms(self.config.duration_ms)
    }

    pub fn params(&self) -> &Params {
        &self.config.params
    }

    pub fn initial_cost(&self) -> f64 {
        total_cross_domain_cost(&self.graph, &self.placement).expect("every service is placed")
    }

    /// Non-migratable services pinned to their initial domain.
    pub fn pinned(&self) -> BTreeMap<ServiceId, DomainId> {
        self.services
            .values()
            .filter(|s| !s.migratable)
            .filter_map(|s| self.placement.domain_of(&s.id).map(|d| (s.id.clone(), d.clone())))
            .collect()
    }

    /// Exhaustive optimum respecting pinned services.
    pub fn oracle(&self) -> Result<(Placement, f64)> {
        oracle_optimal_placement(&self.graph, self.placement.domains(), &self.pinned())
    }

    pub fn cluster_setup(&self, rng_seed: u64) -> ClusterSetup {
        let params = self.config.params.clone();
        ClusterSetup {
            members: self.members.clone(),
            graph: self.graph.clone(),
            services: self.services.clone(),
            initial_placement: self.placement.clone(),
            latency_prior: self.latency.clone(),
            capacities: self.capacities.clone(),
            proposal_params: params.proposal().expect("validated"),
            vote_params: params.vote().expect("validated"),
            params,
            seeds: self.seeds.clone(),
            rng_seed,
        }
    }
}
