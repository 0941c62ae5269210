//! Cluster-size sweeps over a scenario template.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::{mean_stddev, registration_stats, voting_latency};
use crate::rng::mix64;
use crate::sim::faults::CompiledFaults;
use crate::sim::run;
use crate::sim::scenario::{DomainSpec, Scenario, ScenarioConfig, ServiceSpec};

/// Boot time of the late joiner in registration sweeps.
pub const LATE_JOIN_MS: f64 = 2_000.0;
/// Observation window after the late joiner boots.
pub const REGISTRATION_WINDOW_MS: f64 = 4_000.0;
/// Run length of voting sweeps.
pub const VOTING_DURATION_MS: f64 = 8_000.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMetric {
    /// Delay until every node recognises a late joiner.
    Registration,
    /// Delay from proposal creation to commit.
    Voting,
}

impl FromStr for SweepMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "registration" => Ok(SweepMetric::Registration),
            "voting" => Ok(SweepMetric::Voting),
            other => Err(Error::validation("metric", format!("expected registration or voting, got {other}"))),
        }
    }
}

impl fmt::Display for SweepMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepMetric::Registration => "registration",
            SweepMetric::Voting => "voting",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub metric: SweepMetric,
    pub n: usize,
    pub reps: usize,
    /// Number of measurements aggregated; a voting rep contributes one per
    /// committed proposal.
    pub samples: usize,
    pub mean_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    pub stddev_ms: f64,
    /// Mean of the per-repetition means.
    pub rep_mean_ms: f64,
    /// Registration only: mean delay until the first observer.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_observer_ms: Option<f64>,
    /// Registration only: fraction of first recognitions made by a seed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed_first_fraction: Option<f64>,
}

fn domain_name(i: usize) -> String {
    format!("ldm-{:02}", i + 1)
}

/// Derives an `n`-domain scenario from `template`.
///
/// Every link gets the template's mean link latency; services keep their
/// template order and land on domain `i mod n`; affinity and parameters are
/// copied. Registration runs boot the last domain late.
pub fn generate(template: &Scenario, n: usize, metric: SweepMetric, rep: usize) -> Result<Scenario> {
    if n == 0 {
        return Err(Error::validation("sizes", "cluster size must be at least 1"));
    }
    let link = template.latency.mean_entry().unwrap_or(50.0);
    let mut domains: Vec<DomainSpec> = (0..n)
        .map(|i| DomainSpec {
            id: domain_name(i),
            capacity: None,
            start_ms: 0.0,
        })
        .collect();
    let duration_ms = match metric {
        SweepMetric::Registration => {
            domains.last_mut().expect("n >= 1").start_ms = LATE_JOIN_MS;
            LATE_JOIN_MS + REGISTRATION_WINDOW_MS
        }
        SweepMetric::Voting => VOTING_DURATION_MS,
    };
    let mut latency_ms = BTreeMap::new();
    for a in 0..n {
        for b in a + 1..n {
            latency_ms.insert(format!("{}|{}", domain_name(a), domain_name(b)), link);
        }
    }
    let services = template
        .config
        .services
        .iter()
        .enumerate()
        .map(|(i, s)| ServiceSpec {
            id: s.id.clone(),
            domain: domain_name(i % n),
            migratable: s.migratable,
        })
        .collect();
    let seed = mix64(template.rng_seed() ^ mix64(((n as u64) << 32) | rep as u64));
    ScenarioConfig {
        domains,
        latency_ms,
        jitter_ms: template.config.jitter_ms,
        drop_rate: template.config.drop_rate,
        services,
        affinity: template.config.affinity.clone(),
        params: template.config.params.clone(),
        seeds: (0..n.min(2)).map(domain_name).collect(),
        duration_ms,
        rng_seed: seed,
    }
    .validate()
}

/// Measurements of one repetition, plus first-observer data for
/// registration runs.
struct RepSample {
    values: Vec<f64>,
    first_ms: Option<f64>,
    seed_first: Option<bool>,
}

fn measure(scenario: &Scenario, metric: SweepMetric) -> Result<RepSample> {
    let out = run(scenario, &CompiledFaults::default(), None)?;
    if let Some((_, v)) = out.violations.first() {
        return Err(Error::InvalidState(format!("safety violation during sweep: {v}")));
    }
    match metric {
        SweepMetric::Registration => {
            let late = scenario.members.last().expect("n >= 1");
            let stats = registration_stats(&out.events, &scenario.members);
            let s = stats
                .iter()
                .find(|s| &s.node == late)
                .ok_or_else(|| Error::InvalidState(format!("{late} never started")))?;
            if !s.complete {
                return Err(Error::InvalidState(format!(
                    "{late} recognised by {} of {} peers within the window",
                    s.observers, s.expected_observers
                )));
            }
            Ok(RepSample {
                values: vec![s.max_ms],
                first_ms: Some(s.min_ms),
                seed_first: s.first_observer.as_ref().map(|d| scenario.seeds.contains(d)),
            })
        }
        SweepMetric::Voting => {
            let v = voting_latency(&out.events);
            if v.durations.is_empty() {
                return Err(Error::InvalidState(format!("no proposal committed with n = {}", scenario.members.len())));
            }
            Ok(RepSample {
                values: v.durations.into_iter().map(|(_, d)| d).collect(),
                first_ms: None,
                seed_first: None,
            })
        }
    }
}

/// Runs `reps` repetitions per size and aggregates them.
pub fn sweep(template: &Scenario, sizes: &[usize], reps: usize, metric: SweepMetric) -> Result<Vec<SweepRow>> {
    if reps == 0 {
        return Err(Error::validation("reps", "at least one repetition is required"));
    }
    sizes
        .iter()
        .map(|&n| {
            let samples: Vec<RepSample> = (0..reps)
                .map(|rep| generate(template, n, metric, rep).and_then(|s| measure(&s, metric)))
                .collect::<Result<_>>()?;
            let all: Vec<f64> = samples.iter().flat_map(|s| s.values.iter().copied()).collect();
            let rep_means: Vec<f64> = samples.iter().map(|s| mean_stddev(&s.values).0).collect();
            let (mean, sd) = mean_stddev(&all);
            let firsts: Vec<f64> = samples.iter().filter_map(|s| s.first_ms).collect();
            let seed_first: Vec<bool> = samples.iter().filter_map(|s| s.seed_first).collect();
            Ok(SweepRow {
                metric,
                n,
                reps,
                samples: all.len(),
                mean_ms: mean,
                min_ms: all.iter().copied().fold(f64::INFINITY, f64::min),
                max_ms: all.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                stddev_ms: sd,
                rep_mean_ms: mean_stddev(&rep_means).0,
                first_observer_ms: (!firsts.is_empty()).then(|| mean_stddev(&firsts).0),
                seed_first_fraction: (!seed_first.is_empty())
                    .then(|| seed_first.iter().filter(|b| **b).count() as f64 / seed_first.len() as f64),
            })
        })
        .collect()
}

/// Writes the table as CSV with a header row.
pub fn write_csv<W: Write>(rows: &[SweepRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "metric",
        "n",
        "reps",
        "samples",
        "mean_ms",
        "min_ms",
        "max_ms",
        "stddev_ms",
        "rep_mean_ms",
        "first_observer_ms",
        "seed_first_fraction",
    ])
    .map_err(|e| Error::Io(e.to_string()))?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.3}")).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.metric.to_string(),
            r.n.to_string(),
            r.reps.to_string(),
            r.samples.to_string(),
            format!("{:.3}", r.mean_ms),
            format!("{:.3}", r.min_ms),
            format!("{:.3}", r.max_ms),
            format!("{:.3}", r.stddev_ms),
            format!("{:.3}", r.rep_mean_ms),
            opt(r.first_observer_ms),
            opt(r.seed_first_fraction),
        ])
        .map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// True when `values` never decreases, allowing at most one dip of at most
/// `tolerance` relative to its predecessor.
pub fn non_decreasing_within(values: &[f64], tolerance: f64) -> bool {
    let dips: Vec<f64> = values
        .windows(2)
        .filter(|w| w[1] < w[0])
        .map(|w| (w[0] - w[1]) / w[0])
        .collect();
    dips.is_empty() || (dips.len() == 1 && dips[0] <= tolerance)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trend_tolerance() {
        assert!(non_decreasing_within(&[1.0, 2.0, 2.0, 3.0], 0.05));
        assert!(non_decreasing_within(&[1.0, 2.0, 1.95, 3.0], 0.05));
        assert!(!non_decreasing_within(&[1.0, 2.0, 1.8, 3.0], 0.05));
        assert!(!non_decreasing_within(&[1.0, 0.99, 1.5, 1.49], 0.05));
    }

    #[test]
    fn metric_parses() {
        assert_eq!("voting".parse::<SweepMetric>().unwrap(), SweepMetric::Voting);
        assert!("latency".parse::<SweepMetric>().is_err());
    }
}
