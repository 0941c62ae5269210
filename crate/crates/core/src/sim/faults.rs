//! Timed fault injection: crashes, restarts, partitions and loss bursts.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::affinity::DomainId;
use crate::error::{Error, Result};
use crate::rng::SimRng;
use crate::sim::network::{DropWindow, PartitionWindow};
use crate::sim::scenario::located;
use crate::time::SimTime;

/// Resolves to the live leader with the highest term at fire time.
pub const LEADER_SELECTOR: &str = "@leader";
/// Resolves to the most recently crashed node.
pub const LAST_CRASHED_SELECTOR: &str = "@last_crashed";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case", deny_unknown_fields)]
pub enum FaultAction {
    Crash {
        at_ms: f64,
        node: String,
    },
    Restart {
        at_ms: f64,
        node: String,
    },
    Partition {
        side_a: Vec<String>,
        side_b: Vec<String>,
        start_ms: f64,
        end_ms: f64,
    },
    DropRateOverride {
        link: String,
        rate: f64,
        start_ms: f64,
        end_ms: f64,
    },
}

impl FaultAction {
    fn start_ms(&self) -> f64 {
        match self {
            FaultAction::Crash { at_ms, .. } | FaultAction::Restart { at_ms, .. } => *at_ms,
            FaultAction::Partition { start_ms, .. } | FaultAction::DropRateOverride { start_ms, .. } => *start_ms,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSchedule {
    pub actions: Vec<FaultAction>,
}

/// Node reference inside a crash or restart.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum NodeRef {
    Named(DomainId),
    Leader,
    LastCrashed,
}

/// Crash or restart ready to be queued by the harness.
#[derive(Clone, Debug, PartialEq)]
pub enum NodeFault {
    Crash(NodeRef),
    Restart(NodeRef),
}

/// Validated schedule split into what the harness and the network need.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CompiledFaults {
    pub node_faults: Vec<(SimTime, NodeFault)>,
    pub partitions: Vec<PartitionWindow>,
    pub drop_windows: Vec<DropWindow>,
}

fn window(start_ms: f64, end_ms: f64, field: &str, raw: Option<&str>) -> Result<(SimTime, SimTime)> {
    if !(start_ms >= 0.0 && end_ms > start_ms && end_ms.is_finite()) {
        return Err(located(raw, field, "\"start_ms\"", "window needs 0 <= start_ms < end_ms"));
    }
    Ok((SimTime::from_ms(start_ms), SimTime::from_ms(end_ms)))
}

impl FaultSchedule {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Validation {
            field: "faults".into(),
            line: (e.line() > 0).then_some(e.line()),
            message: e.to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, String)> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
        Ok((Self::from_json(&text)?, text))
    }

    pub fn compile(&self, members: &[DomainId]) -> Result<CompiledFaults> {
        self.compile_with_source(members, None)
    }

    /// Checks references and ordering rules against the scenario's members.
    pub fn compile_with_source(&self, members: &[DomainId], raw: Option<&str>) -> Result<CompiledFaults> {
        let known: BTreeSet<&DomainId> = members.iter().collect();
        let resolve = |name: &str, i: usize| -> Result<DomainId> {
            DomainId::new(name)
                .ok()
                .filter(|d| known.contains(d))
                .ok_or_else(|| located(raw, format!("actions[{i}].node"), &format!("\"{name}\""), format!("unknown node {name}")))
        };
        let mut out = CompiledFaults::default();
        let mut order: Vec<(usize, &FaultAction)> = self.actions.iter().enumerate().collect();
        order.sort_by(|a, b| a.1.start_ms().total_cmp(&b.1.start_ms()).then(a.0.cmp(&b.0)));

        let mut down: BTreeSet<DomainId> = BTreeSet::new();
        let mut any_crash = false;
        let mut selector_crash = false;
        for (i, action) in order {
            match action {
                FaultAction::Crash { at_ms, node } | FaultAction::Restart { at_ms, node } => {
                    if !(*at_ms >= 0.0 && at_ms.is_finite()) {
                        return Err(located(raw, format!("actions[{i}].at_ms"), "\"at_ms\"", "must be non-negative"));
                    }
                    let at = SimTime::from_ms(*at_ms);
                    let crash = matches!(action, FaultAction::Crash { .. });
                    let target = match node.as_str() {
                        LEADER_SELECTOR => NodeRef::Leader,
                        LAST_CRASHED_SELECTOR => NodeRef::LastCrashed,
                        name => NodeRef::Named(resolve(name, i)?),
                    };
                    if crash {
                        any_crash = true;
                        match &target {
                            NodeRef::Named(d) => {
                                down.insert(d.clone());
                            }
                            _ => selector_crash = true,
                        }
                        if target == NodeRef::LastCrashed {
                            return Err(located(raw, format!("actions[{i}].node"), &format!("\"{node}\""), "@last_crashed only applies to restarts"));
                        }
                        out.node_faults.push((at, NodeFault::Crash(target)));
                    } else {
                        let ok = match &target {
                            NodeRef::Named(d) => down.remove(d) || selector_crash,
                            NodeRef::LastCrashed => any_crash,
                            NodeRef::Leader => false,
                        };
                        if !ok {
                            return Err(located(
                                raw,
                                format!("actions[{i}].node"),
                                &format!("\"{node}\""),
                                "restart must follow a crash of the same node",
                            ));
                        }
                        out.node_faults.push((at, NodeFault::Restart(target)));
                    }
                }
                FaultAction::Partition {
                    side_a,
                    side_b,
                    start_ms,
                    end_ms,
                } => {
                    let field = format!("actions[{i}]");
                    let (start, end) = window(*start_ms, *end_ms, &field, raw)?;
                    let a: BTreeSet<DomainId> = side_a.iter().map(|n| resolve(n, i)).collect::<Result<_>>()?;
                    let b: BTreeSet<DomainId> = side_b.iter().map(|n| resolve(n, i)).collect::<Result<_>>()?;
                    if a.is_empty() || b.is_empty() || !a.is_disjoint(&b) {
                        return Err(located(raw, field, "\"side_a\"", "partition sides must be non-empty and disjoint"));
                    }
                    let p = PartitionWindow {
                        side_a: a,
                        side_b: b,
                        start,
                        end,
                    };
                    let overlaps = out.partitions.iter().any(|q| {
                        q.start < p.end
                            && p.start < q.end
                            && p.side_a.iter().any(|x| p.side_b.iter().any(|y| q.cuts(x, y, q.start)))
                    });
                    if overlaps {
                        return Err(located(raw, field, "\"side_a\"", "partitions overlap on a shared link"));
                    }
                    out.partitions.push(p);
                }
                FaultAction::DropRateOverride {
                    link,
                    rate,
                    start_ms,
                    end_ms,
                } => {
                    let field = format!("actions[{i}].link");
                    let (start, end) = window(*start_ms, *end_ms, &field, raw)?;
                    let Some((a, b)) = link.split_once('|') else {
                        return Err(located(raw, field, link, "link must have the form \"A|B\""));
                    };
                    let (a, b) = (resolve(a, i)?, resolve(b, i)?);
                    if !(0.0..=1.0).contains(rate) {
                        return Err(located(raw, format!("actions[{i}].rate"), link, "rate must lie in [0, 1]"));
                    }
                    out.drop_windows.push(DropWindow {
                        a,
                        b,
                        rate: *rate,
                        start,
                        end,
                    });
                }
            }
        }
        Ok(out)
    }

    /// Random crash, restart and partition schedule with at most
    /// `max_down` nodes down at once. Every crashed node is restarted
    /// before `duration_ms`.
    pub fn random(rng: &mut SimRng, members: &[DomainId], duration_ms: f64, max_down: usize) -> Self {
        let mut actions = Vec::new();
        let mut down: Vec<DomainId> = Vec::new();
        let mut t = rng.random_range(200.0..800.0);
        let mut partition_free_at = 0.0;
        let horizon = duration_ms * 0.8;
        while t < horizon {
            let roll: f64 = rng.random();
            if roll < 0.4 && down.len() < max_down {
                let up: Vec<&DomainId> = members.iter().filter(|m| !down.contains(m)).collect();
                if let Some(victim) = up.choose(rng) {
                    actions.push(FaultAction::Crash {
                        at_ms: t,
                        node: victim.to_string(),
                    });
                    down.push((*victim).clone());
                }
            } else if roll < 0.7 && !down.is_empty() {
                let i = rng.random_range(0..down.len());
                let node = down.swap_remove(i);
                actions.push(FaultAction::Restart {
                    at_ms: t,
                    node: node.to_string(),
                });
            } else if t >= partition_free_at && members.len() >= 2 {
                let mut shuffled = members.to_vec();
                for i in (1..shuffled.len()).rev() {
                    shuffled.swap(i, rng.random_range(0..=i));
                }
                let cut = rng.random_range(1..shuffled.len());
                let end = t + rng.random_range(200.0..1_500.0);
                actions.push(FaultAction::Partition {
                    side_a: shuffled[..cut].iter().map(|d| d.to_string()).collect(),
                    side_b: shuffled[cut..].iter().map(|d| d.to_string()).collect(),
                    start_ms: t,
                    end_ms: end,
                });
                partition_free_at = end;
            }
            t += rng.random_range(150.0..1_200.0);
        }
        for (k, node) in down.into_iter().enumerate() {
            actions.push(FaultAction::Restart {
                at_ms: horizon + 10.0 * (k + 1) as f64,
                node: node.to_string(),
            });
        }
        Self { actions }
    }
}
