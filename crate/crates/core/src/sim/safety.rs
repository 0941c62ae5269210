//! Online checker for the consensus safety properties.

use std::collections::BTreeMap;

use crate::affinity::DomainId;
use crate::raft::{LogEntry, PersistentState, Term};
use crate::time::SimTime;

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    /// Two leaders in one term.
    ElectionSafety { term: Term, first: DomainId, second: DomainId },
    /// Two logs agree on `(index, term)` but differ somewhere before.
    LogMatching { a: DomainId, b: DomainId, index: u64 },
    /// A committed entry was lost or replaced.
    Durability { node: DomainId, index: u64, detail: String },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::ElectionSafety { term, first, second } => write!(f, "election safety: {first} and {second} both lead term {term}"),
            Violation::LogMatching { a, b, index } => write!(f, "log matching: {a} and {b} diverge at or before index {index}"),
            Violation::Durability { node, index, detail } => write!(f, "durability: {node} index {index}: {detail}"),
        }
    }
}

#[derive(Debug, Default)]
pub struct SafetyMonitor {
    leaders: BTreeMap<Term, DomainId>,
    committed: BTreeMap<u64, LogEntry>,
    seen_commit: BTreeMap<DomainId, u64>,
    violations: Vec<(SimTime, Violation)>,
}

impl SafetyMonitor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn violations(&self) -> &[(SimTime, Violation)] {
        &self.violations
    }

    pub fn committed(&self) -> &BTreeMap<u64, LogEntry> {
        &self.committed
    }

    /// Records a violation detected outside the monitor.
    pub fn report(&mut self, now: SimTime, v: Violation) {
        self.flag(now, v);
    }

    fn flag(&mut self, now: SimTime, v: Violation) {
        if !self.violations.iter().any(|(_, seen)| *seen == v) {
            self.violations.push((now, v));
        }
    }

    /// Observes one node after it processed an input.
    pub fn observe(&mut self, now: SimTime, node: &DomainId, is_leader: bool, state: &PersistentState) {
        let term = state.current_term;
        if is_leader {
            match self.leaders.get(&term) {
                Some(first) if first != node => {
                    let first = first.clone();
                    self.flag(
                        now,
                        Violation::ElectionSafety {
                            term,
                            first,
                            second: node.clone(),
                        },
                    );
                }
                Some(_) => {}
                None => {
                    self.leaders.insert(term, node.clone());
                    // A new leader must hold every committed entry.
                    self.check_holds_committed(now, node, state);
                }
            }
        }
        let seen = self.seen_commit.get(node).copied().unwrap_or(0);
        if state.commit_index > seen {
            for index in seen + 1..=state.commit_index {
                let Some(entry) = state.entry(index) else {
                    self.flag(
                        now,
                        Violation::Durability {
                            node: node.clone(),
                            index,
                            detail: "commit index beyond log".into(),
                        },
                    );
                    break;
                };
                match self.committed.get(&index) {
                    Some(prev) if prev != entry => {
                        let detail = format!("committed term {} replaced by term {}", prev.term, entry.term);
                        self.flag(
                            now,
                            Violation::Durability {
                                node: node.clone(),
                                index,
                                detail,
                            },
                        );
                    }
                    Some(_) => {}
                    None => {
                        self.committed.insert(index, entry.clone());
                    }
                }
            }
            self.seen_commit.insert(node.clone(), state.commit_index);
        }
    }

    fn check_holds_committed(&mut self, now: SimTime, node: &DomainId, state: &PersistentState) {
        let missing: Vec<(u64, String)> = self
            .committed
            .iter()
            .filter(|(i, e)| state.entry(**i) != Some(*e))
            .map(|(i, e)| (*i, format!("leader lacks committed entry of term {}", e.term)))
            .collect();
        for (index, detail) in missing {
            self.flag(
                now,
                Violation::Durability {
                    node: node.clone(),
                    index,
                    detail,
                },
            );
        }
    }

    /// A restarted node resumes at its persisted commit index.
    pub fn node_restarted(&mut self, node: &DomainId, state: &PersistentState) {
        self.seen_commit.insert(node.clone(), state.commit_index.min(self.seen_commit.get(node).copied().unwrap_or(0)));
    }

    /// Pairwise log-matching check plus durability of committed entries in
    /// every log that has reached them.
    pub fn check_logs(&mut self, now: SimTime, logs: &BTreeMap<DomainId, &PersistentState>) {
        let nodes: Vec<(&DomainId, &&PersistentState)> = logs.iter().collect();
        for (i, (a, sa)) in nodes.iter().enumerate() {
            for (b, sb) in &nodes[i + 1..] {
                let common = sa.last_index().min(sb.last_index());
                // Highest index where both logs agree on the term.
                let agree = (1..=common).rev().find(|ix| sa.term_at(*ix) == sb.term_at(*ix));
                if let Some(top) = agree {
                    if sa.log[..top as usize] != sb.log[..top as usize] {
                        let div = (1..=top).find(|ix| sa.entry(*ix) != sb.entry(*ix)).unwrap_or(top);
                        self.flag(
                            now,
                            Violation::LogMatching {
                                a: (*a).clone(),
                                b: (*b).clone(),
                                index: div,
                            },
                        );
                    }
                }
            }
            let lost: Vec<u64> = self
                .committed
                .iter()
                .filter(|(ix, e)| **ix <= sa.commit_index && sa.entry(**ix) != Some(*e))
                .map(|(ix, _)| *ix)
                .collect();
            for index in lost {
                self.flag(
                    now,
                    Violation::Durability {
                        node: (*a).clone(),
                        index,
                        detail: "committed entry missing from log".into(),
                    },
                );
            }
        }
    }
}

/// True when every pair of logs agrees on the prefix both have committed.
pub fn committed_prefixes_agree<'a>(logs: impl IntoIterator<Item = &'a PersistentState>) -> bool {
    let logs: Vec<&PersistentState> = logs.into_iter().collect();
    logs.iter().enumerate().all(|(i, a)| {
        logs[i + 1..].iter().all(|b| {
            let upto = a.commit_index.min(b.commit_index) as usize;
            a.log.len() >= upto && b.log.len() >= upto && a.log[..upto] == b.log[..upto]
        })
    })
}
