//! Crash-fault-tolerant consensus: leader election with terms, log
//! replication and majority commit.
//!
//! [`RaftNode`] is a passive state machine. Callers feed it messages and
//! clock ticks and forward whatever it pushes into the outgoing buffer. The
//! persistent part (`current_term`, `voted_for`, the log and the last known
//! commit index) is exposed so the host can keep it across crashes and hand
//! it back to [`RaftNode::recover_from_log`].

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::affinity::DomainId;
use crate::error::{Error, Result};
use crate::proposal::MigrationProposal;
use crate::rng::SimRng;
use crate::time::SimTime;

pub type Term = u64;

/// Smallest majority of `n_members`.
pub fn quorum_size(n_members: usize) -> usize {
    n_members / 2 + 1
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuorumTally {
    pub positive: usize,
    pub negative: usize,
    pub abstain: usize,
    pub total_members: usize,
}

impl QuorumTally {
    pub fn new(total_members: usize) -> Self {
        Self {
            abstain: total_members,
            total_members,
            ..Self::default()
        }
    }

    pub fn record(&mut self, positive: bool) {
        debug_assert!(self.abstain > 0);
        self.abstain -= 1;
        if positive {
            self.positive += 1;
        } else {
            self.negative += 1;
        }
    }

    pub fn approved(&self) -> bool {
        self.positive >= quorum_size(self.total_members)
    }

    /// True once outstanding votes can no longer produce a quorum.
    pub fn hopeless(&self) -> bool {
        self.positive + self.abstain < quorum_size(self.total_members)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payload {
    MigrationCommit {
        proposal: MigrationProposal,
        tally: QuorumTally,
    },
    Rollback {
        proposal_id: String,
    },
    Noop,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub index: u64,
    pub term: Term,
    pub payload: Payload,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Follower,
    Candidate,
    Leader,
}

/// State that survives a crash.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PersistentState {
    pub current_term: Term,
    pub voted_for: Option<DomainId>,
    pub log: Vec<LogEntry>,
    /// Highest index known committed; only ever grows.
    pub commit_index: u64,
}

impl PersistentState {
    pub fn last_index(&self) -> u64 {
        self.log.len() as u64
    }

    pub fn last_term(&self) -> Term {
        self.log.last().map_or(0, |e| e.term)
    }

    pub fn term_at(&self, index: u64) -> Option<Term> {
        match index {
            0 => Some(0),
            i => self.log.get(i as usize - 1).map(|e| e.term),
        }
    }

    pub fn entry(&self, index: u64) -> Option<&LogEntry> {
        (index >= 1).then(|| self.log.get(index as usize - 1)).flatten()
    }

    /// Checks contiguous indices, non-decreasing terms and a current term
    /// no older than the log.
    pub fn validate(&self) -> Result<()> {
        let mut prev_term = 0;
        for (i, e) in self.log.iter().enumerate() {
            if e.index != i as u64 + 1 {
                return Err(Error::CorruptedLog(format!(
                    "index gap: position {} holds index {}",
                    i + 1,
                    e.index
                )));
            }
            if e.term < prev_term {
                return Err(Error::CorruptedLog(format!(
                    "term regression at index {}: {} after {}",
                    e.index, e.term, prev_term
                )));
            }
            prev_term = e.term;
        }
        if self.current_term < prev_term {
            return Err(Error::CorruptedLog(format!(
                "current term {} older than last entry term {}",
                self.current_term, prev_term
            )));
        }
        if self.commit_index > self.last_index() {
            return Err(Error::CorruptedLog(format!(
                "commit index {} beyond log end {}",
                self.commit_index,
                self.last_index()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RaftMessage {
    RequestVote {
        term: Term,
        candidate: DomainId,
        last_log_index: u64,
        last_log_term: Term,
    },
    RequestVoteReply {
        term: Term,
        granted: bool,
    },
    AppendEntries {
        term: Term,
        leader: DomainId,
        prev_log_index: u64,
        prev_log_term: Term,
        entries: Vec<LogEntry>,
        leader_commit: u64,
    },
    AppendEntriesReply {
        term: Term,
        success: bool,
        /// On success the last replicated index; on failure a hint for
        /// where the leader should retry.
        match_index: u64,
    },
}

impl RaftMessage {
    pub fn term(&self) -> Term {
        match self {
            RaftMessage::RequestVote { term, .. }
            | RaftMessage::RequestVoteReply { term, .. }
            | RaftMessage::AppendEntries { term, .. }
            | RaftMessage::AppendEntriesReply { term, .. } => *term,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElectionPolicy {
    /// Uniformly random timeout in `[min, max)`.
    #[default]
    Randomized,
    /// Deterministic stagger: the member whose position equals the next term
    /// modulo the cluster size times out first.
    RoundRobin,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RaftConfig {
    pub election_timeout_min_ms: f64,
    pub election_timeout_max_ms: f64,
    pub heartbeat_ms: f64,
    pub election_policy: ElectionPolicy,
}

impl Default for RaftConfig {
    fn default() -> Self {
        Self {
            election_timeout_min_ms: 150.0,
            election_timeout_max_ms: 300.0,
            heartbeat_ms: 50.0,
            election_policy: ElectionPolicy::Randomized,
        }
    }
}

impl RaftConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.election_timeout_min_ms > 0.0 && self.election_timeout_max_ms > self.election_timeout_min_ms) {
            return Err(Error::validation(
                "params.raft.election_timeout_ms",
                "need 0 < election_timeout_min_ms < election_timeout_max_ms",
            ));
        }
        if !(self.heartbeat_ms > 0.0 && self.heartbeat_ms < self.election_timeout_min_ms) {
            return Err(Error::validation(
                "params.raft.heartbeat_ms",
                "heartbeat must be positive and shorter than the election timeout",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default)]
struct Progress {
    next_index: u64,
    match_index: u64,
}

pub type Outgoing = Vec<(DomainId, RaftMessage)>;

#[derive(Clone, Debug)]
pub struct RaftNode {
    id: DomainId,
    members: Vec<DomainId>,
    config: RaftConfig,
    state: PersistentState,
    role: Role,
    leader_hint: Option<DomainId>,
    last_applied: u64,
    votes: BTreeSet<DomainId>,
    progress: BTreeMap<DomainId, Progress>,
    election_deadline: SimTime,
    next_heartbeat: SimTime,
}

impl RaftNode {
    /// Fresh follower at term 0. `members` must contain `id`.
    pub fn new(id: DomainId, members: Vec<DomainId>, config: RaftConfig, now: SimTime, rng: &mut SimRng) -> Self {
        Self::from_state(id, members, config, PersistentState::default(), now, rng)
    }

    /// Rebuilds a follower from persisted state. Entries up to the stored
    /// commit index are handed out again by [`RaftNode::take_committed`] so
    /// the host can replay them.
    pub fn recover_from_log(
        id: DomainId,
        members: Vec<DomainId>,
        config: RaftConfig,
        persisted: PersistentState,
        now: SimTime,
        rng: &mut SimRng,
    ) -> Result<Self> {
        persisted.validate()?;
        Ok(Self::from_state(id, members, config, persisted, now, rng))
    }

    fn from_state(
        id: DomainId,
        mut members: Vec<DomainId>,
        config: RaftConfig,
        state: PersistentState,
        now: SimTime,
        rng: &mut SimRng,
    ) -> Self {
        members.sort();
        members.dedup();
        debug_assert!(members.contains(&id));
        let mut node = Self {
            id,
            members,
            config,
            state,
            role: Role::Follower,
            leader_hint: None,
            last_applied: 0,
            votes: BTreeSet::new(),
            progress: BTreeMap::new(),
            election_deadline: SimTime::MAX,
            next_heartbeat: SimTime::MAX,
        };
        node.reset_election_timer(now, rng);
        node
    }

    pub fn id(&self) -> &DomainId {
        &self.id
    }

    pub fn members(&self) -> &[DomainId] {
        &self.members
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn is_leader(&self) -> bool {
        self.role == Role::Leader
    }

    pub fn term(&self) -> Term {
        self.state.current_term
    }

    pub fn voted_for(&self) -> Option<&DomainId> {
        self.state.voted_for.as_ref()
    }

    pub fn commit_index(&self) -> u64 {
        self.state.commit_index
    }

    pub fn last_applied(&self) -> u64 {
        self.last_applied
    }

    pub fn last_log_index(&self) -> u64 {
        self.state.last_index()
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.state.log
    }

    pub fn leader_hint(&self) -> Option<&DomainId> {
        self.leader_hint.as_ref()
    }

    pub fn persistent(&self) -> &PersistentState {
        &self.state
    }

    pub fn quorum(&self) -> usize {
        quorum_size(self.members.len())
    }

    /// Earliest time at which [`RaftNode::tick`] has work to do.
    pub fn next_deadline(&self) -> SimTime {
        match self.role {
            Role::Leader => self.next_heartbeat,
            _ => self.election_deadline,
        }
    }

    /// True when every log entry is committed and applied.
    pub fn is_settled(&self) -> bool {
        self.state.commit_index == self.state.last_index() && self.last_applied == self.state.commit_index
    }

    fn election_timeout_ms(&self, rng: &mut SimRng) -> f64 {
        let (lo, hi) = (self.config.election_timeout_min_ms, self.config.election_timeout_max_ms);
        match self.config.election_policy {
            ElectionPolicy::Randomized => rng.random_range(lo..hi),
            ElectionPolicy::RoundRobin => {
                let n = self.members.len() as u64;
                let pos = self.members.iter().position(|m| m == &self.id).unwrap_or(0) as u64;
                let rank = (pos + n - (self.state.current_term + 1) % n) % n;
                lo + (hi - lo) * rank as f64 / n as f64
            }
        }
    }

    fn reset_election_timer(&mut self, now: SimTime, rng: &mut SimRng) {
        let timeout = self.election_timeout_ms(rng);
        self.election_deadline = now.plus_ms(timeout);
    }

    fn peers(&self) -> impl Iterator<Item = &DomainId> {
        self.members.iter().filter(move |m| **m != self.id)
    }

    fn become_follower(&mut self, term: Term, now: SimTime, rng: &mut SimRng) {
        if term > self.state.current_term {
            self.state.current_term = term;
            self.state.voted_for = None;
        }
        if self.role != Role::Follower {
            self.role = Role::Follower;
            self.votes.clear();
            self.progress.clear();
            self.reset_election_timer(now, rng);
        }
    }

    /// Fires an election or heartbeat if its deadline has passed.
    pub fn tick(&mut self, now: SimTime, rng: &mut SimRng, out: &mut Outgoing) {
        match self.role {
            Role::Leader => {
                if now >= self.next_heartbeat {
                    self.broadcast_append(out);
                    self.next_heartbeat = now.plus_ms(self.config.heartbeat_ms);
                }
            }
            _ => {
                if now >= self.election_deadline {
                    self.start_election(now, rng, out);
                }
            }
        }
    }

    /// Increments the term, votes for itself and solicits votes.
    pub fn start_election(&mut self, now: SimTime, rng: &mut SimRng, out: &mut Outgoing) {
        self.state.current_term += 1;
        self.state.voted_for = Some(self.id.clone());
        self.role = Role::Candidate;
        self.leader_hint = None;
        self.progress.clear();
        self.votes = [self.id.clone()].into();
        self.reset_election_timer(now, rng);
        if self.votes.len() >= self.quorum() {
            self.become_leader(now, out);
            return;
        }
        let msg = RaftMessage::RequestVote {
            term: self.state.current_term,
            candidate: self.id.clone(),
            last_log_index: self.state.last_index(),
            last_log_term: self.state.last_term(),
        };
        for peer in self.peers() {
            out.push((peer.clone(), msg.clone()));
        }
    }

    fn become_leader(&mut self, now: SimTime, out: &mut Outgoing) {
        self.role = Role::Leader;
        self.leader_hint = Some(self.id.clone());
        let next_index = self.state.last_index() + 1;
        self.progress = self
            .members
            .iter()
            .filter(|m| **m != self.id)
            .map(|m| (m.clone(), Progress { next_index, match_index: 0 }))
            .collect();
        // Entries from earlier terms commit only together with one from the
        // current term.
        self.append_local(Payload::Noop);
        self.advance_commit();
        self.broadcast_append(out);
        self.next_heartbeat = now.plus_ms(self.config.heartbeat_ms);
    }

    fn append_local(&mut self, payload: Payload) -> u64 {
        let index = self.state.last_index() + 1;
        self.state.log.push(LogEntry {
            index,
            term: self.state.current_term,
            payload,
        });
        index
    }

    /// Appends `payload` as leader and replicates it immediately.
    pub fn propose(&mut self, payload: Payload, out: &mut Outgoing) -> Result<u64> {
        if self.role != Role::Leader {
            return Err(Error::NotLeader {
                hint: self.leader_hint.clone(),
            });
        }
        let index = self.append_local(payload);
        self.advance_commit();
        self.broadcast_append(out);
        Ok(index)
    }

    fn append_for(&self, peer: &DomainId) -> RaftMessage {
        let progress = self.progress.get(peer).copied().unwrap_or_default();
        let prev_log_index = progress.next_index.saturating_sub(1);
        RaftMessage::AppendEntries {
            term: self.state.current_term,
            leader: self.id.clone(),
            prev_log_index,
            prev_log_term: self.state.term_at(prev_log_index).unwrap_or(0),
            entries: self.state.log[prev_log_index as usize..].to_vec(),
            leader_commit: self.state.commit_index,
        }
    }

    fn broadcast_append(&self, out: &mut Outgoing) {
        for peer in self.peers() {
            out.push((peer.clone(), self.append_for(peer)));
        }
    }

    fn advance_commit(&mut self) {
        let quorum = self.quorum();
        let mut matched: Vec<u64> = self.progress.values().map(|p| p.match_index).collect();
        matched.push(self.state.last_index());
        matched.sort_unstable_by(|a, b| b.cmp(a));
        let candidate = matched[quorum - 1];
        if candidate > self.state.commit_index && self.state.term_at(candidate) == Some(self.state.current_term) {
            self.state.commit_index = candidate;
        }
    }

    pub fn handle(&mut self, now: SimTime, from: &DomainId, msg: RaftMessage, rng: &mut SimRng, out: &mut Outgoing) {
        if msg.term() > self.state.current_term {
            self.become_follower(msg.term(), now, rng);
            self.leader_hint = None;
        }
        match msg {
            RaftMessage::RequestVote {
                term,
                candidate,
                last_log_index,
                last_log_term,
            } => {
                let up_to_date = (last_log_term, last_log_index) >= (self.state.last_term(), self.state.last_index());
                let free = self.state.voted_for.as_ref().is_none_or(|v| *v == candidate);
                let granted = term == self.state.current_term && free && up_to_date;
                if granted {
                    self.state.voted_for = Some(candidate);
                    self.reset_election_timer(now, rng);
                }
                out.push((
                    from.clone(),
                    RaftMessage::RequestVoteReply {
                        term: self.state.current_term,
                        granted,
                    },
                ));
            }
            RaftMessage::RequestVoteReply { term, granted } => {
                if self.role == Role::Candidate && term == self.state.current_term && granted {
                    self.votes.insert(from.clone());
                    if self.votes.len() >= self.quorum() {
                        self.become_leader(now, out);
                    }
                }
            }
            RaftMessage::AppendEntries {
                term,
                leader,
                prev_log_index,
                prev_log_term,
                entries,
                leader_commit,
            } => {
                if term < self.state.current_term {
                    out.push((
                        from.clone(),
                        RaftMessage::AppendEntriesReply {
                            term: self.state.current_term,
                            success: false,
                            match_index: 0,
                        },
                    ));
                    return;
                }
                if self.role != Role::Follower {
                    self.become_follower(term, now, rng);
                }
                self.leader_hint = Some(leader);
                self.reset_election_timer(now, rng);
                let reply = self.accept_entries(prev_log_index, prev_log_term, entries, leader_commit);
                out.push((from.clone(), reply));
            }
            RaftMessage::AppendEntriesReply {
                term,
                success,
                match_index,
            } => {
                if self.role != Role::Leader || term != self.state.current_term {
                    return;
                }
                let Some(progress) = self.progress.get_mut(from) else {
                    return;
                };
                if success {
                    progress.match_index = progress.match_index.max(match_index);
                    progress.next_index = progress.match_index + 1;
                    self.advance_commit();
                    if self.progress[from].next_index <= self.state.last_index() {
                        out.push((from.clone(), self.append_for(from)));
                    }
                } else {
                    let retry = progress.next_index.saturating_sub(1).min(match_index + 1).max(1);
                    if retry != progress.next_index {
                        progress.next_index = retry;
                        out.push((from.clone(), self.append_for(from)));
                    }
                }
            }
        }
    }

    fn accept_entries(&mut self, prev_log_index: u64, prev_log_term: Term, entries: Vec<LogEntry>, leader_commit: u64) -> RaftMessage {
        let term = self.state.current_term;
        if prev_log_index > self.state.last_index() {
            return RaftMessage::AppendEntriesReply {
                term,
                success: false,
                match_index: self.state.last_index(),
            };
        }
        if self.state.term_at(prev_log_index) != Some(prev_log_term) {
            return RaftMessage::AppendEntriesReply {
                term,
                success: false,
                match_index: prev_log_index.saturating_sub(1),
            };
        }
        let last_new = prev_log_index + entries.len() as u64;
        for entry in entries {
            match self.state.term_at(entry.index) {
                Some(t) if t == entry.term => {}
                Some(_) => {
                    debug_assert!(entry.index > self.state.commit_index, "truncating committed entry");
                    self.state.log.truncate(entry.index as usize - 1);
                    self.state.log.push(entry);
                }
                None => self.state.log.push(entry),
            }
        }
        if leader_commit > self.state.commit_index {
            self.state.commit_index = leader_commit.min(last_new).max(self.state.commit_index);
        }
        RaftMessage::AppendEntriesReply {
            term,
            success: true,
            match_index: last_new,
        }
    }

    /// Newly committed entries since the previous call, in log order.
    pub fn take_committed(&mut self) -> Vec<LogEntry> {
        let from = self.last_applied as usize;
        let to = self.state.commit_index as usize;
        self.last_applied = self.state.commit_index;
        self.state.log[from..to].to_vec()
    }
}
