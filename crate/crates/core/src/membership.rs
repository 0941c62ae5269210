//! Gossip-based discovery, failure detection and latency probing.
//!
//! Every node keeps a record per peer. Records are disseminated by
//! push-pull anti-entropy: each round a node sends its full digest to
//! `fanout` random live peers, which merge it and answer with their own.
//! Merging picks, per peer, the record with the highest
//! `(incarnation, status precedence, heartbeat)`. A node that sees itself
//! suspected or declared down refutes by bumping its incarnation.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};

use crate::affinity::DomainId;
use crate::error::{Error, Result};
use crate::rng::SimRng;
use crate::time::SimTime;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeerStatus {
    Joining,
    Up,
    Suspect,
    Down,
}

impl PeerStatus {
    /// Precedence at equal incarnation.
    fn rank(self) -> u8 {
        match self {
            PeerStatus::Joining => 0,
            PeerStatus::Up => 1,
            PeerStatus::Suspect => 2,
            PeerStatus::Down => 3,
        }
    }

    pub fn is_live(self) -> bool {
        matches!(self, PeerStatus::Up | PeerStatus::Suspect)
    }
}

/// Gossiped part of a peer record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeerDigest {
    pub domain: DomainId,
    pub status: PeerStatus,
    pub incarnation: u64,
    /// Bumped by the owner every round; evidence of liveness.
    pub heartbeat: u64,
    /// The owner's own one-way latency measurements, in ms.
    pub probes: Arc<[(DomainId, f64)]>,
}

impl PeerDigest {
    fn precedence(&self, other: &PeerDigest) -> Ordering {
        self.incarnation
            .cmp(&other.incarnation)
            .then(self.status.rank().cmp(&other.status.rank()))
            .then(self.heartbeat.cmp(&other.heartbeat))
            .then_with(|| {
                let a = self.probes.iter().map(|(d, v)| (d, v.to_bits()));
                let b = other.probes.iter().map(|(d, v)| (d, v.to_bits()));
                a.cmp(b)
            })
    }
}

/// Merge rule for two views of the same peer. Commutative, associative and
/// idempotent.
pub fn merge_digest(a: &PeerDigest, b: &PeerDigest) -> PeerDigest {
    debug_assert_eq!(a.domain, b.domain);
    if b.precedence(a) == Ordering::Greater {
        b.clone()
    } else {
        a.clone()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PeerRecord {
    pub digest: PeerDigest,
    /// Last time direct or gossiped evidence of liveness arrived.
    pub last_heard: SimTime,
    /// This node's own measurement of the peer.
    pub measured_latency: Option<f64>,
    status_since: SimTime,
}

impl PeerRecord {
    pub fn domain(&self) -> &DomainId {
        &self.digest.domain
    }

    pub fn status(&self) -> PeerStatus {
        self.digest.status
    }

    pub fn incarnation(&self) -> u64 {
        self.digest.incarnation
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GossipConfig {
    pub round_interval_ms: f64,
    pub fanout: usize,
    pub suspect_timeout_ms: f64,
    pub ping_interval_ms: f64,
    pub join_retry_ms: f64,
    pub max_join_retries: u32,
    #[serde(skip)]
    pub seeds: Vec<DomainId>,
}

impl Default for GossipConfig {
    fn default() -> Self {
        Self {
            round_interval_ms: 100.0,
            fanout: 3,
            suspect_timeout_ms: 500.0,
            ping_interval_ms: 1_000.0,
            join_retry_ms: 1_000.0,
            max_join_retries: 5,
            seeds: Vec::new(),
        }
    }
}

impl GossipConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fanout < 1 {
            return Err(Error::validation("params.gossip.fanout", "fanout must be at least 1"));
        }
        for (field, v) in [
            ("params.gossip.round_interval_ms", self.round_interval_ms),
            ("params.gossip.suspect_timeout_ms", self.suspect_timeout_ms),
            ("params.gossip.ping_interval_ms", self.ping_interval_ms),
            ("params.gossip.join_retry_ms", self.join_retry_ms),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::validation(field, "must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum GossipMessage {
    Join { record: PeerDigest },
    Digest { records: Arc<Vec<PeerDigest>>, reply: bool },
    Ping { nonce: u64 },
    Pong { nonce: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub enum MembershipEvent {
    MemberUp(DomainId),
    Suspect(DomainId),
    Down(DomainId),
    JoinFailed { attempts: u32 },
    LatencyMeasured { peer: DomainId, ms: f64 },
}

pub type Outgoing = Vec<(DomainId, GossipMessage)>;

#[derive(Clone, Debug)]
pub struct Membership {
    me: DomainId,
    config: GossipConfig,
    incarnation: u64,
    heartbeat: u64,
    probes: BTreeMap<DomainId, f64>,
    peers: BTreeMap<DomainId, PeerRecord>,
    joined: bool,
    join_attempts: u32,
    pending_pings: BTreeMap<u64, (DomainId, SimTime)>,
    next_nonce: u64,
}

impl Membership {
    pub fn new(me: DomainId, config: GossipConfig) -> Self {
        Self {
            me,
            config,
            incarnation: 0,
            heartbeat: 0,
            probes: BTreeMap::new(),
            peers: BTreeMap::new(),
            joined: false,
            join_attempts: 0,
            pending_pings: BTreeMap::new(),
            next_nonce: 1,
        }
    }

    pub fn me(&self) -> &DomainId {
        &self.me
    }

    pub fn config(&self) -> &GossipConfig {
        &self.config
    }

    pub fn incarnation(&self) -> u64 {
        self.incarnation
    }

    pub fn is_joined(&self) -> bool {
        self.joined
    }

    pub fn peer(&self, id: &DomainId) -> Option<&PeerRecord> {
        self.peers.get(id)
    }

    pub fn peers(&self) -> impl Iterator<Item = &PeerRecord> {
        self.peers.values()
    }

    pub fn status_of(&self, id: &DomainId) -> Option<PeerStatus> {
        if id == &self.me {
            return Some(PeerStatus::Up);
        }
        self.peers.get(id).map(|r| r.status())
    }

    /// Peers currently believed up.
    pub fn up_peers(&self) -> impl Iterator<Item = &DomainId> {
        self.peers.values().filter(|r| r.status() == PeerStatus::Up).map(|r| r.domain())
    }

    /// Own one-way measurements, in ms.
    pub fn probes(&self) -> &BTreeMap<DomainId, f64> {
        &self.probes
    }

    pub fn self_digest(&self) -> PeerDigest {
        PeerDigest {
            domain: self.me.clone(),
            status: PeerStatus::Up,
            incarnation: self.incarnation,
            heartbeat: self.heartbeat,
            probes: self.probes.iter().map(|(d, v)| (d.clone(), *v)).collect(),
        }
    }

    pub fn digest(&self) -> Vec<PeerDigest> {
        let mut all: Vec<PeerDigest> = Vec::with_capacity(self.peers.len() + 1);
        all.push(self.self_digest());
        all.extend(self.peers.values().map(|r| r.digest.clone()));
        all
    }

    /// Announces this node to the configured seeds. A node that is its own
    /// only seed is joined immediately.
    pub fn join(&mut self, out: &mut Outgoing) {
        let seeds: Vec<DomainId> = self.config.seeds.iter().filter(|s| **s != self.me).cloned().collect();
        if seeds.is_empty() {
            self.joined = true;
            return;
        }
        self.join_attempts += 1;
        let record = self.self_digest();
        for seed in seeds {
            out.push((seed, GossipMessage::Join { record: record.clone() }));
        }
    }

    /// Called when the join retry timer fires. Returns the delay until the
    /// next retry, or `None` once joined or out of retries.
    pub fn retry_join(&mut self, out: &mut Outgoing, events: &mut Vec<MembershipEvent>) -> Option<f64> {
        if self.joined {
            return None;
        }
        if self.join_attempts > self.config.max_join_retries {
            events.push(MembershipEvent::JoinFailed {
                attempts: self.join_attempts,
            });
            return None;
        }
        self.join(out);
        Some(self.config.join_retry_ms * 2f64.powi(self.join_attempts as i32 - 1))
    }

    fn set_status(&mut self, id: &DomainId, status: PeerStatus, now: SimTime, events: &mut Vec<MembershipEvent>) {
        if let Some(rec) = self.peers.get_mut(id) {
            if rec.digest.status != status {
                rec.digest.status = status;
                rec.status_since = now;
                events.push(match status {
                    PeerStatus::Suspect => MembershipEvent::Suspect(id.clone()),
                    PeerStatus::Down => MembershipEvent::Down(id.clone()),
                    _ => MembershipEvent::MemberUp(id.clone()),
                });
            }
        }
    }

    fn detect_failures(&mut self, now: SimTime, events: &mut Vec<MembershipEvent>) {
        let timeout = self.config.suspect_timeout_ms;
        let expired: Vec<DomainId> = self
            .pending_pings
            .iter()
            .filter(|(_, (_, sent))| now.ms_since(*sent) > timeout)
            .map(|(_, (peer, _))| peer.clone())
            .collect();
        self.pending_pings.retain(|_, (_, sent)| now.ms_since(*sent) <= timeout);
        for peer in expired {
            if self.status_of(&peer) == Some(PeerStatus::Up) {
                self.set_status(&peer, PeerStatus::Suspect, now, events);
            }
        }
        let transitions: Vec<(DomainId, PeerStatus)> = self
            .peers
            .values()
            .filter_map(|r| match r.status() {
                PeerStatus::Up if now.ms_since(r.last_heard) > timeout => Some((r.domain().clone(), PeerStatus::Suspect)),
                PeerStatus::Suspect if now.ms_since(r.status_since) > timeout => Some((r.domain().clone(), PeerStatus::Down)),
                _ => None,
            })
            .collect();
        for (peer, status) in transitions {
            self.set_status(&peer, status, now, events);
        }
    }

    /// One anti-entropy round: bump heartbeat, run the failure detector and
    /// push the digest to `fanout` random live peers.
    pub fn gossip_round(&mut self, now: SimTime, rng: &mut SimRng, out: &mut Outgoing, events: &mut Vec<MembershipEvent>) {
        self.heartbeat += 1;
        self.detect_failures(now, events);
        let live: Vec<&DomainId> = self.peers.values().filter(|r| r.status().is_live()).map(|r| r.domain()).collect();
        if live.is_empty() {
            return;
        }
        let records = Arc::new(self.digest());
        let targets: Vec<DomainId> = live
            .choose_multiple(rng, self.config.fanout.min(live.len()))
            .map(|d| (*d).clone())
            .collect();
        for t in targets {
            out.push((
                t,
                GossipMessage::Digest {
                    records: records.clone(),
                    reply: false,
                },
            ));
        }
    }

    /// Pings every live peer; replies are turned into latency samples.
    pub fn measure_latency(&mut self, now: SimTime, out: &mut Outgoing) {
        let live: Vec<DomainId> = self.peers.values().filter(|r| r.status().is_live()).map(|r| r.domain().clone()).collect();
        for peer in live {
            let nonce = self.next_nonce;
            self.next_nonce += 1;
            self.pending_pings.insert(nonce, (peer.clone(), now));
            out.push((peer, GossipMessage::Ping { nonce }));
        }
    }

    fn touch(&mut self, from: &DomainId, now: SimTime) {
        if let Some(rec) = self.peers.get_mut(from) {
            rec.last_heard = now;
        }
    }

    fn merge_one(&mut self, incoming: &PeerDigest, now: SimTime, events: &mut Vec<MembershipEvent>) -> bool {
        if incoming.domain == self.me {
            if incoming.incarnation > self.incarnation
                || (incoming.incarnation == self.incarnation && incoming.status != PeerStatus::Up)
            {
                self.incarnation = incoming.incarnation + 1;
                return true;
            }
            return false;
        }
        match self.peers.get_mut(&incoming.domain) {
            None => {
                let rec = PeerRecord {
                    digest: incoming.clone(),
                    last_heard: now,
                    measured_latency: None,
                    status_since: now,
                };
                if rec.status() == PeerStatus::Up {
                    events.push(MembershipEvent::MemberUp(incoming.domain.clone()));
                }
                self.peers.insert(incoming.domain.clone(), rec);
            }
            Some(rec) => {
                let merged = merge_digest(&rec.digest, incoming);
                if merged != rec.digest {
                    let before = rec.digest.status;
                    if merged.heartbeat != rec.digest.heartbeat || merged.incarnation != rec.digest.incarnation {
                        rec.last_heard = now;
                    }
                    if merged.status != before {
                        rec.status_since = now;
                        match (before, merged.status) {
                            (PeerStatus::Joining | PeerStatus::Down, PeerStatus::Up) => {
                                events.push(MembershipEvent::MemberUp(incoming.domain.clone()))
                            }
                            (_, PeerStatus::Suspect) => events.push(MembershipEvent::Suspect(incoming.domain.clone())),
                            (_, PeerStatus::Down) => events.push(MembershipEvent::Down(incoming.domain.clone())),
                            _ => {}
                        }
                    }
                    rec.digest = merged;
                }
            }
        }
        false
    }

    pub fn handle(&mut self, now: SimTime, from: &DomainId, msg: GossipMessage, out: &mut Outgoing, events: &mut Vec<MembershipEvent>) {
        match msg {
            GossipMessage::Join { record } => {
                self.merge_one(&record, now, events);
                self.touch(from, now);
                out.push((
                    from.clone(),
                    GossipMessage::Digest {
                        records: Arc::new(self.digest()),
                        reply: true,
                    },
                ));
            }
            GossipMessage::Digest { records, reply } => {
                self.joined = true;
                let mut refuted = false;
                for r in records.iter() {
                    refuted |= self.merge_one(r, now, events);
                }
                self.touch(from, now);
                if !reply || refuted {
                    out.push((
                        from.clone(),
                        GossipMessage::Digest {
                            records: Arc::new(self.digest()),
                            reply: true,
                        },
                    ));
                }
            }
            GossipMessage::Ping { nonce } => {
                self.touch(from, now);
                out.push((from.clone(), GossipMessage::Pong { nonce }));
            }
            GossipMessage::Pong { nonce } => {
                self.touch(from, now);
                if let Some((peer, sent)) = self.pending_pings.remove(&nonce) {
                    let ms = now.ms_since(sent) / 2.0;
                    self.probes.insert(peer.clone(), ms);
                    if let Some(rec) = self.peers.get_mut(&peer) {
                        rec.measured_latency = Some(ms);
                    }
                    events.push(MembershipEvent::LatencyMeasured { peer, ms });
                }
            }
        }
    }
}

/// Recognition statistics for one node start.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegistrationStats {
    pub node: DomainId,
    pub started_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    pub mean_ms: f64,
    /// Observer that recognised the node first.
    pub first_observer: Option<DomainId>,
    pub observers: usize,
    pub expected_observers: usize,
    pub complete: bool,
}

/// Observation used to compute registration time.
#[derive(Clone, Debug, PartialEq)]
pub enum RegistrationObservation {
    Started { node: DomainId, at_ms: f64 },
    MemberUp { observer: DomainId, peer: DomainId, at_ms: f64 },
}

/// For every node start, the delay until each other node recognised it.
///
/// `members` is the set of nodes expected to observe each joiner.
pub fn registration_time(observations: &[RegistrationObservation], members: &[DomainId]) -> Vec<RegistrationStats> {
    let mut out = Vec::new();
    for (i, obs) in observations.iter().enumerate() {
        let RegistrationObservation::Started { node, at_ms } = obs else {
            continue;
        };
        let mut first: BTreeMap<&DomainId, f64> = BTreeMap::new();
        for later in &observations[i + 1..] {
            match later {
                RegistrationObservation::Started { node: n, .. } if n == node => break,
                RegistrationObservation::MemberUp { observer, peer, at_ms: t } if peer == node && observer != node => {
                    first.entry(observer).or_insert(*t - at_ms);
                }
                _ => {}
            }
        }
        let expected = members.iter().filter(|m| *m != node).count();
        let delays: Vec<f64> = first.values().copied().collect();
        let (min_ms, max_ms, mean_ms) = if delays.is_empty() {
            (0.0, 0.0, 0.0)
        } else {
            (
                delays.iter().copied().fold(f64::INFINITY, f64::min),
                delays.iter().copied().fold(0.0, f64::max),
                delays.iter().sum::<f64>() / delays.len() as f64,
            )
        };
        let first_observer = first
            .iter()
            .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(b.0)))
            .map(|(d, _)| (*d).clone());
        out.push(RegistrationStats {
            node: node.clone(),
            started_ms: *at_ms,
            min_ms,
            max_ms,
            mean_ms,
            first_observer,
            observers: first.len(),
            expected_observers: expected,
            complete: first.len() >= expected,
        });
    }
    out
}
