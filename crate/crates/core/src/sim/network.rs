//! Link model: latency, uniform jitter, random loss, partitions and a
//! per-sender egress queue.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;

use crate::affinity::{DomainId, LatencyMatrix};
use crate::rng::SimRng;
use crate::time::SimTime;

/// Messages between `side_a` and `side_b` sent in `[start, end)` are lost.
#[derive(Clone, Debug, PartialEq)]
pub struct PartitionWindow {
    pub side_a: BTreeSet<DomainId>,
    pub side_b: BTreeSet<DomainId>,
    pub start: SimTime,
    pub end: SimTime,
}

impl PartitionWindow {
    pub fn cuts(&self, from: &DomainId, to: &DomainId, at: SimTime) -> bool {
        at >= self.start
            && at < self.end
            && ((self.side_a.contains(from) && self.side_b.contains(to)) || (self.side_b.contains(from) && self.side_a.contains(to)))
    }
}

/// Replaces the loss rate of one link (both directions) during a window.
#[derive(Clone, Debug, PartialEq)]
pub struct DropWindow {
    pub a: DomainId,
    pub b: DomainId,
    pub rate: f64,
    pub start: SimTime,
    pub end: SimTime,
}

impl DropWindow {
    fn applies(&self, from: &DomainId, to: &DomainId, at: SimTime) -> bool {
        at >= self.start && at < self.end && ((self.a == *from && self.b == *to) || (self.a == *to && self.b == *from))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DropReason {
    Loss,
    Partition,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Delivery {
    At(SimTime),
    Dropped(DropReason),
}

pub struct Network {
    latency: LatencyMatrix,
    jitter_ms: f64,
    drop_rate: f64,
    send_overhead_ms: f64,
    partitions: Vec<PartitionWindow>,
    drop_windows: Vec<DropWindow>,
    egress_free: BTreeMap<DomainId, SimTime>,
    rng: SimRng,
}

impl Network {
    pub fn new(latency: LatencyMatrix, jitter_ms: f64, drop_rate: f64, send_overhead_ms: f64, rng: SimRng) -> Self {
        Self {
            latency,
            jitter_ms,
            drop_rate,
            send_overhead_ms,
            partitions: Vec::new(),
            drop_windows: Vec::new(),
            egress_free: BTreeMap::new(),
            rng,
        }
    }

    pub fn add_partition(&mut self, p: PartitionWindow) {
        self.partitions.push(p);
    }

    pub fn add_drop_window(&mut self, w: DropWindow) {
        self.drop_windows.push(w);
    }

    /// Loss rate in force for `from → to` at `at`.
    pub fn drop_rate(&self, from: &DomainId, to: &DomainId, at: SimTime) -> f64 {
        self.drop_windows
            .iter()
            .rev()
            .find(|w| w.applies(from, to, at))
            .map_or(self.drop_rate, |w| w.rate)
    }

    /// Clears the sender's egress queue, as after a crash.
    pub fn reset_sender(&mut self, node: &DomainId) {
        self.egress_free.remove(node);
    }

    /// Schedules one message. The message leaves once the sender's egress
    /// queue is free, then takes the link latency plus a jitter sample.
    pub fn deliver(&mut self, now: SimTime, from: &DomainId, to: &DomainId) -> Delivery {
        if self.partitions.iter().any(|p| p.cuts(from, to, now)) {
            return Delivery::Dropped(DropReason::Partition);
        }
        let rate = self.drop_rate(from, to, now);
        if rate >= 1.0 || (rate > 0.0 && self.rng.random::<f64>() < rate) {
            return Delivery::Dropped(DropReason::Loss);
        }
        let free = self.egress_free.get(from).copied().unwrap_or(SimTime::ZERO);
        let departs = now.max(free).plus_ms(self.send_overhead_ms);
        self.egress_free.insert(from.clone(), departs);
        if from == to {
            return Delivery::At(departs);
        }
        let base = self.latency.get(from, to).unwrap_or(0.0);
        let jitter = if self.jitter_ms > 0.0 {
            self.rng.random_range(-self.jitter_ms..=self.jitter_ms)
        } else {
            0.0
        };
        Delivery::At(departs.plus_ms((base + jitter).max(0.0)))
    }
}
