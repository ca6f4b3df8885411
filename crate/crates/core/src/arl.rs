//! Adaptive retransmission limits.
//!
//! Every decoded frame, whatever its destination, refreshes the sender's
//! entry in the local neighbour table with the received power and the time
//! of reception. When the MAC needs retry limits for a next hop, the entry is
//! classified on two axes:
//!
//! - *fresh*: heard within the time this node would need, at its current
//!   speed, to leave transmission range;
//! - *strong*: received power at or above the signal threshold.
//!
//! | fresh | strong | limits (SRL, LRL) |
//! |-------|--------|-------------------|
//! | yes   | yes    | maximum (16, 8)   |
//! | yes   | no     | medium (12, 6)    |
//! | no    | yes    | medium (12, 6)    |
//! | no    | no     | minimum (4, 2)    |
//!
//! A next hop with no entry gets the 802.11 defaults (7, 4).

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::mac::{RetryLimits, RetryPolicy, DEFAULT_LIMITS};
use crate::sim::SimTime;
use crate::NodeId;

pub const MAXIMUM_LIMITS: RetryLimits = RetryLimits::new(16, 8);
pub const MEDIUM_LIMITS: RetryLimits = RetryLimits::new(12, 6);
pub const MINIMUM_LIMITS: RetryLimits = RetryLimits::new(4, 2);

/// Last frame heard from a neighbour.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NeighborEntry {
    pub node: NodeId,
    /// Received power, watts.
    pub rss: f64,
    pub timestamp: SimTime,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ArlParams {
    /// Power at or above which a neighbour counts as strong, watts.
    pub signal_threshold: f64,
    /// Nominal transmission range used for the time threshold, meters.
    pub tx_range: f64,
    pub maximum: RetryLimits,
    pub medium: RetryLimits,
    pub minimum: RetryLimits,
    pub default_limits: RetryLimits,
    /// Upper bound on the time threshold, seconds.
    pub time_threshold_cap: f64,
    /// Speeds below this are treated as this, m/s.
    pub min_speed_floor: f64,
}

impl ArlParams {
    /// Default multiple of the receive threshold used as signal threshold:
    /// under a d^-4 law, 16x the edge-of-range power is the power at half range.
    pub const SIGNAL_FACTOR: f64 = 16.0;

    pub fn new(rx_thresh: f64, tx_range: f64) -> Self {
        ArlParams {
            signal_threshold: Self::SIGNAL_FACTOR * rx_thresh,
            tx_range,
            maximum: MAXIMUM_LIMITS,
            medium: MEDIUM_LIMITS,
            minimum: MINIMUM_LIMITS,
            default_limits: DEFAULT_LIMITS,
            time_threshold_cap: 1e6,
            min_speed_floor: 0.1,
        }
    }

    pub fn validate(&self, rx_thresh: f64) -> Result<(), String> {
        if !(self.signal_threshold > rx_thresh) {
            return Err(format!(
                "signal threshold {} must exceed the receive threshold {}",
                self.signal_threshold, rx_thresh
            ));
        }
        let ordered = |hi: RetryLimits, lo: RetryLimits| hi.srl > lo.srl && hi.lrl > lo.lrl;
        if !(ordered(self.maximum, self.medium) && ordered(self.medium, self.minimum)) {
            return Err("ARL limit sets must satisfy maximum > medium > minimum".into());
        }
        if self.minimum.srl == 0 || self.minimum.lrl == 0 || self.default_limits.srl == 0 || self.default_limits.lrl == 0 {
            return Err("retry limits must be at least 1".into());
        }
        if !(self.time_threshold_cap > 0.0) || !(self.min_speed_floor > 0.0) || !(self.tx_range > 0.0) {
            return Err("time threshold cap, speed floor and range must be positive".into());
        }
        Ok(())
    }
}

/// Seconds this node would take to cross `tx_range` at `own_speed`.
pub fn time_threshold(own_speed: f64, tx_range: f64, params: &ArlParams) -> f64 {
    if own_speed <= 0.0 {
        return params.time_threshold_cap;
    }
    (tx_range / own_speed.max(params.min_speed_floor)).min(params.time_threshold_cap)
}

/// Per-node table of the most recent frame heard from each neighbour.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NeighborTable {
    entries: BTreeMap<NodeId, NeighborEntry>,
}

impl NeighborTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records a decoded frame from `src`, replacing any previous entry.
    pub fn on_overhear(&mut self, src: NodeId, rss: f64, now: SimTime) {
        self.entries.insert(
            src,
            NeighborEntry {
                node: src,
                rss,
                timestamp: now,
            },
        );
    }

    pub fn get(&self, node: NodeId) -> Option<&NeighborEntry> {
        self.entries.get(&node)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &NeighborEntry> {
        self.entries.values()
    }

    pub fn select_limits(&self, dest: NodeId, now: SimTime, own_speed: f64, params: &ArlParams) -> RetryLimits {
        let Some(entry) = self.entries.get(&dest) else {
            return params.default_limits;
        };
        let age = now.since(entry.timestamp).as_secs_f64();
        let fresh = age <= time_threshold(own_speed, params.tx_range, params);
        let strong = entry.rss >= params.signal_threshold;
        match (fresh, strong) {
            (true, true) => params.maximum,
            (true, false) | (false, true) => params.medium,
            (false, false) => params.minimum,
        }
    }

    /// One line per entry: node, age in seconds, rss relative to the signal threshold.
    pub fn dump(&self, now: SimTime, params: &ArlParams) -> String {
        let mut out = String::new();
        for e in self.entries.values() {
            let _ = write!(
                out,
                "nbr={} age={:.6} rss_ratio={:.4};",
                e.node,
                now.since(e.timestamp).as_secs_f64(),
                e.rss / params.signal_threshold
            );
        }
        out
    }
}

/// Retry policy reading a node's neighbour table at a fixed instant.
#[derive(Clone, Copy, Debug)]
pub struct AdaptivePolicy<'a> {
    pub table: &'a NeighborTable,
    pub now: SimTime,
    pub own_speed: f64,
    pub params: &'a ArlParams,
}

impl RetryPolicy for AdaptivePolicy<'_> {
    fn retry_limits(&self, dest: NodeId) -> RetryLimits {
        self.table.select_limits(dest, self.now, self.own_speed, self.params)
    }
}
