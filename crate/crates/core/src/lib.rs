//! Deterministic discrete-event simulator for mobile ad hoc networks.
//!
//! The stack is a simplified IEEE 802.11 DCF MAC (RTS/CTS/DATA/ACK with
//! short and long retry counters), a minimal source-routing protocol, and a
//! window-based reliable transport. The MAC's retry limits come from a
//! pluggable [`mac::RetryPolicy`]: either the static 802.11 defaults or the
//! adaptive policy in [`arl`], which picks limits from the age and strength
//! of the last frame overheard from the next hop.
//!
//! Entry points:
//! - [`network::Network`] wires every layer together for one run.
//! - [`experiment`] runs single scenarios, sweeps and trend comparisons.
//! - [`config::ScenarioConfig`] is the flat `key = value` scenario format.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fmt;

pub mod arl;
pub mod config;
pub mod experiment;
pub mod mac;
pub mod metrics;
pub mod mobility;
pub mod network;
pub mod phys;
pub mod routing;
pub mod sim;
pub mod trace;
pub mod transport;

/// Identifier of a node; also its MAC address and its index in the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}
