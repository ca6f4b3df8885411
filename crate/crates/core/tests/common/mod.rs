#![allow(dead_code, clippy::neg_cmp_op_on_partial_ord)]

pub mod props;

use std::time::Duration;

use arlsim::arl::ArlParams;
use arlsim::config::{MacPolicy, ScenarioConfig};
use arlsim::experiment::run_scenario;
use arlsim::mac::RetryLimits;
use arlsim::network::RunSummary;
use arlsim::routing::{Packet, RoutingAction, RoutingAgent, RoutingConfig, WireSize};
use arlsim::sim::{rng_stream, EventQueue, SimTime, StreamId};
use arlsim::NodeId;

/// A short mobile scenario that still exercises every layer.
pub fn small_config(seed: u64, policy: MacPolicy) -> ScenarioConfig {
    ScenarioConfig {
        seed,
        mac_policy: policy,
        n_nodes: 12,
        width: 700.0,
        height: 700.0,
        duration_s: 40.0,
        v_max: 15.0,
        n_connections: 3,
        ..ScenarioConfig::default()
    }
}

/// Runs `cfg` with tracing on and returns the summary and the trace text.
pub fn run_traced(cfg: &ScenarioConfig) -> (RunSummary, String) {
    let dir = tempfile::tempdir().expect("tempdir");
    let path = dir.path().join("run.tr");
    let summary = run_scenario(cfg, Some(&path)).expect("run succeeds");
    let text = std::fs::read_to_string(&path).expect("trace readable");
    (summary, text)
}

/// Decision table for retry limits, written out case by case.
pub fn arl_oracle(entry: Option<(f64, f64)>, own_speed: f64, p: &ArlParams) -> RetryLimits {
    let Some((age, rss)) = entry else {
        return p.default_limits;
    };
    let t_star = if own_speed <= 0.0 {
        p.time_threshold_cap
    } else {
        let v = if own_speed < p.min_speed_floor { p.min_speed_floor } else { own_speed };
        let t = p.tx_range / v;
        if t > p.time_threshold_cap {
            p.time_threshold_cap
        } else {
            t
        }
    };
    let recent = !(age > t_star);
    let loud = !(rss < p.signal_threshold);
    if recent && loud {
        p.maximum
    } else if !recent && !loud {
        p.minimum
    } else {
        p.medium
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Payload(pub u32);

impl WireSize for Payload {
    fn wire_bytes(&self) -> u32 {
        64
    }
}

/// Outcome of flooding discovery over a fixed graph with lossless links.
pub struct FloodResult {
    pub agents: Vec<RoutingAgent<Payload>>,
    pub delivered: Vec<(NodeId, Payload)>,
}

/// Sends one payload from `src` to `dst` over the undirected graph `adj`
/// (adjacency matrix), delivering every frame after one microsecond.
pub fn flood(adj: &[Vec<bool>], src: usize, dst: usize, seed: u64) -> FloodResult {
    let n = adj.len();
    let mut agents: Vec<RoutingAgent<Payload>> = (0..n)
        .map(|i| RoutingAgent::new(NodeId(i as u32), RoutingConfig::default()))
        .collect();
    let mut rngs: Vec<_> = (0..n).map(|i| rng_stream(seed, StreamId::Routing(i as u32))).collect();
    let mut queue: EventQueue<(usize, Packet<Payload>)> = EventQueue::new();
    let mut delivered = Vec::new();
    let hop = Duration::from_micros(1);

    let mut out = Vec::new();
    agents[src].originate(NodeId(dst as u32), Payload(7), &mut out);
    let mut pending = vec![(src, out)];
    loop {
        for (node, actions) in pending.drain(..) {
            for action in actions {
                let now = queue.now();
                match action {
                    RoutingAction::Broadcast { delay, request } => {
                        for (peer, &linked) in adj[node].iter().enumerate() {
                            if linked {
                                queue.schedule(now + delay + hop, (peer, Packet::Request(request.clone())));
                            }
                        }
                    }
                    RoutingAction::Unicast { next_hop, packet } => {
                        assert!(adj[node][next_hop.index()], "unicast over a missing link");
                        queue.schedule(now + hop, (next_hop.index(), Packet::Unicast(packet)));
                    }
                    RoutingAction::Deliver { payload, .. } => delivered.push((NodeId(node as u32), payload)),
                    RoutingAction::ArmDiscoveryTimer { .. } | RoutingAction::Drop { .. } => {}
                }
            }
        }
        let Some(ev) = queue.pop_until(SimTime::MAX) else { break };
        let (node, packet) = ev.payload;
        let mut out = Vec::new();
        agents[node].on_packet(packet, &mut rngs[node], &mut out);
        pending.push((node, out));
    }
    FloodResult { agents, delivered }
}
