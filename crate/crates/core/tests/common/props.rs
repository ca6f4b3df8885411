//! Property checks shared by the property suite and the acceptance target.
//! Each `check_*` takes one generated case; each `*_cases` is its strategy.

#![allow(clippy::needless_range_loop)]

use std::time::Duration;

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::Rng;

use arlsim::arl::{ArlParams, NeighborTable, MAXIMUM_LIMITS, MEDIUM_LIMITS, MINIMUM_LIMITS};
use arlsim::config::{MacPolicy, ScenarioConfig};
use arlsim::mac::DEFAULT_LIMITS;
use arlsim::mobility::{MobilityParams, Waypoint};
use arlsim::phys::{range_from_threshold, received_power, Position, RadioParams};
use arlsim::sim::{rng_stream, EventQueue, SimTime, StreamId};
use arlsim::trace::recount;
use arlsim::transport::{ConnId, Connection, TransportAction, TransportParams};
use arlsim::NodeId;

use super::{arl_oracle, flood, run_traced, small_config};

type Checked = Result<(), TestCaseError>;

/// Runs `check` over `cases` draws of `strategy`.
pub fn run_property<S: Strategy>(cases: u32, strategy: S, check: impl Fn(S::Value) -> Checked) -> Result<(), String>
where
    S::Value: std::fmt::Debug,
{
    let mut runner = TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    });
    runner.run(&strategy, check).map_err(|e| e.to_string())
}

pub fn event_cases() -> impl Strategy<Value = (Vec<u64>, Vec<bool>)> {
    (
        prop::collection::vec(0u64..50, 1..200),
        prop::collection::vec(any::<bool>(), 200),
    )
}

/// The queue yields live events in (time, insertion) order, like a stable sort.
pub fn check_event_order((times, cancel): (Vec<u64>, Vec<bool>)) -> Checked {
    let mut q = EventQueue::new();
    let handles: Vec<_> = times
        .iter()
        .enumerate()
        .map(|(i, &t)| q.schedule(SimTime::from_micros(t), i))
        .collect();
    for (h, &c) in handles.iter().zip(&cancel) {
        if c {
            q.cancel(*h);
        }
    }
    let mut expected: Vec<(u64, usize)> = times
        .iter()
        .enumerate()
        .filter(|(i, _)| !cancel[*i])
        .map(|(i, &t)| (t, i))
        .collect();
    expected.sort();
    let mut got = Vec::new();
    let mut last = SimTime::ZERO;
    while let Some(ev) = q.pop_until(SimTime::MAX) {
        prop_assert!(ev.fire_time >= last);
        last = ev.fire_time;
        got.push((ev.fire_time.as_nanos() / 1000, ev.payload));
    }
    prop_assert_eq!(got, expected);
    Ok(())
}

pub fn radio() -> impl Strategy<Value = RadioParams> {
    (1e-3..10.0f64, 0.5..2.0f64, 0.5..2.0f64, 0.5..3.0f64, 0.5..3.0f64, 1.0..2.0f64).prop_map(
        |(pt, gt, gr, ht, hr, loss)| RadioParams {
            pt,
            gt,
            gr,
            ht,
            hr,
            loss,
            rx_thresh: 1e-10,
            cs_thresh: 1e-11,
        },
    )
}

pub fn propagation_cases() -> impl Strategy<Value = (RadioParams, f64, f64, f64)> {
    (radio(), 0.1..5000.0f64, 0.01..500.0f64, 1.01..10.0f64)
}

/// Power falls with distance, rises with transmit power, and inverts exactly.
pub fn check_propagation((p, d, gap, k): (RadioParams, f64, f64, f64)) -> Checked {
    prop_assert!(received_power(&p, d) > received_power(&p, d + gap));
    let louder = RadioParams { pt: p.pt * k, ..p };
    prop_assert!(received_power(&louder, d) > received_power(&p, d));
    let back = range_from_threshold(&p, received_power(&p, d));
    prop_assert!(((back - d) / d).abs() < 1e-9, "{} vs {}", back, d);
    Ok(())
}

pub fn arl_cases() -> impl Strategy<Value = (f64, f64, f64, bool, f64, f64)> {
    (0.0..100.0f64, 0.01..10.0f64, 0.0..30.0f64, any::<bool>(), 0.0..100.0f64, 1.0..10.0f64)
}

/// Agrees with the decision table, stays inside the four limit sets, is
/// idempotent, never grows with age and never shrinks with signal.
pub fn check_arl((age, rss_factor, speed, present, extra_age, boost): (f64, f64, f64, bool, f64, f64)) -> Checked {
    let p = ArlParams::new(1e-10, 250.0);
    let rss = rss_factor * p.signal_threshold;
    let heard = SimTime::from_secs_f64(1.0);
    let mut table = NeighborTable::new();
    if present {
        table.on_overhear(NodeId(1), rss, heard);
    }
    let now = heard + Duration::from_secs_f64(age);
    let got = table.select_limits(NodeId(1), now, speed, &p);
    let want = arl_oracle(present.then_some(((now - heard).as_secs_f64(), rss)), speed, &p);
    prop_assert_eq!(got, want);
    prop_assert!([MAXIMUM_LIMITS, MEDIUM_LIMITS, MINIMUM_LIMITS, DEFAULT_LIMITS].contains(&got));
    prop_assert_eq!(table.select_limits(NodeId(1), now, speed, &p), got);

    let limits = |age: f64, rss: f64| {
        let mut t = NeighborTable::new();
        t.on_overhear(NodeId(1), rss, SimTime::ZERO);
        t.select_limits(NodeId(1), SimTime::from_secs_f64(age), speed, &p)
    };
    let base = limits(age, rss);
    let older = limits(age + extra_age, rss);
    let louder = limits(age, rss * boost);
    prop_assert!(older.srl <= base.srl && older.lrl <= base.lrl);
    prop_assert!(louder.srl >= base.srl && louder.lrl >= base.lrl);
    Ok(())
}

pub fn route_cases() -> impl Strategy<Value = (u64, usize, f64)> {
    (0u64..1000, 4usize..14, 0.15..0.6f64)
}

/// Discovery over a random connected graph delivers once, and every cached
/// route is loop-free, starts at its owner and follows real links.
pub fn check_routes((seed, n, density): (u64, usize, f64)) -> Checked {
    let mut rng = rng_stream(seed, StreamId::Placement);
    let mut adj = vec![vec![false; n]; n];
    for i in 1..n {
        adj[i - 1][i] = true;
        adj[i][i - 1] = true;
    }
    for i in 0..n {
        for j in (i + 2)..n {
            if rng.gen_bool(density) {
                adj[i][j] = true;
                adj[j][i] = true;
            }
        }
    }
    let dst = n - 1;
    let result = flood(&adj, 0, dst, seed);
    prop_assert_eq!(result.delivered.len(), 1);
    prop_assert_eq!(result.delivered[0].0, NodeId(dst as u32));
    for agent in &result.agents {
        for route in agent.cache().routes() {
            let hops = route.hops();
            let mut sorted = hops.to_vec();
            sorted.sort();
            sorted.dedup();
            prop_assert_eq!(sorted.len(), hops.len(), "repeated node in {:?}", hops);
            prop_assert_eq!(hops[0], agent.id());
            for w in hops.windows(2) {
                prop_assert!(adj[w[0].index()][w[1].index()], "route uses a missing link");
            }
        }
    }
    Ok(())
}

pub fn rto_cases() -> impl Strategy<Value = (u64, usize)> {
    (1u64..64, 1usize..12)
}

/// Consecutive timeouts double the RTO until the cap.
pub fn check_rto((initial, timeouts): (u64, usize)) -> Checked {
    let params = TransportParams {
        rto_initial: Duration::from_secs(initial),
        ..TransportParams::default()
    };
    let mut c = Connection::new(ConnId(0), NodeId(0), NodeId(1), params);
    let mut out = Vec::new();
    c.pump(SimTime::ZERO, &mut out);
    let mut seen = vec![c.rto()];
    for _ in 0..timeouts {
        let (generation, at) = out
            .iter()
            .rev()
            .find_map(|a| match a {
                TransportAction::ArmRto { generation, at, .. } => Some((*generation, *at)),
                _ => None,
            })
            .expect("timer armed");
        c.on_rto(generation, at, &mut out);
        seen.push(c.rto());
        prop_assert!(c.in_flight() <= 32);
    }
    for w in seen.windows(2) {
        prop_assert_eq!(w[1], (w[0] * 2).min(Duration::from_secs(64)));
    }
    Ok(())
}

pub fn mobility_cases() -> impl Strategy<Value = (u64, f64)> {
    (0u64..500, 1.0..30.0f64)
}

/// Sampled trajectories never jump faster than v_max nor leave the arena.
pub fn check_mobility((seed, v_max): (u64, f64)) -> Checked {
    let params = MobilityParams {
        width: 800.0,
        height: 500.0,
        v_min: 0.1,
        v_max,
        pause: Duration::from_secs(2),
    };
    let mut w = Waypoint::new(params, Position::new(400.0, 250.0), rng_stream(seed, StreamId::Mobility(0)));
    let step = 0.25;
    let mut prev = w.position_at(SimTime::ZERO);
    for k in 1..2000 {
        let p = w.position_at(SimTime::from_secs_f64(k as f64 * step));
        prop_assert!((0.0..=800.0).contains(&p.x) && (0.0..=500.0).contains(&p.y));
        prop_assert!(p.distance(&prev) <= v_max * step * (1.0 + 1e-9) + 1e-9);
        prev = p;
    }
    Ok(())
}

pub fn config_cases() -> impl Strategy<Value = (u64, f64, f64, bool, u32)> {
    (any::<u64>(), 0.0..40.0f64, 0.0..20.0f64, any::<bool>(), 1u32..64)
}

pub fn check_config_round_trip((seed, v_max, pause, adaptive, window): (u64, f64, f64, bool, u32)) -> Checked {
    let cfg = ScenarioConfig {
        seed,
        v_max,
        pause_s: pause,
        window,
        mac_policy: if adaptive { MacPolicy::Adaptive } else { MacPolicy::Baseline },
        ..ScenarioConfig::default()
    };
    let again = ScenarioConfig::parse(&cfg.serialize()).expect("serialized config parses");
    prop_assert_eq!(&again, &cfg);
    prop_assert_eq!(again.serialize(), cfg.serialize());
    Ok(())
}

pub fn recount_cases() -> impl Strategy<Value = (u64, bool)> {
    (1u64..10_000, any::<bool>())
}

/// Every ledger counter is recovered exactly from the trace alone.
pub fn check_recount((seed, adaptive): (u64, bool)) -> Checked {
    let policy = if adaptive { MacPolicy::Adaptive } else { MacPolicy::Baseline };
    let cfg = small_config(seed, policy);
    let (summary, text) = run_traced(&cfg);
    let recounted = recount(text.as_bytes(), cfg.duration()).map_err(TestCaseError::fail)?;
    prop_assert_eq!(&recounted, &summary.ledger);
    prop_assert!(summary.ledger.data_delivered <= summary.ledger.data_sent);
    prop_assert_eq!(summary.trace_lines as usize, text.lines().count());
    Ok(())
}
