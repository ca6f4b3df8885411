mod common;

use proptest::prelude::*;

use arlsim::config::{PositionList, ScenarioConfig};
use arlsim::phys::Position;
use arlsim::trace::TraceRecord;

use common::props::*;
use common::run_traced;

proptest! {
    #[test]
    fn events_pop_in_time_then_insertion_order(case in event_cases()) {
        check_event_order(case)?;
    }

    #[test]
    fn propagation_is_monotone_and_invertible(case in propagation_cases()) {
        check_propagation(case)?;
    }

    #[test]
    fn arl_matches_decision_table_and_is_monotone(case in arl_cases()) {
        check_arl(case)?;
    }

    #[test]
    fn discovered_routes_are_loop_free(case in route_cases()) {
        check_routes(case)?;
    }

    #[test]
    fn rto_doubles_geometrically(case in rto_cases()) {
        check_rto(case)?;
    }

    #[test]
    fn waypoint_paths_are_continuous_and_in_arena(case in mobility_cases()) {
        check_mobility(case)?;
    }

    #[test]
    fn config_round_trips(case in config_cases()) {
        check_config_round_trip(case)?;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn ledger_matches_trace_recount(case in recount_cases()) {
        check_recount(case)?;
    }
}

#[test]
fn traced_rto_backoff_is_geometric() {
    // The sink is out of range, so every segment times out.
    let cfg = ScenarioConfig {
        n_nodes: 2,
        v_max: 0.0,
        n_connections: 1,
        duration_s: 200.0,
        rto_initial_s: 1.0,
        positions: Some(PositionList(vec![Position::new(0.0, 0.0), Position::new(900.0, 0.0)])),
        ..ScenarioConfig::default()
    };
    let (_, text) = run_traced(&cfg);
    let rtos: Vec<(u32, u128)> = text
        .lines()
        .map(|l| TraceRecord::parse(l).unwrap())
        .filter(|r| r.layer == "TPT" && r.kind == "rto")
        .map(|r| (r.field("backoff").unwrap().parse().unwrap(), r.field("rto_ns").unwrap().parse().unwrap()))
        .collect();
    assert!(rtos.len() >= 5, "only {} timeouts traced", rtos.len());
    for w in rtos.windows(2) {
        assert_eq!(w[1].0, w[0].0 + 1);
        assert_eq!(w[1].1, (w[0].1 * 2).min(64_000_000_000));
    }
}
