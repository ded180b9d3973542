use etnmpc::config::{RunConfig, PRESET_SEC6};
use etnmpc::export;
use etnmpc::model::SystemModel;
use etnmpc::sim::{self, Branch, EventKind, Mode, Scenario, SimLog};
use etnmpc::terminal::TerminalRegion;
use etnmpc::Error;

fn preset() -> (RunConfig, SystemModel, TerminalRegion) {
    let cfg = RunConfig::preset(PRESET_SEC6).unwrap();
    let model = cfg.build_model().unwrap();
    let region = cfg.build_region(&model).unwrap();
    (cfg, model, region)
}

fn scenario(seed: u64) -> Scenario {
    let (cfg, model, region) = preset();
    cfg.scenario(&model, &region, seed)
}

fn csv_bytes(log: &SimLog) -> Vec<u8> {
    let mut buf = Vec::new();
    export::write_trace(log, &mut buf).unwrap();
    export::write_events(log, &mut buf).unwrap();
    export::write_cycles(log, &mut buf).unwrap();
    buf
}

#[test]
fn start_inside_region_switches_immediately() {
    let mut sc = scenario(0);
    sc.x0 = vec![0.01, -0.01];
    let log = sim::run(&sc).unwrap();
    assert_eq!(log.metrics.ocp_count, 0);
    assert_eq!(log.metrics.convergence_time, Some(0.0));
    assert_eq!(log.metrics.mode_switch_time, Some(0.0));
    assert!(log.cycles.is_empty());
    let last = log.trace.last().unwrap();
    assert!((last.t - sc.dwell).abs() < 1e-9);
}

#[test]
fn period_longer_than_t_star_loses_feasibility() {
    let sc = scenario(0);
    match sim::run_periodic(&sc, 5.0) {
        Err(Error::FeasibilityLost { log, .. }) => assert_eq!(log.cycles.len(), 1),
        other => panic!("expected feasibility loss, got {:?}", other.map(|l| l.metrics)),
    }
}

#[test]
fn undisturbed_periodic_solve_count() {
    let mut sc = scenario(0);
    sc.disturbance.bound = 0.0;
    let h = 0.1;
    let log = sim::run_periodic(&sc, h).unwrap();
    let switch = log.metrics.mode_switch_time.unwrap();
    let expected = switch / h;
    assert!(
        (log.metrics.ocp_count as f64 - expected).abs() <= 1.0,
        "{} solves for a switch at {switch}",
        log.metrics.ocp_count
    );
    assert!(log.cycles.iter().all(|c| c.branch == Branch::Periodic));
}

#[test]
fn self_triggered_measures_only_at_updates() {
    let sc = scenario(0);
    let st = sim::run_self_triggered(&sc).unwrap();
    assert!(st.cycles.iter().all(|c| c.ets_evaluations == 0));
    assert!(!st
        .events
        .iter()
        .any(|e| matches!(e.kind, EventKind::EtsContinue | EventKind::EtsStop)));
    assert_eq!(st.metrics.measurement_count, st.metrics.ocp_count + 1);
    let bound = st.metrics.entry_bound.unwrap();
    assert!(st.metrics.convergence_time.unwrap() <= bound);

    let et = sim::run_event_triggered(&sc).unwrap();
    assert!(st.metrics.ocp_count >= et.metrics.ocp_count);
    // both start from the same state, so cycle 0 sees the same T*
    assert!(st.cycles[0].delta.unwrap() <= et.cycles[0].delta.unwrap() + 1e-12);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let sc = scenario(3);
    let a = sim::run(&sc).unwrap();
    let b = sim::run(&sc).unwrap();
    assert_eq!(a, b);
    assert_eq!(csv_bytes(&a), csv_bytes(&b));
}

#[test]
fn log_structure() {
    let log = sim::run(&scenario(1)).unwrap();
    assert!(log.events.windows(2).all(|w| w[0].t <= w[1].t));
    assert!(log.trace.windows(2).all(|w| w[0].t < w[1].t));
    let switch = log.events.iter().position(|e| e.kind == EventKind::ModeSwitch).unwrap();
    assert!(!log.events[switch..].iter().any(|e| e.kind == EventKind::OcpSolve));
    // one measurement per update instant plus one per trigger evaluation
    let ets: usize = log.cycles.iter().map(|c| c.ets_evaluations).sum();
    assert_eq!(log.metrics.measurement_count, log.metrics.ocp_count + 1 + ets);
    for w in log.cycles.windows(2) {
        assert!((w[0].t_k + w[0].delta.unwrap() - w[1].t_k).abs() < 1e-12);
        assert!(w[0].delta.unwrap() <= w[0].t_star + 1e-12);
    }
}

#[test]
fn gamma_trade_off_on_matched_seed() {
    let base = scenario(0);
    let runs: Vec<SimLog> = [0.2, 0.5, 1.0]
        .iter()
        .map(|&g| {
            let mut sc = base.clone();
            sc.gamma = g;
            sim::run(&sc).unwrap()
        })
        .collect();
    for w in runs.windows(2) {
        assert!(w[0].metrics.measurement_count >= w[1].metrics.measurement_count);
        assert!(w[0].metrics.ocp_count <= w[1].metrics.ocp_count);
    }
}

#[test]
fn scenario_validation() {
    let mut sc = scenario(0);
    sc.gamma = 0.0;
    assert!(matches!(sim::run(&sc), Err(Error::InvalidConfig(_))));
    let mut sc = scenario(0);
    sc.mode = Mode::Periodic { period: 0.0 };
    assert!(matches!(sim::run(&sc), Err(Error::InvalidConfig(_))));
}

#[test]
fn unreachable_start_is_initially_infeasible() {
    let mut sc = scenario(0);
    sc.x0 = vec![3.0, 0.0];
    assert!(matches!(sim::run(&sc), Err(Error::InitialInfeasible(_))));
}
