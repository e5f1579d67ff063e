use ubr_sim::engine::SimTime;
use ubr_sim::experiments::{check_scenario, micro_scenarios};
use ubr_sim::framing::cells_per_segment;
use ubr_sim::scenario::{Preset, ScenarioConfig, Simulation};
use ubr_sim::switch::DropReason;
use ubr_sim::tcp::{CongestionState, TcpFlavor};

fn short(preset: Preset, n: u32, k: u64, flavor: TcpFlavor, policy: &str, ms: u64) -> ScenarioConfig {
    let mut c = ScenarioConfig::cell(preset, n, k, flavor, policy);
    c.duration = SimTime::from_millis(ms);
    c
}

#[test]
fn micro_scenarios_conserve_cells() {
    for cfg in micro_scenarios() {
        let r = check_scenario(&cfg).unwrap_or_else(|e| panic!("{}: {e}", cfg.label()));
        assert!(r.efficiency <= 1.01, "{}: efficiency {}", cfg.label(), r.efficiency);
        assert!(r.fairness <= 1.0 + 1e-9);
    }
}

#[test]
fn congested_runs_drop_and_still_balance() {
    let cfg = short(Preset::Lan, 5, 500, TcpFlavor::Reno, "tail_drop", 500);
    let mut sim = Simulation::new(cfg).unwrap();
    sim.run_until(SimTime::from_millis(500)).unwrap();
    assert!(sim.bottleneck().total_counters().cells_dropped > 0);
    let r = sim.finish().unwrap();
    assert!(r.cells_dropped > 0 && r.retransmissions > 0);
}

#[test]
fn identical_runs_are_identical() {
    let cfg = short(Preset::Lan, 5, 1000, TcpFlavor::Sack, "fba", 400);
    let a = Simulation::new(cfg.clone()).unwrap().finish().unwrap();
    let b = Simulation::new(cfg).unwrap().finish().unwrap();
    assert_eq!(a, b);
    assert_eq!(a.to_json(), b.to_json());
}

#[test]
fn tail_drop_never_drops_when_buffer_holds_all_windows() {
    let cfg = short(Preset::Lan, 5, 8000, TcpFlavor::Reno, "tail_drop", 500);
    let cells = 5 * cfg.rcvwnd() / u64::from(cfg.mss) * u64::from(cells_per_segment(cfg.mss));
    assert!(cells <= cfg.buffer_cells, "{cells}");
    let mut sim = Simulation::new(cfg).unwrap();
    sim.run_until(SimTime::from_millis(500)).unwrap();
    assert_eq!(sim.bottleneck().total_counters().cells_dropped, 0);
    assert!(sim.bottleneck().peak_occupancy() > 6000);
}

#[test]
fn frame_policies_never_leave_partial_frames_with_headroom() {
    // R * K plus one frame from every source stays below K.
    for policy in ["epd", "selective_drop", "fba"] {
        let cfg = short(Preset::Lan, 5, 1000, TcpFlavor::Sack, policy, 400);
        let mut c = cfg.clone();
        c.set("R", "0.5").unwrap();
        let mut sim = Simulation::new(c).unwrap();
        sim.enable_drop_log();
        sim.run_until(SimTime::from_millis(400)).unwrap();
        assert!(!sim.drop_log().is_empty(), "{policy}: no congestion");
        assert!(sim.drop_log().iter().all(|d| d.reason != DropReason::Overflow), "{policy}");
        assert_eq!(sim.partial_frames(), 0, "{policy}");
    }
}

#[test]
fn tail_drop_does_leave_partial_frames() {
    let mut sim = Simulation::new(short(Preset::Lan, 5, 1000, TcpFlavor::Sack, "tail_drop", 400)).unwrap();
    sim.run_until(SimTime::from_millis(400)).unwrap();
    assert!(sim.partial_frames() > 0);
}

#[test]
fn drop_log_rows_name_policy() {
    let mut sim = Simulation::new(short(Preset::Lan, 5, 1000, TcpFlavor::Sack, "selective_drop", 300)).unwrap();
    sim.enable_drop_log();
    sim.run_until(SimTime::from_millis(300)).unwrap();
    let log = sim.drop_log();
    assert!(log.iter().any(|d| d.reason == DropReason::SelectiveDrop));
    assert!(log.windows(2).all(|w| w[0].time <= w[1].time));
    assert!(log.iter().all(|d| d.vc < 5));
}

#[test]
fn loss_free_single_source_uses_the_link() {
    let r = Simulation::new(short(Preset::Lan, 1, 3000, TcpFlavor::Reno, "epd", 2000)).unwrap().finish().unwrap();
    assert_eq!(r.cells_dropped, 0);
    assert_eq!(r.retransmissions, 0);
    assert!(r.efficiency > 0.98, "{}", r.efficiency);
    assert_eq!(r.fairness, 1.0);
}

#[test]
fn trace_shows_slow_start_doubling() {
    let cfg = short(Preset::Wan, 1, 36_000, TcpFlavor::Reno, "tail_drop", 400);
    let mss = f64::from(cfg.mss);
    let mut sim = Simulation::new(cfg).unwrap();
    sim.enable_trace(SimTime::from_millis(1));
    sim.run_until(SimTime::from_millis(400)).unwrap();
    let tr = sim.trace().unwrap();
    // Sample once per ~31 ms round trip, just before each round's ACKs
    // return.
    let at = |ms: u64| tr.series("cwnd.0").filter(|r| r.time_ns <= ms * 1_000_000).last().unwrap().value;
    let mut prev = at(25);
    assert_eq!(prev, mss);
    for round in 1..6 {
        let v = at(25 + round * 31);
        assert_eq!(v, 2.0 * prev, "round {round}");
        prev = v;
    }
    assert!(tr.to_csv().starts_with("time_ns,series,value\n"));
    assert!(tr.series("queue").count() > 300);
}

#[test]
fn trace_shows_rto_collapse() {
    let cfg = short(Preset::Lan, 5, 1000, TcpFlavor::Vanilla, "tail_drop", 3000);
    let mss = f64::from(cfg.mss);
    let mut sim = Simulation::new(cfg).unwrap();
    sim.enable_trace(SimTime::from_millis(10));
    sim.enable_event_log();
    sim.run_until(SimTime::from_millis(3000)).unwrap();
    assert!(sim.sender(0).stats().timeouts > 0);
    let tr = sim.trace().unwrap();
    let (t, _) = sim.sender(0).events().iter().find(|(_, e)| matches!(e, ubr_sim::tcp::SenderEvent::Timeout { .. })).unwrap();
    let row = tr.series("cwnd.0").find(|r| r.time_ns == t.as_nanos()).expect("row at the timeout");
    assert_eq!(row.value, mss);
    let state = tr.series("state.0").find(|r| r.time_ns == t.as_nanos()).unwrap();
    assert_eq!(state.value, f64::from(CongestionState::SlowStart.code()));
}

#[test]
fn trace_shows_newreno_recovery_steps() {
    let mut cfg = short(Preset::Wan, 1, 1_000_000, TcpFlavor::NewReno, "tail_drop", 3000);
    cfg.window = 32 * u64::from(cfg.mss);
    let mut sim = Simulation::new(cfg).unwrap();
    sim.enable_trace(SimTime::from_millis(5));
    sim.run_until(SimTime::from_secs(1)).unwrap();
    let first = sim.sender(0).snd_max();
    for k in 0..3 {
        sim.script_loss(0, first + k * 512);
    }
    sim.run_until(SimTime::from_secs(3)).unwrap();
    assert_eq!(sim.sender(0).stats().timeouts, 0);
    let tr = sim.trace().unwrap();
    let recovery: Vec<_> = tr
        .series("state.0")
        .filter(|r| r.value == f64::from(CongestionState::FastRecovery.code()))
        .map(|r| r.time_ns)
        .collect();
    // One row at fast retransmit and one per partial-ACK retransmission.
    let steps: std::collections::BTreeSet<u64> = recovery.iter().copied().collect();
    assert!(steps.len() >= 3, "{steps:?}");
    assert_eq!(sim.sender(0).stats().retransmissions, 3);
}
