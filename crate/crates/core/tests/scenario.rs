use ubr_sim::engine::SimTime;
use ubr_sim::framing::CELL_BITS;
use ubr_sim::scenario::{load_scenario, parse_fraction, Preset, ScenarioConfig, Simulation, LINK_RATE_BPS};
use ubr_sim::switch::DropPolicy;
use ubr_sim::tcp::TcpFlavor;
use ubr_sim::Rational;

#[test]
fn lan_table_row_on_one_line() {
    let c = load_scenario("preset=LAN n=5 buffer=1000 tcp=sack policy=selective_drop").unwrap();
    assert_eq!(c.preset, Preset::Lan);
    assert_eq!((c.n_sources, c.buffer_cells, c.flavor), (5, 1000, TcpFlavor::Sack));
    assert_eq!(c.policy().unwrap(), DropPolicy::SelectiveDrop { r: Rational::new(9, 10), z: Rational::new(4, 5) });
    assert_eq!(c.mss, 512);
    assert_eq!(c.rcvwnd(), 65_536);
    assert_eq!(c.access_delay, SimTime::from_micros(5));
    assert_eq!(c.duration, SimTime::from_secs(10));
    assert_eq!(c.start_times, vec![SimTime::ZERO; 5]);
}

#[test]
fn geo_reno_epd() {
    let c = load_scenario("preset=GEO n=5 buffer=200000 tcp=reno policy=epd").unwrap();
    assert_eq!(c.flavor, TcpFlavor::Reno);
    assert_eq!(c.policy().unwrap().name(), "epd");
    assert_eq!(c.mss, 9180);
    assert_eq!(c.rcvwnd(), 8_704_000);
    assert_eq!(c.backbone_delay, SimTime::from_millis(275));
    assert_eq!(c.duration, SimTime::from_secs(40));
}

#[test]
fn negative_buffer_is_rejected() {
    let e = load_scenario("preset=LAN n=5 buffer=-1 tcp=sack policy=epd").unwrap_err();
    assert_eq!(e.key, "buffer");
    assert_eq!(e.line, Some(1));
}

#[test]
fn multi_line_file_with_comments_and_overrides() {
    let text = "\
# WAN run
policy=fba   # per-VC
R=0.75
Z=1
tcp=newreno
n=3
preset=wan
stagger_us=250
duration=1.5
ack_counting=off
rto_ms=200
";
    let c = load_scenario(text).unwrap();
    assert_eq!(c.preset, Preset::Wan);
    assert_eq!(c.policy().unwrap(), DropPolicy::Fba { r: Rational::new(3, 4), z: Rational::new(1, 1) });
    assert_eq!(c.flavor, TcpFlavor::NewReno);
    assert_eq!(c.buffer_cells, 12_000);
    assert_eq!(c.start_times, vec![SimTime::ZERO, SimTime::from_micros(250), SimTime::from_micros(500)]);
    assert_eq!(c.duration, SimTime::from_millis(1500));
    assert!(!c.ack_counting);
    assert_eq!(c.rto_granularity, SimTime::from_millis(200));
}

#[test]
fn errors_name_key_and_line() {
    let cases = [
        ("preset=LAN\nn=5\ntcp=sack\npolicy=red", "policy", Some(4)),
        ("preset=LAN\nn=5\ntcp=cubic\npolicy=epd", "tcp", Some(3)),
        ("preset=LAN\nn=0\ntcp=sack\npolicy=epd", "n", Some(2)),
        ("preset=LAN\nn=5\ntcp=sack\npolicy=epd\nbogus=1", "bogus", Some(5)),
        ("preset=LAN\nn=5\ntcp=sack\npolicy=epd\nR=1.0", "R", Some(5)),
        ("preset=LAN\nn=5\ntcp=sack\npolicy=epd\nZ=0", "Z", Some(5)),
        ("preset=MARS\nn=5\ntcp=sack\npolicy=epd", "preset", Some(1)),
        ("preset=LAN\nn=5\ntcp=sack", "policy", None),
        ("n=5\ntcp=sack\npolicy=epd", "preset", None),
        ("preset=LAN\nn=5\nn=6\ntcp=sack\npolicy=epd", "n", Some(3)),
        ("preset=LAN n=5 tcp=sack policy=epd junk", "junk", Some(1)),
    ];
    for (text, key, line) in cases {
        let e = load_scenario(text).unwrap_err();
        assert_eq!((e.key.as_str(), e.line), (key, line), "{text:?} gave {e}");
        assert!(e.to_string().contains(key));
    }
}

#[test]
fn window_scale_bound() {
    let e = load_scenario("preset=GEO n=1 tcp=sack policy=epd window=65537 wscale=14").unwrap_err();
    assert_eq!(e.key, "window");
    load_scenario("preset=GEO n=1 tcp=sack policy=epd window=65536 wscale=14").unwrap();
}

#[test]
fn fractions_are_exact() {
    assert_eq!(parse_fraction("0.9").unwrap(), Rational::new(9, 10));
    assert_eq!(parse_fraction("9/10").unwrap(), Rational::new(9, 10));
    assert_eq!(parse_fraction(".25").unwrap(), Rational::new(1, 4));
    assert_eq!(parse_fraction("3").unwrap(), Rational::from_integer(3));
    for bad in ["", ".", "-0.5", "1e3", "1/0", "0.x"] {
        assert!(parse_fraction(bad).is_err(), "{bad}");
    }
}

fn cell_time_ns(cfg: &ScenarioConfig) -> f64 {
    CELL_BITS as f64 * 1e9 / cfg.effective_rate_bps() as f64
}

// A single cell crosses six transmitters per round trip (two host NICs and
// four switch ports), each adding one cell time to pure propagation.
fn probe_check(preset: Preset, nominal: SimTime) {
    let cfg = ScenarioConfig::cell(preset, 1, preset.buffers()[0], TcpFlavor::Sack, "tail_drop");
    assert_eq!(cfg.propagation_rtt(), nominal);
    let measured = Simulation::probe_rtt(&cfg).unwrap().as_nanos() as f64;
    let ct = cell_time_ns(&cfg);
    let propagation = measured - 6.0 * ct;
    assert!((propagation - nominal.as_nanos() as f64).abs() <= ct, "{preset}: {propagation} ns vs {nominal}");
}

#[test]
fn idle_round_trip_matches_presets() {
    probe_check(Preset::Lan, SimTime::from_micros(30));
    probe_check(Preset::Wan, SimTime::from_millis(30));
    probe_check(Preset::Geo, SimTime::from_micros(550_020));
}

#[test]
fn staggered_starts() {
    let mut c = ScenarioConfig::cell(Preset::Lan, 4, 1000, TcpFlavor::Reno, "epd");
    c.set("stagger_us", "10000").unwrap();
    c.duration = SimTime::from_millis(50);
    let mut sim = Simulation::new(c).unwrap();
    sim.run_until(SimTime::from_millis(50)).unwrap();
    for i in 0..4 {
        assert_eq!(sim.first_send_time(i), Some(SimTime::from_millis(10 * u64::from(i))));
    }
}

#[test]
fn five_lan_sources_share_one_bottleneck() {
    let mut c = ScenarioConfig::cell(Preset::Lan, 5, 1000, TcpFlavor::Sack, "selective_drop");
    c.duration = SimTime::from_millis(200);
    let mut sim = Simulation::new(c).unwrap();
    sim.run_until(SimTime::from_millis(200)).unwrap();
    assert_eq!(sim.bottleneck().ledger().k(), 1000);
    let busy = (0..5).filter(|&vc| sim.bottleneck().counters(vc).cells_in > 0).count();
    assert_eq!(busy, 5);
    let r = sim.result(SimTime::from_millis(200));
    assert_eq!(r.link_rate_bps, LINK_RATE_BPS as f64);
    assert!(r.efficiency > 0.5 && r.efficiency <= 1.01, "{}", r.efficiency);
}

#[test]
fn rate_scale_divides_only_the_link_rate() {
    let mut c = ScenarioConfig::preset(Preset::Geo);
    c.set("rate_scale", "4").unwrap();
    assert_eq!(c.effective_rate_bps(), LINK_RATE_BPS / 4);
    assert_eq!(c.backbone_delay, SimTime::from_millis(275));
    assert_eq!(c.buffer_cells, 200_000);
    assert_eq!(c.mss, 9180);
}
