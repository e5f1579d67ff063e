//! Canned scenarios shared by the acceptance suite and the `check` verb.

use crate::engine::SimTime;
use crate::scenario::{Preset, ScenarioConfig, SimError, Simulation};
use crate::tcp::{CongestionState, SenderEvent, TcpFlavor};

/// A single forced loss episode on an otherwise loss-free path.
#[derive(Clone, Debug)]
pub struct LossEpisode {
    pub flavor: TcpFlavor,
    pub window_segments: u64,
    /// Sequence numbers of the segments whose first transmission was
    /// dropped.
    pub dropped: Vec<u64>,
    /// Smoothed RTT when the losses were injected.
    pub rtt: SimTime,
    /// Sender events from the moment of injection onwards.
    pub events: Vec<(SimTime, SenderEvent)>,
    pub timeouts: u64,
}

impl LossEpisode {
    pub fn fast_retransmit_at(&self) -> Option<SimTime> {
        self.events.iter().find(|(_, e)| matches!(e, SenderEvent::FastRetransmit { .. })).map(|(t, _)| *t)
    }

    pub fn last_retransmit_at(&self) -> Option<SimTime> {
        self.events.iter().rev().find(|(_, e)| matches!(e, SenderEvent::Retransmit { .. })).map(|(t, _)| *t)
    }

    pub fn first_exit_at(&self) -> Option<SimTime> {
        self.events.iter().find(|(_, e)| matches!(e, SenderEvent::RecoveryExit { .. })).map(|(t, _)| *t)
    }

    pub fn retransmitted(&self) -> Vec<u64> {
        self.events
            .iter()
            .filter_map(|(_, e)| match e {
                SenderEvent::Retransmit { seq } => Some(*seq),
                _ => None,
            })
            .collect()
    }

    /// `t - fast retransmit`, in RTTs.
    pub fn rtts_after_fr(&self, t: SimTime) -> Option<f64> {
        let fr = self.fast_retransmit_at()?;
        Some(t.saturating_sub(fr).as_secs_f64() / self.rtt.as_secs_f64())
    }
}

/// One source on the WAN preset with a receiver window of
/// `window_segments` segments and an effectively unlimited buffer. Once the
/// window is steady, the next `drop_segments` new segments lose their first
/// transmission at the bottleneck.
pub fn loss_episode(flavor: TcpFlavor, window_segments: u64, drop_segments: u64) -> Result<LossEpisode, SimError> {
    let mut cfg = ScenarioConfig::cell(Preset::Wan, 1, 1_000_000, flavor, "tail_drop");
    cfg.window = window_segments * u64::from(cfg.mss);
    cfg.duration = SimTime::from_secs(8);
    let mss = u64::from(cfg.mss);
    let mut sim = Simulation::new(cfg)?;
    sim.enable_event_log();
    let inject_at = SimTime::from_secs(2);
    sim.run_until(inject_at)?;
    let s = sim.sender(0);
    assert_eq!(s.stats().retransmissions, 0, "path is not loss-free");
    assert_eq!(s.cwnd(), window_segments * mss, "window not yet steady");
    let first = s.snd_max();
    let rtt = s.rto_timer().srtt().expect("RTT sampled");
    let dropped: Vec<u64> = (0..drop_segments).map(|k| first + k * mss).collect();
    for &seq in &dropped {
        sim.script_loss(0, seq);
    }
    let skip = sim.sender(0).events().len();
    sim.run_until(SimTime::from_secs(8))?;
    let s = sim.sender(0);
    Ok(LossEpisode {
        flavor,
        window_segments,
        dropped,
        rtt,
        events: s.events()[skip..].to_vec(),
        timeouts: s.stats().timeouts,
    })
}

/// Congestion-window growth over whole window rounds in congestion
/// avoidance.
#[derive(Clone, Copy, Debug)]
pub struct CaGrowth {
    pub rounds: u32,
    pub cwnd_start: u64,
    pub cwnd_end: u64,
    pub mss: u64,
    /// Whether the sender stayed in congestion avoidance throughout.
    pub stayed_in_ca: bool,
}

impl CaGrowth {
    /// Average growth per round, in segments.
    pub fn segments_per_round(&self) -> f64 {
        (self.cwnd_end - self.cwnd_start) as f64 / self.mss as f64 / f64::from(self.rounds)
    }
}

/// GEO preset, one source with a 512-byte MSS and slow start ending at
/// `ssthresh` bytes. Counts `rounds` window rounds after congestion
/// avoidance begins; a round ends once everything sent at its start is
/// acknowledged.
pub fn ca_growth(ack_counting: bool, ssthresh: u64, rounds: u32, rate_scale: u64) -> Result<CaGrowth, SimError> {
    let mut cfg = ScenarioConfig::cell(Preset::Geo, 1, 600_000, TcpFlavor::Sack, "tail_drop");
    cfg.mss = 512;
    cfg.ack_counting = ack_counting;
    cfg.rate_scale = rate_scale;
    cfg.initial_ssthresh = Some(ssthresh);
    cfg.duration = SimTime::from_secs(3600);
    let mss = u64::from(cfg.mss);
    let mut sim = Simulation::new(cfg)?;
    let step = SimTime::from_millis(1);
    let mut t = SimTime::ZERO;
    while sim.sender(0).state() != CongestionState::CongestionAvoidance {
        t = t + step;
        sim.run_until(t)?;
    }
    let cwnd_start = sim.sender(0).cwnd();
    let mut stayed_in_ca = true;
    for _ in 0..rounds {
        let end = sim.sender(0).snd_max();
        while sim.sender(0).snd_una() < end {
            t = t + step;
            sim.run_until(t)?;
            stayed_in_ca &= sim.sender(0).state() == CongestionState::CongestionAvoidance;
        }
    }
    Ok(CaGrowth { rounds, cwnd_start, cwnd_end: sim.sender(0).cwnd(), mss, stayed_in_ca })
}

/// Small, short scenarios covering every flavor and drop policy, sized to
/// congest the bottleneck within a fraction of a second.
pub fn micro_scenarios() -> Vec<ScenarioConfig> {
    let mut out = Vec::new();
    for flavor in TcpFlavor::ALL {
        for policy in ["tail_drop", "epd", "selective_drop", "fba"] {
            let mut c = ScenarioConfig::cell(Preset::Lan, 4, 300, flavor, policy);
            c.duration = SimTime::from_millis(300);
            c.set("stagger_us", "50").expect("valid stagger");
            out.push(c);
        }
    }
    let mut wan = ScenarioConfig::cell(Preset::Wan, 3, 2000, TcpFlavor::Sack, "selective_drop");
    wan.duration = SimTime::from_millis(800);
    out.push(wan);
    out
}

/// Runs one micro-scenario with per-event port checks and the end-of-run
/// conservation audit.
pub fn check_scenario(cfg: &ScenarioConfig) -> Result<crate::metrics::RunResult, SimError> {
    let mut sim = Simulation::new(cfg.clone())?;
    sim.set_paranoid(true);
    sim.finish()
}
