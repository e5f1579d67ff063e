use crate::engine::SimTime;

/// Retransmission timer parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RtoConfig {
    /// Timer tick; every RTO is a whole number of ticks.
    pub granularity: SimTime,
    pub min_ticks: u32,
    pub max: SimTime,
    /// RTO used before the first RTT sample.
    pub initial: SimTime,
}

impl Default for RtoConfig {
    fn default() -> Self {
        RtoConfig {
            granularity: SimTime::from_millis(500),
            min_ticks: 2,
            max: SimTime::from_secs(64),
            initial: SimTime::from_secs(3),
        }
    }
}

/// Smoothed RTT estimator with exponential back-off.
///
/// RTO = srtt + 4 * rttvar, rounded up to a tick, clamped to
/// `[min_ticks * granularity, max]`, then doubled once per back-off.
#[derive(Clone, Debug)]
pub struct RtoTimer {
    cfg: RtoConfig,
    srtt: Option<u64>,
    rttvar: u64,
    backoff: u32,
}

impl RtoTimer {
    pub fn new(cfg: RtoConfig) -> Self {
        RtoTimer { cfg, srtt: None, rttvar: 0, backoff: 0 }
    }

    pub fn srtt(&self) -> Option<SimTime> {
        self.srtt.map(SimTime)
    }

    pub fn backoff(&self) -> u32 {
        self.backoff
    }

    pub fn sample(&mut self, rtt: SimTime) {
        let r = rtt.as_nanos();
        match self.srtt {
            None => {
                self.srtt = Some(r);
                self.rttvar = r / 2;
            }
            Some(s) => {
                let delta = s.abs_diff(r);
                self.rttvar = (3 * self.rttvar + delta) / 4;
                self.srtt = Some((7 * s + r) / 8);
            }
        }
        self.backoff = 0;
    }

    pub fn back_off(&mut self) {
        self.backoff = (self.backoff + 1).min(16);
    }

    pub fn current(&self) -> SimTime {
        let gran = self.cfg.granularity.as_nanos().max(1);
        let raw = match self.srtt {
            None => self.cfg.initial.as_nanos(),
            Some(s) => s + 4 * self.rttvar,
        };
        let ticks = raw.div_ceil(gran).max(u64::from(self.cfg.min_ticks));
        let base = (ticks * gran).min(self.cfg.max.as_nanos());
        SimTime(base.saturating_mul(1 << self.backoff).min(self.cfg.max.as_nanos()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lan_rtt_clamps_to_two_ticks() {
        let mut t = RtoTimer::new(RtoConfig::default());
        t.sample(SimTime::from_micros(30));
        assert_eq!(t.current(), SimTime::from_secs(1));
    }

    #[test]
    fn initial_value_before_samples() {
        let t = RtoTimer::new(RtoConfig::default());
        assert_eq!(t.current(), SimTime::from_secs(3));
    }

    #[test]
    fn geo_rtt_rounds_up_to_ticks() {
        let mut t = RtoTimer::new(RtoConfig::default());
        t.sample(SimTime::from_millis(550));
        // 550 + 4 * 275 = 1650 ms -> 4 ticks.
        assert_eq!(t.current(), SimTime::from_millis(2000));
    }

    #[test]
    fn backoff_doubles_and_caps() {
        let mut t = RtoTimer::new(RtoConfig::default());
        t.sample(SimTime::from_micros(30));
        t.back_off();
        assert_eq!(t.current(), SimTime::from_secs(2));
        for _ in 0..10 {
            t.back_off();
        }
        assert_eq!(t.current(), SimTime::from_secs(64));
        t.sample(SimTime::from_micros(30));
        assert_eq!(t.current(), SimTime::from_secs(1));
    }
}
