//! Efficiency, fairness, traces and the analytic SACK recovery bound.

use std::fmt::Write as _;

use num_traits::Float;
use serde::Serialize;

use crate::Rational;

/// Sum of per-connection throughputs over the maximum possible TCP goodput.
pub fn efficiency<T: Float>(throughputs: &[T], max_goodput: T) -> T {
    assert!(max_goodput > T::zero(), "max_goodput must be positive");
    throughputs.iter().fold(T::zero(), |a, &t| a + t) / max_goodput
}

/// Jain's index `(sum x)^2 / (N * sum x^2)`. All-zero input yields 0.
pub fn fairness<T: Float>(x: &[T]) -> T {
    assert!(!x.is_empty(), "fairness of zero sources");
    let sum = x.iter().fold(T::zero(), |a, &v| a + v);
    let sq = x.iter().fold(T::zero(), |a, &v| a + v * v);
    if sq == T::zero() {
        return T::zero();
    }
    let n = T::from(x.len()).expect("source count fits a float");
    sum * sum / (n * sq)
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("recovery bound needs n > 2 (at most half the window lost), got {0}")]
pub struct OutOfModel(pub Rational);

/// Round trips a SACK sender needs to retransmit a loss of `1/n` of its
/// window: the smallest `k` with `2^k * (n - 2) >= n`, i.e.
/// `ceil(log2(n / (n - 2)))`.
pub fn sack_recovery_bound(n: Rational) -> Result<u32, OutOfModel> {
    let (p, q) = (u128::from(*n.numer()), u128::from(*n.denom()));
    if p <= 2 * q {
        return Err(OutOfModel(n));
    }
    let gap = p - 2 * q;
    let mut k = 0;
    while gap << k < p {
        k += 1;
    }
    Ok(k)
}

/// One `time_ns,series,value` trace sample.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceRow {
    pub time_ns: u64,
    pub series: String,
    pub value: f64,
}

#[derive(Clone, Debug, Default)]
pub struct Trace {
    rows: Vec<TraceRow>,
}

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, time_ns: u64, series: impl Into<String>, value: f64) {
        self.rows.push(TraceRow { time_ns, series: series.into(), value });
    }

    pub fn rows(&self) -> &[TraceRow] {
        &self.rows
    }

    pub fn series<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a TraceRow> + 'a {
        self.rows.iter().filter(move |r| r.series == name)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("time_ns,series,value\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{}", r.time_ns, r.series, r.value);
        }
        s
    }
}

/// Outcome of one simulation run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunResult {
    pub preset: String,
    pub n_sources: u32,
    pub buffer_cells: u64,
    pub flavor: String,
    pub policy: String,
    pub mss: u32,
    pub duration_s: f64,
    pub link_rate_bps: f64,
    pub max_goodput_bps: f64,
    pub delivered_bytes: Vec<u64>,
    pub throughput_bps: Vec<f64>,
    pub efficiency: f64,
    pub fairness: f64,
    pub cells_dropped: u64,
    pub frames_discarded: u64,
    pub retransmissions: u64,
    pub fast_retransmits: u64,
    pub timeouts: u64,
    pub events: u64,
}

impl RunResult {
    pub const MACHINE_HEADER: &'static str = "preset,n,K,flavor,policy,efficiency,fairness,timeouts";

    /// `preset,n,K,flavor,policy,efficiency,fairness,timeouts`.
    pub fn machine_row(&self) -> String {
        format!(
            "{},{},{},{},{},{:.6},{:.6},{}",
            self.preset,
            self.n_sources,
            self.buffer_cells,
            self.flavor,
            self.policy,
            self.efficiency,
            self.fairness,
            self.timeouts
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("RunResult serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Ratio;
    use proptest::prelude::*;

    #[test]
    fn efficiency_examples() {
        assert!((efficiency(&[25.04; 5], 125.2) - 1.0f64).abs() < 1e-12);
        assert!((efficiency(&[62.6], 125.2) - 0.5f64).abs() < 1e-12);
        assert_eq!(efficiency(&[0.0f64; 3], 125.2), 0.0);
    }

    #[test]
    fn fairness_degenerate_and_generic() {
        assert_eq!(fairness(&[0.0f64, 0.0]), 0.0);
        assert!((fairness(&[0.9f32, 1.1]) - 4.0 / 4.04).abs() < 1e-6);
    }

    #[test]
    fn recovery_bound_examples() {
        assert_eq!(sack_recovery_bound(Ratio::from_integer(4)), Ok(1));
        assert_eq!(sack_recovery_bound(Ratio::new(8, 3)), Ok(2));
        assert_eq!(sack_recovery_bound(Ratio::new(5, 2)), Ok(3));
        assert_eq!(sack_recovery_bound(Ratio::from_integer(100)), Ok(1));
        assert!(sack_recovery_bound(Ratio::from_integer(2)).is_err());
        assert!(sack_recovery_bound(Ratio::new(3, 2)).is_err());
    }

    #[test]
    fn machine_row_format() {
        let r = RunResult {
            preset: "lan".into(),
            n_sources: 5,
            buffer_cells: 1000,
            flavor: "sack".into(),
            policy: "epd".into(),
            mss: 512,
            duration_s: 10.0,
            link_rate_bps: 155.52e6,
            max_goodput_bps: 125.2e6,
            delivered_bytes: vec![],
            throughput_bps: vec![],
            efficiency: 0.5,
            fairness: 1.0 / 3.0,
            cells_dropped: 0,
            frames_discarded: 0,
            retransmissions: 0,
            fast_retransmits: 0,
            timeouts: 2,
            events: 0,
        };
        assert_eq!(r.machine_row(), "lan,5,1000,sack,epd,0.500000,0.333333,2");
    }

    proptest! {
        #[test]
        fn fairness_bounds_and_scale_invariance(
            x in prop::collection::vec(0.0f64..1e3, 1..20), c in 1e-3f64..1e3,
        ) {
            let f = fairness(&x);
            if x.iter().all(|v| *v == 0.0) {
                prop_assert_eq!(f, 0.0);
            } else {
                let n = x.len() as f64;
                prop_assert!(f >= 1.0 / n - 1e-12 && f <= 1.0 + 1e-12);
                let scaled: Vec<f64> = x.iter().map(|v| v * c).collect();
                prop_assert!((fairness(&scaled) - f).abs() < 1e-9);
            }
        }

        #[test]
        fn bound_matches_log2(p in 3u64..10_000, q in 1u64..1000) {
            prop_assume!(p > 2 * q);
            let n = Ratio::new(p, q);
            let k = sack_recovery_bound(n).unwrap();
            let ratio = p as f64 / (p as f64 - 2.0 * q as f64);
            // Exact characterisation, checked in floating point away from powers of two.
            let l = ratio.log2();
            if (l - l.round()).abs() > 1e-9 {
                prop_assert_eq!(k, l.ceil() as u32);
            }
        }
    }
}
