//! Scenario configuration: presets, the `key=value` scenario format and the
//! simulation built from it.
//!
//! ```text
//! # five SACK sources on the LAN preset
//! preset=LAN
//! n=5
//! buffer=1000
//! tcp=sack
//! policy=selective_drop
//! ```
//!
//! Pairs may also share a line, separated by whitespace. The preset is
//! expanded first, so explicit keys override it wherever they appear.

mod sim;

use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;

use crate::engine::SimTime;
use crate::switch::{DropPolicy, PolicyError};
use crate::tcp::TcpFlavor;
use crate::Rational;

pub use sim::{SimError, Simulation};

/// Default link rate, 155.52 Mbit/s (OC-3).
pub const LINK_RATE_BPS: u64 = 155_520_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Preset {
    Lan,
    Wan,
    Geo,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::Lan, Preset::Wan, Preset::Geo];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Lan => "LAN",
            Preset::Wan => "WAN",
            Preset::Geo => "GEO",
        }
    }

    pub fn access_delay(self) -> SimTime {
        match self {
            Preset::Lan | Preset::Geo => SimTime::from_micros(5),
            Preset::Wan => SimTime::from_millis(5),
        }
    }

    pub fn backbone_delay(self) -> SimTime {
        match self {
            Preset::Lan => SimTime::from_micros(5),
            Preset::Wan => SimTime::from_millis(5),
            Preset::Geo => SimTime::from_millis(275),
        }
    }

    /// The two buffer sizes (cells) the preset is evaluated with.
    pub fn buffers(self) -> [u64; 2] {
        match self {
            Preset::Lan => [1000, 3000],
            Preset::Wan => [12_000, 36_000],
            Preset::Geo => [200_000, 600_000],
        }
    }

    pub fn mss(self) -> u32 {
        match self {
            Preset::Lan | Preset::Wan => 512,
            Preset::Geo => 9180,
        }
    }

    /// Advertised window before scaling, and the scale shift.
    pub fn window(self) -> (u64, u8) {
        match self {
            Preset::Lan => (65_536, 0),
            Preset::Wan => (600_000, 0),
            Preset::Geo => (34_000, 8),
        }
    }

    pub fn duration(self) -> SimTime {
        match self {
            Preset::Lan => SimTime::from_secs(10),
            Preset::Wan => SimTime::from_secs(20),
            Preset::Geo => SimTime::from_secs(40),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "LAN" => Ok(Preset::Lan),
            "WAN" => Ok(Preset::Wan),
            "GEO" | "SAT" | "SATELLITE" => Ok(Preset::Geo),
            _ => Err(format!("unknown preset '{s}' (expected LAN, WAN or GEO)")),
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub struct ScenarioError {
    pub line: Option<usize>,
    pub key: String,
    pub message: String,
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: key '{}': {}", self.key, self.message),
            None => write!(f, "key '{}': {}", self.key, self.message),
        }
    }
}

impl ScenarioError {
    fn new(line: Option<usize>, key: &str, message: impl Into<String>) -> Self {
        ScenarioError { line, key: key.to_string(), message: message.into() }
    }
}

/// A fully resolved scenario.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub preset: Preset,
    pub n_sources: u32,
    pub flavor: TcpFlavor,
    pub policy_name: String,
    pub r: Rational,
    pub z: Rational,
    pub buffer_cells: u64,
    pub mss: u32,
    /// Advertised window before scaling.
    pub window: u64,
    pub wscale: u8,
    pub access_delay: SimTime,
    pub backbone_delay: SimTime,
    pub link_rate_bps: u64,
    /// Divides the link rate; every delay, size and duration is unchanged.
    pub rate_scale: u64,
    pub duration: SimTime,
    pub ack_counting: bool,
    pub rto_granularity: SimTime,
    pub start_times: Vec<SimTime>,
    pub seed: u64,
    /// Overrides the initial slow-start threshold (defaults to the window).
    pub initial_ssthresh: Option<u64>,
}

impl ScenarioConfig {
    pub const KEYS: [&'static str; 16] = [
        "preset", "n", "buffer", "tcp", "policy", "R", "Z", "mss", "window", "wscale", "duration", "ack_counting",
        "rto_ms", "stagger_us", "seed", "rate_scale",
    ];

    /// Preset defaults: one source, SACK over tail drop, the smaller buffer.
    pub fn preset(preset: Preset) -> Self {
        let (window, wscale) = preset.window();
        ScenarioConfig {
            preset,
            n_sources: 1,
            flavor: TcpFlavor::Sack,
            policy_name: "tail_drop".to_string(),
            r: DropPolicy::default_r(),
            z: DropPolicy::default_z(),
            buffer_cells: preset.buffers()[0],
            mss: preset.mss(),
            window,
            wscale,
            access_delay: preset.access_delay(),
            backbone_delay: preset.backbone_delay(),
            link_rate_bps: LINK_RATE_BPS,
            rate_scale: 1,
            duration: preset.duration(),
            ack_counting: true,
            rto_granularity: SimTime::from_millis(500),
            start_times: vec![SimTime::ZERO],
            seed: 0,
            initial_ssthresh: None,
        }
    }

    /// Convenience constructor for the common table-cell shape.
    pub fn cell(preset: Preset, n: u32, buffer: u64, flavor: TcpFlavor, policy: &str) -> Self {
        let mut c = Self::preset(preset);
        c.n_sources = n;
        c.start_times = vec![SimTime::ZERO; n as usize];
        c.buffer_cells = buffer;
        c.flavor = flavor;
        c.policy_name = policy.to_string();
        c
    }

    pub fn policy(&self) -> Result<DropPolicy, PolicyError> {
        DropPolicy::from_name(&self.policy_name, self.r, self.z)
    }

    /// Receiver window in bytes after scaling.
    pub fn rcvwnd(&self) -> u64 {
        self.window << self.wscale
    }

    /// Bottleneck rate after `rate_scale`.
    pub fn effective_rate_bps(&self) -> u64 {
        self.link_rate_bps / self.rate_scale
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ScenarioError> {
        let err = |m: String| ScenarioError::new(None, key, m);
        match key {
            "preset" => {
                let p: Preset = value.parse().map_err(err)?;
                let n = self.n_sources;
                *self = Self::preset(p);
                self.set_sources(n);
            }
            "n" => {
                let n: u32 = parse_int(value).map_err(err)?;
                if n == 0 {
                    return Err(err("need at least one source".into()));
                }
                self.set_sources(n);
            }
            "buffer" => {
                self.buffer_cells = parse_int(value).map_err(err)?;
                if self.buffer_cells == 0 {
                    return Err(err("buffer must hold at least one cell".into()));
                }
            }
            "tcp" => self.flavor = value.parse().map_err(err)?,
            "policy" => {
                DropPolicy::from_name(value, DropPolicy::default_r(), DropPolicy::default_z())
                    .map_err(|e| err(e.to_string()))?;
                self.policy_name = value.to_ascii_lowercase();
            }
            "R" | "r" => {
                let r = parse_fraction(value).map_err(err)?;
                if *r.numer() == 0 || r >= Ratio::from_integer(1) {
                    return Err(err(format!("{value} is outside (0, 1)")));
                }
                self.r = r;
            }
            "Z" | "z" => {
                let z = parse_fraction(value).map_err(err)?;
                if *z.numer() == 0 || z > Ratio::from_integer(1) {
                    return Err(err(format!("{value} is outside (0, 1]")));
                }
                self.z = z;
            }
            "mss" => {
                self.mss = parse_int(value).map_err(err)?;
                if self.mss == 0 || self.mss > 65_495 {
                    return Err(err(format!("mss {value} out of range")));
                }
            }
            "window" => self.window = parse_int(value).map_err(err)?,
            "wscale" => {
                self.wscale = parse_int(value).map_err(err)?;
                if self.wscale > 14 {
                    return Err(err("window scale shift is at most 14".into()));
                }
            }
            "duration" => {
                let d = parse_fraction(value).map_err(err)?;
                let ns = u128::from(*d.numer()) * 1_000_000_000 / u128::from(*d.denom());
                if ns == 0 {
                    return Err(err("duration must be positive".into()));
                }
                self.duration = SimTime(u64::try_from(ns).map_err(|_| err("duration too long".into()))?);
            }
            "ack_counting" => self.ack_counting = parse_bool(value).map_err(err)?,
            "rto_ms" => {
                let ms: u64 = parse_int(value).map_err(err)?;
                if ms == 0 {
                    return Err(err("timer granularity must be positive".into()));
                }
                self.rto_granularity = SimTime::from_millis(ms);
            }
            "stagger_us" => {
                let us: u64 = parse_int(value).map_err(err)?;
                self.start_times = (0..u64::from(self.n_sources)).map(|i| SimTime::from_micros(i * us)).collect();
            }
            "seed" => self.seed = parse_int(value).map_err(err)?,
            "rate_scale" => {
                self.rate_scale = parse_int(value).map_err(err)?;
                if self.rate_scale == 0 {
                    return Err(err("rate scale must be positive".into()));
                }
            }
            _ => return Err(err("unknown key".into())),
        }
        Ok(())
    }

    fn set_sources(&mut self, n: u32) {
        // Keep an existing stagger pattern when the source count changes.
        let step = self.start_times.get(1).map_or(SimTime::ZERO, |t| *t);
        self.n_sources = n;
        self.start_times = (0..u64::from(n)).map(|i| SimTime(i * step.as_nanos())).collect();
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |key: &str, m: String| Err(ScenarioError::new(None, key, m));
        if self.n_sources == 0 {
            return bad("n", "need at least one source".into());
        }
        if self.start_times.len() != self.n_sources as usize {
            return bad("stagger_us", "one start time per source required".into());
        }
        let wnd = u128::from(self.window) << self.wscale;
        if wnd > 1 << 30 {
            return bad("window", format!("scaled window {wnd} exceeds 2^30"));
        }
        if wnd < u128::from(self.mss) {
            return bad("window", format!("scaled window {wnd} is smaller than one segment"));
        }
        if self.effective_rate_bps() == 0 {
            return bad("rate_scale", "link rate scaled to zero".into());
        }
        self.policy().map_err(|e| ScenarioError::new(None, "policy", e.to_string()))?;
        Ok(())
    }

    /// Short human label, e.g. `LAN n=5 K=1000 sack/epd`.
    pub fn label(&self) -> String {
        format!(
            "{} n={} K={} {}/{}",
            self.preset, self.n_sources, self.buffer_cells, self.flavor, self.policy_name
        )
    }
}

/// Parses the scenario text format. `preset`, `n`, `tcp` and `policy` are
/// required.
pub fn load_scenario(text: &str) -> Result<ScenarioConfig, ScenarioError> {
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("");
        for tok in line.split_whitespace() {
            let Some((k, v)) = tok.split_once('=') else {
                return Err(ScenarioError::new(Some(line_no), tok, "expected key=value"));
            };
            if v.is_empty() {
                return Err(ScenarioError::new(Some(line_no), k, "missing value"));
            }
            if pairs.iter().any(|(pk, _, _): &(&str, &str, usize)| *pk == k) {
                return Err(ScenarioError::new(Some(line_no), k, "key given twice"));
            }
            pairs.push((k, v, line_no));
        }
    }
    for required in ["preset", "n", "tcp", "policy"] {
        if !pairs.iter().any(|(k, _, _)| *k == required) {
            return Err(ScenarioError::new(None, required, "missing required key"));
        }
    }
    // Preset first, then the source count (stagger depends on it), then the rest.
    let rank = |k: &str| match k {
        "preset" => 0,
        "n" => 1,
        "stagger_us" => 3,
        _ => 2,
    };
    pairs.sort_by_key(|(k, _, line)| (rank(k), *line));
    let mut cfg = ScenarioConfig::preset(Preset::Lan);
    for (k, v, line) in pairs {
        cfg.set(k, v).map_err(|mut e| {
            e.line = Some(line);
            e
        })?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_int<T: FromStr>(s: &str) -> Result<T, String> {
    s.replace('_', "").parse().map_err(|_| format!("'{s}' is not a valid non-negative integer"))
}

fn parse_bool(s: &str) -> Result<bool, String> {
    match s.to_ascii_lowercase().as_str() {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(format!("'{s}' is not a boolean")),
    }
}

/// Exact value of a non-negative decimal (`0.9`) or fraction (`9/10`).
pub fn parse_fraction(s: &str) -> Result<Rational, String> {
    let bad = || format!("'{s}' is not a non-negative number");
    if let Some((n, d)) = s.split_once('/') {
        let n: u64 = n.trim().parse().map_err(|_| bad())?;
        let d: u64 = d.trim().parse().map_err(|_| bad())?;
        if d == 0 {
            return Err(bad());
        }
        return Ok(Ratio::new(n, d));
    }
    let (int, frac) = s.split_once('.').unwrap_or((s, ""));
    if (int.is_empty() && frac.is_empty()) || frac.len() > 18 {
        return Err(bad());
    }
    if !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) {
        return Err(bad());
    }
    let den = 10u64.pow(frac.len() as u32);
    let int: u64 = if int.is_empty() { 0 } else { int.parse().map_err(|_| bad())? };
    let frac: u64 = if frac.is_empty() { 0 } else { frac.parse().map_err(|_| bad())? };
    let num = int.checked_mul(den).and_then(|v| v.checked_add(frac)).ok_or_else(bad)?;
    Ok(Ratio::new(num, den))
}

impl ScenarioConfig {
    /// Round-trip propagation delay: two access links and the backbone,
    /// each way.
    pub fn propagation_rtt(&self) -> SimTime {
        let one_way = self.access_delay.as_nanos() * 2 + self.backbone_delay.as_nanos();
        SimTime(2 * one_way)
    }
}
