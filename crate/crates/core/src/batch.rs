//! Parameter sweeps and their table output.

use std::fmt::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};

use crate::metrics::RunResult;
use crate::scenario::{Preset, ScenarioConfig, ScenarioError, Simulation};
use crate::tcp::TcpFlavor;

/// Cross product of presets, flavors, source counts, buffers and policies.
#[derive(Clone, Debug)]
pub struct SweepSpec {
    pub presets: Vec<Preset>,
    pub flavors: Vec<TcpFlavor>,
    pub sources: Vec<u32>,
    /// Empty means both of each preset's standard buffer sizes.
    pub buffers: Vec<u64>,
    pub policies: Vec<String>,
    /// Extra `key=value` settings applied to every cell.
    pub overrides: Vec<(String, String)>,
}

impl SweepSpec {
    /// Every cell of the sweep, in row-major order.
    pub fn configs(&self) -> Result<Vec<ScenarioConfig>, ScenarioError> {
        let empty = |what: &str| Err(ScenarioError { line: None, key: what.to_string(), message: "empty list".into() });
        if self.presets.is_empty() {
            return empty("preset");
        }
        if self.flavors.is_empty() {
            return empty("tcp");
        }
        if self.sources.is_empty() {
            return empty("n");
        }
        if self.policies.is_empty() {
            return empty("policy");
        }
        let mut out = Vec::new();
        for &preset in &self.presets {
            let buffers = if self.buffers.is_empty() { preset.buffers().to_vec() } else { self.buffers.clone() };
            for &flavor in &self.flavors {
                for &n in &self.sources {
                    for &k in &buffers {
                        for policy in &self.policies {
                            let mut c = ScenarioConfig::preset(preset);
                            c.set("n", &n.to_string())?;
                            c.set("buffer", &k.to_string())?;
                            c.set("tcp", flavor.name())?;
                            c.set("policy", policy)?;
                            for (key, v) in &self.overrides {
                                c.set(key, v)?;
                            }
                            c.validate()?;
                            out.push(c);
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// One finished sweep cell.
#[derive(Clone, Debug)]
pub struct SweepCell {
    pub config: ScenarioConfig,
    pub outcome: Result<RunResult, String>,
}

/// Runs one scenario to completion, turning errors and panics into a
/// message.
pub fn run_cell(config: ScenarioConfig) -> SweepCell {
    let cfg = config.clone();
    let outcome = match catch_unwind(AssertUnwindSafe(|| Simulation::new(cfg)?.finish())) {
        Ok(Ok(r)) => Ok(r),
        Ok(Err(e)) => Err(e.to_string()),
        Err(p) => Err(panic_message(p.as_ref())),
    };
    SweepCell { config, outcome }
}

pub fn panic_message(p: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = p.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = p.downcast_ref::<String>() {
        s.clone()
    } else {
        "panic".to_string()
    }
}

/// `preset,n,K,flavor,policy,efficiency,fairness,timeouts` lines with a
/// header. Failed cells carry `failed` in the metric columns.
pub fn machine_rows(cells: &[SweepCell]) -> String {
    let mut s = String::from(RunResult::MACHINE_HEADER);
    s.push('\n');
    for c in cells {
        match &c.outcome {
            Ok(r) => s.push_str(&r.machine_row()),
            Err(_) => {
                let k = &c.config;
                let _ = write!(
                    s,
                    "{},{},{},{},{},failed,failed,failed",
                    k.preset, k.n_sources, k.buffer_cells, k.flavor, k.policy_name
                );
            }
        }
        s.push('\n');
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    Efficiency,
    Fairness,
}

impl Metric {
    fn get(self, r: &RunResult) -> f64 {
        match self {
            Metric::Efficiency => r.efficiency,
            Metric::Fairness => r.fairness,
        }
    }

    fn title(self) -> &'static str {
        match self {
            Metric::Efficiency => "Efficiency",
            Metric::Fairness => "Fairness",
        }
    }
}

/// Aligned text table: one row per (preset, flavor, sources, buffer), one
/// column per policy, then a column-average row per flavor.
pub fn table(cells: &[SweepCell], metric: Metric) -> String {
    let mut policies: Vec<&str> = Vec::new();
    let mut rows: Vec<(String, TcpFlavor, u32, u64)> = Vec::new();
    for c in cells {
        let k = &c.config;
        if !policies.contains(&k.policy_name.as_str()) {
            policies.push(&k.policy_name);
        }
        let key = (k.preset.name().to_string(), k.flavor, k.n_sources, k.buffer_cells);
        if !rows.contains(&key) {
            rows.push(key);
        }
    }
    let lookup = |row: &(String, TcpFlavor, u32, u64), policy: &str| {
        cells.iter().find(|c| {
            let k = &c.config;
            k.preset.name() == row.0
                && k.flavor == row.1
                && k.n_sources == row.2
                && k.buffer_cells == row.3
                && k.policy_name == policy
        })
    };
    let width = policies.iter().map(|p| p.len()).max().unwrap_or(0).max(8);
    let mut s = format!("{}\n", metric.title());
    let _ = write!(s, "{:<8}{:<9}{:>5}{:>9}", "Config", "TCP", "Srcs", "Buffer");
    for p in &policies {
        let _ = write!(s, "  {p:>width$}");
    }
    s.push('\n');
    for row in &rows {
        let _ = write!(s, "{:<8}{:<9}{:>5}{:>9}", row.0, row.1.name(), row.2, row.3);
        for p in &policies {
            let v = match lookup(row, p).map(|c| &c.outcome) {
                Some(Ok(r)) => format!("{:.3}", metric.get(r)),
                Some(Err(_)) => "failed".to_string(),
                None => "-".to_string(),
            };
            let _ = write!(s, "  {v:>width$}");
        }
        s.push('\n');
    }
    let mut flavors: Vec<TcpFlavor> = Vec::new();
    for r in &rows {
        if !flavors.contains(&r.1) {
            flavors.push(r.1);
        }
    }
    for f in flavors {
        let _ = write!(s, "{:<31}", format!("{} column average", f.name()));
        for p in &policies {
            let vals: Vec<f64> = rows
                .iter()
                .filter(|r| r.1 == f)
                .filter_map(|r| match lookup(r, p).map(|c| &c.outcome) {
                    Some(Ok(res)) => Some(metric.get(res)),
                    _ => None,
                })
                .collect();
            let v = if vals.is_empty() {
                "-".to_string()
            } else {
                format!("{:.3}", vals.iter().sum::<f64>() / vals.len() as f64)
            };
            let _ = write!(s, "  {v:>width$}");
        }
        s.push('\n');
    }
    s
}
