//! `ubrsim`: run single scenarios or table sweeps of the TCP over ATM-UBR
//! simulator.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use ubr_sim::batch::{machine_rows, panic_message, run_cell, table, Metric, SweepSpec};
use ubr_sim::engine::SimTime;
use ubr_sim::experiments::{check_scenario, micro_scenarios};
use ubr_sim::metrics::RunResult;
use ubr_sim::scenario::{load_scenario, Preset, ScenarioConfig, ScenarioError, SimError, Simulation};
use ubr_sim::tcp::TcpFlavor;

const OUT_ENV: &str = "UBRSIM_OUT";
const EXIT_CONFIG: u8 = 2;
const EXIT_INVARIANT: u8 = 3;

#[derive(Parser)]
#[command(name = "ubrsim", version, about = "Discrete-event simulator of TCP over ATM-UBR switches")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its result record.
    Run(RunArgs),
    /// Run a grid of scenarios and print efficiency and fairness tables.
    Sweep(SweepArgs),
    /// List the built-in presets.
    Presets,
    /// Run the invariant and conservation checks on small scenarios.
    Check,
}

/// Scenario keys settable from the command line.
#[derive(Args, Default)]
struct Overrides {
    #[arg(long = "R", value_name = "FRACTION")]
    r: Option<String>,
    #[arg(long = "Z", value_name = "FRACTION")]
    z: Option<String>,
    #[arg(long)]
    mss: Option<String>,
    #[arg(long)]
    window: Option<String>,
    #[arg(long)]
    wscale: Option<String>,
    /// Simulated seconds.
    #[arg(long)]
    duration: Option<String>,
    #[arg(long = "ack_counting", alias = "ack-counting")]
    ack_counting: Option<String>,
    #[arg(long = "rto_ms", alias = "rto-ms")]
    rto_ms: Option<String>,
    #[arg(long = "stagger_us", alias = "stagger-us")]
    stagger_us: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Divide every link rate by this factor (desk-scale runs).
    #[arg(long = "rate-scale", alias = "rate_scale")]
    rate_scale: Option<String>,
}

impl Overrides {
    fn pairs(&self) -> Vec<(String, String)> {
        let fields = [
            ("R", &self.r),
            ("Z", &self.z),
            ("mss", &self.mss),
            ("window", &self.window),
            ("wscale", &self.wscale),
            ("duration", &self.duration),
            ("ack_counting", &self.ack_counting),
            ("rto_ms", &self.rto_ms),
            ("stagger_us", &self.stagger_us),
            ("seed", &self.seed),
            ("rate_scale", &self.rate_scale),
        ];
        fields.into_iter().filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone()))).collect()
    }
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file (`key=value` lines). Optional when the required keys
    /// are given as flags.
    scenario: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    buffer: Option<String>,
    #[arg(long)]
    tcp: Option<String>,
    #[arg(long)]
    policy: Option<String>,
    #[command(flatten)]
    overrides: Overrides,
    /// Write a trace file: `cwnd`, `queue` or `all`.
    #[arg(long, value_name = "SERIES")]
    trace: Option<String>,
    /// Trace sampling period in milliseconds.
    #[arg(long, default_value_t = 10)]
    trace_period_ms: u64,
    /// Output directory (default: $UBRSIM_OUT, else `ubrsim-out`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Presets, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "LAN")]
    preset: Vec<String>,
    /// TCP flavors, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "sack")]
    tcp: Vec<String>,
    /// Source counts, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "5")]
    n: Vec<u32>,
    /// Buffer sizes in cells; defaults to each preset's pair.
    #[arg(long, value_delimiter = ',')]
    buffer: Vec<u64>,
    #[arg(long, value_delimiter = ',', default_value = "tail_drop,epd,selective_drop")]
    policy: Vec<String>,
    #[command(flatten)]
    overrides: Overrides,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("ubrsim-out"))
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, String> {
    fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(path)
}

fn config_error(e: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(EXIT_CONFIG)
}

fn resolve(args: &RunArgs) -> Result<ScenarioConfig, String> {
    let main_keys = [
        ("preset", &args.preset),
        ("n", &args.n),
        ("buffer", &args.buffer),
        ("tcp", &args.tcp),
        ("policy", &args.policy),
    ];
    let mut flags: Vec<(String, String)> =
        main_keys.iter().filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone()))).collect();
    flags.extend(args.overrides.pairs());
    let mut cfg = match &args.scenario {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
            load_scenario(&text).map_err(|e| format!("{}: {e}", path.display()))?
        }
        None => {
            let text: String = flags.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
            return load_scenario(&text).map_err(|e| format!("{}", strip_line(e)));
        }
    };
    // Same precedence as the file format: preset, then n, then the rest.
    let rank = |k: &str| match k {
        "preset" => 0,
        "n" => 1,
        "stagger_us" => 3,
        _ => 2,
    };
    flags.sort_by_key(|(k, _)| rank(k));
    for (k, v) in &flags {
        cfg.set(k, v).map_err(|e| format!("--{k}: {}", e.message))?;
    }
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

// Flag-built scenarios have no meaningful line numbers.
fn strip_line(mut e: ScenarioError) -> ScenarioError {
    e.line = None;
    e
}

fn print_result(r: &RunResult) {
    println!("{}", RunResult::MACHINE_HEADER);
    println!("{}", r.machine_row());
    for (i, (b, t)) in r.delivered_bytes.iter().zip(&r.throughput_bps).enumerate() {
        eprintln!("source {i}: {b} bytes, {:.3} Mbit/s", t / 1e6);
    }
    eprintln!(
        "efficiency {:.4}, fairness {:.4}, {} cells dropped, {} retransmissions, {} fast retransmits, {} timeouts",
        r.efficiency, r.fairness, r.cells_dropped, r.retransmissions, r.fast_retransmits, r.timeouts
    );
}

fn cmd_run(args: RunArgs) -> ExitCode {
    let cfg = match resolve(&args) {
        Ok(c) => c,
        Err(e) => return config_error(e),
    };
    let series = match args.trace.as_deref() {
        None => None,
        Some(s @ ("cwnd" | "queue" | "all")) => Some(s.to_string()),
        Some(other) => return config_error(format!("--trace: unknown series '{other}' (cwnd, queue or all)")),
    };
    if args.trace_period_ms == 0 {
        return config_error("--trace-period-ms must be positive");
    }
    let stem = format!(
        "{}-n{}-k{}-{}-{}",
        cfg.preset.name().to_ascii_lowercase(),
        cfg.n_sources,
        cfg.buffer_cells,
        cfg.flavor,
        cfg.policy_name
    );
    let outcome = std::panic::catch_unwind(|| -> Result<_, SimError> {
        let mut sim = Simulation::new(cfg)?;
        if series.is_some() {
            sim.enable_trace(SimTime::from_millis(args.trace_period_ms));
        }
        let end = sim.config().duration;
        sim.run_until(end)?;
        let trace = sim.trace().cloned();
        let result = sim.finish()?;
        Ok((result, trace))
    });
    let (result, trace) = match outcome {
        Ok(Ok(v)) => v,
        Ok(Err(SimError::Config(e))) => return config_error(e),
        Ok(Err(e)) => {
            eprintln!("invariant violation: {e}");
            return ExitCode::from(EXIT_INVARIANT);
        }
        Err(p) => {
            eprintln!("invariant violation: {}", panic_message(p.as_ref()));
            return ExitCode::from(EXIT_INVARIANT);
        }
    };
    print_result(&result);
    let dir = out_dir(args.out);
    let mut written = vec![write(&dir, &format!("{stem}.json"), &result.to_json())];
    if let (Some(series), Some(trace)) = (series, trace) {
        let mut csv = String::from("time_ns,series,value\n");
        for r in trace.rows() {
            let keep = match series.as_str() {
                "cwnd" => !matches!(r.series.as_str(), "queue" | "drops"),
                "queue" => matches!(r.series.as_str(), "queue" | "drops"),
                _ => true,
            };
            if keep {
                csv.push_str(&format!("{},{},{}\n", r.time_ns, r.series, r.value));
            }
        }
        written.push(write(&dir, &format!("{stem}.trace.csv"), &csv));
    }
    for w in written {
        match w {
            Ok(p) => eprintln!("wrote {}", p.display()),
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::FAILURE;
            }
        }
    }
    ExitCode::SUCCESS
}

fn cmd_sweep(args: SweepArgs) -> ExitCode {
    let presets: Result<Vec<Preset>, _> = args.preset.iter().map(|s| s.parse()).collect();
    let flavors: Result<Vec<TcpFlavor>, _> = args.tcp.iter().map(|s| s.parse()).collect();
    let (presets, flavors) = match (presets, flavors) {
        (Ok(p), Ok(f)) => (p, f),
        (Err(e), _) | (_, Err(e)) => return config_error(e),
    };
    let spec = SweepSpec {
        presets,
        flavors,
        sources: args.n,
        buffers: args.buffer,
        policies: args.policy,
        overrides: args.overrides.pairs(),
    };
    let configs = match spec.configs() {
        Ok(c) => c,
        Err(e) => return config_error(e),
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(args.jobs.unwrap_or(0)).build() {
        Ok(p) => p,
        Err(e) => return config_error(e),
    };
    eprintln!("running {} scenarios", configs.len());
    let cells: Vec<_> = pool.install(|| configs.into_par_iter().map(run_cell).collect());
    for c in &cells {
        if let Err(e) = &c.outcome {
            eprintln!("{} failed: {e}", c.config.label());
        }
    }
    let eff = table(&cells, Metric::Efficiency);
    let fair = table(&cells, Metric::Fairness);
    let rows = machine_rows(&cells);
    println!("{eff}\n{fair}");
    let dir = out_dir(args.out);
    for (name, text) in [("efficiency.txt", &eff), ("fairness.txt", &fair), ("results.csv", &rows)] {
        match write(&dir, name, text) {
            Ok(p) => eprintln!("wrote {}", p.display()),
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::FAILURE;
            }
        }
    }
    ExitCode::SUCCESS
}

fn ms(t: SimTime) -> String {
    format!("{} ms", t.as_nanos() as f64 / 1e6)
}

fn cmd_presets() -> ExitCode {
    println!(
        "{:<6}{:>12}{:>14}{:>18}{:>7}{:>12}{:>8}{:>10}",
        "name", "access", "backbone", "buffers (cells)", "mss", "window", "wscale", "duration"
    );
    for p in Preset::ALL {
        let [k1, k2] = p.buffers();
        let (w, s) = p.window();
        println!(
            "{:<6}{:>12}{:>14}{:>18}{:>7}{:>12}{:>8}{:>10}",
            p.name(),
            ms(p.access_delay()),
            ms(p.backbone_delay()),
            format!("{k1}, {k2}"),
            p.mss(),
            w,
            s,
            format!("{} s", p.duration().as_nanos() / 1_000_000_000)
        );
    }
    ExitCode::SUCCESS
}

fn cmd_check() -> ExitCode {
    let mut failed = 0;
    for cfg in micro_scenarios() {
        let label = cfg.label();
        match std::panic::catch_unwind(|| check_scenario(&cfg)) {
            Ok(Ok(r)) => println!("ok    {label}: efficiency {:.3}, fairness {:.3}", r.efficiency, r.fairness),
            Ok(Err(e)) => {
                failed += 1;
                println!("FAIL  {label}: {e}");
            }
            Err(p) => {
                failed += 1;
                println!("FAIL  {label}: {}", panic_message(p.as_ref()));
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} scenario(s) violated invariants");
        ExitCode::from(EXIT_INVARIANT)
    } else {
        ExitCode::SUCCESS
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Presets => cmd_presets(),
        Command::Check => cmd_check(),
    }
}
