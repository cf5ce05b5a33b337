use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use cloudlb_core::availability::AvailabilityParams;
use cloudlb_core::config::overload_hour_config;
use cloudlb_core::compare::{compare_policies, NARRATIVE_PAIRING};
use cloudlb_core::report::{self, RunReport, ARRIVALS_HEADER, ASSIGNMENTS_HEADER};
use cloudlb_core::{
    default_paper_config, expected_availability, is_available, load_config, serialize_config, simulate_with_sinks,
    ConfigError, PolicyKind, SchedulingMode, SimError, SimOptions, SimulationConfig, Sinks,
};

#[derive(Parser)]
#[command(name = "cloudlb", version, about = "Cloud load-balancing policy simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its reports.
    Simulate {
        /// Scenario file; the built-in default scenario when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        policy: Option<PolicyKind>,
        #[arg(long)]
        mode: Option<SchedulingMode>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        hours: Option<u32>,
        #[arg(long)]
        out: PathBuf,
        /// Write the event trace to `trace.tsv`.
        #[arg(long)]
        trace: bool,
        /// Write `assignments.csv`.
        #[arg(long)]
        assignments: bool,
        /// Write `arrivals.csv`.
        #[arg(long)]
        arrivals: bool,
        /// Check the throttle cap after every event.
        #[arg(long)]
        strict: bool,
    },
    /// Run every policy over seeds 0..N and write `compare.json`.
    Compare {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads; defaults to the available parallelism.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Expected availability of a resource.
    Avail {
        /// Measurement period, minutes.
        #[arg(long)]
        mp: f64,
        /// Expected loss events per period.
        #[arg(long)]
        rl: f64,
        /// Expected downtime per loss event, minutes.
        #[arg(long)]
        de: f64,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Print the default scenario file.
    DefaultConfig {
        /// Include the one-hour spike used for policy comparisons.
        #[arg(long)]
        overload: bool,
    },
}

enum Failure {
    Config(String),
    Invariant(String),
    Other(anyhow::Error),
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(_) | SimError::UnknownStrategy { .. } => Failure::Config(e.to_string()),
            SimError::Invariant(_) => Failure::Invariant(e.to_string()),
            SimError::Io(io) => Failure::Other(io.into()),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Other(e.into())
    }
}

fn config(path: Option<&Path>) -> Result<SimulationConfig, Failure> {
    match path {
        Some(p) => Ok(load_config(p)?),
        None => Ok(default_paper_config()),
    }
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn open_sink(enabled: bool, path: &Path, header: Option<&str>) -> anyhow::Result<Option<BufWriter<File>>> {
    if !enabled {
        return Ok(None);
    }
    let mut w = create(path)?;
    if let Some(h) = header {
        writeln!(w, "{h}")?;
    }
    Ok(Some(w))
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    config_path: Option<&Path>,
    policy: Option<PolicyKind>,
    mode: Option<SchedulingMode>,
    seed: Option<u64>,
    hours: Option<u32>,
    out: &Path,
    flags: [bool; 4],
) -> Result<(), Failure> {
    let [trace, assignments, arrivals, strict] = flags;
    let mut cfg = config(config_path)?;
    cfg.policy = policy.unwrap_or(cfg.policy);
    cfg.scheduling_mode = mode.unwrap_or(cfg.scheduling_mode);
    cfg.seed = seed.unwrap_or(cfg.seed);
    cfg.duration_hours = hours.unwrap_or(cfg.duration_hours);

    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut trace_w = open_sink(trace, &out.join("trace.tsv"), None)?;
    let mut assign_w = open_sink(assignments, &out.join("assignments.csv"), Some(ASSIGNMENTS_HEADER))?;
    let mut arrival_w = open_sink(arrivals, &out.join("arrivals.csv"), Some(ARRIVALS_HEADER))?;
    let opts = SimOptions {
        retain_samples: true,
        strict_checks: strict,
        ..SimOptions::default()
    };
    let sinks = Sinks {
        trace: trace_w.as_mut().map(|w| w as &mut dyn Write),
        assignments: assign_w.as_mut().map(|w| w as &mut dyn Write),
        arrivals: arrival_w.as_mut().map(|w| w as &mut dyn Write),
    };
    let outcome = simulate_with_sinks(&cfg, &opts, sinks)?;
    for w in [trace_w, assign_w, arrival_w].iter_mut().flatten() {
        w.flush()?;
    }

    let rep = RunReport::new(&cfg, &outcome);
    report::write_run(out, &rep, &outcome)?;
    println!(
        "policy {} mode {} seed {} hours {}: {} requests, {} migrations",
        rep.policy, rep.mode, rep.seed, rep.hours, rep.generated, rep.migrations
    );
    println!("{}", report::text_table(&rep.summary.response_time));
    println!("{}", report::text_table(&rep.summary.dc_processing_time));
    Ok(())
}

fn cmd_compare(config_path: Option<&Path>, seeds: u64, out: &Path, threads: Option<usize>) -> Result<(), Failure> {
    let cfg = config(config_path)?;
    let threads = threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let seeds: Vec<u64> = (0..seeds).collect();
    let rep = compare_policies(&cfg, &seeds, &NARRATIVE_PAIRING, threads)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    std::fs::write(out.join("compare.json"), rep.to_json())?;
    println!(
        "{:<10} {:<4} {:>14} {:>16} {:>12}",
        "policy", "mode", "response (ms)", "processing (ms)", "migrations"
    );
    let cell = |v: Option<f64>| v.map_or_else(|| "-".into(), |x| format!("{x:.3}"));
    for p in &rep.policies {
        println!(
            "{:<10} {:<4} {:>14} {:>16} {:>12.1}",
            p.policy,
            p.mode,
            cell(p.response_avg_ms),
            cell(p.processing_avg_ms),
            p.migrations_avg
        );
    }
    if let Some(best) = &rep.verdicts.lowest_response {
        println!("lowest mean response: {best}");
    }
    Ok(())
}

fn cmd_avail(mp: f64, rl: f64, de: f64, threshold: Option<f64>) -> Result<(), Failure> {
    let p = AvailabilityParams { mp, r_l: rl, d_e: de };
    let r = expected_availability(&p).map_err(|e| Failure::Config(e.to_string()))?;
    println!("availability {:.12} ({:.2}%)", r.a_e, r.a_e * 100.0);
    if r.clamped {
        println!("raw value {} clamped to [0, 1]", r.raw);
    }
    if let Some(t) = threshold {
        let ok = is_available(&p, t).map_err(|e| Failure::Config(e.to_string()))?;
        println!("{} at threshold {t}", if ok { "available" } else { "unavailable" });
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate {
            config,
            policy,
            mode,
            seed,
            hours,
            out,
            trace,
            assignments,
            arrivals,
            strict,
        } => cmd_simulate(
            config.as_deref(),
            policy,
            mode,
            seed,
            hours,
            &out,
            [trace, assignments, arrivals, strict],
        ),
        Command::Compare {
            config,
            seeds,
            out,
            threads,
        } => cmd_compare(config.as_deref(), seeds, &out, threads),
        Command::Avail { mp, rl, de, threshold } => cmd_avail(mp, rl, de, threshold),
        Command::DefaultConfig { overload } => {
            let cfg = if overload {
                overload_hour_config()
            } else {
                default_paper_config()
            };
            print!("{}", serialize_config(&cfg));
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Invariant(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
