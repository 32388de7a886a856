use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use lobsim_harness::analyze::{analyze, Report};
use lobsim_harness::config::{ReplaySection, SimConfig};
use lobsim_harness::grid::{self, GridSpec};
use lobsim_harness::{rundir, sim};

#[derive(Parser)]
#[command(name = "lobsim", version, about = "Order-driven market simulator and experiment driver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one accelerated session and write a run directory.
    Run {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a stress-factor grid and write one directory per run plus summary.csv.
    Grid {
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recompute report.json for an existing run directory.
    Analyze {
        run_dir: PathBuf,
        /// Calm statistics sidecar written by `grid`; enables impact detection.
        #[arg(long)]
        calm: Option<PathBuf>,
    },
    /// Run agents against recorded quotes acting as the global book.
    Replay {
        quotes: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Agent and exchange settings; the baseline population when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the live exchange for networked clients until Ctrl-C.
    Serve { config: PathBuf },
}

fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Run { config, out, seed } => {
            let mut cfg = SimConfig::load(&config)?;
            if let Some(seed) = seed {
                cfg.agents.seed = seed;
            }
            run_one(&cfg, &out)
        }
        Command::Grid { spec, out } => {
            let spec = GridSpec::load(&spec)?;
            let result = grid::run_grid(&spec, Some(&out))?;
            println!("{} runs, summary in {}", result.rows.len(), out.join("summary.csv").display());
            Ok(())
        }
        Command::Analyze { run_dir, calm } => {
            let rec = rundir::load_run(&run_dir)?;
            let calm = match calm {
                None => None,
                Some(path) => {
                    let table = grid::read_calm_stats(&path)?;
                    let key = calm_key(&run_dir, &rec.config)?;
                    Some(*table.get(&key).with_context(|| format!("no calm statistics for cell {key}"))?)
                }
            };
            let report = analyze(&rec, calm.as_ref());
            rundir::write_report(&run_dir, &report)?;
            print_summary(&report);
            Ok(())
        }
        Command::Replay { quotes, out, config } => {
            let mut cfg = match config {
                Some(path) => SimConfig::load(&path)?,
                None => SimConfig::baseline(0),
            };
            cfg.replay = Some(ReplaySection { file: quotes });
            run_one(&cfg, &out)
        }
        Command::Serve { config } => lobsim_server::run_until_interrupted(lobsim_server::ServerConfig::load(&config)?),
    }
}

fn run_one(cfg: &SimConfig, out: &Path) -> anyhow::Result<()> {
    let output = sim::run(cfg)?;
    let rec = lobsim_harness::analyze::RunRecord::from_output(cfg, &output);
    let report = analyze(&rec, None);
    rundir::write_run(out, cfg, &output, &report)?;
    for w in &output.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "{} trades in {:.2} s wall time, written to {}",
        output.counters.trades,
        output.wall_seconds,
        out.display()
    );
    print_summary(&report);
    Ok(())
}

/// The market cell of a grid run, recovered from its config.
fn calm_key(run_dir: &Path, cfg: &SimConfig) -> anyhow::Result<String> {
    let a = &cfg.agents;
    let market = if a.alpha == 1.0 && a.r_high == 0.8 {
        grid::Market::NonHomogeneous
    } else if a.alpha == a.n as f64 && a.r_high == 0.4 {
        grid::Market::Homogeneous
    } else {
        bail!("{} is not a grid run: its agents match neither market cell", run_dir.display());
    };
    let minutes = a.session_seconds / a.lambda / 60.0;
    Ok(format!("{minutes}min-{market}"))
}

fn print_summary(report: &Report) {
    for r in &report.returns {
        let fmt = |x: Option<f64>| x.map_or("n/a".to_string(), |v| format!("{v:.3}"));
        println!(
            "returns {:>4} s: kurtosis {} acf1 {} arch p {}",
            r.dt_seconds,
            fmt(r.excess_kurtosis),
            fmt(r.acf.get(1).copied()),
            r.arch.map_or("n/a".to_string(), |a| format!("{:.2e}", a.p_value)),
        );
    }
    if let Some(lob) = &report.lob {
        println!("book peak at {:?} ticks from mid", lob.peak_distance);
    }
    if let Some(s) = &report.stress {
        println!(
            "stress: drawdown slope {:?} $/s, impact detected {}",
            s.drawdown_slope,
            s.impact_detected()
        );
    }
    for n in &report.notes {
        println!("note: {n}");
    }
}
