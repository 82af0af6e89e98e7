use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use interchain::scenario::{audit_run, run_scenario, AuditReport, RunLog, RunOutput, ScenarioConfig};
use interchain::sim::Mode;

const DEMO: &str = include_str!("../../scenarios/auction.toml");

#[derive(Parser)]
#[command(name = "simctl", about = "Run, audit and replay multi-chain simulation scenarios")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario file, then audit the resulting log.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Drop rate applied to every broker.
        #[arg(long)]
        drop_rate: Option<f64>,
        #[arg(long)]
        max_ticks: Option<u64>,
        /// Metrics destination; stdout if absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Run a built-in demonstration.
    Demo {
        #[arg(value_enum)]
        which: DemoArg,
    },
    /// Check a run log's properties.
    Audit { log: PathBuf },
    /// Re-run a log's scenario and compare every block.
    Replay { log: PathBuf },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ModeArg {
    Occ,
    Locks,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum DemoArg {
    Auction,
}

/// 0 success, 1 config or runtime error, 2 audit failure.
enum Failure {
    Error(String),
    Audit,
}

impl From<String> for Failure {
    fn from(s: String) -> Self {
        Failure::Error(s)
    }
}

fn write_or_print(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| format!("cannot write {}: {e}", p.display()).into()),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn execute(cfg: &ScenarioConfig) -> Result<RunOutput, Failure> {
    let started = Instant::now();
    let out = run_scenario(cfg).map_err(|e| e.to_string())?;
    eprintln!("wall time: {:.3}s", started.elapsed().as_secs_f64());
    for a in &out.log.actions {
        eprintln!("{a}");
    }
    Ok(out)
}

fn report(r: &AuditReport) -> Result<(), Failure> {
    eprint!("{r}");
    if r.passed() {
        Ok(())
    } else {
        Err(Failure::Audit)
    }
}

fn read_log(path: &Path) -> Result<RunLog, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    RunLog::parse(&text).map_err(|e| e.to_string().into())
}

fn finish(out: &RunOutput, metrics_path: Option<&Path>, log_path: Option<&Path>) -> Result<(), Failure> {
    let metrics = serde_json::to_string_pretty(&out.metrics).expect("metrics serialize");
    write_or_print(metrics_path, &metrics)?;
    if let Some(p) = log_path {
        std::fs::write(p, out.log.to_text()).map_err(|e| format!("cannot write {}: {e}", p.display()))?;
    }
    if let Some(e) = &out.error {
        return Err(Failure::Error(e.clone()));
    }
    report(&audit_run(&out.log).map_err(|e| e.to_string())?)
}

fn main_inner(cli: Cli) -> Result<(), Failure> {
    match cli.cmd {
        Cmd::Run { scenario, seed, mode, drop_rate, max_ticks, out, log } => {
            let mut cfg = ScenarioConfig::load(&scenario).map_err(|e| e.to_string())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(m) = mode {
                cfg.mode = match m {
                    ModeArg::Occ => Mode::Occ,
                    ModeArg::Locks => Mode::Locks,
                };
            }
            if let Some(r) = drop_rate {
                cfg = cfg.with_drop_rate(r);
            }
            if let Some(t) = max_ticks {
                cfg.max_ticks = t;
            }
            cfg.validate().map_err(|e| e.to_string())?;
            let run = execute(&cfg)?;
            finish(&run, out.as_deref(), log.as_deref())
        }
        Cmd::Demo { which: DemoArg::Auction } => {
            let cfg = ScenarioConfig::from_toml(DEMO).map_err(|e| e.to_string())?;
            let run = execute(&cfg)?;
            for (aid, outcome) in &run.metrics.auctions {
                println!("{aid}: {outcome}");
            }
            for (id, t) in &run.metrics.txns {
                println!("{id}: {} {} round trips={}", t.kind, t.outcome, t.round_trips);
            }
            if let Some(e) = &run.error {
                return Err(Failure::Error(e.clone()));
            }
            let audit = audit_run(&run.log).map_err(|e| e.to_string())?;
            report(&audit)
        }
        Cmd::Audit { log } => report(&audit_run(&read_log(&log)?).map_err(|e| e.to_string())?),
        Cmd::Replay { log } => {
            let recorded = read_log(&log)?;
            let cfg = ScenarioConfig::from_toml(&recorded.config).map_err(|e| e.to_string())?;
            let again = execute(&cfg)?;
            if again.log.blocks.len() != recorded.blocks.len() {
                eprintln!("replay produced {} blocks, log has {}", again.log.blocks.len(), recorded.blocks.len());
                return Err(Failure::Audit);
            }
            for (i, (a, b)) in again.log.blocks.iter().zip(&recorded.blocks).enumerate() {
                if a != b {
                    eprintln!("block {i} ({}@{}) differs", b.header.chain_id, b.header.height);
                    return Err(Failure::Audit);
                }
            }
            if again.log.actions != recorded.actions {
                eprintln!("action results differ");
                return Err(Failure::Audit);
            }
            println!("replay identical: {} blocks", recorded.blocks.len());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match main_inner(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Audit) => ExitCode::from(2),
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
