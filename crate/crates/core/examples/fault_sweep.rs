//! Runs the auction scenario across drop rates, concurrency modes and
//! Byzantine behaviors, auditing every run's log.
//!
//! `cargo run --release --example fault_sweep -- 20` sets runs per cell.

use interchain::chain::Behavior;
use interchain::scenario::{audit_run, run_scenario, ByzantineSpec, ScenarioConfig};
use interchain::sim::Mode;

const FIXTURE: &str = include_str!("../scenarios/auction.toml");

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let runs: u64 = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(5);
    let base = ScenarioConfig::from_toml(FIXTURE)?;
    println!("{:<6} {:<5} {:<17} {:>9} {:>9} {:>7} {:>6}", "drop", "mode", "byzantine", "concluded", "attempts", "ticks", "audit");
    for drop in [0.0, 0.1, 0.3] {
        for mode in [Mode::Occ, Mode::Locks] {
            for behavior in [Behavior::Silent, Behavior::EquivocateDigest, Behavior::ForgeEvents] {
                let (mut concluded, mut attempts, mut ticks, mut clean) = (0, 0, 0, 0);
                for seed in 0..runs {
                    let mut cfg = base.clone().with_drop_rate(drop);
                    cfg.seed = seed;
                    cfg.mode = mode;
                    for (i, c) in cfg.chains.iter_mut().enumerate() {
                        c.byzantine = vec![ByzantineSpec { node: ((seed as usize + i) % c.n) as u32, behavior }];
                    }
                    let out = run_scenario(&cfg)?;
                    let report = audit_run(&out.log)?;
                    clean += report.passed() as u64;
                    ticks += out.metrics.ticks;
                    for result in out.metrics.auctions.values() {
                        concluded += result.starts_with("concluded") as u64;
                        attempts += result
                            .split_whitespace()
                            .find_map(|w| w.strip_prefix("attempts="))
                            .and_then(|n| n.parse::<u64>().ok())
                            .unwrap_or(0);
                    }
                }
                println!(
                    "{drop:<6} {:<5} {:<17} {:>9} {:>9.2} {:>7} {:>6}",
                    format!("{mode:?}"),
                    format!("{behavior:?}"),
                    format!("{concluded}/{runs}"),
                    attempts as f64 / runs as f64,
                    ticks / runs,
                    format!("{clean}/{runs}")
                );
            }
        }
    }
    Ok(())
}
