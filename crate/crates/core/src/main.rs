use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Parser, Subcommand};

use fedblock::harness::{self, SimConfig};
use fedblock::{planner, Result};

#[derive(Parser)]
#[command(name = "fedblock", version, about = "Trust-weighted federated learning simulator and verifier planner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation described by a key = value config file.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory for metrics.csv, summary.json and events.jsonl.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Override the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Size verifier assignments so every client gets checked.
    #[command(group(ArgGroup::new("given").required(true).args(["v", "l"])))]
    Plan {
        /// Clients needing verification.
        #[arg(long = "M")]
        m: u64,
        /// Number of verifiers; solve for clients per verifier.
        #[arg(long = "V")]
        v: Option<u64>,
        /// Clients per verifier; solve for the number of verifiers.
        #[arg(long = "L")]
        l: Option<u64>,
        #[arg(long, default_value_t = 100_000)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, out, seed } => {
            let mut cfg = match config {
                Some(path) => SimConfig::from_file(path)?,
                None => SimConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let report = harness::run(cfg)?;
            harness::emit(&report, &out)?;
            let last = report.final_metrics();
            println!(
                "rounds={} ma={:.4} ba={:.4} mean_round_time={:.3}s out={}",
                last.round,
                last.ma,
                last.ba,
                report.mean_round_time(),
                out.display()
            );
        }
        Command::Plan { m, v, l, trials, seed } => {
            let report = match (v, l) {
                (Some(v), _) => planner::plan_subset_size(m, v, trials, seed)?,
                (None, Some(l)) => planner::plan_verifiers(m, l, trials, seed)?,
                (None, None) => unreachable!("clap requires --V or --L"),
            };
            print!("{}", report.render());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.category());
            ExitCode::from(e.exit_code())
        }
    }
}
