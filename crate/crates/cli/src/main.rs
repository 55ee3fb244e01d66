use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use contract_cli::{run, Command, Invocation, Overrides};

/// Exit status when the run completed but a post-hoc audit failed.
const AUDIT_FAILED: u8 = 3;

#[derive(Parser)]
#[command(name = "contracts", version, about = "Optimal incentive contracts for systems engineering design tasks")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// Problem document (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    #[arg(long, global = true, value_name = "N")]
    particles: Option<usize>,
    #[arg(long = "gamma-start", global = true)]
    gamma_start: Option<f64>,
    #[arg(long = "gamma-end", global = true)]
    gamma_end: Option<f64>,
    /// Monte Carlo samples for exceedance curves.
    #[arg(long, global = true, value_name = "N")]
    samples: Option<usize>,
    /// Independent solver seeds; the best objective is kept.
    #[arg(long, global = true, value_name = "N")]
    seeds: Option<usize>,
    /// Outer search strategy (smc, multistart-pattern).
    #[arg(long, global = true)]
    optimizer: Option<String>,
    /// Inner best-response strategy (grid-polish, dense-grid).
    #[arg(long = "effort-solver", global = true)]
    effort_solver: Option<String>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Solve for the optimal contracts of one problem.
    Solve,
    /// Calibrate a single-agent model from a historical series.
    Calibrate,
    /// Solve along one parameter axis.
    Sweep,
    /// Solve, then estimate the principal's exceedance curve.
    Exceedance,
    /// Run every bundled case study with several seeds.
    ReproducePaper,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let inv = Invocation {
        command: match cli.command {
            Cmd::Solve => Command::Solve,
            Cmd::Calibrate => Command::Calibrate,
            Cmd::Sweep => Command::Sweep,
            Cmd::Exceedance => Command::Exceedance,
            Cmd::ReproducePaper => Command::ReproducePaper,
        },
        config: cli.config,
        out: cli.out,
        overrides: Overrides {
            seed: cli.seed,
            particles: cli.particles,
            gamma_start: cli.gamma_start,
            gamma_end: cli.gamma_end,
            samples: cli.samples,
            seeds: cli.seeds,
            optimizer: cli.optimizer,
            effort_solver: cli.effort_solver,
        },
    };
    match run(&inv) {
        Ok(outcome) if outcome.audits_passed => ExitCode::SUCCESS,
        Ok(_) => {
            eprintln!("audit failed; see verification.json in {}", inv.out.display());
            ExitCode::from(AUDIT_FAILED)
        }
        Err(e) => {
            let doc = e.to_document();
            let json = serde_json::to_string_pretty(&doc).unwrap_or_else(|_| e.to_string());
            if std::fs::create_dir_all(&inv.out).is_ok() {
                let _ = std::fs::write(inv.out.join("error.json"), format!("{json}\n"));
            }
            eprintln!("{json}");
            ExitCode::FAILURE
        }
    }
}
