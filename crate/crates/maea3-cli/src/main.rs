use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use maea3_cli::commands::{self, Common, DEFAULT_DECADES, DEFAULT_HORIZON};

#[derive(Parser)]
#[command(name = "maea3", version, about = "Two-agent RKHS fusion simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the master seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: `out` in the config, else ./out).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl CommonArgs {
    fn common(&self) -> Common {
        Common { config: self.config.clone(), seed: self.seed, out: self.out.clone() }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the estimator; writes the trace, final models and a summary.
    Run(CommonArgs),
    /// Check the configured data stream for validity over a horizon.
    Validate {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = DEFAULT_HORIZON)]
        horizon: usize,
    },
    /// Estimate an operator norm over a logarithmic rho grid.
    NormSweep {
        #[command(flatten)]
        common: CommonArgs,
        /// agent1, agent2, multiagent or fusion.
        #[arg(long)]
        operator: String,
        #[arg(long, default_value_t = DEFAULT_DECADES)]
        decades: usize,
    },
    /// Spectral, perturbation, uniform-convergence and bound checks.
    Diagnose(CommonArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(c) => commands::run(&c.common()),
        Command::Validate { common, horizon } => commands::validate(&common.common(), *horizon),
        Command::NormSweep { common, operator, decades } => commands::norm_sweep(&common.common(), operator, *decades),
        Command::Diagnose(c) => commands::diagnose(&c.common()),
    };
    match result {
        Ok(outcome) => {
            print!("{}", outcome.text);
            ExitCode::from(outcome.code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
