use std::path::PathBuf;
use std::process::ExitCode;

use atsm_gmm::qbayes::Restriction;
use atsm_gmm_cli::{cmd_estimate, cmd_moments, cmd_simulate, cmd_sweep, cmd_test, CliError, Overrides, Preset, RunConfig};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "atsm-gmm", version, about = "GMM estimation of affine term-structure models")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
    /// TOML run configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides the config)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Sampler preset
    #[arg(long, global = true, value_enum)]
    preset: Option<Preset>,
    /// Moment selector file or "default27"
    #[arg(long, global = true)]
    selector: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a yield panel at the configured parameters
    Simulate,
    /// Print the model moment catalogue
    Moments,
    /// Estimate on the configured data panel
    Estimate,
    /// Wald test from a saved trace
    Test {
        /// Trace CSV (default: <out>/trace.csv)
        #[arg(long)]
        trace: Option<PathBuf>,
        /// theta or beta
        #[arg(long, default_value = "theta")]
        restriction: String,
    },
    /// Replicated simulate-and-estimate study
    Sweep,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let path = cli
        .config
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    let ov = Overrides {
        seed: cli.seed,
        out: cli.out,
        preset: cli.preset,
        selector: cli.selector,
    };
    let cfg = RunConfig::load(&path, &ov)?;
    match cli.cmd {
        Command::Simulate => {
            let p = cmd_simulate(&cfg)?;
            println!("wrote {}", p.display());
        }
        Command::Moments => print!("{}", cmd_moments(&cfg)?),
        Command::Estimate => {
            let out = cmd_estimate(&cfg)?;
            print!("{}", out.report.to_text());
        }
        Command::Test { trace, restriction } => {
            let r: Restriction = restriction.parse()?;
            let trace = trace.unwrap_or_else(|| cfg.out.join("trace.csv"));
            let w = cmd_test(&cfg, &trace, r)?;
            println!("# {}", cfg.provenance());
            println!("{}  W = {:.4}  df = {}  p = {:.4}", w.restriction, w.statistic, w.df, w.p_value);
        }
        Command::Sweep => print!("{}", cmd_sweep(&cfg)?.text),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
