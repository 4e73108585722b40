use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use qpt_core::harness::{self, BasisChoice, ConfigChoice, ConfigName, SweepSpec};
use qpt_core::tomography::{configs_from_pairs, ketset_states, sensing_matrix, RANK_TOL};
use qpt_core::Error;

#[derive(Parser)]
#[command(name = "qpt", about = "Sparse quantum process tomography experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo sweep described by a JSON spec.
    Sweep {
        #[arg(long)]
        spec: PathBuf,
    },
    /// Write the |X| grid of a two-qubit bit-flip channel.
    Procmat {
        #[arg(long = "p-bf")]
        p_bf: f64,
        #[arg(long, default_value = "ideal-svd")]
        basis: BasisChoice,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the rank of a sensing matrix.
    Rank {
        #[arg(long, value_parser = parse_config)]
        config: ConfigName,
        #[arg(long, default_value = "ideal-svd")]
        basis: BasisChoice,
    },
    Version,
}

fn parse_config(s: &str) -> Result<ConfigName, String> {
    match s {
        "full16" => Ok(ConfigName::Full16),
        "sub6" => Ok(ConfigName::Sub6),
        other => Err(format!("unknown configuration '{other}' (full16 | sub6)")),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidSpec(_) | Error::Json(_) => 2,
        Error::Io(_) => 3,
        _ => 1,
    }
}

fn run(cli: Cli) -> qpt_core::Result<()> {
    match cli.command {
        Command::Sweep { spec } => {
            let spec = SweepSpec::from_file(&spec)?;
            let result = harness::run_sweep(&spec)?;
            match &spec.output {
                Some(path) => {
                    let summary = harness::emit_results(&result, path)?;
                    eprintln!("wrote {} and {}", path.display(), summary.display());
                }
                None => print!("{}", harness::results_csv(&result)),
            }
            for c in &result.cells {
                let n = c.n.map_or_else(|| "inf".to_string(), |n| n.to_string());
                let flag = if c.flagged { "  FLAGGED" } else { "" };
                eprintln!(
                    "p_bf={} N={} {}: mean {} std {} ({} runs){}",
                    c.p_bf,
                    n,
                    c.estimator,
                    harness::format_sig(c.mean),
                    harness::format_sig(c.std),
                    c.runs,
                    flag
                );
            }
            for b in &result.baseline {
                eprintln!("p_bf={} baseline {}", b.p_bf, harness::format_sig(b.rms));
            }
        }
        Command::Procmat { p_bf, basis, out } => {
            harness::emit_process_matrix(2, p_bf, basis, &out)?;
        }
        Command::Rank { config, basis } => {
            let b = Arc::new(basis.build(4)?);
            let cfgs = configs_from_pairs(&ketset_states(), &ConfigChoice::Named(config).pairs(), &b)?;
            let map = sensing_matrix(cfgs, b)?;
            println!("{} (threshold {RANK_TOL:e} of the largest singular value)", map.rank());
        }
        Command::Version => println!("qpt {}", env!("CARGO_PKG_VERSION")),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
