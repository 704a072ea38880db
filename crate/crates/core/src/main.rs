use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use jointseg::cli;

#[derive(Parser)]
#[command(name = "jointseg", version, about = "Joint myocardium and scar segmentation experiments")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Scene spec (TOML); defaults apply when omitted
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Train one pipeline from a run config
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a checkpoint on a dataset
    Eval {
        checkpoint: PathBuf,
        dataset: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        tau: f64,
        /// Defaults to the checkpoint's directory
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tabulate and plot evaluated runs side by side
    Compare {
        #[arg(required = true, num_args = 2..)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Samples in the qualitative panel
        #[arg(long, default_value_t = 4)]
        count: usize,
    },
}

fn run(args: Args) -> jointseg::Result<()> {
    match args.command {
        Command::GenData { out, count, seed, spec } => {
            let stats = cli::cmd_gen_data(spec.as_deref(), count, seed, &out)?;
            print!("{}", cli::format_stats(&stats));
        }
        Command::Train { config, out, seed } => {
            let model = cli::cmd_train(&config, out.as_deref(), seed)?;
            if let (Some(first), Some(last)) = (model.history.first(), model.history.last()) {
                println!("{}: loss {} -> {} over {} epochs", model.kind(), first.total, last.total, last.epoch);
            }
        }
        Command::Eval { checkpoint, dataset, tau, out } => {
            let out = out.unwrap_or_else(|| checkpoint.parent().map(PathBuf::from).unwrap_or_default());
            let report = cli::cmd_eval(&checkpoint, &dataset, tau, &out)?;
            if let Some(d) = &report.scar_summary.dice {
                println!("scar dice mean {:.4} median {:.4}", d.mean, d.median);
            }
        }
        Command::Compare { runs, out, count } => {
            let rows = cli::cmd_compare(&runs, &out, count)?;
            print!("{}", cli::table_text(&rows));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
