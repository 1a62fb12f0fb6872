use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use oscmode_cli::commands::{self, Context, Method};
use oscmode_cli::CliError;

#[derive(Parser)]
#[command(name = "oscmode", version, about = "Latent-space mode recognition for ring-coupled oscillator data")]
struct Cli {
    /// Overrides the configuration's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Simulate every configured mode into DIR/<label>.csv.
    Simulate {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a reducer on the reference windows of the matched datasets.
    Train {
        #[arg(long)]
        data: String,
        #[arg(long, value_enum, default_value = "bilstm")]
        method: Method,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write latent trajectories of reference and held-out windows.
    Embed {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Density grids of trajectories in a shared frame.
    Kde {
        #[arg(long)]
        input: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Nearest-benchmark classification by Wasserstein distance.
    Classify {
        #[arg(long)]
        benchmarks: String,
        #[arg(long)]
        tests: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruction MSE table for one or more models.
    Report {
        #[arg(long)]
        data: String,
        #[arg(long = "model", required = true)]
        models: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let ctx = Context::new(cli.config.as_deref(), cli.seed)?;
    match cli.verb {
        Verb::Simulate { out } => {
            let files = commands::cmd_simulate(&ctx, &out)?;
            println!("wrote {} files to {}", files.len(), out.display());
        }
        Verb::Train { data, method, out } => {
            let o = commands::cmd_train(&ctx, &data, method, &out)?;
            if let Some(h) = o.history {
                println!(
                    "{} epochs, best epoch {} (validation loss {:.6})",
                    h.epochs.len(),
                    h.best_epoch,
                    h.best_val_loss
                );
            }
            println!("wrote {}", out.display());
        }
        Verb::Embed { model, data, out } => {
            let files = commands::cmd_embed(&ctx, &model, &data, &out)?;
            println!("wrote {} files to {}", files.len(), out.display());
        }
        Verb::Kde { input, out } => {
            let files = commands::cmd_kde(&ctx, &input, &out)?;
            println!("wrote {} files to {}", files.len(), out.display());
        }
        Verb::Classify { benchmarks, tests, out } => {
            let c = commands::cmd_classify(&ctx, &benchmarks, &tests, &out)?;
            for (t, p) in c.matrix.test_labels.iter().zip(&c.predicted) {
                println!("{t} -> {p}");
            }
        }
        Verb::Report { data, models, out } => {
            for s in commands::cmd_report(&ctx, &data, &models, &out)? {
                println!("{:<12} {:<7} reference {:.6}  held-out {:.6}", s.name, s.kind, s.reference_mse, s.held_out_mse);
            }
        }
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
