use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ckasr::cli::{
    cmd_diagnose, cmd_prune, cmd_sweep, cmd_train, config_beside, CliError, Diagnostic, ExperimentConfig, Invocation,
    ModelSource,
};

#[derive(Parser)]
#[command(name = "ckasr", version, about = "Sparse training with CKA-based sparsity regularization")]
struct Cli {
    /// Flat key = value config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Parent directory for run directories (default: output.dir).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Shorthand for --set train.seed=N.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Replace an existing run directory.
    #[arg(long, global = true)]
    force: bool,
    /// Parallel sub-runs for sweep.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model.
    Train,
    /// Train once per value along an axis.
    Sweep {
        #[arg(long)]
        axis: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Repeat every value over these seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// Prune a trained checkpoint.
    Prune {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Write diagnostic exports.
    Diagnose {
        #[arg(long, value_delimiter = ',', required = true)]
        which: Vec<String>,
        #[arg(long, conflicts_with = "synthetic")]
        checkpoint: Option<PathBuf>,
        /// Use freshly initialised parameters instead of a checkpoint.
        #[arg(long)]
        synthetic: bool,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let checkpoint = match &cli.command {
        Command::Prune { checkpoint } => Some(checkpoint.clone()),
        Command::Diagnose { checkpoint, .. } => checkpoint.clone(),
        _ => None,
    };
    let mut config = match (&cli.config, &checkpoint) {
        (Some(p), _) => ExperimentConfig::load(p)?,
        (None, Some(ck)) => config_beside(ck)?,
        (None, None) => ExperimentConfig::default(),
    };
    for o in &cli.overrides {
        config.apply_override(o)?;
    }
    if let Some(s) = cli.seed {
        config.set("train.seed", &s.to_string())?;
    }
    let mut inv = Invocation::new(config);
    if let Some(d) = cli.out_dir {
        inv.out_dir = d;
    }
    inv.force = cli.force;
    inv.workers = cli.workers;

    match cli.command {
        Command::Train => {
            let run = cmd_train(&inv)?;
            if let Some(r) = run.records.last() {
                println!(
                    "{}: epoch {} eval_accuracy {:.4} mean_pairwise_cka {:.4}",
                    run.dir.display(),
                    r.epoch,
                    r.eval_accuracy,
                    r.mean_pairwise_cka
                );
            }
        }
        Command::Sweep { axis, values, seeds } => {
            let out = cmd_sweep(&inv, axis.parse()?, &values, &seeds)?;
            println!("{}: {} rows", out.dir.join("summary.csv").display(), out.rows.len());
            if !out.failures.is_empty() {
                for f in &out.failures {
                    eprintln!("sub-run failed: {f}");
                }
                return Err(CliError::Failed(format!("{} sub-runs failed", out.failures.len())));
            }
        }
        Command::Prune { checkpoint } => {
            let report = cmd_prune(&inv, &checkpoint)?;
            println!("accuracy before: {:.4}", report.accuracy_before);
            for e in &report.results {
                println!(
                    "ratio {}: sparsity {:.4} accuracy {:.4}",
                    e.result.requested_ratio, e.result.achieved_sparsity, e.accuracy_after
                );
            }
        }
        Command::Diagnose {
            which,
            checkpoint,
            synthetic,
        } => {
            let which = which.iter().map(|w| w.parse()).collect::<Result<Vec<Diagnostic>, _>>()?;
            let source = match (checkpoint, synthetic) {
                (Some(p), _) => ModelSource::Checkpoint(p),
                (None, true) => ModelSource::Synthetic,
                (None, false) => ModelSource::None,
            };
            let out = cmd_diagnose(&inv, &which, &source)?;
            if let Some(s) = out.spearman {
                println!("spearman(CKA, MI) = {s:.4}");
            }
            for (e, d) in &out.theorem1 {
                println!("epsilon {e:e}: max logit deviation {d:e}");
            }
            println!("{}", out.dir.display());
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
