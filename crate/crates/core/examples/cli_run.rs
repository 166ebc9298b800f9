//! Drives the train, prune and diagnose commands from code, as the binary does.

use ckasr::cli::{cmd_diagnose, cmd_prune, cmd_train, Diagnostic, ExperimentConfig, Invocation, ModelSource};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = ExperimentConfig::parse(
        "# a quick run\n\
         model.depth = 4\n\
         model.width = 32\n\
         train.epochs = 5\n\
         sparsify.ratios = 0.3,0.6,0.9\n",
    )?;
    let mut inv = Invocation::new(config);
    inv.out_dir = std::env::temp_dir().join(format!("ckasr-cli-{}", std::process::id()));
    inv.force = true;

    let run = cmd_train(&inv)?;
    println!("trained into {}", run.dir.display());
    let ck = run.dir.join("checkpoint.json");

    let report = cmd_prune(&inv, &ck)?;
    for e in &report.results {
        println!("ratio {}: accuracy {:.4}", e.result.requested_ratio, e.accuracy_after);
    }
    let diag = cmd_diagnose(
        &inv,
        &[Diagnostic::Heatmap, Diagnostic::Theorem1],
        &ModelSource::Checkpoint(ck),
    )?;
    for (eps, dev) in diag.theorem1 {
        println!("epsilon {eps:e}: deviation {dev:.3e}");
    }
    for entry in std::fs::read_dir(&diag.dir)? {
        println!("  {}", entry?.file_name().to_string_lossy());
    }
    std::fs::remove_dir_all(&inv.out_dir)?;
    Ok(())
}
