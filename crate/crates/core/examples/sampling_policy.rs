//! Cheaper regularization: use only the first `sample_n` examples of a batch,
//! or apply the term on one batch in every `batch_m`.

use std::time::Instant;

use ckasr::cli::ExperimentConfig;
use ckasr::regularizer::CkaSrConfig;
use ckasr::{train, TrainConfig};

fn main() -> ckasr::Result<()> {
    let mut config = ExperimentConfig::default();
    config.set("train.epochs", "10").expect("valid key");
    let (tr, ev) = config.build_data()?;
    let spec = config.model_spec(tr.dim(), tr.num_classes);

    let policies = [
        ("full", None, 1),
        ("sample_n=8", Some(8), 1),
        ("batch_m=5", None, 5),
        ("batch_m=10", None, 10),
    ];
    for (name, sample_n, batch_m) in policies {
        let cfg = TrainConfig {
            cka_sr: CkaSrConfig {
                sample_n,
                batch_m,
                ..CkaSrConfig::with_beta(8e-4)
            },
            ..config.train_config(name)
        };
        let t = Instant::now();
        let out = train(&spec, &tr, &ev, &cfg)?;
        let applied = out.batches.iter().filter(|b| b.applied).count();
        let last = out.records.last().expect("trained");
        println!(
            "{name:<11} regularized {applied:>4}/{} batches  mean CKA {:.4}  acc {:.4}  {:.2}s",
            out.batches.len(),
            last.mean_pairwise_cka,
            last.eval_accuracy,
            t.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
