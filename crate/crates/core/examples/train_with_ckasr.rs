//! Trains the same network with and without the CKA regularizer and compares
//! interlayer similarity, ε-sparsity and accuracy.

use ckasr::cli::ExperimentConfig;
use ckasr::regularizer::CkaSrConfig;
use ckasr::{train, TrainConfig};

fn main() -> ckasr::Result<()> {
    let mut config = ExperimentConfig::default();
    config.set("train.epochs", "15").expect("valid key");
    config.set("train.epsilons", "1e-3,1e-2").expect("valid key");
    let (tr, ev) = config.build_data()?;
    let spec = config.model_spec(tr.dim(), tr.num_classes);

    for beta in [0.0, 8e-4, 3e-3] {
        let cfg = TrainConfig {
            cka_sr: CkaSrConfig::with_beta(beta),
            ..config.train_config(&format!("beta={beta}"))
        };
        let out = train(&spec, &tr, &ev, &cfg)?;
        let last = out.records.last().expect("at least one epoch");
        println!(
            "beta {beta:<7} acc {:.4}  mean CKA {:.4}  cka_loss {:.5}  S_eps {:?}",
            last.eval_accuracy, last.mean_pairwise_cka, last.cka_loss, last.epsilon_sparsity
        );
    }
    Ok(())
}
