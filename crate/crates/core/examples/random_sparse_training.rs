//! Sparse training from scratch under a fixed random mask, across sparsity levels.
//!
//! Random masks starve narrow layers (a 2-input first layer keeps a handful of
//! weights at 90% sparsity), so this uses a wider, shallower network than the
//! defaults.

use ckasr::cli::ExperimentConfig;
use ckasr::regularizer::CkaSrConfig;
use ckasr::sparsify::random_sparse_mask;
use ckasr::{train, Rng, TrainConfig};

fn main() -> ckasr::Result<()> {
    let mut config = ExperimentConfig::default();
    config.set("model.depth", "3").expect("valid key");
    config.set("model.width", "256").expect("valid key");
    let (tr, ev) = config.build_data()?;
    let spec = config.model_spec(tr.dim(), tr.num_classes);

    println!("sparsity  beta     accuracy");
    for sparsity in [0.7, 0.9, 0.98] {
        let mask = random_sparse_mask(&spec, sparsity, &mut Rng::new(11))?;
        for beta in [0.0, 8e-4] {
            let cfg = TrainConfig {
                mask: Some(mask.clone()),
                cka_sr: CkaSrConfig::with_beta(beta),
                ..config.train_config("sparse")
            };
            let out = train(&spec, &tr, &ev, &cfg)?;
            assert!(out.batches.iter().all(|b| b.mask_violations == 0));
            println!(
                "{:<8.3}  {beta:<7}  {:.4}",
                mask.sparsity(),
                out.records.last().expect("trained").eval_accuracy
            );
        }
    }
    Ok(())
}
