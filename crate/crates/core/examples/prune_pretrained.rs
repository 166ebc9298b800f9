//! Post-training pruning with every method, before and after a short fine-tune.

use ckasr::cli::ExperimentConfig;
use ckasr::model::accuracy;
use ckasr::sparsify::{knapsack_prune_hidden, l1_filter_prune_hidden, magnitude_prune, random_prune};
use ckasr::train::train_from;
use ckasr::{train, Rng, TrainConfig};

fn main() -> ckasr::Result<()> {
    let mut config = ExperimentConfig::default();
    config.set("train.epochs", "15").expect("valid key");
    let (tr, ev) = config.build_data()?;
    let spec = config.model_spec(tr.dim(), tr.num_classes);
    let dense = train(&spec, &tr, &ev, &config.train_config("dense"))?.params;
    println!("dense accuracy {:.4}", accuracy(&dense, None, &ev.features, &ev.labels)?);

    let ratio = 0.5;
    let results = [
        magnitude_prune(&dense, ratio)?,
        l1_filter_prune_hidden(&dense, ratio)?,
        knapsack_prune_hidden(&dense, ratio)?,
        random_prune(&spec, ratio, &mut Rng::new(4))?,
    ];
    for r in results {
        let mask = r.mask().clone();
        let after = accuracy(&dense, Some(&mask), &ev.features, &ev.labels)?;
        let cfg = TrainConfig {
            epochs: 3,
            mask: Some(mask.clone()),
            ..config.train_config("finetune")
        };
        let tuned = train_from(dense.clone(), &tr, &ev, &cfg)?;
        println!(
            "{:<10} sparsity {:.3}  accuracy {:.4} -> {:.4} after fine-tune",
            r.method.to_string(),
            r.achieved_sparsity,
            after,
            tuned.records.last().expect("trained").eval_accuracy
        );
    }
    Ok(())
}
