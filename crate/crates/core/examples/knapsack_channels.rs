//! Channel selection as a 0/1 knapsack, then applied to a trained network.

use ckasr::cli::ExperimentConfig;
use ckasr::model::accuracy;
use ckasr::sparsify::{knapsack_channel_prune, knapsack_prune_hidden, l1_filter_prune_hidden};
use ckasr::train;

fn main() -> ckasr::Result<()> {
    let importances = [6.0, 10.0, 12.0, 3.0];
    let costs = [1, 2, 3, 2];
    let keep = knapsack_channel_prune(&importances, &costs, 5)?;
    println!("kept channels under budget 5: {keep:?}");

    let mut config = ExperimentConfig::default();
    config.set("train.epochs", "15").expect("valid key");
    let (tr, ev) = config.build_data()?;
    let spec = config.model_spec(tr.dim(), tr.num_classes);
    let params = train(&spec, &tr, &ev, &config.train_config("dense"))?.params;
    for ratio in [0.25, 0.5, 0.75] {
        for r in [knapsack_prune_hidden(&params, ratio)?, l1_filter_prune_hidden(&params, ratio)?] {
            let acc = accuracy(&params, Some(r.mask()), &ev.features, &ev.labels)?;
            println!(
                "ratio {ratio:<4} {:<9} weight sparsity {:.3}  accuracy {acc:.4}  removed {:?}",
                r.method.to_string(),
                r.achieved_sparsity,
                r.removed_per_layer
            );
        }
    }
    Ok(())
}
