//! Iterative magnitude pruning with rewinding to the original initialisation.

use ckasr::cli::ExperimentConfig;
use ckasr::model::accuracy;
use ckasr::sparsify::imp_lth;
use ckasr::train::train_from;
use ckasr::TrainConfig;

fn main() -> ckasr::Result<()> {
    let mut config = ExperimentConfig::default();
    config.set("train.epochs", "8").expect("valid key");
    let (tr, ev) = config.build_data()?;
    let spec = config.model_spec(tr.dim(), tr.num_classes);
    let cfg = config.train_config("imp");

    let out = imp_lth(&spec, &tr, &ev, &cfg, 3, 0.5)?;
    for (round, records) in out.rounds.iter().enumerate() {
        let last = records.last().expect("trained");
        println!("round {}: mask sparsity {:.3}  accuracy {:.4}", round + 1, last.mask_sparsity, last.eval_accuracy);
    }
    println!("final mask sparsity {:.4}", out.mask.sparsity());
    println!(
        "rewound ticket before training: accuracy {:.4}",
        accuracy(&out.rewound, Some(&out.mask), &ev.features, &ev.labels)?
    );
    let ticket = train_from(
        out.rewound.clone(),
        &tr,
        &ev,
        &TrainConfig {
            mask: Some(out.mask.clone()),
            ..cfg
        },
    )?;
    println!("ticket retrained: accuracy {:.4}", ticket.records.last().expect("trained").eval_accuracy);
    Ok(())
}
