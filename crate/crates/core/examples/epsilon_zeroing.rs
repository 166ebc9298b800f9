//! Hard-zeroing weights below ε barely moves the logits when ε is small.

use ckasr::cli::ExperimentConfig;
use ckasr::diagnostics::weight_histogram;
use ckasr::sparsify::{epsilon_sparsity, epsilon_zeroing_deviation};
use ckasr::train;

fn main() -> ckasr::Result<()> {
    let mut config = ExperimentConfig::default();
    config.set("train.epochs", "10").expect("valid key");
    let (tr, ev) = config.build_data()?;
    let spec = config.model_spec(tr.dim(), tr.num_classes);
    let params = train(&spec, &tr, &ev, &config.train_config("zeroing"))?.params;
    let probe = ev.features.slice_rows(0, 32);

    println!("epsilon   S_eps     max logit deviation");
    for eps in [1e-6, 1e-4, 1e-3, 1e-2, 1e-1] {
        let s = epsilon_sparsity(&params, eps);
        let dev = epsilon_zeroing_deviation(&params, None, &probe, eps)?;
        println!("{eps:<8.0e}  {:.5}  {dev:.3e}", s.s_epsilon);
    }
    let h = weight_histogram(&params, 101, 0.5)?;
    println!("central histogram bin holds {:.4} of weights", h.central_fraction());
    Ok(())
}
