//! Iterative magnitude pruning with rewinding to initialization.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::Rng;
use crate::model::{init_params, ModelSpec, Params, SparseMask};
use crate::train::{train_from, RunRecord, TrainConfig};

use super::prune_surviving;

#[derive(Clone, Debug)]
pub struct ImpOutcome {
    pub mask: SparseMask,
    /// Initial parameters with the final mask applied.
    pub rewound: Params,
    /// Training records of each round.
    pub rounds: Vec<Vec<RunRecord>>,
}

/// Train, prune `per_round_ratio` of the surviving weights by magnitude,
/// rewind survivors to their initial values, and repeat.
pub fn imp_lth(
    spec: &ModelSpec,
    train_data: &Dataset,
    eval_data: &Dataset,
    cfg: &TrainConfig,
    rounds: usize,
    per_round_ratio: f64,
) -> Result<ImpOutcome> {
    if rounds < 1 {
        return Err(Error::invalid("imp needs at least one round"));
    }
    let init = init_params(spec, &mut Rng::new(spec.seed))?;
    let mut mask = cfg.mask.clone().unwrap_or_else(|| SparseMask::dense_for(&init));
    let mut history = Vec::with_capacity(rounds);
    for round in 0..rounds {
        let round_cfg = TrainConfig {
            mask: Some(mask.clone()),
            run_id: format!("{}-round{}", cfg.run_id, round + 1),
            ..cfg.clone()
        };
        let outcome = train_from(init.clone(), train_data, eval_data, &round_cfg)?;
        mask = prune_surviving(&outcome.params, &mask, per_round_ratio)?;
        if let Some(layer) = mask.layers.iter().position(|m| m.as_slice().iter().all(|&v| v == 0.0)) {
            return Err(Error::MaskCollapse { layer });
        }
        history.push(outcome.records);
    }
    let mut rewound = init;
    mask.apply(&mut rewound);
    Ok(ImpOutcome {
        mask,
        rewound,
        rounds: history,
    })
}
