//! SGD-with-momentum training on cross-entropy plus the CKA regularizer.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::data::{BatchIterator, Dataset};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Rng};
use crate::model::{
    accuracy, forward_capture, init_params, record_cross_entropy, record_forward, ModelSpec, ParamVars, Params,
    SparseMask,
};
use crate::regularizer::{self, CkaSrConfig};
use crate::similarity::{pairwise_cka, CenteredGram, FeatureMap};
use crate::sparsify::epsilon_sparsity;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Drives batch shuffling.
    pub seed: u64,
    pub cka_sr: CkaSrConfig,
    pub mask: Option<SparseMask>,
    /// ε values reported in every [`RunRecord`].
    pub epsilons: Vec<f64>,
    pub run_id: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            seed: 0,
            cka_sr: CkaSrConfig::default(),
            mask: None,
            epsilons: vec![0.01],
            run_id: "run".into(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        if self.batch_size < 1 {
            return Err(Error::invalid("batch size must be >= 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be > 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must be in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::invalid("weight decay must be >= 0"));
        }
        if self.epsilons.iter().any(|&e| !(e > 0.0)) {
            return Err(Error::invalid("epsilon values must be > 0"));
        }
        self.cka_sr.validate()
    }
}

/// Metrics at the end of one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub epoch: usize,
    /// Mean cross-entropy over the epoch's batches.
    pub train_loss: f64,
    /// Mean regularizer value over the batches where it applied.
    pub cka_loss: f64,
    pub eval_accuracy: f64,
    /// Mean off-diagonal interlayer CKA on the probe batch.
    pub mean_pairwise_cka: f64,
    /// `(ε, S_ε)` pairs.
    pub epsilon_sparsity: Vec<(f64, f64)>,
    pub mask_sparsity: f64,
    pub wall_time: f64,
}

/// Per-batch loss bookkeeping.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchLog {
    pub epoch: usize,
    /// Index counted across all epochs.
    pub step: usize,
    pub empirical_loss: f64,
    pub cka_loss: f64,
    pub total_loss: f64,
    pub applied: bool,
    pub pairs_skipped: usize,
    /// Masked weights found nonzero after the step.
    pub mask_violations: usize,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: Params,
    pub records: Vec<RunRecord>,
    pub batches: Vec<BatchLog>,
}

/// SGD with heavy-ball momentum; weight decay applies to weights only.
#[derive(Clone, Debug)]
pub struct Sgd {
    lr: f64,
    momentum: f64,
    weight_decay: f64,
    velocity: Vec<(Matrix, Vec<f64>)>,
}

impl Sgd {
    pub fn new(params: &Params, lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            lr,
            momentum,
            weight_decay,
            velocity: params
                .layers
                .iter()
                .map(|l| (Matrix::zeros(l.weight.rows(), l.weight.cols()), vec![0.0; l.bias.len()]))
                .collect(),
        }
    }

    /// `v ← μv + g (+ λw)`, `w ← w − η v`.
    pub fn step(&mut self, params: &mut Params, weight_grads: &[Matrix], bias_grads: &[Matrix]) {
        for (l, layer) in params.layers.iter_mut().enumerate() {
            let (vw, vb) = &mut self.velocity[l];
            let g = weight_grads[l].as_slice();
            for ((w, v), &gi) in layer.weight.as_mut_slice().iter_mut().zip(vw.as_mut_slice()).zip(g) {
                *v = self.momentum * *v + gi + self.weight_decay * *w;
                *w -= self.lr * *v;
            }
            for ((b, v), &gi) in layer.bias.iter_mut().zip(vb.iter_mut()).zip(bias_grads[l].as_slice()) {
                *v = self.momentum * *v + gi;
                *b -= self.lr * *v;
            }
        }
    }
}

/// Result of one taped optimization step before the parameter update.
pub struct StepGradients {
    pub weight_grads: Vec<Matrix>,
    pub bias_grads: Vec<Matrix>,
    pub empirical_loss: f64,
    pub cka: Option<regularizer::LossStats>,
}

/// Records cross-entropy (and, when `regularize`, the CKA term on the
/// subsampled batch) and returns parameter gradients of their sum.
pub fn step_gradients(
    params: &Params,
    mask: Option<&SparseMask>,
    features: &Matrix,
    labels: &[usize],
    cka_sr: &CkaSrConfig,
    regularize: bool,
) -> Result<StepGradients> {
    let mut tape = Tape::new();
    let vars = ParamVars::record(&mut tape, params);
    let (logits, stages) = record_forward(&mut tape, params, &vars, mask, features)?;
    let ce = record_cross_entropy(&mut tape, logits, labels)?;
    let empirical_loss = tape.scalar(ce);

    let mut cka = None;
    let mut output = ce;
    if regularize {
        let reg_stages = if cka_sr.sample_n.is_some_and(|n| n < features.rows()) {
            let sub = regularizer::subsample(features, cka_sr);
            record_forward(&mut tape, params, &vars, mask, &sub)?.1
        } else {
            stages
        };
        if reg_stages.first().is_some_and(|s| tape.value(s.layers[0].1).rows() >= 2) {
            match regularizer::record_loss(&mut tape, &reg_stages, cka_sr) {
                Ok((reg, stats)) => {
                    output = tape.add(ce, reg)?;
                    cka = Some(stats);
                }
                // every pair degenerate: skip the regularizer for this batch
                Err(Error::Degenerate(_)) => {
                    cka = Some(regularizer::LossStats::default());
                }
                Err(e) => return Err(e),
            }
        }
    }
    let grads = tape.backward(output)?;
    Ok(StepGradients {
        weight_grads: vars.weights.iter().map(|&v| grads.wrt(v)).collect(),
        bias_grads: vars.biases.iter().map(|&v| grads.wrt(v)).collect(),
        empirical_loss,
        cka,
    })
}

/// Mean off-diagonal CKA over the non-degenerate layer outputs of a probe batch.
pub fn probe_mean_cka(params: &Params, mask: Option<&SparseMask>, probe: &Matrix, include_input: bool) -> Result<f64> {
    Ok(probe_heatmap_maps(params, mask, probe, include_input)?
        .map(|maps| pairwise_cka(&maps).map(|h| h.mean_off_diagonal()))
        .transpose()?
        .unwrap_or(0.0))
}

/// Non-degenerate whole-network maps on the probe batch, if at least two.
pub fn probe_heatmap_maps(
    params: &Params,
    mask: Option<&SparseMask>,
    probe: &Matrix,
    include_input: bool,
) -> Result<Option<Vec<FeatureMap>>> {
    let (_, caps) = forward_capture(params, mask, probe)?;
    let maps: Vec<FeatureMap> = regularizer::network_maps(&caps, include_input)
        .into_iter()
        .filter(|f| !CenteredGram::of(f.values()).is_degenerate())
        .collect();
    Ok((maps.len() >= 2).then_some(maps))
}

/// Trains from `init_params(spec, Rng::new(spec.seed))`.
pub fn train(spec: &ModelSpec, train_data: &Dataset, eval_data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let init = init_params(spec, &mut Rng::new(spec.seed))?;
    train_from(init, train_data, eval_data, cfg)
}

pub fn train_from(params: Params, train_data: &Dataset, eval_data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_observed(params, train_data, eval_data, cfg, |_, _| Ok(()))
}

/// [`train_from`] with a callback after every epoch, given the 1-based epoch
/// and the current (masked) parameters.
pub fn train_observed(
    mut params: Params,
    train_data: &Dataset,
    eval_data: &Dataset,
    cfg: &TrainConfig,
    mut observe: impl FnMut(usize, &Params) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_data.is_empty() {
        return Err(Error::invalid("training data is empty"));
    }
    if train_data.dim() != params.layers[0].weight.cols() {
        return Err(Error::shape(
            "train",
            format!("data has {} features, model expects {}", train_data.dim(), params.layers[0].weight.cols()),
        ));
    }
    let mask = cfg.mask.as_ref();
    if let Some(m) = mask {
        m.check_params(&params)?;
        m.apply(&mut params);
    }
    let probe_source = if eval_data.is_empty() { train_data } else { eval_data };
    let probe = probe_source
        .features
        .slice_rows(0, cfg.batch_size.min(probe_source.len()));
    let regularize = cfg.cka_sr.is_active();

    let mut sgd = Sgd::new(&params, cfg.learning_rate, cfg.momentum, cfg.weight_decay);
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut batches = Vec::new();
    let mut step = 0usize;
    let started = Instant::now();

    for epoch in 0..cfg.epochs {
        let mut ce_sum = 0.0;
        let mut ce_count = 0usize;
        let mut cka_sum = 0.0;
        let mut cka_count = 0usize;
        for (b, batch) in BatchIterator::new(train_data, cfg.batch_size, cfg.seed, epoch).enumerate() {
            let apply = regularize && regularizer::should_apply(step, &cfg.cka_sr);
            let g = step_gradients(&params, mask, &batch.features, &batch.labels, &cfg.cka_sr, apply)?;
            let cka_value = g.cka.map_or(0.0, |s| s.value);
            let total = g.empirical_loss + cka_value;
            if !total.is_finite() {
                return Err(Error::Diverged { epoch, batch: b });
            }
            sgd.step(&mut params, &g.weight_grads, &g.bias_grads);
            let mut violations = 0;
            if let Some(m) = mask {
                m.apply(&mut params);
                violations = count_violations(&params, m);
            }
            if !params.is_finite() {
                return Err(Error::Diverged { epoch, batch: b });
            }
            ce_sum += g.empirical_loss;
            ce_count += 1;
            if let Some(stats) = g.cka {
                cka_sum += stats.value;
                cka_count += 1;
            }
            batches.push(BatchLog {
                epoch,
                step,
                empirical_loss: g.empirical_loss,
                cka_loss: cka_value,
                total_loss: total,
                applied: g.cka.is_some(),
                pairs_skipped: g.cka.map_or(0, |s| s.pairs_skipped),
                mask_violations: violations,
            });
            step += 1;
        }

        let eval_accuracy = accuracy(&params, mask, &eval_data.features, &eval_data.labels)?;
        records.push(RunRecord {
            run_id: cfg.run_id.clone(),
            epoch: epoch + 1,
            train_loss: ce_sum / ce_count.max(1) as f64,
            cka_loss: if cka_count > 0 { cka_sum / cka_count as f64 } else { 0.0 },
            eval_accuracy,
            mean_pairwise_cka: probe_mean_cka(&params, mask, &probe, cfg.cka_sr.include_input_layer)?,
            epsilon_sparsity: cfg
                .epsilons
                .iter()
                .map(|&e| (e, epsilon_sparsity(&params, e).s_epsilon))
                .collect(),
            mask_sparsity: mask.map_or(0.0, SparseMask::sparsity),
            wall_time: started.elapsed().as_secs_f64(),
        });
        observe(epoch + 1, &params)?;
    }
    Ok(TrainOutcome {
        params,
        records,
        batches,
    })
}

fn count_violations(params: &Params, mask: &SparseMask) -> usize {
    params
        .layers
        .iter()
        .zip(&mask.layers)
        .map(|(l, m)| {
            l.weight
                .as_slice()
                .iter()
                .zip(m.as_slice())
                .filter(|(&w, &k)| k == 0.0 && w != 0.0)
                .count()
        })
        .sum()
}
