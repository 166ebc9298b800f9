//! The CKA sparsity regularizer and its application policies.
//!
//! For stage-structured captures the loss is
//! `β · Σ_s Σ_i Σ_{j≠i} w_ij · CKA(X_i, X_j)`, evaluated over unordered
//! pairs as `2β · Σ_s Σ_{i<j} w_ij · CKA(X_i, X_j)`. The augmented variant
//! instead averages CKA over every pair of layers in the whole network.
//!
//! Each loss has two entry points: a plain evaluation over
//! [`StageCapture`]s and a taped one ([`record_loss`]) used during training
//! so gradients reach the parameters through the captured activations.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::similarity::{CenteredGram, FeatureMap};

pub const DEFAULT_BETA: f64 = 8e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Variant {
    #[default]
    Standard,
    Augmented,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub enum PairWeights {
    /// `w_ij = 1` for every pair.
    #[default]
    Uniform,
    /// `w_ij = 1` only for consecutive layers.
    AdjacentOnly,
    /// Explicit symmetric table with zero diagonal, indexed by layer index.
    Custom(Matrix),
}

impl PairWeights {
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        match self {
            PairWeights::Uniform => 1.0,
            PairWeights::AdjacentOnly => {
                if i.abs_diff(j) == 1 {
                    1.0
                } else {
                    0.0
                }
            }
            PairWeights::Custom(table) => {
                if i < table.rows() && j < table.cols() {
                    table.get(i, j)
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CkaSrConfig {
    pub beta: f64,
    pub pair_weights: PairWeights,
    pub variant: Variant,
    /// Examples of each batch used for the regularizer; `None` means all.
    pub sample_n: Option<usize>,
    /// Apply the regularizer on one batch out of every `batch_m`.
    pub batch_m: usize,
    pub include_input_layer: bool,
}

impl Default for CkaSrConfig {
    fn default() -> Self {
        CkaSrConfig {
            beta: DEFAULT_BETA,
            pair_weights: PairWeights::Uniform,
            variant: Variant::Standard,
            sample_n: None,
            batch_m: 1,
            include_input_layer: true,
        }
    }
}

impl CkaSrConfig {
    pub fn with_beta(beta: f64) -> Self {
        CkaSrConfig {
            beta,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::invalid(format!("beta must be finite and >= 0, got {}", self.beta)));
        }
        if matches!(self.sample_n, Some(n) if n < 2) {
            return Err(Error::invalid("sample_n must be at least 2"));
        }
        if self.batch_m < 1 {
            return Err(Error::invalid("batch_m must be at least 1"));
        }
        if let PairWeights::Custom(t) = &self.pair_weights {
            if t.rows() != t.cols() {
                return Err(Error::invalid("pair weight table must be square"));
            }
            for i in 0..t.rows() {
                if t.get(i, i) != 0.0 {
                    return Err(Error::invalid("pair weight table needs a zero diagonal"));
                }
                for j in 0..i {
                    if t.get(i, j) != t.get(j, i) {
                        return Err(Error::invalid("pair weight table must be symmetric"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Whether training should evaluate the regularizer at all.
    pub fn is_active(&self) -> bool {
        self.beta > 0.0
    }
}

/// Feature maps of one stage: its input (layer 0) followed by each layer output.
#[derive(Clone, Debug, PartialEq)]
pub struct StageCapture {
    pub stage_index: usize,
    pub features: Vec<FeatureMap>,
}

impl StageCapture {
    pub fn new(stage_index: usize, features: Vec<FeatureMap>) -> Result<Self> {
        if let Some(first) = features.first() {
            let n = first.examples();
            for (pos, f) in features.iter().enumerate() {
                if f.layer_index() != pos {
                    return Err(Error::invalid(format!(
                        "stage {stage_index}: layer indices must run 0..N, found {} at position {pos}",
                        f.layer_index()
                    )));
                }
                if f.examples() != n {
                    return Err(Error::shape(
                        "stage capture",
                        format!("layer {pos} has {} examples, expected {n}", f.examples()),
                    ));
                }
            }
        }
        Ok(StageCapture {
            stage_index,
            features,
        })
    }
}

/// Value of the regularizer together with its pair bookkeeping.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct LossStats {
    pub value: f64,
    pub pairs_used: usize,
    pub pairs_skipped: usize,
}

fn stage_maps<'a>(stage: &'a StageCapture, cfg: &CkaSrConfig) -> Vec<&'a FeatureMap> {
    stage
        .features
        .iter()
        .filter(|f| cfg.include_input_layer || f.layer_index() > 0)
        .collect()
}

/// Standard loss with pair bookkeeping.
pub fn cka_sr_loss_stats(captures: &[StageCapture], cfg: &CkaSrConfig) -> Result<LossStats> {
    if cfg.variant != Variant::Standard {
        return Err(Error::invalid("cka_sr_loss expects the standard variant"));
    }
    if captures.is_empty() {
        return Err(Error::invalid("no stage captures"));
    }
    let mut stats = LossStats::default();
    let mut sum = 0.0;
    for stage in captures {
        let maps = stage_maps(stage, cfg);
        if maps.len() < 2 {
            return Err(Error::invalid(format!(
                "stage {} has fewer than 2 feature maps",
                stage.stage_index
            )));
        }
        let grams: Vec<CenteredGram> = maps.iter().map(|f| CenteredGram::of(f.values())).collect();
        for i in 0..maps.len() {
            for j in i + 1..maps.len() {
                if grams[i].is_degenerate() || grams[j].is_degenerate() {
                    stats.pairs_skipped += 1;
                    continue;
                }
                let w = cfg.pair_weights.weight(maps[i].layer_index(), maps[j].layer_index());
                sum += w * grams[i].cka(&grams[j]);
                stats.pairs_used += 1;
            }
        }
    }
    if stats.pairs_used == 0 {
        return Err(Error::Degenerate("every layer pair is degenerate".into()));
    }
    stats.value = 2.0 * cfg.beta * sum;
    Ok(stats)
}

/// `2β · Σ_s Σ_{i<j} w_ij · CKA(X_i, X_j)`; degenerate pairs are skipped.
pub fn cka_sr_loss(captures: &[StageCapture], cfg: &CkaSrConfig) -> Result<f64> {
    cka_sr_loss_stats(captures, cfg).map(|s| s.value)
}

/// `β` times the mean CKA over all pairs of the given maps.
pub fn aug_cka_sr_loss(features: &[FeatureMap], beta: f64) -> Result<f64> {
    aug_cka_sr_loss_stats(features, beta).map(|s| s.value)
}

pub fn aug_cka_sr_loss_stats(features: &[FeatureMap], beta: f64) -> Result<LossStats> {
    if features.len() < 2 {
        return Err(Error::invalid("augmented loss needs at least 2 feature maps"));
    }
    let grams: Vec<CenteredGram> = features.iter().map(|f| CenteredGram::of(f.values())).collect();
    let mut stats = LossStats::default();
    let mut sum = 0.0;
    for i in 0..grams.len() {
        for j in i + 1..grams.len() {
            if grams[i].is_degenerate() || grams[j].is_degenerate() {
                stats.pairs_skipped += 1;
                continue;
            }
            sum += grams[i].cka(&grams[j]);
            stats.pairs_used += 1;
        }
    }
    if stats.pairs_used == 0 {
        return Err(Error::Degenerate("every layer pair is degenerate".into()));
    }
    stats.value = beta * sum / stats.pairs_used as f64;
    Ok(stats)
}

/// Whole-network list of maps: the network input (optionally) followed by
/// every layer output. Inputs of later stages repeat the previous stage's
/// last output and are dropped.
pub fn network_maps(captures: &[StageCapture], include_input: bool) -> Vec<FeatureMap> {
    let mut out = Vec::new();
    for (s, stage) in captures.iter().enumerate() {
        for f in &stage.features {
            let is_input = f.layer_index() == 0;
            if is_input && (s > 0 || !include_input) {
                continue;
            }
            out.push(f.clone());
        }
    }
    out
}

/// Dispatches on the configured variant.
pub fn regularizer_loss(captures: &[StageCapture], cfg: &CkaSrConfig) -> Result<LossStats> {
    match cfg.variant {
        Variant::Standard => cka_sr_loss_stats(captures, cfg),
        Variant::Augmented => {
            aug_cka_sr_loss_stats(&network_maps(captures, cfg.include_input_layer), cfg.beta)
        }
    }
}

/// True iff the regularizer runs on this batch.
pub fn should_apply(batch_index: usize, cfg: &CkaSrConfig) -> bool {
    batch_index % cfg.batch_m.max(1) == 0
}

/// Leading `sample_n` rows of the batch (all of them if fewer).
pub fn subsample(batch: &Matrix, cfg: &CkaSrConfig) -> Matrix {
    match cfg.sample_n {
        Some(n) if n < batch.rows() => batch.slice_rows(0, n),
        _ => batch.clone(),
    }
}

/// Taped activations of one stage, in the same layout as [`StageCapture`].
#[derive(Clone, Debug)]
pub struct TapedStage {
    pub stage_index: usize,
    /// `(layer_index, activation)` with layer 0 the stage input.
    pub layers: Vec<(usize, Var)>,
}

struct TapedMap {
    centered: Var,
    norm: Var,
    layer_index: usize,
}

fn taped_map(tape: &mut Tape, layer_index: usize, x: Var) -> Result<Option<TapedMap>> {
    let k = tape.gram(x);
    let centered = tape.center_gram(k)?;
    let self_hsic = tape.frobenius_sq(centered);
    if !(tape.scalar(self_hsic) > crate::autodiff::DEGENERATE_FLOOR) {
        return Ok(None);
    }
    let norm = tape.sqrt(self_hsic)?;
    Ok(Some(TapedMap {
        centered,
        norm,
        layer_index,
    }))
}

fn taped_cka(tape: &mut Tape, a: &TapedMap, b: &TapedMap) -> Result<Var> {
    let prod = tape.mul(a.centered, b.centered)?;
    let hsic = tape.sum_all(prod);
    let denom = tape.mul(a.norm, b.norm)?;
    tape.div(hsic, denom)
}

fn sum_vars(tape: &mut Tape, terms: Vec<Var>) -> Result<Var> {
    let mut iter = terms.into_iter();
    let mut acc = iter.next().expect("at least one term");
    for t in iter {
        acc = tape.add(acc, t)?;
    }
    Ok(acc)
}

/// Records the configured regularizer on `tape`, returning its 1x1 output.
pub fn record_loss(tape: &mut Tape, stages: &[TapedStage], cfg: &CkaSrConfig) -> Result<(Var, LossStats)> {
    if stages.is_empty() {
        return Err(Error::invalid("no stage captures"));
    }
    let mut stats = LossStats::default();
    let mut terms = Vec::new();
    match cfg.variant {
        Variant::Standard => {
            for stage in stages {
                let layers: Vec<(usize, Var)> = stage
                    .layers
                    .iter()
                    .copied()
                    .filter(|(l, _)| cfg.include_input_layer || *l > 0)
                    .collect();
                if layers.len() < 2 {
                    return Err(Error::invalid(format!(
                        "stage {} has fewer than 2 feature maps",
                        stage.stage_index
                    )));
                }
                let maps = layers
                    .iter()
                    .map(|&(l, v)| taped_map(tape, l, v))
                    .collect::<Result<Vec<_>>>()?;
                for i in 0..maps.len() {
                    for j in i + 1..maps.len() {
                        let (Some(a), Some(b)) = (&maps[i], &maps[j]) else {
                            stats.pairs_skipped += 1;
                            continue;
                        };
                        stats.pairs_used += 1;
                        let w = cfg.pair_weights.weight(a.layer_index, b.layer_index);
                        if w == 0.0 {
                            continue;
                        }
                        let c = taped_cka(tape, a, b)?;
                        terms.push(tape.scale(c, 2.0 * cfg.beta * w));
                    }
                }
            }
        }
        Variant::Augmented => {
            let mut flat = Vec::new();
            for (s, stage) in stages.iter().enumerate() {
                for &(l, v) in &stage.layers {
                    if l == 0 && (s > 0 || !cfg.include_input_layer) {
                        continue;
                    }
                    flat.push((l, v));
                }
            }
            if flat.len() < 2 {
                return Err(Error::invalid("augmented loss needs at least 2 feature maps"));
            }
            let maps = flat
                .iter()
                .map(|&(l, v)| taped_map(tape, l, v))
                .collect::<Result<Vec<_>>>()?;
            let mut raw = Vec::new();
            for i in 0..maps.len() {
                for j in i + 1..maps.len() {
                    let (Some(a), Some(b)) = (&maps[i], &maps[j]) else {
                        stats.pairs_skipped += 1;
                        continue;
                    };
                    stats.pairs_used += 1;
                    raw.push(taped_cka(tape, a, b)?);
                }
            }
            let used = stats.pairs_used.max(1) as f64;
            terms = raw.into_iter().map(|c| tape.scale(c, cfg.beta / used)).collect();
        }
    }
    if stats.pairs_used == 0 {
        return Err(Error::Degenerate("every layer pair is degenerate".into()));
    }
    let out = if terms.is_empty() {
        tape.constant(Matrix::scalar(0.0))
    } else {
        sum_vars(tape, terms)?
    };
    stats.value = tape.scalar(out);
    Ok((out, stats))
}
