//! Sparsity measurement and mask construction.
//!
//! All masks cover weight matrices only; biases stay dense. Rankings
//! break ties by `(layer, row, col)` ascending so results are reproducible.

mod knapsack;
mod lth;
mod tokens;

pub use knapsack::knapsack_channel_prune;
pub use lth::{imp_lth, ImpOutcome};
pub use tokens::{token_keep_probs, token_select, TokenBatch};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Rng};
use crate::model::{forward_capture, ModelSpec, Params, SparseMask};

/// Fraction of weights with `|w| < ε`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSparsityReport {
    pub epsilon: f64,
    pub total_params: usize,
    pub small_params: usize,
    pub s_epsilon: f64,
}

/// Counts strict `|w| < ε` over every weight entry; biases are excluded.
pub fn epsilon_sparsity(params: &Params, epsilon: f64) -> EpsilonSparsityReport {
    let total_params = params.weight_count();
    let small_params = params.weights().filter(|w| w.abs() < epsilon).count();
    EpsilonSparsityReport {
        epsilon,
        total_params,
        small_params,
        s_epsilon: small_params as f64 / total_params as f64,
    }
}

/// Largest absolute logit change on `probe` after hard-zeroing every weight
/// with `|w| < ε`.
pub fn epsilon_zeroing_deviation(params: &Params, mask: Option<&SparseMask>, probe: &Matrix, epsilon: f64) -> Result<f64> {
    let (original, _) = forward_capture(params, mask, probe)?;
    let (zeroed, _) = forward_capture(&params.zero_below(epsilon), mask, probe)?;
    Ok(original.sub(&zeroed)?.max_abs())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneMethod {
    Magnitude,
    L1Filter,
    Knapsack,
    Random,
    IterativeMagnitude,
}

impl fmt::Display for PruneMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PruneMethod::Magnitude => "magnitude",
            PruneMethod::L1Filter => "l1_filter",
            PruneMethod::Knapsack => "knapsack",
            PruneMethod::Random => "random",
            PruneMethod::IterativeMagnitude => "imp",
        })
    }
}

impl std::str::FromStr for PruneMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "magnitude" => PruneMethod::Magnitude,
            "l1_filter" => PruneMethod::L1Filter,
            "knapsack" => PruneMethod::Knapsack,
            "random" => PruneMethod::Random,
            "imp" => PruneMethod::IterativeMagnitude,
            other => return Err(Error::invalid(format!("unknown prune method {other:?}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneResult {
    pub method: PruneMethod,
    pub requested_ratio: f64,
    pub achieved_sparsity: f64,
    /// Weights newly masked in each layer.
    pub removed_per_layer: Vec<usize>,
    #[serde(default)]
    pub config_hash: String,
    #[serde(skip)]
    pub mask: Option<SparseMask>,
}

impl PruneResult {
    fn new(method: PruneMethod, ratio: f64, mask: SparseMask, before: &SparseMask) -> Self {
        PruneResult {
            method,
            requested_ratio: ratio,
            achieved_sparsity: mask.sparsity(),
            removed_per_layer: mask.newly_masked(before),
            config_hash: String::new(),
            mask: Some(mask),
        }
    }

    pub fn mask(&self) -> &SparseMask {
        self.mask.as_ref().expect("prune results carry their mask")
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn check_ratio(ratio: f64) -> Result<()> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::invalid(format!("ratio must be in [0, 1), got {ratio}")));
    }
    Ok(())
}

/// Globally masks the `⌊ratio·|𝕎|⌋` smallest-magnitude weights.
pub fn magnitude_prune(params: &Params, ratio: f64) -> Result<PruneResult> {
    magnitude_prune_masked(params, &SparseMask::dense_for(params), ratio)
}

/// Like [`magnitude_prune`] but keeps `existing` masked weights out of the
/// ranking; only enough additional weights are masked to reach the target.
pub fn magnitude_prune_masked(params: &Params, existing: &SparseMask, ratio: f64) -> Result<PruneResult> {
    check_ratio(ratio)?;
    existing.check_params(params)?;
    let target = (ratio * params.weight_count() as f64).floor() as usize;
    let extra = target.saturating_sub(existing.zeros());
    let mask = mask_smallest_alive(params, existing, extra);
    Ok(PruneResult::new(PruneMethod::Magnitude, ratio, mask, existing))
}

/// Masks `⌊fraction·alive⌋` of the surviving weights by magnitude.
pub(crate) fn prune_surviving(params: &Params, existing: &SparseMask, fraction: f64) -> Result<SparseMask> {
    check_ratio(fraction)?;
    let alive = existing.total() - existing.zeros();
    let count = (fraction * alive as f64).floor() as usize;
    Ok(mask_smallest_alive(params, existing, count))
}

fn mask_smallest_alive(params: &Params, existing: &SparseMask, count: usize) -> SparseMask {
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (l, (layer, m)) in params.layers.iter().zip(&existing.layers).enumerate() {
        for (k, (&w, &keep)) in layer.weight.as_slice().iter().zip(m.as_slice()).enumerate() {
            if keep != 0.0 {
                candidates.push((w.abs(), l, k));
            }
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut mask = existing.clone();
    for &(_, l, k) in candidates.iter().take(count) {
        mask.layers[l].as_mut_slice()[k] = 0.0;
    }
    mask
}

fn check_hidden_layer(params: &Params, layer: usize) -> Result<()> {
    if layer + 1 >= params.layers.len() {
        return Err(Error::invalid(format!(
            "layer {layer} is not a hidden layer (model has {} hidden layers)",
            params.layers.len() - 1
        )));
    }
    if params.layers[layer].weight.rows() < 2 {
        return Err(Error::invalid(format!("layer {layer} has fewer than 2 units")));
    }
    Ok(())
}

/// Removes whole output units (rows) from `mask` and their outgoing
/// columns in the next layer.
fn remove_units(mask: &mut SparseMask, layer: usize, units: &[usize]) {
    for &u in units {
        let m = &mut mask.layers[layer];
        for c in 0..m.cols() {
            m.set(u, c, 0.0);
        }
        let next = &mut mask.layers[layer + 1];
        for r in 0..next.rows() {
            next.set(r, u, 0.0);
        }
    }
}

fn row_l1(params: &Params, layer: usize) -> Vec<f64> {
    let w = &params.layers[layer].weight;
    (0..w.rows()).map(|r| w.row(r).iter().map(|v| v.abs()).sum()).collect()
}

/// Structured pruning of one hidden layer: the `⌊ratio·units⌋` units with the
/// smallest row L1 norm are removed together with their outgoing weights.
pub fn l1_filter_prune(params: &Params, layer: usize, ratio: f64) -> Result<PruneResult> {
    let dense = SparseMask::dense_for(params);
    let mask = l1_filter_mask(params, &dense, layer, ratio)?;
    Ok(PruneResult::new(PruneMethod::L1Filter, ratio, mask, &dense))
}

fn l1_filter_mask(params: &Params, base: &SparseMask, layer: usize, ratio: f64) -> Result<SparseMask> {
    check_ratio(ratio)?;
    check_hidden_layer(params, layer)?;
    let norms = row_l1(params, layer);
    let count = (ratio * norms.len() as f64).floor() as usize;
    if count >= norms.len() {
        return Err(Error::invalid(format!("pruning would remove every unit of layer {layer}")));
    }
    let mut order: Vec<usize> = (0..norms.len()).collect();
    order.sort_by(|&a, &b| norms[a].total_cmp(&norms[b]).then(a.cmp(&b)));
    let mut mask = base.clone();
    remove_units(&mut mask, layer, &order[..count]);
    Ok(mask)
}

/// [`l1_filter_prune`] applied to every hidden layer at the same ratio.
pub fn l1_filter_prune_hidden(params: &Params, ratio: f64) -> Result<PruneResult> {
    let dense = SparseMask::dense_for(params);
    let mut mask = dense.clone();
    for layer in 0..params.layers.len() - 1 {
        mask = l1_filter_mask(params, &mask, layer, ratio)?;
    }
    Ok(PruneResult::new(PruneMethod::L1Filter, ratio, mask, &dense))
}

/// Channel selection per hidden layer by exact knapsack.
///
/// A unit's importance is its row L1 norm and its cost is the number of
/// weights it owns (fan-in plus fan-out). Each layer keeps the best set of
/// units whose cost fits in `⌊(1 − ratio)·Σ cost⌋`.
pub fn knapsack_prune_hidden(params: &Params, ratio: f64) -> Result<PruneResult> {
    check_ratio(ratio)?;
    let dense = SparseMask::dense_for(params);
    let mut mask = dense.clone();
    for layer in 0..params.layers.len() - 1 {
        check_hidden_layer(params, layer)?;
        let importances = row_l1(params, layer);
        let fan_in = params.layers[layer].weight.cols();
        let fan_out = params.layers[layer + 1].weight.rows();
        let costs = vec![fan_in + fan_out; importances.len()];
        let budget = ((1.0 - ratio) * costs.iter().sum::<usize>() as f64).floor() as usize;
        let keep = knapsack_channel_prune(&importances, &costs, budget)?;
        if keep.is_empty() {
            return Err(Error::MaskCollapse { layer });
        }
        let removed: Vec<usize> = (0..importances.len()).filter(|u| !keep.contains(u)).collect();
        remove_units(&mut mask, layer, &removed);
    }
    Ok(PruneResult::new(PruneMethod::Knapsack, ratio, mask, &dense))
}

/// Exactly `⌊ratio·|𝕎|⌋` zeros at uniformly random positions.
pub fn random_sparse_mask(spec: &ModelSpec, ratio: f64, rng: &mut Rng) -> Result<SparseMask> {
    check_ratio(ratio)?;
    let mut mask = SparseMask::dense_for_spec(spec);
    let total = mask.total();
    let zeros = (ratio * total as f64).floor() as usize;
    let offsets: Vec<usize> = mask.layers.iter().map(|m| m.len()).collect();
    for flat in rng.sample_indices(total, zeros) {
        let mut k = flat;
        for (l, &len) in offsets.iter().enumerate() {
            if k < len {
                mask.layers[l].as_mut_slice()[k] = 0.0;
                break;
            }
            k -= len;
        }
    }
    Ok(mask)
}

/// Per-layer variant: each layer gets `⌊ratio·|W_l|⌋` random zeros.
pub fn random_sparse_mask_layerwise(spec: &ModelSpec, ratio: f64, rng: &mut Rng) -> Result<SparseMask> {
    check_ratio(ratio)?;
    let mut mask = SparseMask::dense_for_spec(spec);
    for m in &mut mask.layers {
        let zeros = (ratio * m.len() as f64).floor() as usize;
        for k in rng.sample_indices(m.len(), zeros) {
            m.as_mut_slice()[k] = 0.0;
        }
    }
    Ok(mask)
}

pub fn random_prune(spec: &ModelSpec, ratio: f64, rng: &mut Rng) -> Result<PruneResult> {
    let dense = SparseMask::dense_for_spec(spec);
    let mask = random_sparse_mask(spec, ratio, rng)?;
    Ok(PruneResult::new(PruneMethod::Random, ratio, mask, &dense))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, Layer};

    fn params_from(weights: Vec<Matrix>) -> Params {
        Params {
            layers: weights
                .into_iter()
                .map(|w| Layer {
                    bias: vec![0.0; w.rows()],
                    weight: w,
                    stage: Some(1),
                })
                .collect(),
        }
    }

    fn spec() -> ModelSpec {
        ModelSpec::mlp(5, 3, 3, 8, 4)
    }

    #[test]
    fn epsilon_cases() {
        let p = params_from(vec![Matrix::from_rows(&[vec![0.001, 0.5], vec![-0.0005, 2.0]]).unwrap()]);
        let r = epsilon_sparsity(&p, 0.01);
        assert_eq!((r.small_params, r.total_params, r.s_epsilon), (2, 4, 0.5));
        let z = params_from(vec![Matrix::zeros(3, 3)]);
        assert_eq!(epsilon_sparsity(&z, 1e-9).s_epsilon, 1.0);
        // strict inequality
        let p = params_from(vec![Matrix::from_rows(&[vec![0.01]]).unwrap()]);
        assert_eq!(epsilon_sparsity(&p, 0.01).small_params, 0);
    }

    #[test]
    fn epsilon_at_median_is_half() {
        let p = init_params(&spec(), &mut Rng::new(1)).unwrap();
        let mut mags: Vec<f64> = p.weights().map(f64::abs).collect();
        mags.sort_by(f64::total_cmp);
        let median = mags[mags.len() / 2];
        let s = epsilon_sparsity(&p, median).s_epsilon;
        let w = mags.len() as f64;
        assert!((s - 0.5).abs() <= 1.0 / w, "{s}");
    }

    #[test]
    fn magnitude_hand_case() {
        let p = params_from(vec![Matrix::from_rows(&[vec![1.0, -2.0, 3.0, -4.0]]).unwrap()]);
        let r = magnitude_prune(&p, 0.5).unwrap();
        assert_eq!(r.mask().layers[0].as_slice(), &[0.0, 0.0, 1.0, 1.0]);
        let r = magnitude_prune(&p, 0.0).unwrap();
        assert_eq!(r.mask().zeros(), 0);
        assert!(magnitude_prune(&p, 1.0).is_err());
    }

    #[test]
    fn magnitude_matches_sort_oracle() {
        let p = init_params(&spec(), &mut Rng::new(2)).unwrap();
        let r = magnitude_prune(&p, 0.7).unwrap();
        let mut all: Vec<(f64, usize)> = p.weights().map(f64::abs).enumerate().map(|(i, v)| (v, i)).collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let k = (0.7 * all.len() as f64).floor() as usize;
        let mut expected: Vec<usize> = all[..k].iter().map(|x| x.1).collect();
        expected.sort_unstable();
        let flat: Vec<f64> = r.mask().layers.iter().flat_map(|m| m.as_slice().to_vec()).collect();
        let got: Vec<usize> = flat.iter().enumerate().filter(|(_, &v)| v == 0.0).map(|(i, _)| i).collect();
        assert_eq!(got, expected);
        assert_eq!(r.removed_per_layer.iter().sum::<usize>(), k);
    }

    #[test]
    fn pruning_is_idempotent_with_mask() {
        let mut p = init_params(&spec(), &mut Rng::new(3)).unwrap();
        let first = magnitude_prune(&p, 0.6).unwrap();
        first.mask().apply(&mut p);
        let second = magnitude_prune_masked(&p, first.mask(), 0.6).unwrap();
        assert_eq!(second.mask(), first.mask());
        assert!(second.removed_per_layer.iter().all(|&c| c == 0));
    }

    #[test]
    fn l1_hand_case_and_downstream() {
        let p = params_from(vec![
            Matrix::from_rows(&[vec![1.0, 1.0], vec![3.0, 3.0]]).unwrap(),
            Matrix::from_rows(&[vec![5.0, 6.0]]).unwrap(),
        ]);
        let r = l1_filter_prune(&p, 0, 0.5).unwrap();
        assert_eq!(r.mask().layers[0].as_slice(), &[0.0, 0.0, 1.0, 1.0]);
        assert_eq!(r.mask().layers[1].as_slice(), &[0.0, 1.0]);
        assert_eq!(l1_filter_prune(&p, 0, 0.0).unwrap().mask().zeros(), 0);
        assert!(l1_filter_prune(&p, 1, 0.5).is_err());
    }

    #[test]
    fn l1_matches_sort_oracle() {
        let p = init_params(&spec(), &mut Rng::new(4)).unwrap();
        let r = l1_filter_prune(&p, 1, 0.5).unwrap();
        let w = &p.layers[1].weight;
        let mut norms: Vec<(f64, usize)> =
            (0..w.rows()).map(|i| (w.row(i).iter().map(|v| v.abs()).sum(), i)).collect();
        norms.sort_by(|a, b| a.0.total_cmp(&b.0));
        let removed: Vec<usize> = norms[..4].iter().map(|x| x.1).collect();
        for i in 0..w.rows() {
            let dead = r.mask().layers[1].row(i).iter().all(|&v| v == 0.0);
            assert_eq!(dead, removed.contains(&i));
        }
    }

    #[test]
    fn knapsack_prune_keeps_within_budget() {
        let p = init_params(&spec(), &mut Rng::new(5)).unwrap();
        let r = knapsack_prune_hidden(&p, 0.5).unwrap();
        for l in 0..3 {
            let alive_units = (0..8).filter(|&u| r.mask().layers[l].row(u).iter().any(|&v| v != 0.0)).count();
            assert_eq!(alive_units, 4);
        }
    }

    #[test]
    fn random_mask_counts() {
        let s = spec();
        let w = s.weight_count();
        assert_eq!(random_sparse_mask(&s, 0.0, &mut Rng::new(6)).unwrap().zeros(), 0);
        let m = random_sparse_mask(&s, 0.95, &mut Rng::new(6)).unwrap();
        assert_eq!(m.zeros(), (0.95 * w as f64).floor() as usize);
        assert_eq!(m, random_sparse_mask(&s, 0.95, &mut Rng::new(6)).unwrap());
        assert_ne!(m, random_sparse_mask(&s, 0.95, &mut Rng::new(7)).unwrap());
        let lw = random_sparse_mask_layerwise(&s, 0.5, &mut Rng::new(8)).unwrap();
        for (z, shape) in lw.layer_zeros().iter().zip(s.layer_shapes()) {
            assert_eq!(*z, shape.0 * shape.1 / 2);
        }
    }

    #[test]
    fn zeroing_deviation_shrinks_with_epsilon() {
        let p = init_params(&spec(), &mut Rng::new(10)).unwrap();
        let x = Rng::new(11).gaussian_matrix(16, 5);
        assert_eq!(epsilon_zeroing_deviation(&p, None, &x, 0.0).unwrap(), 0.0);
        let d: Vec<f64> = [1e-6, 1e-4, 1e-2, 1e-1]
            .iter()
            .map(|&e| epsilon_zeroing_deviation(&p, None, &x, e).unwrap())
            .collect();
        assert!(d.windows(2).all(|w| w[0] <= w[1]), "{d:?}");
        assert!(d[0] < 1e-3);
    }

    #[test]
    fn prune_result_json() {
        let p = init_params(&spec(), &mut Rng::new(9)).unwrap();
        let mut r = magnitude_prune(&p, 0.3).unwrap();
        r.config_hash = "deadbeef".into();
        let v: serde_json::Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(v["method"], "magnitude");
        assert_eq!(v["config_hash"], "deadbeef");
        assert_eq!(v["removed_per_layer"].as_array().unwrap().len(), 4);
    }

    proptest::proptest! {
        #[test]
        fn epsilon_sparsity_is_monotone(seed in 0u64..200, a in 1e-4f64..1.0, b in 1e-4f64..1.0) {
            let p = init_params(&spec(), &mut Rng::new(seed)).unwrap();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            proptest::prop_assert!(epsilon_sparsity(&p, lo).s_epsilon <= epsilon_sparsity(&p, hi).s_epsilon);
        }
    }
}
