//! Masked multi-stage MLPs with per-layer feature capture.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Rng};
use crate::regularizer::{StageCapture, TapedStage};
use crate::similarity::FeatureMap;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    #[default]
    Relu,
}

/// Architecture: hidden layers grouped into stages, followed by a linear head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub num_classes: usize,
    /// Hidden layer widths, one list per stage.
    pub stages: Vec<Vec<usize>>,
    pub activation: Activation,
    pub seed: u64,
}

impl ModelSpec {
    /// A single stage of `depth` hidden layers of equal `width`.
    pub fn mlp(input_dim: usize, num_classes: usize, depth: usize, width: usize, seed: u64) -> Self {
        ModelSpec {
            input_dim,
            num_classes,
            stages: vec![vec![width; depth]],
            activation: Activation::Relu,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::invalid("model needs at least one stage"));
        }
        if self.stages.iter().any(Vec::is_empty) {
            return Err(Error::invalid("every stage needs at least one layer"));
        }
        if self.input_dim == 0 || self.num_classes == 0 || self.stages.iter().flatten().any(|&w| w == 0) {
            return Err(Error::invalid("all widths must be >= 1"));
        }
        Ok(())
    }

    pub fn hidden_layers(&self) -> usize {
        self.stages.iter().map(Vec::len).sum()
    }

    /// `(out, in)` of every weight matrix, head last.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::new();
        let mut fan_in = self.input_dim;
        for &w in self.stages.iter().flatten() {
            shapes.push((w, fan_in));
            fan_in = w;
        }
        shapes.push((self.num_classes, fan_in));
        shapes
    }

    /// Stage (1-based) of each layer; `None` for the head.
    pub fn stage_of_layers(&self) -> Vec<Option<usize>> {
        let mut out: Vec<Option<usize>> = self
            .stages
            .iter()
            .enumerate()
            .flat_map(|(s, layers)| std::iter::repeat_n(Some(s + 1), layers.len()))
            .collect();
        out.push(None);
        out
    }

    pub fn weight_count(&self) -> usize {
        self.layer_shapes().iter().map(|(o, i)| o * i).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `out × in`.
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub stage: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub layers: Vec<Layer>,
}

impl Params {
    pub fn weight_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len()).sum()
    }

    /// All weight entries, layer by layer in row-major order.
    pub fn weights(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers.iter().flat_map(|l| l.weight.as_slice().iter().copied())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.is_finite() && l.bias.iter().all(|b| b.is_finite()))
    }

    /// Copy with every weight of magnitude below `epsilon` set to zero.
    pub fn zero_below(&self, epsilon: f64) -> Params {
        let mut out = self.clone();
        for l in &mut out.layers {
            for w in l.weight.as_mut_slice() {
                if w.abs() < epsilon {
                    *w = 0.0;
                }
            }
        }
        out
    }

    pub fn check_spec(&self, spec: &ModelSpec) -> Result<()> {
        let shapes = spec.layer_shapes();
        if shapes.len() != self.layers.len()
            || shapes
                .iter()
                .zip(&self.layers)
                .any(|(&s, l)| l.weight.shape() != s || l.bias.len() != s.0)
        {
            return Err(Error::shape("params", "parameters do not match the model spec"));
        }
        Ok(())
    }
}

/// Kaiming-uniform weights with bound `sqrt(6 / fan_in)`; zero biases.
pub fn init_params(spec: &ModelSpec, rng: &mut Rng) -> Result<Params> {
    spec.validate()?;
    let layers = spec
        .layer_shapes()
        .into_iter()
        .zip(spec.stage_of_layers())
        .map(|((out, inp), stage)| Layer {
            weight: rng.uniform_matrix(out, inp, (6.0 / inp as f64).sqrt()),
            bias: vec![0.0; out],
            stage,
        })
        .collect();
    Ok(Params { layers })
}

/// Binary mask per weight matrix; biases are never masked.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseMask {
    pub layers: Vec<Matrix>,
}

impl SparseMask {
    pub fn dense_for(params: &Params) -> Self {
        SparseMask {
            layers: params
                .layers
                .iter()
                .map(|l| Matrix::filled(l.weight.rows(), l.weight.cols(), 1.0))
                .collect(),
        }
    }

    pub fn dense_for_spec(spec: &ModelSpec) -> Self {
        SparseMask {
            layers: spec
                .layer_shapes()
                .into_iter()
                .map(|(o, i)| Matrix::filled(o, i, 1.0))
                .collect(),
        }
    }

    pub fn total(&self) -> usize {
        self.layers.iter().map(Matrix::len).sum()
    }

    pub fn zeros(&self) -> usize {
        self.layers
            .iter()
            .map(|m| m.as_slice().iter().filter(|&&v| v == 0.0).count())
            .sum()
    }

    pub fn layer_zeros(&self) -> Vec<usize> {
        self.layers
            .iter()
            .map(|m| m.as_slice().iter().filter(|&&v| v == 0.0).count())
            .collect()
    }

    /// Fraction of masked-out weights.
    pub fn sparsity(&self) -> f64 {
        self.zeros() as f64 / self.total() as f64
    }

    pub fn is_binary(&self) -> bool {
        self.layers
            .iter()
            .all(|m| m.as_slice().iter().all(|&v| v == 0.0 || v == 1.0))
    }

    pub fn check_params(&self, params: &Params) -> Result<()> {
        if self.layers.len() != params.layers.len()
            || self.layers.iter().zip(&params.layers).any(|(m, l)| m.shape() != l.weight.shape())
        {
            return Err(Error::shape("mask", "mask is not congruent with the parameters"));
        }
        if !self.is_binary() {
            return Err(Error::invalid("mask entries must be 0 or 1"));
        }
        Ok(())
    }

    /// Zeroes every masked weight in place.
    pub fn apply(&self, params: &mut Params) {
        for (m, l) in self.layers.iter().zip(&mut params.layers) {
            for (w, &keep) in l.weight.as_mut_slice().iter_mut().zip(m.as_slice()) {
                if keep == 0.0 {
                    *w = 0.0;
                }
            }
        }
    }

    /// Elementwise AND of two congruent masks.
    pub fn intersect(&self, other: &SparseMask) -> Result<SparseMask> {
        Ok(SparseMask {
            layers: self
                .layers
                .iter()
                .zip(&other.layers)
                .map(|(a, b)| a.hadamard(b))
                .collect::<Result<_>>()?,
        })
    }

    /// Number of weights masked here but not in `before`.
    pub fn newly_masked(&self, before: &SparseMask) -> Vec<usize> {
        self.layers
            .iter()
            .zip(&before.layers)
            .map(|(a, b)| {
                a.as_slice()
                    .iter()
                    .zip(b.as_slice())
                    .filter(|(&x, &y)| x == 0.0 && y != 0.0)
                    .count()
            })
            .collect()
    }
}

fn affine(x: &Matrix, weight: &Matrix, bias: &[f64]) -> Result<Matrix> {
    let mut z = linalg::matmul(x, &weight.transpose())?;
    for i in 0..z.rows() {
        for (j, b) in bias.iter().enumerate() {
            z.set(i, j, z.get(i, j) + b);
        }
    }
    Ok(z)
}

fn relu(m: &Matrix) -> Matrix {
    m.map(|v| if v > 0.0 { v } else { 0.0 })
}

fn masked_weight(params: &Params, mask: Option<&SparseMask>, l: usize) -> Result<Matrix> {
    match mask {
        Some(m) => params.layers[l].weight.hadamard(&m.layers[l]),
        None => Ok(params.layers[l].weight.clone()),
    }
}

/// Plain forward pass returning logits and the post-activation output of
/// every hidden layer, grouped by stage with each stage's input as layer 0.
pub fn forward_capture(params: &Params, mask: Option<&SparseMask>, x: &Matrix) -> Result<(Matrix, Vec<StageCapture>)> {
    if let Some(m) = mask {
        m.check_params(params)?;
    }
    let first = &params.layers[0].weight;
    if x.cols() != first.cols() {
        return Err(Error::shape(
            "forward",
            format!("input has {} columns, model expects {}", x.cols(), first.cols()),
        ));
    }
    let capture = x.rows() >= 2;
    let mut stages: Vec<StageCapture> = Vec::new();
    let mut h = x.clone();
    let mut current: Option<(usize, Vec<FeatureMap>)> = None;
    let last = params.layers.len() - 1;
    for (l, layer) in params.layers.iter().enumerate() {
        let w = masked_weight(params, mask, l)?;
        let z = affine(&h, &w, &layer.bias)?;
        if l == last {
            if let Some((s, f)) = current.take() {
                stages.push(StageCapture::new(s, f)?);
            }
            return Ok((z, stages));
        }
        let stage = layer.stage.expect("hidden layers belong to a stage");
        if current.as_ref().is_none_or(|(s, _)| *s != stage) {
            if let Some((s, f)) = current.take() {
                stages.push(StageCapture::new(s, f)?);
            }
            let input = if capture { vec![FeatureMap::new(h.clone(), 0, stage)?] } else { Vec::new() };
            current = Some((stage, input));
        }
        h = relu(&z);
        if capture {
            let (s, f) = current.as_mut().expect("stage open");
            let idx = f.len();
            f.push(FeatureMap::new(h.clone(), idx, *s)?);
        }
    }
    unreachable!("params always end with a head layer")
}

pub fn predict(params: &Params, mask: Option<&SparseMask>, x: &Matrix) -> Result<Vec<usize>> {
    let (logits, _) = forward_capture(params, mask, x)?;
    Ok((0..logits.rows())
        .map(|i| {
            logits
                .row(i)
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (j, &v)| if v > best.1 { (j, v) } else { best })
                .0
        })
        .collect())
}

pub fn accuracy(params: &Params, mask: Option<&SparseMask>, x: &Matrix, labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Ok(0.0);
    }
    let pred = predict(params, mask, x)?;
    Ok(pred.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / labels.len() as f64)
}

fn check_labels(labels: &[usize], classes: usize, rows: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::shape("cross_entropy", format!("{rows} rows but {} labels", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::invalid(format!("label {bad} out of range for {classes} classes")));
    }
    Ok(())
}

/// Mean of `−log softmax(logits)[label]` over examples.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<f64> {
    check_labels(labels, logits.cols(), logits.rows())?;
    let ls = crate::autodiff::log_softmax_rows(logits);
    Ok(-labels.iter().enumerate().map(|(i, &l)| ls.get(i, l)).sum::<f64>() / labels.len() as f64)
}

/// Taped cross-entropy.
pub fn record_cross_entropy(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let (rows, cols) = logits.shape();
    check_labels(labels, cols, rows)?;
    let mut onehot = Matrix::zeros(rows, cols);
    for (i, &l) in labels.iter().enumerate() {
        onehot.set(i, l, 1.0);
    }
    let ls = tape.log_softmax(logits);
    let oh = tape.constant(onehot);
    let picked = tape.mul(ls, oh)?;
    let s = tape.sum_all(picked);
    Ok(tape.scale(s, -1.0 / rows as f64))
}

/// Parameter leaves of one taped step.
#[derive(Clone, Debug)]
pub struct ParamVars {
    pub weights: Vec<Var>,
    pub biases: Vec<Var>,
}

impl ParamVars {
    pub fn record(tape: &mut Tape, params: &Params) -> Self {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in &params.layers {
            weights.push(tape.leaf(l.weight.clone()));
            biases.push(tape.leaf(Matrix::from_raw(1, l.bias.len(), l.bias.clone())));
        }
        ParamVars { weights, biases }
    }
}

/// Taped forward pass; mirrors [`forward_capture`].
pub fn record_forward(
    tape: &mut Tape,
    params: &Params,
    vars: &ParamVars,
    mask: Option<&SparseMask>,
    x: &Matrix,
) -> Result<(Var, Vec<TapedStage>)> {
    let n = x.rows();
    let ones = tape.constant(Matrix::filled(n, 1, 1.0));
    let mut h = tape.constant(x.clone());
    let mut stages: Vec<TapedStage> = Vec::new();
    let last = params.layers.len() - 1;
    for (l, layer) in params.layers.iter().enumerate() {
        let mut w = vars.weights[l];
        if let Some(m) = mask {
            let mv = tape.constant(m.layers[l].clone());
            w = tape.mul(w, mv)?;
        }
        let wt = tape.transpose(w);
        let xw = tape.matmul(h, wt)?;
        let b = tape.matmul(ones, vars.biases[l])?;
        let z = tape.add(xw, b)?;
        if l == last {
            return Ok((z, stages));
        }
        let stage = layer.stage.expect("hidden layers belong to a stage");
        if stages.last().is_none_or(|s| s.stage_index != stage) {
            stages.push(TapedStage {
                stage_index: stage,
                layers: vec![(0, h)],
            });
        }
        h = tape.relu(z);
        let open = stages.last_mut().expect("stage open");
        let idx = open.layers.len();
        open.layers.push((idx, h));
    }
    unreachable!("params always end with a head layer")
}

/// Everything needed to resume or evaluate a trained network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub spec: ModelSpec,
    pub params: Params,
    pub mask: Option<SparseMask>,
    pub config_hash: String,
}

pub const CHECKPOINT_FORMAT: &str = "ckasr-checkpoint-v1";

impl Checkpoint {
    pub fn new(spec: ModelSpec, params: Params, mask: Option<SparseMask>, config_hash: impl Into<String>) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            spec,
            params,
            mask,
            config_hash: config_hash.into(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Parse(format!("unknown checkpoint format {:?}", ck.format)));
        }
        ck.params.check_spec(&ck.spec)?;
        if let Some(m) = &ck.mask {
            m.check_params(&ck.params)?;
        }
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;

    fn spec() -> ModelSpec {
        ModelSpec {
            input_dim: 3,
            num_classes: 4,
            stages: vec![vec![5, 6], vec![4]],
            activation: Activation::Relu,
            seed: 11,
        }
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let s = spec();
        let a = init_params(&s, &mut Rng::new(1)).unwrap();
        let b = init_params(&s, &mut Rng::new(1)).unwrap();
        assert_eq!(a, b);
        for l in &a.layers {
            let bound = (6.0 / l.weight.cols() as f64).sqrt();
            assert!(l.weight.max_abs() <= bound);
            assert!(l.bias.iter().all(|&b| b == 0.0));
        }
        assert_eq!(a.weight_count(), s.weight_count());
    }

    #[test]
    fn init_mean_is_centered() {
        let s = ModelSpec::mlp(100, 2, 1, 100, 0);
        let p = init_params(&s, &mut Rng::new(2)).unwrap();
        let w: Vec<f64> = p.layers[0].weight.as_slice().to_vec();
        let n = w.len() as f64;
        let mean = w.iter().sum::<f64>() / n;
        let bound = (6.0f64 / 100.0).sqrt();
        let sigma = bound / 3f64.sqrt() / n.sqrt();
        assert!(mean.abs() < 3.0 * sigma, "mean {mean}");
    }

    #[test]
    fn zero_params_give_zero_outputs() {
        let s = spec();
        let mut p = init_params(&s, &mut Rng::new(3)).unwrap();
        for l in &mut p.layers {
            l.weight = Matrix::zeros(l.weight.rows(), l.weight.cols());
        }
        let x = Rng::new(4).gaussian_matrix(5, 3);
        let (logits, caps) = forward_capture(&p, None, &x).unwrap();
        assert_eq!(logits, Matrix::zeros(5, 4));
        assert_eq!(caps.len(), 2);
        for c in &caps {
            for f in &c.features[1..] {
                assert_eq!(f.values().max_abs(), 0.0);
            }
        }
        // stage 2's input is stage 1's last output
        assert_eq!(caps[1].features[0].values(), caps[0].features[2].values());
    }

    #[test]
    fn identity_layer_passes_positive_input() {
        let s = ModelSpec::mlp(3, 2, 1, 3, 0);
        let mut p = init_params(&s, &mut Rng::new(5)).unwrap();
        p.layers[0].weight = Matrix::identity(3);
        let x = Rng::new(6).uniform_matrix(4, 3, 1.0).map(|v| v.abs() + 0.1);
        let (_, caps) = forward_capture(&p, None, &x).unwrap();
        assert_eq!(caps[0].features[1].values(), &x);
    }

    #[test]
    fn masked_forward_matches_dense_oracle() {
        let s = spec();
        let mut rng = Rng::new(7);
        let p = init_params(&s, &mut rng).unwrap();
        let mut mask = SparseMask::dense_for(&p);
        for m in &mut mask.layers {
            for v in m.as_mut_slice() {
                if rng.uniform() < 0.4 {
                    *v = 0.0;
                }
            }
        }
        let x = rng.gaussian_matrix(6, 3);
        let (masked, _) = forward_capture(&p, Some(&mask), &x).unwrap();
        let mut pre = p.clone();
        mask.apply(&mut pre);
        let (dense, _) = forward_capture(&pre, None, &x).unwrap();
        assert!(masked.sub(&dense).unwrap().max_abs() < 1e-14);
    }

    #[test]
    fn forward_shape_error() {
        let p = init_params(&spec(), &mut Rng::new(8)).unwrap();
        assert!(forward_capture(&p, None, &Matrix::zeros(2, 4)).is_err());
    }

    #[test]
    fn cross_entropy_cases() {
        let uniform = Matrix::zeros(3, 5);
        assert!((cross_entropy(&uniform, &[0, 1, 4]).unwrap() - 5f64.ln()).abs() < 1e-15);
        let mut dom = Matrix::zeros(2, 3);
        dom.set(0, 1, 1000.0);
        dom.set(1, 2, 1000.0);
        assert!(cross_entropy(&dom, &[1, 2]).unwrap() < 1e-12);
        assert!(cross_entropy(&uniform, &[0, 1, 5]).is_err());

        let mut rng = Rng::new(9);
        let logits = rng.gaussian_matrix(4, 3).scale(3.0);
        let labels = [2, 0, 1, 1];
        let oracle: f64 = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| {
                let lse = (0..3).map(|j| logits.get(i, j).exp()).sum::<f64>().ln();
                lse - logits.get(i, l)
            })
            .sum::<f64>()
            / 4.0;
        assert!((cross_entropy(&logits, &labels).unwrap() - oracle).abs() < 1e-10);
    }

    #[test]
    fn taped_forward_matches_plain() {
        let s = spec();
        let mut rng = Rng::new(10);
        let p = init_params(&s, &mut rng).unwrap();
        let x = rng.gaussian_matrix(5, 3);
        let mut tape = Tape::new();
        let vars = ParamVars::record(&mut tape, &p);
        let (logits, stages) = record_forward(&mut tape, &p, &vars, None, &x).unwrap();
        let (plain, caps) = forward_capture(&p, None, &x).unwrap();
        assert!(tape.value(logits).sub(&plain).unwrap().max_abs() < 1e-14);
        assert_eq!(stages.len(), caps.len());
        for (ts, c) in stages.iter().zip(&caps) {
            for ((_, v), f) in ts.layers.iter().zip(&c.features) {
                assert!(tape.value(*v).sub(f.values()).unwrap().max_abs() < 1e-14);
            }
        }
    }

    #[test]
    fn taped_cross_entropy_gradient() {
        let mut rng = Rng::new(11);
        let logits = rng.gaussian_matrix(4, 3);
        let err = grad_check(|t, v| record_cross_entropy(t, v, &[0, 2, 1, 1]), &logits, 1e-5).unwrap();
        assert!(err < 1e-6);
    }

    #[test]
    fn checkpoint_round_trip() {
        let s = spec();
        let p = init_params(&s, &mut Rng::new(12)).unwrap();
        let mask = SparseMask::dense_for(&p);
        let ck = Checkpoint::new(s, p, Some(mask), "abcdef12");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
    }
}
