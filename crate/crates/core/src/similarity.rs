//! Linear HSIC and linear CKA between layer representations.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::autodiff::DEGENERATE_FLOOR;
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};

/// Activations of one layer: `n` examples by `p` flattened features.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    values: Matrix,
    layer_index: usize,
    stage_index: usize,
}

impl FeatureMap {
    pub fn new(values: Matrix, layer_index: usize, stage_index: usize) -> Result<Self> {
        if values.rows() < 2 {
            return Err(Error::invalid(format!(
                "feature map needs at least 2 examples, got {}",
                values.rows()
            )));
        }
        if !values.is_finite() {
            return Err(Error::invalid("feature map has non-finite entries"));
        }
        if stage_index < 1 {
            return Err(Error::invalid("stage indices start at 1"));
        }
        Ok(FeatureMap {
            values,
            layer_index,
            stage_index,
        })
    }

    /// A map with layer 0 of stage 1, for ad-hoc comparisons.
    pub fn from_matrix(values: Matrix) -> Result<Self> {
        Self::new(values, 0, 1)
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn examples(&self) -> usize {
        self.values.rows()
    }

    pub fn layer_index(&self) -> usize {
        self.layer_index
    }

    pub fn stage_index(&self) -> usize {
        self.stage_index
    }
}

/// Centered Gram matrix of a feature map together with its self-HSIC.
#[derive(Clone, Debug)]
pub(crate) struct CenteredGram {
    pub(crate) centered: Matrix,
    pub(crate) self_hsic: f64,
}

impl CenteredGram {
    pub(crate) fn of(values: &Matrix) -> Self {
        let centered = linalg::center_square(&linalg::gram(values));
        let self_hsic = hsic_of_centered(&centered, &centered);
        CenteredGram {
            centered,
            self_hsic,
        }
    }

    pub(crate) fn is_degenerate(&self) -> bool {
        !(self.self_hsic > DEGENERATE_FLOOR)
    }

    pub(crate) fn cka(&self, other: &CenteredGram) -> f64 {
        hsic_of_centered(&self.centered, &other.centered) / (self.self_hsic * other.self_hsic).sqrt()
    }
}

fn hsic_of_centered(a: &Matrix, b: &Matrix) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y).sum()
}

fn check_examples(x: &FeatureMap, y: &FeatureMap) -> Result<()> {
    if x.examples() != y.examples() {
        return Err(Error::shape(
            "linear_hsic",
            format!("{} vs {} examples", x.examples(), y.examples()),
        ));
    }
    Ok(())
}

/// `Σᵢⱼ [H·XXᵀ·H]ᵢⱼ [H·YYᵀ·H]ᵢⱼ`.
pub fn linear_hsic(x: &FeatureMap, y: &FeatureMap) -> Result<f64> {
    check_examples(x, y)?;
    let cx = linalg::center_square(&linalg::gram(&x.values));
    let cy = linalg::center_square(&linalg::gram(&y.values));
    Ok(hsic_of_centered(&cx, &cy))
}

fn degenerate(which: &str, map: &FeatureMap) -> Error {
    Error::Degenerate(format!(
        "{which} argument (stage {}, layer {}) has zero variance",
        map.stage_index, map.layer_index
    ))
}

/// Linear CKA, `hsic(x, y) / sqrt(hsic(x, x) · hsic(y, y))`.
pub fn linear_cka(x: &FeatureMap, y: &FeatureMap) -> Result<f64> {
    check_examples(x, y)?;
    let gx = CenteredGram::of(&x.values);
    if gx.is_degenerate() {
        return Err(degenerate("first", x));
    }
    let gy = CenteredGram::of(&y.values);
    if gy.is_degenerate() {
        return Err(degenerate("second", y));
    }
    Ok(gx.cka(&gy))
}

fn center_columns(x: &Matrix) -> Matrix {
    let n = x.rows() as f64;
    let means: Vec<f64> = (0..x.cols())
        .map(|j| (0..x.rows()).map(|i| x.get(i, j)).sum::<f64>() / n)
        .collect();
    Matrix::from_fn(x.rows(), x.cols(), |i, j| x.get(i, j) - means[j])
}

/// Linear CKA through feature covariances,
/// `‖Ŷᵀ X̂‖²_F / (‖X̂ᵀ X̂‖_F ‖Ŷᵀ Ŷ‖_F)` on column-centered inputs.
///
/// Equal to [`linear_cka`] in exact arithmetic; cheaper when the example
/// count greatly exceeds the feature count.
pub fn linear_cka_features(x: &FeatureMap, y: &FeatureMap) -> Result<f64> {
    check_examples(x, y)?;
    let xc = center_columns(&x.values);
    let yc = center_columns(&y.values);
    let xx = linalg::frobenius_norm_sq(&linalg::matmul(&xc.transpose(), &xc)?);
    if !(xx > DEGENERATE_FLOOR) {
        return Err(degenerate("first", x));
    }
    let yy = linalg::frobenius_norm_sq(&linalg::matmul(&yc.transpose(), &yc)?);
    if !(yy > DEGENERATE_FLOOR) {
        return Err(degenerate("second", y));
    }
    let xy = linalg::frobenius_norm_sq(&linalg::matmul(&yc.transpose(), &xc)?);
    Ok(xy / (xx * yy).sqrt())
}

/// Symmetric matrix of pairwise CKA values between layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CkaHeatmap {
    values: Matrix,
}

impl CkaHeatmap {
    pub fn size(&self) -> usize {
        self.values.rows()
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values.get(i, j)
    }

    /// Mean of the strictly-upper-triangular entries.
    pub fn mean_off_diagonal(&self) -> f64 {
        let n = self.size();
        let mut sum = 0.0;
        let mut count = 0usize;
        for i in 0..n {
            for j in i + 1..n {
                sum += self.values.get(i, j);
                count += 1;
            }
        }
        if count == 0 {
            0.0
        } else {
            sum / count as f64
        }
    }

    /// Header `layer_0,...,layer_N`, then one `%.6f` row per layer.
    pub fn to_csv(&self) -> String {
        let n = self.size();
        let header: Vec<String> = (0..n).map(|i| format!("layer_{i}")).collect();
        let mut out = header.join(",");
        out.push('\n');
        for i in 0..n {
            let row: Vec<String> = self.values.row(i).iter().map(|v| format!("{v:.6}")).collect();
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }
}

/// CKA between every pair of feature maps; the diagonal is exactly 1.
pub fn pairwise_cka(features: &[FeatureMap]) -> Result<CkaHeatmap> {
    if features.len() < 2 {
        return Err(Error::invalid("pairwise CKA needs at least 2 feature maps"));
    }
    let n = features[0].examples();
    if let Some(bad) = features.iter().find(|f| f.examples() != n) {
        return Err(Error::shape(
            "pairwise_cka",
            format!(
                "layer {} has {} examples, expected {n}",
                bad.layer_index,
                bad.examples()
            ),
        ));
    }
    let grams: Vec<CenteredGram> = features.iter().map(|f| CenteredGram::of(&f.values)).collect();
    for (g, f) in grams.iter().zip(features) {
        if g.is_degenerate() {
            return Err(Error::Degenerate(format!(
                "stage {} layer {} has zero variance",
                f.stage_index, f.layer_index
            )));
        }
    }
    let m = features.len();
    let mut values = Matrix::identity(m);
    for i in 0..m {
        for j in i + 1..m {
            let c = grams[i].cka(&grams[j]);
            values.set(i, j, c);
            values.set(j, i, c);
        }
    }
    Ok(CkaHeatmap { values })
}
