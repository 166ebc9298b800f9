//! Datasets: seeded synthetic generators, an IDX loader, standardization
//! and shuffled mini-batches.

use std::f64::consts::PI;
use std::path::Path;

use thiserror::Error;

use crate::error::{Error as CrateError, Result};
use crate::linalg::{Matrix, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, num_classes: usize, split: Split) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(CrateError::shape(
                "dataset",
                format!("{} rows but {} labels", features.rows(), labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(CrateError::invalid(format!("label {bad} >= {num_classes} classes")));
        }
        if labels.len() < num_classes {
            return Err(CrateError::invalid("fewer examples than classes"));
        }
        Ok(Dataset {
            features,
            labels,
            num_classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Shuffles and cuts off the last `eval_fraction` as the evaluation split.
    pub fn split(self, eval_fraction: f64, rng: &mut Rng) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&eval_fraction) {
            return Err(CrateError::invalid("eval fraction must be in [0, 1)"));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        rng.shuffle(&mut order);
        let n_eval = ((self.len() as f64) * eval_fraction).round() as usize;
        let (eval_idx, train_idx) = order.split_at(n_eval);
        let pick = |idx: &[usize], split| Dataset {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            split,
        };
        Ok((pick(train_idx, Split::Train), pick(eval_idx, Split::Eval)))
    }
}

/// Gaussian clusters around seeded random centers in `[-4, 4]^dim`.
pub fn gen_blobs(num_classes: usize, per_class: usize, dim: usize, spread: f64, rng: &mut Rng) -> Result<Dataset> {
    if num_classes == 0 || per_class == 0 || dim == 0 {
        return Err(CrateError::invalid("blob counts must be >= 1"));
    }
    if !(spread > 0.0) {
        return Err(CrateError::invalid("spread must be > 0"));
    }
    let centers = rng.uniform_matrix(num_classes, dim, 4.0);
    let n = num_classes * per_class;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for k in 0..num_classes {
        for _ in 0..per_class {
            for j in 0..dim {
                data.push(centers.get(k, j) + spread * rng.normal());
            }
            labels.push(k);
        }
    }
    Dataset::new(Matrix::from_vec(n, dim, data)?, labels, num_classes, Split::Train)
}

/// Point on arm `class` of an interleaved spiral at radius `r ∈ (0, 1]`.
pub fn spiral_point(class: usize, num_classes: usize, r: f64) -> (f64, f64) {
    let theta = 2.0 * PI * class as f64 / num_classes as f64 + 4.0 * r;
    (r * theta.cos(), r * theta.sin())
}

/// Interleaved 2-D spirals, one arm per class, with Gaussian coordinate noise.
pub fn gen_spirals(num_classes: usize, per_class: usize, noise: f64, rng: &mut Rng) -> Result<Dataset> {
    if num_classes == 0 || per_class == 0 {
        return Err(CrateError::invalid("spiral counts must be >= 1"));
    }
    if !(noise >= 0.0) {
        return Err(CrateError::invalid("noise must be >= 0"));
    }
    let n = num_classes * per_class;
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for k in 0..num_classes {
        for t in 0..per_class {
            let r = (t + 1) as f64 / per_class as f64;
            let (x, y) = spiral_point(k, num_classes, r);
            data.push(x + noise * rng.normal());
            data.push(y + noise * rng.normal());
            labels.push(k);
        }
    }
    Dataset::new(Matrix::from_vec(n, 2, data)?, labels, num_classes, Split::Train)
}

/// Per-column z-score parameters fitted on a training split.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    means: Vec<f64>,
    stds: Vec<f64>,
}

impl Standardizer {
    pub fn fit(features: &Matrix) -> Self {
        let n = features.rows() as f64;
        let d = features.cols();
        let means: Vec<f64> = (0..d)
            .map(|j| (0..features.rows()).map(|i| features.get(i, j)).sum::<f64>() / n)
            .collect();
        let stds = (0..d)
            .map(|j| {
                let var = (0..features.rows())
                    .map(|i| (features.get(i, j) - means[j]).powi(2))
                    .sum::<f64>()
                    / n;
                // constant columns are only shifted
                if var > 1e-24 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { means, stds }
    }

    pub fn apply(&self, features: &Matrix) -> Matrix {
        Matrix::from_fn(features.rows(), features.cols(), |i, j| {
            (features.get(i, j) - self.means[j]) / self.stds[j]
        })
    }

    pub fn apply_dataset(&self, ds: &Dataset) -> Dataset {
        Dataset {
            features: self.apply(&ds.features),
            ..ds.clone()
        }
    }
}

/// Shuffled mini-batches for one epoch; the order depends only on `(seed, epoch)`.
#[derive(Debug)]
pub struct BatchIterator<'a> {
    dataset: &'a Dataset,
    batch_size: usize,
    order: Vec<usize>,
    position: usize,
}

impl<'a> BatchIterator<'a> {
    pub fn new(dataset: &'a Dataset, batch_size: usize, seed: u64, epoch: usize) -> Self {
        assert!(batch_size > 0, "batch size must be positive");
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        Rng::new(seed).fork(0x5eed_0000 + epoch as u64).shuffle(&mut order);
        BatchIterator {
            dataset,
            batch_size,
            order,
            position: 0,
        }
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }
}

/// One mini-batch: features, labels and the dataset indices they came from.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub indices: Vec<usize>,
}

impl Iterator for BatchIterator<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.position >= self.order.len() {
            return None;
        }
        let end = (self.position + self.batch_size).min(self.order.len());
        let indices = self.order[self.position..end].to_vec();
        self.position = end;
        Some(Batch {
            features: self.dataset.features.select_rows(&indices),
            labels: indices.iter().map(|&i| self.dataset.labels[i]).collect(),
            indices,
        })
    }
}

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum IdxError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("bad IDX magic: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { expected: u32, found: u32 },
    #[error("truncated IDX data: need {expected} bytes, have {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32, IdxError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(IdxError::Truncated {
            expected: at + 4,
            actual: bytes.len(),
        })
}

/// Parses an unsigned-byte image file: magic, count, rows, cols, pixels.
/// Returns `(count, rows * cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, &[u8]), IdxError> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(IdxError::BadMagic {
            expected: IDX_IMAGES_MAGIC,
            found: magic,
        });
    }
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let need = 16 + count * rows * cols;
    if bytes.len() < need {
        return Err(IdxError::Truncated {
            expected: need,
            actual: bytes.len(),
        });
    }
    Ok((count, rows * cols, &bytes[16..need]))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8], IdxError> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(IdxError::BadMagic {
            expected: IDX_LABELS_MAGIC,
            found: magic,
        });
    }
    let count = be_u32(bytes, 4)? as usize;
    let need = 8 + count;
    if bytes.len() < need {
        return Err(IdxError::Truncated {
            expected: need,
            actual: bytes.len(),
        });
    }
    Ok(&bytes[8..need])
}

/// Images scaled to `[0, 1]` and flattened to one row per image.
pub fn dataset_from_idx(image_bytes: &[u8], label_bytes: &[u8]) -> Result<Dataset> {
    let (count, pixels_per_image, pixels) = parse_idx_images(image_bytes)?;
    let labels = parse_idx_labels(label_bytes)?;
    if labels.len() != count {
        return Err(IdxError::CountMismatch {
            images: count,
            labels: labels.len(),
        }
        .into());
    }
    let features = Matrix::from_vec(
        count,
        pixels_per_image,
        pixels.iter().map(|&p| p as f64 / 255.0).collect(),
    )?;
    let labels: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    Dataset::new(features, labels, num_classes, Split::Train)
}

pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let read = |p: &Path| {
        std::fs::read(p).map_err(|source| IdxError::Io {
            path: p.display().to_string(),
            source,
        })
    };
    let images = read(images_path.as_ref())?;
    let labels = read(labels_path.as_ref())?;
    dataset_from_idx(&images, &labels)
}
