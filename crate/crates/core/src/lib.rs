//! Sparse neural-network training with CKA-based sparsity regularization.
//!
//! The crate is organised bottom-up:
//!
//! * [`linalg`]: dense matrices, Gram centering, Cholesky log-determinants, seeded RNG.
//! * [`autodiff`]: a reverse-mode tape with the primitives the regularizer needs.
//! * [`similarity`]: linear HSIC and CKA, pairwise heatmaps.
//! * [`regularizer`]: the CKA-SR and AugCKA-SR losses, plain and taped.
//! * [`model`] and [`train`]: masked MLPs and SGD training.
//! * [`sparsify`]: ε-sparsity, magnitude/filter/knapsack/random pruning, IMP, token scoring.
//! * [`diagnostics`]: Gaussian MI, the CKA/MI association, weight histograms.
//! * [`data`]: synthetic generators, batching, IDX files.
//! * [`cli`]: the experiment runner behind the `ckasr` binary.

pub mod autodiff;
pub mod cli;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod linalg;
pub mod model;
pub mod regularizer;
pub mod similarity;
pub mod sparsify;
pub mod train;

pub use error::{Error, Result};
pub use linalg::{Matrix, Rng};
pub use model::{ModelSpec, Params, SparseMask};
pub use regularizer::{CkaSrConfig, StageCapture};
pub use similarity::{linear_cka, linear_hsic, FeatureMap};
pub use train::{train, TrainConfig};
