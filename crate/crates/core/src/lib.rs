//! Channel pruning for convolutional networks.
//!
//! Channels of a conv layer are ranked by how much they contribute to a
//! row-sparse self-reconstruction of sampled activations (`D ≈ DU`), the
//! lowest-ranked ones are removed, and the next layer's kernel is repaired
//! by folding in the least-squares reconstruction of the removed channels.
//! Cost reports give exact parameter and multiplication counts.

pub mod archive;
pub mod cifar;
pub mod cost;
pub mod datamatrix;
pub mod error;
pub mod linalg;
pub mod manifest;
pub mod model;
pub mod nin;
pub mod preprocess;
pub mod prune;
pub mod select;
pub mod tensor;

pub use datamatrix::{build_data_matrix, DataMatrix};
pub use error::{Error, Result};
pub use manifest::{load_model, save_model};
pub use model::{eval_classifier, Conv, Layer, LayerKind, ModelGraph};
pub use prune::{fit_reconstruction, fold_upper_kernel, prune_layer, select_channels, slice_kernel, Mode, PruneResult, PruneSpec};
pub use select::{importance_report, solve_group_sparse, ImportanceReport, ReconstructionCoefficients, SolverConfig};
pub use tensor::{Matrix, Tensor};
