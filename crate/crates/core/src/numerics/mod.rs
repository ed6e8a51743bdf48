//! From-scratch numerical core: dense and sparse linear algebra, the
//! two-layer GCN / MLP models with manual gradients, losses, and Adam.

pub mod adam;
pub mod checkpoint;
pub mod dense;
pub mod gradcheck;
pub mod loss;
pub mod model;
pub mod sparse;

pub use adam::{adam_step, AdamState};
pub use dense::DenseMatrix;
pub use gradcheck::{finite_diff_check, FdReport, DEFAULT_STEP};
pub use loss::cross_entropy;
pub use model::{model_backward, model_forward, Arch, ForwardCache, Gradients, Layer, ModelParams};
pub use sparse::SparseAdjacency;
