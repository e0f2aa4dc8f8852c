//! Deep canonical correlation analysis between modality-specific encoders.

pub mod cca;
mod model;

pub use cca::{correlation_and_gradient, solve_cca, total_correlation, CcaSolution, CovarianceTriple};
pub use model::{
    dcca_loss, dcca_loss_and_grad, select_embedding_dim, train_dcca, DccaProjectionSet, EmbeddingDimPolicy,
};
