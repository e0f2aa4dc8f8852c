//! Joint encoder, per-modality decoders and the ELBO (first training step),
//! plus the one-step JMVAE baseline.

pub mod gaussian;
pub mod likelihood;
pub mod model;
pub mod onestep;
pub mod train;

pub use gaussian::{kl_diag_gaussians, DiagGaussian};
pub use likelihood::log_likelihood;
pub use model::{Decoder, EncoderOut, GaussianEncoder, JointArch, JointModel, JointVars};
pub use onestep::{train_jmvae_onestep, OneStepConfig};
pub use train::{elbo, elbo_gradient, elbo_with_noise, train_step1, ElboTerms};
