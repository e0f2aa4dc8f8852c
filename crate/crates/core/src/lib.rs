//! Joint multimodal variational autoencoders with flow-enriched unimodal
//! posteriors, DCCA shared-information embeddings and product-of-experts
//! subset conditioning sampled by Hamiltonian Monte Carlo.

pub mod data;
pub mod dcca;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod flow;
pub mod joint;
pub mod linalg;
pub mod nn;
pub mod poe_hmc;
pub mod store;

pub use error::{Error, Result};
