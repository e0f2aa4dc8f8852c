//! Flow-enriched unimodal posteriors: masked autoregressive blocks on top of
//! a conditional Gaussian base, and the second training step.

pub mod made;
pub mod posterior;
pub mod stack;

pub use made::MadeBlock;
pub use posterior::{ljm_loss, ljm_loss_and_grad, train_step2, ConditioningMode, UnimodalPosteriorSet};
pub use stack::{Conditioned, FlowArch, FlowStack, FlowVars};
