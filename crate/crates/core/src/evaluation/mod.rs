//! Likelihood estimators, classifier-based coherence, FID and the
//! variation-of-information bound.

pub mod classifier;
pub mod coherence;
pub mod fid;
pub mod likelihood;
pub mod report;

pub use classifier::{train_classifier, ClassifierModel, DEFAULT_ACCURACY_FLOOR};
pub use coherence::{coherence, coherence_of, direction_key, generate_direction, CrossModalGenerator, PipelineGenerator};
pub use fid::{fid, fid_from_moments};
pub use likelihood::{
    cond_ll_from_latents, estimate_cond_ll, estimate_cond_ll_subset, estimate_joint_ll, joint_log_weights,
    vi_bound_check, Estimate, ViBound,
};
pub use report::EvalReport;
