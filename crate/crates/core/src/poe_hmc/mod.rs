//! Product-of-experts subset posteriors and a Hamiltonian Monte Carlo
//! sampler for them.

pub mod hmc;
pub mod target;

pub use hmc::{
    conditional_generate_subset, hamiltonian, hmc_sample, leapfrog, split_r_hat, subset_latents, HmcChainState,
    HmcConfig, HmcDiagnostics, HmcOutput,
};
pub use target::{poe_log_density, LogDensity, PoeTarget};
