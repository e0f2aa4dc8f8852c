use std::path::Path;

use ndarray::{s, Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::target::{LogDensity, PoeTarget};
use crate::error::{Error, Result};
use crate::joint::gaussian::standard_normal;
use crate::joint::likelihood::sample_observations;
use crate::joint::JointModel;
use crate::store::{self, Manifest};

#[derive(Clone, Debug, PartialEq)]
pub struct HmcConfig {
    pub step_size: f64,
    pub leapfrog_steps: usize,
    pub n_chains: usize,
    pub burn_in: usize,
    pub samples_per_chain: usize,
    pub seed: u64,
    /// Dual-averaging iterations run before burn-in to tune the step size;
    /// zero keeps `step_size` as given.
    pub adapt_steps: usize,
    pub target_accept: f64,
    /// Each post-adaptation transition draws its step size uniformly from
    /// `step_size * [1 - jitter, 1 + jitter]`, which keeps fixed trajectory
    /// lengths from resonating with the target's periods. Zero disables it.
    pub step_jitter: f64,
    /// Transitions per stored sample after burn-in.
    pub thin: usize,
}

impl Default for HmcConfig {
    fn default() -> Self {
        Self {
            step_size: 0.05,
            leapfrog_steps: 10,
            n_chains: 8,
            burn_in: 200,
            samples_per_chain: 250,
            seed: 0,
            adapt_steps: 0,
            target_accept: 0.8,
            step_jitter: 0.0,
            thin: 1,
        }
    }
}

impl HmcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidConfig(format!("step size must be positive, got {}", self.step_size)));
        }
        if self.leapfrog_steps == 0 || self.n_chains == 0 || self.samples_per_chain == 0 || self.thin == 0 {
            return Err(Error::InvalidConfig(
                "leapfrog steps, chains, samples per chain and thinning must be positive".into(),
            ));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::InvalidConfig("target acceptance must lie in (0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.step_jitter) {
            return Err(Error::InvalidConfig(format!("step jitter must lie in [0, 1), got {}", self.step_jitter)));
        }
        Ok(())
    }
}

/// Position and acceptance bookkeeping of one chain.
#[derive(Clone, Debug, PartialEq)]
pub struct HmcChainState {
    pub position: Array1<f64>,
    pub accept_count: usize,
    pub proposal_count: usize,
}

impl HmcChainState {
    pub fn acceptance_rate(&self) -> f64 {
        if self.proposal_count == 0 {
            0.0
        } else {
            self.accept_count as f64 / self.proposal_count as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HmcDiagnostics {
    /// Post-burn-in acceptance rate per chain.
    pub acceptance: Vec<f64>,
    /// Split-chain potential scale reduction per coordinate.
    pub r_hat: Vec<f64>,
    pub step_size: f64,
    pub leapfrog_steps: usize,
    pub seed: u64,
}

impl HmcDiagnostics {
    pub fn mean_acceptance(&self) -> f64 {
        self.acceptance.iter().sum::<f64>() / self.acceptance.len().max(1) as f64
    }

    pub fn max_r_hat(&self) -> f64 {
        self.r_hat.iter().cloned().fold(f64::NAN, f64::max)
    }

    pub fn to_manifest(&self) -> Manifest {
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(",");
        let mut m = Manifest::new();
        m.set("kind", "hmc_samples");
        m.set("step_size", self.step_size);
        m.set("leapfrog_steps", self.leapfrog_steps);
        m.set("seed", self.seed);
        m.set("acceptance", join(&self.acceptance));
        m.set("r_hat", join(&self.r_hat));
        m
    }
}

#[derive(Clone, Debug)]
pub struct HmcOutput {
    /// Post-burn-in draws, chain-major: rows `c * samples_per_chain ..` belong
    /// to chain `c`.
    pub samples: Array2<f64>,
    pub chains: Vec<HmcChainState>,
    pub diagnostics: HmcDiagnostics,
}

impl HmcOutput {
    pub fn save(&self, dir: &Path) -> Result<()> {
        store::save_bundle(dir, &self.diagnostics.to_manifest(), &[("samples".to_string(), &self.samples)])
    }
}

struct Trajectory {
    z: Array2<f64>,
    v: Array2<f64>,
    log_p: Array1<f64>,
    grad: Array2<f64>,
}

/// `l` leapfrog steps from `(z, v)` given `grad = d ln f / dz` at `z`.
fn integrate<T: LogDensity + ?Sized>(
    target: &T,
    z: &Array2<f64>,
    v: &Array2<f64>,
    grad: &Array2<f64>,
    eps: f64,
    l: usize,
) -> Trajectory {
    let mut z = z.clone();
    let mut v = v + &(grad * (0.5 * eps));
    let mut log_p = Array1::zeros(z.nrows());
    let mut grad = grad.clone();
    for step in 0..l {
        z.scaled_add(eps, &v);
        let (lp, g) = target.log_density_and_grad(&z);
        log_p = lp;
        grad = g;
        let kick = if step + 1 == l { 0.5 * eps } else { eps };
        v.scaled_add(kick, &grad);
    }
    Trajectory { z, v, log_p, grad }
}

/// `l` half-kick/drift/half-kick updates on every row. Fails when a gradient
/// becomes non-finite.
pub fn leapfrog<T: LogDensity + ?Sized>(
    target: &T,
    z: &Array2<f64>,
    v: &Array2<f64>,
    eps: f64,
    l: usize,
) -> Result<(Array2<f64>, Array2<f64>)> {
    if l == 0 {
        return Err(Error::InvalidConfig("leapfrog needs at least one step".into()));
    }
    if z.dim() != v.dim() || z.ncols() != target.dim() {
        return Err(Error::shape(z.dim(), v.dim()));
    }
    let (_, grad) = target.log_density_and_grad(z);
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient);
    }
    let t = integrate(target, z, v, &grad, eps, l);
    if t.grad.iter().chain(t.z.iter()).any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient);
    }
    Ok((t.z, t.v))
}

/// `H(z, v) = -ln f(z) + |v|^2 / 2` per row.
pub fn hamiltonian(log_p: &Array1<f64>, v: &Array2<f64>) -> Array1<f64> {
    let kinetic = v.map_axis(Axis(1), |r| 0.5 * r.dot(&r));
    kinetic - log_p
}

struct Sampler<'t, T: LogDensity + ?Sized> {
    target: &'t T,
    rngs: Vec<ChaCha8Rng>,
    z: Array2<f64>,
    log_p: Array1<f64>,
    grad: Array2<f64>,
    l: usize,
}

impl<T: LogDensity + ?Sized> Sampler<'_, T> {
    /// One transition for every chain; returns acceptance probabilities and
    /// whether each proposal was taken.
    fn transition(&mut self, eps: f64) -> (Vec<f64>, Vec<bool>) {
        let (c, d) = self.z.dim();
        let mut v = Array2::zeros((c, d));
        for (k, rng) in self.rngs.iter_mut().enumerate() {
            v.row_mut(k).assign(&standard_normal(rng, (1, d)).row(0));
        }
        let h0 = hamiltonian(&self.log_p, &v);
        let t = integrate(self.target, &self.z, &v, &self.grad, eps, self.l);
        let h1 = hamiltonian(&t.log_p, &t.v);
        let mut probs = Vec::with_capacity(c);
        let mut taken = Vec::with_capacity(c);
        for k in 0..c {
            let finite = h1[k].is_finite() && t.grad.row(k).iter().all(|g| g.is_finite());
            let a = if finite { (h0[k] - h1[k]).exp().min(1.0) } else { 0.0 };
            let u: f64 = self.rngs[k].random();
            let accept = u < a;
            if accept {
                self.z.row_mut(k).assign(&t.z.row(k));
                self.grad.row_mut(k).assign(&t.grad.row(k));
                self.log_p[k] = t.log_p[k];
            }
            probs.push(a);
            taken.push(accept);
        }
        (probs, taken)
    }
}

/// Dual averaging of the log step size towards `target_accept`.
struct DualAveraging {
    mu: f64,
    h_bar: f64,
    log_eps: f64,
    log_eps_bar: f64,
    m: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    fn new(eps: f64) -> Self {
        Self {
            mu: (10.0 * eps).ln(),
            h_bar: 0.0,
            log_eps: eps.ln(),
            log_eps_bar: 0.0,
            m: 0.0,
        }
    }

    fn update(&mut self, accept_stat: f64, target: f64) -> f64 {
        self.m += 1.0;
        let w = 1.0 / (self.m + Self::T0);
        self.h_bar = (1.0 - w) * self.h_bar + w * (target - accept_stat);
        self.log_eps = self.mu - self.m.sqrt() / Self::GAMMA * self.h_bar;
        let eta = self.m.powf(-Self::KAPPA);
        self.log_eps_bar = eta * self.log_eps + (1.0 - eta) * self.log_eps_bar;
        self.log_eps.exp()
    }

    fn final_step(&self) -> f64 {
        self.log_eps_bar.exp()
    }
}

/// Split-chain potential scale reduction for each coordinate. `draws` is
/// chain-major with `per_chain` rows per chain.
pub fn split_r_hat(draws: &Array2<f64>, n_chains: usize, per_chain: usize) -> Vec<f64> {
    let half = per_chain / 2;
    let d = draws.ncols();
    if half < 2 {
        return vec![f64::NAN; d];
    }
    (0..d)
        .map(|j| {
            let mut means = Vec::with_capacity(2 * n_chains);
            let mut vars = Vec::with_capacity(2 * n_chains);
            for c in 0..n_chains {
                for h in 0..2 {
                    let start = c * per_chain + h * half;
                    let seg = draws.slice(s![start..start + half, j]);
                    let m = seg.mean().unwrap_or(0.0);
                    let v = seg.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (half as f64 - 1.0);
                    means.push(m);
                    vars.push(v);
                }
            }
            let n = half as f64;
            let k = means.len() as f64;
            let grand = means.iter().sum::<f64>() / k;
            let b = n * means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (k - 1.0);
            let w = vars.iter().sum::<f64>() / k;
            if w <= 0.0 {
                return f64::NAN;
            }
            (((n - 1.0) / n * w + b / n) / w).sqrt()
        })
        .collect()
}

/// Runs `n_chains` HMC chains initialised from the standard-normal prior.
pub fn hmc_sample<T: LogDensity + ?Sized>(target: &T, cfg: &HmcConfig) -> Result<HmcOutput> {
    cfg.validate()?;
    let d = target.dim();
    let c = cfg.n_chains;
    let mut rngs: Vec<ChaCha8Rng> = (0..c)
        .map(|k| {
            let mut r = ChaCha8Rng::seed_from_u64(cfg.seed);
            r.set_stream(k as u64);
            r
        })
        .collect();
    let mut z = Array2::zeros((c, d));
    for (k, rng) in rngs.iter_mut().enumerate() {
        z.row_mut(k).assign(&standard_normal(rng, (1, d)).row(0));
    }
    let (log_p, grad) = target.log_density_and_grad(&z);
    if log_p.iter().chain(grad.iter()).any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteGradient);
    }
    let mut sampler = Sampler {
        target,
        rngs,
        z,
        log_p,
        grad,
        l: cfg.leapfrog_steps,
    };

    let mut eps = cfg.step_size;
    if cfg.adapt_steps > 0 {
        let mut da = DualAveraging::new(eps);
        for _ in 0..cfg.adapt_steps {
            let (probs, _) = sampler.transition(eps);
            let stat = probs.iter().sum::<f64>() / c as f64;
            eps = da.update(stat, cfg.target_accept);
        }
        eps = da.final_step();
        log::info!("adapted HMC step size to {eps:.4}");
    }
    let mut jitter_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    jitter_rng.set_stream(c as u64);
    let mut step = || {
        if cfg.step_jitter > 0.0 {
            eps * (1.0 + cfg.step_jitter * (2.0 * jitter_rng.random::<f64>() - 1.0))
        } else {
            eps
        }
    };
    for _ in 0..cfg.burn_in {
        sampler.transition(step());
    }

    let s_per = cfg.samples_per_chain;
    let mut samples = Array2::zeros((c * s_per, d));
    let mut accepted = vec![0usize; c];
    for it in 0..s_per {
        for _ in 0..cfg.thin {
            let (_, taken) = sampler.transition(step());
            for k in 0..c {
                accepted[k] += taken[k] as usize;
            }
        }
        for k in 0..c {
            samples.row_mut(k * s_per + it).assign(&sampler.z.row(k));
        }
    }
    let chains: Vec<HmcChainState> = (0..c)
        .map(|k| HmcChainState {
            position: sampler.z.row(k).to_owned(),
            accept_count: accepted[k],
            proposal_count: s_per * cfg.thin,
        })
        .collect();
    let diagnostics = HmcDiagnostics {
        acceptance: chains.iter().map(|s| s.acceptance_rate()).collect(),
        r_hat: split_r_hat(&samples, c, s_per),
        step_size: eps,
        leapfrog_steps: cfg.leapfrog_steps,
        seed: cfg.seed,
    };
    let rate = diagnostics.mean_acceptance();
    if rate < 0.01 {
        return Err(Error::DegenerateChains(rate));
    }
    if !(0.4..=0.95).contains(&rate) {
        log::warn!("HMC acceptance rate {rate:.3} outside [0.4, 0.95]; consider changing the step size {eps}");
    }
    Ok(HmcOutput {
        samples,
        chains,
        diagnostics,
    })
}

/// Latent draws for a subset posterior: exact flow sampling for a single
/// expert, HMC thinned to `n` draws otherwise.
pub fn subset_latents(target: &PoeTarget<'_>, cfg: &HmcConfig, n: usize) -> Result<Array2<f64>> {
    let d = target.dim();
    if n == 0 {
        return Ok(Array2::zeros((0, d)));
    }
    if target.subset_size() == 1 {
        let (stack, cond) = &target.experts[0];
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        return Ok(stack.transform_noise(&standard_normal(&mut rng, (n, d)), cond));
    }
    let out = hmc_sample(target, cfg)?;
    let total = out.samples.nrows();
    if total < n {
        return Err(Error::InsufficientSamples { needed: n, got: total });
    }
    let idx: Vec<usize> = (0..n).map(|k| k * total / n).collect();
    Ok(out.samples.select(Axis(0), &idx))
}

/// Generates `n` samples of modality `j` given the observed subset in
/// `target`. Returns decoder means, or likelihood draws when `rng` is given.
pub fn conditional_generate_subset(
    joint: &JointModel,
    target: &PoeTarget<'_>,
    cfg: &HmcConfig,
    j: usize,
    n: usize,
    rng: Option<&mut dyn rand::RngCore>,
) -> Result<Array2<f64>> {
    if j >= joint.n_modalities() {
        return Err(Error::DimensionMismatch(joint.n_modalities(), j));
    }
    if target.modalities.contains(&j) {
        return Err(Error::InvalidConfig(format!("modality {j} is already observed")));
    }
    if target.dim() != joint.latent_dim {
        return Err(Error::DimensionMismatch(joint.latent_dim, target.dim()));
    }
    let z = subset_latents(target, cfg, n)?;
    let params = if n == 0 {
        Array2::zeros((0, joint.specs[j].dim()))
    } else {
        joint.decode(j, &z)
    };
    Ok(match rng {
        Some(r) => sample_observations(&params, joint.decoders[j].family, r),
        None => params,
    })
}
