//! Flat `key=value` experiment configuration with dotted sections.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use crate::data::ToyConfig;
use crate::dcca::EmbeddingDimPolicy;
use crate::error::{Error, Result};
use crate::flow::FlowArch;
use crate::joint::JointArch;
use crate::nn::{format_widths, parse_widths, TrainConfig};
use crate::poe_hmc::HmcConfig;
use crate::store::{self, Manifest};

/// Every recognised key with its default and where that default comes from.
/// Variant-specific entries marked `-` have no default and must be given.
pub const DEFAULTS: &[(&str, &str, &str)] = &[
    ("seed", "0", "local choice"),
    ("variant", "jnf", "local choice"),
    ("latent_dim", "20", "reference MNIST-SVHN setup"),
    ("dataset.source", "toy", "local choice"),
    ("dataset.path", "-", "required for stored datasets"),
    ("dataset.test_path", "", "local choice: empty splits the test set off the end"),
    ("dataset.n_test", "1000", "local choice"),
    ("dataset.n_validation", "1000", "local choice"),
    ("dataset.toy.n_samples", "10000", "local choice"),
    ("dataset.toy.seed", "0", "local choice"),
    ("dataset.toy.image_side", "32", "reference toy setup (32x32 images)"),
    ("dataset.toy.size_min", "3", "local choice"),
    ("dataset.toy.size_max", "13", "local choice"),
    ("dataset.toy.fill_probability", "0.5", "local choice"),
    ("dataset.toy.shared_bits", "1", "reference toy setup (fill/empty)"),
    ("joint.encoder_hidden", "512", "reference MNIST encoder Linear(784,512)"),
    ("joint.decoder_hidden", "512", "reference MNIST decoder Linear(20,512)"),
    ("flow.n_blocks", "2", "reference setup: 2 MADE blocks (0 for jmvae_gaussian)"),
    ("flow.hidden_layers", "128,128,128", "reference setup: MADE blocks (3,128)"),
    ("flow.encoder_hidden", "512", "reference unimodal MLP width"),
    ("flow.conditional", "true", "local choice"),
    ("dcca.output_dim", "-", "required for jnf_dcca; reference value 9"),
    ("dcca.hidden", "512", "reference encoder width"),
    ("dcca.d_keep", "elbow", "local choice: singular values above half the largest"),
    ("dcca.regularizer", "0.001", "local choice"),
    ("dcca.epochs", "100", "reference DCCA schedule"),
    ("dcca.lr", "0.001", "reference DCCA schedule"),
    ("dcca.batch_size", "800", "reference DCCA schedule"),
    ("training.epochs_step1", "100", "reference schedule: half of 200 epochs"),
    ("training.epochs_step2", "100", "reference schedule: half of 200 epochs"),
    ("training.lr", "0.001", "reference schedule"),
    ("training.batch_size", "128", "reference schedule"),
    ("training.reconstruction_weights", "balanced", "reference rescaling by dimension ratio"),
    ("training.alpha", "0.1", "local choice, jmvae_onestep only"),
    ("training.warmup_epochs", "-", "jmvae_onestep only; defaults to epochs_step1"),
    ("hmc.eps", "0.05", "local choice"),
    ("hmc.steps", "10", "local choice"),
    ("hmc.chains", "8", "local choice"),
    ("hmc.burn_in", "200", "local choice"),
    ("hmc.adapt_steps", "0", "local choice"),
    ("hmc.step_jitter", "0.3", "local choice"),
    ("classifier.hidden", "256", "local choice"),
    ("classifier.epochs", "10", "local choice"),
    ("classifier.lr", "0.001", "local choice"),
    ("eval.enabled", "true", "local choice"),
    ("eval.n_is", "1000", "local choice"),
    ("eval.n_mc", "1000", "local choice"),
    ("eval.n_ll", "100", "local choice: test samples used for likelihoods"),
    ("eval.coherence_samples", "1", "local choice: generations per test sample"),
    ("eval.n_coherence", "1000", "local choice: test samples used for coherence and FID"),
    ("eval.vi_pairs", "0", "local choice"),
    ("eval.sample_likelihood", "false", "local choice: decode to likelihood means"),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    JmvaeGaussian,
    Jnf,
    JnfDcca,
    JmvaeOnestep,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::JmvaeGaussian => "jmvae_gaussian",
            Variant::Jnf => "jnf",
            Variant::JnfDcca => "jnf_dcca",
            Variant::JmvaeOnestep => "jmvae_onestep",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Variant::JmvaeGaussian, Variant::Jnf, Variant::JnfDcca, Variant::JmvaeOnestep]
            .into_iter()
            .find(|v| v.name() == s)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSource {
    Toy(ToyConfig),
    /// A directory written by `save_dataset`, with an optional separate test set.
    Stored { path: PathBuf, test_path: Option<PathBuf> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSection {
    pub source: DatasetSource,
    /// Samples split off the end when there is no separate test set.
    pub n_test: usize,
    /// Held out from the training split; DCCA rotations are fitted on it.
    pub n_validation: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowSection {
    pub n_blocks: usize,
    pub hidden_layers: Vec<usize>,
    pub encoder_hidden: Vec<usize>,
    pub conditional: bool,
}

impl FlowSection {
    pub fn arch(&self) -> FlowArch {
        FlowArch {
            encoder_hidden: self.encoder_hidden.clone(),
            n_blocks: self.n_blocks,
            block_hidden: self.hidden_layers.clone(),
            conditional: self.conditional,
            ..FlowArch::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DccaSection {
    pub output_dim: usize,
    pub hidden: Vec<usize>,
    pub d_keep: EmbeddingDimPolicy,
    pub regularizer: f64,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ReconstructionWeights {
    Uniform,
    /// `max_dim / dim_i` per modality.
    Balanced,
    Explicit(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSection {
    pub epochs_step1: usize,
    pub epochs_step2: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub reconstruction_weights: ReconstructionWeights,
    pub alpha: f64,
    pub warmup_epochs: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HmcSection {
    pub eps: f64,
    pub steps: usize,
    pub chains: usize,
    pub burn_in: usize,
    pub adapt_steps: usize,
    pub step_jitter: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierSection {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSection {
    pub enabled: bool,
    pub n_is: usize,
    pub n_mc: usize,
    pub n_ll: usize,
    pub coherence_samples: usize,
    pub n_coherence: usize,
    pub vi_pairs: usize,
    pub sample_likelihood: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub variant: Variant,
    pub latent_dim: usize,
    pub dataset: DatasetSection,
    pub joint: JointArch,
    pub flow: FlowSection,
    /// Present iff the variant is `jnf_dcca`.
    pub dcca: Option<DccaSection>,
    pub training: TrainingSection,
    pub hmc: HmcSection,
    pub classifier: ClassifierSection,
    pub eval: EvalSection,
}

struct Fields {
    given: BTreeMap<String, String>,
}

impl Fields {
    fn raw(&self, key: &str) -> Option<&str> {
        self.given.get(key).map(String::as_str).or_else(|| {
            DEFAULTS
                .iter()
                .find(|(k, _, _)| *k == key)
                .map(|(_, v, _)| *v)
                .filter(|v| *v != "-")
        })
    }

    fn has(&self, key: &str) -> bool {
        self.given.contains_key(key)
    }

    fn required(&self, key: &str) -> Result<&str> {
        self.raw(key)
            .ok_or_else(|| Error::InvalidConfig(format!("`{key}` must be set")))
    }

    fn num<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.required(key)?;
        raw.parse()
            .map_err(|_| Error::InvalidConfig(format!("`{key}`: cannot parse `{raw}`")))
    }

    fn flag(&self, key: &str) -> Result<bool> {
        match self.required(key)? {
            "true" => Ok(true),
            "false" => Ok(false),
            other => Err(Error::InvalidConfig(format!("`{key}`: expected true or false, got `{other}`"))),
        }
    }

    fn widths(&self, key: &str) -> Result<Vec<usize>> {
        let raw = self.raw(key).unwrap_or("");
        parse_widths(raw).ok_or_else(|| Error::InvalidConfig(format!("`{key}`: bad layer list `{raw}`")))
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidConfig(msg.into())
}

impl ExperimentConfig {
    /// Parses `key=value` lines; `#` starts a comment line. Unknown keys and
    /// keys that do not apply to the chosen variant are rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let m = Manifest::parse(text).map_err(|e| invalid(e.to_string()))?;
        let given: BTreeMap<String, String> = m.entries().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        for k in given.keys() {
            if !DEFAULTS.iter().any(|(d, _, _)| d == k) {
                return Err(invalid(format!("unknown key `{k}`")));
            }
        }
        let f = Fields { given };
        let variant_raw = f.required("variant")?;
        let variant = Variant::parse(variant_raw).ok_or_else(|| invalid(format!("unknown variant `{variant_raw}`")))?;

        let source = match f.required("dataset.source")? {
            "toy" => {
                if f.has("dataset.path") || f.has("dataset.test_path") {
                    return Err(invalid("dataset paths do not apply to the toy source"));
                }
                DatasetSource::Toy(ToyConfig {
                    image_side: f.num("dataset.toy.image_side")?,
                    size_min: f.num("dataset.toy.size_min")?,
                    size_max: f.num("dataset.toy.size_max")?,
                    fill_probability: f.num("dataset.toy.fill_probability")?,
                    n_samples: f.num("dataset.toy.n_samples")?,
                    seed: f.num("dataset.toy.seed")?,
                    shared_bits: f.num("dataset.toy.shared_bits")?,
                    ..ToyConfig::default()
                })
            }
            "stored" => {
                if f.given.keys().any(|k| k.starts_with("dataset.toy.")) {
                    return Err(invalid("dataset.toy.* keys require dataset.source=toy"));
                }
                let test = f.required("dataset.test_path")?;
                DatasetSource::Stored {
                    path: PathBuf::from(f.required("dataset.path")?),
                    test_path: (!test.is_empty()).then(|| PathBuf::from(test)),
                }
            }
            other => return Err(invalid(format!("unknown dataset.source `{other}`"))),
        };

        let n_blocks = if variant == Variant::JmvaeGaussian {
            if f.has("flow.n_blocks") && f.num::<usize>("flow.n_blocks")? != 0 {
                return Err(invalid("jmvae_gaussian uses Gaussian posteriors: flow.n_blocks must be 0"));
            }
            0
        } else {
            f.num("flow.n_blocks")?
        };

        let dcca = if variant == Variant::JnfDcca {
            if !f.has("dcca.output_dim") {
                return Err(invalid("jnf_dcca requires a dcca section with dcca.output_dim"));
            }
            let d_keep = match f.required("dcca.d_keep")? {
                "elbow" => EmbeddingDimPolicy::default(),
                k => EmbeddingDimPolicy::Fixed(
                    k.parse()
                        .map_err(|_| invalid(format!("dcca.d_keep: expected `elbow` or a count, got `{k}`")))?,
                ),
            };
            Some(DccaSection {
                output_dim: f.num("dcca.output_dim")?,
                hidden: f.widths("dcca.hidden")?,
                d_keep,
                regularizer: f.num("dcca.regularizer")?,
                epochs: f.num("dcca.epochs")?,
                lr: f.num("dcca.lr")?,
                batch_size: f.num("dcca.batch_size")?,
            })
        } else {
            if let Some(k) = f.given.keys().find(|k| k.starts_with("dcca.")) {
                return Err(invalid(format!("`{k}` only applies to jnf_dcca")));
            }
            None
        };

        let onestep = variant == Variant::JmvaeOnestep;
        if !onestep {
            for k in ["training.alpha", "training.warmup_epochs"] {
                if f.has(k) {
                    return Err(invalid(format!("`{k}` only applies to jmvae_onestep")));
                }
            }
        }
        let epochs_step1: usize = f.num("training.epochs_step1")?;
        let weights = match f.required("training.reconstruction_weights")? {
            "uniform" => ReconstructionWeights::Uniform,
            "balanced" => ReconstructionWeights::Balanced,
            list => ReconstructionWeights::Explicit(
                list.split(',')
                    .map(|w| w.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| invalid(format!("training.reconstruction_weights: bad list `{list}`")))?,
            ),
        };
        let training = TrainingSection {
            epochs_step1,
            epochs_step2: f.num("training.epochs_step2")?,
            lr: f.num("training.lr")?,
            batch_size: f.num("training.batch_size")?,
            reconstruction_weights: weights,
            alpha: if onestep { f.num("training.alpha")? } else { 0.0 },
            warmup_epochs: if !onestep {
                0
            } else if f.has("training.warmup_epochs") {
                f.num("training.warmup_epochs")?
            } else {
                epochs_step1
            },
        };

        let cfg = Self {
            seed: f.num("seed")?,
            variant,
            latent_dim: f.num("latent_dim")?,
            dataset: DatasetSection {
                source,
                n_test: f.num("dataset.n_test")?,
                n_validation: f.num("dataset.n_validation")?,
            },
            joint: JointArch {
                encoder_hidden: f.widths("joint.encoder_hidden")?,
                decoder_hidden: f.widths("joint.decoder_hidden")?,
            },
            flow: FlowSection {
                n_blocks,
                hidden_layers: f.widths("flow.hidden_layers")?,
                encoder_hidden: f.widths("flow.encoder_hidden")?,
                conditional: f.flag("flow.conditional")?,
            },
            dcca,
            training,
            hmc: HmcSection {
                eps: f.num("hmc.eps")?,
                steps: f.num("hmc.steps")?,
                chains: f.num("hmc.chains")?,
                burn_in: f.num("hmc.burn_in")?,
                adapt_steps: f.num("hmc.adapt_steps")?,
                step_jitter: f.num("hmc.step_jitter")?,
            },
            classifier: ClassifierSection {
                hidden: f.widths("classifier.hidden")?,
                epochs: f.num("classifier.epochs")?,
                lr: f.num("classifier.lr")?,
            },
            eval: EvalSection {
                enabled: f.flag("eval.enabled")?,
                n_is: f.num("eval.n_is")?,
                n_mc: f.num("eval.n_mc")?,
                n_ll: f.num("eval.n_ll")?,
                coherence_samples: f.num("eval.coherence_samples")?,
                n_coherence: f.num("eval.n_coherence")?,
                vi_pairs: f.num("eval.vi_pairs")?,
                sample_likelihood: f.flag("eval.sample_likelihood")?,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Checks counts, ranges and variant consistency.
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("latent_dim", self.latent_dim),
            ("training.epochs_step1", self.training.epochs_step1),
            ("training.batch_size", self.training.batch_size),
            ("hmc.steps", self.hmc.steps),
            ("hmc.chains", self.hmc.chains),
            ("classifier.epochs", self.classifier.epochs),
            ("eval.n_is", self.eval.n_is),
            ("eval.n_mc", self.eval.n_mc),
            ("eval.coherence_samples", self.eval.coherence_samples),
            ("dataset.n_test", self.dataset.n_test),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(invalid(format!("`{k}` must be positive")));
            }
        }
        if self.variant != Variant::JmvaeOnestep && self.training.epochs_step2 == 0 {
            return Err(invalid("`training.epochs_step2` must be positive"));
        }
        for (k, v) in [("training.lr", self.training.lr), ("classifier.lr", self.classifier.lr), ("hmc.eps", self.hmc.eps)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!("`{k}` must be positive, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.hmc.step_jitter) {
            return Err(invalid(format!("`hmc.step_jitter` must lie in [0, 1), got {}", self.hmc.step_jitter)));
        }
        if self.variant == Variant::JmvaeGaussian && self.flow.n_blocks != 0 {
            return Err(invalid("jmvae_gaussian uses Gaussian posteriors: flow.n_blocks must be 0"));
        }
        if self.variant == Variant::JmvaeOnestep {
            if !(self.training.alpha.is_finite() && self.training.alpha >= 0.0) {
                return Err(invalid("training.alpha must be non-negative"));
            }
        }
        if let ReconstructionWeights::Explicit(w) = &self.training.reconstruction_weights {
            if w.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                return Err(invalid("reconstruction weights must be positive"));
            }
        }
        match (&self.dcca, self.variant) {
            (Some(d), Variant::JnfDcca) => {
                if d.output_dim == 0 || d.epochs == 0 {
                    return Err(invalid("dcca.output_dim and dcca.epochs must be positive"));
                }
                if !(d.regularizer > 0.0 && d.lr > 0.0) {
                    return Err(invalid("dcca.regularizer and dcca.lr must be positive"));
                }
                if d.batch_size <= d.output_dim {
                    return Err(invalid("dcca.batch_size must exceed dcca.output_dim"));
                }
                if d.d_keep == EmbeddingDimPolicy::Fixed(0) {
                    return Err(invalid("dcca.d_keep must be positive"));
                }
                if let EmbeddingDimPolicy::Fixed(k) = d.d_keep {
                    if k > d.output_dim {
                        return Err(invalid(format!("dcca.d_keep = {k} exceeds dcca.output_dim = {}", d.output_dim)));
                    }
                }
                if d.output_dim >= self.dataset.n_validation {
                    return Err(invalid("dataset.n_validation must exceed dcca.output_dim"));
                }
            }
            (None, Variant::JnfDcca) => return Err(invalid("jnf_dcca requires a dcca section")),
            (Some(_), v) => return Err(invalid(format!("variant {v} takes no dcca section"))),
            (None, _) => {}
        }
        if let DatasetSource::Toy(t) = &self.dataset.source {
            t.validate().map_err(|e| match e {
                Error::InvalidConfig(m) => Error::InvalidConfig(m),
                e => invalid(e.to_string()),
            })?;
            if t.n_samples <= self.dataset.n_test + self.dataset.n_validation {
                return Err(invalid("dataset.toy.n_samples leaves no training samples"));
            }
        }
        Ok(())
    }

    /// Every field in a fixed order, defaults filled in.
    pub fn canonical(&self) -> Manifest {
        let mut m = Manifest::new();
        m.set("seed", self.seed);
        m.set("variant", self.variant);
        m.set("latent_dim", self.latent_dim);
        match &self.dataset.source {
            DatasetSource::Toy(t) => {
                m.set("dataset.source", "toy");
                m.set("dataset.toy.n_samples", t.n_samples);
                m.set("dataset.toy.seed", t.seed);
                m.set("dataset.toy.image_side", t.image_side);
                m.set("dataset.toy.size_min", t.size_min);
                m.set("dataset.toy.size_max", t.size_max);
                m.set("dataset.toy.fill_probability", t.fill_probability);
                m.set("dataset.toy.shared_bits", t.shared_bits);
            }
            DatasetSource::Stored { path, test_path } => {
                m.set("dataset.source", "stored");
                m.set("dataset.path", path.display());
                m.set(
                    "dataset.test_path",
                    test_path.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
                );
            }
        }
        m.set("dataset.n_test", self.dataset.n_test);
        m.set("dataset.n_validation", self.dataset.n_validation);
        m.set("joint.encoder_hidden", format_widths(&self.joint.encoder_hidden));
        m.set("joint.decoder_hidden", format_widths(&self.joint.decoder_hidden));
        m.set("flow.n_blocks", self.flow.n_blocks);
        m.set("flow.hidden_layers", format_widths(&self.flow.hidden_layers));
        m.set("flow.encoder_hidden", format_widths(&self.flow.encoder_hidden));
        m.set("flow.conditional", self.flow.conditional);
        if let Some(d) = &self.dcca {
            m.set("dcca.output_dim", d.output_dim);
            m.set("dcca.hidden", format_widths(&d.hidden));
            m.set(
                "dcca.d_keep",
                match d.d_keep {
                    EmbeddingDimPolicy::Fixed(k) => k.to_string(),
                    EmbeddingDimPolicy::Elbow { .. } => "elbow".into(),
                },
            );
            m.set("dcca.regularizer", d.regularizer);
            m.set("dcca.epochs", d.epochs);
            m.set("dcca.lr", d.lr);
            m.set("dcca.batch_size", d.batch_size);
        }
        m.set("training.epochs_step1", self.training.epochs_step1);
        m.set("training.epochs_step2", self.training.epochs_step2);
        m.set("training.lr", self.training.lr);
        m.set("training.batch_size", self.training.batch_size);
        m.set(
            "training.reconstruction_weights",
            match &self.training.reconstruction_weights {
                ReconstructionWeights::Uniform => "uniform".to_string(),
                ReconstructionWeights::Balanced => "balanced".to_string(),
                ReconstructionWeights::Explicit(w) => w.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","),
            },
        );
        if self.variant == Variant::JmvaeOnestep {
            m.set("training.alpha", self.training.alpha);
            m.set("training.warmup_epochs", self.training.warmup_epochs);
        }
        m.set("hmc.eps", self.hmc.eps);
        m.set("hmc.steps", self.hmc.steps);
        m.set("hmc.chains", self.hmc.chains);
        m.set("hmc.burn_in", self.hmc.burn_in);
        m.set("hmc.adapt_steps", self.hmc.adapt_steps);
        m.set("hmc.step_jitter", self.hmc.step_jitter);
        m.set("classifier.hidden", format_widths(&self.classifier.hidden));
        m.set("classifier.epochs", self.classifier.epochs);
        m.set("classifier.lr", self.classifier.lr);
        m.set("eval.enabled", self.eval.enabled);
        m.set("eval.n_is", self.eval.n_is);
        m.set("eval.n_mc", self.eval.n_mc);
        m.set("eval.n_ll", self.eval.n_ll);
        m.set("eval.coherence_samples", self.eval.coherence_samples);
        m.set("eval.n_coherence", self.eval.n_coherence);
        m.set("eval.vi_pairs", self.eval.vi_pairs);
        m.set("eval.sample_likelihood", self.eval.sample_likelihood);
        m
    }

    pub fn to_text(&self) -> String {
        self.canonical().to_text()
    }

    /// SHA-256 of the canonical text.
    pub fn hash(&self) -> String {
        store::hash_text(&self.to_text())
    }

    /// Hash of the canonical entries whose key starts with one of
    /// `prefixes` (an exact key counts as a prefix), chained after `upstream`.
    pub(crate) fn section_hash(&self, prefixes: &[&str], upstream: &[&str]) -> String {
        let mut text = String::new();
        for u in upstream {
            text.push_str(u);
            text.push('\n');
        }
        for (k, v) in self.canonical().entries() {
            if prefixes.iter().any(|p| k == *p || (p.ends_with('.') && k.starts_with(p))) {
                text.push_str(&format!("{k}={v}\n"));
            }
        }
        store::hash_text(&text)
    }

    pub fn step1_train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.training.lr,
            batch_size: self.training.batch_size,
            seed: self.seed,
            clip_norm: None,
        }
    }

    pub fn dcca_train_config(&self) -> Option<TrainConfig> {
        self.dcca.as_ref().map(|d| TrainConfig {
            lr: d.lr,
            batch_size: d.batch_size,
            seed: self.seed,
            clip_norm: None,
        })
    }

    pub fn classifier_train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.classifier.lr,
            batch_size: self.training.batch_size,
            seed: self.seed.wrapping_add(3),
            clip_norm: None,
        }
    }

    /// HMC settings drawing at least `n` post-burn-in samples in total.
    pub fn hmc_config(&self, n: usize) -> HmcConfig {
        HmcConfig {
            step_size: self.hmc.eps,
            leapfrog_steps: self.hmc.steps,
            n_chains: self.hmc.chains,
            burn_in: self.hmc.burn_in,
            samples_per_chain: n.div_ceil(self.hmc.chains).max(1),
            seed: self.seed,
            adapt_steps: self.hmc.adapt_steps,
            step_jitter: self.hmc.step_jitter,
            ..HmcConfig::default()
        }
    }

    /// Text listing every key, its default and its origin.
    pub fn documented_defaults() -> String {
        let mut s = String::new();
        for (k, v, why) in DEFAULTS {
            s.push_str(&format!("# {why}\n{k}={}\n", if *v == "-" { "" } else { v }));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOY: &str = "variant=jnf\nlatent_dim=2\ndataset.toy.n_samples=3000\n";

    #[test]
    fn defaults_fill_in() {
        let c = ExperimentConfig::parse(TOY).unwrap();
        assert_eq!(c.latent_dim, 2);
        assert_eq!(c.flow.n_blocks, 2);
        assert_eq!(c.training.epochs_step1, 100);
        assert_eq!(c.training.epochs_step2, 100);
        assert_eq!(c.training.batch_size, 128);
        assert!(c.dcca.is_none());
    }

    #[test]
    fn canonical_text_round_trips() {
        for text in [
            TOY.to_string(),
            "variant=jnf_dcca\ndcca.output_dim=4\ndcca.d_keep=3\nlatent_dim=2\n".into(),
            "variant=jmvae_onestep\ntraining.alpha=0.5\nlatent_dim=3\n".into(),
            "variant=jmvae_gaussian\ndataset.source=stored\ndataset.path=/d/train\ntraining.reconstruction_weights=1,2.5\n".into(),
        ] {
            let c = ExperimentConfig::parse(&text).unwrap();
            let back = ExperimentConfig::parse(&c.to_text()).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.hash(), c.hash());
        }
    }

    #[test]
    fn every_field_moves_the_hash() {
        let base = ExperimentConfig::parse("variant=jnf_dcca\ndcca.output_dim=4\n").unwrap();
        let canon = base.canonical();
        let mut seen = std::collections::BTreeSet::new();
        seen.insert(base.hash());
        for (k, v) in canon.entries() {
            let changed = match k {
                "variant" | "dataset.source" => continue,
                "dcca.d_keep" => "2".to_string(),
                "flow.conditional" | "eval.enabled" | "eval.sample_likelihood" => {
                    (v != "true").to_string()
                }
                "training.reconstruction_weights" => "uniform".into(),
                _ if v.contains(',') || k.ends_with("hidden") || k.ends_with("hidden_layers") => format!("{v},7"),
                "dataset.toy.fill_probability" => "0.25".into(),
                "dataset.toy.size_max" => "12".into(),
                "dataset.toy.shared_bits" => "2".into(),
                "hmc.step_jitter" => "0.5".into(),
                _ => {
                    let x: f64 = v.parse().unwrap();
                    (x * 2.0 + 1.0).to_string()
                }
            };
            let mut m = canon.clone();
            m.set(k, &changed);
            let c = match ExperimentConfig::parse(&m.to_text()) {
                Ok(c) => c,
                Err(e) => panic!("{k}={changed}: {e}"),
            };
            assert!(seen.insert(c.hash()), "changing {k} left the hash unchanged");
        }
    }

    #[test]
    fn gaussian_variant_is_the_zero_block_flow() {
        let g = ExperimentConfig::parse("variant=jmvae_gaussian\n").unwrap();
        let j = ExperimentConfig::parse("variant=jnf\nflow.n_blocks=0\n").unwrap();
        assert_eq!(g.flow, j.flow);
        assert_eq!(g.flow.arch().n_blocks, 0);
    }

    #[test]
    fn inconsistent_configs_are_rejected() {
        for text in [
            "variant=nope\n",
            "unknown.key=1\n",
            "variant=jnf\ndcca.output_dim=4\n",
            "variant=jnf_dcca\n",
            "variant=jnf_dcca\ndcca.output_dim=4\ndcca.d_keep=5\n",
            "variant=jnf_dcca\ndcca.output_dim=4\ndcca.batch_size=4\n",
            "variant=jmvae_gaussian\nflow.n_blocks=2\n",
            "variant=jnf\ntraining.alpha=1\n",
            "latent_dim=0\n",
            "training.batch_size=0\n",
            "hmc.chains=0\n",
            "training.lr=-1\n",
            "dataset.source=stored\n",
            "dataset.path=/x\n",
            "dataset.toy.n_samples=1500\n",
            "flow.conditional=maybe\n",
            "training.reconstruction_weights=1,x\n",
        ] {
            assert!(
                matches!(ExperimentConfig::parse(text), Err(Error::InvalidConfig(_))),
                "accepted {text:?}"
            );
        }
    }

    #[test]
    fn onestep_warmup_defaults_to_step1_epochs() {
        let c = ExperimentConfig::parse("variant=jmvae_onestep\ntraining.epochs_step1=40\n").unwrap();
        assert_eq!(c.training.warmup_epochs, 40);
        assert_eq!(c.training.alpha, 0.1);
    }

    #[test]
    fn documented_defaults_parse() {
        let text = ExperimentConfig::documented_defaults();
        let filtered: String = text
            .lines()
            .filter(|l| !l.ends_with('=') && !l.starts_with("training.alpha") && !l.starts_with("dcca."))
            .map(|l| format!("{l}\n"))
            .collect();
        ExperimentConfig::parse(&filtered).unwrap();
    }
}
