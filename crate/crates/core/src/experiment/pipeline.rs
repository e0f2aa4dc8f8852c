//! Stage orchestration with checkpoint-keyed resume.
//!
//! Run directory:
//!
//! ```text
//! config.txt
//! checkpoints/{data.txt,joint/,dcca/,posteriors/,classifiers/<i>/}
//! metrics/{run.txt,report.txt,summary.txt}
//! plots/*.png
//! samples/<direction>/
//! ```
//!
//! Every checkpoint stores the hash of the inputs that produced it. A stage
//! whose stored key matches is loaded instead of recomputed.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{DatasetSource, ExperimentConfig, ReconstructionWeights, Variant};
use super::record::{format_curve, parse_curve, RunRecord, Stage, StageRecord};
use crate::data::{generate_toy_dataset, load_dataset, MultimodalDataset};
use crate::dcca::{select_embedding_dim, train_dcca, DccaProjectionSet};
use crate::error::{Error, Result};
use crate::evaluation::{train_classifier, ClassifierModel};
use crate::flow::{train_step2, ConditioningMode, UnimodalPosteriorSet};
use crate::joint::{train_jmvae_onestep, train_step1, JointModel, OneStepConfig};
use crate::store::{self, Manifest};

const JOINT_INIT: u64 = 0x1000;
const POSTERIOR_INIT: u64 = 0x2000;
const DCCA_INIT: u64 = 0x3000;

/// Train, validation and test portions of the experiment data.
#[derive(Clone, Debug)]
pub struct Splits {
    pub train: MultimodalDataset,
    pub validation: MultimodalDataset,
    pub test: MultimodalDataset,
    /// Content hash of all three splits.
    pub dataset_id: String,
}

/// Builds the splits: the test set is the tail of the data unless a
/// separate one is configured; validation is the tail of the remainder.
pub fn load_splits(cfg: &ExperimentConfig) -> Result<Splits> {
    let (rest, test) = match &cfg.dataset.source {
        DatasetSource::Toy(t) => split_tail(generate_toy_dataset(t)?, cfg.dataset.n_test)?,
        DatasetSource::Stored { path, test_path: None } => split_tail(load_dataset(path)?, cfg.dataset.n_test)?,
        DatasetSource::Stored {
            path,
            test_path: Some(tp),
        } => (load_dataset(path)?, load_dataset(tp)?),
    };
    let (train, validation) = split_tail(rest, cfg.dataset.n_validation)?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let dataset_id = store::hash_arrays(
        [&train, &validation, &test]
            .iter()
            .flat_map(|d| d.modalities.iter()),
    );
    Ok(Splits {
        train,
        validation,
        test,
        dataset_id,
    })
}

fn split_tail(ds: MultimodalDataset, n_tail: usize) -> Result<(MultimodalDataset, MultimodalDataset)> {
    if n_tail > ds.len() {
        return Err(Error::InsufficientSamples {
            needed: n_tail,
            got: ds.len(),
        });
    }
    Ok(ds.split_at(ds.len() - n_tail))
}

/// Trained components of a run, loaded or freshly computed.
pub struct Components {
    pub joint: JointModel,
    pub dcca: Option<DccaProjectionSet>,
    pub posteriors: UnimodalPosteriorSet,
    /// One per modality; empty when the data carry no labels.
    pub classifiers: Vec<ClassifierModel>,
}

/// Resume keys of every stage.
#[derive(Clone, Debug, PartialEq)]
pub struct StageKeys {
    pub data: String,
    pub joint: String,
    pub dcca: Option<String>,
    pub posteriors: String,
    pub classifiers: String,
    pub eval: String,
}

impl StageKeys {
    /// `d_keep` is the resolved DCCA embedding size, when there is one.
    pub fn new(cfg: &ExperimentConfig, dataset_id: &str, d_keep: Option<usize>) -> Self {
        let data = cfg.section_hash(&["dataset."], &[dataset_id]);
        let onestep = cfg.variant == Variant::JmvaeOnestep;
        let mut joint_fields = vec![
            "seed",
            "latent_dim",
            "joint.",
            "training.epochs_step1",
            "training.lr",
            "training.batch_size",
            "training.reconstruction_weights",
        ];
        if onestep {
            joint_fields.extend(["flow.", "training.epochs_step2", "training.alpha", "training.warmup_epochs"]);
        }
        let joint = cfg.section_hash(&joint_fields, &[&data, if onestep { "onestep" } else { "two-step" }]);
        let dcca = cfg
            .dcca
            .as_ref()
            .map(|_| cfg.section_hash(&["seed", "dcca.output_dim", "dcca.hidden", "dcca.regularizer", "dcca.epochs", "dcca.lr", "dcca.batch_size"], &[&data]));
        let posteriors = if onestep {
            store::hash_text(&format!("{joint}\nonestep posteriors"))
        } else {
            let keep = d_keep.map(|k| format!("d_keep={k}")).unwrap_or_default();
            cfg.section_hash(
                &["seed", "flow.", "training.epochs_step2", "training.lr", "training.batch_size"],
                &[&joint, dcca.as_deref().unwrap_or(""), &keep],
            )
        };
        let classifiers = cfg.section_hash(&["seed", "classifier.", "training.batch_size"], &[&data]);
        let eval = cfg.section_hash(&["seed", "eval.", "hmc."], &[&posteriors, &classifiers]);
        Self {
            data,
            joint,
            dcca,
            posteriors,
            classifiers,
            eval,
        }
    }
}

pub(crate) fn checkpoint_dir(run_dir: &Path, stage: Stage) -> PathBuf {
    run_dir.join("checkpoints").join(stage.name())
}

fn stage_meta(key: &str, seconds: f64, curve: &[f64]) -> Manifest {
    let mut m = Manifest::new();
    m.set("stage_key", key);
    m.set("seconds", seconds);
    m.set("curve", format_curve(curve));
    m
}

/// `(seconds, curve)` when `m` carries `key`.
fn matching(m: &Manifest, key: &str) -> Option<(f64, Vec<f64>)> {
    if m.get("stage_key") != Some(key) {
        return None;
    }
    Some((m.parse_value("seconds").ok()?, parse_curve(m.get("curve").unwrap_or(""))?))
}

fn in_stage<T>(stage: Stage, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        e @ Error::Stage { .. } => e,
        e => Error::Stage {
            stage: stage.name().into(),
            source: Box::new(e),
        },
    })
}

/// Progress of one run through the stages.
pub(crate) struct Runner<'a> {
    pub cfg: &'a ExperimentConfig,
    pub dir: &'a Path,
    pub record: RunRecord,
}

impl<'a> Runner<'a> {
    pub fn new(cfg: &'a ExperimentConfig, dir: &'a Path) -> Result<Self> {
        cfg.validate()?;
        std::fs::create_dir_all(dir.join("checkpoints"))?;
        std::fs::create_dir_all(dir.join("metrics"))?;
        std::fs::write(dir.join("config.txt"), cfg.to_text())?;
        Ok(Self {
            cfg,
            dir,
            record: RunRecord {
                run_dir: dir.to_path_buf(),
                config_hash: cfg.hash(),
                seed: cfg.seed,
                variant: cfg.variant.name().into(),
                stages: Vec::new(),
                loss_curves: BTreeMap::new(),
                report: None,
            },
        })
    }

    pub(crate) fn note(&mut self, stage: Stage, key: &str, seconds: f64, resumed: bool, curve: Option<Vec<f64>>) {
        if resumed {
            log::info!("stage {stage}: resumed from checkpoint");
        } else {
            log::info!("stage {stage}: done in {seconds:.1}s");
        }
        self.record.stages.retain(|r| r.stage != stage);
        self.record.stages.push(StageRecord {
            stage,
            key: key.to_string(),
            seconds,
            resumed,
        });
        if let Some(c) = curve {
            self.record.loss_curves.insert(stage.name().into(), c);
        }
    }

    pub fn data(&mut self) -> Result<Splits> {
        in_stage(Stage::Data, self.data_inner())
    }

    fn data_inner(&mut self) -> Result<Splits> {
        let t = Instant::now();
        let splits = load_splits(self.cfg)?;
        let key = StageKeys::new(self.cfg, &splits.dataset_id, None).data;
        let path = self.dir.join("checkpoints").join("data.txt");
        let resumed = Manifest::read(&path).ok().is_some_and(|m| m.get("stage_key") == Some(key.as_str()));
        let mut m = Manifest::new();
        m.set("stage_key", &key);
        m.set("dataset_id", &splits.dataset_id);
        m.set("n_train", splits.train.len());
        m.set("n_validation", splits.validation.len());
        m.set("n_test", splits.test.len());
        m.write(&path)?;
        self.note(Stage::Data, &key, t.elapsed().as_secs_f64(), resumed, None);
        Ok(splits)
    }

    pub fn joint(&mut self, splits: &Splits) -> Result<JointModel> {
        in_stage(Stage::Joint, self.joint_inner(splits))
    }

    fn joint_inner(&mut self, splits: &Splits) -> Result<JointModel> {
        let cfg = self.cfg;
        let dir = checkpoint_dir(self.dir, Stage::Joint);
        let keys = StageKeys::new(cfg, &splits.dataset_id, None);
        if let Ok((model, m)) = JointModel::load(&dir) {
            if let Some((secs, curve)) = matching(&m, &keys.joint) {
                self.note(Stage::Joint, &keys.joint, secs, true, Some(curve));
                return Ok(model);
            }
        }
        let t = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ JOINT_INIT);
        let weights = match &cfg.training.reconstruction_weights {
            ReconstructionWeights::Uniform => None,
            ReconstructionWeights::Balanced => Some(JointModel::dimension_balanced_weights(&splits.train.specs)),
            ReconstructionWeights::Explicit(w) => Some(w.clone()),
        };
        let mut model = JointModel::new(&mut rng, splits.train.specs.clone(), cfg.latent_dim, &cfg.joint, weights)?;
        let train = cfg.step1_train_config();
        let curve = if cfg.variant == Variant::JmvaeOnestep {
            let mut post = new_posteriors(cfg, &splits.train, None)?;
            let one = OneStepConfig {
                alpha: cfg.training.alpha,
                warmup_epochs: cfg.training.warmup_epochs,
                epochs: cfg.training.epochs_step1 + cfg.training.epochs_step2,
                train,
            };
            let curve = train_jmvae_onestep(&mut model, &mut post, &splits.train, &one)?;
            let secs = t.elapsed().as_secs_f64();
            post.save(&checkpoint_dir(self.dir, Stage::Posteriors), &stage_meta(&keys.posteriors, secs, &curve))?;
            curve
        } else {
            train_step1(&mut model, &splits.train, &train, cfg.training.epochs_step1)?
        };
        let secs = t.elapsed().as_secs_f64();
        model.save(&dir, &stage_meta(&keys.joint, secs, &curve))?;
        self.note(Stage::Joint, &keys.joint, secs, false, Some(curve));
        Ok(model)
    }

    /// `None` unless the variant uses DCCA. The returned set carries the
    /// configured `d_keep`.
    pub fn dcca(&mut self, splits: &Splits) -> Result<Option<DccaProjectionSet>> {
        in_stage(Stage::Dcca, self.dcca_inner(splits))
    }

    fn dcca_inner(&mut self, splits: &Splits) -> Result<Option<DccaProjectionSet>> {
        let cfg = self.cfg;
        let (Some(section), Some(train_cfg)) = (&cfg.dcca, cfg.dcca_train_config()) else {
            return Ok(None);
        };
        let key = StageKeys::new(cfg, &splits.dataset_id, None).dcca.expect("dcca section present");
        let dir = checkpoint_dir(self.dir, Stage::Dcca);
        let mut proj = match DccaProjectionSet::load(&dir) {
            Ok((p, m)) if matching(&m, &key).is_some() => {
                let (secs, curve) = matching(&m, &key).expect("checked");
                self.note(Stage::Dcca, &key, secs, true, Some(curve));
                p
            }
            _ => {
                let t = Instant::now();
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ DCCA_INIT);
                let dims: Vec<usize> = splits.train.specs.iter().map(|s| s.dim()).collect();
                let mut p = DccaProjectionSet::new(&mut rng, &dims, &section.hidden, section.output_dim, section.regularizer)?;
                let curve = train_dcca(&mut p, &splits.train, &splits.validation, &train_cfg, section.epochs)?;
                let secs = t.elapsed().as_secs_f64();
                p.save(&dir, &stage_meta(&key, secs, &curve))?;
                self.note(Stage::Dcca, &key, secs, false, Some(curve));
                p
            }
        };
        proj.d_keep = select_embedding_dim(&proj.spectrum, section.d_keep);
        log::info!("dcca spectrum {:?}, keeping {} dimensions", proj.spectrum, proj.d_keep);
        Ok(Some(proj))
    }

    pub fn posteriors(
        &mut self,
        splits: &Splits,
        joint: &JointModel,
        dcca: Option<&DccaProjectionSet>,
    ) -> Result<UnimodalPosteriorSet> {
        in_stage(Stage::Posteriors, self.posteriors_inner(splits, joint, dcca))
    }

    fn posteriors_inner(
        &mut self,
        splits: &Splits,
        joint: &JointModel,
        dcca: Option<&DccaProjectionSet>,
    ) -> Result<UnimodalPosteriorSet> {
        let cfg = self.cfg;
        let key = StageKeys::new(cfg, &splits.dataset_id, dcca.map(|d| d.d_keep)).posteriors;
        let dir = checkpoint_dir(self.dir, Stage::Posteriors);
        if let Ok((post, m)) = UnimodalPosteriorSet::load(&dir) {
            if let Some((secs, curve)) = matching(&m, &key) {
                self.note(Stage::Posteriors, &key, secs, true, Some(curve));
                return Ok(post);
            }
        }
        if cfg.variant == Variant::JmvaeOnestep {
            return Err(Error::format(&dir, "one-step posteriors missing; rerun the joint stage"));
        }
        let t = Instant::now();
        let mut post = new_posteriors(cfg, &splits.train, dcca)?;
        let curve = train_step2(&mut post, joint, &splits.train, dcca, &cfg.step1_train_config(), cfg.training.epochs_step2)?;
        let secs = t.elapsed().as_secs_f64();
        post.save(&dir, &stage_meta(&key, secs, &curve))?;
        self.note(Stage::Posteriors, &key, secs, false, Some(curve));
        Ok(post)
    }

    /// Empty when the data carry no labels.
    pub fn classifiers(&mut self, splits: &Splits) -> Result<Vec<ClassifierModel>> {
        in_stage(Stage::Classifiers, self.classifiers_inner(splits))
    }

    fn classifiers_inner(&mut self, splits: &Splits) -> Result<Vec<ClassifierModel>> {
        let (Some(train_labels), Some(test_labels)) = (&splits.train.labels, &splits.test.labels) else {
            log::warn!("data carry no labels; skipping classifiers, coherence and FID");
            return Ok(Vec::new());
        };
        let cfg = self.cfg;
        let key = StageKeys::new(cfg, &splits.dataset_id, None).classifiers;
        let root = checkpoint_dir(self.dir, Stage::Classifiers);
        let stamp = root.join("stage.txt");
        if let Ok(m) = Manifest::read(&stamp) {
            if let Some((secs, _)) = matching(&m, &key) {
                let loaded: Result<Vec<_>> = (0..splits.train.n_modalities())
                    .map(|i| ClassifierModel::load(&root.join(i.to_string())))
                    .collect();
                if let Ok(c) = loaded {
                    self.note(Stage::Classifiers, &key, secs, true, None);
                    return Ok(c);
                }
            }
        }
        let t = Instant::now();
        let mut out = Vec::new();
        for i in 0..splits.train.n_modalities() {
            let c = train_classifier(
                &splits.train.modalities[i],
                train_labels,
                &splits.test.modalities[i],
                test_labels,
                &cfg.classifier.hidden,
                &cfg.classifier_train_config(),
                cfg.classifier.epochs,
            )?;
            log::info!("classifier {i}: test accuracy {:.4}", c.accuracy.unwrap_or(f64::NAN));
            c.save(&root.join(i.to_string()))?;
            out.push(c);
        }
        let secs = t.elapsed().as_secs_f64();
        stage_meta(&key, secs, &[]).write(&stamp)?;
        self.note(Stage::Classifiers, &key, secs, false, None);
        Ok(out)
    }
}

fn new_posteriors(
    cfg: &ExperimentConfig,
    train: &MultimodalDataset,
    dcca: Option<&DccaProjectionSet>,
) -> Result<UnimodalPosteriorSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ POSTERIOR_INIT);
    let (dims, mode) = match dcca {
        Some(d) => (vec![d.d_keep; train.n_modalities()], ConditioningMode::DccaEmbedding),
        None => (train.specs.iter().map(|s| s.dim()).collect(), ConditioningMode::RawData),
    };
    Ok(UnimodalPosteriorSet::new(&mut rng, &dims, cfg.latent_dim, &cfg.flow.arch(), mode))
}

/// Runs the stages up to and including `last`. Returns the record and the
/// components trained so far.
pub fn run_until(cfg: &ExperimentConfig, run_dir: &Path, last: Stage) -> Result<(RunRecord, Splits, Option<Components>)> {
    let mut r = Runner::new(cfg, run_dir)?;
    let splits = r.data()?;
    let mut components = None;
    if last >= Stage::Joint {
        let joint = r.joint(&splits)?;
        let dcca = if last >= Stage::Dcca { r.dcca(&splits)? } else { None };
        if last >= Stage::Posteriors {
            let posteriors = r.posteriors(&splits, &joint, dcca.as_ref())?;
            let classifiers = if last >= Stage::Classifiers {
                r.classifiers(&splits)?
            } else {
                Vec::new()
            };
            let c = Components {
                joint,
                dcca,
                posteriors,
                classifiers,
            };
            if last >= Stage::Eval && cfg.eval.enabled {
                let keys = StageKeys::new(cfg, &splits.dataset_id, c.dcca.as_ref().map(|d| d.d_keep));
                let report = in_stage(Stage::Eval, super::eval::evaluate_stage(&mut r, &splits, &c, &keys.eval))?;
                r.record.report = Some(report);
            }
            components = Some(c);
        }
    }
    r.record.write()?;
    Ok((r.record, splits, components))
}

/// Every stage in order, then the plots and summary under the run directory.
pub fn run_pipeline(cfg: &ExperimentConfig, run_dir: &Path) -> Result<RunRecord> {
    let (record, splits, components) = run_until(cfg, run_dir, Stage::Eval)?;
    if let Some(c) = &components {
        super::report::render_with(&record, cfg, &splits, c, run_dir)?;
    }
    Ok(record)
}

/// Loads a finished run's components from its checkpoints without training.
pub fn load_components(run_dir: &Path) -> Result<(ExperimentConfig, Splits, Components)> {
    let cfg = ExperimentConfig::read(&run_dir.join("config.txt"))?;
    let splits = load_splits(&cfg)?;
    let (joint, _) = JointModel::load(&checkpoint_dir(run_dir, Stage::Joint))?;
    let dcca = match &cfg.dcca {
        Some(section) => {
            let (mut d, _) = DccaProjectionSet::load(&checkpoint_dir(run_dir, Stage::Dcca))?;
            d.d_keep = select_embedding_dim(&d.spectrum, section.d_keep);
            Some(d)
        }
        None => None,
    };
    let (posteriors, _) = UnimodalPosteriorSet::load(&checkpoint_dir(run_dir, Stage::Posteriors))?;
    let root = checkpoint_dir(run_dir, Stage::Classifiers);
    let classifiers = if root.join("stage.txt").exists() {
        (0..joint.n_modalities())
            .map(|i| ClassifierModel::load(&root.join(i.to_string())))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    Ok((
        cfg,
        splits,
        Components {
            joint,
            dcca,
            posteriors,
            classifiers,
        },
    ))
}
