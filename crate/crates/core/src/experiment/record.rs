use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::evaluation::EvalReport;
use crate::store::Manifest;

/// Pipeline stages in execution order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Data,
    Joint,
    Dcca,
    Posteriors,
    Classifiers,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Data,
        Stage::Joint,
        Stage::Dcca,
        Stage::Posteriors,
        Stage::Classifiers,
        Stage::Eval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Data => "data",
            Stage::Joint => "joint",
            Stage::Dcca => "dcca",
            Stage::Posteriors => "posteriors",
            Stage::Classifiers => "classifiers",
            Stage::Eval => "eval",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|st| st.name() == s)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageRecord {
    pub stage: Stage,
    /// Hash of everything the stage output depends on.
    pub key: String,
    /// Wall-clock seconds of the run that produced the checkpoint.
    pub seconds: f64,
    /// Loaded from an existing checkpoint instead of recomputed.
    pub resumed: bool,
}

/// Everything a pipeline run produced, traceable to its config hash.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub run_dir: PathBuf,
    pub config_hash: String,
    pub seed: u64,
    pub variant: String,
    pub stages: Vec<StageRecord>,
    pub loss_curves: BTreeMap<String, Vec<f64>>,
    pub report: Option<EvalReport>,
}

pub(crate) fn format_curve(c: &[f64]) -> String {
    c.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

pub(crate) fn parse_curve(s: &str) -> Option<Vec<f64>> {
    if s.is_empty() {
        return Some(Vec::new());
    }
    s.split(',').map(|v| v.parse().ok()).collect()
}

impl RunRecord {
    pub fn stage(&self, s: Stage) -> Option<&StageRecord> {
        self.stages.iter().find(|r| r.stage == s)
    }

    pub fn to_manifest(&self) -> Manifest {
        let mut m = Manifest::new();
        m.set("kind", "run_record");
        m.set("config_hash", &self.config_hash);
        m.set("seed", self.seed);
        m.set("variant", &self.variant);
        for r in &self.stages {
            m.set(format!("stage.{}.key", r.stage), &r.key);
            m.set(format!("stage.{}.seconds", r.stage), r.seconds);
            m.set(format!("stage.{}.resumed", r.stage), r.resumed);
        }
        for (k, c) in &self.loss_curves {
            m.set(format!("curve.{k}"), format_curve(c));
        }
        m
    }

    /// Writes `metrics/run.txt` under the run directory.
    pub fn write(&self) -> Result<()> {
        let dir = self.run_dir.join("metrics");
        std::fs::create_dir_all(&dir)?;
        self.to_manifest().write(&dir.join("run.txt"))
    }

    /// Reads `metrics/run.txt` and, when present, `metrics/report.txt`.
    pub fn read(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join("metrics").join("run.txt");
        let m = Manifest::read(&path)?;
        if m.get("kind") != Some("run_record") {
            return Err(Error::format(&path, "not a run record"));
        }
        let mut stages = Vec::new();
        for s in Stage::ALL {
            if let Some(key) = m.get(&format!("stage.{s}.key")) {
                stages.push(StageRecord {
                    stage: s,
                    key: key.to_string(),
                    seconds: m.parse_value(&format!("stage.{s}.seconds"))?,
                    resumed: m.parse_value(&format!("stage.{s}.resumed"))?,
                });
            }
        }
        let mut loss_curves = BTreeMap::new();
        for (k, v) in m.entries() {
            if let Some(name) = k.strip_prefix("curve.") {
                let c = parse_curve(v).ok_or_else(|| Error::format(&path, format!("bad curve {name}")))?;
                loss_curves.insert(name.to_string(), c);
            }
        }
        let report_path = run_dir.join("metrics").join("report.txt");
        let report = if report_path.exists() {
            Some(EvalReport::read(&report_path)?)
        } else {
            None
        };
        Ok(Self {
            run_dir: run_dir.to_path_buf(),
            config_hash: m.require("config_hash")?.to_string(),
            seed: m.parse_value("seed")?,
            variant: m.require("variant")?.to_string(),
            stages,
            loss_curves,
            report,
        })
    }
}
