use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::store::Manifest;

/// Metrics of one evaluated model. Tables are keyed by direction, e.g.
/// `1->0` or `0,1->2`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    /// Mean importance-sampled `ln p(X)` per test sample.
    pub joint_ll: Option<f64>,
    pub cond_ll: BTreeMap<String, f64>,
    pub coherence: BTreeMap<String, f64>,
    pub fid: BTreeMap<String, f64>,
    pub vi_bound_violation_rate: Option<f64>,
    /// Config hash, seeds, sample counts, feature extractor and the like.
    pub metadata: BTreeMap<String, String>,
}

impl EvalReport {
    pub fn validate(&self) -> Result<()> {
        let values = self
            .joint_ll
            .iter()
            .chain(self.vi_bound_violation_rate.iter())
            .chain(self.cond_ll.values())
            .chain(self.coherence.values())
            .chain(self.fid.values());
        for v in values {
            if !v.is_finite() {
                return Err(Error::InvalidConfig(format!("report holds a non-finite value {v}")));
            }
        }
        for (k, &c) in &self.coherence {
            if !(0.0..=1.0).contains(&c) {
                return Err(Error::InvalidConfig(format!("coherence {k} = {c} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn to_manifest(&self) -> Manifest {
        let mut m = Manifest::new();
        m.set("kind", "eval_report");
        for (k, v) in &self.metadata {
            m.set(format!("meta.{k}"), v);
        }
        if let Some(v) = self.joint_ll {
            m.set("joint_ll", v);
        }
        for (prefix, table) in [("cond_ll", &self.cond_ll), ("coherence", &self.coherence), ("fid", &self.fid)] {
            for (k, v) in table {
                m.set(format!("{prefix}.{k}"), v);
            }
        }
        if let Some(v) = self.vi_bound_violation_rate {
            m.set("vi_bound_violation_rate", v);
        }
        m
    }

    pub fn from_manifest(m: &Manifest) -> Result<Self> {
        if m.get("kind") != Some("eval_report") {
            return Err(Error::InvalidConfig("not an evaluation report".into()));
        }
        let mut r = Self::default();
        let num = |k: &str, v: &str| -> Result<f64> {
            v.parse()
                .map_err(|_| Error::InvalidConfig(format!("report entry {k} is not a number: {v}")))
        };
        for (k, v) in m.entries() {
            if let Some(rest) = k.strip_prefix("meta.") {
                r.metadata.insert(rest.to_string(), v.to_string());
            } else if let Some(rest) = k.strip_prefix("cond_ll.") {
                r.cond_ll.insert(rest.to_string(), num(k, v)?);
            } else if let Some(rest) = k.strip_prefix("coherence.") {
                r.coherence.insert(rest.to_string(), num(k, v)?);
            } else if let Some(rest) = k.strip_prefix("fid.") {
                r.fid.insert(rest.to_string(), num(k, v)?);
            } else if k == "joint_ll" {
                r.joint_ll = Some(num(k, v)?);
            } else if k == "vi_bound_violation_rate" {
                r.vi_bound_violation_rate = Some(num(k, v)?);
            }
        }
        Ok(r)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.validate()?;
        self.to_manifest().write(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_manifest(&Manifest::read(path)?)
    }
}
