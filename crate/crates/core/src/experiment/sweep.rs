use std::collections::BTreeSet;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};

use super::config::{ExperimentConfig, Variant};
use super::pipeline::{checkpoint_dir, run_pipeline};
use super::plot::{line_plot, PALETTE};
use super::record::{RunRecord, Stage};
use crate::dcca::EmbeddingDimPolicy;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    /// Number of flow blocks; 0 is the Gaussian posterior.
    FlowDepth,
    /// Number of DCCA embedding dimensions kept.
    DccaDim,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::FlowDepth => "flow_depth",
            SweepAxis::DccaDim => "dcca_dim",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "flow_depth" => Some(SweepAxis::FlowDepth),
            "dcca_dim" => Some(SweepAxis::DccaDim),
            _ => None,
        }
    }

    /// `base` with the axis set to `v`.
    pub fn apply(self, base: &ExperimentConfig, v: usize) -> Result<ExperimentConfig> {
        let mut cfg = base.clone();
        match self {
            SweepAxis::FlowDepth => {
                cfg.flow.n_blocks = v;
                cfg.variant = match (base.variant, v) {
                    (Variant::Jnf, 0) => Variant::JmvaeGaussian,
                    (Variant::JmvaeGaussian, v) if v > 0 => Variant::Jnf,
                    (other, _) => other,
                };
            }
            SweepAxis::DccaDim => {
                let Some(d) = cfg.dcca.as_mut() else {
                    return Err(Error::InvalidConfig("the dcca_dim sweep needs a jnf_dcca base config".into()));
                };
                d.d_keep = EmbeddingDimPolicy::Fixed(v);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub value: usize,
    pub record: RunRecord,
}

/// One evaluated run per axis value.
#[derive(Clone, Debug)]
pub struct SweepTable {
    pub axis: SweepAxis,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    fn columns(&self, pick: impl Fn(&crate::evaluation::EvalReport) -> Vec<String>) -> Vec<String> {
        let set: BTreeSet<String> = self
            .rows
            .iter()
            .filter_map(|r| r.record.report.as_ref())
            .flat_map(&pick)
            .collect();
        set.into_iter().collect()
    }

    /// Coherence per direction, one row per axis value.
    pub fn coherence(&self, direction: &str) -> Vec<Option<f64>> {
        self.rows
            .iter()
            .map(|r| r.record.report.as_ref().and_then(|rep| rep.coherence.get(direction).copied()))
            .collect()
    }

    pub fn to_text(&self) -> String {
        let coh = self.columns(|r| r.coherence.keys().cloned().collect());
        let fid = self.columns(|r| r.fid.keys().cloned().collect());
        let mut s = String::new();
        let _ = write!(s, "{:<12}{:>12}", self.axis.name(), "joint_ll");
        for k in &coh {
            let _ = write!(s, "{:>14}", format!("coh {k}"));
        }
        for k in &fid {
            let _ = write!(s, "{:>14}", format!("fid {k}"));
        }
        s.push('\n');
        let cell = |v: Option<f64>| v.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
        for row in &self.rows {
            let rep = row.record.report.as_ref();
            let _ = write!(s, "{:<12}{:>12}", row.value, cell(rep.and_then(|r| r.joint_ll)));
            for k in &coh {
                let _ = write!(s, "{:>14}", cell(rep.and_then(|r| r.coherence.get(k).copied())));
            }
            for k in &fid {
                let _ = write!(s, "{:>14}", cell(rep.and_then(|r| r.fid.get(k).copied())));
            }
            s.push('\n');
        }
        s
    }
}

fn copy_dir(from: &Path, to: &Path) -> Result<()> {
    std::fs::create_dir_all(to)?;
    for entry in std::fs::read_dir(from)? {
        let entry = entry?;
        let target = to.join(entry.file_name());
        if entry.file_type()?.is_dir() {
            copy_dir(&entry.path(), &target)?;
        } else {
            std::fs::copy(entry.path(), target)?;
        }
    }
    Ok(())
}

/// Seeds `to` with the checkpoints of `from` that the swept field cannot
/// change. The stage keys decide whether they are actually reused.
fn share_checkpoints(from: &Path, to: &Path) -> Result<()> {
    let src = from.join("checkpoints");
    let dst = to.join("checkpoints");
    std::fs::create_dir_all(&dst)?;
    if src.join("data.txt").exists() {
        std::fs::copy(src.join("data.txt"), dst.join("data.txt"))?;
    }
    for stage in [Stage::Joint, Stage::Dcca, Stage::Classifiers] {
        let dir = checkpoint_dir(from, stage);
        if dir.is_dir() && !checkpoint_dir(to, stage).exists() {
            copy_dir(&dir, &checkpoint_dir(to, stage))?;
        }
    }
    Ok(())
}

/// Runs the full pipeline once per value under `root/<axis>=<value>/` and
/// writes `root/sweep.txt` with coherence and FID plots against the axis.
pub fn ablation_sweep(base: &ExperimentConfig, axis: SweepAxis, values: &[usize], root: &Path) -> Result<SweepTable> {
    ablation_sweep_with(base, axis, values, root, 1)
}

/// As [`ablation_sweep`], running up to `threads` values at once after the
/// first one has produced the shared checkpoints.
pub fn ablation_sweep_with(
    base: &ExperimentConfig,
    axis: SweepAxis,
    values: &[usize],
    root: &Path,
    threads: usize,
) -> Result<SweepTable> {
    if values.is_empty() {
        return Err(Error::InvalidConfig("empty sweep".into()));
    }
    let configs: Vec<ExperimentConfig> = values.iter().map(|&v| axis.apply(base, v)).collect::<Result<_>>()?;
    let dirs: Vec<PathBuf> = values.iter().map(|v| root.join(format!("{}={v}", axis.name()))).collect();
    let run = |k: usize| -> Result<RunRecord> {
        if k > 0 {
            share_checkpoints(&dirs[0], &dirs[k])?;
        }
        log::info!("sweep {axis}={}", values[k]);
        run_pipeline(&configs[k], &dirs[k])
    };
    let mut records = vec![run(0)?];
    let rest: Vec<usize> = (1..values.len()).collect();
    for chunk in rest.chunks(threads.max(1)) {
        let out: Vec<Result<RunRecord>> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk.iter().map(|&k| s.spawn(move || run(k))).collect();
            handles.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect()
        });
        for r in out {
            records.push(r?);
        }
    }
    let rows = values
        .iter()
        .zip(records)
        .map(|(&value, record)| SweepRow { value, record })
        .collect();
    let table = SweepTable { axis, rows };
    std::fs::create_dir_all(root)?;
    std::fs::write(root.join("sweep.txt"), table.to_text())?;

    for (name, pick) in [
        ("coherence", (|r: &crate::evaluation::EvalReport| r.coherence.clone()) as fn(&_) -> _),
        ("fid", |r: &crate::evaluation::EvalReport| r.fid.clone()),
    ] {
        let keys = table.columns(|r| pick(r).keys().cloned().collect());
        let series: Vec<Vec<f64>> = keys
            .iter()
            .map(|k| {
                table
                    .rows
                    .iter()
                    .map(|row| row.record.report.as_ref().and_then(|r| pick(r).get(k).copied()).unwrap_or(f64::NAN))
                    .collect()
            })
            .collect();
        if series.is_empty() {
            continue;
        }
        let lines: Vec<(&[f64], _)> = series.iter().zip(PALETTE.iter().cycle()).map(|(s, &c)| (s.as_slice(), c)).collect();
        line_plot(&lines, &root.join(format!("{name}_vs_{}.png", axis.name())))?;
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flow_depth_switches_between_gaussian_and_flow() {
        let base = ExperimentConfig::parse("variant=jnf\n").unwrap();
        let g = SweepAxis::FlowDepth.apply(&base, 0).unwrap();
        assert_eq!(g.variant, Variant::JmvaeGaussian);
        let f = SweepAxis::FlowDepth.apply(&g, 3).unwrap();
        assert_eq!((f.variant, f.flow.n_blocks), (Variant::Jnf, 3));
    }

    #[test]
    fn dcca_dim_needs_a_dcca_base_and_a_valid_size() {
        let base = ExperimentConfig::parse("variant=jnf\n").unwrap();
        assert!(SweepAxis::DccaDim.apply(&base, 2).is_err());
        let d = ExperimentConfig::parse("variant=jnf_dcca\ndcca.output_dim=4\n").unwrap();
        assert!(SweepAxis::DccaDim.apply(&d, 5).is_err());
        let c = SweepAxis::DccaDim.apply(&d, 3).unwrap();
        assert_eq!(c.dcca.unwrap().d_keep, EmbeddingDimPolicy::Fixed(3));
        assert_eq!(SweepAxis::parse("dcca_dim"), Some(SweepAxis::DccaDim));
    }
}
