use std::time::Instant;

use ndarray::{s, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ExperimentConfig;
use super::pipeline::{Components, Runner, Splits};
use super::record::Stage;
use crate::data::MultimodalDataset;
use crate::error::Result;
use crate::evaluation::{
    coherence_of, direction_key, estimate_cond_ll, estimate_joint_ll, fid, generate_direction, vi_bound_check,
    EvalReport, PipelineGenerator,
};
use crate::store::{self, Manifest};

const EVAL_SALT: u64 = 0xe7a1;
/// Generations kept on disk per direction.
const KEPT_SAMPLES: usize = 8;

/// Every `(sources, target)` with a non-empty source subset excluding the target.
pub fn directions(m: usize) -> Vec<(Vec<usize>, usize)> {
    let mut out = Vec::new();
    for target in 0..m {
        let others: Vec<usize> = (0..m).filter(|&i| i != target).collect();
        for mask in 1u32..(1 << others.len()) {
            let s: Vec<usize> = others
                .iter()
                .enumerate()
                .filter(|(k, _)| mask & (1 << k) != 0)
                .map(|(_, &i)| i)
                .collect();
            out.push((s, target));
        }
    }
    out.sort_by(|a, b| a.0.len().cmp(&b.0.len()).then(a.cmp(b)));
    out
}

/// Directory-safe form of a direction key.
pub fn direction_slug(sources: &[usize], target: usize) -> String {
    direction_key(sources, target).replace("->", "-to-").replace(',', "+")
}

pub(crate) fn generator<'a>(cfg: &ExperimentConfig, c: &'a Components, n_per: usize) -> PipelineGenerator<'a> {
    PipelineGenerator {
        joint: &c.joint,
        posteriors: &c.posteriors,
        dcca: c.dcca.as_ref(),
        hmc: cfg.hmc_config(n_per),
        sample_likelihood: cfg.eval.sample_likelihood,
    }
}

fn head(ds: &MultimodalDataset, n: usize) -> MultimodalDataset {
    ds.split_at(n.min(ds.len())).0
}

pub(crate) fn evaluate_stage(r: &mut Runner<'_>, splits: &Splits, c: &Components, key: &str) -> Result<EvalReport> {
    let path = r.dir.join("metrics").join("report.txt");
    let stamp = r.dir.join("metrics").join("eval_stage.txt");
    if let (Ok(report), Ok(m)) = (EvalReport::read(&path), Manifest::read(&stamp)) {
        if report.metadata.get("eval_key").map(String::as_str) == Some(key) {
            let secs = m.parse_value("seconds").unwrap_or(0.0);
            r.note(Stage::Eval, key, secs, true, None);
            return Ok(report);
        }
    }
    let t = Instant::now();
    let mut report = evaluate(r.cfg, splits, c, r.dir)?;
    report.metadata.insert("eval_key".into(), key.to_string());
    report.write(&path)?;
    let secs = t.elapsed().as_secs_f64();
    let mut m = Manifest::new();
    m.set("seconds", secs);
    m.write(&stamp)?;
    r.note(Stage::Eval, key, secs, false, None);
    Ok(report)
}

/// Likelihoods, coherence, FID and the information bound on the test split.
/// Generations for the first few test samples go to `run_dir/samples`.
pub fn evaluate(cfg: &ExperimentConfig, splits: &Splits, c: &Components, run_dir: &std::path::Path) -> Result<EvalReport> {
    let test = &splits.test;
    let m = test.n_modalities();
    let mut report = EvalReport::default();
    let meta = &mut report.metadata;
    meta.insert("config_hash".into(), cfg.hash());
    meta.insert("seed".into(), cfg.seed.to_string());
    meta.insert("variant".into(), cfg.variant.name().into());
    meta.insert("dataset_id".into(), splits.dataset_id.clone());
    meta.insert(
        "model_id".into(),
        format!("{}:{}", &c.joint.parameter_hash()[..12], &c.posteriors.parameter_hash()[..12]),
    );
    meta.insert("n_is".into(), cfg.eval.n_is.to_string());
    meta.insert("n_mc".into(), cfg.eval.n_mc.to_string());
    if let Some(d) = &c.dcca {
        meta.insert("dcca_d_keep".into(), d.d_keep.to_string());
        meta.insert(
            "dcca_spectrum".into(),
            d.spectrum.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(","),
        );
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ EVAL_SALT);

    let ll_set = head(test, cfg.eval.n_ll);
    if !ll_set.is_empty() {
        let mut total = 0.0;
        for r in 0..ll_set.len() {
            total += estimate_joint_ll(&c.joint, &ll_set.batch(&[r]), cfg.eval.n_is, &mut rng)?.value;
        }
        report.joint_ll = Some(total / ll_set.len() as f64);
        for i in 0..m {
            let conds = c.posteriors.conditioning(i, &ll_set.modalities[i], c.dcca.as_ref())?;
            for j in (0..m).filter(|&j| j != i) {
                let mut total = 0.0;
                for r in 0..ll_set.len() {
                    let cond = conds.slice(s![r..r + 1, ..]).to_owned();
                    let x = ll_set.modalities[j].slice(s![r..r + 1, ..]).to_owned();
                    total += estimate_cond_ll(&c.joint, &c.posteriors.stacks[i], j, &cond, &x, cfg.eval.n_mc, &mut rng)?.value;
                }
                report.cond_ll.insert(direction_key(&[i], j), total / ll_set.len() as f64);
            }
        }
    }

    if c.classifiers.len() == m {
        let coh_set = head(test, cfg.eval.n_coherence);
        let labels = coh_set.labels.clone().unwrap_or_default();
        let n_per = cfg.eval.coherence_samples;
        let generator = generator(cfg, c, n_per);
        for j in 0..m {
            let clf = &c.classifiers[j];
            report.metadata.insert(format!("extractor.{j}"), clf.extractor_id());
            report
                .metadata
                .insert(format!("classifier_accuracy.{j}"), clf.accuracy.unwrap_or(f64::NAN).to_string());
        }
        for (k, (sources, target)) in directions(m).into_iter().enumerate() {
            let dkey = direction_key(&sources, target);
            let clf = &c.classifiers[target];
            if let Err(e) = clf.ensure_usable() {
                log::warn!("skipping coherence {dkey}: {e}");
                report.metadata.insert(format!("skipped.{dkey}"), e.to_string());
                continue;
            }
            let seed = cfg.seed.wrapping_add(0xc0de + k as u64 * 104_729);
            let generated = generate_direction(&generator, &coh_set, &sources, target, n_per, seed)?;
            report.coherence.insert(dkey.clone(), coherence_of(clf, &generated, &labels, n_per)?);
            let feats_gen = clf.features(&generated);
            if feats_gen.nrows() > feats_gen.ncols() && coh_set.len() > feats_gen.ncols() {
                let feats_real = clf.features(&coh_set.modalities[target]);
                report.fid.insert(dkey.clone(), fid(&feats_real, &feats_gen)?);
            } else {
                log::warn!("too few generations for FID {dkey}");
            }
            save_samples(run_dir, &sources, target, &coh_set, &generated, n_per)?;
        }
    }

    if m == 2 && cfg.eval.vi_pairs > 0 {
        let vi_set = head(test, cfg.eval.vi_pairs);
        let mut violations = 0usize;
        for r in 0..vi_set.len() {
            let b = vi_bound_check(&c.joint, &c.posteriors, c.dcca.as_ref(), &vi_set.batch(&[r]), cfg.eval.n_mc, &mut rng)?;
            violations += (!b.satisfied) as usize;
        }
        report.vi_bound_violation_rate = Some(violations as f64 / vi_set.len() as f64);
    }
    report.validate()?;
    Ok(report)
}

/// Source rows and their generations for the first few test samples.
fn save_samples(
    run_dir: &std::path::Path,
    sources: &[usize],
    target: usize,
    data: &MultimodalDataset,
    generated: &Array2<f64>,
    n_per: usize,
) -> Result<()> {
    let n = KEPT_SAMPLES.min(data.len());
    let dir = run_dir.join("samples").join(direction_slug(sources, target));
    let gen = generated.slice(s![..n * n_per, ..]).to_owned();
    let srcs: Vec<Array2<f64>> = sources
        .iter()
        .map(|&i| data.modalities[i].select(Axis(0), &(0..n).collect::<Vec<_>>()))
        .collect();
    let mut arrays: Vec<(String, &Array2<f64>)> = vec![("generated".into(), &gen)];
    for (k, a) in sources.iter().zip(&srcs) {
        arrays.push((format!("source.{k}"), a));
    }
    let mut m = Manifest::new();
    m.set("kind", "generated_samples");
    m.set("direction", direction_key(sources, target));
    m.set("n_per_sample", n_per);
    m.set("target_shape", data.specs[target].shape_string());
    store::save_bundle(&dir, &m, &arrays)
}
