use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::{s, Array2, Axis};

use super::config::ExperimentConfig;
use super::eval::{direction_slug, directions, generator};
use super::pipeline::{load_components, Components, Splits};
use super::plot::{image_grid, line_plot, scatter_plot, shade, Frame, ImageLayout, PALETTE};
use super::record::RunRecord;
use crate::error::Result;
use crate::evaluation::{direction_key, CrossModalGenerator};

/// Training samples shown in latent scatter plots.
const SCATTER_POINTS: usize = 100;
/// Source columns and generated rows of each generation grid.
const GRID_COLUMNS: usize = 8;
const GRID_ROWS: usize = 4;

/// Writes `metrics/summary.txt` and `plots/*.png` for a finished run under
/// `out_dir`, loading the models from the run's checkpoints. Returns the
/// written files.
pub fn render_report(record: &RunRecord, out_dir: &Path) -> Result<Vec<PathBuf>> {
    match load_components(&record.run_dir) {
        Ok((cfg, splits, c)) => render_with(record, &cfg, &splits, &c, out_dir),
        Err(e) => {
            log::warn!("cannot load models of {}: {e}; writing metrics only", record.run_dir.display());
            let path = out_dir.join("metrics").join("summary.txt");
            std::fs::create_dir_all(out_dir.join("metrics"))?;
            std::fs::write(&path, summary_text(record, &[format!("plots skipped: {e}")]))?;
            Ok(vec![path])
        }
    }
}

pub(crate) fn render_with(
    record: &RunRecord,
    cfg: &ExperimentConfig,
    splits: &Splits,
    c: &Components,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let plots = out_dir.join("plots");
    let mut written = Vec::new();
    let mut notes = Vec::new();

    for (name, curve) in &record.loss_curves {
        let p = plots.join(format!("loss_{name}.png"));
        line_plot(&[(curve, PALETTE[0])], &p)?;
        notes.push(format!("plots/loss_{name}.png: {name} loss per epoch, {} epochs", curve.len()));
        written.push(p);
    }

    let d = c.joint.latent_dim;
    let n = SCATTER_POINTS.min(splits.train.len());
    let sample = splits.train.split_at(n).0;
    let (mean, _) = c.joint.encode(&sample.modalities)?;
    let xy: Vec<(f64, f64)> = (0..n)
        .map(|r| (mean[(r, 0)], if d > 1 { mean[(r, 1)] } else { 0.0 }))
        .collect();
    let colors = point_colors(&sample);
    let points: Vec<(f64, f64, [u8; 3])> = xy.iter().zip(&colors).map(|(&(x, y), &c)| (x, y, c)).collect();
    let frame = Frame::fit(xy.iter().map(|p| p.0), xy.iter().map(|p| p.1), 420, 420);
    let p = plots.join("latent_scatter.png");
    scatter_plot(&points, &frame, None, &p)?;
    notes.push(format!(
        "plots/latent_scatter.png: joint-encoder means of {n} training samples, colored by label, darker for larger factor 0; x in [{:.2}, {:.2}], y in [{:.2}, {:.2}]{}",
        frame.x.0,
        frame.x.1,
        frame.y.0,
        frame.y.1,
        if d > 2 { "; first two latent coordinates" } else { "" }
    ));
    written.push(p);

    if d == 2 {
        for i in 0..c.posteriors.n_modalities() {
            let input = c.posteriors.conditioning(i, &sample.modalities[i].slice(s![..1, ..]).to_owned(), c.dcca.as_ref())?;
            let stack = &c.posteriors.stacks[i];
            let cond = stack.condition(&input);
            let density = |z: &Array2<f64>| stack.log_density_conditioned(z, &cond).mapv(f64::exp).to_vec();
            let p = plots.join(format!("posterior_density_{i}.png"));
            scatter_plot(&points, &frame, Some(&density), &p)?;
            notes.push(format!(
                "plots/posterior_density_{i}.png: density of the modality-{i} posterior given training sample 0, over the latent scatter"
            ));
            written.push(p);
        }
    } else {
        notes.push(format!("posterior density heatmaps skipped: latent dimension is {d}, not 2"));
    }

    let test = &splits.test;
    let cols = GRID_COLUMNS.min(test.len());
    let head = test.split_at(cols).0;
    let gen = generator(cfg, c, GRID_ROWS);
    for (k, (sources, target)) in directions(test.n_modalities()).into_iter().enumerate() {
        let (Some(src_layout), Some(tgt_layout)) = (
            ImageLayout::from_shape(&test.specs[sources[0]].shape),
            ImageLayout::from_shape(&test.specs[target].shape),
        ) else {
            continue;
        };
        let observed: Vec<Array2<f64>> = sources.iter().map(|&i| head.modalities[i].clone()).collect();
        let out = gen.generate(&sources, &observed, target, GRID_ROWS, cfg.seed.wrapping_add(0x9a1d + k as u64))?;
        // Rows of `out` are sample-major; regroup so grid row `r` holds draw `r` of every sample.
        let rows: Vec<Array2<f64>> = (0..GRID_ROWS)
            .map(|r| out.select(Axis(0), &(0..cols).map(|s| s * GRID_ROWS + r).collect::<Vec<_>>()))
            .collect();
        let mut grid = vec![(&head.modalities[sources[0]], src_layout)];
        grid.extend(rows.iter().map(|r| (r, tgt_layout)));
        let slug = direction_slug(&sources, target);
        let p = plots.join(format!("generation_{slug}.png"));
        image_grid(&grid, &p)?;
        notes.push(format!(
            "plots/generation_{slug}.png: first row holds test samples of modality {}; the next {GRID_ROWS} rows are generations of modality {target} ({})",
            sources[0],
            direction_key(&sources, target)
        ));
        written.push(p);
    }

    std::fs::create_dir_all(out_dir.join("metrics"))?;
    let path = out_dir.join("metrics").join("summary.txt");
    std::fs::write(&path, summary_text(record, &notes))?;
    written.push(path);
    Ok(written)
}

fn point_colors(ds: &crate::data::MultimodalDataset) -> Vec<[u8; 3]> {
    let labels = ds.labels.clone().unwrap_or_else(|| vec![0; ds.len()]);
    let mut classes = labels.clone();
    classes.sort_unstable();
    classes.dedup();
    let size = ds.factors.as_ref().map(|f| f.column(0).to_owned());
    let (lo, hi) = size
        .as_ref()
        .map(|s| s.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v))))
        .unwrap_or((0.0, 1.0));
    labels
        .iter()
        .enumerate()
        .map(|(r, l)| {
            let base = PALETTE[classes.binary_search(l).unwrap_or(0) % PALETTE.len()];
            let t = match &size {
                Some(s) if hi > lo => 0.35 + 0.65 * (s[r] - lo) / (hi - lo),
                _ => 1.0,
            };
            shade(base, t)
        })
        .collect()
}

/// Human-readable metrics, stage timings and plot captions.
pub fn summary_text(record: &RunRecord, notes: &[String]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "run: {}", record.run_dir.display());
    let _ = writeln!(s, "config hash: {}", record.config_hash);
    let _ = writeln!(s, "variant: {}  seed: {}", record.variant, record.seed);
    let _ = writeln!(s, "\nstages:");
    for st in &record.stages {
        let _ = writeln!(
            s,
            "  {:<12} {:>9.1}s{}",
            st.stage.name(),
            st.seconds,
            if st.resumed { "  (resumed)" } else { "" }
        );
    }
    for (name, c) in &record.loss_curves {
        if let (Some(first), Some(last)) = (c.first(), c.last()) {
            let _ = writeln!(s, "  {name} loss: {first:.4} -> {last:.4}");
        }
    }
    let _ = writeln!(s, "\nmetrics:");
    match &record.report {
        None => {
            let _ = writeln!(s, "  evaluation not run");
        }
        Some(r) => {
            if let Some(v) = r.joint_ll {
                let _ = writeln!(s, "  joint log-likelihood: {v:.4}");
            }
            for (title, table) in [
                ("conditional log-likelihood", &r.cond_ll),
                ("coherence", &r.coherence),
                ("FID", &r.fid),
            ] {
                if !table.is_empty() {
                    let _ = writeln!(s, "  {title}:");
                    for (k, v) in table {
                        let _ = writeln!(s, "    {k:<10} {v:.4}");
                    }
                }
            }
            if let Some(v) = r.vi_bound_violation_rate {
                let _ = writeln!(s, "  information-bound violation rate: {v:.4}");
            }
            if let Some(e) = r.metadata.get("extractor.0") {
                let _ = writeln!(s, "  FID features: {e} (one extractor per target modality)");
            }
        }
    }
    if !notes.is_empty() {
        let _ = writeln!(s, "\nplots:");
        for n in notes {
            let _ = writeln!(s, "  {n}");
        }
    }
    s
}
