use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use jnf::data::{generate_toy_dataset, load_unimodal, pair_by_label, save_dataset};
use jnf::evaluation::{direction_key, CrossModalGenerator, PipelineGenerator};
use jnf::experiment::config::DatasetSource;
use jnf::experiment::{
    ablation_sweep_with, load_components, render_report, run_pipeline, run_until, ExperimentConfig, RunRecord,
    Stage, SweepAxis,
};
use jnf::store::{self, Dtype, Manifest};
use ndarray::{s, Array2};

#[derive(Parser)]
#[command(name = "jnf", version, about = "Train and evaluate joint multimodal VAEs with flow posteriors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// key=value config file; omitted keys take their defaults.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Overrides applied after the file, e.g. `--set flow.n_blocks=3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> jnf::Result<ExperimentConfig> {
        let mut text = match &self.config {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| jnf::Error::InvalidConfig(format!("cannot read {}: {e}", p.display())))?,
            None => String::new(),
        };
        for o in &self.overrides {
            if !o.contains('=') {
                return Err(jnf::Error::InvalidConfig(format!("override `{o}` is not key=value")));
            }
            text.push('\n');
            text.push_str(o);
        }
        let cfg = ExperimentConfig::parse(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Run directory; checkpoints found there are reused when their keys match.
    #[arg(long)]
    run_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the squares/circles toy dataset described by the config.
    ToyGen {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "f32")]
        dtype: String,
    },
    /// Pair unimodal datasets sharing labels into one multimodal dataset.
    Ingest {
        /// Unimodal dataset directories, one per modality.
        #[arg(long, num_args = 2.., required = true)]
        inputs: Vec<PathBuf>,
        /// Samples each base item appears in.
        #[arg(long, default_value_t = 1)]
        matches: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "f32")]
        dtype: String,
    },
    /// Step 1: train the joint encoder and decoders.
    TrainJoint(RunArgs),
    /// Train the DCCA encoders (jnf_dcca only).
    TrainDcca(RunArgs),
    /// Step 2: train the unimodal posteriors against the frozen joint encoder.
    TrainPosteriors(RunArgs),
    /// Train the per-modality classifiers used for coherence and FID.
    TrainClassifiers(RunArgs),
    /// Run every stage, evaluate, and write metrics and plots.
    Eval(RunArgs),
    /// Generate one modality from others with a trained run.
    Sample {
        #[arg(long)]
        run_dir: PathBuf,
        /// Comma-separated conditioning modalities.
        #[arg(long, value_delimiter = ',', required = true)]
        sources: Vec<usize>,
        #[arg(long)]
        target: usize,
        /// Test samples to condition on, from the start of the test split.
        #[arg(long, default_value_t = 8)]
        n: usize,
        /// Generations per conditioning sample.
        #[arg(long, default_value_t = 4)]
        per_sample: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the pipeline once per value of one axis.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        axis: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<usize>,
        #[arg(long)]
        root: PathBuf,
        /// Values trained at once after the first.
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Re-render metrics text and plots of a finished run.
    Report {
        #[arg(long)]
        run_dir: PathBuf,
        /// Defaults to the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn dtype(s: &str) -> jnf::Result<Dtype> {
    Dtype::parse(s).ok_or_else(|| jnf::Error::InvalidConfig(format!("unknown dtype `{s}`, expected f32 or f64")))
}

fn stage_run(args: &RunArgs, last: Stage) -> anyhow::Result<()> {
    let cfg = args.config.load()?;
    let (record, _, _) = run_until(&cfg, &args.run_dir, last)?;
    for s in &record.stages {
        println!("{:<12} {:>8.1}s {}", s.stage.name(), s.seconds, if s.resumed { "resumed" } else { "trained" });
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::ToyGen { config, out, dtype: d } => {
            let cfg = config.load()?;
            let DatasetSource::Toy(toy) = &cfg.dataset.source else {
                return Err(jnf::Error::InvalidConfig("toy-gen needs dataset.source=toy".into()).into());
            };
            let ds = generate_toy_dataset(toy)?;
            let mut prov = Manifest::new();
            prov.set("generator", "toy");
            prov.set("config_hash", cfg.hash());
            save_dataset(&out, &ds, dtype(&d)?, &prov)?;
            println!("wrote {} samples to {}", ds.len(), out.display());
        }
        Command::Ingest {
            inputs,
            matches,
            seed,
            out,
            dtype: d,
        } => {
            let d = dtype(&d)?;
            let sets = inputs
                .iter()
                .map(|p| load_unimodal(p).with_context(|| format!("reading {}", p.display())))
                .collect::<anyhow::Result<Vec<_>>>()?;
            let ds = pair_by_label(&sets, matches, seed)?;
            let mut prov = Manifest::new();
            prov.set("generator", "pair_by_label");
            prov.set("matches_per_item", matches);
            prov.set("seed", seed);
            for (i, p) in inputs.iter().enumerate() {
                prov.set(format!("source.{i}"), p.display());
            }
            save_dataset(&out, &ds, d, &prov)?;
            println!("wrote {} paired samples to {}", ds.len(), out.display());
        }
        Command::TrainJoint(a) => stage_run(&a, Stage::Joint)?,
        Command::TrainDcca(a) => {
            if a.config.load()?.dcca.is_none() {
                return Err(jnf::Error::InvalidConfig("train-dcca needs variant=jnf_dcca".into()).into());
            }
            stage_run(&a, Stage::Dcca)?
        }
        Command::TrainPosteriors(a) => stage_run(&a, Stage::Posteriors)?,
        Command::TrainClassifiers(a) => stage_run(&a, Stage::Classifiers)?,
        Command::Eval(a) => {
            let cfg = a.config.load()?;
            let record = run_pipeline(&cfg, &a.run_dir)?;
            print!("{}", std::fs::read_to_string(a.run_dir.join("metrics").join("summary.txt"))?);
            if record.report.is_none() {
                log::warn!("evaluation disabled in the config");
            }
        }
        Command::Sample {
            run_dir,
            sources,
            target,
            n,
            per_sample,
            seed,
            out,
        } => sample(&run_dir, &sources, target, n, per_sample, seed, &out)?,
        Command::Sweep {
            config,
            axis,
            values,
            root,
            threads,
        } => {
            let cfg = config.load()?;
            let axis = SweepAxis::parse(&axis)
                .ok_or_else(|| jnf::Error::InvalidConfig(format!("unknown axis `{axis}`, expected flow_depth or dcca_dim")))?;
            for &v in &values {
                axis.apply(&cfg, v)?;
            }
            let table = ablation_sweep_with(&cfg, axis, &values, &root, threads)?;
            print!("{}", table.to_text());
        }
        Command::Report { run_dir, out } => {
            let record = RunRecord::read(&run_dir)?;
            for f in render_report(&record, out.as_deref().unwrap_or(&run_dir))? {
                println!("{}", f.display());
            }
        }
    }
    Ok(())
}

fn sample(
    run_dir: &Path,
    sources: &[usize],
    target: usize,
    n: usize,
    per_sample: usize,
    seed: u64,
    out: &Path,
) -> anyhow::Result<()> {
    let (cfg, splits, c) = load_components(run_dir)?;
    let m = splits.test.n_modalities();
    if target >= m || sources.is_empty() || sources.iter().any(|&i| i >= m || i == target) {
        bail!("sources {sources:?} and target {target} must be distinct modalities below {m}");
    }
    let n = n.min(splits.test.len());
    let observed: Vec<Array2<f64>> = sources
        .iter()
        .map(|&i| splits.test.modalities[i].slice(s![..n, ..]).to_owned())
        .collect();
    let gen = PipelineGenerator {
        joint: &c.joint,
        posteriors: &c.posteriors,
        dcca: c.dcca.as_ref(),
        hmc: cfg.hmc_config(per_sample),
        sample_likelihood: cfg.eval.sample_likelihood,
    };
    let generated = gen.generate(sources, &observed, target, per_sample, seed)?;
    let mut meta = Manifest::new();
    meta.set("kind", "generated_samples");
    meta.set("direction", direction_key(sources, target));
    meta.set("n_per_sample", per_sample);
    meta.set("target_shape", splits.test.specs[target].shape_string());
    meta.set("config_hash", cfg.hash());
    meta.set("seed", seed);
    let mut arrays = vec![("generated".to_string(), &generated)];
    for (k, a) in observed.iter().enumerate() {
        arrays.push((format!("source.{k}"), a));
    }
    store::save_bundle(out, &meta, &arrays)?;
    println!("wrote {} generations to {}", generated.nrows(), out.display());
    Ok(())
}

/// 2 for invalid configs, 3 for a failed pipeline stage, 1 otherwise.
fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<jnf::Error>() {
        Some(jnf::Error::InvalidConfig(_)) => 2,
        Some(jnf::Error::Stage { .. }) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
