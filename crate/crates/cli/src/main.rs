//! `radtrain`: synthetic data, splits, range test, training, ablation,
//! evaluation and reporting.
//!
//! Exit codes: 0 success, 1 invalid input or configuration, 2 divergence.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use radtrain::data::{
    generate_synthetic, group_split, parse_manifest, Dataset, Purpose, Split, SplitAssignment, SynthSpec,
    DEFAULT_FRACTIONS, MIN_SYNTH_SIDE,
};
use radtrain::labels::NUM_PATHOLOGIES;
use radtrain::metrics::{format_auc, format_table, AucResult, MetricsFile};
use radtrain::model::Model;
use radtrain::pipeline::artifacts::{
    read_metrics, read_text, write_metrics, write_sweep, write_text, METRICS_FILE,
};
use radtrain::pipeline::{
    evaluate_split, find_lr, load_checkpoint, run_ablation, run_training, PipelineConfig, RunOptions,
    RunOutcome, RunReport, Variant, RESUME_CHECKPOINT,
};
use radtrain::{Error, Result};

use crate::config::RunConfigFile;

#[derive(Debug, Parser)]
#[command(name = "radtrain", version, about = "Multi-label image classifier training pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic glyph dataset (PGM images + manifest.csv).
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long, default_value_t = 64)]
        side: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Standard deviation of additive Gaussian pixel noise.
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        /// One prior for every pathology, or 14 comma-separated priors.
        #[arg(long, value_delimiter = ',')]
        priors: Option<Vec<f64>>,
        /// Overwrite a non-empty output directory.
        #[arg(long)]
        force: bool,
    },
    /// Assign patients to train/val/test (70/10/20).
    Split {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the learning-rate range test at the first stage's size.
    LrFind {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one variant and write a run directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        variant: Option<Variant>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write a resumable checkpoint every N optimizer steps.
        #[arg(long)]
        checkpoint_every: Option<usize>,
        /// Stop after N optimizer steps, leaving a resumable checkpoint.
        #[arg(long)]
        stop_after: Option<usize>,
        /// Resume from a checkpoint written by --checkpoint-every/--stop-after.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Train Proposed, V1, V2 and V3 and write the comparison table.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute test metrics from a saved checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Run configuration; defaults to config.json next to the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output file; defaults to metrics.eval.json next to the checkpoint.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the per-class AUC table for one or more metrics/report files.
    Report {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// Column names, comma-separated; defaults to each file's directory name.
        #[arg(long, value_delimiter = ',')]
        names: Option<Vec<String>>,
        /// Also write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    radtrain::tune_allocator();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Some(hint) = hint(&e) {
                eprintln!("hint: {hint}");
            }
            ExitCode::from(if e.is_divergence() { 2 } else { 1 })
        }
    }
}

fn hint(e: &Error) -> Option<String> {
    match e {
        Error::Diverged { step, trace } => Some(format!(
            "loss became non-finite at step {step} after {} recorded steps; lower `lr` or set it to \"auto\"",
            trace.len().saturating_sub(1)
        )),
        Error::NonFiniteGradient { .. } => Some("lower the learning rate".into()),
        Error::NoDescendingRegion => {
            Some("the range test never improved the loss; lower `lr_finder.lr_start` or set a fixed `lr`".into())
        }
        Error::MissingImage { .. } => Some("every manifest row needs images/<image_id>.pgm".into()),
        Error::ArchitectureMismatch { .. } => {
            Some("the checkpoint was written for a different `pipeline.model` configuration".into())
        }
        _ => None,
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth {
            out,
            n,
            side,
            seed,
            noise,
            priors,
            force,
        } => synth(&out, n, side, seed, noise, priors, force),
        Command::Split { manifest, seed, out } => split(&manifest, seed, &out),
        Command::LrFind { config, seed, out } => lr_find(&config, seed, out.as_deref()),
        Command::Train {
            config,
            variant,
            seed,
            out,
            checkpoint_every,
            stop_after,
            resume,
        } => train(&config, variant, seed, out.as_deref(), checkpoint_every, stop_after, resume.as_deref()),
        Command::Ablate { config, seed, out } => ablate(&config, seed, out.as_deref()),
        Command::Eval { checkpoint, config, out } => eval(&checkpoint, config.as_deref(), out.as_deref()),
        Command::Report { files, names, csv } => report(&files, names, csv.as_deref()),
    }
}

fn synth(
    out: &Path,
    n: usize,
    side: usize,
    seed: u64,
    noise: f64,
    priors: Option<Vec<f64>>,
    force: bool,
) -> Result<()> {
    let non_empty = out.exists()
        && std::fs::read_dir(out)
            .map_err(|e| Error::io(out, e))?
            .next()
            .is_some();
    if non_empty && !force {
        return Err(Error::Config(format!(
            "{} exists and is not empty; pass --force to overwrite",
            out.display()
        )));
    }
    if side < MIN_SYNTH_SIDE {
        return Err(Error::Config(format!("--side must be at least {MIN_SYNTH_SIDE}")));
    }
    let mut spec = SynthSpec {
        n_images: n,
        side,
        noise_std: noise,
        ..SynthSpec::default()
    };
    match priors.as_deref() {
        None => {}
        Some([p]) => spec.class_priors = [*p; NUM_PATHOLOGIES],
        Some(ps) if ps.len() == NUM_PATHOLOGIES => spec.class_priors.copy_from_slice(ps),
        Some(ps) => {
            return Err(Error::Config(format!(
                "--priors takes 1 or {NUM_PATHOLOGIES} values, got {}",
                ps.len()
            )))
        }
    }
    let (records, images) = generate_synthetic(&spec, seed)?;
    if non_empty {
        std::fs::remove_dir_all(out).map_err(|e| Error::io(out, e))?;
    }
    Dataset::new(records, images)?.save(out)?;
    println!("wrote {n} images ({side}x{side}) to {}", out.display());
    Ok(())
}

fn split(manifest: &Path, seed: u64, out: &Path) -> Result<()> {
    let records = parse_manifest(&read_text(manifest)?)?;
    let s = group_split(&records, DEFAULT_FRACTIONS, seed)?;
    write_text(out, &s.to_csv())?;
    let counts = [Split::Train, Split::Val, Split::Test].map(|sp| s.patients_in(sp).len());
    println!(
        "{} patients: train {}, val {}, test {} -> {}",
        s.patients.len(),
        counts[0],
        counts[1],
        counts[2],
        out.display()
    );
    Ok(())
}

struct Loaded {
    cfg: RunConfigFile,
    ds: Dataset,
    splits: SplitAssignment,
}

fn load(config: &Path, seed: Option<u64>) -> Result<Loaded> {
    let cfg = RunConfigFile::load(config)?.materialized(seed)?;
    let ds = Dataset::load(&cfg.dataset)?;
    let splits = SplitAssignment::from_csv(&read_text(&cfg.splits)?)?;
    splits.covers(ds.records())?;
    Ok(Loaded { cfg, ds, splits })
}

fn lr_find(config: &Path, seed: Option<u64>, out: Option<&Path>) -> Result<()> {
    let Loaded { cfg, ds, splits } = load(config, seed)?;
    let p = &cfg.pipeline;
    let dir = cfg.run_dir(out, "lr-find");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let norm = ds.norm_stats(&splits)?;
    let model = Model::new(p.model_config())?;
    let side = p.stages()[0].side;
    let (sweep, lr) = find_lr(p, &model, &ds, &splits, norm, side)?;
    write_sweep(&dir, &sweep, lr)?;
    println!(
        "range test at {side}x{side}: {} points, {:?}",
        sweep.points.len(),
        sweep.stop_reason
    );
    println!("selected lr = {lr:e}");
    println!("wrote {}", dir.display());
    Ok(())
}

fn print_stages(report: &RunReport) {
    let n = report.stages.len();
    for (i, s) in report.stages.iter().enumerate() {
        println!(
            "stage {}/{n}: side {}, {} epochs, {} steps, val macro AUC {}",
            i + 1,
            s.side,
            s.epochs,
            s.steps,
            format_auc(s.val_macro_auc)
        );
    }
}

#[allow(clippy::too_many_arguments)]
fn train(
    config: &Path,
    variant: Option<Variant>,
    seed: Option<u64>,
    out: Option<&Path>,
    checkpoint_every: Option<usize>,
    stop_after: Option<usize>,
    resume: Option<&Path>,
) -> Result<()> {
    let Loaded { mut cfg, ds, splits } = load(config, seed)?;
    if let Some(v) = variant {
        cfg.pipeline.variant = v;
    }
    let p: PipelineConfig = cfg.pipeline.clone();
    let dir = cfg.run_dir(out, p.variant.name());
    let resume = resume.map(load_checkpoint).transpose()?;
    let opts = RunOptions {
        run_dir: Some(dir.clone()),
        checkpoint_every,
        stop_after_steps: stop_after,
        resume,
        config_echo: Some(cfg.echo(&p, &dir)?),
    };
    println!(
        "training {} on sides {:?} (seed {})",
        p.variant,
        p.stages().iter().map(|s| s.side).collect::<Vec<_>>(),
        p.seed
    );
    match run_training(&p, &ds, &splits, &opts)? {
        RunOutcome::Interrupted(ck) => {
            let step = ck.progress.as_ref().map_or(0, |pr| pr.global_step);
            println!(
                "stopped after step {step}; resume with --resume {}",
                dir.join(RESUME_CHECKPOINT).display()
            );
        }
        RunOutcome::Finished(run) => {
            let r = &run.report;
            println!("base lr = {:e}", r.base_lr);
            print_stages(r);
            println!(
                "test macro AUC {} (mean over defined classes; {} undefined)",
                format_auc(r.test_macro_auc()),
                r.test.undefined.len()
            );
            println!("wall time {:.1}s, run directory {}", r.wall_seconds, dir.display());
        }
    }
    Ok(())
}

fn ablate(config: &Path, seed: Option<u64>, out: Option<&Path>) -> Result<()> {
    let Loaded { cfg, ds, splits } = load(config, seed)?;
    if cfg.pipeline.variant != Variant::Proposed {
        return Err(Error::Config("ablate expects a Proposed base configuration".into()));
    }
    let dir = cfg.run_dir(out, "ablation");
    let echo = |p: &PipelineConfig| {
        cfg.echo(p, &dir.join(p.variant.name()))
            .unwrap_or(serde_json::Value::Null)
    };
    let rep = run_ablation(&cfg.pipeline, &ds, &splits, Some(&dir), Some(&echo))?;
    for (v, r) in &rep.runs {
        match r {
            Ok(r) => println!(
                "{v}: {} stage(s), test macro AUC {}, {:.1}s",
                r.stages.len(),
                format_auc(r.test_macro_auc()),
                r.wall_seconds
            ),
            Err(e) => eprintln!("{v}: failed: {e}"),
        }
    }
    print!("{}", rep.table.text());
    println!("wrote {}", dir.display());
    match rep.runs.iter().find_map(|(_, r)| r.as_ref().err()) {
        Some(e) if rep.runs.iter().all(|(_, r)| r.is_err()) => Err(Error::Config(format!("every variant failed; first: {e}"))),
        _ => Ok(()),
    }
}

fn eval(checkpoint: &Path, config: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let parent = checkpoint.parent().unwrap_or(Path::new("."));
    let config = config.map_or_else(|| parent.join("config.json"), Path::to_path_buf);
    let Loaded { cfg, ds, splits } = load(&config, None)?;
    let ck = load_checkpoint(checkpoint)?;
    let mut model = Model::new(cfg.pipeline.model_config())?;
    ck.restore_into(&mut model)?;
    let p = &cfg.pipeline;
    let norm = ds.norm_stats(&splits)?;
    let auc = evaluate_split(&model, &ds, &splits, Split::Test, p.max_side(), p.batch_size, norm, Purpose::Test)?;
    let out = out.map_or_else(|| parent.join("metrics.eval.json"), Path::to_path_buf);
    write_metrics(&out, &auc.to_file())?;
    print!("{}", format_table(&[("AUC", &auc)])?.text());
    println!("macro AUC {} -> {}", format_auc(auc.macro_auc()), out.display());
    Ok(())
}

/// A metrics file, or the `test` section of a run report.
fn read_any_metrics(path: &Path) -> Result<MetricsFile> {
    let p = if path.is_dir() { path.join(METRICS_FILE) } else { path.to_path_buf() };
    match read_metrics(&p) {
        Ok(m) => Ok(m),
        Err(first) => {
            let text = read_text(&p)?;
            serde_json::from_str::<RunReport>(&text)
                .map(|r| r.test)
                .map_err(|_| first)
        }
    }
}

fn report(files: &[PathBuf], names: Option<Vec<String>>, csv: Option<&Path>) -> Result<()> {
    let names = match names {
        Some(n) if n.len() != files.len() => {
            return Err(Error::Config(format!("{} names for {} files", n.len(), files.len())))
        }
        Some(n) => n,
        None => files
            .iter()
            .map(|f| {
                let dir = if f.is_dir() { Some(f.as_path()) } else { f.parent() };
                dir.and_then(Path::file_name)
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| f.display().to_string())
            })
            .collect(),
    };
    let results = files
        .iter()
        .map(|f| AucResult::from_file(&read_any_metrics(f)?))
        .collect::<Result<Vec<_>>>()?;
    let named: Vec<(&str, &AucResult)> = names.iter().map(String::as_str).zip(&results).collect();
    let table = format_table(&named)?;
    print!("{}", table.text());
    if let Some(path) = csv {
        write_text(path, &table.csv())?;
    }
    Ok(())
}
