//! The training run: range test, staged fine-tuning and evaluation.

use std::path::PathBuf;
use std::time::Instant;

use crate::data::{Batch, Dataset, NormStats, Purpose, Split, SplitAssignment};
use crate::error::{Error, Result};
use crate::lrfinder::{lr_range_test, select_lr, SweepConfig, SweepRecord, Trainee};
use crate::metrics::{evaluate, AucResult};
use crate::model::Model;
use crate::optim::{LrPolicy, SgdmState, SgdrSchedule};
use crate::pipeline::artifacts;
use crate::pipeline::checkpoint::{save_checkpoint, Checkpoint, Progress};
use crate::pipeline::config::{PipelineConfig, Stage};
use crate::pipeline::report::{RunReport, StageReport, TraceRow};

/// Shuffle tag of the range-test pass, distinct from every training epoch.
pub const LR_FIND_EPOCH: u64 = u64::MAX;
/// File name of the periodic resume checkpoint inside a run directory.
pub const RESUME_CHECKPOINT: &str = "checkpoint.ckpt";
/// File name of the final model checkpoint inside a run directory.
pub const MODEL_CHECKPOINT: &str = "model.ckpt";

/// A model plus optimizer state, stepped by the range test.
#[derive(Debug, Clone)]
pub struct ModelTrainee {
    pub model: Model<f64>,
    pub opt: SgdmState<f64>,
}

impl Trainee<f64> for ModelTrainee {
    type Batch = Batch;

    fn train_step(&mut self, batch: &Batch, lr: f64) -> Result<f64> {
        self.model.zero_grad();
        let loss = self.model.accumulate_gradients(&batch.images, &batch.targets)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteGradient {
                parameter: "loss".into(),
            });
        }
        self.opt.step(self.model.params_mut(), lr)?;
        Ok(loss)
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Where artifacts and checkpoints go; nothing is written when `None`.
    pub run_dir: Option<PathBuf>,
    /// Write [`RESUME_CHECKPOINT`] every this many optimizer steps.
    pub checkpoint_every: Option<usize>,
    /// Stop after this many global steps and return a resumable checkpoint.
    pub stop_after_steps: Option<usize>,
    /// Continue from a checkpoint carrying progress.
    pub resume: Option<Checkpoint>,
    /// Written as `config.json` instead of the bare pipeline configuration.
    pub config_echo: Option<serde_json::Value>,
}

#[derive(Debug)]
pub struct TrainedRun {
    pub model: Model<f64>,
    pub report: RunReport,
}

#[derive(Debug)]
pub enum RunOutcome {
    Finished(Box<TrainedRun>),
    Interrupted(Box<Checkpoint>),
}

impl RunOutcome {
    pub fn finished(self) -> Result<TrainedRun> {
        match self {
            RunOutcome::Finished(r) => Ok(*r),
            RunOutcome::Interrupted(_) => Err(Error::Config("run was interrupted".into())),
        }
    }
}

/// Per-stage schedule: cosine annealing with warm restarts, or constant.
pub fn stage_policy(cfg: &PipelineConfig, base_lr: f64, steps_per_epoch: usize) -> Result<LrPolicy<f64>> {
    if cfg.variant.warm_restarts() {
        let t0 = cfg.t0.unwrap_or(steps_per_epoch).max(1);
        Ok(LrPolicy::Sgdr(SgdrSchedule::new(cfg.eta_min, base_lr, t0, cfg.t_mult)?))
    } else {
        Ok(LrPolicy::Constant(base_lr))
    }
}

/// Number of mini-batches per training epoch.
pub fn steps_per_epoch(ds: &Dataset, splits: &SplitAssignment, batch_size: usize) -> usize {
    splits.record_indices(ds.records(), Split::Train).len().div_ceil(batch_size)
}

/// Range test at `side` on the training split with a fresh copy of `model`.
pub fn find_lr(
    cfg: &PipelineConfig,
    model: &Model<f64>,
    ds: &Dataset,
    splits: &SplitAssignment,
    norm: NormStats,
    side: usize,
) -> Result<(SweepRecord<f64>, f64)> {
    let batches = ds.batches(
        splits,
        Split::Train,
        cfg.batch_size,
        side,
        norm,
        cfg.seed,
        Some(LR_FIND_EPOCH),
        Purpose::LrFind,
    )?;
    let mut sweep_cfg: SweepConfig = cfg.lr_finder;
    if sweep_cfg.cap_at_one_epoch {
        sweep_cfg.num_iters = sweep_cfg.num_iters.min(batches.len()).max(10);
    }
    let trainee = ModelTrainee {
        model: model.clone(),
        opt: SgdmState::new(model.params(), cfg.momentum, cfg.weight_decay)?,
    };
    let sweep = lr_range_test(&trainee, &batches, &sweep_cfg)?;
    let lr = select_lr(&sweep, cfg.lr_rule)?;
    Ok((sweep, lr))
}

/// Eval-mode AUCs of `model` on one split at `side`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_split(
    model: &Model<f64>,
    ds: &Dataset,
    splits: &SplitAssignment,
    split: Split,
    side: usize,
    batch_size: usize,
    norm: NormStats,
    purpose: Purpose,
) -> Result<AucResult> {
    let batches = ds.batches(splits, split, batch_size, side, norm, 0, None, purpose)?;
    evaluate(model, batches.iter().map(|b| (&b.images, &b.targets)))
}

struct Cursor {
    stage: usize,
    epoch: usize,
    batch: usize,
    global_step: usize,
    global_epoch: usize,
}

/// Runs the full pipeline for `cfg.variant`.
///
/// Sequence: range test at the first stage's side (when `lr` is `auto`),
/// then every stage trains for its epochs with a fresh optimizer velocity
/// and a restarted schedule; validation AUC after each stage; test AUC once
/// at the largest side. Batch-norm running statistics carry across stages.
pub fn run_training(
    cfg: &PipelineConfig,
    ds: &Dataset,
    splits: &SplitAssignment,
    opts: &RunOptions,
) -> Result<RunOutcome> {
    let started = Instant::now();
    cfg.validate()?;
    let cfg = cfg.resolved();
    splits.covers(ds.records())?;
    if let Some(dir) = &opts.run_dir {
        artifacts::prepare_run_dir(dir, &cfg, opts.config_echo.as_ref())?;
    }
    let stages = cfg.stages();
    let norm = ds.norm_stats(splits)?;
    let per_epoch = steps_per_epoch(ds, splits, cfg.batch_size);
    if per_epoch == 0 {
        return Err(Error::EmptyData("training split is empty"));
    }

    let mut model = Model::new(cfg.model_config())?;
    let mut opt = SgdmState::new(model.params(), cfg.momentum, cfg.weight_decay)?;
    let (mut cur, base_lr, sweep, mut trace, mut stage_reports, mut policy, resumed) = match &opts.resume {
        Some(ck) => {
            let p = ck
                .progress
                .clone()
                .ok_or_else(|| Error::Checkpoint("checkpoint carries no training progress".into()))?;
            ck.restore_into(&mut model)?;
            if ck.optimizer.velocities.len() != opt.velocities.len() {
                return Err(Error::Checkpoint("optimizer state does not match the model".into()));
            }
            opt = ck.optimizer.clone();
            let cur = Cursor {
                stage: p.stage,
                epoch: p.epoch_in_stage,
                batch: p.batch_in_epoch,
                global_step: p.global_step,
                global_epoch: p.global_epoch,
            };
            (cur, p.base_lr, p.sweep, p.trace, p.stages, ck.schedule, true)
        }
        None => {
            let (sweep, lr) = match cfg.lr.fixed() {
                Some(lr) => (None, lr),
                None => {
                    let (s, lr) = find_lr(&cfg, &model, ds, splits, norm, stages[0].side)?;
                    (Some(s), lr)
                }
            };
            let cur = Cursor {
                stage: 0,
                epoch: 0,
                batch: 0,
                global_step: 0,
                global_epoch: 0,
            };
            let policy = stage_policy(&cfg, lr, per_epoch)?;
            (cur, lr, sweep, Vec::new(), Vec::new(), policy, false)
        }
    };
    if let (Some(dir), Some(s)) = (&opts.run_dir, &sweep) {
        artifacts::write_sweep(dir, s, base_lr)?;
    }

    let mut fresh_stage = !resumed;
    while cur.stage < stages.len() {
        let Stage { side, epochs } = stages[cur.stage];
        if fresh_stage {
            opt.reset();
            policy = stage_policy(&cfg, base_lr, per_epoch)?;
        }
        fresh_stage = true;
        let stage_start_step = cur.global_step - cur.epoch * per_epoch - cur.batch;
        while cur.epoch < epochs {
            let batches = ds.batches(
                splits,
                Split::Train,
                cfg.batch_size,
                side,
                norm,
                cfg.seed,
                Some(cur.global_epoch as u64),
                Purpose::Train,
            )?;
            while cur.batch < batches.len() {
                let b = &batches[cur.batch];
                let lr = policy.lr();
                model.zero_grad();
                let loss = model.accumulate_gradients(&b.images, &b.targets)?;
                let step = cur.global_step;
                if !loss.is_finite() {
                    trace.push(TraceRow {
                        step,
                        lr,
                        train_loss: loss,
                    });
                    return Err(Error::Diverged { step, trace });
                }
                match opt.step(model.params_mut(), lr) {
                    Ok(()) => {}
                    Err(e) if e.is_divergence() => {
                        trace.push(TraceRow {
                            step,
                            lr,
                            train_loss: loss,
                        });
                        return Err(Error::Diverged { step, trace });
                    }
                    Err(e) => return Err(e),
                }
                trace.push(TraceRow {
                    step,
                    lr,
                    train_loss: loss,
                });
                policy.advance();
                cur.global_step += 1;
                cur.batch += 1;

                let snapshot = |cur: &Cursor| {
                    let mut ck = Checkpoint::new(&model, &opt, policy);
                    ck.progress = Some(Progress {
                        stage: cur.stage,
                        epoch_in_stage: cur.epoch,
                        batch_in_epoch: cur.batch,
                        global_step: cur.global_step,
                        global_epoch: cur.global_epoch,
                        base_lr,
                        trace: trace.clone(),
                        stages: stage_reports.clone(),
                        sweep: sweep.clone(),
                    });
                    ck
                };
                if let (Some(dir), Some(k)) = (&opts.run_dir, opts.checkpoint_every) {
                    if k > 0 && cur.global_step % k == 0 {
                        save_checkpoint(&snapshot(&cur), &dir.join(RESUME_CHECKPOINT))?;
                    }
                }
                if opts.stop_after_steps == Some(cur.global_step) {
                    let ck = snapshot(&cur);
                    if let Some(dir) = &opts.run_dir {
                        save_checkpoint(&ck, &dir.join(RESUME_CHECKPOINT))?;
                    }
                    return Ok(RunOutcome::Interrupted(Box::new(ck)));
                }
            }
            cur.batch = 0;
            cur.epoch += 1;
            cur.global_epoch += 1;
        }
        let val = evaluate_split(&model, ds, splits, Split::Val, side, cfg.batch_size, norm, Purpose::Validate)?;
        stage_reports.push(StageReport {
            side,
            epochs,
            steps: cur.global_step - stage_start_step,
            val_macro_auc: val.macro_auc(),
            val: val.to_file(),
        });
        cur.stage += 1;
        cur.epoch = 0;
    }

    let test = evaluate_split(
        &model,
        ds,
        splits,
        Split::Test,
        cfg.max_side(),
        cfg.batch_size,
        norm,
        Purpose::Test,
    )?;
    let report = RunReport {
        variant: cfg.variant,
        config: cfg.clone(),
        base_lr,
        sweep,
        stages: stage_reports,
        test: test.to_file(),
        trace,
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    if let Some(dir) = &opts.run_dir {
        artifacts::write_run(dir, &report, &model, &opt, policy)?;
    }
    Ok(RunOutcome::Finished(Box::new(TrainedRun { model, report })))
}
