//! Run-directory layout.
//!
//! ```text
//! config.json        fully materialized configuration
//! sweep.csv/.svg     range test (when the rate was found automatically)
//! trace.csv          step,lr,train_loss
//! schedule.svg       learning rate against step
//! metrics.json       per-class test AUCs
//! report.json        everything above plus per-stage validation AUCs
//! model.ckpt         final model and optimizer state
//! checkpoint.ckpt    latest resumable checkpoint, when requested
//! ```

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::lrfinder::{sweep_csv, sweep_svg, SweepRecord};
use crate::metrics::MetricsFile;
use crate::model::Model;
use crate::optim::{LrPolicy, SgdmState};
use crate::pipeline::checkpoint::{save_checkpoint, Checkpoint};
use crate::pipeline::config::PipelineConfig;
use crate::pipeline::report::{schedule_svg, trace_csv, RunReport};
use crate::pipeline::train::MODEL_CHECKPOINT;

pub const CONFIG_FILE: &str = "config.json";
pub const TRACE_FILE: &str = "trace.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const REPORT_FILE: &str = "report.json";
pub const SCHEDULE_SVG: &str = "schedule.svg";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const SWEEP_SVG: &str = "sweep.svg";
pub const ABLATION_TABLE: &str = "ablation_table.csv";

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_text(path, &s)
}

pub fn prepare_run_dir(dir: &Path, cfg: &PipelineConfig, echo: Option<&serde_json::Value>) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    match echo {
        Some(v) => write_json(&dir.join(CONFIG_FILE), v),
        None => write_json(&dir.join(CONFIG_FILE), cfg),
    }
}

pub fn write_sweep(dir: &Path, sweep: &SweepRecord<f64>, selected: f64) -> Result<()> {
    write_text(&dir.join(SWEEP_CSV), &sweep_csv(sweep))?;
    write_text(&dir.join(SWEEP_SVG), &sweep_svg(sweep, Some(selected)))
}

pub fn write_metrics(path: &Path, metrics: &MetricsFile) -> Result<()> {
    write_json(path, metrics)
}

pub fn read_metrics(path: &Path) -> Result<MetricsFile> {
    Ok(serde_json::from_str(&read_text(path)?)?)
}

pub fn read_report(path: &Path) -> Result<RunReport> {
    Ok(serde_json::from_str(&read_text(path)?)?)
}

pub fn write_run(
    dir: &Path,
    report: &RunReport,
    model: &Model<f64>,
    opt: &SgdmState<f64>,
    policy: LrPolicy<f64>,
) -> Result<()> {
    write_text(&dir.join(TRACE_FILE), &trace_csv(&report.trace))?;
    write_text(&dir.join(SCHEDULE_SVG), &schedule_svg(&report.trace))?;
    write_metrics(&dir.join(METRICS_FILE), &report.test)?;
    write_json(&dir.join(REPORT_FILE), report)?;
    save_checkpoint(&Checkpoint::new(model, opt, policy), &dir.join(MODEL_CHECKPOINT))
}
