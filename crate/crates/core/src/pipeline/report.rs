//! Run reports, loss traces and their text forms.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lrfinder::SweepRecord;
use crate::metrics::{AucResult, MetricsFile};
use crate::pipeline::config::{PipelineConfig, Variant};
use crate::plot::{self, Series};

/// One optimizer step: the rate used and the loss before the update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub lr: f64,
    pub train_loss: f64,
}

pub const TRACE_HEADER: &str = "step,lr,train_loss";

/// `step,lr,train_loss` with shortest round-trip float formatting.
pub fn trace_csv(trace: &[TraceRow]) -> String {
    let mut out = String::with_capacity(32 * (trace.len() + 1));
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for r in trace {
        let _ = writeln!(out, "{},{:?},{:?}", r.step, r.lr, r.train_loss);
    }
    out
}

pub fn parse_trace_csv(text: &str) -> Result<Vec<TraceRow>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim_end) != Some(TRACE_HEADER) {
        return Err(Error::Config(format!("trace must start with `{TRACE_HEADER}`")));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let bad = || Error::Config(format!("trace line {}: cannot parse `{l}`", i + 2));
            let f: Vec<&str> = l.trim_end().split(',').collect();
            if f.len() != 3 {
                return Err(bad());
            }
            Ok(TraceRow {
                step: f[0].parse().map_err(|_| bad())?,
                lr: f[1].parse().map_err(|_| bad())?,
                train_loss: f[2].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

/// Learning rate (and loss) against global step.
pub fn schedule_svg(trace: &[TraceRow]) -> String {
    let series = [Series {
        label: "lr",
        points: trace.iter().map(|r| (r.step as f64, r.lr)).collect(),
    }];
    plot::line_svg("Learning-rate schedule", "global step", "learning rate", &series, None)
}

/// Outcome of one fine-tuning stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub side: usize,
    pub epochs: usize,
    pub steps: usize,
    pub val_macro_auc: Option<f64>,
    pub val: MetricsFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub variant: Variant,
    /// Fully materialized configuration of the run.
    pub config: PipelineConfig,
    /// Base learning rate: the selected one under `auto`, else the fixed one.
    pub base_lr: f64,
    pub sweep: Option<SweepRecord<f64>>,
    pub stages: Vec<StageReport>,
    /// Held-out test metrics at the largest side.
    pub test: MetricsFile,
    pub trace: Vec<TraceRow>,
    pub wall_seconds: f64,
}

impl RunReport {
    pub fn test_auc(&self) -> Result<AucResult> {
        AucResult::from_file(&self.test)
    }

    pub fn test_macro_auc(&self) -> Option<f64> {
        self.test.macro_auc
    }
}
