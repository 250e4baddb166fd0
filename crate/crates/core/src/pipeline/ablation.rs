//! The four-variant ablation and its comparison table.

use std::path::Path;

use crate::data::{Dataset, SplitAssignment};
use crate::error::{Error, Result};
use crate::metrics::{format_table, AucResult, AucTable, MetricsFile};
use crate::pipeline::artifacts::{write_text, ABLATION_TABLE};
use crate::pipeline::config::{PipelineConfig, Variant};
use crate::pipeline::report::RunReport;
use crate::pipeline::train::{run_training, RunOptions};

#[derive(Debug)]
pub struct AblationReport {
    /// One entry per variant in `Variant::ALL` order.
    pub runs: Vec<(Variant, Result<RunReport>)>,
    /// 15 class rows by 4 variant columns; a failed variant shows `-`.
    pub table: AucTable,
}

impl AblationReport {
    pub fn report(&self, variant: Variant) -> Option<&RunReport> {
        self.runs
            .iter()
            .find(|(v, _)| *v == variant)
            .and_then(|(_, r)| r.as_ref().ok())
    }
}

/// Trains every variant with the same seed, data and splits, one after the
/// other. A failing variant is recorded without stopping the rest. With
/// `out_dir`, each variant writes a run directory named after it and the
/// table goes to `ablation_table.csv`. `echo` builds each variant's
/// `config.json` from its configuration.
pub fn run_ablation(
    base: &PipelineConfig,
    ds: &Dataset,
    splits: &SplitAssignment,
    out_dir: Option<&Path>,
    echo: Option<&dyn Fn(&PipelineConfig) -> serde_json::Value>,
) -> Result<AblationReport> {
    if base.variant != Variant::Proposed {
        return Err(Error::Config(format!(
            "ablation starts from the Proposed configuration, got {}",
            base.variant
        )));
    }
    base.validate()?;
    let mut runs = Vec::with_capacity(Variant::ALL.len());
    for v in Variant::ALL {
        let cfg = base.with_variant(v);
        let opts = RunOptions {
            run_dir: out_dir.map(|d| d.join(v.name())),
            config_echo: echo.map(|f| f(&cfg.resolved())),
            ..RunOptions::default()
        };
        let r = run_training(&cfg, ds, splits, &opts).and_then(|o| o.finished().map(|t| t.report));
        runs.push((v, r));
    }
    let blank = AucResult::from_file(&MetricsFile::empty())?;
    let results: Vec<AucResult> = runs
        .iter()
        .map(|(_, r)| match r {
            Ok(rep) => rep.test_auc(),
            Err(_) => Ok(blank.clone()),
        })
        .collect::<Result<_>>()?;
    let named: Vec<(&str, &AucResult)> = runs.iter().map(|(v, _)| v.name()).zip(&results).collect();
    let table = format_table(&named)?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_text(&dir.join(ABLATION_TABLE), &table.csv())?;
    }
    Ok(AblationReport { runs, table })
}
