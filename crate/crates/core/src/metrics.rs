//! Tie-aware ROC AUC and the per-class results table.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{Finding, NUM_CLASSES};
use crate::model::Model;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Area under the ROC curve via the Mann–Whitney statistic with midranks.
///
/// Returns `None` when either class is absent.
pub fn auc<T: Scalar>(scores: &[T], labels: &[bool]) -> Result<Option<f64>> {
    if scores.len() != labels.len() {
        return Err(Error::shape(
            "auc",
            format!("{} scores but {} labels", scores.len(), labels.len()),
        ));
    }
    if scores.is_empty() {
        return Err(Error::EmptyData("auc needs at least one score"));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::Config(format!("score {i} is not finite")));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));
    // ranks are 1-based; a tie group spanning positions i..j gets (i+1+j)/2
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + 1 + j) as f64 / 2.0;
        let group_pos = order[i..j].iter().filter(|&&k| labels[k]).count();
        rank_sum_pos += midrank * group_pos as f64;
        i = j;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok(Some((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassAuc {
    pub auc: Option<f64>,
    pub positives: usize,
    pub negatives: usize,
}

/// Per-class one-vs-rest AUCs plus the macro average over defined classes.
#[derive(Debug, Clone, PartialEq)]
pub struct AucResult {
    pub per_class: [ClassAuc; NUM_CLASSES],
}

impl AucResult {
    /// Columns of `scores` and `targets` (`[N, 15]`) are classes.
    pub fn from_scores<T: Scalar>(scores: &Tensor<T>, targets: &Tensor<T>) -> Result<Self> {
        let [n, c] = scores.dims2("evaluate")?;
        if c != NUM_CLASSES || targets.shape() != scores.shape() {
            return Err(Error::shape(
                "evaluate",
                format!("scores {:?} vs targets {:?}", scores.shape(), targets.shape()),
            ));
        }
        let mut per_class = [ClassAuc {
            auc: None,
            positives: 0,
            negatives: 0,
        }; NUM_CLASSES];
        for (k, slot) in per_class.iter_mut().enumerate() {
            let s: Vec<T> = (0..n).map(|i| scores.data()[i * c + k]).collect();
            let y: Vec<bool> = (0..n).map(|i| targets.data()[i * c + k] == T::one()).collect();
            let positives = y.iter().filter(|&&v| v).count();
            *slot = ClassAuc {
                auc: auc(&s, &y)?,
                positives,
                negatives: n - positives,
            };
        }
        Ok(AucResult { per_class })
    }

    pub fn get(&self, f: Finding) -> Option<f64> {
        self.per_class[f.index()].auc
    }

    /// Mean AUC over the classes where it is defined.
    pub fn macro_auc(&self) -> Option<f64> {
        macro_average(self.per_class.iter().map(|c| c.auc))
    }

    pub fn undefined(&self) -> Vec<Finding> {
        Finding::ALL
            .into_iter()
            .filter(|f| self.per_class[f.index()].auc.is_none())
            .collect()
    }

    pub fn to_file(&self) -> MetricsFile {
        MetricsFile {
            classes: Finding::ALL
                .iter()
                .map(|f| {
                    let c = self.per_class[f.index()];
                    ClassEntry {
                        class: f.name().to_string(),
                        auc: c.auc,
                        positives: c.positives,
                        negatives: c.negatives,
                    }
                })
                .collect(),
            macro_auc: self.macro_auc(),
            undefined: self.undefined().iter().map(|f| f.name().to_string()).collect(),
        }
    }

    pub fn from_file(file: &MetricsFile) -> Result<Self> {
        let mut per_class = [ClassAuc {
            auc: None,
            positives: 0,
            negatives: 0,
        }; NUM_CLASSES];
        let mut seen = [false; NUM_CLASSES];
        for e in &file.classes {
            let f: Finding = e.class.parse()?;
            per_class[f.index()] = ClassAuc {
                auc: e.auc,
                positives: e.positives,
                negatives: e.negatives,
            };
            seen[f.index()] = true;
        }
        if let Some(k) = seen.iter().position(|s| !s) {
            return Err(Error::Config(format!(
                "metrics file lacks class `{}`",
                Finding::ALL[k]
            )));
        }
        Ok(AucResult { per_class })
    }
}

/// Unweighted mean of the defined values.
pub fn macro_average(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let defined: Vec<f64> = values.into_iter().flatten().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

/// Scores every batch with `model` in eval mode and computes per-class AUCs.
pub fn evaluate<'a, T, I>(model: &Model<T>, batches: I) -> Result<AucResult>
where
    T: Scalar,
    I: IntoIterator<Item = (&'a Tensor<T>, &'a Tensor<T>)>,
{
    let mut scores = Vec::new();
    let mut targets = Vec::new();
    for (images, y) in batches {
        scores.extend_from_slice(model.predict_probs(images)?.data());
        targets.extend_from_slice(y.data());
    }
    let n = scores.len() / NUM_CLASSES;
    if n == 0 {
        return AucResult::from_file(&MetricsFile::empty());
    }
    AucResult::from_scores(
        &Tensor::new(vec![n, NUM_CLASSES], scores)?,
        &Tensor::new(vec![n, NUM_CLASSES], targets)?,
    )
}

/// On-disk form of an [`AucResult`] (`metrics.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsFile {
    pub classes: Vec<ClassEntry>,
    /// Mean over defined classes; an extra summary, not one of the table rows.
    pub macro_auc: Option<f64>,
    pub undefined: Vec<String>,
}

impl MetricsFile {
    /// Every class undefined.
    pub fn empty() -> Self {
        MetricsFile {
            classes: Finding::ALL
                .iter()
                .map(|f| ClassEntry {
                    class: f.name().into(),
                    auc: None,
                    positives: 0,
                    negatives: 0,
                })
                .collect(),
            macro_auc: None,
            undefined: Finding::ALL.iter().map(|f| f.name().into()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassEntry {
    pub class: String,
    pub auc: Option<f64>,
    pub positives: usize,
    pub negatives: usize,
}

/// Four-decimal rendering; `-` for undefined.
pub fn format_auc(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.4}"),
        None => "-".to_string(),
    }
}

/// Class-by-variant AUC table in results-table row order.
#[derive(Debug, Clone, PartialEq)]
pub struct AucTable {
    pub columns: Vec<String>,
    /// `(class name, one cell per column)`.
    pub rows: Vec<(String, Vec<String>)>,
}

impl AucTable {
    pub fn csv(&self) -> String {
        let mut out = String::from("Pathology");
        for c in &self.columns {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (name, cells) in &self.rows {
            out.push_str(name);
            for c in cells {
                out.push(',');
                out.push_str(c);
            }
            out.push('\n');
        }
        out
    }

    /// Whitespace-aligned rendering.
    pub fn text(&self) -> String {
        let first = self
            .rows
            .iter()
            .map(|(n, _)| n.len())
            .chain(std::iter::once("Pathology".len()))
            .max()
            .unwrap_or(0);
        let widths: Vec<usize> = self
            .columns
            .iter()
            .enumerate()
            .map(|(k, c)| {
                self.rows
                    .iter()
                    .map(|(_, cells)| cells[k].len())
                    .chain(std::iter::once(c.len()))
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let mut out = String::new();
        let _ = write!(out, "{:<first$}", "Pathology");
        for (c, w) in self.columns.iter().zip(&widths) {
            let _ = write!(out, "  {c:>w$}");
        }
        out.push('\n');
        for (name, cells) in &self.rows {
            let _ = write!(out, "{name:<first$}");
            for (c, w) in cells.iter().zip(&widths) {
                let _ = write!(out, "  {c:>w$}");
            }
            out.push('\n');
        }
        out
    }
}

/// Builds the 15-row table, one column per named result set.
pub fn format_table(results: &[(&str, &AucResult)]) -> Result<AucTable> {
    if results.is_empty() {
        return Err(Error::Config("table needs at least one result set".into()));
    }
    Ok(AucTable {
        columns: results.iter().map(|(n, _)| n.to_string()).collect(),
        rows: Finding::TABLE_ORDER
            .iter()
            .map(|&f| {
                (
                    f.name().to_string(),
                    results.iter().map(|(_, r)| format_auc(r.get(f))).collect(),
                )
            })
            .collect(),
    })
}
