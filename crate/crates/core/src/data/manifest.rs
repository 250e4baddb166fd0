//! `image_id,patient_id,labels` manifests with pipe-separated label fields.

use crate::error::{Error, Result};
use crate::labels::{validate_labels, LabelSet};

pub const MANIFEST_HEADER: &str = "image_id,patient_id,labels";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRecord {
    pub image_id: String,
    pub patient_id: String,
    pub labels: LabelSet,
}

impl ManifestRecord {
    /// Label field in canonical form, e.g. `Cardiomegaly|Edema`.
    pub fn label_field(&self) -> String {
        self.labels
            .iter()
            .map(|f| f.name())
            .collect::<Vec<_>>()
            .join("|")
    }
}

/// Parses a manifest. Line numbers in errors are 1-based and count the
/// header.
pub fn parse_manifest(text: &str) -> Result<Vec<ManifestRecord>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == MANIFEST_HEADER => {}
        Some((_, h)) => {
            return Err(Error::Manifest {
                line: 1,
                message: format!("expected header `{MANIFEST_HEADER}`, found `{}`", h.trim()),
            })
        }
        None => {
            return Err(Error::Manifest {
                line: 1,
                message: "empty manifest".into(),
            })
        }
    }
    let mut out = Vec::new();
    for (i, raw) in lines {
        let line = i + 1;
        let row = raw.trim_end_matches('\r');
        if row.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = row.split(',').collect();
        let [image_id, patient_id, label_field] = fields[..] else {
            return Err(Error::Manifest {
                line,
                message: format!("expected 3 comma-separated fields, found {}", fields.len()),
            });
        };
        let (image_id, patient_id) = (image_id.trim(), patient_id.trim());
        if image_id.is_empty() || patient_id.is_empty() {
            return Err(Error::Manifest {
                line,
                message: "image_id and patient_id must be nonempty".into(),
            });
        }
        let labels = label_field
            .split('|')
            .map(|name| {
                name.parse().map_err(|e: Error| Error::Manifest {
                    line,
                    message: e.to_string(),
                })
            })
            .collect::<Result<LabelSet>>()?;
        validate_labels(&labels).map_err(|e| Error::Manifest {
            line,
            message: e.to_string(),
        })?;
        out.push(ManifestRecord {
            image_id: image_id.to_string(),
            patient_id: patient_id.to_string(),
            labels,
        });
    }
    Ok(out)
}

pub fn write_manifest(records: &[ManifestRecord]) -> String {
    let mut out = String::from(MANIFEST_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.image_id);
        out.push(',');
        out.push_str(&r.patient_id);
        out.push(',');
        out.push_str(&r.label_field());
        out.push('\n');
    }
    out
}
