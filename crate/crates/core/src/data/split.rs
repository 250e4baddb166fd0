//! Patient-grouped train/validation/test assignment.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::manifest::ManifestRecord;
use crate::error::{Error, Result};

/// 70 / 10 / 20 percent of patients.
pub const DEFAULT_FRACTIONS: [f64; 3] = [0.7, 0.1, 0.2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn from_name(s: &str) -> Option<Split> {
        Split::ALL.into_iter().find(|x| x.name() == s)
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitAssignment {
    pub patients: BTreeMap<String, Split>,
    pub fractions: [f64; 3],
    pub seed: u64,
}

impl SplitAssignment {
    pub fn split_of(&self, patient_id: &str) -> Option<Split> {
        self.patients.get(patient_id).copied()
    }

    pub fn patients_in(&self, split: Split) -> BTreeSet<&str> {
        self.patients
            .iter()
            .filter(|(_, &s)| s == split)
            .map(|(p, _)| p.as_str())
            .collect()
    }

    /// Indices of `records` whose patient falls in `split`, in record order.
    pub fn record_indices(&self, records: &[ManifestRecord], split: Split) -> Vec<usize> {
        records
            .iter()
            .enumerate()
            .filter(|(_, r)| self.split_of(&r.patient_id) == Some(split))
            .map(|(i, _)| i)
            .collect()
    }

    /// Errors if any record's patient is unassigned.
    pub fn covers(&self, records: &[ManifestRecord]) -> Result<()> {
        match records.iter().find(|r| !self.patients.contains_key(&r.patient_id)) {
            Some(r) => Err(Error::Config(format!(
                "patient `{}` (image `{}`) has no split assignment",
                r.patient_id, r.image_id
            ))),
            None => Ok(()),
        }
    }

    /// `patient_id,split` rows sorted by patient id.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("patient_id,split\n");
        for (p, s) in &self.patients {
            out.push_str(p);
            out.push(',');
            out.push_str(s.name());
            out.push('\n');
        }
        out
    }

    /// Reads a split file. Fractions and seed are not stored in the file
    /// and are reported as the defaults / zero.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == "patient_id,split" => {}
            _ => {
                return Err(Error::SplitFile {
                    line: 1,
                    message: "expected header `patient_id,split`".into(),
                })
            }
        }
        let mut patients = BTreeMap::new();
        for (i, raw) in lines {
            let line = i + 1;
            let row = raw.trim();
            if row.is_empty() {
                continue;
            }
            let Some((p, s)) = row.split_once(',') else {
                return Err(Error::SplitFile {
                    line,
                    message: "expected `patient_id,split`".into(),
                });
            };
            let split = Split::from_name(s.trim()).ok_or_else(|| Error::SplitFile {
                line,
                message: format!("unknown split `{}`", s.trim()),
            })?;
            if patients.insert(p.trim().to_string(), split).is_some() {
                return Err(Error::SplitFile {
                    line,
                    message: format!("patient `{}` listed twice", p.trim()),
                });
            }
        }
        Ok(SplitAssignment {
            patients,
            fractions: DEFAULT_FRACTIONS,
            seed: 0,
        })
    }
}

/// Largest-remainder apportionment of `n` items to `fractions`.
pub(crate) fn apportion(n: usize, fractions: &[f64; 3]) -> [usize; 3] {
    // guard against 0.7 * 10 = 6.999...
    let quotas: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts = [0usize; 3];
    for (c, q) in counts.iter_mut().zip(&quotas) {
        *c = (q + 1e-9).floor() as usize;
    }
    let mut left = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    // stable: ties go to the earlier split
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - counts[a] as f64;
        let rb = quotas[b] - counts[b] as f64;
        rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal)
    });
    for &k in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[k] += 1;
        left -= 1;
    }
    counts
}

/// Shuffles the distinct patient ids with a seeded RNG and cuts them into
/// train / val / test by largest-remainder rounding of patient counts.
pub fn group_split(records: &[ManifestRecord], fractions: [f64; 3], seed: u64) -> Result<SplitAssignment> {
    if fractions.iter().any(|f| !(*f >= 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split fractions {fractions:?} must be nonnegative and sum to 1")));
    }
    let unique: BTreeSet<&str> = records.iter().map(|r| r.patient_id.as_str()).collect();
    if unique.len() < 3 {
        return Err(Error::TooFewPatients { count: unique.len() });
    }
    let mut ids: Vec<&str> = unique.into_iter().collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let [n_train, n_val, _] = apportion(ids.len(), &fractions);
    let patients = ids
        .into_iter()
        .enumerate()
        .map(|(i, p)| {
            let s = if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
            (p.to_string(), s)
        })
        .collect();
    Ok(SplitAssignment {
        patients,
        fractions,
        seed,
    })
}
