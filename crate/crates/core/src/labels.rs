//! Finding classes and k-hot label vectors.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const NUM_CLASSES: usize = 15;
pub const NUM_PATHOLOGIES: usize = 14;

/// The fourteen pathologies followed by the explicit "No Finding" class.
/// Discriminants are the k-hot vector indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Finding {
    Atelectasis = 0,
    Cardiomegaly,
    Consolidation,
    Edema,
    Effusion,
    Emphysema,
    Fibrosis,
    Hernia,
    Infiltration,
    Mass,
    Nodule,
    PleuralThickening,
    Pneumonia,
    Pneumothorax,
    NoFinding = 14,
}

use Finding::*;

impl Finding {
    /// Vector index order.
    pub const ALL: [Finding; NUM_CLASSES] = [
        Atelectasis,
        Cardiomegaly,
        Consolidation,
        Edema,
        Effusion,
        Emphysema,
        Fibrosis,
        Hernia,
        Infiltration,
        Mass,
        Nodule,
        PleuralThickening,
        Pneumonia,
        Pneumothorax,
        NoFinding,
    ];

    /// Row order of the results table: alphabetical, "No Finding" included.
    pub const TABLE_ORDER: [Finding; NUM_CLASSES] = [
        Atelectasis,
        Cardiomegaly,
        Consolidation,
        Edema,
        Effusion,
        Emphysema,
        Fibrosis,
        Hernia,
        Infiltration,
        Mass,
        NoFinding,
        Nodule,
        PleuralThickening,
        Pneumonia,
        Pneumothorax,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Finding> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Atelectasis => "Atelectasis",
            Cardiomegaly => "Cardiomegaly",
            Consolidation => "Consolidation",
            Edema => "Edema",
            Effusion => "Effusion",
            Emphysema => "Emphysema",
            Fibrosis => "Fibrosis",
            Hernia => "Hernia",
            Infiltration => "Infiltration",
            Mass => "Mass",
            Nodule => "Nodule",
            PleuralThickening => "Pleural Thickening",
            Pneumonia => "Pneumonia",
            Pneumothorax => "Pneumothorax",
            NoFinding => "No Finding",
        }
    }

    pub fn is_pathology(self) -> bool {
        self != NoFinding
    }
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Finding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        // ChestX-ray14 spells the multi-word classes with underscores
        let normalized = s.replace('_', " ");
        Finding::ALL
            .into_iter()
            .find(|f| f.name() == normalized)
            .ok_or_else(|| Error::UnknownClass(s.to_string()))
    }
}

pub type LabelSet = BTreeSet<Finding>;

/// Checks the label-set rules: nonempty, and "No Finding" only on its own.
pub fn validate_labels(labels: &LabelSet) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::InvalidLabels("label set is empty".into()));
    }
    if labels.contains(&NoFinding) && labels.len() > 1 {
        return Err(Error::InvalidLabels(
            "\"No Finding\" cannot be combined with a pathology".into(),
        ));
    }
    Ok(())
}

/// 15-entry binary vector; entry 14 is "No Finding".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LabelVector([u8; NUM_CLASSES]);

impl LabelVector {
    pub fn entries(&self) -> &[u8; NUM_CLASSES] {
        &self.0
    }

    pub fn get(&self, f: Finding) -> bool {
        self.0[f.index()] == 1
    }

    pub fn to_f64(&self) -> [f64; NUM_CLASSES] {
        self.0.map(f64::from)
    }

    /// Rebuilds a vector from raw entries, enforcing the label rules.
    pub fn from_entries(entries: [u8; NUM_CLASSES]) -> Result<Self> {
        if let Some(v) = entries.iter().find(|&&v| v > 1) {
            return Err(Error::InvalidLabels(format!("entry {v} is not binary")));
        }
        validate_labels(&LabelVector(entries).decode())?;
        Ok(LabelVector(entries))
    }

    pub fn decode(&self) -> LabelSet {
        Finding::ALL
            .into_iter()
            .filter(|f| self.0[f.index()] == 1)
            .collect()
    }
}

/// k-hot encoding of a valid label set.
pub fn encode_khot(labels: &LabelSet) -> Result<LabelVector> {
    validate_labels(labels)?;
    let mut v = [0u8; NUM_CLASSES];
    for f in labels {
        v[f.index()] = 1;
    }
    Ok(LabelVector(v))
}

/// Parses class names, then encodes them.
pub fn encode_khot_names<'a>(names: impl IntoIterator<Item = &'a str>) -> Result<LabelVector> {
    let set = names
        .into_iter()
        .map(str::parse)
        .collect::<Result<LabelSet>>()?;
    encode_khot(&set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_pathology_hits_its_index() {
        let v = encode_khot_names(["Atelectasis"]).unwrap();
        assert_eq!(v.entries()[0], 1);
        assert_eq!(v.entries().iter().map(|&x| x as usize).sum::<usize>(), 1);
    }

    #[test]
    fn no_finding_is_the_fifteenth_output() {
        let v = encode_khot_names(["No Finding"]).unwrap();
        let mut want = [0u8; 15];
        want[14] = 1;
        assert_eq!(v.entries(), &want);
    }

    #[test]
    fn two_labels() {
        let v = encode_khot_names(["Cardiomegaly", "Edema"]).unwrap();
        let ones: Vec<usize> = (0..15).filter(|&i| v.entries()[i] == 1).collect();
        assert_eq!(ones, vec![1, 3]);
    }

    #[test]
    fn unknown_and_mixed_labels_fail() {
        assert!(matches!(
            encode_khot_names(["Fracture"]),
            Err(Error::UnknownClass(_))
        ));
        assert!(matches!(
            encode_khot_names(["No Finding", "Edema"]),
            Err(Error::InvalidLabels(_))
        ));
        assert!(encode_khot(&LabelSet::new()).is_err());
    }

    #[test]
    fn underscore_spelling_is_accepted() {
        assert_eq!("Pleural_Thickening".parse::<Finding>().unwrap(), PleuralThickening);
    }

    #[test]
    fn table_order_puts_no_finding_eleventh() {
        assert_eq!(Finding::TABLE_ORDER[0], Atelectasis);
        assert_eq!(Finding::TABLE_ORDER[10], NoFinding);
        let mut sorted: Vec<&str> = Finding::ALL.iter().map(|f| f.name()).collect();
        sorted.sort_unstable();
        let table: Vec<&str> = Finding::TABLE_ORDER.iter().map(|f| f.name()).collect();
        assert_eq!(sorted, table);
    }

    fn valid_label_set() -> impl Strategy<Value = LabelSet> {
        prop_oneof![
            Just(LabelSet::from([NoFinding])),
            proptest::collection::btree_set(0usize..NUM_PATHOLOGIES, 1..=NUM_PATHOLOGIES)
                .prop_map(|s| s.into_iter().map(|i| Finding::ALL[i]).collect()),
        ]
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(set in valid_label_set()) {
            let v = encode_khot(&set).unwrap();
            prop_assert_eq!(v.decode(), set);
            prop_assert_eq!(LabelVector::from_entries(*v.entries()).unwrap(), v);
        }
    }
}
