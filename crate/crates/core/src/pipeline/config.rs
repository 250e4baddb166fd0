//! Pipeline configuration and the per-variant stage plan.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::DEFAULT_BATCH_SIZE;
use crate::error::{Error, Result};
use crate::lrfinder::{SelectionRule, SweepConfig};
use crate::model::{ModelConfig, MIN_SIDE};

/// The full pipeline and its three ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Variant {
    /// Progressive resizing with warm-restart cosine annealing.
    #[default]
    Proposed,
    /// Largest size only.
    V1,
    /// Constant learning rate, no restarts.
    V2,
    /// Largest size only and constant learning rate.
    V3,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Proposed, Variant::V1, Variant::V2, Variant::V3];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Proposed => "Proposed",
            Variant::V1 => "V1",
            Variant::V2 => "V2",
            Variant::V3 => "V3",
        }
    }

    pub fn progressive(self) -> bool {
        matches!(self, Variant::Proposed | Variant::V2)
    }

    pub fn warm_restarts(self) -> bool {
        matches!(self, Variant::Proposed | Variant::V1)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrKeyword {
    Auto,
}

/// Either `"auto"` (run the range test) or a fixed rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LrSetting {
    Fixed(f64),
    Keyword(LrKeyword),
}

impl LrSetting {
    pub const AUTO: LrSetting = LrSetting::Keyword(LrKeyword::Auto);

    pub fn fixed(&self) -> Option<f64> {
        match self {
            LrSetting::Fixed(v) => Some(*v),
            LrSetting::Keyword(LrKeyword::Auto) => None,
        }
    }
}

impl Default for LrSetting {
    fn default() -> Self {
        Self::AUTO
    }
}

/// Side lengths of the full-scale curriculum.
pub const FULL_SCALE_SIZES: [usize; 4] = [64, 128, 256, 340];
/// Desk-scale curriculum.
pub const DESK_SCALE_SIZES: [usize; 3] = [16, 32, 64];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub variant: Variant,
    /// Image side per fine-tuning stage; strictly increasing.
    #[serde(alias = "d")]
    pub sizes: Vec<usize>,
    pub epochs_per_stage: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub eta_min: f64,
    /// Steps in the first cycle; `None` means one epoch.
    pub t0: Option<usize>,
    pub t_mult: usize,
    pub lr: LrSetting,
    pub lr_finder: SweepConfig,
    pub lr_rule: SelectionRule,
    /// Architecture; its `seed` is overwritten by the pipeline seed.
    pub model: ModelConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            variant: Variant::Proposed,
            sizes: DESK_SCALE_SIZES.to_vec(),
            epochs_per_stage: 2,
            batch_size: DEFAULT_BATCH_SIZE,
            seed: 0,
            momentum: 0.9,
            weight_decay: 0.0,
            eta_min: 0.0,
            t0: None,
            t_mult: 2,
            lr: LrSetting::AUTO,
            lr_finder: SweepConfig::default(),
            lr_rule: SelectionRule::Steepest,
            model: ModelConfig::default(),
        }
    }
}

/// One fine-tuning stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage {
    pub side: usize,
    pub epochs: usize,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sizes.is_empty() {
            return Err(Error::Config("sizes must not be empty".into()));
        }
        if self.sizes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(format!("sizes {:?} must be strictly increasing", self.sizes)));
        }
        if self.sizes[0] < MIN_SIDE {
            return Err(Error::Config(format!("sizes must be at least {MIN_SIDE}")));
        }
        if self.epochs_per_stage == 0 || self.batch_size == 0 || self.t_mult == 0 || self.t0 == Some(0) {
            return Err(Error::Config(
                "epochs_per_stage, batch_size, t0 and t_mult must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) || !(self.eta_min >= 0.0) {
            return Err(Error::Config("need 0 <= momentum < 1, weight_decay >= 0, eta_min >= 0".into()));
        }
        if let Some(lr) = self.lr.fixed() {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("fixed lr must be positive, got {lr}")));
            }
        }
        self.lr_finder.validate()?;
        self.model.validate()
    }

    /// Same configuration for another ablation variant.
    pub fn with_variant(&self, variant: Variant) -> Self {
        PipelineConfig {
            variant,
            ..self.clone()
        }
    }

    /// Model configuration with the pipeline seed applied.
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            seed: self.seed,
            ..self.model.clone()
        }
    }

    /// Every default spelled out, seeds unified.
    pub fn resolved(&self) -> Self {
        PipelineConfig {
            model: self.model_config(),
            ..self.clone()
        }
    }

    pub fn max_side(&self) -> usize {
        self.sizes.iter().copied().max().unwrap_or(0)
    }

    /// Stages this variant trains. Single-size variants get the same total
    /// number of epochs as the progressive ones.
    pub fn stages(&self) -> Vec<Stage> {
        if self.variant.progressive() {
            self.sizes
                .iter()
                .map(|&side| Stage {
                    side,
                    epochs: self.epochs_per_stage,
                })
                .collect()
        } else {
            vec![Stage {
                side: self.max_side(),
                epochs: self.sizes.len() * self.epochs_per_stage,
            }]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn v1_trains_only_the_largest_size() {
        let cfg = PipelineConfig {
            sizes: FULL_SCALE_SIZES.to_vec(),
            ..PipelineConfig::default()
        };
        assert_eq!(
            cfg.with_variant(Variant::V1).stages(),
            vec![Stage { side: 340, epochs: 8 }]
        );
        let sides: Vec<usize> = cfg.stages().iter().map(|s| s.side).collect();
        assert_eq!(sides, vec![64, 128, 256, 340]);
        assert_eq!(cfg.with_variant(Variant::V2).stages().len(), 4);
        assert_eq!(cfg.with_variant(Variant::V3).stages().len(), 1);
    }

    #[test]
    fn lr_setting_json_forms() {
        let auto: LrSetting = serde_json::from_str("\"auto\"").unwrap();
        assert_eq!(auto, LrSetting::AUTO);
        let fixed: LrSetting = serde_json::from_str("0.05").unwrap();
        assert_eq!(fixed.fixed(), Some(0.05));
        assert!(serde_json::from_str::<LrSetting>("\"fast\"").is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"epochs": 3}"#).is_err());
        let cfg: PipelineConfig = serde_json::from_str(r#"{"d": [32, 64]}"#).unwrap();
        assert_eq!(cfg.sizes, vec![32, 64]);
    }

    #[test]
    fn sizes_must_increase() {
        let cfg = PipelineConfig {
            sizes: vec![32, 32],
            ..PipelineConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert!(PipelineConfig::default().validate().is_ok());
    }
}
