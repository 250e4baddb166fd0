//! Learning-rate range test.
//!
//! A throwaway copy of the trainee takes one optimizer step per learning
//! rate on an exponential grid while the loss is tracked with a
//! bias-corrected moving average. The sweep stops early once the smoothed
//! loss blows past a multiple of its best value.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plot::{self, Series};
use crate::scalar::Scalar;

/// Something that can take a single optimization step at a given rate.
pub trait Trainee<T: Scalar>: Clone {
    type Batch;

    /// Trains on `batch` with learning rate `lr` and returns the loss
    /// measured before the update.
    fn train_step(&mut self, batch: &Self::Batch, lr: T) -> Result<T>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub lr_start: f64,
    pub lr_end: f64,
    pub num_iters: usize,
    pub beta: f64,
    pub divergence_factor: f64,
    /// In the training pipeline, shorten the sweep to one epoch of batches
    /// when that is fewer than `num_iters` (never below 10).
    pub cap_at_one_epoch: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            lr_start: 1e-5,
            lr_end: 10.0,
            num_iters: 200,
            beta: 0.98,
            divergence_factor: 4.0,
            cap_at_one_epoch: true,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_start > 0.0 && self.lr_start < self.lr_end && self.lr_end.is_finite()) {
            return Err(Error::Config("range test needs 0 < lr_start < lr_end".into()));
        }
        if self.num_iters < 10 {
            return Err(Error::Config("range test needs at least 10 iterations".into()));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::Config("smoothing beta must lie in [0, 1)".into()));
        }
        if !(self.divergence_factor > 1.0) {
            return Err(Error::Config("divergence factor must exceed 1".into()));
        }
        Ok(())
    }

    /// Learning rate of iteration `i`.
    pub fn lr(&self, i: usize) -> f64 {
        if i + 1 == self.num_iters {
            return self.lr_end;
        }
        let frac = i as f64 / (self.num_iters - 1) as f64;
        self.lr_start * (self.lr_end / self.lr_start).powf(frac)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(
    serialize = "T: Scalar + Serialize",
    deserialize = "T: Scalar + Deserialize<'de>"
))]
pub struct SweepPoint<T> {
    pub iteration: usize,
    pub lr: T,
    /// Non-finite losses are stored as JSON `null`.
    #[serde(with = "nullable_loss")]
    pub raw_loss: T,
    #[serde(with = "nullable_loss")]
    pub smoothed_loss: T,
}

mod nullable_loss {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::scalar::Scalar;

    pub fn serialize<T: Scalar + Serialize, S: Serializer>(v: &T, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, T, D>(d: D) -> Result<T, D::Error>
    where
        T: Scalar + Deserialize<'de>,
        D: Deserializer<'de>,
    {
        Ok(Option::<T>::deserialize(d)?.unwrap_or_else(T::nan))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    Completed,
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(
    serialize = "T: Scalar + Serialize",
    deserialize = "T: Scalar + Deserialize<'de>"
))]
pub struct SweepRecord<T> {
    pub points: Vec<SweepPoint<T>>,
    pub stop_reason: StopReason,
}

impl<T: Scalar> SweepRecord<T> {
    /// Points recorded before divergence was detected.
    pub fn stable_points(&self) -> &[SweepPoint<T>] {
        match self.stop_reason {
            StopReason::Completed => &self.points,
            StopReason::Diverged => &self.points[..self.points.len().saturating_sub(1)],
        }
    }

    /// Learning rate at which divergence was declared.
    pub fn divergence_lr(&self) -> Option<T> {
        match self.stop_reason {
            StopReason::Diverged => self.points.last().map(|p| p.lr),
            StopReason::Completed => None,
        }
    }
}

/// Runs the range test on a clone of `trainee`, cycling through `data`.
pub fn lr_range_test<T, M>(trainee: &M, data: &[M::Batch], cfg: &SweepConfig) -> Result<SweepRecord<T>>
where
    T: Scalar,
    M: Trainee<T>,
{
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyData("range test received no batches"));
    }
    let mut model = trainee.clone();
    let beta = T::lit(cfg.beta);
    let factor = T::lit(cfg.divergence_factor);
    let mut avg = T::zero();
    let mut beta_pow = T::one();
    let mut best = T::infinity();
    let mut points = Vec::with_capacity(cfg.num_iters);
    for i in 0..cfg.num_iters {
        let lr = T::lit(cfg.lr(i));
        let raw = match model.train_step(&data[i % data.len()], lr) {
            Ok(loss) => loss,
            Err(e) if e.is_divergence() => T::nan(),
            Err(e) => return Err(e),
        };
        avg = beta * avg + (T::one() - beta) * raw;
        beta_pow *= beta;
        let smoothed = avg / (T::one() - beta_pow);
        points.push(SweepPoint {
            iteration: i,
            lr,
            raw_loss: raw,
            smoothed_loss: smoothed,
        });
        if !raw.is_finite() || !smoothed.is_finite() || (i > 0 && smoothed > factor * best) {
            return Ok(SweepRecord {
                points,
                stop_reason: StopReason::Diverged,
            });
        }
        best = best.min(smoothed);
    }
    Ok(SweepRecord {
        points,
        stop_reason: StopReason::Completed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SelectionRule {
    /// Most negative slope of smoothed loss against `ln lr`.
    #[default]
    Steepest,
    /// A tenth of the rate at the smoothed-loss minimum.
    MinOverTen,
}

/// Fewest descending first differences for the steepest-slope estimate to
/// be trusted.
pub const MIN_DESCENDING_POINTS: usize = 5;

/// Picks a training learning rate from a sweep.
///
/// The search is confined to points up to the smoothed-loss minimum.
/// `Steepest` returns the left end of the steepest first-difference segment
/// and falls back to `MinOverTen` when fewer than
/// [`MIN_DESCENDING_POINTS`] segments descend.
pub fn select_lr<T: Scalar>(sweep: &SweepRecord<T>, rule: SelectionRule) -> Result<T> {
    if sweep.points.len() < 10 {
        return Err(Error::Config(format!(
            "selection needs at least 10 sweep points, got {}",
            sweep.points.len()
        )));
    }
    let pts = sweep.stable_points();
    let mut best_idx = 0;
    for (i, p) in pts.iter().enumerate() {
        if p.smoothed_loss < pts[best_idx].smoothed_loss {
            best_idx = i;
        }
    }
    if best_idx == 0 {
        return Err(Error::NoDescendingRegion);
    }
    let min_over_ten = pts[best_idx].lr / T::lit(10.0);
    match rule {
        SelectionRule::MinOverTen => Ok(min_over_ten),
        SelectionRule::Steepest => {
            let region = &pts[..=best_idx];
            let slopes: Vec<T> = region
                .windows(2)
                .map(|w| (w[1].smoothed_loss - w[0].smoothed_loss) / (w[1].lr.ln() - w[0].lr.ln()))
                .collect();
            let descending = slopes.iter().filter(|&&s| s < T::zero()).count();
            if descending < MIN_DESCENDING_POINTS {
                return Ok(min_over_ten);
            }
            let mut k = 0;
            for (i, &s) in slopes.iter().enumerate() {
                if s < slopes[k] {
                    k = i;
                }
            }
            Ok(region[k].lr)
        }
    }
}

/// CSV with header `iteration,lr,raw_loss,smoothed_loss`.
pub fn sweep_csv<T: Scalar>(sweep: &SweepRecord<T>) -> String {
    let mut out = String::from("iteration,lr,raw_loss,smoothed_loss\n");
    for p in &sweep.points {
        let _ = writeln!(
            out,
            "{},{:e},{:e},{:e}",
            p.iteration, p.lr, p.raw_loss, p.smoothed_loss
        );
    }
    out
}

/// Smoothed loss against `ln lr`, with the selected rate marked.
pub fn sweep_svg<T: Scalar>(sweep: &SweepRecord<T>, selected: Option<T>) -> String {
    let pts: Vec<(f64, f64)> = sweep
        .stable_points()
        .iter()
        .map(|p| (p.lr.to_f64_lossy().ln(), p.smoothed_loss.to_f64_lossy()))
        .collect();
    plot::line_svg(
        "LR range test",
        "ln(lr)",
        "smoothed loss",
        &[Series {
            label: "smoothed loss",
            points: pts,
        }],
        selected.map(|lr| lr.to_f64_lossy().ln()),
    )
}
