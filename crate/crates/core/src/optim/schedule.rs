//! Cosine annealing with warm restarts.

use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Position and shape of a warm-restart cosine schedule.
///
/// Cycle `i` lasts `t0 · t_mult^i` steps. Within a cycle the rate falls from
/// `eta_max` to `eta_min` along half a cosine period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdrSchedule<T> {
    pub eta_min: T,
    pub eta_max: T,
    pub t0: usize,
    pub t_mult: usize,
    pub cycle_index: usize,
    pub step_in_cycle: usize,
}

impl<T: Scalar> SgdrSchedule<T> {
    pub fn new(eta_min: T, eta_max: T, t0: usize, t_mult: usize) -> Result<Self> {
        if !(eta_min >= T::zero()) || !(eta_max > eta_min) || !eta_max.is_finite() {
            return Err(Error::Config(format!(
                "schedule needs 0 <= eta_min < eta_max, got eta_min={eta_min}, eta_max={eta_max}"
            )));
        }
        if t0 == 0 || t_mult == 0 {
            return Err(Error::Config("schedule needs t0 >= 1 and t_mult >= 1".into()));
        }
        Ok(SgdrSchedule {
            eta_min,
            eta_max,
            t0,
            t_mult,
            cycle_index: 0,
            step_in_cycle: 0,
        })
    }

    /// Places the schedule at an explicit position (`step <= cycle length`).
    pub fn at(mut self, cycle_index: usize, step_in_cycle: usize) -> Result<Self> {
        self.cycle_index = cycle_index;
        if step_in_cycle > self.cycle_len() {
            return Err(Error::Config(format!(
                "step {step_in_cycle} beyond cycle length {}",
                self.cycle_len()
            )));
        }
        self.step_in_cycle = step_in_cycle;
        Ok(self)
    }

    /// Length of the current cycle.
    pub fn cycle_len(&self) -> usize {
        self.t0
            .saturating_mul(self.t_mult.saturating_pow(self.cycle_index as u32))
    }

    pub fn lr(&self) -> T {
        let t = self.step_in_cycle as f64 / self.cycle_len() as f64;
        let cos = T::lit((PI * t).cos());
        let half = T::lit(0.5);
        self.eta_min + half * (self.eta_max - self.eta_min) * (T::one() + cos)
    }

    /// Moves one step forward; returns `true` when this step restarts the
    /// cycle.
    pub fn advance(&mut self) -> bool {
        self.step_in_cycle += 1;
        if self.step_in_cycle >= self.cycle_len() {
            self.cycle_index += 1;
            self.step_in_cycle = 0;
            true
        } else {
            false
        }
    }

    /// `(global_step, lr)` for the next `steps` steps, leaving `self` alone.
    pub fn trace(&self, steps: usize) -> Vec<(usize, T)> {
        let mut s = *self;
        (0..steps)
            .map(|i| {
                let lr = s.lr();
                s.advance();
                (i, lr)
            })
            .collect()
    }
}

/// Free-function form of [`SgdrSchedule::lr`].
pub fn lr_at<T: Scalar>(schedule: &SgdrSchedule<T>) -> T {
    schedule.lr()
}

/// Free-function form of [`SgdrSchedule::advance`].
pub fn advance<T: Scalar>(schedule: SgdrSchedule<T>) -> SgdrSchedule<T> {
    let mut s = schedule;
    s.advance();
    s
}

/// Learning-rate policy of one training stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LrPolicy<T> {
    Sgdr(SgdrSchedule<T>),
    Constant(T),
}

impl<T: Scalar> LrPolicy<T> {
    pub fn lr(&self) -> T {
        match self {
            LrPolicy::Sgdr(s) => s.lr(),
            LrPolicy::Constant(lr) => *lr,
        }
    }

    pub fn advance(&mut self) {
        if let LrPolicy::Sgdr(s) = self {
            s.advance();
        }
    }
}

/// CSV with header `global_step,lr`.
pub fn schedule_csv<T: Scalar>(rows: &[(usize, T)]) -> String {
    let mut out = String::from("global_step,lr\n");
    for (step, lr) in rows {
        let _ = writeln!(out, "{step},{lr:e}");
    }
    out
}
