//! Optimizer and learning-rate schedule.

mod schedule;
mod sgdm;

pub use schedule::{advance, lr_at, schedule_csv, LrPolicy, SgdrSchedule};
pub use sgdm::{sgdm_step, SgdmState};
