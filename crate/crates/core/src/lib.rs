//! Multi-label image classification with progressive resizing and
//! warm-restart cosine annealing, built on a small reverse-mode autodiff
//! core.
//!
//! The numeric core ([`tensor`], [`autodiff`], [`model`], [`optim`],
//! [`lrfinder`], [`metrics`]) is generic over [`Scalar`] (`f32` or `f64`);
//! data loading and the training pipeline run in `f64`.

// Validation uses `!(x >= lo)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod data;
pub mod error;
pub mod labels;
pub mod lrfinder;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod pipeline;
pub mod plot;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type Graph64 = autodiff::Graph<f64>;
pub type Graph32 = autodiff::Graph<f32>;
pub type Model64 = model::Model<f64>;
pub type Model32 = model::Model<f32>;
pub type Parameter64 = autodiff::Parameter<f64>;

/// Keeps freed tensor buffers inside the process heap instead of returning
/// them to the operating system after every pass. Training allocates and
/// frees many multi-megabyte buffers per step; without this, glibc's
/// default thresholds turn each of them into fresh page faults. Call once at
/// startup; a no-op on other platforms.
pub fn tune_allocator() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    // SAFETY: mallopt only adjusts allocator thresholds.
    unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, 32 << 20);
        libc::mallopt(libc::M_TRIM_THRESHOLD, i32::MAX);
    }
}
