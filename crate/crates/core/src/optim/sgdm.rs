//! Stochastic gradient descent with momentum.

use crate::autodiff::Parameter;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Momentum buffers for one parameter list.
///
/// Update per parameter: `g = grad + wd·p; v = mu·v + g; p -= lr·v`.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdmState<T> {
    pub momentum: T,
    pub weight_decay: T,
    pub velocities: Vec<Tensor<T>>,
}

impl<T: Scalar> SgdmState<T> {
    pub fn new(params: &[Parameter<T>], momentum: T, weight_decay: T) -> Result<Self> {
        if !(momentum >= T::zero() && momentum < T::one()) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {momentum}")));
        }
        if !(weight_decay >= T::zero()) {
            return Err(Error::Config(format!("weight decay must be >= 0, got {weight_decay}")));
        }
        Ok(SgdmState {
            momentum,
            weight_decay,
            velocities: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
        })
    }

    /// Clears all velocities.
    pub fn reset(&mut self) {
        self.velocities.iter_mut().for_each(|v| v.fill(T::zero()));
    }

    /// Applies one update and zeroes the gradients. Nothing is modified if any
    /// gradient is non-finite.
    pub fn step(&mut self, params: &mut [Parameter<T>], lr: T) -> Result<()> {
        if params.len() != self.velocities.len() {
            return Err(Error::shape(
                "sgdm_step",
                format!("{} parameters but {} velocity buffers", params.len(), self.velocities.len()),
            ));
        }
        for (p, v) in params.iter().zip(&self.velocities) {
            if p.grad.shape() != v.shape() {
                return Err(Error::shape(
                    "sgdm_step",
                    format!("`{}` has shape {:?}, velocity {:?}", p.name, p.grad.shape(), v.shape()),
                ));
            }
            if !p.grad.all_finite() {
                return Err(Error::NonFiniteGradient {
                    parameter: p.name.clone(),
                });
            }
        }
        let (mu, wd) = (self.momentum, self.weight_decay);
        for (p, v) in params.iter_mut().zip(&mut self.velocities) {
            let vals = p.value.data_mut();
            for ((w, vel), &g) in vals.iter_mut().zip(v.data_mut()).zip(p.grad.data()) {
                let g = g + wd * *w;
                *vel = mu * *vel + g;
                *w -= lr * *vel;
            }
            p.zero_grad();
        }
        Ok(())
    }
}

/// Free-function form of [`SgdmState::step`].
pub fn sgdm_step<T: Scalar>(params: &mut [Parameter<T>], state: &mut SgdmState<T>, lr: T) -> Result<()> {
    state.step(params, lr)
}
