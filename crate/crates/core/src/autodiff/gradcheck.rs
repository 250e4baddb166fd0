use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Central-difference estimate of the gradient of `f` at `x`.
pub fn finite_diff_grad<T: Scalar>(mut f: impl FnMut(&Tensor<T>) -> T, x: &Tensor<T>, eps: T) -> Tensor<T> {
    let mut probe = x.clone();
    let two_eps = eps + eps;
    let mut out = Vec::with_capacity(x.numel());
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        out.push((up - down) / two_eps);
    }
    Tensor::new(x.shape().to_vec(), out).expect("same shape as input")
}

/// Largest elementwise relative error, `|a - b| / max(1, |a|, |b|)`.
pub fn max_rel_error<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> T {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x - y).abs() / T::one().max(x.abs()).max(y.abs()))
        .fold(T::zero(), T::max)
}
