//! Tape-based reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so the tape is already a
//! topological order; `backward` walks it in reverse exactly once.

use crate::autodiff::kernels::{self, ConvGeom};
use crate::autodiff::param::Parameter;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Whether batch normalization uses batch or running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Train,
    Eval,
}

/// Per-channel running mean / variance of a batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

/// Statistics observed on one training batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Biased (population) variance.
    pub var: Vec<T>,
    pub count: usize,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: Tensor::zeros(&[channels]),
            var: Tensor::ones(&[channels]),
        }
    }

    /// Exponential moving average update. The running variance tracks the
    /// unbiased estimate.
    pub fn update(&mut self, stats: &BatchStats<T>, momentum: T) {
        let keep = T::one() - momentum;
        let correction = if stats.count > 1 {
            T::from_usize_lossy(stats.count) / T::from_usize_lossy(stats.count - 1)
        } else {
            T::one()
        };
        for (r, &m) in self.mean.data_mut().iter_mut().zip(&stats.mean) {
            *r = keep * *r + momentum * m;
        }
        for (r, &v) in self.var.data_mut().iter_mut().zip(&stats.var) {
            *r = keep * *r + momentum * v * correction;
        }
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Param(usize),
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        geom: ConvGeom,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        train: bool,
    },
    Relu(Var),
    Add(Var, Var),
    Mul(Var, Var),
    GlobalAvgPool(Var),
    Linear {
        x: Var,
        weight: Var,
        bias: Var,
    },
    Sigmoid(Var),
    Sum(Var),
    Bce {
        probs: Var,
        targets: Vec<T>,
        clamped: Vec<T>,
    },
}

#[derive(Debug)]
struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
    requires_grad: bool,
}

/// Lower probability clamp used by [`Graph::bce_loss`].
pub const PROB_EPS: f64 = 1e-12;

#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by one backward pass, indexed by node.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant or differentiable input.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(Op::Leaf, value, requires_grad)
    }

    /// Binds `params[index]` onto the tape; [`Graph::backward_into`] writes
    /// its gradient back to the same slot.
    pub fn param(&mut self, index: usize, param: &Parameter<T>) -> Var {
        self.push(Op::Param(index), param.value.clone(), true)
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, pad: usize) -> Result<Var> {
        const OP: &str = "conv2d";
        let [batch, c_in, h, w] = self.value(input).dims4(OP)?;
        let [c_out, wc_in, kh, kw] = self.value(weight).dims4(OP)?;
        let nb = self.value(bias).dims1(OP)?;
        if stride == 0 {
            return Err(Error::shape(OP, "stride must be positive"));
        }
        if wc_in != c_in {
            return Err(Error::shape(
                OP,
                format!("input channels {c_in} but weight expects {wc_in}"),
            ));
        }
        if nb != c_out {
            return Err(Error::shape(
                OP,
                format!("bias length {nb} but {c_out} output channels"),
            ));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::shape(
                OP,
                format!("padded input {}x{} smaller than kernel {kh}x{kw}", h + 2 * pad, w + 2 * pad),
            ));
        }
        let geom = ConvGeom {
            batch,
            c_in,
            c_out,
            h,
            w,
            kh,
            kw,
            stride,
            pad,
        };
        let out = kernels::conv2d_forward(
            &geom,
            self.value(input).data(),
            self.value(weight).data(),
            self.value(bias).data(),
        );
        let value = Tensor::new(vec![batch, c_out, geom.out_h(), geom.out_w()], out)?;
        let rg = self.rg(input) || self.rg(weight) || self.rg(bias);
        Ok(self.push(
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
            value,
            rg,
        ))
    }

    /// Batch normalization over `(B, H, W)` per channel.
    ///
    /// In `Train` mode the batch statistics are used and returned so the
    /// caller can fold them into its [`RunningStats`]; in `Eval` mode
    /// `running` supplies the statistics and `None` is returned.
    pub fn batchnorm2d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: &RunningStats<T>,
        eps: T,
        mode: Mode,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        const OP: &str = "batchnorm2d";
        let [b, c, h, w] = self.value(x).dims4(OP)?;
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            let n = self.value(v).dims1(OP)?;
            if n != c {
                return Err(Error::shape(OP, format!("{name} length {n} but {c} channels")));
            }
        }
        if running.mean.numel() != c || running.var.numel() != c {
            return Err(Error::shape(OP, format!("running stats do not have {c} channels")));
        }
        if eps < T::zero() {
            return Err(Error::Config("batchnorm eps must be nonnegative".into()));
        }
        let plane = h * w;
        let xs = self.value(x).data();
        let (mean, var, stats) = match mode {
            Mode::Train => {
                if b * plane == 0 {
                    return Err(Error::shape(OP, "empty batch in train mode"));
                }
                let (m, v) = kernels::channel_stats(xs, b, c, plane);
                let stats = BatchStats {
                    mean: m.clone(),
                    var: v.clone(),
                    count: b * plane,
                };
                (m, v, Some(stats))
            }
            Mode::Eval => (
                running.mean.data().to_vec(),
                running.var.data().to_vec(),
                None,
            ),
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = vec![T::zero(); xs.len()];
        let mut out = vec![T::zero(); xs.len()];
        for bi in 0..b {
            for ci in 0..c {
                let off = (bi * c + ci) * plane;
                let (m, s, gm, be) = (mean[ci], inv_std[ci], g[ci], bt[ci]);
                for i in off..off + plane {
                    let nx = (xs[i] - m) * s;
                    xhat[i] = nx;
                    out[i] = gm * nx + be;
                }
            }
        }
        let value = Tensor::new(vec![b, c, h, w], out)?;
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let var_out = self.push(
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train: mode == Mode::Train,
            },
            value,
            rg,
        );
        Ok((var_out, stats))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        let rg = self.rg(x);
        self.push(Op::Relu(x), value, rg)
    }

    /// Elementwise sum; the residual shortcut.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self
            .value(a)
            .zip_map(self.value(b), |x, y| x + y)
            .map_err(|_| {
                Error::shape(
                    "add",
                    format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
                )
            })?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Add(a, b), value, rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self
            .value(a)
            .zip_map(self.value(b), |x, y| x * y)
            .map_err(|_| {
                Error::shape(
                    "mul",
                    format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
                )
            })?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Mul(a, b), value, rg))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let [b, c, h, w] = self.value(x).dims4("global_avg_pool")?;
        let plane = h * w;
        let n = T::from_usize_lossy(plane);
        let xs = self.value(x).data();
        let out: Vec<T> = (0..b * c)
            .map(|i| kernels::sum(&xs[i * plane..(i + 1) * plane]) / n)
            .collect();
        let value = Tensor::new(vec![b, c], out)?;
        let rg = self.rg(x);
        Ok(self.push(Op::GlobalAvgPool(x), value, rg))
    }

    /// `x · Wᵀ + b` for `x: [B, F]`, `W: [O, F]`, `b: [O]`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        const OP: &str = "linear";
        let [batch, f] = self.value(x).dims2(OP)?;
        let [o, wf] = self.value(weight).dims2(OP)?;
        let nb = self.value(bias).dims1(OP)?;
        if wf != f {
            return Err(Error::shape(OP, format!("input features {f} but weight expects {wf}")));
        }
        if nb != o {
            return Err(Error::shape(OP, format!("bias length {nb} but {o} outputs")));
        }
        let (xs, ws, bs) = (
            self.value(x).data(),
            self.value(weight).data(),
            self.value(bias).data(),
        );
        let mut out = Vec::with_capacity(batch * o);
        for bi in 0..batch {
            let row = &xs[bi * f..(bi + 1) * f];
            for oi in 0..o {
                out.push(kernels::dot(row, &ws[oi * f..(oi + 1) * f]) + bs[oi]);
            }
        }
        let value = Tensor::new(vec![batch, o], out)?;
        let rg = self.rg(x) || self.rg(weight) || self.rg(bias);
        Ok(self.push(Op::Linear { x, weight, bias }, value, rg))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid);
        let rg = self.rg(x);
        self.push(Op::Sigmoid(x), value, rg)
    }

    /// Sum of all elements, as a scalar node.
    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(kernels::sum(self.value(x).data()));
        let rg = self.rg(x);
        self.push(Op::Sum(x), value, rg)
    }

    /// Mean per-class Bernoulli negative log likelihood.
    ///
    /// Probabilities are clamped to `[1e-12, 1 - 1e-12]` before the logs.
    pub fn bce_loss(&mut self, probs: Var, targets: &Tensor<T>) -> Result<Var> {
        let p = self.value(probs);
        if p.shape() != targets.shape() {
            return Err(Error::shape(
                "bce_loss",
                format!("probs {:?} vs targets {:?}", p.shape(), targets.shape()),
            ));
        }
        if p.numel() == 0 {
            return Err(Error::shape("bce_loss", "empty input"));
        }
        for (i, &y) in targets.data().iter().enumerate() {
            if y != T::zero() && y != T::one() {
                return Err(Error::InvalidTarget {
                    index: i,
                    value: y.to_f64_lossy(),
                });
            }
        }
        let eps = T::lit(PROB_EPS);
        let hi = T::one() - eps;
        let clamped: Vec<T> = p.data().iter().map(|&v| v.max(eps).min(hi)).collect();
        let total: T = clamped
            .iter()
            .zip(targets.data())
            .map(|(&pc, &y)| {
                if y == T::one() {
                    -pc.ln()
                } else {
                    -(T::one() - pc).ln()
                }
            })
            .sum();
        let value = Tensor::scalar(total / T::from_usize_lossy(clamped.len()));
        let rg = self.rg(probs);
        Ok(self.push(
            Op::Bce {
                probs,
                targets: targets.data().to_vec(),
                clamped,
            },
            value,
            rg,
        ))
    }

    /// Reverse pass from a scalar `loss`. Node accumulators start at zero on
    /// every call.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::NonScalarLoss {
                shape: lv.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape(), T::one()));
        for idx in (0..=loss.0).rev() {
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.propagate(node, &dy, &mut grads)?;
            }
            grads[idx] = Some(dy);
        }
        Ok(Gradients { grads })
    }

    /// [`Graph::backward`], then adds every bound parameter's gradient into
    /// `params[index].grad`.
    pub fn backward_into(&self, loss: Var, params: &mut [Parameter<T>]) -> Result<Gradients<T>> {
        let grads = self.backward(loss)?;
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Param(pi) = node.op {
                if let Some(g) = &grads.grads[i] {
                    let p = params.get_mut(pi).ok_or_else(|| {
                        Error::shape("backward", format!("parameter index {pi} out of range"))
                    })?;
                    p.grad.add_assign(g)?;
                }
            }
        }
        Ok(grads)
    }

    fn propagate(&self, node: &Node<T>, dy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let dyd = dy.data();
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            } => {
                let cg = kernels::conv2d_backward(
                    geom,
                    self.value(*input).data(),
                    self.value(*weight).data(),
                    dyd,
                    self.rg(*input),
                );
                if let Some(gi) = cg.input {
                    self.accumulate(grads, *input, gi)?;
                }
                if self.rg(*weight) {
                    self.accumulate(grads, *weight, cg.weight)?;
                }
                if self.rg(*bias) {
                    self.accumulate(grads, *bias, cg.bias)?;
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let [b, c, h, w] = node.value.dims4("batchnorm2d")?;
                let plane = h * w;
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for bi in 0..b {
                    for ci in 0..c {
                        let off = (bi * c + ci) * plane;
                        let dys = &dyd[off..off + plane];
                        dbeta[ci] += kernels::sum(dys);
                        dgamma[ci] += kernels::dot(dys, &xhat[off..off + plane]);
                    }
                }
                if self.rg(*x) {
                    let g = self.value(*gamma).data();
                    let mut dx = vec![T::zero(); dyd.len()];
                    let n = T::from_usize_lossy(b * plane);
                    for bi in 0..b {
                        for ci in 0..c {
                            let off = (bi * c + ci) * plane;
                            if *train {
                                let k = g[ci] * inv_std[ci] / n;
                                for i in off..off + plane {
                                    dx[i] = k * (n * dyd[i] - dbeta[ci] - xhat[i] * dgamma[ci]);
                                }
                            } else {
                                let k = g[ci] * inv_std[ci];
                                for i in off..off + plane {
                                    dx[i] = k * dyd[i];
                                }
                            }
                        }
                    }
                    self.accumulate(grads, *x, dx)?;
                }
                if self.rg(*gamma) {
                    self.accumulate(grads, *gamma, dgamma)?;
                }
                if self.rg(*beta) {
                    self.accumulate(grads, *beta, dbeta)?;
                }
            }
            Op::Relu(x) => {
                if self.rg(*x) {
                    let xs = self.value(*x).data();
                    let dx = xs
                        .iter()
                        .zip(dyd)
                        .map(|(&v, &d)| if v > T::zero() { d } else { T::zero() })
                        .collect();
                    self.accumulate(grads, *x, dx)?;
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.rg(v) {
                        self.accumulate(grads, v, dyd.to_vec())?;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.rg(*a) {
                    let da = dyd.iter().zip(bv).map(|(&d, &y)| d * y).collect();
                    self.accumulate(grads, *a, da)?;
                }
                if self.rg(*b) {
                    let db = dyd.iter().zip(av).map(|(&d, &x)| d * x).collect();
                    self.accumulate(grads, *b, db)?;
                }
            }
            Op::GlobalAvgPool(x) => {
                if self.rg(*x) {
                    let [_, _, h, w] = self.value(*x).dims4("global_avg_pool")?;
                    let plane = h * w;
                    let n = T::from_usize_lossy(plane);
                    let mut dx = Vec::with_capacity(dyd.len() * plane);
                    for &d in dyd {
                        let v = d / n;
                        dx.extend(std::iter::repeat_n(v, plane));
                    }
                    self.accumulate(grads, *x, dx)?;
                }
            }
            Op::Linear { x, weight, bias } => {
                let [batch, f] = self.value(*x).dims2("linear")?;
                let o = dy.shape()[1];
                if self.rg(*x) {
                    let ws = self.value(*weight).data();
                    let mut dx = vec![T::zero(); batch * f];
                    for bi in 0..batch {
                        let row = &mut dx[bi * f..(bi + 1) * f];
                        for oi in 0..o {
                            let d = dyd[bi * o + oi];
                            for (r, &wv) in row.iter_mut().zip(&ws[oi * f..(oi + 1) * f]) {
                                *r += d * wv;
                            }
                        }
                    }
                    self.accumulate(grads, *x, dx)?;
                }
                if self.rg(*weight) {
                    let xs = self.value(*x).data();
                    let mut dw = vec![T::zero(); o * f];
                    for bi in 0..batch {
                        let row = &xs[bi * f..(bi + 1) * f];
                        for oi in 0..o {
                            let d = dyd[bi * o + oi];
                            for (r, &xv) in dw[oi * f..(oi + 1) * f].iter_mut().zip(row) {
                                *r += d * xv;
                            }
                        }
                    }
                    self.accumulate(grads, *weight, dw)?;
                }
                if self.rg(*bias) {
                    let mut db = vec![T::zero(); o];
                    for bi in 0..batch {
                        for oi in 0..o {
                            db[oi] += dyd[bi * o + oi];
                        }
                    }
                    self.accumulate(grads, *bias, db)?;
                }
            }
            Op::Sigmoid(x) => {
                if self.rg(*x) {
                    let dx = node
                        .value
                        .data()
                        .iter()
                        .zip(dyd)
                        .map(|(&s, &d)| d * s * (T::one() - s))
                        .collect();
                    self.accumulate(grads, *x, dx)?;
                }
            }
            Op::Sum(x) => {
                if self.rg(*x) {
                    let n = self.value(*x).numel();
                    self.accumulate(grads, *x, vec![dyd[0]; n])?;
                }
            }
            Op::Bce {
                probs,
                targets,
                clamped,
            } => {
                if self.rg(*probs) {
                    // d/dp of the clamped form, evaluated at the clamped value
                    let scale = dyd[0] / T::from_usize_lossy(clamped.len());
                    let dp = clamped
                        .iter()
                        .zip(targets)
                        .map(|(&p, &y)| scale * (p - y) / (p * (T::one() - p)))
                        .collect();
                    self.accumulate(grads, *probs, dp)?;
                }
            }
        }
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], var: Var, data: Vec<T>) -> Result<()> {
        match &mut grads[var.0] {
            Some(g) => {
                for (a, b) in g.data_mut().iter_mut().zip(data) {
                    *a += b;
                }
            }
            slot @ None => {
                *slot = Some(Tensor::new(self.value(var).shape().to_vec(), data)?);
            }
        }
        Ok(())
    }
}

/// Numerically stable logistic function.
pub fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}
