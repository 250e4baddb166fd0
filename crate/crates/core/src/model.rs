//! Size-agnostic pre-activation residual network with a 15-way sigmoid head.
//!
//! Layout: 3×3 stem convolution, stages of residual blocks (the first block
//! of every stage after the first downsamples by 2 through a 1×1 projection
//! shortcut), batch norm + ReLU, global average pooling and a linear layer.
//! Each block computes `y = f(x) + s(x)` where `s` is the identity unless the
//! shape changes, and `f = conv ∘ relu ∘ bn ∘ conv ∘ relu ∘ bn`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{BatchStats, Graph, Mode, Parameter, RunningStats, Var};
use crate::error::{Error, Result};
use crate::labels::NUM_CLASSES;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Smallest accepted input side.
pub const MIN_SIDE: usize = 16;
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub stem_channels: usize,
    pub stage_widths: Vec<usize>,
    pub blocks_per_stage: usize,
    pub num_classes: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            stem_channels: 8,
            stage_widths: vec![8, 16, 32],
            blocks_per_stage: 2,
            num_classes: NUM_CLASSES,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes != NUM_CLASSES {
            return Err(Error::Config(format!(
                "num_classes must be {NUM_CLASSES}, got {}",
                self.num_classes
            )));
        }
        if self.stem_channels == 0 || self.blocks_per_stage == 0 {
            return Err(Error::Config("stem_channels and blocks_per_stage must be positive".into()));
        }
        if self.stage_widths.is_empty() || self.stage_widths.contains(&0) {
            return Err(Error::Config("stage_widths must be a nonempty list of positive widths".into()));
        }
        Ok(())
    }

    /// Number of trainable scalars, from the layer formulas.
    pub fn parameter_count(&self) -> usize {
        let conv = |cin: usize, cout: usize, k: usize| cin * cout * k * k + cout;
        let bn = |c: usize| 2 * c;
        let mut total = conv(1, self.stem_channels, 3);
        let mut cin = self.stem_channels;
        for (s, &w) in self.stage_widths.iter().enumerate() {
            for b in 0..self.blocks_per_stage {
                let stride = if s > 0 && b == 0 { 2 } else { 1 };
                total += bn(cin) + conv(cin, w, 3) + bn(w) + conv(w, w, 3);
                if stride != 1 || cin != w {
                    total += conv(cin, w, 1);
                }
                cin = w;
            }
        }
        total + bn(cin) + cin * self.num_classes + self.num_classes
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ConvLayer {
    weight: usize,
    bias: usize,
    stride: usize,
    pad: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct BnLayer {
    gamma: usize,
    beta: usize,
    stats: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Block {
    bn1: BnLayer,
    conv1: ConvLayer,
    bn2: BnLayer,
    conv2: ConvLayer,
    projection: Option<ConvLayer>,
}

/// Output of one forward pass.
#[derive(Debug)]
pub struct ForwardPass<T> {
    pub logits: Var,
    /// Batch statistics of every batch-norm layer, in layer order. Empty in
    /// `Eval` mode.
    pub bn_stats: Vec<BatchStats<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    config: ModelConfig,
    params: Vec<Parameter<T>>,
    running: Vec<(String, RunningStats<T>)>,
    stem: ConvLayer,
    blocks: Vec<Block>,
    head_bn: BnLayer,
    fc_weight: usize,
    fc_bias: usize,
}

struct Builder<T> {
    rng: ChaCha8Rng,
    params: Vec<Parameter<T>>,
    running: Vec<(String, RunningStats<T>)>,
}

impl<T: Scalar> Builder<T> {
    fn push(&mut self, name: String, value: Tensor<T>) -> usize {
        self.params.push(Parameter::new(name, value));
        self.params.len() - 1
    }

    fn he_normal(&mut self, shape: &[usize], fan_in: usize) -> Tensor<T> {
        let std = (2.0 / fan_in as f64).sqrt();
        let rng = &mut self.rng;
        Tensor::from_fn(shape, |_| {
            let z: f64 = StandardNormal.sample(rng);
            T::lit(z * std)
        })
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, stride: usize) -> ConvLayer {
        let w = self.he_normal(&[cout, cin, k, k], cin * k * k);
        ConvLayer {
            weight: self.push(format!("{name}.weight"), w),
            bias: self.push(format!("{name}.bias"), Tensor::zeros(&[cout])),
            stride,
            pad: k / 2,
        }
    }

    fn bn(&mut self, name: &str, c: usize) -> BnLayer {
        let gamma = self.push(format!("{name}.gamma"), Tensor::ones(&[c]));
        let beta = self.push(format!("{name}.beta"), Tensor::zeros(&[c]));
        self.running.push((name.to_string(), RunningStats::new(c)));
        BnLayer {
            gamma,
            beta,
            stats: self.running.len() - 1,
        }
    }
}

impl<T: Scalar> Model<T> {
    /// Builds the network with deterministic seeded initialization.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut b = Builder {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            params: Vec::new(),
            running: Vec::new(),
        };
        let stem = b.conv("stem", 1, config.stem_channels, 3, 1);
        let mut blocks = Vec::new();
        let mut cin = config.stem_channels;
        for (s, &w) in config.stage_widths.iter().enumerate() {
            for k in 0..config.blocks_per_stage {
                let stride = if s > 0 && k == 0 { 2 } else { 1 };
                let name = format!("stage{s}.block{k}");
                let bn1 = b.bn(&format!("{name}.bn1"), cin);
                let conv1 = b.conv(&format!("{name}.conv1"), cin, w, 3, stride);
                let bn2 = b.bn(&format!("{name}.bn2"), w);
                let conv2 = b.conv(&format!("{name}.conv2"), w, w, 3, 1);
                let projection =
                    (stride != 1 || cin != w).then(|| b.conv(&format!("{name}.shortcut"), cin, w, 1, stride));
                blocks.push(Block {
                    bn1,
                    conv1,
                    bn2,
                    conv2,
                    projection,
                });
                cin = w;
            }
        }
        let head_bn = b.bn("head.bn", cin);
        let fcw = b.he_normal(&[config.num_classes, cin], cin);
        let fc_weight = b.push("fc.weight".into(), fcw);
        let fc_bias = b.push("fc.bias".into(), Tensor::zeros(&[config.num_classes]));
        Ok(Model {
            config,
            params: b.params,
            running: b.running,
            stem,
            blocks,
            head_bn,
            fc_weight,
            fc_bias,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Parameter<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter<T>] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Parameter<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Parameter<T>> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn running_stats(&self) -> &[(String, RunningStats<T>)] {
        &self.running
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(Parameter::zero_grad);
    }

    /// Every persistent tensor in a fixed order: parameters, then running
    /// means and variances.
    pub fn named_state(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out: Vec<(String, &Tensor<T>)> =
            self.params.iter().map(|p| (p.name.clone(), &p.value)).collect();
        for (name, rs) in &self.running {
            out.push((format!("{name}.running_mean"), &rs.mean));
            out.push((format!("{name}.running_var"), &rs.var));
        }
        out
    }

    /// Replaces all persistent tensors. Names and shapes must match
    /// [`Model::named_state`] exactly, in order.
    pub fn load_named_state(&mut self, state: &[(String, Tensor<T>)]) -> Result<()> {
        let expected: Vec<(String, Vec<usize>)> = self
            .named_state()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec()))
            .collect();
        for (i, (name, shape)) in expected.iter().enumerate() {
            let Some((got_name, got)) = state.get(i) else {
                return Err(Error::ArchitectureMismatch {
                    name: name.clone(),
                    reason: "is missing from the checkpoint".into(),
                });
            };
            if got_name != name {
                return Err(Error::ArchitectureMismatch {
                    name: name.clone(),
                    reason: format!("found `{got_name}` in its place"),
                });
            }
            if got.shape() != shape.as_slice() {
                return Err(Error::ArchitectureMismatch {
                    name: name.clone(),
                    reason: format!("has shape {:?}, checkpoint has {:?}", shape, got.shape()),
                });
            }
        }
        if state.len() > expected.len() {
            return Err(Error::ArchitectureMismatch {
                name: state[expected.len()].0.clone(),
                reason: "is not part of this model".into(),
            });
        }
        let np = self.params.len();
        for (p, (_, t)) in self.params.iter_mut().zip(state) {
            p.value = t.clone();
        }
        for (k, (_, rs)) in self.running.iter_mut().enumerate() {
            rs.mean = state[np + 2 * k].1.clone();
            rs.var = state[np + 2 * k + 1].1.clone();
        }
        Ok(())
    }

    /// Folds training-batch statistics into the running averages.
    pub fn apply_bn_stats(&mut self, stats: &[BatchStats<T>]) {
        let m = T::lit(BN_MOMENTUM);
        for ((_, rs), s) in self.running.iter_mut().zip(stats) {
            rs.update(s, m);
        }
    }

    fn conv(&self, g: &mut Graph<T>, x: Var, layer: ConvLayer, bind: &mut Binder) -> Result<Var> {
        let w = bind.get(g, &self.params, layer.weight);
        let b = bind.get(g, &self.params, layer.bias);
        g.conv2d(x, w, b, layer.stride, layer.pad)
    }

    fn bn(
        &self,
        g: &mut Graph<T>,
        x: Var,
        layer: BnLayer,
        mode: Mode,
        bind: &mut Binder,
        stats: &mut Vec<BatchStats<T>>,
    ) -> Result<Var> {
        let gamma = bind.get(g, &self.params, layer.gamma);
        let beta = bind.get(g, &self.params, layer.beta);
        let (y, s) = g.batchnorm2d(x, gamma, beta, &self.running[layer.stats].1, T::lit(BN_EPS), mode)?;
        if let Some(s) = s {
            stats.push(s);
        }
        Ok(y)
    }

    fn block(
        &self,
        g: &mut Graph<T>,
        index: usize,
        x: Var,
        mode: Mode,
        bind: &mut Binder,
        stats: &mut Vec<BatchStats<T>>,
    ) -> Result<Var> {
        let blk = &self.blocks[index];
        let a = self.bn(g, x, blk.bn1, mode, bind, stats)?;
        let a = g.relu(a);
        let r = self.conv(g, a, blk.conv1, bind)?;
        let r = self.bn(g, r, blk.bn2, mode, bind, stats)?;
        let r = g.relu(r);
        let r = self.conv(g, r, blk.conv2, bind)?;
        let shortcut = match blk.projection {
            Some(p) => self.conv(g, x, p, bind)?,
            None => x,
        };
        g.add(r, shortcut)
    }

    /// Runs a single residual block on `x`; exposed for inspecting the
    /// shortcut path.
    pub fn block_forward(&self, g: &mut Graph<T>, index: usize, x: Var, mode: Mode) -> Result<(Var, Vec<BatchStats<T>>)> {
        if index >= self.blocks.len() {
            return Err(Error::Config(format!("block index {index} out of range")));
        }
        let mut stats = Vec::new();
        let mut bind = Binder::new(self.params.len());
        let y = self.block(g, index, x, mode, &mut bind, &mut stats)?;
        Ok((y, stats))
    }

    /// Builds the forward computation for `input: [B, 1, H, W]` on `g`.
    pub fn forward(&self, g: &mut Graph<T>, input: Var, mode: Mode) -> Result<ForwardPass<T>> {
        let shape = g.value(input).shape().to_vec();
        let [_, c, h, w] = g.value(input).dims4("forward")?;
        if c != 1 {
            return Err(Error::shape("forward", format!("expected 1 input channel, got {shape:?}")));
        }
        if h < MIN_SIDE || w < MIN_SIDE {
            return Err(Error::InputTooSmall {
                height: h,
                width: w,
                min: MIN_SIDE,
            });
        }
        let mut bind = Binder::new(self.params.len());
        let mut stats = Vec::new();
        let mut x = self.conv(g, input, self.stem, &mut bind)?;
        for i in 0..self.blocks.len() {
            x = self.block(g, i, x, mode, &mut bind, &mut stats)?;
        }
        let x = self.bn(g, x, self.head_bn, mode, &mut bind, &mut stats)?;
        let x = g.relu(x);
        let x = g.global_avg_pool(x)?;
        let w = bind.get(g, &self.params, self.fc_weight);
        let b = bind.get(g, &self.params, self.fc_bias);
        let logits = g.linear(x, w, b)?;
        Ok(ForwardPass {
            logits,
            bn_stats: stats,
        })
    }

    /// Logits for a batch, without keeping the tape.
    pub fn logits(&self, batch: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let x = g.leaf(batch.clone(), false);
        let fp = self.forward(&mut g, x, mode)?;
        Ok(g.value(fp.logits).clone())
    }

    /// Per-class probabilities in `Eval` mode.
    pub fn predict_probs(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.logits(batch, Mode::Eval)?.map(crate::autodiff::sigmoid))
    }

    /// One training forward/backward pass: accumulates parameter gradients,
    /// updates running statistics and returns the loss.
    pub fn accumulate_gradients(&mut self, images: &Tensor<T>, targets: &Tensor<T>) -> Result<T> {
        let mut g = Graph::new();
        let x = g.leaf(images.clone(), false);
        let fp = self.forward(&mut g, x, Mode::Train)?;
        let probs = g.sigmoid(fp.logits);
        let loss = g.bce_loss(probs, targets)?;
        let value = g.value(loss).data()[0];
        g.backward_into(loss, &mut self.params)?;
        self.apply_bn_stats(&fp.bn_stats);
        Ok(value)
    }
}

/// Lazily places each parameter on the tape at most once per forward pass.
struct Binder {
    slots: Vec<Option<Var>>,
}

impl Binder {
    fn new(n: usize) -> Self {
        Binder { slots: vec![None; n] }
    }

    fn get<T: Scalar>(&mut self, g: &mut Graph<T>, params: &[Parameter<T>], index: usize) -> Var {
        *self.slots[index].get_or_insert_with(|| g.param(index, &params[index]))
    }
}
