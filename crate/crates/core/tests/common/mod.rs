//! Shared oracles and fixtures for the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use radtrain::autodiff::{finite_diff_grad, max_rel_error, Graph, Mode, RunningStats, Var};
use radtrain::data::{generate_synthetic, group_split, Dataset, ManifestRecord, SplitAssignment, SynthSpec, DEFAULT_FRACTIONS};
use radtrain::labels::{Finding, LabelSet, NUM_CLASSES};
use radtrain::lrfinder::Trainee;
use radtrain::model::{Model, ModelConfig};
use radtrain::pipeline::{LrSetting, PipelineConfig, Variant};
use radtrain::tensor::Tensor;
use radtrain::Result;

pub const FD_EPS: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Uniform in `[-hi, -lo] ∪ [lo, hi]`, keeping finite differences away from
/// the relu kink.
pub fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(lo..hi);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

pub fn binary(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| if rng.random_bool(0.5) { 1.0 } else { 0.0 })
}

/// `sum(out ⊙ r)` for a fixed random `r`, so the loss depends on every
/// output entry with a distinct weight.
pub fn project(g: &mut Graph<f64>, out: Var, seed: u64) -> Var {
    let mut r = rng(seed);
    let w = uniform(&mut r, g.value(out).shape(), -1.0, 1.0);
    let w = g.leaf(w, false);
    let m = g.mul(out, w).expect("same shape");
    g.sum(m)
}

/// Largest relative error between reverse-mode and central-difference
/// gradients of `build` with respect to every input.
pub fn check_gradients(inputs: &[Tensor<f64>], build: &dyn Fn(&mut Graph<f64>, &[Var]) -> Var) -> f64 {
    let eval = |xs: &[Tensor<f64>]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.leaf(t.clone(), true)).collect();
        let loss = build(&mut g, &vars);
        (g, vars, loss)
    };
    let (g, vars, loss) = eval(inputs);
    let grads = g.backward(loss).expect("scalar loss");
    let mut worst = 0.0f64;
    for (i, x) in inputs.iter().enumerate() {
        let analytic = grads
            .get(vars[i])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(x.shape()));
        let numeric = finite_diff_grad(
            |t: &Tensor<f64>| {
                let mut xs = inputs.to_vec();
                xs[i] = t.clone();
                let (g, _, l) = eval(&xs);
                g.value(l).data()[0]
            },
            x,
            FD_EPS,
        );
        worst = worst.max(max_rel_error(&analytic, &numeric));
    }
    worst
}

/// Worst gradient error of a random convolution.
pub fn conv_case(seed: u64, stride: usize, pad: usize, k: usize) -> f64 {
    let mut r = rng(seed);
    let inputs = vec![
        uniform(&mut r, &[2, 2, 5, 6], -1.0, 1.0),
        uniform(&mut r, &[3, 2, k, k], -1.0, 1.0),
        uniform(&mut r, &[3], -1.0, 1.0),
    ];
    check_gradients(&inputs, &|g, v| {
        let y = g.conv2d(v[0], v[1], v[2], stride, pad).unwrap();
        project(g, y, seed)
    })
}

/// Worst gradient error of a random batch norm in `mode`.
pub fn batchnorm_case(seed: u64, mode: Mode, b: usize, c: usize, side: usize) -> f64 {
    let mut r = rng(seed);
    let inputs = vec![
        uniform(&mut r, &[b, c, side, side], -2.0, 2.0),
        uniform(&mut r, &[c], 0.5, 1.5),
        uniform(&mut r, &[c], -0.5, 0.5),
    ];
    let running = RunningStats {
        mean: uniform(&mut r, &[c], -0.5, 0.5),
        var: uniform(&mut r, &[c], 0.5, 2.0),
    };
    check_gradients(&inputs, &|g, v| {
        let (y, _) = g.batchnorm2d(v[0], v[1], v[2], &running, 1e-5, mode).unwrap();
        project(g, y, seed)
    })
}

/// Training-mode BCE loss of `model` on one batch, without side effects.
pub fn model_loss(model: &Model<f64>, images: &Tensor<f64>, targets: &Tensor<f64>) -> f64 {
    let mut g = Graph::new();
    let x = g.leaf(images.clone(), false);
    let fp = model.forward(&mut g, x, Mode::Train).expect("forward");
    let p = g.sigmoid(fp.logits);
    let l = g.bce_loss(p, targets).expect("loss");
    g.value(l).data()[0]
}

/// Checks the parameter gradients of a whole model against central
/// differences. `coords_per_param` limits the coordinates probed per tensor
/// (`None` probes all of them). Returns the worst relative error and the
/// number of coordinates probed.
pub fn check_model_gradients(
    model: &Model<f64>,
    images: &Tensor<f64>,
    targets: &Tensor<f64>,
    coords_per_param: Option<usize>,
    seed: u64,
) -> (f64, usize) {
    let mut m = model.clone();
    m.zero_grad();
    m.accumulate_gradients(images, targets).expect("backward");
    let mut r = rng(seed);
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    let mut probed = 0;
    for (pi, p) in m.params().iter().enumerate() {
        let n = p.value.numel();
        let coords: Vec<usize> = match coords_per_param {
            None => (0..n).collect(),
            Some(k) if k >= n => (0..n).collect(),
            Some(k) => (0..k).map(|_| r.random_range(0..n)).collect(),
        };
        for c in coords {
            let orig = probe.params()[pi].value.data()[c];
            probe.params_mut()[pi].value.data_mut()[c] = orig + FD_EPS;
            let up = model_loss(&probe, images, targets);
            probe.params_mut()[pi].value.data_mut()[c] = orig - FD_EPS;
            let down = model_loss(&probe, images, targets);
            probe.params_mut()[pi].value.data_mut()[c] = orig;
            let numeric = (up - down) / (2.0 * FD_EPS);
            let analytic = p.grad.data()[c];
            let err = (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs());
            worst = worst.max(err);
            probed += 1;
        }
    }
    (worst, probed)
}

/// The O(P·N) pairwise statistic `(wins + ties / 2) / (P · N)`.
pub fn pairwise_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l).map(|(&s, _)| s).collect();
    let neg: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| !l).map(|(&s, _)| s).collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut score = 0.0;
    for &p in &pos {
        for &n in &neg {
            if p > n {
                score += 1.0;
            } else if p == n {
                score += 0.5;
            }
        }
    }
    Some(score / (pos.len() * neg.len()) as f64)
}

/// Steps at which a brute-force simulator of cycle lengths `t0 · t_mult^i`
/// restarts, up to and including `steps`.
pub fn brute_force_restarts(t0: usize, t_mult: usize, steps: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut len = t0;
    let mut in_cycle = 0;
    for step in 1..=steps {
        in_cycle += 1;
        if in_cycle == len {
            out.push(step);
            in_cycle = 0;
            len *= t_mult;
        }
    }
    out
}

/// `(patients, images per patient)` manifest with random valid labels.
pub fn random_manifest(rng: &mut ChaCha8Rng, patients: usize, max_images: usize) -> Vec<ManifestRecord> {
    let mut out = Vec::new();
    for p in 0..patients {
        let n = rng.random_range(1..=max_images);
        for i in 0..n {
            let mut labels = LabelSet::new();
            for f in Finding::ALL.iter().filter(|f| f.is_pathology()) {
                if rng.random_bool(0.1) {
                    labels.insert(*f);
                }
            }
            if labels.is_empty() {
                labels.insert(Finding::NoFinding);
            }
            out.push(ManifestRecord {
                image_id: format!("p{p:05}_{i}.pgm"),
                patient_id: format!("p{p:05}"),
                labels,
            });
        }
    }
    out
}

/// Quadratic toy `L(w) = ½ λ w²` trained by plain gradient descent.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadratic {
    pub w: f64,
    pub lambda: f64,
}

impl Quadratic {
    pub fn loss(&self) -> f64 {
        0.5 * self.lambda * self.w * self.w
    }
}

impl Trainee<f64> for Quadratic {
    type Batch = ();

    fn train_step(&mut self, _: &(), lr: f64) -> Result<f64> {
        let loss = self.loss();
        self.w -= lr * self.lambda * self.w;
        Ok(loss)
    }
}

/// A small synthetic dataset with its patient split.
pub fn small_dataset(n_images: usize, side: usize, seed: u64) -> (Dataset, SplitAssignment) {
    let spec = SynthSpec {
        n_images,
        side,
        ..SynthSpec::default()
    };
    let (records, images) = generate_synthetic(&spec, seed).expect("synthetic data");
    let splits = group_split(&records, DEFAULT_FRACTIONS, seed).expect("split");
    (Dataset::new(records, images).expect("dataset"), splits)
}

/// A pipeline configuration small enough for unit-speed tests.
pub fn small_config(variant: Variant) -> PipelineConfig {
    PipelineConfig {
        variant,
        sizes: vec![16, 32],
        epochs_per_stage: 2,
        batch_size: 10,
        seed: 3,
        model: ModelConfig {
            stem_channels: 4,
            stage_widths: vec![4, 8],
            blocks_per_stage: 1,
            ..ModelConfig::default()
        },
        ..PipelineConfig::default()
    }
}

pub fn with_fixed_lr(mut cfg: PipelineConfig, lr: f64) -> PipelineConfig {
    cfg.lr = LrSetting::Fixed(lr);
    cfg
}

pub fn random_targets(rng: &mut ChaCha8Rng, batch: usize) -> Tensor<f64> {
    binary(rng, &[batch, NUM_CLASSES])
}
