//! Versioned little-endian binary checkpoints.
//!
//! Layout: magic `RTCK`, `u32` version, model section (config JSON, named
//! tensors), optimizer section (momentum, weight decay, named velocities),
//! learning-rate policy, optional training progress, end marker `KCTR`.
//! Strings are `u32` length + UTF-8; tensors are `u32` rank, `u64` dims and
//! `f64` values. Encoding is canonical, so save → load → save is
//! byte-identical.

use std::path::Path;

use crate::error::{Error, Result};
use crate::lrfinder::SweepRecord;
use crate::model::{Model, ModelConfig};
use crate::optim::{LrPolicy, SgdmState, SgdrSchedule};
use crate::pipeline::report::{StageReport, TraceRow};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"RTCK";
const END: &[u8; 4] = b"KCTR";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Where an interrupted run stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct Progress {
    pub stage: usize,
    pub epoch_in_stage: usize,
    pub batch_in_epoch: usize,
    pub global_step: usize,
    pub global_epoch: usize,
    pub base_lr: f64,
    pub trace: Vec<TraceRow>,
    pub stages: Vec<StageReport>,
    pub sweep: Option<SweepRecord<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model_config: ModelConfig,
    pub model_state: Vec<(String, Tensor<f64>)>,
    pub optimizer: SgdmState<f64>,
    pub schedule: LrPolicy<f64>,
    pub progress: Option<Progress>,
}

impl Checkpoint {
    pub fn new(model: &Model<f64>, optimizer: &SgdmState<f64>, schedule: LrPolicy<f64>) -> Self {
        Checkpoint {
            model_config: model.config().clone(),
            model_state: model
                .named_state()
                .into_iter()
                .map(|(n, t)| (n, t.clone()))
                .collect(),
            optimizer: optimizer.clone(),
            schedule,
            progress: None,
        }
    }

    /// Rebuilds the model from the stored configuration and tensors.
    pub fn model(&self) -> Result<Model<f64>> {
        let mut m = Model::new(self.model_config.clone())?;
        m.load_named_state(&self.model_state)?;
        Ok(m)
    }

    /// Loads the stored tensors into an existing model; fails on the first
    /// parameter whose name or shape differs.
    pub fn restore_into(&self, model: &mut Model<f64>) -> Result<()> {
        model.load_named_state(&self.model_state)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(CHECKPOINT_VERSION);
        w.str(&serde_json::to_string(&self.model_config)?);
        w.u32(self.model_state.len() as u32);
        for (name, t) in &self.model_state {
            w.str(name);
            w.tensor(t);
        }
        w.f64(self.optimizer.momentum);
        w.f64(self.optimizer.weight_decay);
        w.u32(self.optimizer.velocities.len() as u32);
        for v in &self.optimizer.velocities {
            w.tensor(v);
        }
        match &self.schedule {
            LrPolicy::Sgdr(s) => {
                w.u8(0);
                w.f64(s.eta_min);
                w.f64(s.eta_max);
                for v in [s.t0, s.t_mult, s.cycle_index, s.step_in_cycle] {
                    w.u64(v as u64);
                }
            }
            LrPolicy::Constant(lr) => {
                w.u8(1);
                w.f64(*lr);
            }
        }
        match &self.progress {
            None => w.u8(0),
            Some(p) => {
                w.u8(1);
                for v in [p.stage, p.epoch_in_stage, p.batch_in_epoch, p.global_step, p.global_epoch] {
                    w.u64(v as u64);
                }
                w.f64(p.base_lr);
                w.u64(p.trace.len() as u64);
                for r in &p.trace {
                    w.u64(r.step as u64);
                    w.f64(r.lr);
                    w.f64(r.train_loss);
                }
                w.str(&serde_json::to_string(&p.stages)?);
                w.str(&serde_json::to_string(&p.sweep)?);
            }
        }
        w.0.extend_from_slice(END);
        Ok(w.0)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let model_config: ModelConfig = serde_json::from_str(&r.str()?)?;
        let n = r.u32()? as usize;
        let mut model_state = Vec::with_capacity(n.min(4096));
        for _ in 0..n {
            let name = r.str()?;
            model_state.push((name, r.tensor()?));
        }
        let momentum = r.f64()?;
        let weight_decay = r.f64()?;
        let nv = r.u32()? as usize;
        let mut velocities = Vec::with_capacity(nv.min(4096));
        for _ in 0..nv {
            velocities.push(r.tensor()?);
        }
        let schedule = match r.u8()? {
            0 => {
                let eta_min = r.f64()?;
                let eta_max = r.f64()?;
                let t0 = r.u64()? as usize;
                let t_mult = r.u64()? as usize;
                let cycle_index = r.u64()? as usize;
                let step_in_cycle = r.u64()? as usize;
                LrPolicy::Sgdr(SgdrSchedule {
                    eta_min,
                    eta_max,
                    t0,
                    t_mult,
                    cycle_index,
                    step_in_cycle,
                })
            }
            1 => LrPolicy::Constant(r.f64()?),
            t => return Err(Error::Checkpoint(format!("unknown schedule tag {t}"))),
        };
        let progress = match r.u8()? {
            0 => None,
            1 => {
                let mut f = [0usize; 5];
                for v in &mut f {
                    *v = r.u64()? as usize;
                }
                let base_lr = r.f64()?;
                let nt = r.u64()? as usize;
                let mut trace = Vec::with_capacity(nt.min(1 << 20));
                for _ in 0..nt {
                    trace.push(TraceRow {
                        step: r.u64()? as usize,
                        lr: r.f64()?,
                        train_loss: r.f64()?,
                    });
                }
                let stages = serde_json::from_str(&r.str()?)?;
                let sweep = serde_json::from_str(&r.str()?)?;
                Some(Progress {
                    stage: f[0],
                    epoch_in_stage: f[1],
                    batch_in_epoch: f[2],
                    global_step: f[3],
                    global_epoch: f[4],
                    base_lr,
                    trace,
                    stages,
                    sweep,
                })
            }
            t => return Err(Error::Checkpoint(format!("unknown progress tag {t}"))),
        };
        if r.take(4)? != END {
            return Err(Error::Checkpoint("missing end marker".into()));
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after end marker",
                bytes.len() - r.pos
            )));
        }
        Ok(Checkpoint {
            model_config,
            model_state,
            optimizer: SgdmState {
                momentum,
                weight_decay,
                velocities,
            },
            schedule,
            progress,
        })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, ckpt.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn tensor(&mut self, t: &Tensor<f64>) {
        self.u32(t.ndim() as u32);
        for &d in t.shape() {
            self.u64(d as u64);
        }
        for &v in t.data() {
            self.f64(v);
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated at byte {} (wanted {n} more)", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint(format!("invalid UTF-8 before byte {}", self.pos)))
    }
    fn tensor(&mut self) -> Result<Tensor<f64>> {
        let rank = self.u32()? as usize;
        if rank > 8 {
            return Err(Error::Checkpoint(format!("implausible tensor rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u64()? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&n| n.saturating_mul(8) <= self.bytes.len() - self.pos)
            .ok_or_else(|| Error::Checkpoint(format!("truncated tensor at byte {}", self.pos)))?;
        let raw = self.take(n * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Tensor::new(shape, data)
    }
}
