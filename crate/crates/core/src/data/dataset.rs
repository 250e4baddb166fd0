//! In-memory dataset, normalization statistics and mini-batching.

use std::path::Path;
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::image::{read_pgm, write_pgm, ImageBuffer};
use crate::data::manifest::{parse_manifest, write_manifest, ManifestRecord};
use crate::data::split::{Split, SplitAssignment};
use crate::error::{Error, Result};
use crate::labels::{encode_khot, NUM_CLASSES};
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const IMAGE_DIR: &str = "images";
pub const DEFAULT_BATCH_SIZE: usize = 50;

/// Why an image was read. Recorded so that test-split isolation can be
/// audited after a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    NormStats,
    LrFind,
    Train,
    Validate,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Access {
    pub record: usize,
    pub purpose: Purpose,
}

/// Scalar pixel normalization `(v - mean) / std`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// `[B, 1, side, side]`
    pub images: Tensor<f64>,
    /// `[B, 15]` k-hot
    pub targets: Tensor<f64>,
    pub image_ids: Vec<String>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.image_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.image_ids.is_empty()
    }
}

#[derive(Debug)]
pub struct Dataset {
    records: Vec<ManifestRecord>,
    images: Vec<ImageBuffer>,
    log: Mutex<Vec<Access>>,
}

impl Clone for Dataset {
    fn clone(&self) -> Self {
        Dataset {
            records: self.records.clone(),
            images: self.images.clone(),
            log: Mutex::new(Vec::new()),
        }
    }
}

impl Dataset {
    pub fn new(records: Vec<ManifestRecord>, images: Vec<ImageBuffer>) -> Result<Self> {
        if records.len() != images.len() {
            return Err(Error::Config(format!(
                "{} records but {} images",
                records.len(),
                images.len()
            )));
        }
        Ok(Dataset {
            records,
            images,
            log: Mutex::new(Vec::new()),
        })
    }

    /// Reads `manifest.csv` and `images/<image_id>.pgm` from `dir`.
    pub fn load(dir: &Path) -> Result<Self> {
        let mpath = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let records = parse_manifest(&text)?;
        let images = records
            .iter()
            .map(|r| {
                let p = image_path(dir, &r.image_id);
                if !p.exists() {
                    return Err(Error::MissingImage {
                        image_id: r.image_id.clone(),
                    });
                }
                read_pgm(&p)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(records, images)
    }

    /// Writes the manifest and one PGM per image into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let idir = dir.join(IMAGE_DIR);
        std::fs::create_dir_all(&idir).map_err(|e| Error::io(&idir, e))?;
        let mpath = dir.join(MANIFEST_FILE);
        std::fs::write(&mpath, write_manifest(&self.records)).map_err(|e| Error::io(&mpath, e))?;
        for (r, img) in self.records.iter().zip(&self.images) {
            write_pgm(img, &image_path(dir, &r.image_id))?;
        }
        Ok(())
    }

    pub fn records(&self) -> &[ManifestRecord] {
        &self.records
    }

    pub fn images(&self) -> &[ImageBuffer] {
        &self.images
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Snapshot of every image access so far.
    pub fn access_log(&self) -> Vec<Access> {
        self.log.lock().expect("access log poisoned").clone()
    }

    pub fn clear_access_log(&self) {
        self.log.lock().expect("access log poisoned").clear();
    }

    fn record_access(&self, indices: &[usize], purpose: Purpose) {
        let mut log = self.log.lock().expect("access log poisoned");
        log.extend(indices.iter().map(|&record| Access { record, purpose }));
    }

    /// Global pixel mean / std over the training split at stored
    /// resolution.
    pub fn norm_stats(&self, splits: &SplitAssignment) -> Result<NormStats> {
        let idx = splits.record_indices(&self.records, Split::Train);
        if idx.is_empty() {
            return Err(Error::EmptyData("training split is empty"));
        }
        self.record_access(&idx, Purpose::NormStats);
        let (mut n, mut sum) = (0usize, 0.0f64);
        for &i in &idx {
            n += self.images[i].pixels().len();
            sum += self.images[i].pixels().iter().sum::<f64>();
        }
        let mean = sum / n as f64;
        let mut ss = 0.0;
        for &i in &idx {
            ss += self.images[i].pixels().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
        }
        let std = (ss / n as f64).sqrt();
        Ok(NormStats {
            mean,
            std: if std > 0.0 { std } else { 1.0 },
        })
    }

    /// Mini-batches of one split at `side × side`.
    ///
    /// With `epoch = Some(e)` the split is shuffled by a generator seeded
    /// with `seed ^ e`; with `None` the manifest order is kept. The final
    /// partial batch is kept.
    #[allow(clippy::too_many_arguments)]
    pub fn batches(
        &self,
        splits: &SplitAssignment,
        split: Split,
        batch_size: usize,
        side: usize,
        norm: NormStats,
        seed: u64,
        epoch: Option<u64>,
        purpose: Purpose,
    ) -> Result<Vec<Batch>> {
        if batch_size == 0 || side == 0 {
            return Err(Error::Config("batch size and side must be positive".into()));
        }
        let mut idx = splits.record_indices(&self.records, split);
        if idx.is_empty() {
            return Err(Error::EmptyData("requested split has no images"));
        }
        if let Some(e) = epoch {
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ e));
        }
        self.record_access(&idx, purpose);
        idx.chunks(batch_size)
            .map(|chunk| self.make_batch(chunk, side, norm))
            .collect()
    }

    fn make_batch(&self, chunk: &[usize], side: usize, norm: NormStats) -> Result<Batch> {
        let plane = side * side;
        let mut pix = Vec::with_capacity(chunk.len() * plane);
        let mut tgt = Vec::with_capacity(chunk.len() * NUM_CLASSES);
        let mut ids = Vec::with_capacity(chunk.len());
        for &i in chunk {
            let r = &self.records[i];
            let img = self.images[i].resize(side);
            pix.extend(img.pixels().iter().map(|v| (v - norm.mean) / norm.std));
            tgt.extend(encode_khot(&r.labels)?.to_f64());
            ids.push(r.image_id.clone());
        }
        Ok(Batch {
            images: Tensor::new(vec![chunk.len(), 1, side, side], pix)?,
            targets: Tensor::new(vec![chunk.len(), NUM_CLASSES], tgt)?,
            image_ids: ids,
        })
    }
}

pub fn image_path(dir: &Path, image_id: &str) -> std::path::PathBuf {
    dir.join(IMAGE_DIR).join(format!("{image_id}.pgm"))
}
