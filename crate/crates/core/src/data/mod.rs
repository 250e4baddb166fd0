//! Manifest ingestion, k-hot targets, patient-grouped splits, image IO and
//! batching.

mod dataset;
mod image;
mod manifest;
mod split;
mod synth;

pub use dataset::{image_path, Access, Batch, Dataset, NormStats, Purpose, DEFAULT_BATCH_SIZE, IMAGE_DIR, MANIFEST_FILE};
pub use image::{decode_pgm, encode_pgm, read_pgm, resize, resize_to, write_pgm, ImageBuffer};
pub use manifest::{parse_manifest, write_manifest, ManifestRecord, MANIFEST_HEADER};
pub use split::{group_split, Split, SplitAssignment, DEFAULT_FRACTIONS};
pub use synth::{generate_synthetic, glyph_mask, render, SynthSpec, DEFAULT_PRIOR, IMAGES_PER_PATIENT, MIN_SYNTH_SIDE};
