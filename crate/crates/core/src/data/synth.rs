//! Synthetic multi-label glyph images.
//!
//! The image is divided into a 4×4 grid; pathology `c` owns cell `c`
//! (row-major) and is drawn there as its own geometric glyph. An image's
//! labels are exactly the glyphs present, or "No Finding" when none are.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::image::ImageBuffer;
use crate::data::manifest::ManifestRecord;
use crate::error::{Error, Result};
use crate::labels::{Finding, LabelSet, NUM_PATHOLOGIES};

pub const MIN_SYNTH_SIDE: usize = 32;
pub const IMAGES_PER_PATIENT: usize = 5;
pub const DEFAULT_PRIOR: f64 = 0.1;
const GRID: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_images: usize,
    pub side: usize,
    pub noise_std: f64,
    pub class_priors: [f64; NUM_PATHOLOGIES],
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_images: 2000,
            side: 64,
            noise_std: 0.1,
            class_priors: [DEFAULT_PRIOR; NUM_PATHOLOGIES],
        }
    }
}

/// Does pixel-centre `(u, v)` in unit cell coordinates belong to the glyph
/// of pathology `class`?
fn glyph_contains(class: usize, u: f64, v: f64) -> bool {
    let inside = |a: f64| (0.15..=0.85).contains(&a);
    let box_ = inside(u) && inside(v);
    let r = ((u - 0.5).powi(2) + (v - 0.5).powi(2)).sqrt();
    let diag = (u - v).abs();
    let anti = (u + v - 1.0).abs();
    match class {
        0 => (v - 0.5).abs() <= 0.125 && inside(u),
        1 => (u - 0.5).abs() <= 0.125 && inside(v),
        2 => diag <= 0.12 && box_,
        3 => anti <= 0.12 && box_,
        4 => r <= 0.32,
        5 => (0.2..=0.36).contains(&r),
        6 => ((u - 0.5).abs() <= 0.1 || (v - 0.5).abs() <= 0.1) && box_,
        7 => (diag <= 0.09 || anti <= 0.09) && box_,
        8 => (0.25..=0.75).contains(&u) && (0.25..=0.75).contains(&v),
        9 => box_ && !((0.32..=0.68).contains(&u) && (0.32..=0.68).contains(&v)),
        10 => (0.2..=0.8).contains(&v) && (u - 0.5).abs() <= (v - 0.2) * 0.5,
        11 => ((v - 0.3).abs() <= 0.08 || (v - 0.7).abs() <= 0.08) && inside(u),
        12 => ((u - 0.3).abs() <= 0.08 || (u - 0.7).abs() <= 0.08) && inside(v),
        13 => [(0.3, 0.3), (0.3, 0.7), (0.7, 0.3), (0.7, 0.7)]
            .iter()
            .any(|&(cu, cv)| ((u - cu).powi(2) + (v - cv).powi(2)).sqrt() <= 0.12),
        _ => false,
    }
}

/// Pixel mask of one pathology glyph on a `side × side` canvas.
pub fn glyph_mask(class: Finding, side: usize) -> Vec<bool> {
    let mut mask = vec![false; side * side];
    let c = class.index();
    if !class.is_pathology() {
        return mask;
    }
    let cell = side / GRID;
    let (y0, x0) = ((c / GRID) * cell, (c % GRID) * cell);
    for y in 0..cell {
        for x in 0..cell {
            let u = (x as f64 + 0.5) / cell as f64;
            let v = (y as f64 + 0.5) / cell as f64;
            if glyph_contains(c, u, v) {
                mask[(y0 + y) * side + x0 + x] = true;
            }
        }
    }
    mask
}

/// Noise-free rendering of a label set.
pub fn render(labels: &LabelSet, side: usize) -> ImageBuffer {
    let mut img = ImageBuffer::filled(side, side, 0.0);
    for &f in labels.iter().filter(|f| f.is_pathology()) {
        for (p, m) in img.pixels_mut().iter_mut().zip(glyph_mask(f, side)) {
            if m {
                *p = 1.0;
            }
        }
    }
    img
}

/// Generates `spec.n_images` images and their manifest records.
///
/// Every [`IMAGES_PER_PATIENT`] consecutive images share a synthetic
/// patient id. Pixels are returned already quantized to 8 bits, so saving
/// and reloading reproduces them exactly.
pub fn generate_synthetic(spec: &SynthSpec, seed: u64) -> Result<(Vec<ManifestRecord>, Vec<ImageBuffer>)> {
    if spec.side < MIN_SYNTH_SIDE {
        return Err(Error::Config(format!(
            "synthetic side must be at least {MIN_SYNTH_SIDE}, got {}",
            spec.side
        )));
    }
    if !(spec.noise_std >= 0.0) || spec.class_priors.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::Config("noise_std must be >= 0 and priors in [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = (spec.noise_std > 0.0)
        .then(|| Normal::new(0.0, spec.noise_std).expect("valid std"));
    let masks: Vec<Vec<bool>> = Finding::ALL[..NUM_PATHOLOGIES]
        .iter()
        .map(|&f| glyph_mask(f, spec.side))
        .collect();
    let mut records = Vec::with_capacity(spec.n_images);
    let mut images = Vec::with_capacity(spec.n_images);
    for i in 0..spec.n_images {
        let mut labels = LabelSet::new();
        for (c, &prior) in spec.class_priors.iter().enumerate() {
            if rng.random::<f64>() < prior {
                labels.insert(Finding::ALL[c]);
            }
        }
        let mut img = ImageBuffer::filled(spec.side, spec.side, 0.0);
        for f in &labels {
            for (p, &m) in img.pixels_mut().iter_mut().zip(&masks[f.index()]) {
                if m {
                    *p = 1.0;
                }
            }
        }
        if let Some(n) = &noise {
            for p in img.pixels_mut() {
                *p = (*p + n.sample(&mut rng)).clamp(0.0, 1.0);
            }
        }
        if labels.is_empty() {
            labels.insert(Finding::NoFinding);
        }
        let patient = i / IMAGES_PER_PATIENT;
        records.push(ManifestRecord {
            image_id: format!("{patient:08}_{:03}", i % IMAGES_PER_PATIENT),
            patient_id: format!("{patient:08}"),
            labels,
        });
        images.push(img.quantized());
    }
    Ok((records, images))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn glyphs_are_nonempty_and_disjoint() {
        for side in [32, 64, 100] {
            let masks: Vec<Vec<bool>> = (0..NUM_PATHOLOGIES)
                .map(|c| glyph_mask(Finding::ALL[c], side))
                .collect();
            for (c, m) in masks.iter().enumerate() {
                assert!(m.iter().filter(|&&b| b).count() >= 4, "class {c} at {side}");
                for other in &masks[c + 1..] {
                    assert!(m.iter().zip(other).all(|(a, b)| !(a & b)));
                }
            }
            for (a, ma) in masks.iter().enumerate() {
                for mb in &masks[a + 1..] {
                    assert_ne!(ma, mb);
                }
            }
        }
    }

    #[test]
    fn blank_without_priors() {
        let spec = SynthSpec {
            n_images: 12,
            side: 32,
            noise_std: 0.0,
            class_priors: [0.0; NUM_PATHOLOGIES],
        };
        let (recs, imgs) = generate_synthetic(&spec, 3).unwrap();
        assert!(recs.iter().all(|r| r.labels == LabelSet::from([Finding::NoFinding])));
        assert!(imgs.iter().all(|im| im.pixels().iter().all(|&v| v == 0.0)));
        assert_eq!(recs[4].patient_id, recs[0].patient_id);
        assert_ne!(recs[5].patient_id, recs[0].patient_id);
    }

    #[test]
    fn small_side_rejected() {
        let spec = SynthSpec {
            side: 31,
            ..SynthSpec::default()
        };
        assert!(generate_synthetic(&spec, 0).is_err());
    }
}
