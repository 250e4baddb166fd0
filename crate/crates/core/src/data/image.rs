//! Grayscale image buffers, bilinear resizing and binary PGM IO.

use std::path::Path;

use crate::error::{Error, Result};

/// Row-major grayscale image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || pixels.len() != height * width {
            return Err(Error::Config(format!(
                "image {height}x{width} cannot hold {} pixels",
                pixels.len()
            )));
        }
        Ok(ImageBuffer {
            height,
            width,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        ImageBuffer {
            height,
            width,
            pixels: vec![value; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    /// Rounds every pixel onto the 8-bit grid used by [`write_pgm`].
    pub fn quantized(&self) -> ImageBuffer {
        ImageBuffer {
            height: self.height,
            width: self.width,
            pixels: self.pixels.iter().map(|&v| quantize(v) as f64 / 255.0).collect(),
        }
    }

    /// Bilinear resize to `side × side`; the two axes scale independently.
    pub fn resize(&self, side: usize) -> ImageBuffer {
        resize(self, side)
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Source coordinates and weights along one axis, pixel centres aligned.
fn axis_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|d| {
            let pos = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

/// Bilinear interpolation with half-pixel centres and edge clamping.
/// Resizing to the current size is the identity.
pub fn resize(img: &ImageBuffer, side: usize) -> ImageBuffer {
    resize_to(img, side, side)
}

pub fn resize_to(img: &ImageBuffer, height: usize, width: usize) -> ImageBuffer {
    assert!(height > 0 && width > 0, "resize target must be positive");
    if height == img.height && width == img.width {
        return img.clone();
    }
    let ys = axis_taps(img.height, height);
    let xs = axis_taps(img.width, width);
    let mut pixels = Vec::with_capacity(height * width);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = img.get(y0, x0) * (1.0 - fx) + img.get(y0, x1) * fx;
            let bot = img.get(y1, x0) * (1.0 - fx) + img.get(y1, x1) * fx;
            pixels.push((top * (1.0 - fy) + bot * fy).clamp(0.0, 1.0));
        }
    }
    ImageBuffer {
        height,
        width,
        pixels,
    }
}

/// Binary PGM (P5, maxval 255), pixel = round(value · 255).
pub fn encode_pgm(img: &ImageBuffer) -> Vec<u8> {
    let header = format!("P5\n{} {}\n255\n", img.width, img.height);
    let mut out = Vec::with_capacity(header.len() + img.pixels.len());
    out.extend_from_slice(header.as_bytes());
    out.extend(img.pixels.iter().map(|&v| quantize(v)));
    out
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderReader<'_> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Pgm {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err(format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Pgm {
                offset: start,
                message: format!("{what} out of range"),
            })
    }
}

/// Decodes binary PGM. Any maxval up to 65535 is accepted and rescaled to
/// `[0, 1]` as `v / maxval`.
pub fn decode_pgm(bytes: &[u8]) -> Result<ImageBuffer> {
    let mut r = HeaderReader { bytes, pos: 0 };
    if bytes.get(..2) != Some(b"P5") {
        return Err(r.err("missing P5 magic"));
    }
    r.pos = 2;
    let width = r.number("width")?;
    let height = r.number("height")?;
    let maxval = r.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(r.err("zero image dimension"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(r.err(format!("maxval {maxval} outside 1..=65535")));
    }
    match bytes.get(r.pos) {
        Some(b) if b.is_ascii_whitespace() => r.pos += 1,
        _ => return Err(r.err("expected a single whitespace byte before pixel data")),
    }
    let bpp = if maxval < 256 { 1 } else { 2 };
    let need = width * height * bpp;
    let data = &bytes[r.pos..];
    if data.len() < need {
        return Err(Error::Pgm {
            offset: bytes.len(),
            message: format!("pixel data truncated: need {need} bytes, found {}", data.len()),
        });
    }
    let scale = maxval as f64;
    let mut pixels = Vec::with_capacity(width * height);
    for i in 0..width * height {
        let v = if bpp == 1 {
            data[i] as usize
        } else {
            (data[2 * i] as usize) << 8 | data[2 * i + 1] as usize
        };
        if v > maxval {
            return Err(Error::Pgm {
                offset: r.pos + i * bpp,
                message: format!("sample {v} exceeds maxval {maxval}"),
            });
        }
        pixels.push(v as f64 / scale);
    }
    ImageBuffer::new(height, width, pixels)
}

pub fn read_pgm(path: &Path) -> Result<ImageBuffer> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes)
}

pub fn write_pgm(img: &ImageBuffer, path: &Path) -> Result<()> {
    std::fs::write(path, encode_pgm(img)).map_err(|e| Error::io(path, e))
}
