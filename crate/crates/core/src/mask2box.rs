//! Pseudo ground-truth boxes from binary anomaly masks: square dilation,
//! 8-connected components, one enclosing box per component.

use std::collections::VecDeque;
use std::path::Path;

use image::{DynamicImage, ImageFormat};
use thiserror::Error;

use crate::model::BBox;

/// Pixel values strictly above this are foreground.
pub const PGM_THRESHOLD: u16 = 127;

#[derive(Debug, Error)]
pub enum MaskError {
    #[error("kernel size must be odd and >= 1, got {0}")]
    EvenKernel(usize),
    #[error("mask data has {got} pixels, expected {width}x{height}")]
    DimensionMismatch {
        width: usize,
        height: usize,
        got: usize,
    },
    #[error("{path}: {reason}")]
    Pgm { path: String, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self, MaskError> {
        if data.len() != width * height {
            return Err(MaskError::DimensionMismatch {
                width,
                height,
                got: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    /// Thresholds 8-bit gray values (`> 127` is set).
    pub fn from_bytes(width: usize, height: usize, bytes: &[u8]) -> Result<Self, MaskError> {
        Self::new(
            width,
            height,
            bytes
                .iter()
                .map(|&b| u16::from(b) > PGM_THRESHOLD)
                .collect(),
        )
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|b| **b).count()
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }
}

/// Decodes a P2 (ASCII) or P5 (binary) PGM and thresholds it.
pub fn decode_pgm(bytes: &[u8], path: &str) -> Result<BinaryMask, MaskError> {
    let err = |reason: String| MaskError::Pgm {
        path: path.to_string(),
        reason,
    };
    if !(bytes.starts_with(b"P2") || bytes.starts_with(b"P5")) {
        return Err(err("not a P2 or P5 PGM file".into()));
    }
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Pnm)
        .map_err(|e| err(e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<bool> = match img {
        DynamicImage::ImageLuma8(buf) => buf
            .into_raw()
            .into_iter()
            .map(|v| u16::from(v) > PGM_THRESHOLD)
            .collect(),
        DynamicImage::ImageLuma16(buf) => buf
            .into_raw()
            .into_iter()
            .map(|v| v > PGM_THRESHOLD)
            .collect(),
        other => return Err(err(format!("unsupported pixel layout {:?}", other.color()))),
    };
    BinaryMask::new(w, h, data)
}

pub fn read_pgm(path: &Path) -> Result<BinaryMask, MaskError> {
    let name = path.display().to_string();
    let bytes = std::fs::read(path).map_err(|source| MaskError::Io {
        path: name.clone(),
        source,
    })?;
    decode_pgm(&bytes, &name)
}

fn check_kernel(kernel: usize) -> Result<usize, MaskError> {
    if kernel.is_multiple_of(2) {
        return Err(MaskError::EvenKernel(kernel));
    }
    Ok(kernel / 2)
}

/// Binary dilation by a `kernel x kernel` square, applied `iterations` times.
/// Pixels outside the frame are treated as unset.
pub fn dilate(
    mask: &BinaryMask,
    kernel: usize,
    iterations: usize,
) -> Result<BinaryMask, MaskError> {
    let r = check_kernel(kernel)?;
    let (w, h) = (mask.width, mask.height);
    let mut cur = mask.clone();
    if r == 0 {
        return Ok(cur);
    }
    // the square element is separable: a row pass then a column pass
    let mut tmp = vec![false; w * h];
    for _ in 0..iterations {
        for y in 0..h {
            let row = &cur.data[y * w..(y + 1) * w];
            for x in 0..w {
                let lo = x.saturating_sub(r);
                let hi = (x + r).min(w - 1);
                tmp[y * w + x] = row[lo..=hi].iter().any(|b| *b);
            }
        }
        for x in 0..w {
            for y in 0..h {
                let lo = y.saturating_sub(r);
                let hi = (y + r).min(h - 1);
                cur.data[y * w + x] = (lo..=hi).any(|yy| tmp[yy * w + x]);
            }
        }
    }
    Ok(cur)
}

/// 8-connected components as lists of `(x, y)` pixels, in raster order of
/// their first pixel.
pub fn components(mask: &BinaryMask) -> Vec<Vec<(usize, usize)>> {
    let (w, h) = (mask.width, mask.height);
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if !mask.data[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut comp = Vec::new();
        while let Some(idx) = queue.pop_front() {
            let (x, y) = (idx % w, idx / w);
            comp.push((x, y));
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let n = ny * w + nx;
                    if mask.data[n] && !seen[n] {
                        seen[n] = true;
                        queue.push_back(n);
                    }
                }
            }
        }
        out.push(comp);
    }
    out
}

/// Half-open enclosing box `[min_x, min_y, max_x + 1, max_y + 1]`.
pub fn pixel_box(pixels: &[(usize, usize)]) -> Option<BBox> {
    let (x0, y0) = pixels.first()?;
    let (mut x1, mut y1, mut x2, mut y2) = (*x0, *y0, *x0, *y0);
    for &(x, y) in pixels {
        x1 = x1.min(x);
        y1 = y1.min(y);
        x2 = x2.max(x);
        y2 = y2.max(y);
    }
    Some(BBox {
        x1: x1 as f64,
        y1: y1 as f64,
        x2: (x2 + 1) as f64,
        y2: (y2 + 1) as f64,
    })
}

/// Dilate, label, enclose. Boxes with area below `min_area` are dropped and
/// the rest are sorted by `(y1, x1)`.
pub fn to_boxes(
    mask: &BinaryMask,
    kernel: usize,
    iterations: usize,
    min_area: f64,
) -> Result<Vec<BBox>, MaskError> {
    let grown = dilate(mask, kernel, iterations)?;
    let mut boxes: Vec<BBox> = components(&grown)
        .iter()
        .filter_map(|c| pixel_box(c))
        .filter(|b| b.area() >= min_area)
        .collect();
    boxes.sort_by(|a, b| a.y1.total_cmp(&b.y1).then(a.x1.total_cmp(&b.x1)));
    Ok(boxes)
}
