//! Image decoding, resizing, standardization, and training-time augmentation.

pub mod ppm;

use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// RGB image with values in [0,1], stored as `[3×H×W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageRecord {
    pub pixels: Tensor<f32>,
    pub source: Option<PathBuf>,
    /// (height, width) before resizing.
    pub original_dims: (usize, usize),
}

impl ImageRecord {
    pub fn new(pixels: Tensor<f32>) -> Result<Self> {
        let s = pixels.shape();
        if s.len() != 3 || s[0] != 3 || s[1] == 0 || s[2] == 0 {
            return Err(Error::Dimension(format!(
                "image tensor must be [3×H×W] with H,W ≥ 1, got {s:?}"
            )));
        }
        if pixels.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Data("image values must lie in [0,1]".into()));
        }
        let original_dims = (s[1], s[2]);
        Ok(ImageRecord {
            pixels,
            source: None,
            original_dims,
        })
    }

    pub fn height(&self) -> usize {
        self.pixels.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[2]
    }

    /// Writes the image as 8-bit P6.
    pub fn save_ppm(&self, path: &Path) -> Result<()> {
        let bytes = ppm::encode(self.pixels.data(), self.width(), self.height());
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}

/// Decodes a PPM/PGM file and resizes it to `target×target`.
pub fn load_and_resize(path: &Path, target: usize) -> Result<ImageRecord> {
    if target == 0 {
        return Err(Error::Config("image target size must be positive".into()));
    }
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let raster =
        ppm::decode(&bytes).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let pixels = resize_bilinear(&raster.pixels, raster.height, raster.width, target, target);
    Ok(ImageRecord {
        pixels: Tensor::new(&[3, target, target], pixels)?,
        source: Some(path.to_path_buf()),
        original_dims: (raster.height, raster.width),
    })
}

/// Bilinear resampling of a `[3×h×w]` buffer with half-pixel centers and
/// edge clamping.
pub fn resize_bilinear(src: &[f32], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f32> {
    let axis = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f32)> {
        let ratio = n_in as f64 / n_out as f64;
        (0..n_out)
            .map(|o| {
                let s = ((o as f64 + 0.5) * ratio - 0.5).clamp(0.0, (n_in - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(n_in - 1);
                (i0, i1, (s - i0 as f64) as f32)
            })
            .collect()
    };
    let ys = axis(h, out_h);
    let xs = axis(w, out_w);
    let mut out = vec![0.0f32; 3 * out_h * out_w];
    for c in 0..3 {
        let plane = &src[c * h * w..(c + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                out[(c * out_h + oy) * out_w + ox] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    out
}

pub const DEFAULT_MEAN: [f32; 3] = [0.5, 0.5, 0.5];
pub const DEFAULT_STD: [f32; 3] = [0.5, 0.5, 0.5];

/// `(pixels[c] − mean[c]) / std[c]` per channel.
pub fn standardize(img: &ImageRecord, mean: [f32; 3], std: [f32; 3]) -> Result<Tensor<f32>> {
    if std.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::Config(format!(
            "standardization std must be positive, got {std:?}"
        )));
    }
    let plane = img.height() * img.width();
    let data = img
        .pixels
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let c = i / plane;
            (v - mean[c]) / std[c]
        })
        .collect();
    Tensor::new(img.pixels.shape(), data)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub enabled: bool,
    pub horizontal_flip_prob: f64,
    /// Maximum rotation magnitude in degrees.
    pub rotation_degrees: f64,
    pub zoom_range: [f64; 2],
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            enabled: true,
            horizontal_flip_prob: 0.5,
            rotation_degrees: 15.0,
            zoom_range: [0.8, 1.2],
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        AugmentConfig {
            enabled: false,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.horizontal_flip_prob) {
            return Err(Error::Config(format!(
                "horizontal_flip_prob must be in [0,1], got {}",
                self.horizontal_flip_prob
            )));
        }
        if !(self.rotation_degrees >= 0.0) || !self.rotation_degrees.is_finite() {
            return Err(Error::Config(format!(
                "rotation_degrees must be a finite non-negative number, got {}",
                self.rotation_degrees
            )));
        }
        let [lo, hi] = self.zoom_range;
        if !(lo > 0.0) || !(lo <= hi) || !hi.is_finite() {
            return Err(Error::Config(format!(
                "zoom_range must satisfy 0 < min ≤ max, got [{lo}, {hi}]"
            )));
        }
        Ok(())
    }
}

/// Mirrors the image left to right.
pub fn flip_horizontal(img: &ImageRecord) -> ImageRecord {
    let (h, w) = (img.height(), img.width());
    let src = img.pixels.data();
    let mut out = vec![0.0f32; src.len()];
    for c in 0..3 {
        for y in 0..h {
            let row = (c * h + y) * w;
            for x in 0..w {
                out[row + x] = src[row + w - 1 - x];
            }
        }
    }
    with_pixels(img, out)
}

/// Rotates by `degrees` (counter-clockwise) and zooms by `zoom` about the
/// image center. Output pixels are sampled bilinearly from the inverse
/// mapping; samples falling outside the source read as zero.
pub fn rotate_zoom(img: &ImageRecord, degrees: f64, zoom: f64) -> ImageRecord {
    let (h, w) = (img.height(), img.width());
    let src = img.pixels.data();
    let (sin, cos) = (-degrees.to_radians()).sin_cos();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let tap = |plane: &[f32], y: isize, x: isize| -> f32 {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            0.0
        } else {
            plane[y as usize * w + x as usize]
        }
    };
    let mut out = vec![0.0f32; src.len()];
    for y in 0..h {
        for x in 0..w {
            let (dy, dx) = ((y as f64 - cy) / zoom, (x as f64 - cx) / zoom);
            // image rows grow downwards, so counter-clockwise flips the sign of sin
            let sx = cos * dx + sin * dy + cx;
            let sy = -sin * dx + cos * dy + cy;
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = ((sx - x0) as f32, (sy - y0) as f32);
            let (x0, y0) = (x0 as isize, y0 as isize);
            for c in 0..3 {
                let plane = &src[c * h * w..(c + 1) * h * w];
                let top = tap(plane, y0, x0) * (1.0 - fx) + tap(plane, y0, x0 + 1) * fx;
                let bot = tap(plane, y0 + 1, x0) * (1.0 - fx) + tap(plane, y0 + 1, x0 + 1) * fx;
                out[(c * h + y) * w + x] = (top * (1.0 - fy) + bot * fy).clamp(0.0, 1.0);
            }
        }
    }
    with_pixels(img, out)
}

/// Samples flip, angle, and zoom (always in that order, so the stream
/// consumption is fixed) and applies flip, then rotation and zoom.
pub fn augment<R: Rng>(img: &ImageRecord, cfg: &AugmentConfig, rng: &mut R) -> ImageRecord {
    if !cfg.enabled {
        return img.clone();
    }
    let flip = rng.gen::<f64>() < cfg.horizontal_flip_prob;
    let angle = if cfg.rotation_degrees > 0.0 {
        rng.gen_range(-cfg.rotation_degrees..=cfg.rotation_degrees)
    } else {
        rng.gen::<f64>();
        0.0
    };
    let [lo, hi] = cfg.zoom_range;
    let zoom = if hi > lo {
        rng.gen_range(lo..=hi)
    } else {
        rng.gen::<f64>();
        lo
    };
    let flipped = if flip { flip_horizontal(img) } else { img.clone() };
    if angle == 0.0 && zoom == 1.0 {
        flipped
    } else {
        rotate_zoom(&flipped, angle, zoom)
    }
}

fn with_pixels(img: &ImageRecord, data: Vec<f32>) -> ImageRecord {
    ImageRecord {
        pixels: Tensor::new(img.pixels.shape(), data).expect("same shape"),
        source: img.source.clone(),
        original_dims: img.original_dims,
    }
}
