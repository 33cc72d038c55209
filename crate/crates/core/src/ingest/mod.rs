//! Stereo inputs: grayscale images, scaled ground-truth disparities,
//! synthetic random-dot stereograms and input-noise injection.

mod pgm;
mod synth;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use pgm::{encode_pgm, encode_pgm_ascii, load_pgm, parse_pgm, save_pgm};
pub use synth::{make_random_dot_stereogram, ShiftRegion, StereoPair};

/// Row-major 8-bit grayscale image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::shape(
                format!("{} pixels ({width}x{height})", width * height),
                format!("{} pixels", pixels.len()),
            ));
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        GrayImage::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * self.width + col]
    }
}

/// Ground-truth disparities after dividing the raw values by `scale`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub width: usize,
    pub height: usize,
    pub disparities: Vec<u8>,
    /// `false` where the raw value was 0 (unknown disparity).
    pub valid_mask: Vec<bool>,
    pub scale: u32,
    /// Valid pixels whose scaled disparity exceeded `D - 1` and were clamped.
    pub clamped: usize,
}

impl GroundTruth {
    pub fn from_raw(raw: &GrayImage, scale: u32, disparity_levels: usize) -> Result<Self> {
        if scale == 0 {
            return Err(Error::InvalidInput("ground-truth scale must be positive".into()));
        }
        if !(1..=256).contains(&disparity_levels) {
            return Err(Error::InvalidInput(format!(
                "disparity levels must be in [1, 256], got {disparity_levels}"
            )));
        }
        let top = (disparity_levels - 1) as f64;
        let mut clamped = 0;
        let mut disparities = Vec::with_capacity(raw.pixels.len());
        let mut valid_mask = Vec::with_capacity(raw.pixels.len());
        for &v in &raw.pixels {
            let d = (f64::from(v) / f64::from(scale)).round();
            if v != 0 && d > top {
                clamped += 1;
            }
            disparities.push(d.min(top) as u8);
            valid_mask.push(v != 0);
        }
        Ok(GroundTruth {
            width: raw.width,
            height: raw.height,
            disparities,
            valid_mask,
            scale,
            clamped,
        })
    }

    pub fn valid_count(&self) -> usize {
        self.valid_mask.iter().filter(|v| **v).count()
    }
}

pub fn load_ground_truth(path: impl AsRef<Path>, scale: u32, disparity_levels: usize) -> Result<GroundTruth> {
    GroundTruth::from_raw(&load_pgm(path)?, scale, disparity_levels)
}

/// Adds independent `N(0, sigma^2)` noise per pixel, rounding and clamping to `[0, 255]`.
pub fn add_gaussian_noise(image: &GrayImage, sigma: f64, seed: u64) -> Result<GrayImage> {
    if sigma < 0.0 || !sigma.is_finite() {
        return Err(Error::InvalidInput(format!("noise sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(image.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pixels = image
        .pixels
        .iter()
        .map(|&p| (f64::from(p) + normal.sample(&mut rng)).round().clamp(0.0, 255.0) as u8)
        .collect();
    GrayImage::new(image.width, image.height, pixels)
}
