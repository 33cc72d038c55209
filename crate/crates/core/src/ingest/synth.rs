use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{GrayImage, GroundTruth};

/// A rectangle of the left image displaced by `disparity` columns in the right image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftRegion {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
    pub disparity: usize,
}

impl ShiftRegion {
    /// The centered half-size square at `disparity`.
    pub fn centered(width: usize, height: usize, disparity: usize) -> Self {
        ShiftRegion {
            row: height / 4,
            col: width / 4,
            height: height / 2,
            width: width / 2,
            disparity,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StereoPair {
    pub left: GrayImage,
    pub right: GrayImage,
    pub ground_truth: GroundTruth,
}

/// Binary random-dot pair: background at disparity 0, `region` at its own
/// disparity. Background pixels the region hides in the right view are
/// invalid in the ground truth; columns it reveals get fresh dots.
pub fn make_random_dot_stereogram(
    width: usize,
    height: usize,
    disparity_levels: usize,
    region: ShiftRegion,
    seed: u64,
) -> Result<StereoPair> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidInput(format!("empty geometry {width}x{height}")));
    }
    if disparity_levels < 2 || disparity_levels > width || disparity_levels > 256 {
        return Err(Error::InvalidInput(format!(
            "disparity levels {disparity_levels} must be in [2, min(width, 256)]"
        )));
    }
    let s = region.disparity;
    if s >= disparity_levels {
        return Err(Error::InvalidInput(format!(
            "region disparity {s} must be below the {disparity_levels} disparity levels"
        )));
    }
    if region.width == 0
        || region.height == 0
        || region.row + region.height > height
        || region.col + region.width > width
        || region.col < s
    {
        return Err(Error::InvalidInput(format!(
            "region {region:?} does not fit a {width}x{height} image at disparity {s}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dot = || if rng.random::<bool>() { 255u8 } else { 0 };
    let left: Vec<u8> = (0..width * height).map(|_| dot()).collect();
    let mut right = left.clone();
    let mut disparities = vec![0u8; width * height];
    let mut valid_mask = vec![true; width * height];

    for r in region.row..region.row + region.height {
        let base = r * width;
        for c in region.col..region.col + region.width {
            right[base + c - s] = left[base + c];
            disparities[base + c] = s as u8;
        }
        for c in region.col - s..region.col {
            valid_mask[base + c] = false;
        }
        for c in region.col + region.width - s..region.col + region.width {
            right[base + c] = dot();
        }
    }

    Ok(StereoPair {
        left: GrayImage::new(width, height, left)?,
        right: GrayImage::new(width, height, right)?,
        ground_truth: GroundTruth {
            width,
            height,
            disparities,
            valid_mask,
            scale: 1,
            clamped: 0,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_shift_gives_identical_views() {
        let pair = make_random_dot_stereogram(16, 8, 4, ShiftRegion::centered(16, 8, 0), 1).unwrap();
        assert_eq!(pair.left, pair.right);
        assert!(pair.ground_truth.disparities.iter().all(|&d| d == 0));
        assert!(pair.ground_truth.valid_mask.iter().all(|&v| v));
    }

    #[test]
    fn region_pixels_carry_the_shift() {
        let region = ShiftRegion::centered(32, 32, 3);
        let pair = make_random_dot_stereogram(32, 32, 16, region, 7).unwrap();
        let gt = &pair.ground_truth;
        for r in 0..32 {
            for c in 0..32 {
                let inside = (8..24).contains(&r) && (8..24).contains(&c);
                let i = r * 32 + c;
                assert_eq!(gt.disparities[i], if inside { 3 } else { 0 });
                let occluded = (8..24).contains(&r) && (5..8).contains(&c);
                assert_eq!(gt.valid_mask[i], !occluded);
                if gt.valid_mask[i] {
                    let d = gt.disparities[i] as usize;
                    assert_eq!(pair.left.get(r, c), pair.right.get(r, c - d));
                }
            }
        }
        assert_eq!(gt.valid_count(), 32 * 32 - 16 * 3);
    }

    #[test]
    fn deterministic_per_seed() {
        let region = ShiftRegion::centered(16, 16, 2);
        let a = make_random_dot_stereogram(16, 16, 4, region, 5).unwrap();
        assert_eq!(a, make_random_dot_stereogram(16, 16, 4, region, 5).unwrap());
        assert_ne!(a.left, make_random_dot_stereogram(16, 16, 4, region, 6).unwrap().left);
    }

    #[test]
    fn rejects_bad_geometry() {
        let ok = ShiftRegion::centered(16, 16, 2);
        assert!(make_random_dot_stereogram(16, 16, 2, ok, 0).is_err());
        assert!(make_random_dot_stereogram(16, 16, 20, ok, 0).is_err());
        let off = ShiftRegion { row: 10, height: 10, ..ok };
        assert!(make_random_dot_stereogram(16, 16, 4, off, 0).is_err());
        let left_edge = ShiftRegion { col: 1, ..ok };
        assert!(make_random_dot_stereogram(16, 16, 4, left_edge, 0).is_err());
    }
}
