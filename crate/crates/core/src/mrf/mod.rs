//! Stereo MRF with a truncated absolute data term and a truncated-linear
//! smoothness prior over 4-neighborhoods, plus the Gibbs chain that samples it.

pub(crate) mod chain;
mod trace_file;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::GrayImage;

pub use chain::{
    config_hash, end_point, run_chain, ChainConfig, ChainMode, ChainTrace, Sampler, SamplerKind, TraceMeta,
};
pub use trace_file::{decode_trace, encode_trace, read_trace, write_trace, TRACE_MAGIC, TRACE_VERSION};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MrfParams {
    /// Number of disparity labels `D`.
    pub disparity_levels: usize,
    /// Cap on the per-pixel intensity difference (κ).
    pub data_truncation: f64,
    /// Weight of the pairwise term (λ).
    pub smoothness_weight: f64,
    /// Cap on the label distance in the pairwise term (τ).
    pub smoothness_truncation: f64,
}

impl Default for MrfParams {
    fn default() -> Self {
        MrfParams {
            disparity_levels: 16,
            data_truncation: 20.0,
            smoothness_weight: 2.0,
            smoothness_truncation: 2.0,
        }
    }
}

impl MrfParams {
    pub fn validate(&self) -> Result<()> {
        if !(2..=256).contains(&self.disparity_levels) {
            return Err(Error::InvalidInput(format!(
                "disparity_levels must be in [2, 256], got {}",
                self.disparity_levels
            )));
        }
        if self.data_truncation < 0.0 || !self.data_truncation.is_finite() {
            return Err(Error::InvalidInput(format!(
                "data_truncation must be finite and >= 0, got {}",
                self.data_truncation
            )));
        }
        if self.smoothness_weight < 0.0 || !self.smoothness_weight.is_finite() {
            return Err(Error::InvalidInput(format!(
                "smoothness_weight must be finite and >= 0, got {}",
                self.smoothness_weight
            )));
        }
        if self.smoothness_truncation < 1.0 || !self.smoothness_truncation.is_finite() {
            return Err(Error::InvalidInput(format!(
                "smoothness_truncation must be finite and >= 1, got {}",
                self.smoothness_truncation
            )));
        }
        Ok(())
    }
}

/// Row-major label field.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DisparityMap {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u8>,
}

impl DisparityMap {
    pub fn new(width: usize, height: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::shape(
                format!("{} labels ({width}x{height})", width * height),
                format!("{} labels", labels.len()),
            ));
        }
        Ok(DisparityMap {
            width,
            height,
            labels,
        })
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.labels[row * self.width + col]
    }

    pub fn to_gray_image(&self, disparity_levels: usize) -> Result<GrayImage> {
        let step = 255 / (disparity_levels.max(2) - 1);
        GrayImage::new(
            self.width,
            self.height,
            self.labels.iter().map(|&l| (l as usize * step).min(255) as u8).collect(),
        )
    }
}

#[derive(Debug, Clone)]
pub struct StereoMrf {
    width: usize,
    height: usize,
    params: MrfParams,
    /// `data_cost[pixel * D + d]`, precomputed from the image pair.
    data_cost: Vec<f64>,
}

impl StereoMrf {
    pub fn new(left: &GrayImage, right: &GrayImage, params: MrfParams) -> Result<Self> {
        params.validate()?;
        if (left.width(), left.height()) != (right.width(), right.height()) {
            return Err(Error::shape(
                format!("{}x{}", left.width(), left.height()),
                format!("{}x{}", right.width(), right.height()),
            ));
        }
        let (width, height) = (left.width(), left.height());
        let levels = params.disparity_levels;
        if levels > width {
            return Err(Error::InvalidInput(format!(
                "{levels} disparity levels exceed the image width {width}"
            )));
        }
        let kappa = params.data_truncation;
        let mut data_cost = Vec::with_capacity(width * height * levels);
        for r in 0..height {
            for c in 0..width {
                let l = f64::from(left.get(r, c));
                for d in 0..levels {
                    let cost = if d > c {
                        kappa
                    } else {
                        (l - f64::from(right.get(r, c - d))).abs().min(kappa)
                    };
                    data_cost.push(cost);
                }
            }
        }
        Ok(StereoMrf {
            width,
            height,
            params,
            data_cost,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn disparity_levels(&self) -> usize {
        self.params.disparity_levels
    }

    pub fn params(&self) -> &MrfParams {
        &self.params
    }

    fn check_state(&self, state: &DisparityMap) -> Result<()> {
        if (state.width, state.height) != (self.width, self.height) {
            return Err(Error::shape(
                format!("{}x{} field", self.width, self.height),
                format!("{}x{} field", state.width, state.height),
            ));
        }
        if let Some(l) = state.labels.iter().find(|&&l| usize::from(l) >= self.disparity_levels()) {
            return Err(Error::InvalidInput(format!(
                "label {l} outside [0, {})",
                self.disparity_levels()
            )));
        }
        Ok(())
    }

    /// Energies of every label at pixel `index` given the other labels.
    /// Neighbor terms are summed in the order up, left, right, down.
    #[inline]
    pub(crate) fn conditional_into(&self, labels: &[u8], index: usize, out: &mut Vec<f64>) {
        let levels = self.params.disparity_levels;
        let lambda = self.params.smoothness_weight;
        let tau = self.params.smoothness_truncation;
        let (r, c) = (index / self.width, index % self.width);
        let mut neighbors = [0u8; 4];
        let mut n = 0;
        if r > 0 {
            neighbors[n] = labels[index - self.width];
            n += 1;
        }
        if c > 0 {
            neighbors[n] = labels[index - 1];
            n += 1;
        }
        if c + 1 < self.width {
            neighbors[n] = labels[index + 1];
            n += 1;
        }
        if r + 1 < self.height {
            neighbors[n] = labels[index + self.width];
            n += 1;
        }
        let data = &self.data_cost[index * levels..(index + 1) * levels];
        out.clear();
        for (d, &cost) in data.iter().enumerate() {
            let mut smooth = 0.0;
            for &q in &neighbors[..n] {
                smooth += (d as f64 - f64::from(q)).abs().min(tau);
            }
            out.push(cost + lambda * smooth);
        }
    }

    /// Total energy: data terms plus one smoothness term per 4-connected edge.
    pub fn energy(&self, state: &DisparityMap) -> Result<f64> {
        self.check_state(state)?;
        let levels = self.params.disparity_levels;
        let tau = self.params.smoothness_truncation;
        let labels = &state.labels;
        let mut data = 0.0;
        let mut smooth = 0.0;
        for r in 0..self.height {
            for c in 0..self.width {
                let i = r * self.width + c;
                data += self.data_cost[i * levels + labels[i] as usize];
                let here = f64::from(labels[i]);
                if c + 1 < self.width {
                    smooth += (here - f64::from(labels[i + 1])).abs().min(tau);
                }
                if r + 1 < self.height {
                    smooth += (here - f64::from(labels[i + self.width])).abs().min(tau);
                }
            }
        }
        Ok(data + self.params.smoothness_weight * smooth)
    }
}

/// Gibbs conditional energies for every disparity at `(row, col)`.
pub fn conditional_energies(model: &StereoMrf, state: &DisparityMap, row: usize, col: usize) -> Result<Vec<f64>> {
    model.check_state(state)?;
    if row >= model.height || col >= model.width {
        return Err(Error::InvalidInput(format!(
            "pixel ({row}, {col}) outside {}x{}",
            model.width, model.height
        )));
    }
    let mut out = Vec::with_capacity(model.disparity_levels());
    model.conditional_into(&state.labels, row * model.width + col, &mut out);
    Ok(out)
}

/// Percentage of valid pixels whose disparity error strictly exceeds `threshold`.
pub fn bad_pixel_percentage(map: &[u8], ground_truth: &[u8], threshold: f64, valid_mask: &[bool]) -> Result<f64> {
    if map.len() != ground_truth.len() || map.len() != valid_mask.len() {
        return Err(Error::shape(
            format!("{} pixels", map.len()),
            format!("{} ground truth, {} mask", ground_truth.len(), valid_mask.len()),
        ));
    }
    let mut valid = 0usize;
    let mut bad = 0usize;
    for ((&m, &g), &v) in map.iter().zip(ground_truth).zip(valid_mask) {
        if v {
            valid += 1;
            if (f64::from(m) - f64::from(g)).abs() > threshold {
                bad += 1;
            }
        }
    }
    if valid == 0 {
        return Err(Error::InvalidInput("no valid ground-truth pixels".into()));
    }
    Ok(100.0 * bad as f64 / valid as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn flat_model(width: usize, height: usize, params: MrfParams) -> StereoMrf {
        let img = GrayImage::filled(width, height, 100).unwrap();
        StereoMrf::new(&img, &img, params).unwrap()
    }

    #[test]
    fn uniform_images_without_smoothness_are_flat() {
        let model = flat_model(20, 4, MrfParams { smoothness_weight: 0.0, ..Default::default() });
        let state = DisparityMap::new(20, 4, vec![0; 80]).unwrap();
        let e = conditional_energies(&model, &state, 2, 18).unwrap();
        assert_eq!(e.len(), 16);
        assert!(e.iter().all(|&x| x == e[0]));
    }

    #[test]
    fn interior_smoothness_term() {
        // zero-cost data term: kappa = 0
        let params = MrfParams {
            disparity_levels: 8,
            data_truncation: 0.0,
            smoothness_weight: 1.0,
            smoothness_truncation: 2.0,
        };
        let model = flat_model(8, 8, params);
        let state = DisparityMap::new(8, 8, vec![3; 64]).unwrap();
        let e = conditional_energies(&model, &state, 4, 4).unwrap();
        let expected: Vec<f64> = (0..8).map(|d: i32| 4.0 * ((d - 3).abs().min(2)) as f64).collect();
        assert_eq!(e, expected);
    }

    #[test]
    fn border_pixels_see_fewer_neighbors() {
        let params = MrfParams {
            disparity_levels: 4,
            data_truncation: 0.0,
            smoothness_weight: 1.0,
            smoothness_truncation: 5.0,
        };
        let model = flat_model(6, 6, params);
        let state = DisparityMap::new(6, 6, vec![3; 36]).unwrap();
        let interior = conditional_energies(&model, &state, 2, 2).unwrap();
        let edge = conditional_energies(&model, &state, 0, 2).unwrap();
        let corner = conditional_energies(&model, &state, 5, 5).unwrap();
        assert_eq!(interior[0], 12.0);
        assert_eq!(edge[0], 9.0);
        assert_eq!(corner[0], 6.0);
    }

    #[test]
    fn data_term_truncates_and_penalizes_out_of_image_matches() {
        let left = GrayImage::new(4, 1, vec![0, 50, 100, 200]).unwrap();
        let right = GrayImage::new(4, 1, vec![50, 100, 200, 0]).unwrap();
        let params = MrfParams {
            disparity_levels: 3,
            data_truncation: 30.0,
            smoothness_weight: 0.0,
            smoothness_truncation: 1.0,
        };
        let model = StereoMrf::new(&left, &right, params).unwrap();
        let state = DisparityMap::new(4, 1, vec![0; 4]).unwrap();
        // pixel 1: d=0 -> |50-100| capped, d=1 -> |50-50| = 0, d=2 -> out of image
        assert_eq!(conditional_energies(&model, &state, 0, 1).unwrap(), vec![30.0, 0.0, 30.0]);
        assert!(conditional_energies(&model, &state, 1, 0).is_err());
        assert!(conditional_energies(&model, &state, 0, 4).is_err());
    }

    #[test]
    fn model_validation() {
        let img = GrayImage::filled(4, 4, 0).unwrap();
        let other = GrayImage::filled(5, 4, 0).unwrap();
        assert!(StereoMrf::new(&img, &other, MrfParams::default()).is_err());
        // D = 16 > width 4
        assert!(StereoMrf::new(&img, &img, MrfParams::default()).is_err());
        let bad_tau = MrfParams { disparity_levels: 2, smoothness_truncation: 0.5, ..Default::default() };
        assert!(StereoMrf::new(&img, &img, bad_tau).is_err());
    }

    #[test]
    fn total_energy_counts_each_edge_once() {
        let params = MrfParams {
            disparity_levels: 4,
            data_truncation: 0.0,
            smoothness_weight: 1.0,
            smoothness_truncation: 10.0,
        };
        let model = flat_model(4, 2, params);
        let state = DisparityMap::new(4, 2, vec![0, 0, 0, 0, 1, 1, 1, 1]).unwrap();
        assert_eq!(model.energy(&state).unwrap(), 4.0);
    }

    #[test]
    fn bad_pixel_examples() {
        let gt = [1, 2, 3, 4];
        let all = [true; 4];
        assert_eq!(bad_pixel_percentage(&gt, &gt, 1.0, &all).unwrap(), 0.0);
        assert_eq!(bad_pixel_percentage(&[2, 3, 4, 5], &gt, 1.0, &all).unwrap(), 0.0);
        assert_eq!(bad_pixel_percentage(&[5, 5, 0, 4], &gt, 1.0, &all).unwrap(), 75.0);
        let mask = [true, false, false, true];
        assert_eq!(bad_pixel_percentage(&[5, 5, 0, 4], &gt, 1.0, &mask).unwrap(), 50.0);
        assert!(bad_pixel_percentage(&gt, &gt, 1.0, &[false; 4]).is_err());
        assert!(bad_pixel_percentage(&gt[..3], &gt, 1.0, &all).is_err());
    }

    proptest! {
        #[test]
        fn bad_pixels_ignore_pixel_order(
            rows in proptest::collection::vec((0u8..16, 0u8..16, any::<bool>()), 1..64),
            rotate in 0usize..64,
        ) {
            prop_assume!(rows.iter().any(|r| r.2));
            let split = |rows: &[(u8, u8, bool)]| -> (Vec<u8>, Vec<u8>, Vec<bool>) {
                (rows.iter().map(|r| r.0).collect(), rows.iter().map(|r| r.1).collect(), rows.iter().map(|r| r.2).collect())
            };
            let (m, g, v) = split(&rows);
            let mut permuted = rows.clone();
            permuted.rotate_left(rotate % rows.len());
            permuted.reverse();
            let (pm, pg, pv) = split(&permuted);
            prop_assert_eq!(
                bad_pixel_percentage(&m, &g, 1.0, &v).unwrap(),
                bad_pixel_percentage(&pm, &pg, 1.0, &pv).unwrap()
            );
        }
    }
}
