use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::approx_hw::splitmix64;
use crate::error::{Error, Result};
use crate::mrf::chain::mode_of_counts;
use crate::mrf::DisparityMap;

/// Per-pixel mode across runs; ties go to the smallest label.
pub fn reference_mode(end_points: &[DisparityMap]) -> Result<DisparityMap> {
    let first = end_points
        .first()
        .ok_or_else(|| Error::InvalidInput("no end points to take a mode over".into()))?;
    if let Some(m) = end_points.iter().find(|m| (m.width, m.height) != (first.width, first.height)) {
        return Err(Error::shape(
            format!("{}x{}", first.width, first.height),
            format!("{}x{}", m.width, m.height),
        ));
    }
    let mut counts = [0u32; 256];
    let labels = (0..first.labels.len())
        .map(|p| {
            counts.fill(0);
            for m in end_points {
                counts[m.labels[p] as usize] += 1;
            }
            mode_of_counts(&counts)
        })
        .collect();
    DisparityMap::new(first.width, first.height, labels)
}

/// Coefficient of determination of `result` against `reference`;
/// `None` when the reference is constant.
pub fn r_squared(result: &DisparityMap, reference: &DisparityMap) -> Result<Option<f64>> {
    if (result.width, result.height) != (reference.width, reference.height) {
        return Err(Error::shape(
            format!("{}x{}", reference.width, reference.height),
            format!("{}x{}", result.width, result.height),
        ));
    }
    let n = reference.labels.len() as f64;
    let mean = reference.labels.iter().map(|&l| f64::from(l)).sum::<f64>() / n;
    let total: f64 = reference.labels.iter().map(|&l| (f64::from(l) - mean).powi(2)).sum();
    if total == 0.0 {
        return Ok(None);
    }
    let residual: f64 = result
        .labels
        .iter()
        .zip(&reference.labels)
        .map(|(&x, &r)| (f64::from(x) - f64::from(r)).powi(2))
        .sum();
    Ok(Some(1.0 - residual / total))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    /// Sup-norm distance between the two empirical CDFs.
    pub statistic: f64,
    pub p_value: f64,
    pub permutations: usize,
}

pub const MIN_KS_SAMPLES: usize = 2;
pub const MIN_PERMUTATIONS: usize = 100;
const PERMUTATION_BATCH: usize = 64;

/// The pooled sample sorted once, with the end index of every run of ties.
struct Pooled {
    tie_ends: Vec<usize>,
    labels: Vec<bool>,
    n_a: usize,
    n_b: usize,
}

impl Pooled {
    fn new(a: &[f64], b: &[f64]) -> Self {
        let mut tagged: Vec<(f64, bool)> = a
            .iter()
            .map(|&x| (x, true))
            .chain(b.iter().map(|&x| (x, false)))
            .collect();
        tagged.sort_by(|x, y| x.0.total_cmp(&y.0));
        let tie_ends = (1..=tagged.len())
            .filter(|&i| i == tagged.len() || tagged[i].0 != tagged[i - 1].0)
            .collect();
        Pooled {
            tie_ends,
            labels: tagged.iter().map(|t| t.1).collect(),
            n_a: a.len(),
            n_b: b.len(),
        }
    }

    /// `D * n_a * n_b` for a labelling of the sorted pool, as an exact integer.
    fn scaled_statistic(&self, labels: &[bool]) -> u64 {
        let (mut in_a, mut start, mut best) = (0u64, 0usize, 0u64);
        for &end in &self.tie_ends {
            in_a += labels[start..end].iter().filter(|&&l| l).count() as u64;
            let in_b = end as u64 - in_a;
            best = best.max((in_a * self.n_b as u64).abs_diff(in_b * self.n_a as u64));
            start = end;
        }
        best
    }

    fn scale(&self) -> f64 {
        (self.n_a * self.n_b) as f64
    }
}

/// Two-sample Kolmogorov-Smirnov distance.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> Result<f64> {
    check_ks_samples(a, b)?;
    let pooled = Pooled::new(a, b);
    Ok(pooled.scaled_statistic(&pooled.labels) as f64 / pooled.scale())
}

fn check_ks_samples(a: &[f64], b: &[f64]) -> Result<()> {
    let smallest = a.len().min(b.len());
    if smallest < MIN_KS_SAMPLES {
        return Err(Error::InsufficientData {
            needed: MIN_KS_SAMPLES,
            got: smallest,
        });
    }
    if let Some(x) = a.iter().chain(b).find(|x| x.is_nan()) {
        return Err(Error::InvalidInput(format!("KS sample contains {x}")));
    }
    Ok(())
}

/// KS test with a permutation p-value `(1 + #{D* >= D}) / (permutations + 1)`.
///
/// Permutations run in fixed batches, each with its own seed derived from
/// `seed`, so the p-value does not depend on the thread count.
pub fn ks_permutation_test(a: &[f64], b: &[f64], permutations: usize, seed: u64) -> Result<KsResult> {
    check_ks_samples(a, b)?;
    if permutations < MIN_PERMUTATIONS {
        return Err(Error::InsufficientData {
            needed: MIN_PERMUTATIONS,
            got: permutations,
        });
    }
    let pooled = Pooled::new(a, b);
    let observed = pooled.scaled_statistic(&pooled.labels);
    let batches = permutations.div_ceil(PERMUTATION_BATCH);
    let exceed: usize = (0..batches)
        .into_par_iter()
        .map(|batch| {
            let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(batch as u64)));
            let mut labels = pooled.labels.clone();
            let size = PERMUTATION_BATCH.min(permutations - batch * PERMUTATION_BATCH);
            (0..size)
                .filter(|_| {
                    labels.shuffle(&mut rng);
                    pooled.scaled_statistic(&labels) >= observed
                })
                .count()
        })
        .sum();
    Ok(KsResult {
        statistic: observed as f64 / pooled.scale(),
        p_value: (1 + exceed) as f64 / (permutations + 1) as f64,
        permutations,
    })
}
