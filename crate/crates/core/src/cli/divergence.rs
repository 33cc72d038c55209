use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::approx_hw::{effective_hw_pmf, ApproxConfig};
use crate::cli::config::DivergenceSweep;
use crate::distributions::{js_divergence, pmf_from_energies};
use crate::error::{Error, Result};

/// One energy vector of the sweep; `jsd` is `None` when the approximate
/// conditional is degenerate.
#[derive(Debug, Clone, PartialEq)]
pub struct DivergencePoint {
    pub energies: Vec<f64>,
    pub jsd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceSummary {
    pub fraction_bits: u32,
    pub truncation_threshold: f64,
    pub points: usize,
    pub degenerate: usize,
    /// Nats; `None` when every point was degenerate.
    pub max_jsd: Option<f64>,
    pub mean_jsd: Option<f64>,
    pub argmax_energies: Option<Vec<f64>>,
    /// Decade bins from 1e-12 up to ln 2, with `[0, 1e-12)` first.
    pub histogram: Vec<HistogramBin>,
}

fn histogram_edges() -> Vec<f64> {
    let mut edges = vec![0.0];
    edges.extend((-12..=-1).map(|k| 10f64.powi(k)));
    edges.push(std::f64::consts::LN_2);
    edges
}

/// Draws `points` energy vectors uniformly from the configured box and
/// measures the JSD between the exact and approximate conditionals of each.
pub fn divergence_sweep(
    approx: &ApproxConfig,
    sweep: &DivergenceSweep,
) -> Result<(DivergenceSummary, Vec<DivergencePoint>)> {
    sweep.validate()?;
    approx.validate().map_err(|e| Error::Config(format!("[approx] {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(sweep.seed);
    let vectors: Vec<Vec<f64>> = (0..sweep.points)
        .map(|_| {
            (0..sweep.support_size)
                .map(|_| {
                    if sweep.energy_max > sweep.energy_min {
                        rng.random_range(sweep.energy_min..sweep.energy_max)
                    } else {
                        sweep.energy_min
                    }
                })
                .collect()
        })
        .collect();
    let points = vectors
        .into_par_iter()
        .map(|energies| {
            let exact = pmf_from_energies(&energies, sweep.temperature)?;
            let jsd = match effective_hw_pmf(&energies, sweep.temperature, approx) {
                Ok(hw) => Some(js_divergence(&exact, &hw)?),
                Err(Error::DegenerateDistribution) => None,
                Err(e) => return Err(e),
            };
            Ok(DivergencePoint { energies, jsd })
        })
        .collect::<Result<Vec<_>>>()?;

    let edges = histogram_edges();
    let mut histogram: Vec<HistogramBin> = edges
        .windows(2)
        .map(|w| HistogramBin {
            lower: w[0],
            upper: w[1],
            count: 0,
        })
        .collect();
    let mut best: Option<(f64, usize)> = None;
    let mut sum = 0.0;
    let mut finite = 0;
    for (i, point) in points.iter().enumerate() {
        let Some(jsd) = point.jsd else { continue };
        sum += jsd;
        finite += 1;
        if best.is_none_or(|(b, _)| jsd > b) {
            best = Some((jsd, i));
        }
        let bin = histogram.iter().rposition(|b| jsd >= b.lower).unwrap_or(0);
        histogram[bin].count += 1;
    }
    let summary = DivergenceSummary {
        fraction_bits: approx.fraction_bits,
        truncation_threshold: approx.truncation_threshold,
        points: points.len(),
        degenerate: points.len() - finite,
        max_jsd: best.map(|(b, _)| b),
        mean_jsd: (finite > 0).then(|| sum / finite as f64),
        argmax_energies: best.map(|(_, i)| points[i].energies.clone()),
        histogram,
    };
    Ok((summary, points))
}

/// `point,jsd,e0,..,e{n-1}`, one row per sweep point.
pub fn divergence_csv(points: &[DivergencePoint]) -> String {
    let n = points.first().map_or(0, |p| p.energies.len());
    let mut out = String::from("point,jsd");
    for k in 0..n {
        write!(out, ",e{k}").unwrap();
    }
    out.push('\n');
    for (i, p) in points.iter().enumerate() {
        write!(out, "{i},{}", super::fmt_opt(p.jsd, "degenerate")).unwrap();
        for e in &p.energies {
            write!(out, ",{}", super::fmt_float(*e)).unwrap();
        }
        out.push('\n');
    }
    out
}
