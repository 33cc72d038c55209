//! Sampling quality (ESS), convergence (Gelman-Rubin with zero-variance
//! conventions) and goodness of fit (R² against a mode reference, KS
//! permutation test), computed per pixel over chain traces.

mod ess;
mod fit;
mod rhat;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mrf::ChainTrace;

pub use ess::{ess, MIN_ESS_SAMPLES};
pub use fit::{ks_permutation_test, ks_statistic, r_squared, reference_mode, KsResult, MIN_PERMUTATIONS};
pub use rhat::{convergence_percentage, gelman_rubin, RhatRecord, Verdict, RHAT_THRESHOLD};

fn check_compatible(traces: &[&ChainTrace]) -> Result<()> {
    let Some(first) = traces.first() else {
        return Ok(());
    };
    for t in traces {
        if (t.width(), t.height(), t.window_len()) != (first.width(), first.height(), first.window_len()) {
            return Err(Error::shape(
                format!("{}x{} over {} sweeps", first.width(), first.height(), first.window_len()),
                format!("{}x{} over {} sweeps", t.width(), t.height(), t.window_len()),
            ));
        }
    }
    Ok(())
}

fn pixel_is_constant(trace: &ChainTrace, pixel: usize) -> bool {
    let n = trace.pixels();
    let first = trace.raw_planes()[pixel];
    trace.raw_planes()[pixel..].iter().step_by(n).all(|&l| l == first)
}

/// Active pixels: those whose labels vary within every hardware trace.
/// A pixel that is constant in any hardware run is inactive.
pub fn active_region(software: &[ChainTrace], hardware: &[ChainTrace]) -> Result<Vec<bool>> {
    let all: Vec<&ChainTrace> = software.iter().chain(hardware).collect();
    check_compatible(&all)?;
    let first = all
        .first()
        .ok_or_else(|| Error::InvalidInput("no traces to derive an active region from".into()))?;
    Ok((0..first.pixels())
        .map(|p| !hardware.iter().any(|t| pixel_is_constant(t, p)))
        .collect())
}

/// Per-pixel ESS of one trace and its means overall and over the active region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EssSummary {
    /// Mean over pixels with nonzero variance; `None` if there are none.
    pub mean_overall: Option<f64>,
    /// Mean over active pixels with nonzero variance.
    pub mean_active: Option<f64>,
    /// `None` marks a pixel excluded for zero variance.
    pub per_rv: Vec<Option<f64>>,
    pub active_count: usize,
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    (count > 0).then(|| sum / count as f64)
}

pub fn ess_summary(trace: &ChainTrace, active: &[bool]) -> Result<EssSummary> {
    if active.len() != trace.pixels() {
        return Err(Error::shape(
            format!("{} pixels", trace.pixels()),
            format!("active mask of {}", active.len()),
        ));
    }
    let per_rv = (0..trace.pixels())
        .into_par_iter()
        .map(|p| ess(&trace.pixel_series(p)))
        .collect::<Result<Vec<_>>>()?;
    Ok(EssSummary {
        mean_overall: mean_of(per_rv.iter().flatten().copied()),
        mean_active: mean_of(per_rv.iter().zip(active).filter(|(_, &a)| a).filter_map(|(e, _)| *e)),
        per_rv,
        active_count: active.iter().filter(|&&a| a).count(),
    })
}

/// Gelman-Rubin records for every pixel, one chain per trace.
pub fn rhat_per_pixel(traces: &[ChainTrace]) -> Result<Vec<RhatRecord>> {
    let refs: Vec<&ChainTrace> = traces.iter().collect();
    check_compatible(&refs)?;
    if traces.len() < 2 {
        return Err(Error::InsufficientChains(traces.len()));
    }
    (0..traces[0].pixels())
        .into_par_iter()
        .map(|p| {
            let chains: Vec<Vec<f64>> = traces.iter().map(|t| t.pixel_series(p)).collect();
            gelman_rubin(&chains)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mrf::{SamplerKind, TraceMeta};

    /// `series[pixel]` becomes a one-row trace.
    fn trace(series: &[Vec<u8>]) -> ChainTrace {
        let k = series[0].len();
        let mut planes = Vec::new();
        for t in 0..k {
            planes.extend(series.iter().map(|s| s[t]));
        }
        let meta = TraceMeta {
            sampler: SamplerKind::Approx,
            config_hash: 0,
            seed: 0,
            iterations: k,
            degenerate_fallbacks: 0,
        };
        ChainTrace::new(series.len(), 1, 16, 0, planes, meta).unwrap()
    }

    fn varying(offset: u8) -> Vec<u8> {
        (0..12).map(|i| offset + (i * 7 % 5) as u8).collect()
    }

    #[test]
    fn active_region_keys_on_hardware_variance() {
        let sw = vec![trace(&[varying(0), vec![3; 12], varying(1)])];
        let hw = vec![
            trace(&[varying(0), varying(2), vec![4; 12]]),
            trace(&[varying(1), varying(3), varying(4)]),
        ];
        assert_eq!(active_region(&sw, &hw).unwrap(), vec![true, true, false]);
        assert_eq!(active_region(&sw, &hw[1..]).unwrap(), vec![true; 3]);
    }

    #[test]
    fn active_region_checks_shapes() {
        let sw = vec![trace(&[varying(0), varying(0)])];
        let hw = vec![trace(&[varying(0)])];
        assert!(matches!(active_region(&sw, &hw), Err(Error::ShapeMismatch { .. })));
        assert!(active_region(&[], &[]).is_err());
    }

    #[test]
    fn ess_summary_excludes_constant_pixels() {
        let t = trace(&[varying(0), vec![2; 12], varying(5)]);
        let s = ess_summary(&t, &[false, true, true]).unwrap();
        assert_eq!(s.per_rv[1], None);
        let e0 = s.per_rv[0].unwrap();
        let e2 = s.per_rv[2].unwrap();
        assert!((s.mean_overall.unwrap() - (e0 + e2) / 2.0).abs() < 1e-12);
        assert_eq!(s.mean_active, Some(e2));
        assert_eq!(s.active_count, 2);
        let none = ess_summary(&trace(&[vec![1; 12]]), &[true]).unwrap();
        assert_eq!((none.mean_overall, none.mean_active), (None, None));
    }

    #[test]
    fn per_pixel_rhat() {
        let a = trace(&[vec![1; 12], vec![2; 12], varying(0)]);
        let b = trace(&[vec![1; 12], vec![3; 12], varying(0)]);
        let records = rhat_per_pixel(&[a.clone(), b]).unwrap();
        let verdicts: Vec<Verdict> = records.iter().map(|r| r.verdict).collect();
        assert_eq!(verdicts, [Verdict::Converged, Verdict::NotConverged, Verdict::Converged]);
        assert!(matches!(rhat_per_pixel(&[a]), Err(Error::InsufficientChains(1))));
    }
}
