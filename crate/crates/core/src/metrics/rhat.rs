use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const RHAT_THRESHOLD: f64 = 1.1;
pub const MIN_RHAT_SAMPLES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Converged,
    NotConverged,
}

/// Gelman-Rubin diagnostic for one random variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RhatRecord {
    /// Between-chain variance.
    pub b: f64,
    /// Mean within-chain variance.
    pub w: f64,
    /// Undefined when `w == 0`.
    pub rhat: Option<f64>,
    pub verdict: Verdict,
}

/// Basic PSRF over `m` equal-length chains. Chains with no within-chain
/// variance count as converged only if they also agree (`B = 0`).
pub fn gelman_rubin<C: AsRef<[f64]>>(chains: &[C]) -> Result<RhatRecord> {
    let m = chains.len();
    if m < 2 {
        return Err(Error::InsufficientChains(m));
    }
    let n = chains[0].as_ref().len();
    if let Some(c) = chains.iter().find(|c| c.as_ref().len() != n) {
        return Err(Error::shape(
            format!("chains of length {n}"),
            format!("a chain of length {}", c.as_ref().len()),
        ));
    }
    if n < MIN_RHAT_SAMPLES {
        return Err(Error::InsufficientData {
            needed: MIN_RHAT_SAMPLES,
            got: n,
        });
    }
    let nf = n as f64;
    let means: Vec<f64> = chains.iter().map(|c| c.as_ref().iter().sum::<f64>() / nf).collect();
    let grand = means.iter().sum::<f64>() / m as f64;
    let b = nf / (m - 1) as f64 * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    let w = chains
        .iter()
        .zip(&means)
        .map(|(c, mean)| c.as_ref().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0))
        .sum::<f64>()
        / m as f64;

    let (rhat, verdict) = if w > 0.0 {
        let rhat = (((nf - 1.0) / nf * w + b / nf) / w).sqrt();
        let verdict = if rhat < RHAT_THRESHOLD {
            Verdict::Converged
        } else {
            Verdict::NotConverged
        };
        (Some(rhat), verdict)
    } else if b == 0.0 {
        (None, Verdict::Converged)
    } else {
        (None, Verdict::NotConverged)
    };
    Ok(RhatRecord { b, w, rhat, verdict })
}

/// Percentage of records with a `Converged` verdict.
pub fn convergence_percentage(records: &[RhatRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::InvalidInput("no random variables to diagnose".into()));
    }
    let converged = records.iter().filter(|r| r.verdict == Verdict::Converged).count();
    Ok(100.0 * converged as f64 / records.len() as f64)
}
