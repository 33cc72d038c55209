//! Finite discrete distributions: Gibbs conditionals, exact inverse-CDF
//! sampling and divergences (all in nats).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `Σ probs = 1`.
pub const SUM_TOLERANCE: f64 = 1e-12;

/// A probability mass function over the support `0..len`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pmf {
    probs: Vec<f64>,
}

impl Pmf {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidInput("pmf support must be non-empty".into()));
        }
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::InvalidInput(format!(
                "pmf entries must be finite and non-negative, found {p}"
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidInput(format!(
                "pmf entries sum to {total}, expected 1"
            )));
        }
        Ok(Pmf { probs })
    }

    /// Normalizes non-negative masses (e.g. integer counts) into a pmf.
    pub fn from_masses(masses: &[f64]) -> Result<Self> {
        let total: f64 = masses.iter().sum();
        if total <= 0.0 || !total.is_finite() {
            return Err(Error::InvalidInput(format!(
                "masses must have a positive finite total, got {total}"
            )));
        }
        Pmf::new(masses.iter().map(|m| m / total).collect())
    }

    pub fn uniform(support_size: usize) -> Result<Self> {
        if support_size == 0 {
            return Err(Error::InvalidInput("pmf support must be non-empty".into()));
        }
        Ok(Pmf {
            probs: vec![1.0 / support_size as f64; support_size],
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn support_size(&self) -> usize {
        self.probs.len()
    }

    fn check_same_support(&self, other: &Pmf) -> Result<()> {
        if self.support_size() != other.support_size() {
            return Err(Error::shape(
                format!("support size {}", self.support_size()),
                format!("support size {}", other.support_size()),
            ));
        }
        Ok(())
    }
}

/// Result of a KL divergence, which diverges when `q` misses mass of `p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KlDivergence {
    Finite(f64),
    Infinite,
}

impl KlDivergence {
    pub fn is_infinite(self) -> bool {
        matches!(self, KlDivergence::Infinite)
    }

    pub fn value(self) -> f64 {
        match self {
            KlDivergence::Finite(v) => v,
            KlDivergence::Infinite => f64::INFINITY,
        }
    }
}

fn check_energies(energies: &[f64], temperature: f64) -> Result<()> {
    if energies.is_empty() {
        return Err(Error::InvalidInput("energy vector is empty".into()));
    }
    if let Some(e) = energies.iter().find(|e| !e.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite energy {e}")));
    }
    if temperature <= 0.0 || !temperature.is_finite() {
        return Err(Error::InvalidInput(format!(
            "temperature must be positive and finite, got {temperature}"
        )));
    }
    Ok(())
}

/// Writes `exp(-(e_i - e_min) / t)` into `out`; the largest weight is exactly 1.
pub(crate) fn boltzmann_weights_into(energies: &[f64], temperature: f64, out: &mut Vec<f64>) {
    let min = energies.iter().copied().fold(f64::INFINITY, f64::min);
    out.clear();
    out.extend(energies.iter().map(|e| (-(e - min) / temperature).exp()));
}

/// Softmax of `-energy / temperature` (the Gibbs conditional).
pub fn pmf_from_energies(energies: &[f64], temperature: f64) -> Result<Pmf> {
    check_energies(energies, temperature)?;
    let mut weights = Vec::with_capacity(energies.len());
    boltzmann_weights_into(energies, temperature, &mut weights);
    let total: f64 = weights.iter().sum();
    Ok(Pmf {
        probs: weights.into_iter().map(|w| w / total).collect(),
    })
}

pub(crate) fn validate_energies(energies: &[f64], temperature: f64) -> Result<()> {
    check_energies(energies, temperature)
}

pub fn kl_divergence(p: &Pmf, q: &Pmf) -> Result<KlDivergence> {
    p.check_same_support(q)?;
    let mut sum = 0.0;
    for (&pi, &qi) in p.probs.iter().zip(&q.probs) {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Ok(KlDivergence::Infinite);
        }
        sum += pi * (pi / qi).ln();
    }
    // Rounding can push a tiny true divergence just below zero.
    Ok(KlDivergence::Finite(sum.max(0.0)))
}

/// Jensen-Shannon divergence, in `[0, ln 2]`.
pub fn js_divergence(p: &Pmf, q: &Pmf) -> Result<f64> {
    p.check_same_support(q)?;
    let mut sum = 0.0;
    for (&pi, &qi) in p.probs.iter().zip(&q.probs) {
        let mi = 0.5 * (pi + qi);
        if pi > 0.0 {
            sum += pi * (pi / mi).ln();
        }
        if qi > 0.0 {
            sum += qi * (qi / mi).ln();
        }
    }
    Ok((0.5 * sum).clamp(0.0, std::f64::consts::LN_2))
}

/// Inverse-CDF draw: the smallest index whose cumulative mass exceeds `uniform`.
pub fn sample_exact(pmf: &Pmf, uniform: f64) -> Result<usize> {
    if !(0.0..1.0).contains(&uniform) {
        return Err(Error::InvalidInput(format!(
            "uniform must lie in [0, 1), got {uniform}"
        )));
    }
    Ok(inverse_cdf(&pmf.probs, uniform))
}

/// Inverse-CDF lookup over unnormalized non-negative weights with `uniform` in `[0, 1)`.
pub(crate) fn inverse_cdf(weights: &[f64], uniform: f64) -> usize {
    let total: f64 = weights.iter().sum();
    let target = uniform * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            last_positive = i;
            acc += w;
            if target < acc {
                return i;
            }
        }
    }
    // Cumulative rounding left `target` at or above the running total.
    last_positive
}
