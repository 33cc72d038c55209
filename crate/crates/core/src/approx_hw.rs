//! Bit-exact model of the accelerator's sampler: unsigned fixed-point
//! weights, truncation of small weights to zero, and a Fibonacci LFSR
//! feeding an integer inverse-CDF lookup.
//!
//! The pipeline for one draw is
//!
//! 1. ideal weights `exp(-(E - E_min) / T)`, so the largest weight is 1.0;
//! 2. round each weight to the nearest `k / 2^fraction_bits` (ties to even),
//!    saturating at `2^total_bits - 1`;
//! 3. zero every code below the truncation threshold;
//! 4. step the LFSR once and pick the smallest index `i` with
//!    `state * total <= cumsum[i] * 2^width`.
//!
//! Because step 4 is pure integer arithmetic, the distribution induced by a
//! full LFSR period can be computed exactly by counting (see
//! [`effective_hw_counts`]).

use serde::{Deserialize, Serialize};

use crate::distributions::{boltzmann_weights_into, validate_energies, Pmf};
use crate::error::{Error, Result};

/// Unsigned fixed-point format: values `k / 2^fraction_bits`, `k < 2^total_bits`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedPointFormat {
    pub total_bits: u32,
    pub fraction_bits: u32,
}

impl FixedPointFormat {
    pub fn new(total_bits: u32, fraction_bits: u32) -> Result<Self> {
        let format = FixedPointFormat {
            total_bits,
            fraction_bits,
        };
        format.validate()?;
        Ok(format)
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=32).contains(&self.total_bits) {
            return Err(Error::InvalidInput(format!(
                "total_bits must be in [2, 32], got {}",
                self.total_bits
            )));
        }
        if self.fraction_bits > self.total_bits {
            return Err(Error::InvalidInput(format!(
                "fraction_bits ({}) exceeds total_bits ({})",
                self.fraction_bits, self.total_bits
            )));
        }
        Ok(())
    }

    pub fn max_code(&self) -> u64 {
        (1u64 << self.total_bits) - 1
    }

    pub fn scale(&self) -> f64 {
        (1u64 << self.fraction_bits) as f64
    }

    /// Nearest code to `value` (ties to even), saturating at [`Self::max_code`].
    pub fn quantize(&self, value: f64) -> u64 {
        let code = (value * self.scale()).round_ties_even();
        if code <= 0.0 {
            0
        } else {
            (code as u64).min(self.max_code())
        }
    }

    pub fn to_real(&self, code: u64) -> f64 {
        code as f64 / self.scale()
    }
}

/// Maximal-length tap sets (polynomial exponents) for widths 2 through 32.
const MAXIMAL_TAPS: [&[u32]; 31] = [
    &[2, 1],
    &[3, 2],
    &[4, 3],
    &[5, 3],
    &[6, 5],
    &[7, 6],
    &[8, 6, 5, 4],
    &[9, 5],
    &[10, 7],
    &[11, 9],
    &[12, 6, 4, 1],
    &[13, 4, 3, 1],
    &[14, 5, 3, 1],
    &[15, 14],
    &[16, 15, 13, 4],
    &[17, 14],
    &[18, 11],
    &[19, 18, 17, 14],
    &[20, 17],
    &[21, 19],
    &[22, 21],
    &[23, 18],
    &[24, 23, 22, 17],
    &[25, 22],
    &[26, 6, 2, 1],
    &[27, 5, 2, 1],
    &[28, 25],
    &[29, 27],
    &[30, 6, 4, 1],
    &[31, 28],
    &[32, 22, 2, 1],
];

pub const DEFAULT_LFSR_WIDTH: u32 = 19;

/// Fibonacci LFSR. Tap `k` reads bit `width - k` (so tap `width` is the bit
/// shifted out); the XOR of the tapped bits enters at the top.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Lfsr {
    width: u32,
    tap_mask: u32,
    state: u32,
}

impl Lfsr {
    pub fn new(width: u32, taps: &[u32], seed: u32) -> Result<Self> {
        let tap_mask = tap_mask(width, taps)?;
        if seed == 0 {
            return Err(Error::InvalidState("LFSR state must be nonzero".into()));
        }
        if u64::from(seed) >= 1u64 << width {
            return Err(Error::InvalidState(format!(
                "LFSR seed {seed} does not fit in {width} bits"
            )));
        }
        Ok(Lfsr {
            width,
            tap_mask,
            state: seed,
        })
    }

    /// A known maximal-length tap set for `width`, if tabulated.
    pub fn maximal_taps(width: u32) -> Option<&'static [u32]> {
        width
            .checked_sub(2)
            .and_then(|i| MAXIMAL_TAPS.get(i as usize))
            .copied()
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn state(&self) -> u32 {
        self.state
    }

    /// Number of distinct nonzero states, `2^width - 1`.
    pub fn period_bound(&self) -> u64 {
        (1u64 << self.width) - 1
    }

    /// One shift; returns the new state.
    #[inline]
    pub(crate) fn advance(&mut self) -> u32 {
        let feedback = (self.state & self.tap_mask).count_ones() & 1;
        self.state = (self.state >> 1) | (feedback << (self.width - 1));
        self.state
    }

    /// Steps once and returns the successor with its uniform `state / 2^width`.
    pub fn next_uniform(self) -> Result<(Lfsr, f64)> {
        if self.state == 0 {
            return Err(Error::InvalidState("LFSR reached the all-zero state".into()));
        }
        let mut next = self;
        let state = next.advance();
        Ok((next, state as f64 / (1u64 << self.width) as f64))
    }
}

/// Free-function form of [`Lfsr::next_uniform`].
pub fn lfsr_next(lfsr: Lfsr) -> Result<(Lfsr, f64)> {
    lfsr.next_uniform()
}

fn tap_mask(width: u32, taps: &[u32]) -> Result<u32> {
    if !(2..=32).contains(&width) {
        return Err(Error::InvalidInput(format!(
            "LFSR width must be in [2, 32], got {width}"
        )));
    }
    if !taps.contains(&width) {
        return Err(Error::InvalidInput(format!(
            "LFSR taps {taps:?} must include the width {width}"
        )));
    }
    let mut mask = 0u32;
    for &tap in taps {
        if tap == 0 || tap > width {
            return Err(Error::InvalidInput(format!(
                "LFSR tap {tap} outside [1, {width}]"
            )));
        }
        mask |= 1 << (width - tap);
    }
    Ok(mask)
}

/// Hardware approximation knobs, as stored in the experiment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ApproxConfig {
    pub total_bits: u32,
    pub fraction_bits: u32,
    /// Codes strictly below this value become 0.
    pub truncation_threshold: f64,
    pub lfsr_width: u32,
    pub lfsr_taps: Vec<u32>,
    pub lfsr_seed: u32,
}

impl Default for ApproxConfig {
    fn default() -> Self {
        ApproxConfig {
            total_bits: 9,
            fraction_bits: 8,
            truncation_threshold: 1.0 / 256.0,
            lfsr_width: DEFAULT_LFSR_WIDTH,
            lfsr_taps: Lfsr::maximal_taps(DEFAULT_LFSR_WIDTH).unwrap().to_vec(),
            lfsr_seed: 1,
        }
    }
}

impl ApproxConfig {
    /// The default config with `fraction_bits` of precision and one integer bit.
    pub fn with_precision(fraction_bits: u32, truncation_threshold: f64) -> Self {
        ApproxConfig {
            total_bits: (fraction_bits + 1).min(32),
            fraction_bits,
            truncation_threshold,
            ..ApproxConfig::default()
        }
    }

    pub fn format(&self) -> FixedPointFormat {
        FixedPointFormat {
            total_bits: self.total_bits,
            fraction_bits: self.fraction_bits,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let format = self.format();
        format.validate()?;
        let t = self.truncation_threshold;
        if !t.is_finite() || t < 0.0 {
            return Err(Error::InvalidInput(format!(
                "truncation_threshold must be finite and >= 0, got {t}"
            )));
        }
        let code = t * format.scale();
        if code.fract() != 0.0 || code > format.max_code() as f64 {
            return Err(Error::InvalidInput(format!(
                "truncation_threshold {t} is not representable with {} fraction bits",
                self.fraction_bits
            )));
        }
        Lfsr::new(self.lfsr_width, &self.lfsr_taps, self.lfsr_seed)?;
        Ok(())
    }

    fn threshold_code(&self) -> u64 {
        (self.truncation_threshold * self.format().scale()) as u64
    }

    /// The configured LFSR at its configured seed.
    pub fn lfsr(&self) -> Result<Lfsr> {
        Lfsr::new(self.lfsr_width, &self.lfsr_taps, self.lfsr_seed)
    }

    /// An LFSR for one chain: the configured seed mixed with `stream`, mapped
    /// onto a nonzero state.
    pub fn lfsr_for_stream(&self, stream: u64) -> Result<Lfsr> {
        let states = (1u64 << self.lfsr_width) - 1;
        let mixed = splitmix64(u64::from(self.lfsr_seed) ^ splitmix64(stream));
        let seed = (mixed % states) as u32 + 1;
        Lfsr::new(self.lfsr_width, &self.lfsr_taps, seed)
    }
}

pub(crate) fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Quantizes weights after scaling so the largest one is 1.0; codes are in
/// units of `2^-fraction_bits`.
pub fn quantize_weights(weights: &[f64], config: &ApproxConfig) -> Result<Vec<u64>> {
    config.validate()?;
    if weights.is_empty() {
        return Err(Error::InvalidInput("weight vector is empty".into()));
    }
    if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
        return Err(Error::InvalidInput(format!(
            "weights must be finite and non-negative, found {w}"
        )));
    }
    let max = weights.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return Err(Error::DegenerateDistribution);
    }
    let mut codes = Vec::with_capacity(weights.len());
    let scaled: Vec<f64> = weights.iter().map(|w| w / max).collect();
    if quantize_into(&scaled, config.format(), config.threshold_code(), &mut codes) == 0 {
        return Err(Error::DegenerateDistribution);
    }
    Ok(codes)
}

/// Returns the sum of the codes written to `out`.
fn quantize_into(weights: &[f64], format: FixedPointFormat, threshold: u64, out: &mut Vec<u64>) -> u64 {
    out.clear();
    let mut total = 0;
    for &w in weights {
        let mut code = format.quantize(w);
        if code < threshold {
            code = 0;
        }
        total += code;
        out.push(code);
    }
    total
}

/// Smallest index `i` with `state * total <= cumsum[i] * 2^width`.
#[inline]
fn select(codes: &[u64], total: u64, state: u32, width: u32) -> usize {
    let lhs = u128::from(state) * u128::from(total);
    let mut cumsum = 0u64;
    for (i, &c) in codes.iter().enumerate() {
        cumsum += c;
        if lhs <= u128::from(cumsum) << width {
            return i;
        }
    }
    unreachable!("state < 2^width guarantees a match at the last index")
}

/// Reusable approximate sampler; holds scratch buffers for the chain inner loop.
#[derive(Debug, Clone)]
pub struct HwSampler {
    format: FixedPointFormat,
    threshold: u64,
    weights: Vec<f64>,
    codes: Vec<u64>,
}

impl HwSampler {
    pub fn new(config: &ApproxConfig) -> Result<Self> {
        config.validate()?;
        Ok(HwSampler {
            format: config.format(),
            threshold: config.threshold_code(),
            weights: Vec::new(),
            codes: Vec::new(),
        })
    }

    /// Draws one index, consuming exactly one LFSR step even when the
    /// conditional is degenerate.
    pub fn sample(&mut self, energies: &[f64], temperature: f64, lfsr: &mut Lfsr) -> Result<usize> {
        boltzmann_weights_into(energies, temperature, &mut self.weights);
        let total = quantize_into(&self.weights, self.format, self.threshold, &mut self.codes);
        let state = lfsr.advance();
        if total == 0 {
            return Err(Error::DegenerateDistribution);
        }
        Ok(select(&self.codes, total, state, lfsr.width))
    }
}

/// One approximate draw from the Gibbs conditional of `energies`.
pub fn sample_approx(
    energies: &[f64],
    temperature: f64,
    config: &ApproxConfig,
    lfsr: Lfsr,
) -> Result<(usize, Lfsr)> {
    validate_energies(energies, temperature)?;
    let mut sampler = HwSampler::new(config)?;
    let mut lfsr = lfsr;
    if lfsr.state == 0 {
        return Err(Error::InvalidState("LFSR reached the all-zero state".into()));
    }
    let index = sampler.sample(energies, temperature, &mut lfsr)?;
    Ok((index, lfsr))
}

/// Number of nonzero LFSR states mapped to each index by the approximate
/// sampler; the counts sum to `2^lfsr_width - 1`.
pub fn effective_hw_counts(energies: &[f64], temperature: f64, config: &ApproxConfig) -> Result<Vec<u64>> {
    validate_energies(energies, temperature)?;
    config.validate()?;
    let mut weights = Vec::with_capacity(energies.len());
    boltzmann_weights_into(energies, temperature, &mut weights);
    let mut codes = Vec::with_capacity(energies.len());
    let total = quantize_into(&weights, config.format(), config.threshold_code(), &mut codes);
    if total == 0 {
        return Err(Error::DegenerateDistribution);
    }
    let width = config.lfsr_width;
    let states = (1u128 << width) - 1;
    // states s in [1, 2^w - 1] with s * total <= c * 2^w
    let below = |c: u64| ((u128::from(c) << width) / u128::from(total)).min(states);
    let mut counts = Vec::with_capacity(codes.len());
    let mut cumsum = 0u64;
    let mut previous = 0u128;
    for &c in &codes {
        cumsum += c;
        let reached = below(cumsum);
        counts.push((reached - previous) as u64);
        previous = reached;
    }
    Ok(counts)
}

/// Exact distribution of [`sample_approx`] over one full LFSR period.
pub fn effective_hw_pmf(energies: &[f64], temperature: f64, config: &ApproxConfig) -> Result<Pmf> {
    let counts = effective_hw_counts(energies, temperature, config)?;
    let states = ((1u64 << config.lfsr_width) - 1) as f64;
    Pmf::new(counts.iter().map(|&c| c as f64 / states).collect())
}
