use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::approx_hw::{ApproxConfig, HwSampler};
use crate::distributions::{boltzmann_weights_into, inverse_cdf};
use crate::error::{Error, Result};
use crate::mrf::{DisparityMap, MrfParams, StereoMrf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainMode {
    PureSampling,
    Annealing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChainConfig {
    /// Full raster sweeps.
    pub iterations: usize,
    pub mode: ChainMode,
    pub initial_temperature: f64,
    pub cooling_rate: f64,
    /// Number of final sweeps kept in the trace.
    pub record_window: usize,
    pub seed: u64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            iterations: 200,
            mode: ChainMode::PureSampling,
            initial_temperature: 1.0,
            cooling_rate: 1.0,
            record_window: 100,
            seed: 0,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidInput("iterations must be positive".into()));
        }
        if self.record_window == 0 || self.record_window > self.iterations {
            return Err(Error::InvalidInput(format!(
                "record_window must be in [1, iterations = {}], got {}",
                self.iterations, self.record_window
            )));
        }
        if self.mode == ChainMode::Annealing {
            if self.initial_temperature <= 0.0 || !self.initial_temperature.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "initial_temperature must be positive, got {}",
                    self.initial_temperature
                )));
            }
            if !(self.cooling_rate > 0.0 && self.cooling_rate <= 1.0) {
                return Err(Error::InvalidInput(format!(
                    "cooling_rate must be in (0, 1], got {}",
                    self.cooling_rate
                )));
            }
        }
        Ok(())
    }

    /// Temperature used throughout sweep `t` (0-based).
    pub fn temperature(&self, sweep: usize) -> f64 {
        match self.mode {
            ChainMode::PureSampling => 1.0,
            ChainMode::Annealing => {
                self.initial_temperature * self.cooling_rate.powi(sweep.min(i32::MAX as usize) as i32)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Exact,
    Approx,
}

impl SamplerKind {
    pub fn code(self) -> u8 {
        match self {
            SamplerKind::Exact => 0,
            SamplerKind::Approx => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(SamplerKind::Exact),
            1 => Some(SamplerKind::Approx),
            _ => None,
        }
    }
}

/// Where the per-pixel draws come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampler {
    /// 64-bit floating-point softmax with a ChaCha uniform stream.
    Exact,
    /// Fixed-point weights with an LFSR uniform stream.
    Approx(ApproxConfig),
}

impl Sampler {
    pub fn kind(&self) -> SamplerKind {
        match self {
            Sampler::Exact => SamplerKind::Exact,
            Sampler::Approx(_) => SamplerKind::Approx,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub sampler: SamplerKind,
    pub config_hash: u64,
    pub seed: u64,
    /// Sweeps the chain ran in total.
    pub iterations: usize,
    /// Degenerate approximate conditionals resolved by the argmin fallback.
    pub degenerate_fallbacks: u64,
}

/// Labels of every pixel for a contiguous run of sweeps ending at the last one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainTrace {
    width: usize,
    height: usize,
    disparity_levels: usize,
    first_sweep: usize,
    planes: Vec<u8>,
    meta: TraceMeta,
}

impl ChainTrace {
    pub fn new(
        width: usize,
        height: usize,
        disparity_levels: usize,
        first_sweep: usize,
        planes: Vec<u8>,
        meta: TraceMeta,
    ) -> Result<Self> {
        let plane = width * height;
        if plane == 0 || planes.is_empty() || !planes.len().is_multiple_of(plane) {
            return Err(Error::InvalidInput(format!(
                "{} label bytes do not form whole {width}x{height} planes",
                planes.len()
            )));
        }
        if let Some(&l) = planes.iter().find(|&&l| usize::from(l) >= disparity_levels) {
            return Err(Error::InvalidInput(format!(
                "recorded label {l} outside [0, {disparity_levels})"
            )));
        }
        let trace = ChainTrace {
            width,
            height,
            disparity_levels,
            first_sweep,
            planes,
            meta,
        };
        if trace.end_sweep() > trace.meta.iterations {
            return Err(Error::InvalidInput(format!(
                "recorded sweeps end at {} beyond the {} iterations run",
                trace.end_sweep(),
                trace.meta.iterations
            )));
        }
        Ok(trace)
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
        self.disparity_levels
    }

    pub fn meta(&self) -> &TraceMeta {
        &self.meta
    }

    /// Sweep index (0-based) of the first recorded plane.
    pub fn first_sweep(&self) -> usize {
        self.first_sweep
    }

    /// One past the last recorded sweep.
    pub fn end_sweep(&self) -> usize {
        self.first_sweep + self.window_len()
    }

    pub fn window_len(&self) -> usize {
        self.planes.len() / self.pixels()
    }

    pub fn raw_planes(&self) -> &[u8] {
        &self.planes
    }

    /// Labels after the `k`-th recorded sweep.
    pub fn plane(&self, k: usize) -> &[u8] {
        let n = self.pixels();
        &self.planes[k * n..(k + 1) * n]
    }

    /// The recorded labels of one pixel, in sweep order.
    pub fn pixel_series(&self, pixel: usize) -> Vec<f64> {
        let n = self.pixels();
        self.planes[pixel..].iter().step_by(n).map(|&l| f64::from(l)).collect()
    }

    /// A trace restricted to the absolute sweep range `sweeps`.
    pub fn restrict(&self, sweeps: Range<usize>) -> Result<ChainTrace> {
        if sweeps.start < self.first_sweep || sweeps.end > self.end_sweep() || sweeps.is_empty() {
            return Err(Error::InvalidInput(format!(
                "sweeps {sweeps:?} not within the recorded {}..{}",
                self.first_sweep,
                self.end_sweep()
            )));
        }
        let n = self.pixels();
        let from = (sweeps.start - self.first_sweep) * n;
        let to = (sweeps.end - self.first_sweep) * n;
        Ok(ChainTrace {
            planes: self.planes[from..to].to_vec(),
            first_sweep: sweeps.start,
            ..self.clone_header()
        })
    }

    fn clone_header(&self) -> ChainTrace {
        ChainTrace {
            width: self.width,
            height: self.height,
            disparity_levels: self.disparity_levels,
            first_sweep: self.first_sweep,
            planes: Vec::new(),
            meta: self.meta.clone(),
        }
    }
}

/// Identifies the (model constants, chain config, sampler) triple a trace came from.
pub fn config_hash(params: &MrfParams, config: &ChainConfig, sampler: &Sampler) -> u64 {
    let canonical = serde_json::to_vec(&(params, config, sampler)).expect("config serializes");
    let digest = Sha256::digest(&canonical);
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

fn argmin(energies: &[f64]) -> usize {
    let mut best = 0;
    for (i, &e) in energies.iter().enumerate() {
        if e < energies[best] {
            best = i;
        }
    }
    best
}

/// Runs raster-order Gibbs sweeps from a uniformly random field and keeps
/// the final `record_window` sweeps.
pub fn run_chain(model: &StereoMrf, config: &ChainConfig, sampler: &Sampler) -> Result<ChainTrace> {
    config.validate()?;
    let levels = model.disparity_levels();
    let n = model.pixels();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..levels) as u8).collect();

    let mut hw = match sampler {
        Sampler::Exact => None,
        Sampler::Approx(approx) => Some((HwSampler::new(approx)?, approx.lfsr_for_stream(config.seed)?)),
    };

    let first_recorded = config.iterations - config.record_window;
    let mut planes = Vec::with_capacity(config.record_window * n);
    let mut energies = Vec::with_capacity(levels);
    let mut weights = Vec::with_capacity(levels);
    let mut fallbacks = 0u64;

    for sweep in 0..config.iterations {
        let temperature = config.temperature(sweep);
        for pixel in 0..n {
            model.conditional_into(&labels, pixel, &mut energies);
            let label = match &mut hw {
                None => {
                    boltzmann_weights_into(&energies, temperature, &mut weights);
                    inverse_cdf(&weights, rng.random::<f64>())
                }
                Some((sampler, lfsr)) => match sampler.sample(&energies, temperature, lfsr) {
                    Ok(label) => label,
                    Err(Error::DegenerateDistribution) => {
                        fallbacks += 1;
                        argmin(&energies)
                    }
                    Err(e) => return Err(e),
                },
            };
            labels[pixel] = label as u8;
        }
        if sweep >= first_recorded {
            planes.extend_from_slice(&labels);
        }
    }

    ChainTrace::new(
        model.width(),
        model.height(),
        levels,
        first_recorded,
        planes,
        TraceMeta {
            sampler: sampler.kind(),
            config_hash: config_hash(model.params(), config, sampler),
            seed: config.seed,
            iterations: config.iterations,
            degenerate_fallbacks: fallbacks,
        },
    )
}

/// Per-pixel mode of the recorded labels; ties go to the smallest label.
pub fn end_point(trace: &ChainTrace) -> DisparityMap {
    let n = trace.pixels();
    let mut counts = vec![0u32; trace.disparity_levels()];
    let labels = (0..n)
        .map(|pixel| {
            counts.iter_mut().for_each(|c| *c = 0);
            for k in 0..trace.window_len() {
                counts[trace.planes[k * n + pixel] as usize] += 1;
            }
            mode_of_counts(&counts)
        })
        .collect();
    DisparityMap {
        width: trace.width,
        height: trace.height,
        labels,
    }
}

/// First index holding the maximum count.
pub(crate) fn mode_of_counts(counts: &[u32]) -> u8 {
    let mut best = 0;
    for (label, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = label;
        }
    }
    best as u8
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::pmf_from_energies;
    use crate::ingest::{make_random_dot_stereogram, GrayImage, ShiftRegion};
    use crate::mrf::{conditional_energies, MrfParams};
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn meta(iterations: usize) -> TraceMeta {
        TraceMeta {
            sampler: SamplerKind::Exact,
            config_hash: 0,
            seed: 0,
            iterations,
            degenerate_fallbacks: 0,
        }
    }

    fn trace_of(series: &[&[u8]]) -> ChainTrace {
        // one column of pixels, one plane per sweep
        let k = series[0].len();
        let mut planes = Vec::new();
        for t in 0..k {
            planes.extend(series.iter().map(|s| s[t]));
        }
        ChainTrace::new(series.len(), 1, 8, 0, planes, meta(k)).unwrap()
    }

    fn toy_model(params: MrfParams) -> StereoMrf {
        let pair = make_random_dot_stereogram(16, 16, params.disparity_levels, ShiftRegion::centered(16, 16, 2), 3).unwrap();
        StereoMrf::new(&pair.left, &pair.right, params).unwrap()
    }

    #[test]
    fn end_point_mode_and_ties() {
        let trace = trace_of(&[&[2, 2, 3], &[5, 5, 5], &[0, 7, 7]]);
        assert_eq!(end_point(&trace).labels, vec![2, 5, 7]);
        let trace = trace_of(&[&[1, 3, 1, 3], &[3, 1, 3, 1]]);
        assert_eq!(end_point(&trace).labels, vec![1, 1]);
        let single = trace_of(&[&[4], &[6]]);
        assert_eq!(end_point(&single).labels, vec![4, 6]);
    }

    #[test]
    fn trace_restriction() {
        let trace = trace_of(&[&[0, 1, 2, 3, 4]]);
        let tail = trace.restrict(2..5).unwrap();
        assert_eq!(tail.first_sweep(), 2);
        assert_eq!(tail.pixel_series(0), vec![2.0, 3.0, 4.0]);
        assert!(trace.restrict(3..7).is_err());
        assert!(trace.restrict(3..3).is_err());
    }

    #[test]
    fn config_validation() {
        let ok = ChainConfig::default();
        assert!(ok.validate().is_ok());
        assert!(ChainConfig { record_window: 300, ..ok.clone() }.validate().is_err());
        assert!(ChainConfig { iterations: 0, ..ok.clone() }.validate().is_err());
        let anneal = ChainConfig { mode: ChainMode::Annealing, cooling_rate: 1.5, ..ok.clone() };
        assert!(anneal.validate().is_err());
        let anneal = ChainConfig { mode: ChainMode::Annealing, initial_temperature: 4.0, cooling_rate: 0.5, ..ok };
        assert_eq!(anneal.temperature(0), 4.0);
        assert_eq!(anneal.temperature(2), 1.0);
    }

    #[test]
    fn pure_sampling_ignores_temperature_fields() {
        let c = ChainConfig { initial_temperature: 7.0, cooling_rate: 0.1, ..Default::default() };
        assert_eq!(c.temperature(10), 1.0);
    }

    #[test]
    fn identical_inputs_give_identical_traces() {
        let model = toy_model(MrfParams { disparity_levels: 4, ..Default::default() });
        let config = ChainConfig { iterations: 30, record_window: 10, seed: 9, ..Default::default() };
        for sampler in [Sampler::Exact, Sampler::Approx(ApproxConfig::default())] {
            let a = run_chain(&model, &config, &sampler).unwrap();
            let b = run_chain(&model, &config, &sampler).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.window_len(), 10);
            assert_eq!(a.first_sweep(), 20);
            assert_eq!(a.meta().sampler, sampler.kind());
            let other = run_chain(&model, &ChainConfig { seed: 10, ..config.clone() }, &sampler).unwrap();
            assert_ne!(a.meta().config_hash, other.meta().config_hash);
        }
    }

    #[test]
    fn longer_chains_extend_shorter_ones() {
        let model = toy_model(MrfParams { disparity_levels: 4, ..Default::default() });
        let short = ChainConfig { iterations: 12, record_window: 12, seed: 2, ..Default::default() };
        let long = ChainConfig { iterations: 20, record_window: 20, ..short.clone() };
        for sampler in [Sampler::Exact, Sampler::Approx(ApproxConfig::default())] {
            let a = run_chain(&model, &short, &sampler).unwrap();
            let b = run_chain(&model, &long, &sampler).unwrap().restrict(0..12).unwrap();
            assert_eq!(a.raw_planes(), b.raw_planes());
        }
    }

    #[test]
    fn single_sweep_without_smoothness_samples_data_softmax() {
        // 8x8, D = 4, lambda = 0: each pixel is independent with an analytic pmf
        let pair = make_random_dot_stereogram(8, 8, 4, ShiftRegion::centered(8, 8, 1), 21).unwrap();
        let params = MrfParams {
            disparity_levels: 4,
            data_truncation: 2.0,
            smoothness_weight: 0.0,
            smoothness_truncation: 1.0,
        };
        let model = StereoMrf::new(&pair.left, &pair.right, params).unwrap();
        let zero = DisparityMap::new(8, 8, vec![0; 64]).unwrap();
        let seeds = 4000;
        let mut counts = vec![[0u64; 4]; 64];
        for seed in 0..seeds {
            let config = ChainConfig { iterations: 1, record_window: 1, seed, ..Default::default() };
            let trace = run_chain(&model, &config, &Sampler::Exact).unwrap();
            for (p, &l) in trace.plane(0).iter().enumerate() {
                counts[p][l as usize] += 1;
            }
        }
        // pool all pixels into one chi-square statistic
        let mut chi2 = 0.0;
        let mut dof = 0usize;
        for (p, c) in counts.iter().enumerate() {
            let e = conditional_energies(&model, &zero, p / 8, p % 8).unwrap();
            let pmf = pmf_from_energies(&e, 1.0).unwrap();
            for (k, &q) in pmf.probs().iter().enumerate() {
                let expected = q * seeds as f64;
                chi2 += (c[k] as f64 - expected).powi(2) / expected;
            }
            dof += 3;
        }
        let critical = ChiSquared::new(dof as f64).unwrap().inverse_cdf(0.99);
        assert!(chi2 < critical, "chi2 {chi2} >= {critical}");
    }

    #[test]
    fn near_zero_temperature_picks_conditional_argmins() {
        let model = toy_model(MrfParams { disparity_levels: 4, ..Default::default() });
        let config = ChainConfig {
            iterations: 3,
            record_window: 2,
            mode: ChainMode::Annealing,
            initial_temperature: 1e-6,
            cooling_rate: 1.0,
            seed: 4,
        };
        let trace = run_chain(&model, &config, &Sampler::Exact).unwrap();
        let before = trace.plane(0).to_vec();
        let after = trace.plane(1).to_vec();
        let n = before.len();
        for p in 0..n {
            // state seen by pixel p: already-updated labels before it, old ones after
            let mut seen = after[..p].to_vec();
            seen.extend_from_slice(&before[p..]);
            let state = DisparityMap::new(16, 16, seen).unwrap();
            let e = conditional_energies(&model, &state, p / 16, p % 16).unwrap();
            let min = e.iter().copied().fold(f64::INFINITY, f64::min);
            assert_eq!(e[after[p] as usize], min, "pixel {p}");
        }
    }

    #[test]
    fn annealing_lowers_energy() {
        let pair = make_random_dot_stereogram(16, 16, 16, ShiftRegion::centered(16, 16, 3), 8).unwrap();
        let model = StereoMrf::new(&pair.left, &pair.right, MrfParams::default()).unwrap();
        let mut improved = 0;
        for seed in 0..20 {
            let config = ChainConfig {
                iterations: 30,
                record_window: 30,
                mode: ChainMode::Annealing,
                initial_temperature: 4.0,
                cooling_rate: 0.9,
                seed,
            };
            let trace = run_chain(&model, &config, &Sampler::Exact).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let initial: Vec<u8> = (0..256).map(|_| rng.random_range(0..16) as u8).collect();
            let initial = model.energy(&DisparityMap::new(16, 16, initial).unwrap()).unwrap();
            let last = DisparityMap::new(16, 16, trace.plane(29).to_vec()).unwrap();
            if model.energy(&last).unwrap() <= initial {
                improved += 1;
            }
        }
        assert!(improved >= 19, "{improved}/20");
    }

    #[test]
    fn degenerate_conditionals_fall_back_to_argmin() {
        let img = GrayImage::filled(4, 4, 10).unwrap();
        let params = MrfParams { disparity_levels: 2, ..Default::default() };
        let model = StereoMrf::new(&img, &img, params).unwrap();
        // threshold above the code of the largest weight: every conditional collapses
        let approx = ApproxConfig { total_bits: 9, fraction_bits: 7, truncation_threshold: 2.5, ..Default::default() };
        let config = ChainConfig { iterations: 2, record_window: 1, ..Default::default() };
        let trace = run_chain(&model, &config, &Sampler::Approx(approx)).unwrap();
        assert_eq!(trace.meta().degenerate_fallbacks, 32);
    }
}
