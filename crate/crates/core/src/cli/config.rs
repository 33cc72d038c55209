use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::approx_hw::ApproxConfig;
use crate::error::{Error, Result};
use crate::ingest::ShiftRegion;
use crate::mrf::{ChainMode, MrfParams};

/// Where the stereo pair comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InputSpec {
    /// Random-dot stereogram with exact ground truth.
    Synthetic {
        width: usize,
        height: usize,
        /// Defaults to the centered half-size square at disparity 3.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        region: Option<ShiftRegion>,
        #[serde(default)]
        seed: u64,
    },
    /// PGM images; relative paths resolve against the config file's directory.
    Files {
        left: PathBuf,
        right: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ground_truth: Option<PathBuf>,
        #[serde(default = "default_gt_scale")]
        ground_truth_scale: u32,
    },
}

fn default_gt_scale() -> u32 {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChainSettings {
    /// Base sweep budget; end points, BP, R² and ESS are taken here.
    pub iterations: usize,
    /// Sweeps before the budget used for ESS and end points.
    pub record_window: usize,
    pub mode: ChainMode,
    pub initial_temperature: f64,
    pub cooling_rate: f64,
    /// Run `i` of every arm uses chain seed `base_seed + i`.
    pub base_seed: u64,
}

impl Default for ChainSettings {
    fn default() -> Self {
        ChainSettings {
            iterations: 400,
            record_window: 200,
            mode: ChainMode::PureSampling,
            initial_temperature: 1.0,
            cooling_rate: 1.0,
            base_seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsOptions {
    pub bp_threshold: f64,
    pub ks_permutations: usize,
    pub ks_seed: u64,
    /// Standard deviation of the input noise of the software+noise arm.
    pub noise_sigma: f64,
    /// Budget multiples at which convergence is diagnosed.
    pub checkpoints: Vec<f64>,
}

impl Default for MetricsOptions {
    fn default() -> Self {
        MetricsOptions {
            bp_threshold: 1.0,
            ks_permutations: 999,
            ks_seed: 0,
            noise_sigma: 1.0,
            checkpoints: vec![0.25, 0.5, 1.0, 2.0],
        }
    }
}

/// Random energy vectors for the worst-case divergence search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DivergenceSweep {
    pub support_size: usize,
    pub energy_min: f64,
    pub energy_max: f64,
    pub temperature: f64,
    pub points: usize,
    pub seed: u64,
}

impl Default for DivergenceSweep {
    fn default() -> Self {
        DivergenceSweep {
            support_size: 4,
            energy_min: 0.0,
            energy_max: 4.0,
            temperature: 1.0,
            points: 10_000,
            seed: 0,
        }
    }
}

impl DivergenceSweep {
    pub fn validate(&self) -> Result<()> {
        if self.support_size == 0 {
            return Err(Error::Config("divergence.support_size must be at least 1".into()));
        }
        if !(self.energy_min.is_finite() && self.energy_max.is_finite() && self.energy_min <= self.energy_max) {
            return Err(Error::Config(format!(
                "divergence energy range [{}, {}] is invalid",
                self.energy_min, self.energy_max
            )));
        }
        if self.temperature <= 0.0 || !self.temperature.is_finite() {
            return Err(Error::Config("divergence.temperature must be positive".into()));
        }
        if self.points == 0 {
            return Err(Error::Config("divergence.points must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub input: InputSpec,
    #[serde(default)]
    pub model: MrfParams,
    #[serde(default)]
    pub chain: ChainSettings,
    /// Chains per arm.
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub approx: ApproxConfig,
    #[serde(default)]
    pub metrics: MetricsOptions,
    #[serde(default)]
    pub divergence: DivergenceSweep,
    /// Directory for outputs when `--out` is not given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

fn default_runs() -> usize {
    20
}

/// Smallest window the convergence diagnostic accepts.
const MIN_DIAGNOSTIC_WINDOW: usize = 10;

impl ExperimentConfig {
    /// A synthetic-input config with every other section at its default.
    pub fn synthetic(width: usize, height: usize) -> Self {
        ExperimentConfig {
            input: InputSpec::Synthetic {
                width,
                height,
                region: None,
                seed: 0,
            },
            model: MrfParams::default(),
            chain: ChainSettings::default(),
            runs: default_runs(),
            approx: ApproxConfig::default(),
            metrics: MetricsOptions::default(),
            divergence: DivergenceSweep::default(),
            output_dir: None,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Parses and validates a config file, resolving relative input paths.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config = Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        if let InputSpec::Files { left, right, ground_truth, .. } = &mut config.input {
            let base = path.parent().unwrap_or(Path::new("."));
            for p in [Some(left), Some(right), ground_truth.as_mut()].into_iter().flatten() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(config)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        self.model.validate().map_err(|e| Error::Config(format!("[model] {e}")))?;
        self.approx.validate().map_err(|e| Error::Config(format!("[approx] {e}")))?;
        self.divergence.validate()?;
        match &self.input {
            InputSpec::Synthetic { width, height, region, .. } => {
                let region = region.unwrap_or_else(|| ShiftRegion::centered(*width, *height, 3));
                if *width < self.model.disparity_levels || *height == 0 {
                    return bad(format!(
                        "[input] synthetic image {width}x{height} must be at least model.disparity_levels = {} wide",
                        self.model.disparity_levels
                    ));
                }
                if region.disparity >= self.model.disparity_levels {
                    return bad(format!(
                        "[input] region disparity {} must be below model.disparity_levels = {}",
                        region.disparity, self.model.disparity_levels
                    ));
                }
            }
            InputSpec::Files { ground_truth_scale, .. } => {
                if *ground_truth_scale == 0 {
                    return bad("[input] ground_truth_scale must be positive".into());
                }
            }
        }
        if self.runs < 2 {
            return bad(format!("runs must be at least 2 for the convergence diagnostic, got {}", self.runs));
        }
        let c = &self.chain;
        if c.iterations == 0 {
            return bad("[chain] iterations must be positive".into());
        }
        if c.record_window < crate::metrics::MIN_ESS_SAMPLES || c.record_window > c.iterations {
            return bad(format!(
                "[chain] record_window must be in [{}, iterations = {}], got {}",
                crate::metrics::MIN_ESS_SAMPLES,
                c.iterations,
                c.record_window
            ));
        }
        if c.mode == ChainMode::Annealing && !(c.cooling_rate > 0.0 && c.cooling_rate <= 1.0 && c.initial_temperature > 0.0) {
            return bad("[chain] annealing needs initial_temperature > 0 and cooling_rate in (0, 1]".into());
        }
        let m = &self.metrics;
        if m.bp_threshold.is_nan() || m.bp_threshold < 0.0 {
            return bad("[metrics] bp_threshold must be >= 0".into());
        }
        if m.ks_permutations < crate::metrics::MIN_PERMUTATIONS {
            return bad(format!(
                "[metrics] ks_permutations must be at least {}",
                crate::metrics::MIN_PERMUTATIONS
            ));
        }
        if m.noise_sigma < 0.0 || !m.noise_sigma.is_finite() {
            return bad("[metrics] noise_sigma must be finite and >= 0".into());
        }
        if m.checkpoints.is_empty() {
            return bad("[metrics] checkpoints must not be empty".into());
        }
        for &x in &m.checkpoints {
            if x <= 0.0 || !x.is_finite() {
                return bad(format!("[metrics] checkpoint {x} must be positive"));
            }
            if self.checkpoint_iterations(x) / 2 < MIN_DIAGNOSTIC_WINDOW {
                return bad(format!(
                    "[metrics] checkpoint {x}x of {} iterations leaves fewer than {MIN_DIAGNOSTIC_WINDOW} sweeps to diagnose",
                    c.iterations
                ));
            }
        }
        if !m.checkpoints.contains(&1.0) {
            return bad("[metrics] checkpoints must include 1.0 (the base budget)".into());
        }
        Ok(())
    }

    /// Sweeps at budget multiple `x`.
    pub fn checkpoint_iterations(&self, multiple: f64) -> usize {
        (multiple * self.chain.iterations as f64).round() as usize
    }

    /// Sweeps every chain runs: the largest checkpoint, and at least the base budget.
    pub fn total_sweeps(&self) -> usize {
        self.metrics
            .checkpoints
            .iter()
            .map(|&x| self.checkpoint_iterations(x))
            .max()
            .unwrap_or(0)
            .max(self.chain.iterations)
    }

    pub fn run_seed(&self, run: usize) -> u64 {
        self.chain.base_seed.wrapping_add(run as u64)
    }

    /// Shifts every seed (chains, input, noise, permutations, sweep) by `offset`.
    pub fn with_seed_offset(mut self, offset: u64) -> Self {
        self.chain.base_seed = self.chain.base_seed.wrapping_add(offset);
        self.metrics.ks_seed = self.metrics.ks_seed.wrapping_add(offset);
        self.divergence.seed = self.divergence.seed.wrapping_add(offset);
        if let InputSpec::Synthetic { seed, .. } = &mut self.input {
            *seed = seed.wrapping_add(offset);
        }
        self
    }
}
