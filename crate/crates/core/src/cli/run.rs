use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::approx_hw::splitmix64;
use crate::cli::config::{ExperimentConfig, InputSpec};
use crate::error::{Error, Result};
use crate::ingest::{
    add_gaussian_noise, load_ground_truth, load_pgm, make_random_dot_stereogram, GrayImage, GroundTruth, ShiftRegion,
};
use crate::mrf::{config_hash, read_trace, run_chain, ChainConfig, ChainTrace, Sampler, StereoMrf};

const NOISE_STREAM: u64 = 0x6e6f_6973_655f_6172;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Software,
    SoftwareNoise,
    Hardware,
}

impl Arm {
    pub const ALL: [Arm; 3] = [Arm::Software, Arm::SoftwareNoise, Arm::Hardware];

    pub fn name(self) -> &'static str {
        match self {
            Arm::Software => "software",
            Arm::SoftwareNoise => "software_noise",
            Arm::Hardware => "hardware",
        }
    }

    pub fn sampler(self, config: &ExperimentConfig) -> Sampler {
        match self {
            Arm::Software | Arm::SoftwareNoise => Sampler::Exact,
            Arm::Hardware => Sampler::Approx(config.approx.clone()),
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The clean stereo pair and its ground truth, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct Inputs {
    pub left: GrayImage,
    pub right: GrayImage,
    pub ground_truth: Option<GroundTruth>,
}

pub fn load_inputs(config: &ExperimentConfig) -> Result<Inputs> {
    let levels = config.model.disparity_levels;
    match &config.input {
        InputSpec::Synthetic {
            width,
            height,
            region,
            seed,
        } => {
            let region = region.unwrap_or_else(|| ShiftRegion::centered(*width, *height, 3));
            let pair = make_random_dot_stereogram(*width, *height, levels, region, *seed)?;
            Ok(Inputs {
                left: pair.left,
                right: pair.right,
                ground_truth: Some(pair.ground_truth),
            })
        }
        InputSpec::Files {
            left,
            right,
            ground_truth,
            ground_truth_scale,
        } => {
            fn at(path: &Path) -> impl FnOnce(Error) -> Error + '_ {
                move |e| Error::Trace {
                    path: path.to_path_buf(),
                    message: e.to_string(),
                }
            }
            let l = load_pgm(left).map_err(at(left))?;
            let r = load_pgm(right).map_err(at(right))?;
            if (l.width(), l.height()) != (r.width(), r.height()) {
                return Err(Error::shape(
                    format!("right image {}x{}", l.width(), l.height()),
                    format!("{}x{}", r.width(), r.height()),
                ));
            }
            let gt = match ground_truth {
                Some(path) => {
                    let gt = load_ground_truth(path, *ground_truth_scale, levels).map_err(at(path))?;
                    if (gt.width, gt.height) != (l.width(), l.height()) {
                        return Err(Error::shape(
                            format!("ground truth {}x{}", l.width(), l.height()),
                            format!("{}x{}", gt.width, gt.height),
                        ));
                    }
                    Some(gt)
                }
                None => None,
            };
            Ok(Inputs {
                left: l,
                right: r,
                ground_truth: gt,
            })
        }
    }
}

/// First sweep any metric reads: the earliest checkpoint's trailing half,
/// or the start of the end-point window.
pub fn first_recorded_sweep(config: &ExperimentConfig) -> usize {
    let earliest_half = config
        .metrics
        .checkpoints
        .iter()
        .map(|&x| {
            let t = config.checkpoint_iterations(x);
            t - t / 2
        })
        .min()
        .unwrap_or(0);
    earliest_half.min(config.chain.iterations - config.chain.record_window)
}

pub fn chain_config(config: &ExperimentConfig, run: usize) -> ChainConfig {
    let total = config.total_sweeps();
    ChainConfig {
        iterations: total,
        mode: config.chain.mode,
        initial_temperature: config.chain.initial_temperature,
        cooling_rate: config.chain.cooling_rate,
        record_window: total - first_recorded_sweep(config),
        seed: config.run_seed(run),
    }
}

fn noisy_model(config: &ExperimentConfig, inputs: &Inputs, seed: u64) -> Result<StereoMrf> {
    let sigma = config.metrics.noise_sigma;
    let left_seed = splitmix64(seed ^ NOISE_STREAM);
    let left = add_gaussian_noise(&inputs.left, sigma, left_seed)?;
    let right = add_gaussian_noise(&inputs.right, sigma, splitmix64(left_seed))?;
    StereoMrf::new(&left, &right, config.model.clone())
}

/// Traces of every arm, ordered by run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArmTraces {
    traces: [Vec<ChainTrace>; 3],
}

impl ArmTraces {
    pub fn get(&self, arm: Arm) -> &[ChainTrace] {
        &self.traces[arm.index()]
    }
}

/// Runs every chain of every arm on the current rayon pool.
pub fn run_chains(config: &ExperimentConfig, inputs: &Inputs) -> Result<ArmTraces> {
    let clean = StereoMrf::new(&inputs.left, &inputs.right, config.model.clone())?;
    let jobs: Vec<(Arm, usize)> = Arm::ALL
        .iter()
        .flat_map(|&arm| (0..config.runs).map(move |run| (arm, run)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(arm, run)| {
            let chain = chain_config(config, run);
            let seed = chain.seed;
            let attempt = || -> Result<ChainTrace> {
                let sampler = arm.sampler(config);
                if arm == Arm::SoftwareNoise {
                    run_chain(&noisy_model(config, inputs, seed)?, &chain, &sampler)
                } else {
                    run_chain(&clean, &chain, &sampler)
                }
            };
            attempt().map_err(|e| Error::Chain {
                arm: arm.name().to_string(),
                run,
                seed,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut traces: [Vec<ChainTrace>; 3] = Default::default();
    for ((arm, _), trace) in jobs.into_iter().zip(results) {
        traces[arm.index()].push(trace);
    }
    Ok(ArmTraces { traces })
}

pub fn trace_file_name(arm: Arm, run: usize, seed: u64) -> String {
    format!("{}_{run:03}_seed{seed}.trace", arm.name())
}

pub fn trace_path(dir: &Path, config: &ExperimentConfig, arm: Arm, run: usize) -> PathBuf {
    dir.join("traces").join(trace_file_name(arm, run, config.run_seed(run)))
}

/// Reads the traces of an earlier run and checks each one against the config.
pub fn load_traces(dir: &Path, config: &ExperimentConfig, inputs: &Inputs) -> Result<ArmTraces> {
    let jobs: Vec<(Arm, usize)> = Arm::ALL
        .iter()
        .flat_map(|&arm| (0..config.runs).map(move |run| (arm, run)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(arm, run)| {
            let path = trace_path(dir, config, arm, run);
            let seed = config.run_seed(run);
            let fail = |message: String| Error::Trace {
                path: path.clone(),
                message,
            };
            if !path.exists() {
                return Err(fail(format!("missing trace for {arm} run {run} (seed {seed})")));
            }
            let trace = read_trace(&path)?;
            let chain = chain_config(config, run);
            let meta = trace.meta();
            let sampler = arm.sampler(config);
            if meta.seed != seed || meta.sampler != sampler.kind() {
                return Err(fail(format!(
                    "expected a {:?} trace with seed {seed}, found {:?} with seed {}",
                    sampler.kind(),
                    meta.sampler,
                    meta.seed
                )));
            }
            if meta.config_hash != config_hash(&config.model, &chain, &sampler) {
                return Err(fail("trace was produced by a different configuration".into()));
            }
            if (trace.width(), trace.height()) != (inputs.left.width(), inputs.left.height())
                || trace.first_sweep() != chain.iterations - chain.record_window
            {
                return Err(fail("trace shape does not match the configured input".into()));
            }
            Ok(trace)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut traces: [Vec<ChainTrace>; 3] = Default::default();
    for ((arm, _), trace) in jobs.into_iter().zip(results) {
        traces[arm.index()].push(trace);
    }
    Ok(ArmTraces { traces })
}
