use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cli::config::ExperimentConfig;
use crate::cli::divergence::{divergence_csv, divergence_sweep, DivergenceSummary};
use crate::cli::run::{Arm, ArmTraces, Inputs};
use crate::cli::{fmt_float, fmt_opt};
use crate::error::Result;
use crate::metrics::{
    active_region, convergence_percentage, ess_summary, ks_permutation_test, r_squared, reference_mode,
    rhat_per_pixel, EssSummary, KsResult, RhatRecord, Verdict,
};
use crate::mrf::{bad_pixel_percentage, end_point, ChainTrace, DisparityMap};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpreadSummary {
    pub mean: Option<f64>,
    /// Sample standard deviation across runs.
    pub stddev: Option<f64>,
    pub per_run: Vec<Option<f64>>,
}

impl SpreadSummary {
    fn of(per_run: Vec<Option<f64>>) -> Self {
        let defined: Vec<f64> = per_run.iter().flatten().copied().collect();
        let n = defined.len() as f64;
        let mean = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / n);
        let stddev = mean
            .filter(|_| defined.len() > 1)
            .map(|m| (defined.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
        SpreadSummary { mean, stddev, per_run }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EssReport {
    /// Per-run mean ESS over all pixels with nonzero variance.
    pub overall: SpreadSummary,
    /// Per-run mean ESS over the active region.
    pub active: SpreadSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Sweeps divided by the base budget.
    pub budget_multiple: f64,
    /// Sweeps divided by the hardware arm's matching budget (see
    /// `IterationRatios::hardware_convergence_multiple`).
    pub hardware_normalized: Option<f64>,
    pub iterations: usize,
    /// First sweep of the diagnosed trailing half.
    pub window_start: usize,
    pub convergence_percentage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmReport {
    pub arm: Arm,
    pub seeds: Vec<u64>,
    /// `None` without ground truth.
    pub bad_pixels: Option<SpreadSummary>,
    pub ess: EssReport,
    pub r_squared: Vec<Option<f64>>,
    pub r_squared_mean: Option<f64>,
    pub r_squared_median: Option<f64>,
    pub convergence: Vec<CurvePoint>,
    pub degenerate_fallbacks: u64,
}

impl ArmReport {
    /// Convergence percentage at budget multiple `x`, if it was a checkpoint.
    pub fn convergence_at(&self, multiple: f64) -> Option<f64> {
        self.convergence
            .iter()
            .find(|p| p.budget_multiple == multiple)
            .map(|p| p.convergence_percentage)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsComparison {
    pub a: Arm,
    pub b: Arm,
    /// Test of the two arms' R² sets; `None` with a `note` when it cannot run.
    pub result: Option<KsResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRatios {
    /// Software over hardware mean active-region ESS: hardware sweeps needed
    /// per software sweep for equal active ESS.
    pub active_ess_ratio: Option<f64>,
    /// Smallest checkpoint at which hardware convergence reaches the software
    /// value at the base budget; `None` if no checkpoint does.
    pub hardware_convergence_multiple: Option<f64>,
    /// Software convergence percentage at the base budget.
    pub software_convergence_target: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub tool_version: String,
    pub config: ExperimentConfig,
    pub total_sweeps: usize,
    /// Sweeps `[start, end)` that end points, BP, R² and ESS are taken over.
    pub end_point_window: [usize; 2],
    pub pixels: usize,
    pub active_pixels: usize,
    pub arms: Vec<ArmReport>,
    pub ks: Vec<KsComparison>,
    pub iteration_ratios: IterationRatios,
    pub divergence: DivergenceSummary,
}

impl RobustnessReport {
    pub fn arm(&self, arm: Arm) -> &ArmReport {
        self.arms.iter().find(|a| a.arm == arm).expect("every arm is reported")
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// The report plus its CSV companions.
#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub report: RobustnessReport,
    pub per_rv_csv: String,
    pub r2_csv: String,
    pub divergence_csv: String,
}

struct ArmMetrics {
    end_points: Vec<DisparityMap>,
    ess: Vec<EssSummary>,
    bp: Option<Vec<f64>>,
    curve: Vec<(f64, usize, usize, f64)>,
    base_records: Vec<RhatRecord>,
}

fn restrict_all(traces: &[ChainTrace], start: usize, end: usize) -> Result<Vec<ChainTrace>> {
    traces.iter().map(|t| t.restrict(start..end)).collect()
}

fn median(values: &[f64]) -> Option<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => None,
        _ if n % 2 == 1 => Some(v[n / 2]),
        _ => Some((v[n / 2 - 1] + v[n / 2]) / 2.0),
    }
}

/// Computes every metric of the report from the chain traces.
pub fn analyze(config: &ExperimentConfig, inputs: &Inputs, traces: &ArmTraces) -> Result<Analysis> {
    let n = config.chain.iterations;
    let window = [n - config.chain.record_window, n];
    let base: Vec<Vec<ChainTrace>> = Arm::ALL
        .iter()
        .map(|&arm| restrict_all(traces.get(arm), window[0], window[1]))
        .collect::<Result<_>>()?;
    let active = active_region(&base[0], &base[2])?;
    let pixels = active.len();

    let mut checkpoints = config.metrics.checkpoints.clone();
    checkpoints.sort_by(f64::total_cmp);
    checkpoints.dedup();

    let mut metrics = Vec::new();
    for (arm, base) in Arm::ALL.iter().zip(&base) {
        let end_points: Vec<DisparityMap> = base.iter().map(end_point).collect();
        let ess = base
            .iter()
            .map(|t| ess_summary(t, &active))
            .collect::<Result<Vec<_>>>()?;
        let bp = match &inputs.ground_truth {
            Some(gt) => Some(
                end_points
                    .iter()
                    .map(|m| bad_pixel_percentage(&m.labels, &gt.disparities, config.metrics.bp_threshold, &gt.valid_mask))
                    .collect::<Result<Vec<_>>>()?,
            ),
            None => None,
        };
        let mut curve = Vec::new();
        let mut base_records = Vec::new();
        for &x in &checkpoints {
            let t = config.checkpoint_iterations(x);
            let start = t - t / 2;
            let records = rhat_per_pixel(&restrict_all(traces.get(*arm), start, t)?)?;
            curve.push((x, t, start, convergence_percentage(&records)?));
            if x == 1.0 {
                base_records = records;
            }
        }
        metrics.push(ArmMetrics {
            end_points,
            ess,
            bp,
            curve,
            base_records,
        });
    }

    let reference = reference_mode(&metrics[0].end_points)?;
    let r2: Vec<Vec<Option<f64>>> = metrics
        .iter()
        .map(|m| m.end_points.iter().map(|e| r_squared(e, &reference)).collect::<Result<_>>())
        .collect::<Result<_>>()?;

    let target = metrics[0].curve.iter().find(|c| c.0 == 1.0).map_or(0.0, |c| c.3);
    let hardware_multiple = metrics[2].curve.iter().find(|c| c.3 >= target).map(|c| c.0);

    let arms: Vec<ArmReport> = Arm::ALL
        .iter()
        .zip(&metrics)
        .zip(&r2)
        .map(|((&arm, m), r2)| {
            let defined: Vec<f64> = r2.iter().flatten().copied().collect();
            ArmReport {
                arm,
                seeds: (0..config.runs).map(|r| config.run_seed(r)).collect(),
                bad_pixels: m.bp.as_ref().map(|bp| SpreadSummary::of(bp.iter().map(|&x| Some(x)).collect())),
                ess: EssReport {
                    overall: SpreadSummary::of(m.ess.iter().map(|e| e.mean_overall).collect()),
                    active: SpreadSummary::of(m.ess.iter().map(|e| e.mean_active).collect()),
                },
                r_squared: r2.clone(),
                r_squared_mean: (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64),
                r_squared_median: median(&defined),
                convergence: m
                    .curve
                    .iter()
                    .map(|&(x, t, start, pct)| CurvePoint {
                        budget_multiple: x,
                        hardware_normalized: hardware_multiple.map(|h| x / h),
                        iterations: t,
                        window_start: start,
                        convergence_percentage: pct,
                    })
                    .collect(),
                degenerate_fallbacks: traces.get(arm).iter().map(|t| t.meta().degenerate_fallbacks).sum(),
            }
        })
        .collect();

    let ks = [(Arm::Software, Arm::Hardware), (Arm::Software, Arm::SoftwareNoise)]
        .iter()
        .enumerate()
        .map(|(i, &(a, b))| {
            let xs: Vec<f64> = r2[a as usize].iter().flatten().copied().collect();
            let ys: Vec<f64> = r2[b as usize].iter().flatten().copied().collect();
            let seed = config.metrics.ks_seed.wrapping_add(i as u64);
            match ks_permutation_test(&xs, &ys, config.metrics.ks_permutations, seed) {
                Ok(result) => KsComparison {
                    a,
                    b,
                    result: Some(result),
                    note: None,
                },
                Err(e) => KsComparison {
                    a,
                    b,
                    result: None,
                    note: Some(format!("not computed: {e}")),
                },
            }
        })
        .collect();

    let ess_ratio = match (arms[0].ess.active.mean, arms[2].ess.active.mean) {
        (Some(sw), Some(hw)) if hw > 0.0 => Some(sw / hw),
        _ => None,
    };

    let (divergence, points) = divergence_sweep(&config.approx, &config.divergence)?;

    let report = RobustnessReport {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        total_sweeps: config.total_sweeps(),
        end_point_window: window,
        pixels,
        active_pixels: active.iter().filter(|&&a| a).count(),
        arms,
        ks,
        iteration_ratios: IterationRatios {
            active_ess_ratio: ess_ratio,
            hardware_convergence_multiple: hardware_multiple,
            software_convergence_target: target,
        },
        divergence,
    };
    Ok(Analysis {
        per_rv_csv: per_rv_csv(inputs.left.width(), &active, &metrics),
        r2_csv: r2_csv(config, &r2, &metrics),
        divergence_csv: divergence_csv(&points),
        report,
    })
}

fn per_rv_csv(width: usize, active: &[bool], metrics: &[ArmMetrics]) -> String {
    let rows: Vec<String> = Arm::ALL
        .par_iter()
        .zip(metrics)
        .map(|(arm, m)| {
            let mut out = String::new();
            for (p, record) in m.base_records.iter().enumerate() {
                let defined: Vec<f64> = m.ess.iter().filter_map(|e| e.per_rv[p]).collect();
                let ess = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
                let verdict = match record.verdict {
                    Verdict::Converged => "converged",
                    Verdict::NotConverged => "not_converged",
                };
                writeln!(
                    out,
                    "{arm},{p},{},{},{},{},{},{},{},{verdict}",
                    p / width,
                    p % width,
                    u8::from(active[p]),
                    fmt_opt(ess, "excluded"),
                    fmt_float(record.b),
                    fmt_float(record.w),
                    fmt_opt(record.rhat, "undefined"),
                )
                .unwrap();
            }
            out
        })
        .collect();
    let mut csv = String::from("arm,rv_id,row,col,active,ess,b,w,rhat,verdict\n");
    rows.iter().for_each(|r| csv.push_str(r));
    csv
}

fn r2_csv(config: &ExperimentConfig, r2: &[Vec<Option<f64>>], metrics: &[ArmMetrics]) -> String {
    let mut csv = String::from("arm,run,seed,r2,bp\n");
    for ((arm, r2), m) in Arm::ALL.iter().zip(r2).zip(metrics) {
        for (run, value) in r2.iter().enumerate() {
            let bp = m.bp.as_ref().map(|bp| bp[run]);
            writeln!(
                csv,
                "{arm},{run},{},{},{}",
                config.run_seed(run),
                fmt_opt(*value, "undefined"),
                fmt_opt(bp, ""),
            )
            .unwrap();
        }
    }
    csv
}
