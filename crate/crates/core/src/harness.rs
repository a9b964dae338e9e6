//! Monte-Carlo p-sweeps and bound checks.
//!
//! Every run owns the substream `(base_seed, p index, run index)`, runs are
//! executed on the rayon pool and collected in index order, so a sweep is a
//! pure function of its config.

use std::io::Write;

use log::warn;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::analysis::{optimal_access, optimal_access_dense, q_lower_bound, ProxyCoefficients};
use crate::channel::{spatial_contention, ChannelParams};
use crate::error::{ensure, Error, Result};
use crate::geometry::{
    build_disk_graph, effective_distance, sample_binomial, sample_ppp, BoundaryMode, Deployment, Window,
};
use crate::gossip::{run_trajectory_with, InitialState, TrajectoryConfig};
use crate::mac::{ChannelMode, DecodeOrder};
use crate::rng::{substream, tag};

/// Ratios below this are floored before taking logs.
pub const EPSILON_FLOOR: f64 = 1e-16;

/// Attempts per run before a degenerate start becomes an error.
const MAX_REDRAWS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Population {
    /// Exactly `n` uniform nodes; the analysis uses `lambda = n / side²`.
    Binomial { n: usize },
    Ppp { lambda: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeploymentSpec {
    pub population: Population,
    pub side: f64,
    pub range: f64,
    #[serde(default)]
    pub boundary: BoundaryMode,
}

impl DeploymentSpec {
    pub fn window(&self) -> Result<Window> {
        Window::new(self.side, self.boundary)
    }

    /// Node intensity used by the closed forms.
    pub fn intensity(&self) -> f64 {
        match self.population {
            Population::Binomial { n } => n as f64 / (self.side * self.side),
            Population::Ppp { lambda } => lambda,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Deployment> {
        let window = self.window()?;
        let points = match self.population {
            Population::Binomial { n } => sample_binomial(n, &window, rng)?,
            Population::Ppp { lambda } => sample_ppp(lambda, &window, rng)?,
        };
        build_disk_graph(points, self.range, window)
    }

    fn validate(&self) -> Result<()> {
        self.window()?;
        ensure(self.range.is_finite() && self.range > 0.0, "range", self.range, "must be finite and > 0")?;
        match self.population {
            Population::Binomial { n } => {
                ensure(n >= 2, "n", n as f64, "must be >= 2")?;
            }
            Population::Ppp { lambda } => {
                ensure(lambda.is_finite() && lambda > 0.0, "lambda", lambda, "must be finite and > 0")?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub theta: f64,
    pub alpha: f64,
    #[serde(default)]
    pub mode: ChannelMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometryPolicy {
    /// A new deployment for every run.
    #[default]
    Fresh,
    /// One deployment, drawn from the base seed, shared by all runs.
    Fixed,
}

/// Where the measured `r_eff` replaces `R` when predicting `p*`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReffSubstitution {
    #[default]
    Both,
    BOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub deployment: DeploymentSpec,
    pub channel: ChannelSpec,
    pub p_grid: Vec<f64>,
    pub horizon: usize,
    pub runs_per_p: usize,
    pub base_seed: u64,
    #[serde(default)]
    pub geometry: GeometryPolicy,
    #[serde(default)]
    pub r_eff_substitution: ReffSubstitution,
    #[serde(default)]
    pub decode_order: DecodeOrder,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        self.deployment.validate()?;
        self.channel_params(1.0)?;
        ensure(!self.p_grid.is_empty(), "p_grid", 0.0, "must not be empty")?;
        for &p in &self.p_grid {
            ensure(p > 0.0 && p <= 1.0, "p_grid", p, "entries must lie in (0, 1]")?;
        }
        ensure(self.horizon >= 1, "horizon", self.horizon as f64, "must be >= 1")?;
        ensure(self.runs_per_p >= 2, "runs_per_p", self.runs_per_p as f64, "must be >= 2")?;
        Ok(())
    }

    pub fn channel_params(&self, p: f64) -> Result<ChannelParams> {
        ChannelParams::new(self.channel.alpha, self.channel.theta, self.deployment.intensity(), p)
    }

    /// The deployment shared by all runs under [`GeometryPolicy::Fixed`].
    pub fn fixed_deployment(&self) -> Result<Deployment> {
        self.deployment.sample(&mut substream(self.base_seed, &[tag::FIXED_GEOMETRY]))
    }

    fn trajectory_config(&self) -> TrajectoryConfig {
        TrajectoryConfig {
            order: self.decode_order,
            ..TrajectoryConfig::new(self.channel.mode, self.horizon)
        }
    }
}

/// Geometric mean and multiplicative confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogCi {
    pub geo_mean: f64,
    pub low: f64,
    pub high: f64,
}

pub fn log_domain_ci(samples: &[f64], level: f64) -> Result<LogCi> {
    ensure(samples.len() >= 2, "samples", samples.len() as f64, "need at least 2 samples")?;
    ensure(level > 0.0 && level < 1.0, "level", level, "must lie in (0, 1)")?;
    if let Some(&bad) = samples.iter().find(|&&s| !(s > 0.0 && s.is_finite())) {
        return Err(Error::Parameter {
            name: "samples",
            value: bad,
            constraint: "must be finite and > 0",
        });
    }
    let n = samples.len() as f64;
    let logs: Vec<f64> = samples.iter().map(|s| s.ln()).collect();
    let mean = logs.iter().sum::<f64>() / n;
    let var = logs.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let z = Normal::standard().inverse_cdf(0.5 + 0.5 * level);
    let half = z * (var / n).sqrt();
    Ok(LogCi {
        geo_mean: mean.exp(),
        low: (mean - half).exp(),
        high: (mean + half).exp(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub p: f64,
    pub geo_mean_epsilon: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub runs: usize,
    /// Runs whose ratio was floored at [`EPSILON_FLOOR`].
    pub floored: usize,
    /// Extra draws needed because a run started at consensus.
    pub redrawn: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub records: Vec<SweepRecord>,
    pub lambda: f64,
    pub r_eff_used: f64,
    /// True when no realized geometry had an edge and `R` stood in for `r_eff`.
    pub r_eff_fallback: bool,
    pub p_star_full: f64,
    pub p_star_dense: f64,
    pub empirical_argmin: f64,
}

impl SweepResult {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "p,geo_mean_epsilon,ci_low,ci_high,runs")?;
        for r in &self.records {
            writeln!(w, "{},{},{},{},{}", r.p, r.geo_mean_epsilon, r.ci_low, r.ci_high, r.runs)?;
        }
        Ok(())
    }

    /// JSON manifest with the predictions and the full config echo.
    pub fn write_manifest<W: Write>(&self, config: &SweepConfig, w: W) -> Result<()> {
        #[derive(Serialize)]
        struct Manifest<'a> {
            format_version: u32,
            seed: u64,
            lambda: f64,
            r_eff_used: f64,
            r_eff_fallback: bool,
            p_star_full: f64,
            p_star_dense: f64,
            empirical_argmin: f64,
            floored_runs: usize,
            redrawn_runs: usize,
            config: &'a SweepConfig,
            records: &'a [SweepRecord],
        }
        let manifest = Manifest {
            format_version: 1,
            seed: config.base_seed,
            lambda: self.lambda,
            r_eff_used: self.r_eff_used,
            r_eff_fallback: self.r_eff_fallback,
            p_star_full: self.p_star_full,
            p_star_dense: self.p_star_dense,
            empirical_argmin: self.empirical_argmin,
            floored_runs: self.records.iter().map(|r| r.floored).sum(),
            redrawn_runs: self.records.iter().map(|r| r.redrawn).sum(),
            config,
            records: &self.records,
        };
        let mut w = w;
        serde_json::to_writer_pretty(&mut w, &manifest)?;
        writeln!(w)?;
        Ok(())
    }
}

struct RunOutcome {
    v_series: Vec<f64>,
    r_eff: Option<f64>,
    redrawn: usize,
}

/// One trajectory on its own substream, redrawing degenerate starts.
fn single_run(config: &SweepConfig, fixed: Option<&Deployment>, p: f64, path: &[u64]) -> Result<RunOutcome> {
    let params = config.channel_params(p)?;
    let tcfg = config.trajectory_config();
    let mut rng = substream(config.base_seed, path);
    let mut owned;
    let mut deployment = match fixed {
        Some(d) => d,
        None => {
            owned = config.deployment.sample(&mut rng)?;
            &owned
        }
    };
    for redrawn in 0..MAX_REDRAWS {
        match run_trajectory_with(deployment, &params, &tcfg, &InitialState::UniformUnit, &mut rng, |_, _| {}) {
            Ok(traj) => {
                return Ok(RunOutcome {
                    v_series: traj.v_series,
                    r_eff: effective_distance(deployment).ok(),
                    redrawn,
                })
            }
            Err(Error::DegenerateStart) => {
                // With fewer than two nodes no initial state can disagree.
                if fixed.is_none() && deployment.len() < 2 {
                    owned = config.deployment.sample(&mut rng)?;
                    deployment = &owned;
                }
            }
            Err(e) => return Err(e),
        }
    }
    Err(Error::DegenerateStart)
}

fn run_grid(config: &SweepConfig, p_grid: &[f64], runs: usize, stream: u64) -> Result<Vec<Vec<RunOutcome>>> {
    let fixed = match config.geometry {
        GeometryPolicy::Fixed => Some(config.fixed_deployment()?),
        GeometryPolicy::Fresh => None,
    };
    let jobs: Vec<(usize, usize)> = (0..p_grid.len()).flat_map(|k| (0..runs).map(move |r| (k, r))).collect();
    let mut flat = jobs
        .par_iter()
        .map(|&(k, r)| single_run(config, fixed.as_ref(), p_grid[k], &[stream, k as u64, r as u64]))
        .collect::<Result<Vec<_>>>()?
        .into_iter();
    Ok((0..p_grid.len()).map(|_| flat.by_ref().take(runs).collect()).collect())
}

fn predicted_optimum(config: &SweepConfig, r_eff: f64) -> Result<(f64, f64)> {
    let lambda = config.deployment.intensity();
    let (theta, alpha) = (config.channel.theta, config.channel.alpha);
    let a_range = match config.r_eff_substitution {
        ReffSubstitution::Both => r_eff,
        ReffSubstitution::BOnly => config.deployment.range,
    };
    let coeffs = ProxyCoefficients::new(
        lambda * std::f64::consts::PI * a_range * a_range,
        lambda * spatial_contention(r_eff, theta, alpha)?,
    )?;
    Ok((optimal_access(&coeffs), optimal_access_dense(coeffs.b)?))
}

/// Runs the full p-grid and compares the empirical optimum with `p*`.
pub fn sweep_access_probability(config: &SweepConfig) -> Result<SweepResult> {
    config.validate()?;
    let outcomes = run_grid(config, &config.p_grid, config.runs_per_p, tag::SWEEP)?;

    let mut records = Vec::with_capacity(config.p_grid.len());
    let (mut r_sum, mut r_count) = (0.0, 0usize);
    for (&p, runs) in config.p_grid.iter().zip(&outcomes) {
        let mut floored = 0;
        let eps: Vec<f64> = runs
            .iter()
            .map(|run| {
                let ratio = run.v_series[config.horizon] / run.v_series[0];
                if ratio < EPSILON_FLOOR {
                    floored += 1;
                    EPSILON_FLOOR
                } else {
                    ratio
                }
            })
            .collect();
        for r in runs.iter().filter_map(|run| run.r_eff) {
            r_sum += r;
            r_count += 1;
        }
        let ci = log_domain_ci(&eps, 0.95)?;
        records.push(SweepRecord {
            p,
            geo_mean_epsilon: ci.geo_mean,
            ci_low: ci.low,
            ci_high: ci.high,
            runs: runs.len(),
            floored,
            redrawn: runs.iter().map(|r| r.redrawn).sum(),
        });
    }

    let r_eff_fallback = r_count == 0;
    let r_eff_used = if r_eff_fallback {
        warn!("no realized deployment had a link; using R = {} for r_eff", config.deployment.range);
        config.deployment.range
    } else {
        r_sum / r_count as f64
    };
    let (p_star_full, p_star_dense) = predicted_optimum(config, r_eff_used)?;
    let empirical_argmin = records
        .iter()
        .min_by(|a, b| a.geo_mean_epsilon.total_cmp(&b.geo_mean_epsilon))
        .map(|r| r.p)
        .expect("non-empty grid");
    Ok(SweepResult {
        records,
        lambda: config.deployment.intensity(),
        r_eff_used,
        r_eff_fallback,
        p_star_full,
        p_star_dense,
        empirical_argmin,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundPoint {
    pub t: usize,
    /// Mean of `V(t)/V(0)` over runs.
    pub mean_ratio: f64,
    /// 95% normal half-width of `mean_ratio`.
    pub ci_half_width: f64,
    /// `(1 - gamma q_lb(p))^t`.
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub p: f64,
    pub gamma: f64,
    pub q_lb: f64,
    pub runs: usize,
    pub points: Vec<BoundPoint>,
    /// Time points where the mean exceeds the bound.
    pub violations: usize,
    /// Time points where the mean exceeds the bound by more than the CI half-width.
    pub strong_violations: usize,
}

impl BoundReport {
    pub fn fraction_holding(&self) -> f64 {
        1.0 - self.violations as f64 / self.points.len() as f64
    }
}

/// Compares the empirical mean of `V(t)/V(0)` over `runs_per_p` runs at
/// access probability `p` with `(1 - gamma q_lb(p))^t`.
pub fn compare_bound(config: &SweepConfig, gamma: f64, p: f64) -> Result<BoundReport> {
    ensure((0.0..=1.0).contains(&gamma), "gamma", gamma, "must lie in [0, 1]")?;
    ensure((0.0..=1.0).contains(&p), "p", p, "must lie in [0, 1]")?;
    config.validate()?;
    let q_lb = q_lower_bound(
        p,
        config.deployment.intensity(),
        config.deployment.range,
        config.channel.theta,
        config.channel.alpha,
    )?;
    let runs = run_grid(config, &[p], config.runs_per_p, tag::BOUND)?.remove(0);
    let n = runs.len() as f64;
    let z = Normal::standard().inverse_cdf(0.975);
    let base = 1.0 - gamma * q_lb;
    let points: Vec<BoundPoint> = (0..=config.horizon)
        .map(|t| {
            let ratios = runs.iter().map(|r| r.v_series[t] / r.v_series[0]);
            let mean = ratios.clone().sum::<f64>() / n;
            let var = ratios.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            BoundPoint {
                t,
                mean_ratio: mean,
                ci_half_width: z * (var / n).sqrt(),
                bound: base.powi(t as i32),
            }
        })
        .collect();
    let violations = points.iter().filter(|pt| pt.mean_ratio > pt.bound).count();
    let strong_violations = points
        .iter()
        .filter(|pt| pt.mean_ratio > pt.bound + pt.ci_half_width)
        .count();
    Ok(BoundReport {
        p,
        gamma,
        q_lb,
        runs: runs.len(),
        points,
        violations,
        strong_violations,
    })
}
