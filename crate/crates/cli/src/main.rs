use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aloha_gossip::analysis::{ab_coefficients, consensus_time_bound, estimate_rho, optimal_access, optimal_access_dense, q_lower_bound};
use aloha_gossip::channel::{closed_form_success, interference_constant, monte_carlo_success, spatial_contention};
use aloha_gossip::geometry::{build_disk_graph, read_points};
use aloha_gossip::gossip::{run_trajectory_with, InitialState, TrajectoryConfig};
use aloha_gossip::harness::{sweep_access_probability, SweepConfig};
use aloha_gossip::rng::substream;
use aloha_gossip::{BoundaryMode, ChannelParams, Deployment, Error, FarField, SlotOutcome, Window};
use aloha_gossip_cli::output::{default_dir, OutputDir};
use aloha_gossip_cli::settings::{resolve, Params, SettingsError};
use clap::{Parser, Subcommand};
use log::warn;
use serde::Serialize;

/// Substream roots for subcommands that do not go through the sweep harness.
const RUN_STREAM: u64 = 0x52_55_4E;
const VALIDATE_STREAM: u64 = 0x56_41_4C;
const GAMMA_STREAM: u64 = 0x47_41_4D;

#[derive(Parser)]
#[command(name = "aloha-gossip", version, about = "Gossip consensus over slotted-Aloha wireless swarms")]
struct Cli {
    /// TOML config; keys are the long flag names, flags win
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory [default: ./out/run-<unix time>]
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[command(flatten)]
    params: Params,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the closed-form design quantities
    Calc {
        /// Extra access probabilities for the q_lb column
        #[arg(long, value_delimiter = ',')]
        p: Vec<f64>,
        /// Initial disagreement for the consensus-time bounds
        #[arg(long, default_value_t = 1.0)]
        v0: f64,
        /// Target disagreement for the consensus-time bounds
        #[arg(long, default_value_t = 1e-3)]
        eps: f64,
        /// Mixing factor; without it the time bounds are skipped
        #[arg(long)]
        gamma: Option<f64>,
    },
    /// Simulate one gossip trajectory
    Run {
        /// Access probability
        #[arg(long)]
        p: f64,
        /// Node positions, one "x y" pair per line, instead of sampling
        #[arg(long)]
        points: Option<PathBuf>,
        /// Also write every slot to slots.jsonl
        #[arg(long)]
        dump_slots: bool,
    },
    /// Sweep the access probability and compare the optimum with p*
    Sweep,
    /// Compare Monte-Carlo link success with the closed form
    ValidateChannel {
        /// Trials per grid point (at least 10000)
        #[arg(long, default_value_t = 1_000_000)]
        trials: u64,
        #[arg(long, value_delimiter = ',', default_value = "3,4,5")]
        alphas: Vec<f64>,
        /// Active-transmitter intensities lambda*p
        #[arg(long, value_delimiter = ',', default_value = "0.001,0.005,0.02")]
        lambda_p: Vec<f64>,
        /// Link lengths
        #[arg(long, value_delimiter = ',', default_value = "2,5,10")]
        distances: Vec<f64>,
        /// Torus side as a multiple of the link length
        #[arg(long, default_value_t = 20.0)]
        side_factor: f64,
        /// Ignore interferers outside the simulated window
        #[arg(long)]
        truncate: bool,
    },
    /// Estimate the mixing factor gamma on the seeded deployment
    EstimateGamma {
        /// Matching samples
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        /// Access probability [default: p* from R]
        #[arg(long)]
        p: Option<f64>,
        #[arg(long, default_value_t = 1.0)]
        v0: f64,
        #[arg(long, default_value_t = 1e-3)]
        eps: f64,
    },
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Settings(#[from] SettingsError),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] Error),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("{0} of {1} grid points exceed |z| = 4")]
    ValidationFailed(usize, usize),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Settings(_) | CliError::Usage(_) => 2,
            CliError::Core(Error::Invariant(_)) => 3,
            CliError::Core(Error::Parameter { .. } | Error::DivergentInterference(_) | Error::Parse { .. }) => 2,
            _ => 1,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let params = resolve(cli.params, cli.config.as_deref())?;
    if let Some(threads) = params.threads {
        if threads == 0 {
            return Err(CliError::Usage("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let output = cli.output;
    match cli.command {
        Command::Calc { p, v0, eps, gamma } => calc(&params, &p, v0, eps, gamma),
        Command::Run { p, points, dump_slots } => run(&params, output, p, points.as_deref(), dump_slots),
        Command::Sweep => sweep(&params, output),
        Command::ValidateChannel {
            trials,
            alphas,
            lambda_p,
            distances,
            side_factor,
            truncate,
        } => validate_channel(&params, trials, &alphas, &lambda_p, &distances, side_factor, truncate),
        Command::EstimateGamma { samples, p, v0, eps } => estimate_gamma(&params, output, samples, p, v0, eps),
    }
}

fn open_output(dir: Option<PathBuf>) -> Result<OutputDir, CliError> {
    Ok(OutputDir::create(dir.unwrap_or_else(default_dir))?)
}

fn validated(params: &Params) -> Result<SweepConfig, CliError> {
    let cfg = params.sweep_config()?;
    cfg.validate()?;
    Ok(cfg)
}

fn calc(params: &Params, extra_p: &[f64], v0: f64, eps: f64, gamma: Option<f64>) -> Result<(), CliError> {
    let cfg = validated(params)?;
    let (lambda, range) = (cfg.deployment.intensity(), cfg.deployment.range);
    let (theta, alpha) = (cfg.channel.theta, cfg.channel.alpha);
    let coeffs = ab_coefficients(lambda, range, theta, alpha)?;
    let p_star = optimal_access(&coeffs);
    let p_dense = optimal_access_dense(coeffs.b)?;
    let q_star = q_lower_bound(p_star, lambda, range, theta, alpha)?;

    let mut out = io::stdout().lock();
    let rows = [
        ("alpha", alpha),
        ("theta", theta),
        ("lambda", lambda),
        ("R", range),
        ("C(alpha)", interference_constant(alpha)?),
        ("K(R)", spatial_contention(range, theta, alpha)?),
        ("a", coeffs.a),
        ("b", coeffs.b),
        ("b/a", coeffs.b / coeffs.a),
        ("p*", p_star),
        ("p*_dense", p_dense),
        ("q_lb(p*)", q_star),
    ];
    for (name, value) in rows {
        writeln!(out, "{name:<12}{value}")?;
    }

    let mut column = vec![0.0, p_star, p_dense];
    column.extend_from_slice(extra_p);
    column.extend_from_slice(&cfg.p_grid);
    column.sort_by(f64::total_cmp);
    column.dedup();
    writeln!(out)?;
    writeln!(out, "{:<24}q_lb", "p")?;
    for p in column {
        writeln!(out, "{p:<24}{}", q_lower_bound(p, lambda, range, theta, alpha)?)?;
    }

    writeln!(out)?;
    match gamma {
        Some(g) => {
            let b = consensus_time_bound(g, q_star, v0, eps)?;
            writeln!(out, "T_eps at p*, gamma={g}, V0={v0}, eps={eps}")?;
            writeln!(out, "{:<12}{}", "log-rate", b.log_rate)?;
            writeln!(out, "{:<12}{}", "linearized", b.linearized)?;
        }
        None => writeln!(out, "T_eps bounds need --gamma (see estimate-gamma)")?,
    }
    Ok(())
}

fn load_points(path: &Path, cfg: &SweepConfig) -> Result<Deployment, CliError> {
    let pts = read_points(BufReader::new(File::open(path)?))?;
    let window = Window::new(cfg.deployment.side, cfg.deployment.boundary)?;
    Ok(build_disk_graph(pts, cfg.deployment.range, window)?)
}

#[derive(Serialize)]
struct RunManifest<'a> {
    format_version: u32,
    seed: u64,
    p: f64,
    nodes: usize,
    edges: usize,
    mean_degree: f64,
    r_eff: Option<f64>,
    v0: f64,
    v_final: f64,
    epsilon: f64,
    config: &'a SweepConfig,
}

fn run(params: &Params, output: Option<PathBuf>, p: f64, points: Option<&Path>, dump_slots: bool) -> Result<(), CliError> {
    let cfg = validated(params)?;
    let channel = cfg.channel_params(p)?;
    let deployment = match points {
        Some(path) => load_points(path, &cfg)?,
        None => cfg.fixed_deployment()?,
    };
    let tcfg = TrajectoryConfig {
        order: cfg.decode_order,
        ..TrajectoryConfig::new(cfg.channel.mode, cfg.horizon)
    };
    let mut rng = substream(cfg.base_seed, &[RUN_STREAM]);
    let mut slots: Vec<(u64, SlotOutcome)> = Vec::new();
    let traj = run_trajectory_with(&deployment, &channel, &tcfg, &InitialState::UniformUnit, &mut rng, |t, s| {
        if dump_slots {
            slots.push((t, s.clone()));
        }
    })?;

    let stats = deployment.stats();
    let v0 = traj.v_series[0];
    let v_final = *traj.v_series.last().expect("horizon >= 1");
    let manifest = RunManifest {
        format_version: 1,
        seed: cfg.base_seed,
        p,
        nodes: stats.n,
        edges: stats.edges,
        mean_degree: stats.mean_degree,
        r_eff: stats.r_eff,
        v0,
        v_final,
        epsilon: traj.epsilon_t,
        config: &cfg,
    };
    let out = open_output(output)?;
    out.write_atomic::<_, Error>("trajectory.csv", |w| traj.write_csv(w))?;
    if dump_slots {
        out.write_atomic::<_, Error>("slots.jsonl", |w| {
            for (t, s) in &slots {
                s.write_jsonl(&mut *w, *t)?;
            }
            Ok(())
        })?;
    }
    out.write_atomic::<_, Error>("run.json", |w| {
        serde_json::to_writer_pretty(&mut *w, &manifest)?;
        writeln!(w)?;
        Ok(())
    })?;
    println!(
        "nodes {} edges {} V(0) {v0} V({}) {v_final} epsilon {}",
        stats.n, stats.edges, cfg.horizon, traj.epsilon_t
    );
    println!("wrote {}", out.path().display());
    Ok(())
}

fn sweep(params: &Params, output: Option<PathBuf>) -> Result<(), CliError> {
    let cfg = validated(params)?;
    let result = sweep_access_probability(&cfg)?;
    let out = open_output(output)?;
    out.write_atomic::<_, Error>("sweep.csv", |w| result.write_csv(w))?;
    out.write_atomic::<_, Error>("manifest.json", |w| result.write_manifest(&cfg, w))?;
    for r in &result.records {
        println!("p {:<24} eps {:<24} [{}, {}]", r.p, r.geo_mean_epsilon, r.ci_low, r.ci_high);
    }
    println!(
        "r_eff {} p* {} p*_dense {} argmin {}",
        result.r_eff_used, result.p_star_full, result.p_star_dense, result.empirical_argmin
    );
    println!("wrote {}", out.path().display());
    Ok(())
}

fn validate_channel(
    params: &Params,
    trials: u64,
    alphas: &[f64],
    lambda_p: &[f64],
    distances: &[f64],
    side_factor: f64,
    truncate: bool,
) -> Result<(), CliError> {
    if trials < 10_000 {
        return Err(CliError::Usage(format!("--trials must be >= 10000, got {trials}")));
    }
    if !(side_factor.is_finite() && side_factor >= 2.0) {
        return Err(CliError::Usage(format!("--side-factor must be >= 2, got {side_factor}")));
    }
    let theta = params.theta_linear();
    // Validate every point before simulating any.
    let mut points = Vec::new();
    for &alpha in alphas {
        for &lp in lambda_p {
            for &r in distances {
                let cp = ChannelParams::new(alpha, theta, lp, 1.0)?;
                let window = Window::new(side_factor * r, BoundaryMode::Torus)?;
                points.push((cp, r, window));
            }
        }
    }
    if alphas.iter().any(|&a| a < 2.2) {
        warn!("alpha close to 2: the interference sum converges slowly and C(alpha) blows up");
    }
    let far = if truncate { FarField::Truncated } else { FarField::Completed };
    let mut failures = 0;
    println!("alpha lambda_p r closed_form monte_carlo z status");
    for (idx, (cp, r, window)) in points.iter().enumerate() {
        let mut rng = substream(params.seed(), &[VALIDATE_STREAM, idx as u64]);
        let exact = closed_form_success(cp, *r)?;
        let est = monte_carlo_success(cp, *r, window, far, trials, &mut rng)?;
        let z = est.z_score(exact);
        let ok = z.abs() <= 4.0;
        failures += usize::from(!ok);
        println!(
            "{} {} {} {:.6} {:.6} {:+.3} {}",
            cp.alpha(),
            cp.lambda(),
            r,
            exact,
            est.point_estimate,
            z,
            if ok { "ok" } else { "FAIL" }
        );
    }
    if failures > 0 {
        return Err(CliError::ValidationFailed(failures, points.len()));
    }
    Ok(())
}

#[derive(Serialize)]
struct GammaReport<'a> {
    format_version: u32,
    seed: u64,
    p: f64,
    samples: usize,
    rho: f64,
    gamma: f64,
    stderr: f64,
    conservative_gamma: f64,
    q_lb: f64,
    t_eps_log_rate: Option<f64>,
    t_eps_linearized: Option<f64>,
    config: &'a SweepConfig,
}

fn estimate_gamma(
    params: &Params,
    output: Option<PathBuf>,
    samples: usize,
    p: Option<f64>,
    v0: f64,
    eps: f64,
) -> Result<(), CliError> {
    let cfg = validated(params)?;
    let (lambda, range) = (cfg.deployment.intensity(), cfg.deployment.range);
    let (theta, alpha) = (cfg.channel.theta, cfg.channel.alpha);
    let p = match p {
        Some(p) => p,
        None => optimal_access(&ab_coefficients(lambda, range, theta, alpha)?),
    };
    let channel = cfg.channel_params(p)?;
    let deployment = cfg.fixed_deployment()?;
    let est = estimate_rho(&deployment, &channel, samples, &mut substream(cfg.base_seed, &[GAMMA_STREAM]))?;
    let conservative = est.conservative_gamma(2.0);
    let q_lb = q_lower_bound(p, lambda, range, theta, alpha)?;
    let bounds = consensus_time_bound(conservative, q_lb, v0, eps).ok();
    let report = GammaReport {
        format_version: 1,
        seed: cfg.base_seed,
        p,
        samples,
        rho: est.rho,
        gamma: est.gamma,
        stderr: est.stderr,
        conservative_gamma: conservative,
        q_lb,
        t_eps_log_rate: bounds.map(|b| b.log_rate),
        t_eps_linearized: bounds.map(|b| b.linearized),
        config: &cfg,
    };
    let out = open_output(output)?;
    out.write_atomic::<_, Error>("gamma.json", |w| {
        serde_json::to_writer_pretty(&mut *w, &report)?;
        writeln!(w)?;
        Ok(())
    })?;
    println!("p {p} rho {} gamma {} stderr {} gamma-2se {conservative} q_lb {q_lb}", est.rho, est.gamma, est.stderr);
    match bounds {
        Some(b) => println!("T_eps log-rate {} linearized {}", b.log_rate, b.linearized),
        None => println!("T_eps unavailable: gamma*q_lb is not in (0, 1)"),
    }
    println!("wrote {}", out.path().display());
    Ok(())
}
