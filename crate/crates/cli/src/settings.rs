//! Parameter resolution: defaults, then the config file, then flags.
//!
//! Config-file keys are the long flag names (`theta-db`, `p-grid`, ...).

use std::fs;
use std::path::Path;

use aloha_gossip::channel::db_to_linear;
use aloha_gossip::harness::{
    ChannelSpec, DeploymentSpec, GeometryPolicy, Population, ReffSubstitution, SweepConfig,
};
use aloha_gossip::{BoundaryMode, ChannelMode, DecodeOrder};
use clap::Args;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// Seed used when neither `--seed` nor the config file provides one.
pub const DEFAULT_SEED: u64 = 1729;

/// Config-file format understood by this binary.
pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum SettingsError {
    #[error("cannot read config {0}: {1}")]
    Read(String, #[source] std::io::Error),
    #[error("invalid config {0}: {1}")]
    Parse(String, String),
    #[error("{0}")]
    Invalid(String),
}

/// Parses a serde-named enum value (`exact_sir`, `torus`, ...) from a flag.
fn parse_named<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_owned())).map_err(|e| e.to_string())
}

/// Either an explicit list of probabilities or `log:lo:hi:count`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PGrid {
    List(Vec<f64>),
    Spec(String),
}

impl PGrid {
    pub fn values(&self) -> Result<Vec<f64>, String> {
        match self {
            PGrid::List(v) => Ok(v.clone()),
            PGrid::Spec(s) => parse_grid(s).and_then(|g| g.values()),
        }
    }
}

fn parse_grid(s: &str) -> Result<PGrid, String> {
    let s = s.trim();
    if let Some(rest) = s.strip_prefix("log:") {
        let parts: Vec<&str> = rest.split(':').collect();
        let [lo, hi, count] = parts[..] else {
            return Err(format!("expected log:lo:hi:count, got {s:?}"));
        };
        let lo: f64 = lo.parse().map_err(|e| format!("{lo:?}: {e}"))?;
        let hi: f64 = hi.parse().map_err(|e| format!("{hi:?}: {e}"))?;
        let count: usize = count.parse().map_err(|e| format!("{count:?}: {e}"))?;
        if !(lo > 0.0 && hi >= lo) || count < 1 || (count == 1 && hi != lo) {
            return Err(format!("log grid needs 0 < lo <= hi and count >= 1 (count 1 only when lo == hi), got {s:?}"));
        }
        let step = if count > 1 { (hi / lo).ln() / (count - 1) as f64 } else { 0.0 };
        let mut v: Vec<f64> = (0..count).map(|i| (lo.ln() + step * i as f64).exp()).collect();
        // Pin the endpoints exactly.
        v[0] = lo;
        v[count - 1] = hi;
        return Ok(PGrid::List(v));
    }
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}")))
        .collect::<Result<Vec<_>, _>>()
        .map(PGrid::List)
}

/// Flags shared by every subcommand; also the schema of the config file.
#[derive(Debug, Clone, Default, PartialEq, Args, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct Params {
    /// Config-file format version.
    #[arg(skip)]
    pub version: Option<u32>,
    /// Base seed for every random stream [default: 1729]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads [default: all cores]
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Link decoding model: analytic or exact_sir
    #[arg(long, global = true, value_parser = parse_named::<ChannelMode>)]
    pub mode: Option<ChannelMode>,
    /// SIR threshold, linear [default: 1]
    #[arg(long, global = true, conflicts_with = "theta_db")]
    pub theta: Option<f64>,
    /// SIR threshold in dB
    #[arg(long, global = true)]
    pub theta_db: Option<f64>,
    /// Path-loss exponent [default: 4]
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    /// PPP intensity (nodes per unit area)
    #[arg(long, global = true, conflicts_with = "n")]
    pub lambda: Option<f64>,
    /// Fixed node count, uniform in the window [default: 200]
    #[arg(long, global = true)]
    pub n: Option<usize>,
    /// Window side length [default: 100]
    #[arg(long, global = true)]
    pub side: Option<f64>,
    /// Communication range R [default: 10]
    #[arg(long, global = true)]
    pub range: Option<f64>,
    /// Window boundary: open or torus
    #[arg(long, global = true, value_parser = parse_named::<BoundaryMode>)]
    pub boundary: Option<BoundaryMode>,
    /// Slots per trajectory [default: 400]
    #[arg(long, global = true)]
    pub horizon: Option<usize>,
    /// Runs per grid point [default: 50]
    #[arg(long, global = true)]
    pub runs: Option<usize>,
    /// Access probabilities: "0.01,0.1,0.3" or "log:lo:hi:count"
    #[arg(long, global = true, value_parser = parse_grid)]
    pub p_grid: Option<PGrid>,
    /// Deployment per run: fresh or fixed
    #[arg(long, global = true, value_parser = parse_named::<GeometryPolicy>)]
    pub geometry: Option<GeometryPolicy>,
    /// Where r_eff replaces R in the p* prediction: both or b_only
    #[arg(long, global = true, value_parser = parse_named::<ReffSubstitution>)]
    pub r_eff: Option<ReffSubstitution>,
    /// match_then_decode or decode_then_match
    #[arg(long, global = true, value_parser = parse_named::<DecodeOrder>)]
    pub decode_order: Option<DecodeOrder>,
}

impl Params {
    pub fn from_file(path: &Path) -> Result<Self, SettingsError> {
        let shown = path.display().to_string();
        let text = fs::read_to_string(path).map_err(|e| SettingsError::Read(shown.clone(), e))?;
        let params: Params = toml::from_str(&text).map_err(|e| SettingsError::Parse(shown.clone(), e.to_string()))?;
        if let Some(v) = params.version {
            if v != CONFIG_VERSION {
                return Err(SettingsError::Parse(shown, format!("unsupported version {v}, expected {CONFIG_VERSION}")));
            }
        }
        if params.theta.is_some() && params.theta_db.is_some() {
            return Err(SettingsError::Parse(shown, "theta and theta-db are mutually exclusive".into()));
        }
        if params.lambda.is_some() && params.n.is_some() {
            return Err(SettingsError::Parse(shown, "lambda and n are mutually exclusive".into()));
        }
        Ok(params)
    }

    /// Fills every field unset in `self` from `base`. Mutually exclusive
    /// pairs are treated as one setting.
    pub fn over(self, base: Params) -> Params {
        let theta_set = self.theta.is_some() || self.theta_db.is_some();
        let pop_set = self.lambda.is_some() || self.n.is_some();
        Params {
            version: self.version.or(base.version),
            seed: self.seed.or(base.seed),
            threads: self.threads.or(base.threads),
            mode: self.mode.or(base.mode),
            theta: if theta_set { self.theta } else { base.theta },
            theta_db: if theta_set { self.theta_db } else { base.theta_db },
            alpha: self.alpha.or(base.alpha),
            lambda: if pop_set { self.lambda } else { base.lambda },
            n: if pop_set { self.n } else { base.n },
            side: self.side.or(base.side),
            range: self.range.or(base.range),
            boundary: self.boundary.or(base.boundary),
            horizon: self.horizon.or(base.horizon),
            runs: self.runs.or(base.runs),
            p_grid: self.p_grid.or(base.p_grid),
            geometry: self.geometry.or(base.geometry),
            r_eff: self.r_eff.or(base.r_eff),
            decode_order: self.decode_order.or(base.decode_order),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    pub fn theta_linear(&self) -> f64 {
        match (self.theta, self.theta_db) {
            (Some(t), _) => t,
            (None, Some(db)) => db_to_linear(db),
            (None, None) => 1.0,
        }
    }

    pub fn population(&self) -> Population {
        match (self.lambda, self.n) {
            (Some(lambda), _) => Population::Ppp { lambda },
            (None, Some(n)) => Population::Binomial { n },
            (None, None) => Population::Binomial { n: 200 },
        }
    }

    pub fn deployment(&self) -> DeploymentSpec {
        DeploymentSpec {
            population: self.population(),
            side: self.side.unwrap_or(100.0),
            range: self.range.unwrap_or(10.0),
            boundary: self.boundary.unwrap_or_default(),
        }
    }

    pub fn channel(&self) -> ChannelSpec {
        ChannelSpec {
            theta: self.theta_linear(),
            alpha: self.alpha.unwrap_or(4.0),
            mode: self.mode.unwrap_or_default(),
        }
    }

    pub fn p_grid(&self) -> Result<Vec<f64>, SettingsError> {
        match &self.p_grid {
            Some(g) => g.values().map_err(|e| SettingsError::Invalid(format!("--p-grid: {e}"))),
            None => PGrid::Spec("log:0.005:0.6:16".into())
                .values()
                .map_err(SettingsError::Invalid),
        }
    }

    pub fn sweep_config(&self) -> Result<SweepConfig, SettingsError> {
        Ok(SweepConfig {
            deployment: self.deployment(),
            channel: self.channel(),
            p_grid: self.p_grid()?,
            horizon: self.horizon.unwrap_or(400),
            runs_per_p: self.runs.unwrap_or(50),
            base_seed: self.seed(),
            geometry: self.geometry.unwrap_or_default(),
            r_eff_substitution: self.r_eff.unwrap_or_default(),
            decode_order: self.decode_order.unwrap_or_default(),
        })
    }
}

/// Loads `path` (if any) and overlays `flags`.
pub fn resolve(flags: Params, path: Option<&Path>) -> Result<Params, SettingsError> {
    let file = match path {
        Some(p) => Params::from_file(p)?,
        None => Params::default(),
    };
    Ok(flags.over(file))
}
