//! Interference-limited link layer.
//!
//! Path loss is `r^-alpha`, fading power gains are i.i.d. `Exp(1)` (Rayleigh),
//! and a packet decodes iff its SIR exceeds the linear threshold `theta`.
//! There is no noise term. Under a Poisson field of Aloha transmitters the
//! success probability over distance `r` is `exp(-lambda p K(r))` with
//! `K(r) = pi r² theta^(2/alpha) C(alpha)`.
//!
//! [`monte_carlo_success`] estimates the same probability by direct
//! simulation and never evaluates `C(alpha)`.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Exp1, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{ensure, param, Error, Result};
use crate::geometry::{Point, Window};
use crate::rng::{substream, tag};

/// Physical-layer and access parameters shared by every link in a slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    alpha: f64,
    theta: f64,
    lambda: f64,
    access_p: f64,
}

impl ChannelParams {
    pub fn new(alpha: f64, theta: f64, lambda: f64, access_p: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 2.0) {
            return Err(Error::DivergentInterference(alpha));
        }
        ensure(theta.is_finite() && theta > 0.0, "theta", theta, "must be finite and > 0")?;
        ensure(lambda.is_finite() && lambda > 0.0, "lambda", lambda, "must be finite and > 0")?;
        ensure((0.0..=1.0).contains(&access_p), "access_p", access_p, "must lie in [0, 1]")?;
        Ok(Self {
            alpha,
            theta,
            lambda,
            access_p,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn access_p(&self) -> f64 {
        self.access_p
    }

    pub fn with_access_p(&self, access_p: f64) -> Result<Self> {
        Self::new(self.alpha, self.theta, self.lambda, access_p)
    }

    /// Intensity of the active-transmitter process.
    pub fn active_intensity(&self) -> f64 {
        self.lambda * self.access_p
    }
}

/// Converts a threshold in dB to linear scale.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// A Rayleigh power gain: unit-mean exponential.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
#[repr(transparent)]
pub struct FadingDraw(f64);

impl FadingDraw {
    pub fn new(gain: f64) -> Result<Self> {
        ensure(gain >= 0.0, "gain", gain, "fading gain must be >= 0").map(Self)
    }

    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self(Exp1.sample(rng))
    }

    pub fn gain(self) -> f64 {
        self.0
    }
}

/// `C(alpha) = Γ(1 + 2/alpha) Γ(1 - 2/alpha)`.
pub fn interference_constant(alpha: f64) -> Result<f64> {
    if !(alpha.is_finite() && alpha > 2.0) {
        return Err(Error::DivergentInterference(alpha));
    }
    let d = 2.0 / alpha;
    Ok(gamma(1.0 + d) * gamma(1.0 - d))
}

/// The reflection-formula form of [`interference_constant`]: `(2π/alpha) csc(2π/alpha)`.
pub fn interference_constant_csc(alpha: f64) -> Result<f64> {
    if !(alpha.is_finite() && alpha > 2.0) {
        return Err(Error::DivergentInterference(alpha));
    }
    let x = 2.0 * PI / alpha;
    Ok(x / x.sin())
}

/// `K(r) = π r² theta^(2/alpha) C(alpha)`, the interference-scaled area of a link.
pub fn spatial_contention(r: f64, theta: f64, alpha: f64) -> Result<f64> {
    ensure(r >= 0.0, "r", r, "distance must be >= 0")?;
    ensure(theta.is_finite() && theta > 0.0, "theta", theta, "must be finite and > 0")?;
    Ok(PI * r * r * theta.powf(2.0 / alpha) * interference_constant(alpha)?)
}

/// Probability that a link of length `r` decodes: `exp(-lambda p K(r))`.
pub fn closed_form_success(params: &ChannelParams, r: f64) -> Result<f64> {
    let k = spatial_contention(r, params.theta, params.alpha)?;
    Ok((-params.active_intensity() * k).exp())
}

/// Path gain `d^-alpha` from a squared distance.
#[inline]
pub(crate) fn path_gain(dist_sq: f64, alpha: f64) -> f64 {
    if alpha == 4.0 {
        1.0 / (dist_sq * dist_sq)
    } else {
        dist_sq.powf(-0.5 * alpha)
    }
}

/// SIR at `receiver` for transmitter `tx_index` against every other entry of
/// `tx_positions`, each weighted by its own fading gain.
///
/// The receiver must not itself be transmitting. A zero-length desired link or
/// an empty interference sum yields `+inf`.
pub fn sir_exact(
    receiver: Point,
    tx_index: usize,
    tx_positions: &[Point],
    gains: &[FadingDraw],
    alpha: f64,
    window: &Window,
) -> Result<f64> {
    if tx_positions.len() != gains.len() {
        return Err(Error::Contract(format!(
            "{} transmitters but {} fading gains",
            tx_positions.len(),
            gains.len()
        )));
    }
    if tx_index >= tx_positions.len() {
        return Err(Error::Contract(format!(
            "tx_index {tx_index} out of range for {} transmitters",
            tx_positions.len()
        )));
    }
    let desired_sq = window.distance_sq(receiver, tx_positions[tx_index]);
    if desired_sq == 0.0 {
        return Ok(f64::INFINITY);
    }
    let signal = gains[tx_index].gain() * path_gain(desired_sq, alpha);
    let interference: f64 = tx_positions
        .iter()
        .zip(gains)
        .enumerate()
        .filter(|(k, _)| *k != tx_index)
        .map(|(_, (&pos, g))| {
            let d_sq = window.distance_sq(receiver, pos);
            if d_sq == 0.0 {
                f64::INFINITY
            } else {
                g.gain() * path_gain(d_sq, alpha)
            }
        })
        .sum();
    if interference == 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(signal / interference)
    }
}

/// Monte-Carlo estimate of a probability with a 95% Wilson interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuccessEstimate {
    pub point_estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub trials: u64,
    pub successes: u64,
}

impl SuccessEstimate {
    pub fn from_counts(successes: u64, trials: u64) -> Self {
        const Z95: f64 = 1.959_963_984_540_054;
        let n = trials as f64;
        let phat = successes as f64 / n;
        let z2 = Z95 * Z95;
        let denom = 1.0 + z2 / n;
        let center = (phat + z2 / (2.0 * n)) / denom;
        let half = Z95 * (phat * (1.0 - phat) / n + z2 / (4.0 * n * n)).sqrt() / denom;
        Self {
            point_estimate: phat,
            ci_low: (center - half).clamp(0.0, phat),
            ci_high: (center + half).clamp(phat, 1.0),
            trials,
            successes,
        }
    }

    /// Binomial standard error under the reference probability.
    pub fn reference_stderr(&self, reference: f64) -> f64 {
        (reference * (1.0 - reference) / self.trials as f64).sqrt()
    }

    /// `(estimate - reference) / reference_stderr`.
    pub fn z_score(&self, reference: f64) -> f64 {
        let diff = self.point_estimate - reference;
        let se = self.reference_stderr(reference);
        if se > 0.0 {
            diff / se
        } else if diff == 0.0 {
            0.0
        } else {
            diff.signum() * f64::INFINITY
        }
    }
}

/// How interferers outside the simulation window are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FarField {
    /// Only interferers inside the window exist.
    Truncated,
    /// Interferers beyond the window are added by exact Poisson thinning (see below).
    #[default]
    Completed,
}

const MC_BLOCK: u64 = 8192;

/// Simulates a receiver at the window centre decoding a transmitter at
/// distance `r` against a fresh Poisson field of intensity `lambda p` with
/// i.i.d. `Exp(1)` gains, and reports the fraction of successful trials.
///
/// In [`FarField::Completed`] mode the plane outside the window is covered
/// too. Because the desired gain is exponential, success is the intersection
/// of "the desired gain beats in-window interference" and, independently,
/// "no out-of-window interferer kills the link", where an interferer at
/// distance `d` kills with probability `s d^-a / (1 + s d^-a)`, `s = theta r^a`.
/// The killers form a thinned Poisson process of finite mass, which is
/// sampled exactly by dominating with intensity `lambda p min(1, s d^-a)`.
pub fn monte_carlo_success<R: Rng + ?Sized>(
    params: &ChannelParams,
    r: f64,
    window: &Window,
    far_field: FarField,
    trials: u64,
    rng: &mut R,
) -> Result<SuccessEstimate> {
    ensure(trials >= 1, "trials", trials as f64, "need at least one trial")?;
    ensure(r.is_finite() && r >= 0.0, "r", r, "distance must be finite and >= 0")?;
    let seed: u64 = rng.random();
    let trial = TrialSampler::new(params, r, window, far_field)?;

    let blocks = trials.div_ceil(MC_BLOCK);
    let successes: u64 = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = substream(seed, &[tag::CHANNEL_MC, b]);
            let len = MC_BLOCK.min(trials - b * MC_BLOCK);
            (0..len).filter(|_| trial.run(&mut rng)).count() as u64
        })
        .sum();
    Ok(SuccessEstimate::from_counts(successes, trials))
}

struct TrialSampler {
    window: Window,
    center: Point,
    alpha: f64,
    /// `r^-alpha / theta`; success iff `h0 * budget_scale > interference`.
    budget_scale: f64,
    in_window: Option<Poisson<f64>>,
    far: Option<FarKillers>,
}

impl TrialSampler {
    fn new(params: &ChannelParams, r: f64, window: &Window, far_field: FarField) -> Result<Self> {
        let mu = params.active_intensity();
        let in_mean = mu * window.area();
        let in_window = if in_mean > 0.0 {
            Some(Poisson::new(in_mean).map_err(|_| param("lambda", params.lambda, "invalid interferer mean"))?)
        } else {
            None
        };
        let far = match far_field {
            FarField::Completed if mu > 0.0 && r > 0.0 => {
                FarKillers::new(mu, params.theta * r.powf(params.alpha), params.alpha, window.side_length())?
            }
            _ => None,
        };
        Ok(Self {
            window: *window,
            center: window.center(),
            alpha: params.alpha,
            budget_scale: if r > 0.0 { r.powf(-params.alpha) / params.theta } else { f64::INFINITY },
            in_window,
            far,
        })
    }

    fn run<R: Rng + ?Sized>(&self, rng: &mut R) -> bool {
        if self.budget_scale.is_infinite() {
            return true;
        }
        if let Some(far) = &self.far {
            if far.any_kill(rng) {
                return false;
            }
        }
        let h0: f64 = Exp1.sample(rng);
        let budget = h0 * self.budget_scale;
        let Some(count) = &self.in_window else {
            return budget > 0.0;
        };
        let count = count.sample(rng) as u64;
        let side = self.window.side_length();
        let mut interference = 0.0;
        for _ in 0..count {
            let p = Point::new(rng.random::<f64>() * side, rng.random::<f64>() * side);
            let d_sq = self.window.distance_sq(self.center, p);
            let h: f64 = Exp1.sample(rng);
            interference += if d_sq == 0.0 { f64::INFINITY } else { h * path_gain(d_sq, self.alpha) };
            if interference >= budget {
                return false;
            }
        }
        interference < budget
    }
}

/// Out-of-window killers for a receiver centred in a square of side `side`.
struct FarKillers {
    s: f64,
    alpha: f64,
    half_side: f64,
    /// Inner radius of the sampled region (the inscribed circle).
    rho0: f64,
    /// Radius beyond which `s d^-alpha <= 1`.
    rho1: f64,
    flat_mass: f64,
    total_mass: f64,
    count: Poisson<f64>,
}

impl FarKillers {
    fn new(mu: f64, s: f64, alpha: f64, side: f64) -> Result<Option<Self>> {
        let rho0 = 0.5 * side;
        let rho1 = rho0.max(s.powf(1.0 / alpha));
        let flat_mass = mu * PI * (rho1 * rho1 - rho0 * rho0);
        let tail_mass = mu * 2.0 * PI * s * rho1.powf(2.0 - alpha) / (alpha - 2.0);
        let total = flat_mass + tail_mass;
        if total <= 0.0 {
            return Ok(None);
        }
        let count = Poisson::new(total).map_err(|_| param("alpha", alpha, "far-field mass is not finite"))?;
        Ok(Some(Self {
            s,
            alpha,
            half_side: rho0,
            rho0,
            rho1,
            flat_mass,
            total_mass: total,
            count,
        }))
    }

    fn any_kill<R: Rng + ?Sized>(&self, rng: &mut R) -> bool {
        let total = self.total_mass;
        let n = self.count.sample(rng) as u64;
        for _ in 0..n {
            let d = if rng.random::<f64>() * total < self.flat_mass {
                let (a, b) = (self.rho0 * self.rho0, self.rho1 * self.rho1);
                (a + rng.random::<f64>() * (b - a)).sqrt()
            } else {
                // Density proportional to d^(1 - alpha) on [rho1, inf).
                let u: f64 = 1.0 - rng.random::<f64>();
                self.rho1 * u.powf(-1.0 / (self.alpha - 2.0))
            };
            let phi = rng.random::<f64>() * 2.0 * PI;
            let (sin, cos) = phi.sin_cos();
            if (d * cos).abs() <= self.half_side && (d * sin).abs() <= self.half_side {
                // Inside the window, already simulated explicitly.
                continue;
            }
            let load = self.s * d.powf(-self.alpha);
            let kill = load / (1.0 + load);
            let dominating = load.min(1.0);
            if rng.random::<f64>() * dominating < kill {
                return true;
            }
        }
        false
    }
}
