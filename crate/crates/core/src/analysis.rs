//! Closed-form design rules and the mixing-rate estimator.
//!
//! * `q_lb(p) = (1 - p)(1 - e^{-lambda p π R²}) e^{-lambda p K(R)}` lower-bounds
//!   the per-slot probability that a typical node completes an exchange.
//! * With `a = lambda π R²` and `b = lambda K(R)`, the proxy
//!   `q̃(p) = (1 - e^{-a p}) e^{-b p}` peaks at `p* = min(1, ln((a + b)/b)/a)`.
//! * `rho = λ_max(E[Wᵀ Π W])` on the complement of the all-ones vector
//!   measures ideal mixing; `gamma = 1 - rho`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{spatial_contention, ChannelParams};
use crate::error::{ensure, Error, Result};
use crate::geometry::Deployment;
use crate::mac::{ChannelMode, DecodeOrder, Pair, SlotSimulator};
use crate::rng::{substream, tag};

/// Lower bound on the per-slot exchange probability of a typical node.
pub fn q_lower_bound(p: f64, lambda: f64, range: f64, theta: f64, alpha: f64) -> Result<f64> {
    ensure((0.0..=1.0).contains(&p), "p", p, "must lie in [0, 1]")?;
    ensure(lambda.is_finite() && lambda > 0.0, "lambda", lambda, "must be finite and > 0")?;
    ensure(range.is_finite() && range > 0.0, "range", range, "must be finite and > 0")?;
    let k = spatial_contention(range, theta, alpha)?;
    let listen = 1.0 - p;
    let some_neighbor_sends = -(-lambda * p * PI * range * range).exp_m1();
    let decodes_at_edge = (-lambda * p * k).exp();
    Ok(listen * some_neighbor_sends * decodes_at_edge)
}

/// Availability (`a`) and reliability (`b`) rates of the access proxy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProxyCoefficients {
    pub a: f64,
    pub b: f64,
}

impl ProxyCoefficients {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        ensure(a.is_finite() && a > 0.0, "a", a, "must be finite and > 0")?;
        ensure(b.is_finite() && b > 0.0, "b", b, "must be finite and > 0")?;
        Ok(Self { a, b })
    }

    /// `q̃(p) = (1 - e^{-a p}) e^{-b p}`.
    pub fn proxy(&self, p: f64) -> f64 {
        -(-self.a * p).exp_m1() * (-self.b * p).exp()
    }

    /// The stationary point of the proxy before clamping to `[0, 1]`.
    pub fn unclamped_optimum(&self) -> f64 {
        (self.a / self.b).ln_1p() / self.a
    }
}

/// `a = lambda π R²`, `b = lambda K(R)`.
pub fn ab_coefficients(lambda: f64, range: f64, theta: f64, alpha: f64) -> Result<ProxyCoefficients> {
    ensure(lambda.is_finite() && lambda > 0.0, "lambda", lambda, "must be finite and > 0")?;
    ensure(range.is_finite() && range > 0.0, "range", range, "must be finite and > 0")?;
    ProxyCoefficients::new(lambda * PI * range * range, lambda * spatial_contention(range, theta, alpha)?)
}

/// Maximizer of the proxy on `[0, 1]`.
pub fn optimal_access(coeffs: &ProxyCoefficients) -> f64 {
    coeffs.unclamped_optimum().min(1.0)
}

/// Dense-neighborhood approximation `min(1, 1/b)`.
pub fn optimal_access_dense(b: f64) -> Result<f64> {
    ensure(b.is_finite() && b > 0.0, "b", b, "must be finite and > 0")?;
    Ok((1.0 / b).min(1.0))
}

/// Upper bounds on the epsilon-consensus time, in slots.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsensusTimeBounds {
    /// `ln(V0/eps) / -ln(1 - gamma q)`.
    pub log_rate: f64,
    /// `ln(V0/eps) / (gamma q)`; never smaller than `log_rate`.
    pub linearized: f64,
}

pub fn consensus_time_bound(gamma: f64, q: f64, v0: f64, eps: f64) -> Result<ConsensusTimeBounds> {
    let rate = gamma * q;
    ensure(rate > 0.0 && rate < 1.0, "gamma*q", rate, "must lie in (0, 1)")?;
    ensure(eps > 0.0, "eps", eps, "must be > 0")?;
    ensure(v0 > eps, "v0", v0, "must exceed eps")?;
    let decades = (v0 / eps).ln();
    Ok(ConsensusTimeBounds {
        log_rate: decades / -(-rate).ln_1p(),
        linearized: decades / rate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContractionEstimate {
    pub rho: f64,
    pub gamma: f64,
    pub samples: usize,
    /// Delta-method standard error of `rho`.
    pub stderr: f64,
}

impl ContractionEstimate {
    /// `gamma - k * stderr`, floored at zero.
    pub fn conservative_gamma(&self, k: f64) -> f64 {
        (self.gamma - k * self.stderr).max(0.0)
    }
}

/// Weighted mean of `Wᵀ Π W` over a distribution of matchings.
///
/// For a matching `W` is symmetric, idempotent and doubly stochastic, so
/// `Wᵀ Π W = W - 11ᵀ/n`; only the mean of `W` is stored.
#[derive(Debug, Clone)]
pub struct SecondMoment {
    n: usize,
    sum_w: DMatrix<f64>,
    total_weight: f64,
}

impl SecondMoment {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            sum_w: DMatrix::zeros(n, n),
            total_weight: 0.0,
        }
    }

    pub fn add(&mut self, matching: &[Pair], weight: f64) {
        for d in 0..self.n {
            self.sum_w[(d, d)] += weight;
        }
        for &(i, j) in matching {
            let h = 0.5 * weight;
            self.sum_w[(i, i)] -= h;
            self.sum_w[(j, j)] -= h;
            self.sum_w[(i, j)] += h;
            self.sum_w[(j, i)] += h;
        }
        self.total_weight += weight;
    }

    /// The mean of `Wᵀ Π W`.
    pub fn mean(&self) -> DMatrix<f64> {
        let n = self.n as f64;
        self.sum_w.map(|v| v / self.total_weight - 1.0 / n)
    }

    /// Largest eigenvalue on the complement of `1` and its unit eigenvector.
    pub fn top_eigenpair(&self) -> (f64, DVector<f64>) {
        let n = self.n;
        let projector = DMatrix::identity(n, n) - DMatrix::from_element(n, n, 1.0 / n as f64);
        let m = &projector * self.mean() * &projector;
        let sym = 0.5 * (&m + m.transpose());
        let eig = SymmetricEigen::new(sym);
        let (idx, &val) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("n >= 1");
        let mut v: DVector<f64> = eig.eigenvectors.column(idx).into_owned();
        let shift = v.mean();
        v.add_scalar_mut(-shift);
        let norm = v.norm();
        if norm > 0.0 {
            v /= norm;
        }
        (val.clamp(0.0, 1.0), v)
    }

    pub fn rho(&self) -> f64 {
        self.top_eigenpair().0
    }
}

const RHO_BLOCK: usize = 256;

/// Estimates `rho` from `samples` i.i.d. matchings of the ideal slot process,
/// in which every matched exchange succeeds.
pub fn estimate_rho<R: Rng + ?Sized>(
    deployment: &Deployment,
    params: &ChannelParams,
    samples: usize,
    rng: &mut R,
) -> Result<ContractionEstimate> {
    ensure(samples >= 1, "samples", samples as f64, "need at least one sample")?;
    let n = deployment.len();
    if n < 2 {
        return Err(Error::Parameter {
            name: "n",
            value: n as f64,
            constraint: "need at least 2 nodes",
        });
    }
    let seed: u64 = rng.random();
    let blocks = samples.div_ceil(RHO_BLOCK);
    let matchings: Vec<Vec<Pair>> = (0..blocks)
        .into_par_iter()
        .map(|b| -> Result<Vec<Vec<Pair>>> {
            let mut rng = substream(seed, &[tag::RHO, b as u64]);
            let mut sim = SlotSimulator::new(deployment, *params, ChannelMode::Analytic, DecodeOrder::default())?;
            let len = RHO_BLOCK.min(samples - b * RHO_BLOCK);
            Ok((0..len).map(|_| sim.ideal_slot(&mut rng).matching).collect())
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();

    let mut moment = SecondMoment::new(n);
    for m in &matchings {
        moment.add(m, 1.0);
    }
    let (rho, v) = moment.top_eigenpair();

    // Delta method: d(lambda_max) ≈ vᵀ dM v, and vᵀ (W - 11ᵀ/n) v = 1 - ½ Σ (v_i - v_j)².
    let ys: Vec<f64> = matchings
        .iter()
        .map(|m| 1.0 - 0.5 * m.iter().map(|&(i, j)| (v[i] - v[j]).powi(2)).sum::<f64>())
        .collect();
    let stderr = if samples > 1 {
        let mean = ys.iter().sum::<f64>() / samples as f64;
        let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (samples - 1) as f64;
        (var / samples as f64).sqrt()
    } else {
        0.0
    };
    Ok(ContractionEstimate {
        rho,
        gamma: 1.0 - rho,
        samples,
        stderr,
    })
}
