//! Average-preserving pairwise gossip.
//!
//! Every successful exchange `(i, j)` replaces both states by their mean.
//! A slot's exchanges form a matching, so the update is `x <- W x` with
//! `W = I - ½ Σ (e_i - e_j)(e_i - e_j)ᵀ`, which is symmetric, doubly
//! stochastic and idempotent.

use std::io::Write;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelParams;
use crate::error::{Error, Result};
use crate::geometry::Deployment;
use crate::mac::{ChannelMode, DecodeOrder, Pair, SlotOutcome, SlotSimulator};

fn check_matching(matching: &[Pair], n: usize) -> Result<()> {
    let mut used = vec![false; n];
    for &(i, j) in matching {
        if i >= n || j >= n {
            return Err(Error::Contract(format!("pair ({i}, {j}) out of range for {n} nodes")));
        }
        if i == j || std::mem::replace(&mut used[i], true) || std::mem::replace(&mut used[j], true) {
            return Err(Error::Contract(format!("pair ({i}, {j}) overlaps another pair")));
        }
    }
    Ok(())
}

/// Averages each matched pair in place. Pairs must be node-disjoint.
pub fn apply_matching(x: &mut [f64], matching: &[Pair]) -> Result<()> {
    check_matching(matching, x.len())?;
    for &(i, j) in matching {
        let avg = 0.5 * (x[i] + x[j]);
        x[i] = avg;
        x[j] = avg;
    }
    Ok(())
}

/// The dense `n x n` update matrix of a matching.
pub fn update_matrix(matching: &[Pair], n: usize) -> Result<DMatrix<f64>> {
    check_matching(matching, n)?;
    let mut w = DMatrix::identity(n, n);
    for &(i, j) in matching {
        w[(i, i)] = 0.5;
        w[(j, j)] = 0.5;
        w[(i, j)] = 0.5;
        w[(j, i)] = 0.5;
    }
    Ok(w)
}

/// `‖x - mean(x)·1‖²`.
pub fn disagreement_energy(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| (v - mean) * (v - mean)).sum()
}

/// Node states at a given slot.
#[derive(Debug, Clone, PartialEq)]
pub struct GossipState {
    pub x: Vec<f64>,
    pub slot: u64,
}

/// How `x(0)` is produced.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialState {
    Given(Vec<f64>),
    /// i.i.d. uniform on `[0, 1]`.
    UniformUnit,
}

impl InitialState {
    pub fn realize<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<f64>> {
        match self {
            Self::Given(x) if x.len() == n => Ok(x.clone()),
            Self::Given(x) => Err(Error::Contract(format!(
                "initial state has {} entries for {n} nodes",
                x.len()
            ))),
            Self::UniformUnit => Ok((0..n).map(|_| rng.random::<f64>()).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// `V(0), V(1), ..., V(T)`.
    pub v_series: Vec<f64>,
    pub epsilon_t: f64,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.v_series.len() - 1
    }

    /// `slot,V` rows for `t = 0..=T`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "slot,V")?;
        for (t, v) in self.v_series.iter().enumerate() {
            writeln!(w, "{t},{v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryConfig {
    pub mode: ChannelMode,
    pub order: DecodeOrder,
    pub horizon: usize,
    /// Verify slot invariants, mean conservation and monotone `V` every slot.
    pub check_invariants: bool,
}

impl TrajectoryConfig {
    pub fn new(mode: ChannelMode, horizon: usize) -> Self {
        Self {
            mode,
            order: DecodeOrder::default(),
            horizon,
            check_invariants: true,
        }
    }
}

/// Relative tolerance for mean conservation and monotone disagreement.
pub const CONSERVATION_TOL: f64 = 1e-12;

/// Runs `horizon` slots, executing only successful exchanges, and records `V(t)`.
pub fn run_trajectory<R: Rng + ?Sized>(
    deployment: &Deployment,
    params: &ChannelParams,
    mode: ChannelMode,
    horizon: usize,
    init: &InitialState,
    rng: &mut R,
) -> Result<Trajectory> {
    run_trajectory_with(deployment, params, &TrajectoryConfig::new(mode, horizon), init, rng, |_, _| {})
}

/// [`run_trajectory`] with full configuration and a per-slot observer.
pub fn run_trajectory_with<R, F>(
    deployment: &Deployment,
    params: &ChannelParams,
    config: &TrajectoryConfig,
    init: &InitialState,
    rng: &mut R,
    mut on_slot: F,
) -> Result<Trajectory>
where
    R: Rng + ?Sized,
    F: FnMut(u64, &SlotOutcome),
{
    if config.horizon < 1 {
        return Err(Error::Parameter {
            name: "horizon",
            value: 0.0,
            constraint: "must be >= 1",
        });
    }
    let n = deployment.len();
    let mut state = GossipState {
        x: init.realize(n, rng)?,
        slot: 0,
    };
    let v0 = disagreement_energy(&state.x);
    if v0 == 0.0 {
        return Err(Error::DegenerateStart);
    }
    let mean0 = state.x.iter().sum::<f64>() / n as f64;
    let scale = state.x.iter().fold(0.0f64, |m, v| m.max(v.abs()));

    let mut sim = SlotSimulator::new(deployment, *params, config.mode, config.order)?;
    let mut v_series = Vec::with_capacity(config.horizon + 1);
    v_series.push(v0);
    for _ in 0..config.horizon {
        let slot = sim.step(rng);
        if config.check_invariants {
            slot.check(deployment)?;
        }
        apply_matching(&mut state.x, &slot.successes)?;
        on_slot(state.slot, &slot);
        state.slot += 1;

        let v = disagreement_energy(&state.x);
        if config.check_invariants {
            let prev = *v_series.last().expect("non-empty");
            if v > prev + CONSERVATION_TOL * v0 {
                return Err(Error::Invariant(format!(
                    "disagreement rose from {prev} to {v} at slot {}",
                    state.slot
                )));
            }
            let mean = state.x.iter().sum::<f64>() / n as f64;
            if (mean - mean0).abs() > CONSERVATION_TOL * scale {
                return Err(Error::Invariant(format!(
                    "mean drifted from {mean0} to {mean} at slot {}",
                    state.slot
                )));
            }
        }
        v_series.push(v);
    }
    let epsilon_t = v_series[config.horizon] / v0;
    Ok(Trajectory { v_series, epsilon_t })
}
