//! Slotted-Aloha access and per-slot exchange resolution.
//!
//! A slot runs: Aloha thinning -> each listener picks one transmitting
//! neighbor -> candidates are shuffled and accepted greedily into a matching
//! -> each matched link is decoded. Successful pairs are the exchanges the
//! gossip layer executes.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{interference_constant, sir_exact, ChannelParams, FadingDraw};
use crate::error::{ensure, Error, Result};
use crate::geometry::{Deployment, Point};

/// An unordered exchange, stored as `(listener, transmitter)`.
pub type Pair = (usize, usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelMode {
    /// Each link decodes with the closed-form probability at its true length.
    #[default]
    Analytic,
    /// Each link decodes iff its simulated SIR against all other transmitters exceeds theta.
    ExactSir,
}

/// Whether decoding happens after or before the matching constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeOrder {
    /// Match all candidates, then decode the matched links.
    #[default]
    MatchThenDecode,
    /// Decode every candidate, then match only the survivors.
    DecodeThenMatch,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SlotOutcome {
    pub transmitters: Vec<usize>,
    pub candidates: Vec<Pair>,
    pub matching: Vec<Pair>,
    pub successes: Vec<Pair>,
}

impl SlotOutcome {
    /// Checks half-duplex, disjointness, range and `successes ⊆ matching`.
    pub fn check(&self, deployment: &Deployment) -> Result<()> {
        let n = deployment.len();
        let mut is_tx = vec![false; n];
        for &t in &self.transmitters {
            is_tx[t] = true;
        }
        let mut listener_seen = vec![false; n];
        for &(l, t) in &self.candidates {
            if is_tx[l] {
                return Err(Error::Invariant(format!("node {l} both transmits and listens")));
            }
            if !is_tx[t] {
                return Err(Error::Invariant(format!("candidate transmitter {t} is silent")));
            }
            if std::mem::replace(&mut listener_seen[l], true) {
                return Err(Error::Invariant(format!("listener {l} has two candidates")));
            }
        }
        let mut used = vec![false; n];
        for &(l, t) in &self.matching {
            if std::mem::replace(&mut used[l], true) || std::mem::replace(&mut used[t], true) {
                return Err(Error::Invariant(format!("pair ({l}, {t}) overlaps another pair")));
            }
            if !is_tx[t] || is_tx[l] {
                return Err(Error::Invariant(format!("pair ({l}, {t}) breaks half-duplex")));
            }
            if deployment.neighbors(l).binary_search(&t).is_err() {
                return Err(Error::Invariant(format!("pair ({l}, {t}) is out of range")));
            }
        }
        if let Some(p) = self.successes.iter().find(|p| !self.matching.contains(p)) {
            return Err(Error::Invariant(format!("success {p:?} is not in the matching")));
        }
        Ok(())
    }

    /// Writes one JSON line: slot index, transmitters, matching, successes.
    pub fn write_jsonl<W: Write>(&self, mut w: W, slot: u64) -> Result<()> {
        #[derive(Serialize)]
        struct Line<'a> {
            slot: u64,
            transmitters: &'a [usize],
            matching: &'a [Pair],
            successes: &'a [Pair],
        }
        serde_json::to_writer(
            &mut w,
            &Line {
                slot,
                transmitters: &self.transmitters,
                matching: &self.matching,
                successes: &self.successes,
            },
        )?;
        writeln!(w)?;
        Ok(())
    }
}

/// Each of `n` nodes transmits independently with probability `access_p`.
/// Returns the transmitting indices in increasing order.
pub fn aloha_thinning<R: Rng + ?Sized>(n: usize, access_p: f64, rng: &mut R) -> Result<Vec<usize>> {
    ensure((0.0..=1.0).contains(&access_p), "access_p", access_p, "must lie in [0, 1]")?;
    Ok((0..n).filter(|_| rng.random_bool(access_p)).collect())
}

/// Uniform choice among the listener's transmitting neighbors.
pub fn select_candidate<R: Rng + ?Sized>(
    listener: usize,
    deployment: &Deployment,
    is_transmitter: &[bool],
    rng: &mut R,
) -> Option<usize> {
    let ns = deployment.neighbors(listener);
    let count = ns.iter().filter(|&&j| is_transmitter[j]).count();
    if count == 0 {
        return None;
    }
    let pick = rng.random_range(0..count);
    ns.iter().copied().filter(|&j| is_transmitter[j]).nth(pick)
}

/// Greedy matching over a uniformly shuffled candidate order: a pair is kept
/// iff neither endpoint is already matched.
///
/// Each listener may appear at most once among the candidates.
pub fn resolve_matching<R: Rng + ?Sized>(candidates: &[Pair], rng: &mut R) -> Result<Vec<Pair>> {
    let n = candidates.iter().map(|&(a, b)| a.max(b) + 1).max().unwrap_or(0);
    let mut listener_seen = vec![false; n];
    for &(l, _) in candidates {
        if std::mem::replace(&mut listener_seen[l], true) {
            return Err(Error::Contract(format!("listener {l} appears twice among candidates")));
        }
    }
    let mut order = candidates.to_vec();
    order.shuffle(rng);
    let mut matched = vec![false; n];
    Ok(order
        .into_iter()
        .filter(|&(l, t)| {
            if l == t || matched[l] || matched[t] {
                false
            } else {
                matched[l] = true;
                matched[t] = true;
                true
            }
        })
        .collect())
}

/// Per-slot simulator bound to one deployment and parameter set.
#[derive(Debug, Clone)]
pub struct SlotSimulator<'a> {
    deployment: &'a Deployment,
    params: ChannelParams,
    mode: ChannelMode,
    order: DecodeOrder,
    /// `π theta^(2/alpha) C(alpha)`, so `K(r) = contention_per_r2 * r²`.
    contention_per_r2: f64,
    is_tx: Vec<bool>,
    tx_positions: Vec<Point>,
    gains: Vec<FadingDraw>,
}

impl<'a> SlotSimulator<'a> {
    pub fn new(deployment: &'a Deployment, params: ChannelParams, mode: ChannelMode, order: DecodeOrder) -> Result<Self> {
        let contention_per_r2 =
            std::f64::consts::PI * params.theta().powf(2.0 / params.alpha()) * interference_constant(params.alpha())?;
        Ok(Self {
            deployment,
            params,
            mode,
            order,
            contention_per_r2,
            is_tx: vec![false; deployment.len()],
            tx_positions: Vec::new(),
            gains: Vec::new(),
        })
    }

    pub fn params(&self) -> &ChannelParams {
        &self.params
    }

    /// Transmitters, candidates and the matching, with every exchange
    /// assumed to decode.
    pub fn ideal_slot<R: Rng + ?Sized>(&mut self, rng: &mut R) -> SlotOutcome {
        let transmitters = aloha_thinning(self.deployment.len(), self.params.access_p(), rng)
            .expect("access_p validated by ChannelParams");
        self.is_tx.fill(false);
        for &t in &transmitters {
            self.is_tx[t] = true;
        }
        let candidates: Vec<Pair> = (0..self.deployment.len())
            .filter(|&i| !self.is_tx[i])
            .filter_map(|i| select_candidate(i, self.deployment, &self.is_tx, rng).map(|j| (i, j)))
            .collect();
        let matching = resolve_matching(&candidates, rng).expect("one candidate per listener");
        SlotOutcome {
            transmitters,
            successes: matching.clone(),
            candidates,
            matching,
        }
    }

    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> SlotOutcome {
        let mut slot = self.ideal_slot(rng);
        if self.mode == ChannelMode::ExactSir {
            self.tx_positions.clear();
            self.tx_positions
                .extend(slot.transmitters.iter().map(|&t| self.deployment.positions()[t]));
        }
        match self.order {
            DecodeOrder::MatchThenDecode => {
                slot.successes = slot
                    .matching
                    .iter()
                    .copied()
                    .filter(|&(l, t)| self.decodes(l, t, &slot.transmitters, rng))
                    .collect();
            }
            DecodeOrder::DecodeThenMatch => {
                let survivors: Vec<Pair> = slot
                    .candidates
                    .iter()
                    .copied()
                    .filter(|&(l, t)| self.decodes(l, t, &slot.transmitters, rng))
                    .collect();
                slot.matching = resolve_matching(&survivors, rng).expect("one candidate per listener");
                slot.successes = slot.matching.clone();
            }
        }
        slot
    }

    fn decodes<R: Rng + ?Sized>(&mut self, listener: usize, tx: usize, transmitters: &[usize], rng: &mut R) -> bool {
        match self.mode {
            ChannelMode::Analytic => {
                let r = self.deployment.distance(listener, tx);
                let p = (-self.params.active_intensity() * self.contention_per_r2 * r * r).exp();
                rng.random::<f64>() < p
            }
            ChannelMode::ExactSir => {
                self.gains.clear();
                self.gains.extend((0..transmitters.len()).map(|_| FadingDraw::sample(rng)));
                let idx = transmitters.binary_search(&tx).expect("candidate is transmitting");
                let sir = sir_exact(
                    self.deployment.positions()[listener],
                    idx,
                    &self.tx_positions,
                    &self.gains,
                    self.params.alpha(),
                    self.deployment.window(),
                )
                .expect("gains sized to transmitters");
                sir > self.params.theta()
            }
        }
    }
}

/// One slot with the default match-then-decode order.
pub fn simulate_slot<R: Rng + ?Sized>(
    deployment: &Deployment,
    params: &ChannelParams,
    mode: ChannelMode,
    rng: &mut R,
) -> Result<SlotOutcome> {
    Ok(SlotSimulator::new(deployment, *params, mode, DecodeOrder::default())?.step(rng))
}
