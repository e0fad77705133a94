//! Slot-level Monte-Carlo simulation of one node broadcasting to `M`
//! churning neighbors.
//!
//! Each slot: geometric deaths, Poisson arrivals up to capacity, one message
//! (full dump when `t mod N = 0`), per-neighbor reception, relevance sample,
//! then churn. Every concern draws from its own ChaCha stream so that
//! changing one parameter leaves the other draws untouched.

mod batch;
mod neighbor;
mod store;

pub use batch::{
    compare_strategies, search_by_simulation, BatchEvaluator, CompareOptions, ComparisonRow, PairStats, SimSearchResult,
};
pub use neighbor::{receive, NeighborState};
pub use store::{message_for_slot, Element, ElementStore, Message, MessageKind};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Exp, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ProtocolParams, ScenarioParams};
use crate::prob::{BitErrorLoss, LossModel};

/// z-value of the 95% normal confidence interval.
pub const Z95: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Total slots per run, warmup included.
    pub horizon: u64,
    /// Leading slots left out of the statistics.
    pub warmup: u64,
    pub runs: u32,
    pub seed: u64,
    /// Leave add+delete pairs out of cumulative differentials.
    pub cancel_transients: bool,
}

impl SimConfig {
    pub const DEFAULT_HORIZON: u64 = 1_000_000;
    pub const DEFAULT_RUNS: u32 = 20;

    /// Defaults: `10/μ` warmup slots, 10⁶ slot horizon, 20 runs.
    pub fn new(scenario: &ScenarioParams, seed: u64) -> Self {
        SimConfig {
            horizon: Self::DEFAULT_HORIZON,
            warmup: default_warmup(scenario.mu),
            runs: Self::DEFAULT_RUNS,
            seed,
            cancel_transients: true,
        }
    }

    /// `warmup` followed by `measured` counted slots.
    pub fn with_measured(scenario: &ScenarioParams, seed: u64, measured: u64, runs: u32) -> Self {
        let warmup = default_warmup(scenario.mu);
        SimConfig { horizon: warmup + measured, warmup, runs, seed, cancel_transients: true }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon <= self.warmup {
            return Err(Error::param("horizon", format!("must exceed warmup ({} <= {})", self.horizon, self.warmup)));
        }
        if self.runs == 0 {
            return Err(Error::param("runs", "must be at least 1"));
        }
        Ok(())
    }

    pub fn measured_slots(&self) -> u64 {
        self.horizon - self.warmup
    }
}

/// `⌈10/μ⌉` slots.
pub fn default_warmup(mu: f64) -> u64 {
    (10.0 / mu).ceil().min(1e12) as u64
}

/// Statistics of one run, over the post-warmup slots.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub run: u32,
    pub slots: u64,
    /// Elements sent per slot, copies included.
    pub volume: f64,
    /// Fraction of slots with every connected neighbor relevant.
    pub relevance: f64,
    pub mean_adds: f64,
    pub mean_dels: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub protocol: ProtocolParams,
    pub mean_volume: f64,
    pub mean_relevance: f64,
    pub volume_ci_halfwidth: f64,
    pub relevance_ci_halfwidth: f64,
    pub runs: u32,
    pub horizon: u64,
    pub warmup: u64,
    pub seed: u64,
    pub per_run: Vec<RunStats>,
}

/// Mean and 95% half-width, summed in run order.
pub(crate) fn mean_ci(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, Z95 * var.sqrt() / n.sqrt())
}

/// One slot as seen by the observer of [`simulate_run`]. The field set is a
/// debugging aid and not a stable format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotTrace {
    pub slot: u64,
    pub kind: MessageKind,
    pub size: u64,
    pub copies: u32,
    pub occupancy: u64,
    pub adds: u64,
    pub dels: u64,
    pub successes: Vec<bool>,
    pub all_relevant: bool,
}

pub(crate) struct Streams {
    pub deaths: ChaCha8Rng,
    pub arrivals: ChaCha8Rng,
    pub channel: ChaCha8Rng,
    pub churn: ChaCha8Rng,
}

impl Streams {
    pub fn new(seed: u64, run: u32) -> Self {
        let base = ChaCha8Rng::seed_from_u64(seed);
        let stream = |k: u64| {
            let mut r = base.clone();
            r.set_stream(u64::from(run) * 4 + k);
            r
        };
        Streams { deaths: stream(0), arrivals: stream(1), channel: stream(2), churn: stream(3) }
    }
}

/// Element birth/death process.
pub(crate) struct Dynamics {
    delete_prob: f64,
    arrivals: Option<Poisson<f64>>,
}

impl Dynamics {
    pub fn new(scenario: &ScenarioParams) -> Result<Self> {
        let arrivals = if scenario.lambda > 0.0 {
            Some(Poisson::new(scenario.lambda).map_err(|e| Error::param("lambda", e.to_string()))?)
        } else {
            None
        };
        Ok(Dynamics { delete_prob: scenario.deletion_prob(), arrivals })
    }

    /// Deaths then arrivals of `slot`; calls `on_death` with each victim's
    /// birth slot. Returns the number admitted.
    pub fn step(&self, store: &mut ElementStore, slot: u64, streams: &mut Streams, mut on_death: impl FnMut(u64)) -> u64 {
        store.begin_slot();
        let r = store.len() as u64;
        if r > 0 && self.delete_prob > 0.0 {
            let k = Binomial::new(r, self.delete_prob).expect("valid probability").sample(&mut streams.deaths);
            for _ in 0..k {
                let i = streams.deaths.gen_range(0..store.len());
                on_death(store.remove_at(i).born);
            }
        }
        let drawn = match &self.arrivals {
            Some(p) => p.sample(&mut streams.arrivals) as u64,
            None => 0,
        };
        let admitted = drawn.min(store.room() as u64);
        for _ in 0..admitted {
            store.insert(slot);
        }
        admitted
    }
}

/// Connected-phase durations.
pub(crate) struct Churn {
    exp: Option<Exp<f64>>,
}

impl Churn {
    pub fn new(gamma: f64) -> Result<Self> {
        let exp = if gamma > 0.0 {
            Some(Exp::new(gamma).map_err(|e| Error::param("gamma", e.to_string()))?)
        } else {
            None
        };
        Ok(Churn { exp })
    }

    /// Last connected slot of a neighbor joining at `joined_at`.
    pub fn connected_until(&self, joined_at: u64, rng: &mut ChaCha8Rng) -> u64 {
        match &self.exp {
            None => u64::MAX,
            Some(e) => {
                let d = e.sample(rng).ceil().clamp(1.0, 1e18) as u64;
                joined_at.saturating_add(d - 1)
            }
        }
    }

    pub fn initial(&self, bers: &[f64], rng: &mut ChaCha8Rng) -> Vec<NeighborState> {
        bers.iter().map(|&b| NeighborState::fresh(b, 0, self.connected_until(0, rng))).collect()
    }

    /// Replaces every neighbor whose phase ends at `slot`; calls `on_replace`
    /// with its index.
    pub fn process(&self, neighbors: &mut [NeighborState], slot: u64, rng: &mut ChaCha8Rng, mut on_replace: impl FnMut(usize)) {
        for (i, n) in neighbors.iter_mut().enumerate() {
            if n.connected_until <= slot {
                let until = self.connected_until(slot + 1, rng);
                *n = NeighborState::fresh(n.ber, slot + 1, until);
                on_replace(i);
            }
        }
    }
}

/// Whether a message of `size` reaches a neighbor in `copies` attempts,
/// given the neighbor's slot uniform `u`.
#[inline]
pub(crate) fn delivered(loss: &BitErrorLoss, size: u64, copies: u32, u: f64) -> bool {
    u < 1.0 - loss.loss(size).powi(copies as i32)
}

fn losses(scenario: &ScenarioParams) -> Result<Vec<BitErrorLoss>> {
    scenario.neighbors.iter().map(|&b| BitErrorLoss::new(b, scenario.element_size)).collect()
}

/// Runs the simulation and aggregates across runs.
pub fn simulate(scenario: &ScenarioParams, protocol: &ProtocolParams, config: &SimConfig) -> Result<SimulationReport> {
    scenario.validate()?;
    config.validate()?;
    let per_run = (0..config.runs)
        .into_par_iter()
        .map(|run| simulate_run(scenario, protocol, config, run, None))
        .collect::<Result<Vec<_>>>()?;
    let (mean_volume, volume_ci_halfwidth) = mean_ci(&per_run.iter().map(|r| r.volume).collect::<Vec<_>>());
    let (mean_relevance, relevance_ci_halfwidth) = mean_ci(&per_run.iter().map(|r| r.relevance).collect::<Vec<_>>());
    Ok(SimulationReport {
        protocol: *protocol,
        mean_volume,
        mean_relevance,
        volume_ci_halfwidth,
        relevance_ci_halfwidth,
        runs: config.runs,
        horizon: config.horizon,
        warmup: config.warmup,
        seed: config.seed,
        per_run,
    })
}

/// One run; `observer` sees every slot, warmup included.
pub fn simulate_run(
    scenario: &ScenarioParams,
    protocol: &ProtocolParams,
    config: &SimConfig,
    run: u32,
    mut observer: Option<&mut dyn FnMut(&SlotTrace)>,
) -> Result<RunStats> {
    scenario.validate()?;
    config.validate()?;
    let dynamics = Dynamics::new(scenario)?;
    let churn = Churn::new(scenario.gamma)?;
    let losses = losses(scenario)?;
    let mut streams = Streams::new(config.seed, run);
    let mut store = ElementStore::new(scenario.capacity);
    let mut neighbors = churn.initial(&scenario.neighbors, &mut streams.churn);
    let mut successes = vec![false; neighbors.len()];

    let (mut volume, mut relevant, mut adds, mut dels) = (0u64, 0u64, 0u64, 0u64);
    for slot in 0..config.horizon {
        dynamics.step(&mut store, slot, &mut streams, |_| {});
        let msg = message_for_slot(&store, protocol, slot, config.cancel_transients);
        if msg.kind == MessageKind::FullDump {
            store.mark_full_dump(slot);
        }
        let copies = msg.copies(protocol);
        let mut all_relevant = true;
        for (i, n) in neighbors.iter_mut().enumerate() {
            let u: f64 = streams.channel.gen();
            let ok = delivered(&losses[i], msg.size, copies, u);
            successes[i] = ok;
            *n = receive(*n, msg.kind, ok, protocol.strategy);
            all_relevant &= n.relevant;
        }
        let (a, d) = store.slot_changes();
        if slot >= config.warmup {
            volume += u64::from(copies) * msg.size;
            relevant += u64::from(all_relevant);
            adds += a;
            dels += d;
        }
        if let Some(obs) = observer.as_deref_mut() {
            obs(&SlotTrace {
                slot,
                kind: msg.kind,
                size: msg.size,
                copies,
                occupancy: store.len() as u64,
                adds: a,
                dels: d,
                successes: successes.clone(),
                all_relevant,
            });
        }
        churn.process(&mut neighbors, slot, &mut streams.churn, |_| {});
    }
    let slots = config.measured_slots();
    let per = |x: u64| x as f64 / slots as f64;
    Ok(RunStats {
        run,
        slots,
        volume: per(volume),
        relevance: per(relevant),
        mean_adds: per(adds),
        mean_dels: per(dels),
    })
}

/// Element dynamics without messaging.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Occupancy {
    /// Fraction of counted slots ending with `r` elements, `r = 0..=R`.
    pub frequencies: Vec<f64>,
    pub mean_adds: f64,
    pub mean_dels: f64,
    pub slots: u64,
}

impl Occupancy {
    pub fn mean(&self) -> f64 {
        self.frequencies.iter().enumerate().map(|(r, f)| r as f64 * f).sum()
    }

    /// Total-variation distance to `pi`.
    pub fn tv_distance(&self, pi: &[f64]) -> f64 {
        let n = self.frequencies.len().max(pi.len());
        let at = |v: &[f64], i: usize| v.get(i).copied().unwrap_or(0.0);
        0.5 * (0..n).map(|i| (at(&self.frequencies, i) - at(pi, i)).abs()).sum::<f64>()
    }
}

/// Occupancy histogram of a single run, sampled at slot end.
pub fn observe_occupancy(scenario: &ScenarioParams, horizon: u64, warmup: u64, seed: u64) -> Result<Occupancy> {
    scenario.validate()?;
    if horizon <= warmup {
        return Err(Error::param("horizon", "must exceed warmup"));
    }
    let dynamics = Dynamics::new(scenario)?;
    let mut streams = Streams::new(seed, 0);
    let mut store = ElementStore::new(scenario.capacity);
    let mut counts = vec![0u64; scenario.capacity + 1];
    let (mut adds, mut dels) = (0u64, 0u64);
    for slot in 0..horizon {
        dynamics.step(&mut store, slot, &mut streams, |_| {});
        if slot >= warmup {
            counts[store.len()] += 1;
            let (a, d) = store.slot_changes();
            adds += a;
            dels += d;
        }
    }
    let slots = horizon - warmup;
    Ok(Occupancy {
        frequencies: counts.iter().map(|&c| c as f64 / slots as f64).collect(),
        mean_adds: adds as f64 / slots as f64,
        mean_dels: dels as f64 / slots as f64,
        slots,
    })
}
