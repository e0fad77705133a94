//! Simulation-driven search over `(N, n_f, n_d)`.
//!
//! The element trajectory, channel uniforms and churn events of a run do not
//! depend on the protocol, so each run is recorded once and replayed for every
//! period. All retry pairs of one period are replayed together: a neighbor's
//! state is a bitmask over pairs, and a slot's reception outcome for pair
//! `(n_f, n_d)` only depends on the smallest copy count that would have
//! succeeded. Results equal those of [`simulate_run`](super::simulate_run)
//! for the same seed.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{delivered, Churn, Dynamics, ElementStore, SimConfig, Streams};
use crate::error::{Error, Result};
use crate::params::{ProtocolParams, ScenarioParams, Strategy};
use crate::prob::{BitErrorLoss, LossModel};
use crate::tuner::{self, Candidate, TuneOptions};
use rand::Rng;

/// Largest retry limit the bitmask replay supports.
pub const MAX_BATCH_RETRIES: u32 = 8;

/// One recorded run.
struct Trajectory {
    horizon: u64,
    warmup: u64,
    neighbors: usize,
    occupancy: Vec<u32>,
    adds: Vec<u32>,
    /// Birth slots of the victims of slot `t`, sorted, at
    /// `dead[dead_at[t]..dead_at[t + 1]]`.
    dead: Vec<u32>,
    dead_at: Vec<u32>,
    uniforms: Vec<f64>,
    churned: Vec<u32>,
    churned_at: Vec<u32>,
}

impl Trajectory {
    fn record(scenario: &ScenarioParams, config: &SimConfig, run: u32) -> Result<Self> {
        if config.horizon >= u64::from(u32::MAX) {
            return Err(Error::param("horizon", "batch replay supports fewer than 2^32 slots"));
        }
        let dynamics = Dynamics::new(scenario)?;
        let churn = Churn::new(scenario.gamma)?;
        let mut streams = Streams::new(config.seed, run);
        let mut store = ElementStore::new(scenario.capacity);
        let mut neighbors = churn.initial(&scenario.neighbors, &mut streams.churn);
        let h = config.horizon as usize;
        let m = neighbors.len();
        let mut t = Trajectory {
            horizon: config.horizon,
            warmup: config.warmup,
            neighbors: m,
            occupancy: Vec::with_capacity(h),
            adds: Vec::with_capacity(h),
            dead: Vec::new(),
            dead_at: Vec::with_capacity(h + 1),
            uniforms: Vec::with_capacity(h * m),
            churned: Vec::new(),
            churned_at: Vec::with_capacity(h + 1),
        };
        t.dead_at.push(0);
        t.churned_at.push(0);
        for slot in 0..config.horizon {
            let from = t.dead.len();
            let dead = &mut t.dead;
            let admitted = dynamics.step(&mut store, slot, &mut streams, |born| dead.push(born as u32));
            t.dead[from..].sort_unstable();
            t.dead_at.push(t.dead.len() as u32);
            t.adds.push(admitted as u32);
            t.occupancy.push(store.len() as u32);
            for _ in 0..m {
                t.uniforms.push(streams.channel.gen());
            }
            let churned = &mut t.churned;
            churn.process(&mut neighbors, slot, &mut streams.churn, |i| churned.push(i as u32));
            t.churned_at.push(t.churned.len() as u32);
        }
        Ok(t)
    }

    fn deaths(&self, slot: usize) -> &[u32] {
        &self.dead[self.dead_at[slot] as usize..self.dead_at[slot + 1] as usize]
    }

    fn churned(&self, slot: usize) -> &[u32] {
        &self.churned[self.churned_at[slot] as usize..self.churned_at[slot + 1] as usize]
    }
}

/// Per-neighbor delivery thresholds `1 − p_err(size)^c` for `c = 1..=L`.
struct Thresholds {
    losses: Vec<BitErrorLoss>,
    limit: u32,
    max_size: u64,
    table: Vec<Vec<f64>>,
}

impl Thresholds {
    fn new(scenario: &ScenarioParams, limit: u32) -> Result<Self> {
        let losses: Vec<_> =
            scenario.neighbors.iter().map(|&b| BitErrorLoss::new(b, scenario.element_size)).collect::<Result<_>>()?;
        let max_size = 2 * scenario.capacity as u64;
        let table = losses
            .iter()
            .map(|l| {
                let mut row = Vec::with_capacity((max_size as usize + 1) * limit as usize);
                for size in 0..=max_size {
                    for c in 1..=limit {
                        // Same expression as `delivered`.
                        row.push(1.0 - l.loss(size).powi(c as i32));
                    }
                }
                row
            })
            .collect();
        Ok(Thresholds { losses, limit, max_size, table })
    }

    /// Smallest copy count that delivers, or `L + 1`.
    #[inline]
    fn min_copies(&self, neighbor: usize, size: u64, u: f64) -> u32 {
        if size <= self.max_size {
            let l = self.limit as usize;
            let row = &self.table[neighbor][size as usize * l..(size as usize + 1) * l];
            for (c, &thr) in row.iter().enumerate() {
                if u < thr {
                    return c as u32 + 1;
                }
            }
        } else {
            for c in 1..=self.limit {
                if delivered(&self.losses[neighbor], size, c, u) {
                    return c;
                }
            }
        }
        self.limit + 1
    }
}

/// Statistics of one retry pair at one period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairStats {
    pub period: u64,
    pub retries_full: u32,
    pub retries_diff: u32,
    pub volume: f64,
    pub relevance: f64,
}

/// Replays recorded runs for arbitrary `(strategy, N)`.
pub struct BatchEvaluator {
    trajectory: Trajectory,
    thresholds: Thresholds,
    limit: u32,
    cancel_transients: bool,
    /// `full_ok[c]`: pairs with `n_f ≥ c`; `diff_ok[c]`: pairs with `n_d ≥ c`.
    full_ok: Vec<u64>,
    diff_ok: Vec<u64>,
}

impl BatchEvaluator {
    /// Records run `run` of `config`.
    pub fn record(scenario: &ScenarioParams, config: &SimConfig, run: u32, retry_limit: u32) -> Result<Self> {
        scenario.validate()?;
        config.validate()?;
        if retry_limit == 0 || retry_limit > MAX_BATCH_RETRIES {
            return Err(Error::param("retry_limit", format!("must lie in 1..={MAX_BATCH_RETRIES}")));
        }
        let l = retry_limit;
        let pair_mask = |keep: &dyn Fn(u32, u32) -> bool| {
            let mut mask = 0u64;
            for nf in 1..=l {
                for nd in 1..=l {
                    if keep(nf, nd) {
                        mask |= 1 << ((nf - 1) * l + (nd - 1));
                    }
                }
            }
            mask
        };
        let full_ok = (0..=l + 1).map(|c| pair_mask(&|nf, _| nf >= c)).collect();
        let diff_ok = (0..=l + 1).map(|c| pair_mask(&|_, nd| nd >= c)).collect();
        Ok(BatchEvaluator {
            trajectory: Trajectory::record(scenario, config, run)?,
            thresholds: Thresholds::new(scenario, l)?,
            limit: l,
            cancel_transients: config.cancel_transients,
            full_ok,
            diff_ok,
        })
    }

    pub fn retry_limit(&self) -> u32 {
        self.limit
    }

    /// Volume and relevance of every `(n_f, n_d)` pair at period `N`, ordered
    /// by `n_f` then `n_d`.
    pub fn evaluate(&self, strategy: Strategy, period: u64) -> Vec<PairStats> {
        let tr = &self.trajectory;
        let th = &self.thresholds;
        let l = self.limit;
        let m = tr.neighbors;
        let mut rel = vec![0u64; m];
        let mut base = vec![0u64; m];
        let mut prev = 0u64;
        let mut since = [0u64; 64];
        let mut counted = [0u64; 64];
        let (mut dump_elems, mut diff_elems) = (0u64, 0u64);
        let mut last_dump = 0u32;
        let (mut fresh, mut dump_deleted, mut adds_since, mut dels_since) = (0u64, 0u64, 0u64, 0u64);

        for t in 0..tr.horizon as usize {
            let slot = t as u64;
            let deaths = tr.deaths(t);
            let adds = u64::from(tr.adds[t]);
            let dels = deaths.len() as u64;
            let is_dump = slot % period == 0;
            let size = if is_dump {
                u64::from(tr.occupancy[t])
            } else if strategy == Strategy::Cumulative {
                let old = deaths.partition_point(|&b| b <= last_dump) as u64;
                dump_deleted += old;
                fresh = fresh - (dels - old) + adds;
                adds_since += adds;
                dels_since += dels;
                if self.cancel_transients {
                    fresh + dump_deleted
                } else {
                    adds_since + dels_since
                }
            } else {
                adds + dels
            };
            if is_dump {
                last_dump = t as u32;
                fresh = 0;
                dump_deleted = 0;
                adds_since = 0;
                dels_since = 0;
            }

            let mut all = u64::MAX;
            for i in 0..m {
                let c = th.min_copies(i, size, tr.uniforms[t * m + i]) as usize;
                if is_dump {
                    rel[i] = self.full_ok[c];
                    base[i] = rel[i];
                } else if strategy == Strategy::Cumulative {
                    rel[i] = self.diff_ok[c] & base[i];
                } else {
                    rel[i] &= self.diff_ok[c];
                }
                all &= rel[i];
            }
            if m == 0 {
                all = self.full_ok[0];
            }

            if slot >= tr.warmup {
                if is_dump {
                    dump_elems += size;
                } else {
                    diff_elems += size;
                }
                let mut flips = all ^ prev;
                while flips != 0 {
                    let b = flips.trailing_zeros() as usize;
                    flips &= flips - 1;
                    if all >> b & 1 == 1 {
                        since[b] = slot;
                    } else {
                        counted[b] += slot - since[b];
                    }
                }
                prev = all;
            }
            for &i in tr.churned(t) {
                rel[i as usize] = 0;
                base[i as usize] = 0;
            }
        }
        let mut rest = prev;
        while rest != 0 {
            let b = rest.trailing_zeros() as usize;
            rest &= rest - 1;
            counted[b] += tr.horizon - since[b];
        }

        let slots = (tr.horizon - tr.warmup) as f64;
        let mut out = Vec::with_capacity((l * l) as usize);
        for nf in 1..=l {
            for nd in 1..=l {
                let k = ((nf - 1) * l + (nd - 1)) as usize;
                let volume = u64::from(nf) * dump_elems + u64::from(nd) * diff_elems;
                out.push(PairStats {
                    period,
                    retries_full: nf,
                    retries_diff: nd,
                    volume: volume as f64 / slots,
                    relevance: counted[k] as f64 / slots,
                });
            }
        }
        out
    }
}

/// Best triple of one strategy under simulation-evaluated feasibility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSearchResult {
    pub strategy: Strategy,
    pub feasible: bool,
    pub best: Option<ProtocolParams>,
    pub volume: Option<f64>,
    pub relevance: Option<f64>,
    pub evaluated: u64,
    pub period_bound: u64,
}

/// Exhaustive search where every triple is scored by the mean over
/// `config.runs` simulated runs. `FullDumpOnly` is searched over `N = 1`,
/// `n_d = 1`.
pub fn search_by_simulation(
    scenario: &ScenarioParams,
    strategies: &[Strategy],
    config: &SimConfig,
    options: &TuneOptions,
) -> Result<Vec<SimSearchResult>> {
    scenario.validate()?;
    config.validate()?;
    let (_, bound) = tuner::search_bound(scenario, options)?;
    let periods = |s: Strategy| if s == Strategy::FullDumpOnly { bound.min(1) } else { bound };

    // Per run: strategy → period → pair stats.
    let per_run: Vec<Vec<Vec<Vec<PairStats>>>> = (0..config.runs)
        .into_par_iter()
        .map(|run| {
            if bound == 0 {
                return Ok(strategies.iter().map(|_| Vec::new()).collect());
            }
            let ev = BatchEvaluator::record(scenario, config, run, options.retry_limit)?;
            Ok(strategies.iter().map(|&s| (1..=periods(s)).map(|n| ev.evaluate(s, n)).collect()).collect())
        })
        .collect::<Result<_>>()?;

    let runs = f64::from(config.runs);
    let mut results = Vec::with_capacity(strategies.len());
    for (si, &strategy) in strategies.iter().enumerate() {
        let mut best: Option<Candidate> = None;
        let mut evaluated = 0;
        for n in 0..periods(strategy) as usize {
            for (k, pair) in per_run[0][si][n].iter().enumerate() {
                if strategy == Strategy::FullDumpOnly && pair.retries_diff != 1 {
                    continue;
                }
                let volume = per_run.iter().map(|r| r[si][n][k].volume).sum::<f64>() / runs;
                let relevance = per_run.iter().map(|r| r[si][n][k].relevance).sum::<f64>() / runs;
                evaluated += 1;
                let c = Candidate {
                    period: pair.period,
                    retries_full: pair.retries_full,
                    retries_diff: pair.retries_diff,
                    volume,
                    relevance,
                    feasible: tuner::meets_target(relevance, scenario.p_thresh),
                };
                if c.feasible && best.as_ref().map_or(true, |b| tuner::improves(&c, b)) {
                    best = Some(c);
                }
            }
        }
        results.push(SimSearchResult {
            strategy,
            feasible: best.is_some(),
            best: best.map(|b| ProtocolParams::new(strategy, b.period, b.retries_full, b.retries_diff)).transpose()?,
            volume: best.map(|b| b.volume),
            relevance: best.map(|b| b.relevance),
            evaluated,
            period_bound: periods(strategy),
        });
    }
    Ok(results)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompareOptions {
    pub runs: u32,
    /// Counted slots per run, after the default warmup.
    pub measured_slots: u64,
    pub seed: u64,
    pub tune: TuneOptions,
    pub cancel_transients: bool,
}

impl CompareOptions {
    pub fn new(seed: u64) -> Self {
        CompareOptions {
            runs: SimConfig::DEFAULT_RUNS,
            measured_slots: 100_000,
            seed,
            tune: TuneOptions::default(),
            cancel_transients: true,
        }
    }
}

/// One `(load, μ, strategy)` cell of the strategy comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub load: f64,
    pub mu: f64,
    pub strategy: Strategy,
    pub feasible: bool,
    pub protocol: Option<ProtocolParams>,
    pub volume: Option<f64>,
    pub relevance: Option<f64>,
}

/// Incremental versus cumulative optimum over a `(μ, load)` grid. `base`
/// supplies everything but `λ` and `μ`. Rows come in grid order: `μ`
/// outer, load inner, incremental before cumulative.
pub fn compare_strategies(
    base: &ScenarioParams,
    loads: &[f64],
    mus: &[f64],
    options: &CompareOptions,
) -> Result<Vec<ComparisonRow>> {
    if loads.is_empty() || mus.is_empty() {
        return Err(Error::param("grid", "load and mu grids must be non-empty"));
    }
    let strategies = [Strategy::Incremental, Strategy::Cumulative];
    let mut rows = Vec::new();
    for &mu in mus {
        for &load in loads {
            let s = ScenarioParams::from_load(
                load,
                mu,
                base.capacity,
                base.element_size,
                base.gamma,
                base.neighbors.clone(),
                base.p_thresh,
            )?;
            let mut config = SimConfig::with_measured(&s, options.seed, options.measured_slots, options.runs);
            config.cancel_transients = options.cancel_transients;
            for r in search_by_simulation(&s, &strategies, &config, &options.tune)? {
                rows.push(ComparisonRow {
                    load,
                    mu,
                    strategy: r.strategy,
                    feasible: r.feasible,
                    protocol: r.best,
                    volume: r.volume,
                    relevance: r.relevance,
                });
            }
        }
    }
    Ok(rows)
}
