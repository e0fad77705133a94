//! Exhaustive search for the cheapest `(N, n_f, n_d)` meeting the relevance
//! target.
//!
//! The search box is `N ∈ 1..=N_max`, `n_f, n_d ∈ 1..=retry_limit`, where
//! `N_max` is the longest full-dump cycle whose startup gap alone still
//! allows the target at all neighbors.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

pub use crate::analytic::Mode;
use crate::analytic::Evaluator;
use crate::error::{Error, Result};
use crate::params::{Diagnostic, ProtocolParams, ScenarioParams};

/// Volumes within this relative distance are treated as equal.
pub const VOLUME_TIE: f64 = 1e-12;

/// Relevance may fall short of the target by this relative amount and still
/// count as meeting it; absorbs rounding in `1 − γN/2` at `N = N_max`.
pub const RELEVANCE_SLACK: f64 = 1e-12;

/// Longest full-dump period compatible with the target:
/// `⌊2 (1 − p_thresh^{1/M}) / γ⌋`. Requires `γ > 0`.
pub fn n_max(gamma: f64, neighbors: usize, p_thresh: f64) -> Result<u64> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::domain("n_max", format!("gamma must be positive and finite, got {gamma}")));
    }
    if neighbors == 0 {
        return Err(Error::domain("n_max", "at least one neighbor is required"));
    }
    if !(p_thresh > 0.0 && p_thresh < 1.0) {
        return Err(Error::domain("n_max", format!("p_thresh must lie in (0, 1), got {p_thresh}")));
    }
    let slack = 1.0 - p_thresh.powf(1.0 / neighbors as f64);
    let mut n = (2.0 * slack / gamma).floor().max(0.0) as u64;
    // Settle the floor against the products the caller will form.
    while (n + 1) as f64 * gamma / 2.0 <= slack {
        n += 1;
    }
    while n > 0 && n as f64 * gamma / 2.0 > slack {
        n -= 1;
    }
    Ok(n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TuneOptions {
    /// Largest `n_f` and `n_d` searched.
    pub retry_limit: u32,
    /// Cap on `N` for static networks (`γ = 0`), where no bound exists.
    pub static_period_limit: u64,
    /// Optional extra cap on `N`; `Some(1)` tunes the full-dump-only
    /// protocol.
    pub max_period: Option<u64>,
}

impl Default for TuneOptions {
    fn default() -> Self {
        TuneOptions { retry_limit: 7, static_period_limit: 1000, max_period: None }
    }
}

/// One evaluated triple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub period: u64,
    pub retries_full: u32,
    pub retries_diff: u32,
    pub volume: f64,
    pub relevance: f64,
    pub feasible: bool,
}

impl Candidate {
    pub fn protocol(&self) -> ProtocolParams {
        ProtocolParams::incremental(self.period, self.retries_full, self.retries_diff)
            .expect("searched triples are positive")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningResult {
    pub mode: Mode,
    pub feasible: bool,
    pub best: Option<ProtocolParams>,
    pub best_volume: Option<f64>,
    pub best_relevance: Option<f64>,
    /// Number of triples evaluated.
    pub evaluated: u64,
    /// Startup-gap bound on `N`; `None` for a static network.
    pub n_max: Option<u64>,
    /// Largest `N` actually searched.
    pub period_bound: u64,
    pub diagnostics: Vec<Diagnostic>,
}

/// Orders two equal-volume candidates: higher relevance first, then smaller
/// `N`, `n_f`, `n_d`.
fn tie_order(a: &Candidate, b: &Candidate) -> Ordering {
    b.relevance
        .total_cmp(&a.relevance)
        .then(a.period.cmp(&b.period))
        .then(a.retries_full.cmp(&b.retries_full))
        .then(a.retries_diff.cmp(&b.retries_diff))
}

/// Picks the deterministic winner among equal-volume feasible triples.
pub fn tie_break(candidates: &[Candidate]) -> Option<ProtocolParams> {
    candidates.iter().min_by(|a, b| tie_order(a, b)).map(Candidate::protocol)
}

/// Whether `challenger` should replace `incumbent` as the optimum.
pub(crate) fn improves(challenger: &Candidate, incumbent: &Candidate) -> bool {
    let scale = challenger.volume.abs().max(incumbent.volume.abs());
    let gap = incumbent.volume - challenger.volume;
    if gap > VOLUME_TIE * scale {
        true
    } else if gap < -VOLUME_TIE * scale {
        false
    } else {
        tie_order(challenger, incumbent) == Ordering::Less
    }
}

/// Whether `relevance` meets `p_thresh`.
pub fn meets_target(relevance: f64, p_thresh: f64) -> bool {
    relevance >= p_thresh * (1.0 - RELEVANCE_SLACK)
}

pub(crate) fn search_bound(scenario: &ScenarioParams, options: &TuneOptions) -> Result<(Option<u64>, u64)> {
    let bound = if scenario.gamma > 0.0 {
        Some(n_max(scenario.gamma, scenario.neighbor_count(), scenario.p_thresh)?)
    } else {
        None
    };
    let mut period = bound.unwrap_or(options.static_period_limit);
    if let Some(cap) = options.max_period {
        period = period.min(cap);
    }
    Ok((bound, period))
}

/// Runs the exhaustive search.
pub fn tune(scenario: &ScenarioParams, mode: Mode, options: &TuneOptions) -> Result<TuningResult> {
    tune_inner(scenario, mode, options, None)
}

/// Runs the exhaustive search and also returns every evaluated triple in
/// search order.
pub fn tune_with_trace(scenario: &ScenarioParams, mode: Mode, options: &TuneOptions) -> Result<(TuningResult, Vec<Candidate>)> {
    let mut trace = Vec::new();
    let result = tune_inner(scenario, mode, options, Some(&mut trace))?;
    Ok((result, trace))
}

/// Search with an evaluator built by the caller (e.g. shared across calls).
pub fn tune_with(evaluator: &Evaluator, scenario: &ScenarioParams, options: &TuneOptions) -> Result<TuningResult> {
    search(evaluator, scenario, options, None)
}

fn tune_inner(
    scenario: &ScenarioParams,
    mode: Mode,
    options: &TuneOptions,
    trace: Option<&mut Vec<Candidate>>,
) -> Result<TuningResult> {
    scenario.validate()?;
    let (_, period_bound) = search_bound(scenario, options)?;
    if period_bound == 0 {
        // Nothing to evaluate; skip the stationary solve.
        return search_empty(scenario, mode, options);
    }
    let evaluator = Evaluator::new(scenario, mode)?;
    search(&evaluator, scenario, options, trace)
}

fn search_empty(scenario: &ScenarioParams, mode: Mode, options: &TuneOptions) -> Result<TuningResult> {
    let (n_max, period_bound) = search_bound(scenario, options)?;
    Ok(TuningResult {
        mode,
        feasible: false,
        best: None,
        best_volume: None,
        best_relevance: None,
        evaluated: 0,
        n_max,
        period_bound,
        diagnostics: scenario.diagnostics(),
    })
}

fn search(
    evaluator: &Evaluator,
    scenario: &ScenarioParams,
    options: &TuneOptions,
    mut trace: Option<&mut Vec<Candidate>>,
) -> Result<TuningResult> {
    if options.retry_limit == 0 {
        return Err(Error::param("retry_limit", "must be at least 1"));
    }
    let (n_max, period_bound) = search_bound(scenario, options)?;
    let mut best: Option<Candidate> = None;
    let mut evaluated = 0;
    for period in 1..=period_bound {
        for retries_full in 1..=options.retry_limit {
            for retries_diff in 1..=options.retry_limit {
                let e = evaluator.evaluate(period, retries_full, retries_diff)?;
                evaluated += 1;
                let c = Candidate {
                    period,
                    retries_full,
                    retries_diff,
                    volume: e.volume,
                    relevance: e.relevance,
                    feasible: meets_target(e.relevance, scenario.p_thresh),
                };
                if let Some(t) = trace.as_deref_mut() {
                    t.push(c);
                }
                if c.feasible && best.as_ref().map_or(true, |b| improves(&c, b)) {
                    best = Some(c);
                }
            }
        }
    }
    let mut diagnostics = scenario.diagnostics();
    if let Some(b) = &best {
        if b.retries_full == options.retry_limit || b.retries_diff == options.retry_limit {
            diagnostics.push(Diagnostic::RetryBoundary {
                retries_full: b.retries_full,
                retries_diff: b.retries_diff,
                retry_limit: options.retry_limit,
            });
        }
    }
    Ok(TuningResult {
        mode: evaluator.mode(),
        feasible: best.is_some(),
        best: best.as_ref().map(Candidate::protocol),
        best_volume: best.map(|b| b.volume),
        best_relevance: best.map(|b| b.relevance),
        evaluated,
        n_max,
        period_bound,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ElementSize;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn scenario(load: f64, bers: Vec<f64>, gamma: f64, p_thresh: f64) -> ScenarioParams {
        ScenarioParams::from_load(load, 0.01, 1000, ElementSize::from_bytes(2).unwrap(), gamma, bers, p_thresh).unwrap()
    }

    fn cand(period: u64, nf: u32, nd: u32, volume: f64, relevance: f64) -> Candidate {
        Candidate { period, retries_full: nf, retries_diff: nd, volume, relevance, feasible: true }
    }

    #[test]
    fn n_max_examples() {
        assert_eq!(n_max(0.001, 1, 0.95).unwrap(), 100);
        assert_eq!(n_max(0.001, 1, 1.0 - 1e-15).unwrap(), 0);
        assert_eq!(n_max(0.2, 50, 0.95).unwrap(), 0);
        assert!(n_max(0.0, 1, 0.95).is_err());
    }

    #[test]
    fn tie_break_examples() {
        let one = cand(5, 2, 1, 10.0, 0.96);
        assert_eq!(tie_break(&[one]), Some(one.protocol()));
        let better = cand(6, 2, 1, 10.0, 0.97);
        assert_eq!(tie_break(&[one, better]).unwrap().full_dump_period, 6);
        let a = cand(6, 1, 1, 10.0, 0.96);
        let b = cand(4, 1, 1, 10.0, 0.96);
        assert_eq!(tie_break(&[a, b]).unwrap().full_dump_period, 4);
        assert_eq!(tie_break(&[]), None);
    }

    #[test]
    fn lossless_link_uses_the_longest_cycle() {
        let s = scenario(0.6, vec![0.0], 0.001, 0.95);
        let (result, trace) = tune_with_trace(&s, Mode::Exact, &TuneOptions::default()).unwrap();
        let ev = Evaluator::exact(&s).unwrap();
        // Precondition for "longest N wins": the dump term dominates.
        assert!(ev.avg_r() > 2.0 * ev.avg_d());
        let best = result.best.unwrap();
        assert_eq!((best.full_dump_period, best.retries_full, best.retries_diff), (100, 1, 1));
        // Independent argmin over the recorded trace.
        let argmin = trace
            .iter()
            .filter(|c| c.relevance >= 0.95 - 1e-12)
            .min_by(|a, b| a.volume.total_cmp(&b.volume))
            .unwrap();
        assert_eq!(argmin.protocol(), best);
        assert_eq!(result.evaluated, 100 * 49);
    }

    #[test]
    fn zero_cycle_bound_is_infeasible() {
        let s = scenario(1.0, vec![6.6e-6; 50], 0.2, 0.95);
        let r = tune(&s, Mode::Exact, &TuneOptions::default()).unwrap();
        assert!(!r.feasible);
        assert_eq!(r.best, None);
        assert_eq!(r.n_max, Some(0));
        assert_eq!(r.evaluated, 0);
    }

    #[test]
    fn static_network_uses_period_limit() {
        let s = scenario(1.0, vec![6.6e-6], 0.0, 0.95);
        let opts = TuneOptions { static_period_limit: 50, ..TuneOptions::default() };
        let r = tune(&s, Mode::Asymptotic, &opts).unwrap();
        assert_eq!(r.n_max, None);
        assert_eq!(r.period_bound, 50);
        assert!(r.feasible);
    }

    #[test]
    fn full_dump_only_restriction() {
        let s = scenario(1.0, vec![6.6e-6], 0.001, 0.95);
        let opts = TuneOptions { max_period: Some(1), ..TuneOptions::default() };
        let r = tune(&s, Mode::Asymptotic, &opts).unwrap();
        let best = r.best.unwrap();
        assert_eq!(best.full_dump_period, 1);
        // p_err(R) = 10%: one copy gives 0.9 < 0.95, two give 0.99.
        assert_eq!(best.retries_full, 2);
        assert!((r.best_volume.unwrap() - 2000.0).abs() < 1e-9);
    }

    #[test]
    fn retry_boundary_is_flagged() {
        let s = scenario(1.0, vec![1e-4], 0.001, 0.95);
        let opts = TuneOptions { retry_limit: 2, ..TuneOptions::default() };
        let r = tune(&s, Mode::Asymptotic, &opts).unwrap();
        if r.feasible {
            assert!(r.diagnostics.iter().any(|d| matches!(d, Diagnostic::RetryBoundary { .. })));
        }
    }

    #[test]
    fn search_is_reproducible_and_exhaustive() {
        let s = scenario(0.9, vec![6.6e-6, 3e-6], 0.001, 0.9);
        let a = tune(&s, Mode::Exact, &TuneOptions::default()).unwrap();
        let b = tune(&s, Mode::Exact, &TuneOptions::default()).unwrap();
        assert_eq!(a, b);
        assert!(a.feasible);
        let best_v = a.best_volume.unwrap();
        let ev = Evaluator::exact(&s).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let n = rng.gen_range(1..=a.period_bound);
            let nf = rng.gen_range(1..=7);
            let nd = rng.gen_range(1..=7);
            let e = ev.evaluate(n, nf, nd).unwrap();
            if meets_target(e.relevance, s.p_thresh) {
                assert!(e.volume >= best_v * (1.0 - VOLUME_TIE), "({n},{nf},{nd}) beats optimum");
            }
        }
        let best = a.best.unwrap();
        assert!(best.full_dump_period <= a.n_max.unwrap());
        assert!(a.best_relevance.unwrap() >= s.p_thresh * (1.0 - RELEVANCE_SLACK));
    }

    proptest! {
        #[test]
        fn n_max_floor_is_exact(gamma in 1e-5..0.5f64, m in 1usize..100, p in 0.5..0.9999f64) {
            let n = n_max(gamma, m, p).unwrap();
            let slack = 1.0 - p.powf(1.0 / m as f64);
            prop_assert!(n as f64 * gamma / 2.0 <= slack);
            prop_assert!(slack < (n + 1) as f64 * gamma / 2.0);
        }

        #[test]
        fn n_max_is_monotone(gamma in 1e-5..0.1f64, m in 1usize..60, p in 0.5..0.99f64) {
            let n = n_max(gamma, m, p).unwrap();
            prop_assert!(n_max(gamma, m + 1, p).unwrap() <= n);
            prop_assert!(n_max(gamma, m, p + 0.005).unwrap() <= n);
        }
    }
}
