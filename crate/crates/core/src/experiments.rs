//! Sweeps that put the analytic model, its saturated limit, the tuner and the
//! simulator side by side.

use serde::{Deserialize, Serialize};

use crate::analytic::{Evaluator, Mode};
use crate::error::{Error, Result};
use crate::params::{ElementSize, ProtocolParams, ScenarioParams};
use crate::prob::ber_for_loss;
use crate::sim::{simulate, SimConfig};
use crate::tuner::{tune_with, TuneOptions};

/// Scenario with `M` identical neighbors whose bit error rate makes a
/// message of `R` elements fail with probability `loss_at_capacity`.
#[allow(clippy::too_many_arguments)]
pub fn scenario_with_loss(
    load: f64,
    mu: f64,
    capacity: usize,
    element_size: ElementSize,
    gamma: f64,
    neighbors: usize,
    loss_at_capacity: f64,
    p_thresh: f64,
) -> Result<ScenarioParams> {
    let ber = ber_for_loss(loss_at_capacity, capacity as u64, element_size)?;
    ScenarioParams::from_load(load, mu, capacity, element_size, gamma, vec![ber; neighbors], p_thresh)
}

/// `points` values spaced evenly in log scale over `[1e-4, 1e-1]`.
pub fn default_gamma_grid(points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![1e-4],
        _ => (0..points).map(|i| 1e-4 * 1e3f64.powf(i as f64 / (points - 1) as f64)).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    Analytic,
    Asymptotic,
    Simulation,
}

impl Source {
    pub fn name(self) -> &'static str {
        match self {
            Source::Analytic => "analytic",
            Source::Asymptotic => "asymptotic",
            Source::Simulation => "simulation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRow {
    pub load: f64,
    pub mu: f64,
    pub source: Source,
    pub feasible: bool,
    pub protocol: Option<ProtocolParams>,
    pub volume: Option<f64>,
    pub relevance: Option<f64>,
    /// Simulation rows only.
    pub volume_ci_halfwidth: Option<f64>,
    pub relevance_ci_halfwidth: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationOptions {
    pub runs: u32,
    /// Counted slots per run, after the default warmup.
    pub measured_slots: u64,
    pub seed: u64,
    pub tune: TuneOptions,
}

impl ValidationOptions {
    pub fn new(seed: u64) -> Self {
        ValidationOptions { runs: SimConfig::DEFAULT_RUNS, measured_slots: 100_000, seed, tune: TuneOptions::default() }
    }
}

/// For each `(μ, load)`: the exact optimum, the saturated-model optimum and
/// a simulation of the exact optimum. `base` supplies everything but `λ`
/// and `μ`.
pub fn validation(base: &ScenarioParams, loads: &[f64], mus: &[f64], options: &ValidationOptions) -> Result<Vec<ValidationRow>> {
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
            let row = |source, protocol: Option<ProtocolParams>, volume, relevance| ValidationRow {
                load,
                mu,
                source,
                feasible: protocol.is_some(),
                protocol,
                volume,
                relevance,
                volume_ci_halfwidth: None,
                relevance_ci_halfwidth: None,
            };
            let exact = tune_with(&Evaluator::exact(&s)?, &s, &options.tune)?;
            rows.push(row(Source::Analytic, exact.best, exact.best_volume, exact.best_relevance));
            let asym = tune_with(&Evaluator::asymptotic(&s)?, &s, &options.tune)?;
            rows.push(row(Source::Asymptotic, asym.best, asym.best_volume, asym.best_relevance));
            match exact.best {
                Some(p) => {
                    let config = SimConfig::with_measured(&s, options.seed, options.measured_slots, options.runs);
                    let r = simulate(&s, &p, &config)?;
                    rows.push(ValidationRow {
                        volume_ci_halfwidth: Some(r.volume_ci_halfwidth),
                        relevance_ci_halfwidth: Some(r.relevance_ci_halfwidth),
                        ..row(Source::Simulation, Some(p), Some(r.mean_volume), Some(r.mean_relevance))
                    });
                }
                None => rows.push(row(Source::Simulation, None, None, None)),
            }
        }
    }
    Ok(rows)
}

/// Exact-model volume of the optimum and of the saturated-model optimum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticGap {
    pub optimal: ProtocolParams,
    pub optimal_volume: f64,
    pub asymptotic: ProtocolParams,
    /// Volume of the saturated-model triple under the exact model.
    pub asymptotic_volume: f64,
}

impl AsymptoticGap {
    /// `V(Ñ, ñ_f, ñ_d) / V(N*, n_f*, n_d*) − 1`.
    pub fn excess(&self) -> f64 {
        self.asymptotic_volume / self.optimal_volume - 1.0
    }
}

/// `None` when either model has no feasible triple.
pub fn asymptotic_gap(scenario: &ScenarioParams, options: &TuneOptions) -> Result<Option<AsymptoticGap>> {
    let exact_ev = Evaluator::exact(scenario)?;
    let exact = tune_with(&exact_ev, scenario, options)?;
    let asym = tune_with(&Evaluator::asymptotic(scenario)?, scenario, options)?;
    let (Some(optimal), Some(asymptotic)) = (exact.best, asym.best) else {
        return Ok(None);
    };
    let e = exact_ev.evaluate(asymptotic.full_dump_period, asymptotic.retries_full, asymptotic.retries_diff)?;
    Ok(Some(AsymptoticGap {
        optimal,
        optimal_volume: exact.best_volume.expect("feasible"),
        asymptotic,
        asymptotic_volume: e.volume,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub gamma: f64,
    pub neighbors: usize,
    pub loss_at_capacity: f64,
    pub feasible: bool,
    pub protocol: Option<ProtocolParams>,
    pub volume: Option<f64>,
    /// Optimum restricted to `N = 1`.
    pub full_dump_volume: Option<f64>,
    /// `volume / full_dump_volume`.
    pub ratio: Option<f64>,
}

/// Tuned volume over `loss_levels × neighbor_counts × gammas` (in that
/// nesting order). `base` supplies `λ`, `μ`, `R`, `V₀` and `p_thresh`.
pub fn sensitivity(
    base: &ScenarioParams,
    gammas: &[f64],
    neighbor_counts: &[usize],
    loss_levels: &[f64],
    mode: Mode,
    options: &TuneOptions,
) -> Result<Vec<SensitivityRow>> {
    if gammas.is_empty() || neighbor_counts.is_empty() || loss_levels.is_empty() {
        return Err(Error::param("grid", "sensitivity grids must be non-empty"));
    }
    let baseline_options = TuneOptions { max_period: Some(1), ..*options };
    let mut rows = Vec::new();
    for &loss in loss_levels {
        for &m in neighbor_counts {
            let s0 = with_neighbors(base, m, loss, gammas[0])?;
            let ev0 = Evaluator::new(&s0, mode)?;
            for &gamma in gammas {
                let s = ScenarioParams { gamma, ..s0.clone() };
                s.validate()?;
                let ev = ev0.with_gamma(gamma)?;
                let best = tune_with(&ev, &s, options)?;
                let baseline = tune_with(&ev, &s, &baseline_options)?;
                let ratio = match (best.best_volume, baseline.best_volume) {
                    (Some(v), Some(b)) if b > 0.0 => Some(v / b),
                    _ => None,
                };
                rows.push(SensitivityRow {
                    gamma,
                    neighbors: m,
                    loss_at_capacity: loss,
                    feasible: best.feasible,
                    protocol: best.best,
                    volume: best.best_volume,
                    full_dump_volume: baseline.best_volume,
                    ratio,
                });
            }
        }
    }
    Ok(rows)
}

fn with_neighbors(base: &ScenarioParams, neighbors: usize, loss: f64, gamma: f64) -> Result<ScenarioParams> {
    let ber = ber_for_loss(loss, base.capacity as u64, base.element_size)?;
    let s = ScenarioParams { gamma, neighbors: vec![ber; neighbors], ..base.clone() };
    s.validate()?;
    Ok(s)
}

/// Largest churn rate in `[lo, hi]` at which some triple still meets the
/// target, to a relative precision of `1e-6`. `None` if infeasible at `lo`.
pub fn gamma_critical(
    base: &ScenarioParams,
    mode: Mode,
    options: &TuneOptions,
    lo: f64,
    hi: f64,
) -> Result<Option<f64>> {
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::param("gamma", format!("need 0 < lo < hi, got [{lo}, {hi}]")));
    }
    let ev = Evaluator::new(base, mode)?;
    let feasible = |gamma: f64| -> Result<bool> {
        let s = ScenarioParams { gamma, ..base.clone() };
        Ok(tune_with(&ev.with_gamma(gamma)?, &s, options)?.feasible)
    };
    if !feasible(lo)? {
        return Ok(None);
    }
    if feasible(hi)? {
        return Ok(Some(hi));
    }
    let (mut ok, mut bad) = (lo, hi);
    while bad / ok > 1.0 + 1e-6 {
        let mid = (ok * bad).sqrt();
        if feasible(mid)? {
            ok = mid;
        } else {
            bad = mid;
        }
    }
    Ok(Some(ok))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prob::message_loss_prob;

    fn base() -> ScenarioParams {
        scenario_with_loss(1.0, 0.01, 1000, ElementSize::from_bits(16).unwrap(), 0.001, 1, 0.1, 0.95).unwrap()
    }

    #[test]
    fn loss_level_sets_ber() {
        let s = base();
        let l = message_loss_prob(s.neighbors[0], 1000, s.element_size).unwrap();
        assert!((l - 0.1).abs() < 1e-12);
        assert!((s.lambda - 10.0).abs() < 1e-12);
    }

    #[test]
    fn gamma_grid_is_logarithmic() {
        let g = default_gamma_grid(4);
        assert_eq!(g.len(), 4);
        assert!((g[0] - 1e-4).abs() < 1e-18 && (g[3] - 1e-1).abs() < 1e-12);
        assert!((g[1] / g[0] - 10.0).abs() < 1e-9);
    }

    #[test]
    fn sensitivity_baseline_is_full_dump() {
        let rows = sensitivity(&base(), &[1e-3, 1e-2], &[1, 5], &[0.1], Mode::Asymptotic, &TuneOptions::default()).unwrap();
        assert_eq!(rows.len(), 4);
        for r in rows.iter().filter(|r| r.feasible) {
            assert!(r.ratio.unwrap() <= 1.0 + 1e-12);
        }
        // One neighbor at γ = 1e-3, p_err(R) = 10%: two full dumps per slot.
        assert!((rows[0].full_dump_volume.unwrap() - 2000.0).abs() < 1e-9);
    }

    #[test]
    fn critical_gamma_brackets_feasibility() {
        let s = base();
        let opts = TuneOptions::default();
        let g = gamma_critical(&s, Mode::Asymptotic, &opts, 1e-5, 1.0).unwrap().unwrap();
        let at = |gamma: f64| {
            let sg = ScenarioParams { gamma, ..s.clone() };
            tune_with(&Evaluator::asymptotic(&sg).unwrap(), &sg, &opts).unwrap().feasible
        };
        assert!(at(g));
        assert!(!at(g * 1.01));
    }

    #[test]
    fn asymptotic_gap_is_nonnegative() {
        let gap = asymptotic_gap(&base(), &TuneOptions::default()).unwrap().unwrap();
        assert!(gap.excess() >= -1e-12);
    }
}
