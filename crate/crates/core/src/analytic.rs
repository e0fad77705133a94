//! Control volume and relevance probability of the incremental strategy.
//!
//! Everything downstream of the stationary law is cheap: the distributions of
//! full-dump and differential message sizes are computed once per scenario
//! ([`MessageSizes`]) and every `(N, n_f, n_d)` triple is then evaluated in
//! `O(M)` by an [`Evaluator`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Diagnostic, ElementSize, ProtocolParams, ScenarioParams, Strategy, APPROXIMATION_GAMMA_N};
use crate::prob::{BitErrorLoss, DeletionLaw, LossModel};
use crate::stationary::{self, SlotLaw, StationaryDistribution};

/// Below this value of `N·p_d` the per-cycle relevance uses its first-order
/// expansion in `p_d`.
pub const SMALL_DIFF_LOSS: f64 = 1e-12;

/// Which model feeds the evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Stationary occupancy law of the finite-λ chain.
    Exact,
    /// Saturated store (`λ → ∞`): always `R` elements.
    Asymptotic,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Exact => "exact",
            Mode::Asymptotic => "asymptotic",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Mode::Exact),
            "asymptotic" => Ok(Mode::Asymptotic),
            other => Err(Error::param("mode", format!("unknown mode `{other}`"))),
        }
    }
}

/// `⟨r⟩ = Σ r π_r`.
pub fn mean_elements(pi: &StationaryDistribution) -> f64 {
    pi.probabilities().iter().enumerate().map(|(r, p)| r as f64 * p).sum()
}

/// `⟨d⟩ = Σ_d d Σ_{r≥d} π_r p(d | r)`.
pub fn mean_deletions(pi: &StationaryDistribution, mu: f64) -> Result<f64> {
    let law = DeletionLaw::new(mu)?;
    let mut row = Vec::new();
    let mut total = 0.0;
    for (r, &w) in pi.probabilities().iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        law.row(r as u64, &mut row);
        total += w * row.iter().enumerate().map(|(d, p)| d as f64 * p).sum::<f64>();
    }
    Ok(total)
}

fn volume(avg_r: f64, avg_d: f64, period: u64, retries_full: u32, retries_diff: u32) -> f64 {
    let n = period as f64;
    f64::from(retries_full) * avg_r / n + 2.0 * (n - 1.0) / n * f64::from(retries_diff) * avg_d
}

/// Mean number of elements sent per slot, `n_f⟨r⟩/N + 2 n_d ⟨d⟩ (N−1)/N`.
///
/// Only the full-dump and incremental strategies have a closed form.
pub fn avg_control_volume(avg_r: f64, avg_d: f64, protocol: &ProtocolParams) -> Result<f64> {
    if protocol.strategy == Strategy::Cumulative {
        return Err(Error::Unsupported(
            "the cumulative strategy has no closed-form control volume; use the simulator".into(),
        ));
    }
    Ok(volume(avg_r, avg_d, protocol.full_dump_period, protocol.retries_full, protocol.retries_diff))
}

/// Size distributions of full dumps and differential updates.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageSizes {
    /// Mass of a full dump carrying `s` elements, `s = 0..=R`.
    pub full: Vec<f64>,
    /// Mass of a differential carrying `s` elements, `s = 0..=2R`.
    pub diff: Vec<f64>,
    pub avg_r: f64,
    pub avg_d: f64,
}

impl MessageSizes {
    /// Sizes under the stationary law: a full dump carries `r`, a
    /// differential the `d + n` elements deleted and added in its slot.
    pub fn exact(scenario: &ScenarioParams, pi: &StationaryDistribution) -> Result<Self> {
        if pi.capacity() != scenario.capacity {
            return Err(Error::param(
                "pi",
                format!("distribution over 0..={} does not match capacity {}", pi.capacity(), scenario.capacity),
            ));
        }
        let law = SlotLaw::new(scenario)?;
        let mut diff = vec![0.0; 2 * scenario.capacity + 1];
        let mut scratch = Vec::new();
        for (r, &w) in pi.probabilities().iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            law.visit(r, &mut scratch, |d, n, p| diff[d + n] += w * p);
        }
        Ok(MessageSizes {
            full: pi.probabilities().to_vec(),
            diff,
            avg_r: mean_elements(pi),
            avg_d: mean_deletions(pi, scenario.mu)?,
        })
    }

    /// Saturated store: dumps carry `R`, a slot with `d` deletions refills
    /// `d` places, so its differential carries `2d`.
    pub fn asymptotic(scenario: &ScenarioParams) -> Result<Self> {
        scenario.validate()?;
        let cap = scenario.capacity;
        let law = DeletionLaw::new(scenario.mu)?;
        let mut row = Vec::new();
        law.row(cap as u64, &mut row);
        let mut diff = vec![0.0; 2 * cap + 1];
        for (d, p) in row.iter().enumerate() {
            diff[2 * d] = *p;
        }
        let mut full = vec![0.0; cap + 1];
        full[cap] = 1.0;
        Ok(MessageSizes { full, diff, avg_r: cap as f64, avg_d: scenario.deletion_prob() * cap as f64 })
    }

    /// Single-attempt loss probabilities `(full dump, differential)`.
    pub fn base_losses(&self, loss: &impl LossModel) -> (f64, f64) {
        (expected_loss(&self.full, loss), expected_loss(&self.diff, loss))
    }
}

fn expected_loss(sizes: &[f64], loss: &impl LossModel) -> f64 {
    sizes.iter().enumerate().filter(|(_, w)| **w > 0.0).map(|(s, w)| w * loss.loss(s as u64)).sum()
}

/// `p_f = [Σ_r π_r p_err(r)]^{n_f}`.
pub fn loss_prob_full(pi: &StationaryDistribution, ber: f64, element_size: ElementSize, retries_full: u32) -> Result<f64> {
    let loss = BitErrorLoss::new(ber, element_size)?;
    Ok(expected_loss(pi.probabilities(), &loss).powi(retries_full as i32))
}

/// `p_d = [Σ_r π_r Σ_d p(d|r) Σ_n p(n|r,d) p_err(d+n)]^{n_d}`.
pub fn loss_prob_diff(pi: &StationaryDistribution, scenario: &ScenarioParams, ber: f64, retries_diff: u32) -> Result<f64> {
    let loss = BitErrorLoss::new(ber, scenario.element_size)?;
    let sizes = MessageSizes::exact(scenario, pi)?;
    Ok(expected_loss(&sizes.diff, &loss).powi(retries_diff as i32))
}

/// Fraction of a full-dump cycle during which a connected neighbor holds
/// current information: `(1−p_f)(1−(1−p_d)^N) / (N p_d)`.
pub fn relevance_per_cycle(p_f: f64, p_d: f64, period: u64) -> f64 {
    if period <= 1 || p_d <= 0.0 {
        return 1.0 - p_f;
    }
    let n = period as f64;
    if n * p_d < SMALL_DIFF_LOSS {
        return (1.0 - p_f) * (1.0 - (n - 1.0) * p_d / 2.0);
    }
    let survive_all = -(n * (-p_d).ln_1p()).exp_m1();
    (1.0 - p_f) * survive_all / (n * p_d)
}

/// Discounts the per-cycle relevance by the startup gap of freshly connected
/// neighbors: `p̂ (1 − γN/2)`.
pub fn relevance_per_neighbor(p_hat_rel: f64, gamma: f64, period: u64) -> Result<f64> {
    let gap = gamma * period as f64 / 2.0;
    if gap >= 1.0 {
        return Err(Error::domain(
            "relevance",
            format!("gamma*N/2 = {gap} >= 1: the full-dump cycle exceeds the mean connected phase"),
        ));
    }
    Ok(p_hat_rel * (1.0 - gap))
}

/// Probability that every neighbor is relevant, assuming independence.
pub fn relevance_all(per_neighbor: &[f64]) -> f64 {
    per_neighbor.iter().product()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborRelevance {
    pub ber: f64,
    pub p_f: f64,
    pub p_d: f64,
    pub p_hat_rel: f64,
    pub p_rel: f64,
}

/// All model outputs for one scenario and protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticReport {
    pub mode: Mode,
    pub protocol: ProtocolParams,
    pub avg_r: f64,
    pub avg_d: f64,
    pub neighbors: Vec<NeighborRelevance>,
    pub p_rel_all: f64,
    /// Elements per slot.
    pub avg_v: f64,
    pub element_bits: u32,
    pub diagnostics: Vec<Diagnostic>,
}

impl AnalyticReport {
    pub fn avg_v_bits(&self) -> f64 {
        self.avg_v * f64::from(self.element_bits)
    }

    fn worst(&self, f: impl Fn(&NeighborRelevance) -> f64, max: bool) -> f64 {
        let it = self.neighbors.iter().map(f);
        if max {
            it.fold(f64::NEG_INFINITY, f64::max)
        } else {
            it.fold(f64::INFINITY, f64::min)
        }
    }

    /// Largest full-dump loss over neighbors.
    pub fn p_f(&self) -> f64 {
        self.worst(|n| n.p_f, true)
    }

    pub fn p_d(&self) -> f64 {
        self.worst(|n| n.p_d, true)
    }

    pub fn p_hat_rel(&self) -> f64 {
        self.worst(|n| n.p_hat_rel, false)
    }

    /// Smallest per-neighbor relevance.
    pub fn p_rel(&self) -> f64 {
        self.worst(|n| n.p_rel, false)
    }
}

/// Volume and all-neighbor relevance of one triple.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub volume: f64,
    pub relevance: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct NeighborLoss {
    ber: f64,
    full: f64,
    diff: f64,
}

/// Evaluates `(N, n_f, n_d)` triples of the incremental strategy for one
/// scenario; the message-size laws are computed once on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluator {
    mode: Mode,
    avg_r: f64,
    avg_d: f64,
    gamma: f64,
    element_bits: u32,
    neighbors: Vec<NeighborLoss>,
    diagnostics: Vec<Diagnostic>,
}

impl Evaluator {
    pub fn new(scenario: &ScenarioParams, mode: Mode) -> Result<Self> {
        match mode {
            Mode::Exact => Self::exact(scenario),
            Mode::Asymptotic => Self::asymptotic(scenario),
        }
    }

    pub fn exact(scenario: &ScenarioParams) -> Result<Self> {
        let pi = stationary::stationary(scenario)?;
        Self::with_stationary(scenario, &pi)
    }

    pub fn with_stationary(scenario: &ScenarioParams, pi: &StationaryDistribution) -> Result<Self> {
        Self::from_sizes(scenario, Mode::Exact, &MessageSizes::exact(scenario, pi)?)
    }

    pub fn asymptotic(scenario: &ScenarioParams) -> Result<Self> {
        Self::from_sizes(scenario, Mode::Asymptotic, &MessageSizes::asymptotic(scenario)?)
    }

    fn from_sizes(scenario: &ScenarioParams, mode: Mode, sizes: &MessageSizes) -> Result<Self> {
        let neighbors = scenario
            .neighbors
            .iter()
            .map(|&ber| {
                let (full, diff) = sizes.base_losses(&BitErrorLoss::new(ber, scenario.element_size)?);
                Ok(NeighborLoss { ber, full, diff })
            })
            .collect::<Result<_>>()?;
        Ok(Evaluator {
            mode,
            avg_r: sizes.avg_r,
            avg_d: sizes.avg_d,
            gamma: scenario.gamma,
            element_bits: scenario.element_size.bits(),
            neighbors,
            diagnostics: scenario.diagnostics(),
        })
    }

    /// Same message-size laws under a different churn rate.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::param("gamma", format!("must be finite and >= 0, got {gamma}")));
        }
        Ok(Evaluator { gamma, ..self.clone() })
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn avg_r(&self) -> f64 {
        self.avg_r
    }

    pub fn avg_d(&self) -> f64 {
        self.avg_d
    }

    pub fn evaluate(&self, period: u64, retries_full: u32, retries_diff: u32) -> Result<Evaluation> {
        let mut relevance = 1.0;
        for n in &self.neighbors {
            relevance *= self.neighbor(n, period, retries_full, retries_diff)?.p_rel;
        }
        Ok(Evaluation { volume: volume(self.avg_r, self.avg_d, period, retries_full, retries_diff), relevance })
    }

    fn neighbor(&self, n: &NeighborLoss, period: u64, retries_full: u32, retries_diff: u32) -> Result<NeighborRelevance> {
        let p_f = n.full.powi(retries_full as i32);
        let p_d = if period > 1 { n.diff.powi(retries_diff as i32) } else { 0.0 };
        let p_hat_rel = relevance_per_cycle(p_f, p_d, period);
        let p_rel = relevance_per_neighbor(p_hat_rel, self.gamma, period)?;
        Ok(NeighborRelevance { ber: n.ber, p_f, p_d, p_hat_rel, p_rel })
    }

    pub fn report(&self, protocol: &ProtocolParams) -> Result<AnalyticReport> {
        let avg_v = avg_control_volume(self.avg_r, self.avg_d, protocol)?;
        let (period, nf, nd) = (protocol.full_dump_period, protocol.retries_full, protocol.retries_diff);
        let neighbors = self
            .neighbors
            .iter()
            .map(|n| self.neighbor(n, period, nf, nd))
            .collect::<Result<Vec<_>>>()?;
        let p_rel_all = relevance_all(&neighbors.iter().map(|n| n.p_rel).collect::<Vec<_>>());
        let mut diagnostics = self.diagnostics.clone();
        let gamma_n = self.gamma * period as f64;
        if gamma_n > APPROXIMATION_GAMMA_N {
            diagnostics.push(Diagnostic::ApproximationRegime { gamma_n });
        }
        Ok(AnalyticReport {
            mode: self.mode,
            protocol: *protocol,
            avg_r: self.avg_r,
            avg_d: self.avg_d,
            neighbors,
            p_rel_all,
            avg_v,
            element_bits: self.element_bits,
            diagnostics,
        })
    }
}

/// Full-model report: stationary solve, then the closed forms.
pub fn analytic_report(scenario: &ScenarioParams, protocol: &ProtocolParams) -> Result<AnalyticReport> {
    Evaluator::exact(scenario)?.report(protocol)
}

/// Saturated-store report; λ is ignored and no stationary solve is done.
pub fn asymptotic_report(scenario: &ScenarioParams, protocol: &ProtocolParams) -> Result<AnalyticReport> {
    Evaluator::asymptotic(scenario)?.report(protocol)
}
