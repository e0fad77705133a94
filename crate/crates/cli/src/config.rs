//! Experiment configuration file.

use std::path::PathBuf;

use diffcast::experiments::default_gamma_grid;
use diffcast::params::{ElementSize, ProtocolParams, ScenarioParams, Strategy};
use diffcast::prob::ber_for_loss;
use diffcast::sim::{default_warmup, SimConfig};
use serde::{Deserialize, Serialize};

/// A configuration problem, located by its field path.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{path}: {message}")]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

fn err(path: &str, message: impl Into<String>) -> ConfigError {
    ConfigError { path: path.to_string(), message: message.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protocol: Option<ProtocolBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<RunBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub figures: Option<FiguresBlock>,
}

/// Bit error rate of every neighbor, or one per neighbor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Ber {
    Uniform(f64),
    PerNeighbor(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// `λ / (μ R)`; alternative to `lambda`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub load: Option<f64>,
    pub mu: f64,
    pub capacity: usize,
    pub element_size: ElementSize,
    pub gamma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ber: Option<Ber>,
    /// Loss probability of an `R`-element message; alternative to `ber`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_at_capacity: Option<f64>,
    /// Neighbor count when the BER is given as a single value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub neighbors: Option<usize>,
    pub p_thresh: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolBlock {
    pub strategy: Strategy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retries_full: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retries_diff: Option<u32>,
    /// Largest `n_f`, `n_d` the tuner tries.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retry_limit: Option<u32>,
    /// Cap on `N` when `γ = 0`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub static_period_limit: Option<u64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runs: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cancel_transients: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Load,
    Gamma,
    Ber,
    #[serde(rename = "M")]
    Neighbors,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    pub axis: Axis,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    /// Significant digits of numbers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub precision: Option<usize>,
}

/// Grids of the figure bundles; each falls back to a default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiguresBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loads: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mus: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gammas: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub neighbor_counts: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_levels: Option<Vec<f64>>,
    /// Counted slots per simulated run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measured_slots: Option<u64>,
}

pub const DEFAULT_LOADS: [f64; 6] = [0.1, 0.25, 0.5, 0.75, 1.0, 1.25];
pub const DEFAULT_MUS: [f64; 2] = [0.005, 0.01];
pub const DEFAULT_NEIGHBOR_COUNTS: [usize; 2] = [10, 50];
pub const DEFAULT_LOSS_LEVELS: [f64; 2] = [0.01, 0.1];
pub const DEFAULT_MEASURED_SLOTS: u64 = 100_000;

/// Resolved figure grids.
#[derive(Debug, Clone, PartialEq)]
pub struct FigureGrids {
    pub loads: Vec<f64>,
    pub mus: Vec<f64>,
    pub gammas: Vec<f64>,
    pub neighbor_counts: Vec<usize>,
    pub loss_levels: Vec<f64>,
    pub measured_slots: u64,
}

/// One grid point: the swept value (if any) and its scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub axis_value: Option<f64>,
    pub scenario: ScenarioParams,
}

fn strictly_increasing(path: &str, values: &[f64]) -> Result<(), ConfigError> {
    if values.is_empty() {
        return Err(err(path, "must not be empty"));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(err(path, format!("value {v} is not finite")));
    }
    if values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(err(path, "values must be strictly increasing"));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let c: ExperimentConfig = toml::from_str(text).map_err(|e| err("config", e.message().to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.base_scenario()?;
        self.fixed_protocol()?;
        if self.seed().is_some_and(|s| s > i64::MAX as u64) {
            return Err(err("run.seed", format!("must not exceed {}", i64::MAX)));
        }
        if let Some(s) = &self.sweep {
            strictly_increasing("sweep.values", &s.values)?;
            for &v in &s.values {
                self.scenario_at(s.axis, v)?;
            }
        }
        if let Some(p) = &self.output.as_ref().and_then(|o| o.precision) {
            if !(1..=17).contains(p) {
                return Err(err("output.precision", "must lie in 1..=17"));
            }
        }
        if let Some(f) = &self.figures {
            for (path, v) in [("figures.loads", &f.loads), ("figures.mus", &f.mus), ("figures.gammas", &f.gammas)] {
                if let Some(v) = v {
                    strictly_increasing(path, v)?;
                }
            }
            if let Some(v) = &f.loss_levels {
                strictly_increasing("figures.loss_levels", v)?;
            }
            if let Some(v) = &f.neighbor_counts {
                let as_f: Vec<f64> = v.iter().map(|&m| m as f64).collect();
                strictly_increasing("figures.neighbor_counts", &as_f)?;
                if v[0] == 0 {
                    return Err(err("figures.neighbor_counts", "counts must be positive"));
                }
            }
        }
        Ok(())
    }

    fn bers(&self, count_override: Option<usize>) -> Result<Vec<f64>, ConfigError> {
        let s = &self.scenario;
        let uniform = |ber: f64| -> Result<Vec<f64>, ConfigError> {
            let m = count_override.or(s.neighbors).unwrap_or(1);
            if m == 0 {
                return Err(err("scenario.neighbors", "must be at least 1"));
            }
            Ok(vec![ber; m])
        };
        match (&s.ber, s.loss_at_capacity) {
            (Some(_), Some(_)) => Err(err("scenario", "give either `ber` or `loss_at_capacity`, not both")),
            (None, None) => Err(err("scenario", "one of `ber` or `loss_at_capacity` is required")),
            (Some(Ber::Uniform(b)), None) => uniform(*b),
            (Some(Ber::PerNeighbor(list)), None) => {
                if list.is_empty() {
                    return Err(err("scenario.ber", "list must not be empty"));
                }
                if let Some(m) = s.neighbors {
                    if m != list.len() {
                        return Err(err("scenario.neighbors", format!("is {m} but `ber` lists {} values", list.len())));
                    }
                }
                match count_override {
                    Some(m) if m != list.len() => {
                        if list.iter().any(|b| *b != list[0]) {
                            return Err(err("sweep.axis", "cannot resize a per-neighbor `ber` list with distinct values"));
                        }
                        Ok(vec![list[0]; m])
                    }
                    _ => Ok(list.clone()),
                }
            }
            (None, Some(loss)) => {
                let ber = ber_for_loss(loss, s.capacity as u64, s.element_size)
                    .map_err(|e| err("scenario.loss_at_capacity", e.to_string()))?;
                uniform(ber)
            }
        }
    }

    fn lambda(&self, load_override: Option<f64>) -> Result<f64, ConfigError> {
        let s = &self.scenario;
        match (s.lambda, s.load, load_override) {
            (Some(_), Some(_), _) => Err(err("scenario", "give exactly one of `lambda` or `load`")),
            (None, None, None) => Err(err("scenario", "one of `lambda` or `load` is required")),
            (_, _, Some(load)) => Ok(load * s.mu * s.capacity as f64),
            (Some(l), None, None) => Ok(l),
            (None, Some(load), None) => {
                if !(load > 0.0 && load.is_finite()) {
                    return Err(err("scenario.load", format!("must be positive and finite, got {load}")));
                }
                Ok(load * s.mu * s.capacity as f64)
            }
        }
    }

    fn build(&self, lambda: f64, gamma: f64, neighbors: Vec<f64>) -> Result<ScenarioParams, ConfigError> {
        let s = &self.scenario;
        let p = ScenarioParams {
            lambda,
            mu: s.mu,
            capacity: s.capacity,
            element_size: s.element_size,
            gamma,
            neighbors,
            p_thresh: s.p_thresh,
        };
        p.validate().map_err(|e| match e {
            diffcast::Error::InvalidParam { field, detail } => err(&format!("scenario.{field}"), detail),
            other => err("scenario", other.to_string()),
        })?;
        Ok(p)
    }

    pub fn base_scenario(&self) -> Result<ScenarioParams, ConfigError> {
        self.build(self.lambda(None)?, self.scenario.gamma, self.bers(None)?)
    }

    fn scenario_at(&self, axis: Axis, value: f64) -> Result<ScenarioParams, ConfigError> {
        match axis {
            Axis::Load => {
                if !(value > 0.0) {
                    return Err(err("sweep.values", format!("load {value} must be positive")));
                }
                self.build(self.lambda(Some(value))?, self.scenario.gamma, self.bers(None)?)
            }
            Axis::Gamma => self.build(self.lambda(None)?, value, self.bers(None)?),
            Axis::Ber => {
                let m = self.bers(None)?.len();
                self.build(self.lambda(None)?, self.scenario.gamma, vec![value; m])
            }
            Axis::Neighbors => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(err("sweep.values", format!("neighbor count {value} must be a positive integer")));
                }
                self.build(self.lambda(None)?, self.scenario.gamma, self.bers(Some(value as usize))?)
            }
        }
    }

    /// Sweep points in order, or the single base point.
    pub fn grid(&self) -> Result<Vec<GridPoint>, ConfigError> {
        match &self.sweep {
            None => Ok(vec![GridPoint { axis_value: None, scenario: self.base_scenario()? }]),
            Some(s) => s
                .values
                .iter()
                .map(|&v| Ok(GridPoint { axis_value: Some(v), scenario: self.scenario_at(s.axis, v)? }))
                .collect(),
        }
    }

    pub fn strategy(&self) -> Strategy {
        self.protocol.map_or(Strategy::Incremental, |p| p.strategy)
    }

    /// The fixed triple, if the protocol block gives one.
    pub fn fixed_protocol(&self) -> Result<Option<ProtocolParams>, ConfigError> {
        let Some(p) = self.protocol else { return Ok(None) };
        let triple = match (p.strategy, p.period, p.retries_full, p.retries_diff) {
            (Strategy::FullDumpOnly, period, Some(nf), _) => Some((period.unwrap_or(1), nf, 1)),
            (_, Some(n), Some(nf), Some(nd)) => Some((n, nf, nd)),
            (_, None, None, None) => None,
            _ => return Err(err("protocol", "give all of `period`, `retries_full`, `retries_diff`, or none")),
        };
        triple
            .map(|(n, nf, nd)| {
                ProtocolParams::new(p.strategy, n, nf, nd).map_err(|e| match e {
                    diffcast::Error::InvalidParam { field, detail } => err(&format!("protocol.{field}"), detail),
                    other => err("protocol", other.to_string()),
                })
            })
            .transpose()
    }

    pub fn tune_options(&self) -> diffcast::TuneOptions {
        let mut o = diffcast::TuneOptions::default();
        if let Some(p) = self.protocol {
            if let Some(l) = p.retry_limit {
                o.retry_limit = l;
            }
            if let Some(l) = p.static_period_limit {
                o.static_period_limit = l;
            }
            if p.strategy == Strategy::FullDumpOnly {
                o.max_period = Some(1);
            }
        }
        o
    }

    pub fn seed(&self) -> Option<u64> {
        self.run.and_then(|r| r.seed)
    }

    /// Simulation settings for `scenario`; requires a seed.
    pub fn sim_config(&self, scenario: &ScenarioParams) -> Result<SimConfig, ConfigError> {
        let run = self.run.unwrap_or_default();
        let seed = run.seed.ok_or_else(|| err("run.seed", "a seed is required for simulation"))?;
        let warmup = run.warmup.unwrap_or_else(|| default_warmup(scenario.mu));
        let c = SimConfig {
            horizon: run.horizon.unwrap_or(SimConfig::DEFAULT_HORIZON),
            warmup,
            runs: run.runs.unwrap_or(SimConfig::DEFAULT_RUNS),
            seed,
            cancel_transients: run.cancel_transients.unwrap_or(true),
        };
        c.validate().map_err(|e| match e {
            diffcast::Error::InvalidParam { field, detail } => err(&format!("run.{field}"), detail),
            other => err("run", other.to_string()),
        })?;
        Ok(c)
    }

    pub fn runs(&self) -> u32 {
        self.run.and_then(|r| r.runs).unwrap_or(SimConfig::DEFAULT_RUNS)
    }

    pub fn precision(&self) -> usize {
        self.output.as_ref().and_then(|o| o.precision).unwrap_or(diffcast::fmt::CSV_DIGITS)
    }

    pub fn csv_path(&self) -> Option<PathBuf> {
        self.output.as_ref().and_then(|o| o.csv.clone())
    }

    pub fn figure_grids(&self) -> FigureGrids {
        let f = self.figures.clone().unwrap_or_default();
        FigureGrids {
            loads: f.loads.unwrap_or_else(|| DEFAULT_LOADS.to_vec()),
            mus: f.mus.unwrap_or_else(|| DEFAULT_MUS.to_vec()),
            gammas: f.gammas.unwrap_or_else(|| default_gamma_grid(13)),
            neighbor_counts: f.neighbor_counts.unwrap_or_else(|| DEFAULT_NEIGHBOR_COUNTS.to_vec()),
            loss_levels: f.loss_levels.unwrap_or_else(|| DEFAULT_LOSS_LEVELS.to_vec()),
            measured_slots: f.measured_slots.unwrap_or(DEFAULT_MEASURED_SLOTS),
        }
    }
}
