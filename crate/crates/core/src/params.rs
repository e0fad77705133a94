//! Scenario and protocol parameter records.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Mean element lifetimes shorter than this many slots are flagged.
pub const SHORT_LIFETIME_SLOTS: f64 = 10.0;

/// `γ·N` above this value is flagged as outside the startup-gap approximation.
pub const APPROXIMATION_GAMMA_N: f64 = 0.1;

/// Size of one information element, carried in bits.
///
/// Parses from text with an explicit unit: `16b`, `16bit`, `16bits`, `2B`,
/// `2byte` or `2bytes`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ElementSize(u32);

impl ElementSize {
    pub fn from_bits(bits: u32) -> Result<Self> {
        if bits == 0 {
            return Err(Error::param("element_size", "must be at least one bit"));
        }
        Ok(ElementSize(bits))
    }

    pub fn from_bytes(bytes: u32) -> Result<Self> {
        bytes
            .checked_mul(8)
            .ok_or_else(|| Error::param("element_size", "too large"))
            .and_then(Self::from_bits)
    }

    pub fn bits(self) -> u32 {
        self.0
    }
}

impl fmt::Display for ElementSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}b", self.0)
    }
}

impl FromStr for ElementSize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let split = s
            .find(|c: char| !c.is_ascii_digit())
            .ok_or_else(|| Error::param("element_size", format!("`{s}` has no unit suffix (b or B)")))?;
        let (num, unit) = s.split_at(split);
        let value: u32 = num
            .parse()
            .map_err(|_| Error::param("element_size", format!("`{s}` is not a whole number")))?;
        match unit.trim() {
            "b" | "bit" | "bits" => Self::from_bits(value),
            "B" | "byte" | "bytes" => Self::from_bytes(value),
            other => Err(Error::param("element_size", format!("unknown unit `{other}`"))),
        }
    }
}

impl Serialize for ElementSize {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ElementSize {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Environment of the disseminating node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioParams {
    /// Mean number of new elements per slot.
    pub lambda: f64,
    /// Inverse mean element lifetime, in 1/slots.
    pub mu: f64,
    /// Maximum number of tracked elements `R`.
    pub capacity: usize,
    pub element_size: ElementSize,
    /// Inverse mean connected-phase duration, in 1/slots.
    pub gamma: f64,
    /// Per-neighbor bit error rate; its length is the neighbor count `M`.
    pub neighbors: Vec<f64>,
    /// Required probability that all connected neighbors are up to date.
    pub p_thresh: f64,
}

impl ScenarioParams {
    /// Builds a scenario whose arrival rate is `load · μ · R`.
    pub fn from_load(
        load: f64,
        mu: f64,
        capacity: usize,
        element_size: ElementSize,
        gamma: f64,
        neighbors: Vec<f64>,
        p_thresh: f64,
    ) -> Result<Self> {
        if !(load > 0.0 && load.is_finite()) {
            return Err(Error::param("load", format!("must be positive and finite, got {load}")));
        }
        let s = ScenarioParams {
            lambda: load * mu * capacity as f64,
            mu,
            capacity,
            element_size,
            gamma,
            neighbors,
            p_thresh,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::param("lambda", format!("must be finite and >= 0, got {}", self.lambda)));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::param("mu", format!("must be finite and > 0, got {}", self.mu)));
        }
        if self.capacity == 0 {
            return Err(Error::param("capacity", "must be at least 1"));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::param("gamma", format!("must be finite and >= 0, got {}", self.gamma)));
        }
        if self.neighbors.is_empty() {
            return Err(Error::param("neighbors", "at least one neighbor is required"));
        }
        if let Some(ber) = self.neighbors.iter().find(|b| !(0.0..1.0).contains(*b)) {
            return Err(Error::param("neighbors", format!("bit error rate {ber} outside [0, 1)")));
        }
        if !(self.p_thresh > 0.0 && self.p_thresh < 1.0) {
            return Err(Error::param("p_thresh", format!("must lie in (0, 1), got {}", self.p_thresh)));
        }
        Ok(())
    }

    /// Per-slot deletion probability of one element, `1 - e^{-μ}`.
    pub fn deletion_prob(&self) -> f64 {
        -(-self.mu).exp_m1()
    }

    pub fn neighbor_count(&self) -> usize {
        self.neighbors.len()
    }

    pub fn load(&self) -> LoadPoint {
        LoadPoint { load: self.lambda / (self.mu * self.capacity as f64) }
    }

    /// Non-fatal model-validity findings for this scenario.
    pub fn diagnostics(&self) -> Vec<Diagnostic> {
        let lifetime = 1.0 / self.mu;
        if lifetime < SHORT_LIFETIME_SLOTS {
            vec![Diagnostic::ShortLifetime { mean_lifetime: lifetime }]
        } else {
            Vec::new()
        }
    }

    /// Stable 64-bit identifier of the scenario (FNV-1a over its JSON form).
    pub fn stable_hash(&self) -> u64 {
        let json = serde_json::to_string(self).expect("scenario serializes");
        json.bytes().fold(0xcbf2_9ce4_8422_2325_u64, |h, b| {
            (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
        })
    }
}

/// Dimensionless offered load `λ / (μ R)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadPoint {
    pub load: f64,
}

impl LoadPoint {
    /// Checks `load · μ · R = λ` to 1e-12 relative.
    pub fn is_consistent_with(&self, scenario: &ScenarioParams) -> bool {
        let lambda = self.load * scenario.mu * scenario.capacity as f64;
        (lambda - scenario.lambda).abs() <= 1e-12 * scenario.lambda.abs().max(f64::MIN_POSITIVE)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Every message is a full dump.
    #[serde(alias = "full")]
    FullDumpOnly,
    /// Differentials carry the changes of the current slot only.
    Incremental,
    /// Differentials carry every change since the last full dump.
    Cumulative,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::FullDumpOnly, Strategy::Incremental, Strategy::Cumulative];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::FullDumpOnly => "full",
            Strategy::Incremental => "incremental",
            Strategy::Cumulative => "cumulative",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" | "full-dump-only" | "fulldump" => Ok(Strategy::FullDumpOnly),
            "incremental" => Ok(Strategy::Incremental),
            "cumulative" => Ok(Strategy::Cumulative),
            other => Err(Error::param("strategy", format!("unknown strategy `{other}`"))),
        }
    }
}

/// Strategy plus the tunable triple `(N, n_f, n_d)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ProtocolParams {
    pub strategy: Strategy,
    /// Full dump period `N` in slots.
    pub full_dump_period: u64,
    /// Transmission attempts per full dump, `n_f`.
    pub retries_full: u32,
    /// Transmission attempts per differential, `n_d`.
    pub retries_diff: u32,
}

impl ProtocolParams {
    /// Validates the triple. `FullDumpOnly` requires `N = 1` and normalizes
    /// `n_d` to 1.
    pub fn new(strategy: Strategy, period: u64, retries_full: u32, retries_diff: u32) -> Result<Self> {
        if period == 0 {
            return Err(Error::param("full_dump_period", "must be at least 1"));
        }
        if retries_full == 0 {
            return Err(Error::param("retries_full", "must be at least 1"));
        }
        if retries_diff == 0 {
            return Err(Error::param("retries_diff", "must be at least 1"));
        }
        if strategy == Strategy::FullDumpOnly && period != 1 {
            return Err(Error::param("full_dump_period", "full-dump-only strategy requires N = 1"));
        }
        let retries_diff = if strategy == Strategy::FullDumpOnly { 1 } else { retries_diff };
        Ok(ProtocolParams { strategy, full_dump_period: period, retries_full, retries_diff })
    }

    pub fn full_dump_only(retries_full: u32) -> Result<Self> {
        Self::new(Strategy::FullDumpOnly, 1, retries_full, 1)
    }

    pub fn incremental(period: u64, retries_full: u32, retries_diff: u32) -> Result<Self> {
        Self::new(Strategy::Incremental, period, retries_full, retries_diff)
    }

    pub fn cumulative(period: u64, retries_full: u32, retries_diff: u32) -> Result<Self> {
        Self::new(Strategy::Cumulative, period, retries_full, retries_diff)
    }

    pub fn is_full_dump_slot(&self, slot: u64) -> bool {
        slot % self.full_dump_period == 0
    }
}

/// Non-fatal findings about modelling assumptions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Diagnostic {
    /// Mean element lifetime is not much longer than one slot.
    ShortLifetime { mean_lifetime: f64 },
    /// `γ·N` is large enough that the startup-gap correction is approximate.
    ApproximationRegime { gamma_n: f64 },
    /// The optimum uses the largest allowed retry count.
    RetryBoundary { retries_full: u32, retries_diff: u32, retry_limit: u32 },
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::ShortLifetime { mean_lifetime } => write!(
                f,
                "mean element lifetime {mean_lifetime:.3} slots is below {SHORT_LIFETIME_SLOTS}; the per-slot model assumes it is much longer"
            ),
            Diagnostic::ApproximationRegime { gamma_n } => write!(
                f,
                "gamma*N = {gamma_n:.4} exceeds {APPROXIMATION_GAMMA_N}; the startup-gap correction is approximate"
            ),
            Diagnostic::RetryBoundary { retries_full, retries_diff, retry_limit } => write!(
                f,
                "optimum (n_f={retries_full}, n_d={retries_diff}) sits on the retry limit {retry_limit}; consider raising it"
            ),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario() -> ScenarioParams {
        ScenarioParams::from_load(1.0, 0.01, 1000, ElementSize::from_bytes(2).unwrap(), 0.001, vec![6.6e-6], 0.95)
            .unwrap()
    }

    #[test]
    fn element_size_units() {
        assert_eq!("2B".parse::<ElementSize>().unwrap().bits(), 16);
        assert_eq!("2 bytes".parse::<ElementSize>().unwrap().bits(), 16);
        assert_eq!("16b".parse::<ElementSize>().unwrap().bits(), 16);
        assert_eq!("7bits".parse::<ElementSize>().unwrap().bits(), 7);
        assert!("16".parse::<ElementSize>().is_err());
        assert!("0b".parse::<ElementSize>().is_err());
        assert!("3kB".parse::<ElementSize>().is_err());
    }

    #[test]
    fn load_point_round_trip() {
        let s = scenario();
        assert!((s.lambda - 10.0).abs() < 1e-12);
        assert!(s.load().is_consistent_with(&s));
        assert!((s.load().load - 1.0).abs() < 1e-12);
    }

    #[test]
    fn validation_rejects_bad_fields() {
        let mut s = scenario();
        s.neighbors = vec![1.0];
        assert!(matches!(s.validate(), Err(Error::InvalidParam { field: "neighbors", .. })));
        let mut s = scenario();
        s.p_thresh = 1.0;
        assert!(s.validate().is_err());
        let mut s = scenario();
        s.mu = 0.0;
        assert!(s.validate().is_err());
        let mut s = scenario();
        s.neighbors.clear();
        assert!(s.validate().is_err());
    }

    #[test]
    fn short_lifetime_is_a_warning() {
        let mut s = scenario();
        assert!(s.diagnostics().is_empty());
        s.mu = 0.2;
        assert!(s.validate().is_ok());
        assert!(matches!(s.diagnostics()[..], [Diagnostic::ShortLifetime { .. }]));
    }

    #[test]
    fn full_dump_only_normalizes() {
        let p = ProtocolParams::new(Strategy::FullDumpOnly, 1, 3, 5).unwrap();
        assert_eq!(p.retries_diff, 1);
        assert!(ProtocolParams::new(Strategy::FullDumpOnly, 2, 1, 1).is_err());
        assert!(ProtocolParams::incremental(0, 1, 1).is_err());
        assert!(ProtocolParams::incremental(4, 0, 1).is_err());
    }

    #[test]
    fn stable_hash_tracks_content() {
        let a = scenario();
        let mut b = scenario();
        assert_eq!(a.stable_hash(), b.stable_hash());
        b.gamma = 0.002;
        assert_ne!(a.stable_hash(), b.stable_hash());
    }
}
