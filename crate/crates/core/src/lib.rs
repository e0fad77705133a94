//! Control-information dissemination over lossy broadcast links.
//!
//! A node tracks up to `R` information elements (Poisson arrivals, geometric
//! per-slot deaths) and broadcasts them to `M` churning neighbors, either as a
//! full dump every `N`-th slot interleaved with differential updates, or as a
//! full dump every slot. This crate provides:
//!
//! * [`prob`]: per-message loss and the per-slot deletion / addition laws,
//! * [`stationary`]: the occupancy Markov chain and its stationary law,
//! * [`analytic`]: control volume and relevance probability of the
//!   incremental strategy, exact and in the saturated (`λ → ∞`) limit,
//! * [`tuner`]: exhaustive search for the cheapest `(N, n_f, n_d)` meeting a
//!   relevance target,
//! * [`sim`]: a slot-level Monte-Carlo simulator of the full-dump,
//!   incremental and cumulative strategies,
//! * [`experiments`]: the sweeps that compare all of the above.

pub mod analytic;
pub mod error;
pub mod experiments;
pub mod fmt;
pub mod params;
pub mod prob;
pub mod sim;
pub mod stationary;
pub mod tuner;


pub use analytic::{AnalyticReport, Evaluator, MessageSizes, Mode, NeighborRelevance};
pub use error::{Error, Result};
pub use params::{
    Diagnostic, ElementSize, LoadPoint, ProtocolParams, ScenarioParams, Strategy,
};
pub use prob::{BitErrorLoss, LossModel};
pub use sim::{SimConfig, SimulationReport};
pub use stationary::{StationaryDistribution, TransitionKernel};
pub use tuner::{TuneOptions, TuningResult};



