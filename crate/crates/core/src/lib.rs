//! A deterministic, seeded simulator of a UAV-assisted mobile edge computing
//! system operating on two time scales.
//!
//! At the slot scale, mobile devices negotiate computing-resource prices with
//! terrestrial and aerial MEC servers through alternating-offers bargaining,
//! and pending tasks are assigned to servers through a capacity-constrained
//! many-to-one matching. At the epoch scale, UAV positions are re-planned by
//! successive convex approximation of the utility surrogate, and device
//! mobility advances under a Gauss-Markov process.
//!
//! The crate exposes the building blocks (channel, cost, bargaining, matching,
//! trajectory), the slot-loop simulator with the TJCCT strategy and the
//! LS/GS/NS/CS baselines, and an experiment driver with file emission. All
//! randomness is drawn from counter-based per-entity streams so that runs are
//! reproducible bit for bit.

pub mod bargain;
pub mod channel;
pub mod config;
pub mod cost;
// pub mod experiment;
pub mod matching;
pub mod rng;
pub mod scenario;
pub mod sim;
pub mod trajectory;

// TODO: restore re-exports once sim and config land.
// pub use config::ExperimentConfig;
// pub use sim::{run, RunOutput, StrategyKind};
