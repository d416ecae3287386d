//! Tabular imitation learning laboratory.
//!
//! Finite-horizon MDPs with exact dynamic-programming evaluators, the hard
//! instances for behavioral cloning and moment matching, expert datasets,
//! an L1 occupancy-matching LP, the three learners (behavioral cloning,
//! empirical moment matching, replay estimation) and an experiment harness.
//!
//! Steps are 0-based throughout: a horizon-`H` MDP has steps `0..H` and
//! transitions out of steps `0..H-1`.

pub mod dataset;
pub mod error;
pub mod harness;
pub mod instances;
pub mod learners;
pub mod lp;
pub mod mdp;
pub mod rng;
pub mod verify;

pub use error::{Error, Result};
