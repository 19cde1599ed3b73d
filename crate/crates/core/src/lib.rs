//! Markov-order testing and desk-scale off-policy evaluation for offline
//! reinforcement-learning trajectories.
//!
//! The crate is organized around a single data model ([`data::TrajectoryDataset`])
//! and five subsystems:
//!
//! - [`data`] — episode/trajectory types, CSV/JSON ingestion, standardization,
//!   and the lag augmentation that turns a k-th order process into a
//!   first-order one.
//! - [`regress`] — random-feature ridge regression with episode-level
//!   cross-fitting folds; the nuisance estimator used everywhere else.
//! - [`markov`] — the forward-backward doubly-robust test of the Markov
//!   property, multiplier-bootstrap calibration, and sequential order
//!   selection.
//! - [`envs`] — simulators with known ground truth: the tiger POMDP, its
//!   fully-observed variant, and configurable linear high-order MDPs.
//! - [`rl`] / [`ope`] — fitted Q-iteration/evaluation, exact dynamic-programming
//!   oracles on tabular MDPs, and doubly-robust off-policy confidence
//!   intervals.
//!
//! Everything that draws randomness takes an explicit seed and derives
//! per-component streams through [`seed`], so results are reproducible
//! bit-for-bit regardless of worker count.

pub mod data;
pub mod envs;
pub mod markov;
pub mod ope;
pub mod regress;
pub mod rl;
pub mod seed;
