//! Desk-scale laboratory for learning-based false-data-injection detection in
//! DC state estimation, the adversarial attacks that target such detectors, and
//! a randomized multi-combination input-padding defense.
//!
//! The pipeline runs bottom-up through the modules:
//!
//! - [`casefile`] parses IEEE test systems into [`casefile::CaseSystem`]s.
//! - [`dcmodel`] builds the branch-flow measurement matrix and synthesizes
//!   noisy measurements from sampled load scenarios.
//! - [`estimator`] is the classical WLS estimator with residual bad-data
//!   detection and the `a = Hc` stealth identity.
//! - [`dataset`] labels normal and false measurement vectors.
//! - [`nnet`] is a small fully-connected detector with analytic gradients.
//! - [`attacks`] crafts adversarial false data against a detector.
//! - [`defense`] pads inputs at random positions for training and inference.
//! - [`harness`] runs experiment grids and writes CSV/JSON artifacts.
//!
//! With the default `parallel` feature, per-sample loops run on rayon. Every
//! sample draws from its own seed stream, so results do not depend on the
//! feature or on the worker count.

pub mod attacks;
pub mod casefile;
pub mod dataset;
pub mod dcmodel;
pub mod defense;
pub mod estimator;
pub mod harness;
pub mod nnet;
pub mod par;
pub mod seed;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
