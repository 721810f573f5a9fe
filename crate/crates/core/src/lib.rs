//! Dyna-style prediction in a non-stationary windy hallway.
//!
//! The crate provides the environment and its exact value oracle, a linear
//! TD(0) learner, replay-based Dyna baselines, SynthDyna's meta-learned
//! generative planning model with the reverse-mode differentiation it needs,
//! and a seeded experiment harness with the statistics used to compare them.

pub mod autodiff;
pub mod hallway;
pub mod harness;
pub mod replay;
pub mod stats;
pub mod synth;
pub mod value;
pub mod verify;
