use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::hallway::{Schedule, EPISODE_LEN, GAMMA};

use super::HarnessError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Algorithm {
    /// TD(0) on veridical experience only.
    #[serde(rename = "modelfree")]
    ModelFree,
    /// Dyna replaying every stored transition.
    #[serde(rename = "allexp")]
    AllExperience,
    /// Dyna replaying only non-terminating transitions.
    #[serde(rename = "stableexp")]
    StableExperience,
    /// Dyna with the meta-learned generative model.
    #[serde(rename = "synthdyna")]
    SynthDyna,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::ModelFree,
        Algorithm::AllExperience,
        Algorithm::StableExperience,
        Algorithm::SynthDyna,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::ModelFree => "modelfree",
            Algorithm::AllExperience => "allexp",
            Algorithm::StableExperience => "stableexp",
            Algorithm::SynthDyna => "synthdyna",
        }
    }

    pub fn plans(self) -> bool {
        self != Algorithm::ModelFree
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| HarnessError::UnknownAlgorithm(s.to_string()))
    }
}

/// Everything that determines one trial, apart from its index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub algorithm: Algorithm,
    pub episodes: usize,
    pub schedule: Schedule,
    pub gamma: f64,
    /// Step size for veridical updates; 0 disables them.
    pub alpha: f64,
    /// Step size for planning updates; 0 disables planning.
    pub beta: f64,
    /// Step size of the differentiated inner planning loop.
    pub zeta: f64,
    /// Planning updates per environment step, and inner meta-loss steps.
    pub k: usize,
    pub hidden: usize,
    pub noise_dim: usize,
    pub batch: usize,
    pub meta_lr: f64,
    /// Environment steps between meta-updates.
    pub meta_every: usize,
    pub seed: u64,
}

impl TrialConfig {
    /// Hand-set defaults shared by every algorithm.
    pub fn new(algorithm: Algorithm) -> Self {
        Self {
            algorithm,
            episodes: 15_000,
            schedule: Schedule::default(),
            gamma: GAMMA,
            alpha: 0.1,
            beta: 0.05,
            zeta: 0.05,
            k: 5,
            hidden: 32,
            noise_dim: 8,
            batch: 16,
            meta_lr: 1e-3,
            meta_every: 1,
            seed: 0,
        }
    }

    /// Settings chosen by grid search on the switching hallway
    /// (see the README for the grid and how to rerun it).
    pub fn tuned(algorithm: Algorithm) -> Self {
        let base = Self::new(algorithm);
        match algorithm {
            Algorithm::ModelFree => Self { alpha: 0.3, ..base },
            Algorithm::AllExperience => Self { alpha: 0.3, beta: 0.01, ..base },
            Algorithm::StableExperience => Self { alpha: 0.2, beta: 0.2, ..base },
            Algorithm::SynthDyna => Self {
                alpha: 0.25,
                beta: 0.1,
                zeta: 0.1,
                meta_lr: 1e-4,
                ..base
            },
        }
    }

    pub fn total_steps(&self) -> usize {
        self.episodes * EPISODE_LEN
    }

    /// Seed of trial `trial`: `seed + trial`.
    pub fn trial_seed(&self, trial: usize) -> u64 {
        self.seed.wrapping_add(trial as u64)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let invalid = |name: &'static str, value: f64, reason: &'static str| {
            Err(HarnessError::InvalidConfig {
                name,
                value: value.to_string(),
                reason,
            })
        };
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(v.is_finite() && v >= 0.0) {
                return invalid(name, v, "must be finite and non-negative");
            }
        }
        if !(self.gamma.is_finite() && (0.0..=1.0).contains(&self.gamma)) {
            return invalid("gamma", self.gamma, "must lie in [0, 1]");
        }
        if self.episodes == 0 {
            return invalid("episodes", 0.0, "must be positive");
        }
        if let Schedule::Switching { period: 0 } = self.schedule {
            return invalid("period", 0.0, "must be positive");
        }
        if self.algorithm == Algorithm::SynthDyna {
            for (name, v) in [("zeta", self.zeta), ("meta_lr", self.meta_lr)] {
                if !(v.is_finite() && v > 0.0) {
                    return invalid(name, v, "must be finite and positive");
                }
            }
            for (name, v) in [
                ("hidden", self.hidden),
                ("noise_dim", self.noise_dim),
                ("batch", self.batch),
                ("meta_every", self.meta_every),
            ] {
                if v == 0 {
                    return invalid(name, 0.0, "must be positive");
                }
            }
        }
        Ok(())
    }
}
