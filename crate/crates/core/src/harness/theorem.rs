//! Call-count comparison between an environment model and an aggregating
//! model that share a TD fixed point.
//!
//! `k` one-hot states each move to a shared terminal state with reward 1, so
//! every true value is 1. The environment model returns `(e_i, 1, 0)`,
//! sweeping `i` over the states. The aggregating model treats the states as
//! one and returns `(Σ e_i, k, 0)`; scaling the reward by `k` keeps the
//! symmetric fixed point at θ_i = 1. Starting from θ = 0, each environment
//! call moves one coordinate by a factor `1 − α`, while each aggregated call
//! moves all of them by `1 − αk`.

use serde::{Deserialize, Serialize};

use crate::value::{td_update_in_place, Transition, ValueWeights};

use super::HarnessError;

/// Safety cap on calls per model.
pub const MAX_CALLS: usize = 10_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoremDemo {
    pub k: usize,
    pub alpha: f64,
    pub epsilon: f64,
    pub env_calls: usize,
    pub agg_calls: usize,
    pub env_theta: Vec<f64>,
    pub agg_theta: Vec<f64>,
}

impl TheoremDemo {
    /// Largest |θ_i − 1| over both final weight vectors.
    pub fn max_fixed_point_error(&self) -> f64 {
        self.env_theta
            .iter()
            .chain(&self.agg_theta)
            .map(|w| (w - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

fn distance(theta: &ValueWeights) -> f64 {
    theta
        .as_slice()
        .iter()
        .map(|w| (w - 1.0).abs())
        .fold(0.0, f64::max)
}

fn calls_until<F: FnMut(usize) -> Transition>(
    k: usize,
    alpha: f64,
    epsilon: f64,
    mut model: F,
) -> Result<(usize, ValueWeights), HarnessError> {
    let mut theta = ValueWeights::zeros(k);
    let mut calls = 0;
    while distance(&theta) >= epsilon {
        if calls == MAX_CALLS {
            return Err(HarnessError::InvalidConfig {
                name: "eps",
                value: epsilon.to_string(),
                reason: "not reached within the call limit",
            });
        }
        let t = model(calls);
        // φ′ = 0, so the discount plays no role
        td_update_in_place(&mut theta, &t, alpha, 0.0).map_err(|e| HarnessError::Diverged {
            step: calls,
            detail: e.to_string(),
        })?;
        calls += 1;
    }
    Ok((calls, theta))
}

pub fn theorem_demo(k: usize, alpha: f64, epsilon: f64) -> Result<TheoremDemo, HarnessError> {
    let invalid = |name, value: f64, reason| {
        Err(HarnessError::InvalidConfig {
            name,
            value: value.to_string(),
            reason,
        })
    };
    if k == 0 {
        return invalid("k", 0.0, "must be at least 1");
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return invalid("alpha", alpha, "must be finite and positive");
    }
    if alpha * k as f64 >= 1.0 {
        return invalid("alpha", alpha, "alpha * k must be below 1 for both recurrences to contract");
    }
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return invalid("eps", epsilon, "must be finite and positive");
    }

    let one_hot = |i: usize| {
        let mut v = vec![0.0; k];
        v[i] = 1.0;
        v
    };
    let (env_calls, env_theta) =
        calls_until(k, alpha, epsilon, |call| Transition::new(one_hot(call % k), 1.0, vec![0.0; k], true))?;
    let (agg_calls, agg_theta) = calls_until(k, alpha, epsilon, |_| {
        Transition::new(vec![1.0; k], k as f64, vec![0.0; k], true)
    })?;

    Ok(TheoremDemo {
        k,
        alpha,
        epsilon,
        env_calls,
        agg_calls,
        env_theta: env_theta.into_vec(),
        agg_theta: agg_theta.into_vec(),
    })
}
