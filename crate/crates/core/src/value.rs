//! Linear value function and the semi-gradient TD(0) update.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hallway::{FEATURE_DIM, GAMMA};

#[derive(Debug, Error, PartialEq)]
pub enum ValueError {
    #[error("dimension mismatch: weights have {weights} entries, features have {features}")]
    Dimension { weights: usize, features: usize },
    #[error("step size must be finite and positive, got {0}")]
    StepSize(f64),
    #[error("non-finite TD error {delta} (prediction {prediction}, target {target})")]
    NonFiniteDelta {
        delta: f64,
        prediction: f64,
        target: f64,
    },
}

/// Prediction weights θ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueWeights(Vec<f64>);

impl Default for ValueWeights {
    fn default() -> Self {
        Self::zeros(FEATURE_DIM)
    }
}

impl ValueWeights {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn from_vec(w: Vec<f64>) -> Self {
        Self(w)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|w| w.is_finite())
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// A `(φ, r, φ′)` experience tuple; `φ′` is all zeros on termination.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub phi: Vec<f64>,
    pub reward: f64,
    pub next_phi: Vec<f64>,
    pub terminal: bool,
}

impl Transition {
    pub fn new(phi: Vec<f64>, reward: f64, next_phi: Vec<f64>, terminal: bool) -> Self {
        debug_assert!(!terminal || next_phi.iter().all(|&x| x == 0.0));
        Self {
            phi,
            reward,
            next_phi,
            terminal,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// θ⊤φ.
pub fn predict(theta: &ValueWeights, phi: &[f64]) -> Result<f64, ValueError> {
    if theta.len() != phi.len() {
        return Err(ValueError::Dimension {
            weights: theta.len(),
            features: phi.len(),
        });
    }
    Ok(dot(&theta.0, phi))
}

/// δ = r + γθ⊤φ′ − θ⊤φ.
pub fn td_error(theta: &ValueWeights, t: &Transition, gamma: f64) -> Result<f64, ValueError> {
    let prediction = predict(theta, &t.phi)?;
    let target = t.reward + gamma * predict(theta, &t.next_phi)?;
    let delta = target - prediction;
    if !delta.is_finite() {
        return Err(ValueError::NonFiniteDelta {
            delta,
            prediction,
            target,
        });
    }
    Ok(delta)
}

/// In-place θ ← θ + αδφ; returns δ.
pub fn td_update_in_place(
    theta: &mut ValueWeights,
    t: &Transition,
    step_size: f64,
    gamma: f64,
) -> Result<f64, ValueError> {
    if !(step_size.is_finite() && step_size > 0.0) {
        return Err(ValueError::StepSize(step_size));
    }
    let delta = td_error(theta, t, gamma)?;
    let scale = step_size * delta;
    for (w, x) in theta.0.iter_mut().zip(&t.phi) {
        if *x != 0.0 {
            *w += scale * x;
        }
    }
    Ok(delta)
}

/// θ + αδφ with the default discount γ = 0.9.
pub fn td_update(
    theta: &ValueWeights,
    t: &Transition,
    step_size: f64,
) -> Result<ValueWeights, ValueError> {
    let mut next = theta.clone();
    td_update_in_place(&mut next, t, step_size, GAMMA)?;
    Ok(next)
}
