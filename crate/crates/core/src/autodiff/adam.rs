use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum AdamError {
    #[error("non-finite gradient for parameter `{name}` at index {index}: {value}")]
    NonFiniteGradient {
        name: String,
        index: usize,
        value: f64,
    },
    #[error("parameter `{name}`: expected {expected} entries, got {found}")]
    ShapeMismatch {
        name: String,
        expected: usize,
        found: usize,
    },
    #[error("expected {expected} parameter groups, got {found}")]
    GroupCount { expected: usize, found: usize },
}

/// One parameter group handed to [`AdamState::step`].
pub struct ParamGrad<'a> {
    pub name: &'a str,
    pub values: &'a mut [f64],
    pub grad: &'a [f64],
}

/// Moment estimates for Adam with bias correction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    /// Zeroed moments for parameter groups of the given lengths.
    pub fn new(config: AdamConfig, group_lens: &[usize]) -> Self {
        Self {
            config,
            m: group_lens.iter().map(|&n| vec![0.0; n]).collect(),
            v: group_lens.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self) -> &[Vec<f64>] {
        &self.m
    }

    pub fn second_moment(&self) -> &[Vec<f64>] {
        &self.v
    }

    /// Applies one Adam update in place.
    ///
    /// Every gradient is validated before anything is written, so a rejected
    /// step leaves both the parameters and the moments untouched.
    pub fn step(&mut self, groups: &mut [ParamGrad<'_>]) -> Result<(), AdamError> {
        if groups.len() != self.m.len() {
            return Err(AdamError::GroupCount {
                expected: self.m.len(),
                found: groups.len(),
            });
        }
        for (group, m) in groups.iter().zip(&self.m) {
            for found in [group.values.len(), group.grad.len()] {
                if found != m.len() {
                    return Err(AdamError::ShapeMismatch {
                        name: group.name.to_string(),
                        expected: m.len(),
                        found,
                    });
                }
            }
            if let Some((index, &value)) =
                group.grad.iter().enumerate().find(|(_, g)| !g.is_finite())
            {
                return Err(AdamError::NonFiniteGradient {
                    name: group.name.to_string(),
                    index,
                    value,
                });
            }
        }

        self.t += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.t as i32;
        let correct1 = 1.0 - beta1.powi(t);
        let correct2 = 1.0 - beta2.powi(t);

        for ((group, m), v) in groups.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            for i in 0..m.len() {
                let g = group.grad[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] / correct1;
                let v_hat = v[i] / correct2;
                group.values[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

/// Single-group convenience wrapper around [`AdamState::step`].
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
) -> Result<(), AdamError> {
    state.step(&mut [ParamGrad {
        name: "params",
        values: params,
        grad: grads,
    }])
}
