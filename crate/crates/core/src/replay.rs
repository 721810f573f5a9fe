//! Experience replay for the Dyna baselines.
//!
//! The baselines do not fit a model; they replay stored veridical transitions.
//! An all-pass buffer samples transitions in proportion to how often they were
//! seen. A stable buffer keeps only non-terminating transitions, whose
//! zero reward does not depend on the active regime.

use std::borrow::Cow;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::value::{td_update_in_place, Transition, ValueError, ValueWeights};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplayFilter {
    All,
    /// Non-terminal, zero-reward transitions only.
    Stable,
}

impl ReplayFilter {
    pub fn admits(self, t: &Transition) -> bool {
        match self {
            ReplayFilter::All => true,
            ReplayFilter::Stable => !t.terminal && t.reward == 0.0,
        }
    }
}

/// Anything that can supply transitions for planning updates.
pub trait TransitionSource {
    /// `None` when no experience is available yet.
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<Cow<'_, Transition>>;
}

#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    filter: ReplayFilter,
    capacity: Option<usize>,
    entries: Vec<Transition>,
    // next slot to overwrite once at capacity
    cursor: usize,
}

impl ReplayBuffer {
    /// Unbounded buffer.
    pub fn new(filter: ReplayFilter) -> Self {
        Self {
            filter,
            capacity: None,
            entries: Vec::new(),
            cursor: 0,
        }
    }

    /// Ring buffer that overwrites its oldest entry once full.
    pub fn with_capacity(filter: ReplayFilter, capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity: Some(capacity),
            entries: Vec::with_capacity(capacity),
            ..Self::new(filter)
        }
    }

    pub fn filter(&self) -> ReplayFilter {
        self.filter
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Transition] {
        &self.entries
    }

    /// Stores `t` if the filter admits it; returns whether it was stored.
    pub fn record(&mut self, t: Transition) -> bool {
        if !self.filter.admits(&t) {
            return false;
        }
        match self.capacity {
            Some(cap) if self.entries.len() == cap => {
                self.entries[self.cursor] = t;
                self.cursor = (self.cursor + 1) % cap;
            }
            _ => self.entries.push(t),
        }
        true
    }

    /// Uniform draw over stored entries.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<&Transition> {
        if self.entries.is_empty() {
            return None;
        }
        Some(&self.entries[rng.random_range(0..self.entries.len())])
    }
}

impl TransitionSource for ReplayBuffer {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<Cow<'_, Transition>> {
        self.sample(rng).map(Cow::Borrowed)
    }
}

/// A source that always yields the same transition.
#[derive(Clone, Debug)]
pub struct Fixed(pub Transition);

impl TransitionSource for Fixed {
    fn draw<R: Rng + ?Sized>(&self, _rng: &mut R) -> Option<Cow<'_, Transition>> {
        Some(Cow::Borrowed(&self.0))
    }
}

/// Applies up to `k` TD updates with step size `beta`, each on a fresh draw.
///
/// Stops early, leaving θ as it is, if the source has nothing to offer.
/// Returns the number of updates applied.
pub fn plan<S, R>(
    theta: &mut ValueWeights,
    source: &S,
    k: usize,
    beta: f64,
    gamma: f64,
    rng: &mut R,
) -> Result<usize, ValueError>
where
    S: TransitionSource + ?Sized,
    R: Rng + ?Sized,
{
    for done in 0..k {
        let Some(t) = source.draw(rng) else {
            return Ok(done);
        };
        td_update_in_place(theta, &t, beta, gamma)?;
    }
    Ok(k)
}
