//! The non-stationary windy hallway.
//!
//! A 3 × 6 grid entered at (row 1, col 0). Each step moves one column east
//! and, with equal probability, one row north or south; a move that would
//! leave the grid stays in its row. Column 5 is terminal. The only non-zero
//! reward is paid on termination, and which terminal cell pays depends on a
//! [`Regime`] that alternates every [`REGIME_PERIOD`] episodes. The agent's
//! features encode only the cell, so the regime is hidden.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ROWS: usize = 3;
pub const COLS: usize = 6;
/// Index of the terminal column.
pub const TERMINAL_COL: usize = COLS - 1;
/// One feature per non-terminal cell.
pub const FEATURE_DIM: usize = ROWS * TERMINAL_COL;
/// Every episode takes exactly this many steps.
pub const EPISODE_LEN: usize = TERMINAL_COL;
pub const REGIME_PERIOD: usize = 300;
pub const GAMMA: f64 = 0.9;

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("cannot step from terminal state {0:?}")]
    StepFromTerminal(GridState),
    #[error("true value is undefined for terminal state {0:?}")]
    TerminalValue(GridState),
    #[error("cell (row {row}, col {col}) is outside the hallway")]
    OutOfBounds { row: usize, col: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridState {
    pub row: usize,
    pub col: usize,
    pub terminal: bool,
}

impl GridState {
    pub const START: GridState = GridState {
        row: 1,
        col: 0,
        terminal: false,
    };

    pub fn new(row: usize, col: usize) -> Result<Self, EnvError> {
        if row >= ROWS || col >= COLS {
            return Err(EnvError::OutOfBounds { row, col });
        }
        Ok(Self {
            row,
            col,
            terminal: col == TERMINAL_COL,
        })
    }

    /// All fifteen non-terminal cells in feature order.
    pub fn non_terminal() -> impl Iterator<Item = GridState> {
        (0..ROWS).flat_map(|row| {
            (0..TERMINAL_COL).map(move |col| GridState {
                row,
                col,
                terminal: false,
            })
        })
    }

    /// Position in the one-hot feature vector; `None` when terminal.
    pub fn feature_index(&self) -> Option<usize> {
        (!self.terminal).then_some(self.row * TERMINAL_COL + self.col)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// +1 for terminating in row 0.
    PlusTop,
    /// −1 for terminating in row 2.
    MinusBottom,
}

impl Regime {
    pub const ALL: [Regime; 2] = [Regime::PlusTop, Regime::MinusBottom];

    pub fn terminal_reward(self, row: usize) -> f64 {
        match (self, row) {
            (Regime::PlusTop, 0) => 1.0,
            (Regime::MinusBottom, 2) => -1.0,
            _ => 0.0,
        }
    }

    pub fn other(self) -> Regime {
        match self {
            Regime::PlusTop => Regime::MinusBottom,
            Regime::MinusBottom => Regime::PlusTop,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Regime::PlusTop => "plus_top",
            Regime::MinusBottom => "minus_bottom",
        }
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which regime is active in a given episode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Schedule {
    /// Starts in `PlusTop` and flips every `period` episodes.
    Switching { period: usize },
    /// Never switches.
    Stationary(Regime),
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule::Switching {
            period: REGIME_PERIOD,
        }
    }
}

impl Schedule {
    pub fn regime_at(&self, episode: usize) -> Regime {
        match *self {
            Schedule::Switching { period } if (episode / period.max(1)) % 2 == 1 => {
                Regime::MinusBottom
            }
            Schedule::Switching { .. } => Regime::PlusTop,
            Schedule::Stationary(r) => r,
        }
    }

    /// First episode of every regime switch strictly after episode 0.
    pub fn switch_points(&self, episodes: usize) -> Vec<usize> {
        match *self {
            Schedule::Switching { period } => (1..)
                .map(|i| i * period.max(1))
                .take_while(|&e| e < episodes)
                .collect(),
            Schedule::Stationary(_) => Vec::new(),
        }
    }
}

/// Regime of `episode` under the default 300-episode switching schedule.
pub fn regime_at(episode: usize) -> Regime {
    Schedule::default().regime_at(episode)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Wind {
    NorthEast,
    SouthEast,
}

impl Wind {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Wind {
        if rng.random::<bool>() {
            Wind::NorthEast
        } else {
            Wind::SouthEast
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub next: GridState,
    pub reward: f64,
    pub terminal: bool,
}

/// Deterministic transition for a given wind draw.
pub fn step_with(state: GridState, regime: Regime, wind: Wind) -> Result<StepOutcome, EnvError> {
    if state.terminal {
        return Err(EnvError::StepFromTerminal(state));
    }
    let row = match wind {
        Wind::NorthEast => state.row.saturating_sub(1),
        Wind::SouthEast => (state.row + 1).min(ROWS - 1),
    };
    let next = GridState::new(row, state.col + 1)?;
    let reward = if next.terminal {
        regime.terminal_reward(row)
    } else {
        0.0
    };
    Ok(StepOutcome {
        next,
        reward,
        terminal: next.terminal,
    })
}

pub fn step<R: Rng + ?Sized>(
    state: GridState,
    regime: Regime,
    rng: &mut R,
) -> Result<StepOutcome, EnvError> {
    step_with(state, regime, Wind::sample(rng))
}

/// One-hot over the non-terminal cells; terminal maps to zeros.
pub fn features(state: GridState) -> Vec<f64> {
    let mut phi = vec![0.0; FEATURE_DIM];
    if let Some(i) = state.feature_index() {
        phi[i] = 1.0;
    }
    phi
}

/// True state values for both regimes, by backward induction over columns.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueOracle {
    gamma: f64,
    // [regime][row][col]
    table: [[[f64; TERMINAL_COL]; ROWS]; 2],
}

impl Default for ValueOracle {
    fn default() -> Self {
        Self::new(GAMMA)
    }
}

impl ValueOracle {
    pub fn new(gamma: f64) -> Self {
        let mut table = [[[0.0; TERMINAL_COL]; ROWS]; 2];
        for (ri, regime) in Regime::ALL.into_iter().enumerate() {
            // expected terminal reward, column by column from the east;
            // every entry is a dyadic rational, so this part is exact
            let mut expected = [[0.0; TERMINAL_COL]; ROWS];
            for col in (0..TERMINAL_COL).rev() {
                for row in 0..ROWS {
                    let state = GridState {
                        row,
                        col,
                        terminal: false,
                    };
                    expected[row][col] = [Wind::NorthEast, Wind::SouthEast]
                        .into_iter()
                        .map(|w| {
                            let o = step_with(state, regime, w).expect("non-terminal");
                            if o.terminal {
                                0.5 * o.reward
                            } else {
                                0.5 * expected[o.next.row][o.next.col]
                            }
                        })
                        .sum();
                }
            }
            // reward arrives exactly TERMINAL_COL - col steps later
            for (row, values) in table[ri].iter_mut().enumerate() {
                for (col, v) in values.iter_mut().enumerate() {
                    let delay = (TERMINAL_COL - 1 - col) as f64;
                    *v = gamma.powf(delay) * expected[row][col];
                }
            }
        }
        Self { gamma, table }
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn value(&self, state: GridState, regime: Regime) -> Result<f64, EnvError> {
        if state.terminal {
            return Err(EnvError::TerminalValue(state));
        }
        Ok(self.value_unchecked(state, regime))
    }

    pub(crate) fn value_unchecked(&self, state: GridState, regime: Regime) -> f64 {
        self.table[regime as usize][state.row][state.col]
    }

    /// Values in feature order: the tabular weights a perfect learner holds.
    pub fn weights(&self, regime: Regime) -> Vec<f64> {
        GridState::non_terminal()
            .map(|s| self.value_unchecked(s, regime))
            .collect()
    }

    /// `(regime, row, col, value)` rows for export.
    pub fn rows(&self) -> Vec<(Regime, usize, usize, f64)> {
        Regime::ALL
            .into_iter()
            .flat_map(|r| GridState::non_terminal().map(move |s| (r, s)))
            .map(|(r, s)| (r, s.row, s.col, self.value_unchecked(s, r)))
            .collect()
    }
}

/// Value of `state` under `regime` with the default discount.
pub fn true_value(state: GridState, regime: Regime) -> Result<f64, EnvError> {
    ValueOracle::default().value(state, regime)
}

/// Monte-Carlo estimate of the discounted return from `state`.
pub fn monte_carlo_value<R: Rng + ?Sized>(
    state: GridState,
    regime: Regime,
    gamma: f64,
    episodes: usize,
    rng: &mut R,
) -> Result<f64, EnvError> {
    if state.terminal {
        return Err(EnvError::TerminalValue(state));
    }
    let mut total = 0.0;
    for _ in 0..episodes {
        // one random word supplies every wind draw of the episode
        let mut bits: u64 = rng.random();
        let mut s = state;
        let mut discount = 1.0;
        let mut ret = 0.0;
        while !s.terminal {
            let wind = if bits & 1 == 1 {
                Wind::NorthEast
            } else {
                Wind::SouthEast
            };
            bits >>= 1;
            let o = step_with(s, regime, wind)?;
            ret += discount * o.reward;
            discount *= gamma;
            s = o.next;
        }
        total += ret;
    }
    Ok(total / episodes as f64)
}
