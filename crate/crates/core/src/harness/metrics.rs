use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::stats::{self, confidence_interval, t_test, ConfidenceInterval, TestKind};

use super::{EpisodeRecord, HarnessError};

pub const CONFIDENCE: f64 = 0.95;
/// Episodes at the end of a run that make up the headline score.
pub const SCORE_WINDOW: usize = 600;

/// Across-trial mean of one episode, with its CI half-width (absent for a
/// single trial).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub episode: usize,
    pub mean: f64,
    pub half_width: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    pub curve: Vec<CurvePoint>,
    /// Per trial, the average MSE over the last `window` episodes.
    pub trial_scores: Vec<f64>,
    pub window: usize,
}

impl Aggregate {
    pub fn mean_score(&self) -> f64 {
        stats::mean(&self.trial_scores)
    }

    /// `None` with fewer than two trials.
    pub fn score_interval(&self) -> Option<ConfidenceInterval> {
        confidence_interval(&self.trial_scores, CONFIDENCE).ok()
    }
}

fn check_shape(trials: &[Vec<EpisodeRecord>]) -> Result<usize, HarnessError> {
    let episodes = trials.first().map_or(0, Vec::len);
    if trials.is_empty() || episodes == 0 {
        return Err(HarnessError::NoRecords);
    }
    if let Some(bad) = trials.iter().position(|t| t.len() != episodes) {
        return Err(HarnessError::UnequalTrials {
            trial: bad,
            expected: episodes,
            found: trials[bad].len(),
        });
    }
    Ok(episodes)
}

/// Average MSE over the last `window` episodes of one trial.
pub fn window_score(records: &[EpisodeRecord], window: usize) -> f64 {
    let w = window.clamp(1, records.len());
    records[records.len() - w..].iter().map(|r| r.mse).sum::<f64>() / w as f64
}

/// Pointwise mean curve with t-based 95% bands, plus per-trial window scores.
pub fn aggregate(trials: &[Vec<EpisodeRecord>], window: usize) -> Result<Aggregate, HarnessError> {
    let episodes = check_shape(trials)?;
    let mut column = vec![0.0; trials.len()];
    let curve = (0..episodes)
        .map(|e| {
            for (slot, t) in column.iter_mut().zip(trials) {
                *slot = t[e].mse;
            }
            CurvePoint {
                episode: trials[0][e].episode,
                mean: stats::mean(&column),
                half_width: confidence_interval(&column, CONFIDENCE)
                    .ok()
                    .map(|ci| ci.half_width),
            }
        })
        .collect();
    Ok(Aggregate {
        curve,
        trial_scores: trials.iter().map(|t| window_score(t, window)).collect(),
        window,
    })
}

/// Per trial, the mean MSE over the `span` episodes that follow each of the
/// last `switches` entries of `switch_points`.
pub fn post_switch_scores(
    trials: &[Vec<EpisodeRecord>],
    switch_points: &[usize],
    switches: usize,
    span: usize,
) -> Result<Vec<f64>, HarnessError> {
    let episodes = check_shape(trials)?;
    let chosen = &switch_points[switch_points.len().saturating_sub(switches)..];
    if chosen.is_empty() {
        return Err(HarnessError::NoRecords);
    }
    Ok(trials
        .iter()
        .map(|t| {
            let (sum, n) = chosen
                .iter()
                .flat_map(|&s| s..(s + span).min(episodes))
                .fold((0.0, 0usize), |(sum, n), e| (sum + t[e].mse, n + 1));
            sum / n as f64
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSummary {
    pub mean_last600: f64,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub trials: usize,
}

impl From<&Aggregate> for AlgorithmSummary {
    fn from(agg: &Aggregate) -> Self {
        let ci = agg.score_interval();
        Self {
            mean_last600: agg.mean_score(),
            ci_low: ci.map(|c| c.low()),
            ci_high: ci.map(|c| c.high()),
            trials: agg.trial_scores.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairTest {
    pub algo_a: String,
    pub algo_b: String,
    pub t: f64,
    pub p: f64,
    pub df: f64,
    pub kind: TestKind,
}

/// The summary JSON document.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub window: usize,
    pub algorithms: BTreeMap<String, AlgorithmSummary>,
    pub tests: Vec<PairTest>,
}

impl Summary {
    pub fn new(window: usize) -> Self {
        Self {
            window,
            ..Self::default()
        }
    }

    pub fn insert(&mut self, name: &str, agg: &Aggregate) {
        self.algorithms.insert(name.to_string(), agg.into());
    }

    /// Adds a t-test of `a`'s window scores against `b`'s.
    pub fn compare(
        &mut self,
        (name_a, a): (&str, &Aggregate),
        (name_b, b): (&str, &Aggregate),
        kind: TestKind,
    ) -> Result<(), HarnessError> {
        let r = t_test(&a.trial_scores, &b.trial_scores, kind)?;
        self.tests.push(PairTest {
            algo_a: name_a.to_string(),
            algo_b: name_b.to_string(),
            t: r.t,
            p: r.p,
            df: r.df,
            kind,
        });
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hallway::Regime;

    fn trial(id: usize, mses: &[f64]) -> Vec<EpisodeRecord> {
        mses.iter()
            .enumerate()
            .map(|(episode, &mse)| EpisodeRecord {
                trial: id,
                episode,
                regime: Regime::PlusTop,
                mse,
            })
            .collect()
    }

    #[test]
    fn identical_trials_have_zero_width() {
        let t = [0.4, 0.2, 0.1];
        let agg = aggregate(&[trial(0, &t), trial(1, &t), trial(2, &t)], 2).unwrap();
        assert!(agg.curve.iter().all(|p| p.half_width == Some(0.0)));
        assert!(agg.trial_scores.iter().all(|&s| (s - 0.15).abs() < 1e-15));
        assert_eq!(agg.score_interval().unwrap().half_width, 0.0);
    }

    #[test]
    fn pointwise_mean() {
        let agg = aggregate(&[trial(0, &[1.0, 1.0]), trial(1, &[3.0, 3.0])], 600).unwrap();
        assert_eq!(agg.curve[0].mean, 2.0);
        assert_eq!(agg.trial_scores, vec![1.0, 3.0]);
    }

    #[test]
    fn single_trial_flags_interval() {
        let agg = aggregate(&[trial(0, &[1.0, 2.0])], 1).unwrap();
        assert_eq!(agg.curve[0].half_width, None);
        assert!(agg.score_interval().is_none());
        let s = AlgorithmSummary::from(&agg);
        assert_eq!((s.ci_low, s.trials), (None, 1));
    }

    #[test]
    fn unequal_trials_rejected() {
        assert!(matches!(
            aggregate(&[trial(0, &[1.0, 2.0]), trial(1, &[1.0])], 1),
            Err(HarnessError::UnequalTrials { trial: 1, .. })
        ));
        assert!(matches!(aggregate(&[], 1), Err(HarnessError::NoRecords)));
    }

    #[test]
    fn post_switch_windows() {
        let mses: Vec<f64> = (0..10).map(|e| e as f64).collect();
        let s = post_switch_scores(&[trial(0, &mses)], &[2, 4, 6], 2, 2).unwrap();
        // episodes 4, 5, 6, 7
        assert_eq!(s, vec![5.5]);
    }
}
