use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, AdamState};
use crate::hallway::{self, GridState, Regime, ValueOracle, FEATURE_DIM};
use crate::replay::{plan, ReplayBuffer, ReplayFilter};
use crate::synth::{meta_update, GeneratorParams, GeneratorSource, InnerLoop, MetaBuffer, MetaSample};
use crate::value::{predict, td_update_in_place, Transition, ValueWeights};

use super::{Algorithm, HarnessError, TrialConfig};

/// Stream labels; each trial seeds every stream from the same trial seed.
pub const ENV_STREAM: u64 = 1;
/// Generator initialization, then planning and meta-loss noise.
pub const MODEL_STREAM: u64 = 2;
/// Replay draws and meta-minibatch selection.
pub const SAMPLING_STREAM: u64 = 3;

pub fn stream(seed: u64, label: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(label);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub trial: usize,
    pub episode: usize,
    pub regime: Regime,
    pub mse: f64,
}

/// Mean squared value error over an episode's non-terminal states, each
/// scored with the weights held just before that step's veridical update.
pub fn mse_episode(snapshots: &[(ValueWeights, GridState)], regime: Regime, oracle: &ValueOracle) -> f64 {
    let (sum, n) = snapshots
        .iter()
        .filter(|(_, s)| !s.terminal)
        .fold((0.0, 0usize), |(sum, n), (theta, s)| {
            let v = oracle.value_unchecked(*s, regime);
            let err = v - predict(theta, &hallway::features(*s)).expect("feature dimension");
            (sum + err * err, n + 1)
        });
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Records plus the learner's final state.
#[derive(Clone, Debug)]
pub struct TrialOutput {
    pub records: Vec<EpisodeRecord>,
    pub theta: ValueWeights,
    pub generator: Option<GeneratorParams>,
}

enum Planner {
    None,
    Replay(ReplayBuffer),
    Synth {
        eta: GeneratorParams,
        adam: AdamState,
        meta: MetaBuffer,
        theta_p: ValueWeights,
    },
}

pub fn run_trial(config: &TrialConfig, trial: usize) -> Result<Vec<EpisodeRecord>, HarnessError> {
    Ok(run_trial_full(config, trial)?.records)
}

/// One seeded trial of `config.algorithm`.
///
/// Per environment step: score the current prediction, observe the
/// transition, store it (replay buffer, or meta-buffer paired with the
/// previous step's θ_p), apply the veridical TD update with α, save θ_p,
/// apply `k` planning updates with β, then meta-update the generator
/// every `meta_every` steps.
pub fn run_trial_full(config: &TrialConfig, trial: usize) -> Result<TrialOutput, HarnessError> {
    config.validate()?;
    let seed = config.trial_seed(trial);
    let mut env_rng = stream(seed, ENV_STREAM);
    let mut model_rng = stream(seed, MODEL_STREAM);
    let mut sampling_rng = stream(seed, SAMPLING_STREAM);
    let oracle = ValueOracle::new(config.gamma);
    let gamma = config.gamma;

    let mut theta = ValueWeights::zeros(FEATURE_DIM);
    let mut planner = match config.algorithm {
        Algorithm::ModelFree => Planner::None,
        Algorithm::AllExperience => Planner::Replay(ReplayBuffer::new(ReplayFilter::All)),
        Algorithm::StableExperience => Planner::Replay(ReplayBuffer::new(ReplayFilter::Stable)),
        Algorithm::SynthDyna => {
            let eta = GeneratorParams::init(config.noise_dim, config.hidden, FEATURE_DIM, &mut model_rng);
            let adam = AdamState::new(AdamConfig::with_learning_rate(config.meta_lr), &eta.group_lens());
            Planner::Synth {
                eta,
                adam,
                meta: MetaBuffer::new(),
                theta_p: theta.clone(),
            }
        }
    };
    let inner = InnerLoop {
        k: config.k,
        zeta: config.zeta,
        gamma,
    };

    let mut records = Vec::with_capacity(config.episodes);
    let mut snapshots = Vec::with_capacity(hallway::EPISODE_LEN);
    let mut step_index = 0usize;

    for episode in 0..config.episodes {
        let regime = config.schedule.regime_at(episode);
        let mut state = GridState::START;
        snapshots.clear();

        while !state.terminal {
            snapshots.push((theta.clone(), state));
            let outcome = hallway::step(state, regime, &mut env_rng)?;
            let transition = Transition::new(
                hallway::features(state),
                outcome.reward,
                hallway::features(outcome.next),
                outcome.terminal,
            );
            let fail = |e: String| HarnessError::Diverged {
                step: step_index,
                detail: e,
            };

            match &mut planner {
                Planner::None => {}
                Planner::Replay(buffer) => {
                    buffer.record(transition.clone());
                }
                Planner::Synth { meta, theta_p, .. } => meta.push(MetaSample {
                    theta_p: theta_p.clone(),
                    transition: transition.clone(),
                }),
            }

            if config.alpha > 0.0 {
                td_update_in_place(&mut theta, &transition, config.alpha, gamma)
                    .map_err(|e| fail(e.to_string()))?;
            }

            match &mut planner {
                Planner::None => {}
                Planner::Replay(buffer) => {
                    if config.beta > 0.0 {
                        plan(&mut theta, buffer, config.k, config.beta, gamma, &mut sampling_rng)
                            .map_err(|e| fail(e.to_string()))?;
                    }
                }
                Planner::Synth {
                    eta,
                    adam,
                    meta,
                    theta_p,
                } => {
                    theta_p.clone_from(&theta);
                    if config.beta > 0.0 {
                        plan(
                            &mut theta,
                            &GeneratorSource(eta),
                            config.k,
                            config.beta,
                            gamma,
                            &mut model_rng,
                        )
                        .map_err(|e| fail(e.to_string()))?;
                    }
                    if (step_index + 1) % config.meta_every == 0 {
                        let batch = meta.sample_batch(config.batch, &mut sampling_rng);
                        meta_update(eta, &batch, adam, inner, &mut model_rng)
                            .map_err(|e| fail(e.to_string()))?;
                    }
                }
            }

            if !theta.is_finite() {
                return Err(fail("non-finite value weights".into()));
            }
            state = outcome.next;
            step_index += 1;
        }

        records.push(EpisodeRecord {
            trial,
            episode,
            regime,
            mse: mse_episode(&snapshots, regime, &oracle),
        });
    }

    Ok(TrialOutput {
        records,
        theta,
        generator: match planner {
            Planner::Synth { eta, .. } => Some(eta),
            _ => None,
        },
    })
}

/// Trials `0..trials` on up to `workers` threads, returned in trial order.
pub fn run_trials(
    config: &TrialConfig,
    trials: usize,
    workers: usize,
) -> Result<Vec<Vec<EpisodeRecord>>, HarnessError> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| HarnessError::Workers(e.to_string()))?;
    pool.install(|| {
        (0..trials)
            .into_par_iter()
            .map(|t| run_trial(config, t))
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hallway::Schedule;

    fn small(algorithm: Algorithm) -> TrialConfig {
        TrialConfig {
            episodes: 40,
            ..TrialConfig::new(algorithm)
        }
    }

    #[test]
    fn mse_examples() {
        let oracle = ValueOracle::default();
        let cells: Vec<GridState> = [(1, 0), (0, 1), (0, 2), (1, 3), (0, 4)]
            .iter()
            .map(|&(r, c)| GridState::new(r, c).unwrap())
            .collect();
        let perfect = ValueWeights::from_vec(oracle.weights(Regime::PlusTop));
        let snaps: Vec<_> = cells.iter().map(|&s| (perfect.clone(), s)).collect();
        assert_eq!(mse_episode(&snaps, Regime::PlusTop, &oracle), 0.0);

        let shifted = ValueWeights::from_vec(perfect.as_slice().iter().map(|v| v + 0.1).collect());
        let snaps: Vec<_> = cells.iter().map(|&s| (shifted.clone(), s)).collect();
        assert!((mse_episode(&snaps, Regime::PlusTop, &oracle) - 0.01).abs() < 1e-15);

        let zero = ValueWeights::default();
        let snaps: Vec<_> = cells.iter().map(|&s| (zero.clone(), s)).collect();
        let expected = cells
            .iter()
            .map(|&s| oracle.value(s, Regime::PlusTop).unwrap().powi(2))
            .sum::<f64>()
            / 5.0;
        assert_eq!(mse_episode(&snaps, Regime::PlusTop, &oracle), expected);
    }

    #[test]
    fn record_count_and_determinism() {
        for algo in Algorithm::ALL {
            let cfg = small(algo);
            let a = run_trial(&cfg, 3).unwrap();
            let b = run_trial(&cfg, 3).unwrap();
            assert_eq!(a.len(), 40);
            assert_eq!(a, b, "{algo}");
            assert!(a.iter().all(|r| r.mse.is_finite() && r.mse >= 0.0));
        }
    }

    #[test]
    fn no_learning_scores_oracle_energy() {
        let cfg = TrialConfig {
            alpha: 0.0,
            ..small(Algorithm::ModelFree)
        };
        let out = run_trial_full(&cfg, 0).unwrap();
        assert_eq!(out.theta, ValueWeights::default());
        let oracle = ValueOracle::default();
        // every start-state prediction is 0, so each episode's MSE is at least v(start)²/5
        let floor = oracle.value(GridState::START, Regime::PlusTop).unwrap().powi(2) / 5.0;
        assert!(out.records.iter().all(|r| r.mse >= floor - 1e-15));
    }

    #[test]
    fn model_free_equals_zero_planning_budget() {
        let mf = small(Algorithm::ModelFree);
        for algo in [Algorithm::AllExperience, Algorithm::StableExperience] {
            let cfg = TrialConfig { k: 0, ..small(algo) };
            let a = run_trial_full(&mf, 1).unwrap();
            let b = run_trial_full(&cfg, 1).unwrap();
            assert_eq!(a.records, b.records);
            assert_eq!(a.theta, b.theta);
        }
    }

    #[test]
    fn stationary_schedule_never_switches() {
        let cfg = TrialConfig {
            schedule: Schedule::Stationary(Regime::PlusTop),
            episodes: 700,
            ..TrialConfig::new(Algorithm::ModelFree)
        };
        assert!(run_trial(&cfg, 0)
            .unwrap()
            .iter()
            .all(|r| r.regime == Regime::PlusTop));
    }

    #[test]
    fn trials_are_ordered_and_match_serial_runs() {
        let cfg = small(Algorithm::StableExperience);
        let all = run_trials(&cfg, 3, 2).unwrap();
        for (t, recs) in all.iter().enumerate() {
            assert_eq!(recs, &run_trial(&cfg, t).unwrap());
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = TrialConfig {
            alpha: -0.1,
            ..small(Algorithm::ModelFree)
        };
        assert!(matches!(
            run_trial(&cfg, 0),
            Err(HarnessError::InvalidConfig { name: "alpha", .. })
        ));
    }
}
