//! Summary statistics for comparing algorithms across trials.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("need at least {needed} values, got {found}")]
    TooFew { needed: usize, found: usize },
    #[error("non-finite value in sample")]
    NonFinite,
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance (divisor `n − 1`).
pub fn sample_variance(xs: &[f64]) -> f64 {
    // the rounded mean of a constant sample can differ from its entries
    if xs.iter().all(|&x| x == xs[0]) {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

fn students_t(df: f64) -> StudentsT {
    StudentsT::new(0.0, 1.0, df).expect("degrees of freedom are positive")
}

/// Two-sided critical value `t_{(1+level)/2, df}`.
pub fn t_critical(level: f64, df: f64) -> f64 {
    students_t(df).inverse_cdf(0.5 + level / 2.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub mean: f64,
    pub half_width: f64,
}

impl ConfidenceInterval {
    pub fn low(&self) -> f64 {
        self.mean - self.half_width
    }

    pub fn high(&self) -> f64 {
        self.mean + self.half_width
    }

    pub fn contains(&self, x: f64) -> bool {
        (self.low()..=self.high()).contains(&x)
    }
}

/// t-interval for the mean: `x̄ ± t_{(1+level)/2, T−1} · s / √T`.
pub fn confidence_interval(xs: &[f64], level: f64) -> Result<ConfidenceInterval, StatsError> {
    if xs.len() < 2 {
        return Err(StatsError::TooFew {
            needed: 2,
            found: xs.len(),
        });
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let n = xs.len() as f64;
    let s = sample_variance(xs).sqrt();
    Ok(ConfidenceInterval {
        mean: mean(xs),
        half_width: t_critical(level, n - 1.0) * s / n.sqrt(),
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    /// Pooled-variance two-sample t-test.
    #[default]
    Student,
    /// Unequal-variance test with Welch–Satterthwaite degrees of freedom.
    Welch,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    /// Two-sided p-value.
    pub p: f64,
    /// Both samples have zero variance but different means; `t` is infinite
    /// and `p` is reported as 0.
    pub degenerate: bool,
}

/// Two-sample t-test of `a` against `b` (positive `t` means `a` has the
/// larger mean).
pub fn t_test(a: &[f64], b: &[f64], kind: TestKind) -> Result<TTest, StatsError> {
    for xs in [a, b] {
        if xs.len() < 2 {
            return Err(StatsError::TooFew {
                needed: 2,
                found: xs.len(),
            });
        }
        if xs.iter().any(|x| !x.is_finite()) {
            return Err(StatsError::NonFinite);
        }
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (sample_variance(a), sample_variance(b));
    let diff = mean(a) - mean(b);

    let (se, df) = match kind {
        TestKind::Student => {
            let pooled = ((na - 1.0) * va + (nb - 1.0) * vb) / (na + nb - 2.0);
            ((pooled * (1.0 / na + 1.0 / nb)).sqrt(), na + nb - 2.0)
        }
        TestKind::Welch => {
            let (qa, qb) = (va / na, vb / nb);
            let se2 = qa + qb;
            let df = if se2 == 0.0 {
                na + nb - 2.0
            } else {
                se2 * se2 / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0))
            };
            (se2.sqrt(), df)
        }
    };

    if se == 0.0 {
        return Ok(if diff == 0.0 {
            TTest {
                t: 0.0,
                df,
                p: 1.0,
                degenerate: false,
            }
        } else {
            TTest {
                t: diff.signum() * f64::INFINITY,
                df,
                p: 0.0,
                degenerate: true,
            }
        });
    }

    let t = diff / se;
    let p = (2.0 * students_t(df).cdf(-t.abs())).clamp(0.0, 1.0);
    Ok(TTest {
        t,
        df,
        p,
        degenerate: false,
    })
}
