//! Least-squares fit of resolution time against dependency level.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::propagation::{DurationField, LifetimeSample};
use crate::survival::{level_stats, LevelStats};

/// Days per month used when restating a fit in months (mean Gregorian month).
pub const DAYS_PER_MONTH: f64 = 30.44;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegressionError {
    #[error("need at least two points, got {0}")]
    TooFewPoints(usize),
    #[error("all x values are equal")]
    DegenerateX,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub intercept: f64,
    pub slope: f64,
    pub r_squared: f64,
    pub n_points: usize,
}

impl RegressionResult {
    pub fn predict(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }
}

/// Closed-form simple linear regression with intercept.
pub fn ols_fit(points: &[(f64, f64)]) -> Result<RegressionResult, RegressionError> {
    let n = points.len();
    if n < 2 {
        return Err(RegressionError::TooFewPoints(n));
    }
    let nf = n as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / nf;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / nf;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in points {
        let (dx, dy) = (x - mean_x, y - mean_y);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(RegressionError::DegenerateX);
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ss_res: f64 = points
        .iter()
        .map(|&(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    // a constant response is fitted exactly by the flat line
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    };
    Ok(RegressionResult {
        intercept,
        slope,
        r_squared,
        n_points: n,
    })
}

/// `(slope, intercept)` restated in whole months.
pub fn months_rule(result: &RegressionResult) -> (i64, i64) {
    let months = |days: f64| (days / DAYS_PER_MONTH).round() as i64;
    (months(result.slope), months(result.intercept))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Mean,
    Median,
}

impl std::str::FromStr for Target {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean" => Ok(Self::Mean),
            "median" => Ok(Self::Median),
            other => Err(format!("unknown regression target {other:?}")),
        }
    }
}

/// One `(level, aggregate)` point per level row.
pub fn aggregate_points(stats: &[LevelStats], target: Target) -> Vec<(f64, f64)> {
    stats
        .iter()
        .map(|row| {
            let y = match target {
                Target::Mean => row.stats.mean,
                Target::Median => row.stats.median,
            };
            (f64::from(row.level), y)
        })
        .collect()
}

/// Regression on per-level aggregates of `samples`, or on every sample when
/// `per_sample` is set (where only the mean target is meaningful).
pub fn regress_samples(
    samples: &[LifetimeSample],
    field: DurationField,
    target: Target,
    include_censored: bool,
    per_sample: bool,
) -> Result<RegressionResult, RegressionError> {
    if per_sample {
        let points: Vec<(f64, f64)> = samples
            .iter()
            .filter(|s| include_censored || !s.censored)
            .map(|s| (f64::from(s.level), s.duration(field) as f64))
            .collect();
        return ols_fit(&points);
    }
    let stats = level_stats(samples, field, include_censored);
    ols_fit(&aggregate_points(&stats, target))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_line() {
        let r = ols_fit(&[(0.0, 1.0), (1.0, 3.0), (2.0, 5.0)]).unwrap();
        assert!((r.intercept - 1.0).abs() < 1e-12);
        assert!((r.slope - 2.0).abs() < 1e-12);
        assert!((r.r_squared - 1.0).abs() < 1e-12);
        assert_eq!(r.n_points, 3);
    }

    #[test]
    fn degenerate_inputs() {
        assert_eq!(ols_fit(&[(1.0, 2.0)]), Err(RegressionError::TooFewPoints(1)));
        assert_eq!(ols_fit(&[(1.0, 2.0), (1.0, 3.0)]), Err(RegressionError::DegenerateX));
    }

    #[test]
    fn months_examples() {
        let fit = |slope, intercept| RegressionResult {
            intercept,
            slope,
            r_squared: 1.0,
            n_points: 11,
        };
        assert_eq!(months_rule(&fit(189.92, 238.05)), (6, 8));
        assert_eq!(months_rule(&fit(183.15, -90.14)), (6, -3));
        assert_eq!(months_rule(&fit(0.0, 0.0)), (0, 0));
    }

    fn line_with_noise() -> impl Strategy<Value = Vec<(f64, f64)>> {
        proptest::collection::vec(-50.0f64..50.0, 3..30).prop_map(|noise| {
            noise
                .iter()
                .enumerate()
                .map(|(i, e)| (i as f64, 3.0 + 7.0 * i as f64 + e))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn residuals_orthogonal(points in line_with_noise()) {
            let r = ols_fit(&points).unwrap();
            let res: Vec<f64> = points.iter().map(|&(x, y)| y - r.predict(x)).collect();
            let scale: f64 = points.iter().map(|p| p.1.abs()).sum::<f64>().max(1.0);
            prop_assert!(res.iter().sum::<f64>().abs() <= 1e-9 * scale);
            let dot: f64 = res.iter().zip(&points).map(|(e, p)| e * p.0).sum();
            prop_assert!(dot.abs() <= 1e-9 * scale * points.len() as f64);
            prop_assert!((0.0..=1.0).contains(&r.r_squared));
        }

        #[test]
        fn noiseless_r2_is_one(a in -100.0f64..100.0, b in -20.0f64..20.0, n in 2usize..40) {
            prop_assume!(b.abs() > 1e-3);
            let pts: Vec<_> = (0..n).map(|i| (i as f64, a + b * i as f64)).collect();
            prop_assert!((ols_fit(&pts).unwrap().r_squared - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn shift_and_scale(points in line_with_noise(), shift in -500.0f64..500.0, scale in 0.1f64..10.0) {
            let base = ols_fit(&points).unwrap();
            let shifted: Vec<_> = points.iter().map(|&(x, y)| (x, y + shift)).collect();
            let s = ols_fit(&shifted).unwrap();
            prop_assert!((s.slope - base.slope).abs() < 1e-8);
            prop_assert!((s.intercept - base.intercept - shift).abs() < 1e-8);
            let scaled: Vec<_> = points.iter().map(|&(x, y)| (x, y * scale)).collect();
            let k = ols_fit(&scaled).unwrap();
            prop_assert!((k.slope - base.slope * scale).abs() < 1e-8 * (1.0 + base.slope.abs() * scale));
            prop_assert!((k.intercept - base.intercept * scale).abs() < 1e-7 * (1.0 + base.intercept.abs() * scale));
        }
    }
}
