//! Kaplan-Meier estimation and per-level descriptive statistics.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::propagation::{DurationField, LifetimeSample};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SurvivalError {
    #[error("no observations")]
    EmptyInput,
    #[error("invalid duration {0}: must be finite and non-negative")]
    InvalidDuration(f64),
}

/// Product-limit survival estimate.
///
/// One entry per distinct observed time, censor-only times included with
/// zero deaths, so `at_risk[0]` is always the sample size.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurvivalCurve {
    pub times: Vec<f64>,
    pub deaths: Vec<usize>,
    pub censored: Vec<usize>,
    pub at_risk: Vec<usize>,
    pub survival: Vec<f64>,
}

impl SurvivalCurve {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Step-function value at `t`; 1 before the first observed time.
    pub fn survival_at(&self, t: f64) -> f64 {
        match self.times.partition_point(|&x| x <= t) {
            0 => 1.0,
            i => self.survival[i - 1],
        }
    }

    /// Smallest time with estimated survival at or below one half.
    pub fn median(&self) -> Option<f64> {
        self.times
            .iter()
            .zip(&self.survival)
            .find(|(_, s)| **s <= 0.5)
            .map(|(t, _)| *t)
    }

    /// Iterates `(t, survival, at_risk, deaths)` rows at event times only.
    pub fn events(&self) -> impl Iterator<Item = (f64, f64, usize, usize)> + '_ {
        (0..self.len())
            .filter(|&i| self.deaths[i] > 0)
            .map(|i| (self.times[i], self.survival[i], self.at_risk[i], self.deaths[i]))
    }
}

/// Kaplan-Meier estimator over `(duration, censored)` observations.
pub fn kaplan_meier(observations: &[(f64, bool)]) -> Result<SurvivalCurve, SurvivalError> {
    if observations.is_empty() {
        return Err(SurvivalError::EmptyInput);
    }
    if let Some(&(bad, _)) = observations.iter().find(|(t, _)| !t.is_finite() || *t < 0.0) {
        return Err(SurvivalError::InvalidDuration(bad));
    }
    let mut sorted = observations.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut curve = SurvivalCurve {
        times: Vec::new(),
        deaths: Vec::new(),
        censored: Vec::new(),
        at_risk: Vec::new(),
        survival: Vec::new(),
    };
    let mut remaining = sorted.len();
    let mut s = 1.0;
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].0;
        let (mut d, mut c) = (0usize, 0usize);
        while i < sorted.len() && sorted[i].0 == t {
            if sorted[i].1 {
                c += 1;
            } else {
                d += 1;
            }
            i += 1;
        }
        if d > 0 {
            s *= 1.0 - d as f64 / remaining as f64;
        }
        curve.times.push(t);
        curve.deaths.push(d);
        curve.censored.push(c);
        curve.at_risk.push(remaining);
        curve.survival.push(s);
        remaining -= d + c;
    }
    Ok(curve)
}

fn observations(samples: &[&LifetimeSample], field: DurationField) -> Vec<(f64, bool)> {
    samples
        .iter()
        .map(|s| (s.duration(field) as f64, s.censored))
        .collect()
}

fn by_level(samples: &[LifetimeSample]) -> BTreeMap<u32, Vec<&LifetimeSample>> {
    let mut out: BTreeMap<u32, Vec<&LifetimeSample>> = BTreeMap::new();
    for s in samples {
        out.entry(s.level).or_default().push(s);
    }
    out
}

/// One Kaplan-Meier curve per dependency level present in `samples`.
/// Samples must already be filtered (non-negative durations).
pub fn stratified_survival(
    samples: &[LifetimeSample],
    field: DurationField,
) -> Result<BTreeMap<u32, SurvivalCurve>, SurvivalError> {
    by_level(samples)
        .into_iter()
        .map(|(level, group)| Ok((level, kaplan_meier(&observations(&group, field))?)))
        .collect()
}

/// Descriptive statistics of one set of durations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Describe {
    pub count: usize,
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator; 0 for a single value).
    pub std: f64,
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

/// Quantile of sorted data by linear interpolation between order statistics.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn describe(values: &[f64]) -> Option<Describe> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (sorted.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Some(Describe {
        count: n,
        mean,
        std,
        min: sorted[0],
        q25: quantile_sorted(&sorted, 0.25),
        median: quantile_sorted(&sorted, 0.5),
        q75: quantile_sorted(&sorted, 0.75),
        max: sorted[n - 1],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelStats {
    pub level: u32,
    #[serde(flatten)]
    pub stats: Describe,
}

/// Per-level moments and quantiles of the chosen duration.
///
/// Censored samples are excluded unless `include_censored` is set, in which
/// case their window-end durations are treated as plain values. Levels with
/// no remaining samples are omitted.
pub fn level_stats(
    samples: &[LifetimeSample],
    field: DurationField,
    include_censored: bool,
) -> Vec<LevelStats> {
    by_level(samples)
        .into_iter()
        .filter_map(|(level, group)| {
            let values: Vec<f64> = group
                .iter()
                .filter(|s| include_censored || !s.censored)
                .map(|s| s.duration(field) as f64)
                .collect();
            describe(&values).map(|stats| LevelStats { level, stats })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ev(t: f64) -> (f64, bool) {
        (t, false)
    }

    #[test]
    fn hand_computed_uncensored() {
        // S(1) = 1 - 1/4; S(2) = 0.75 * (1 - 2/3); S(4) = 0.25 * (1 - 1/1)
        let c = kaplan_meier(&[ev(1.0), ev(2.0), ev(2.0), ev(4.0)]).unwrap();
        assert_eq!(c.times, vec![1.0, 2.0, 4.0]);
        assert_eq!(c.at_risk, vec![4, 3, 1]);
        assert_eq!(c.deaths, vec![1, 2, 1]);
        assert!((c.survival_at(1.0) - 0.75).abs() < 1e-15);
        assert!((c.survival_at(2.0) - 0.25).abs() < 1e-15);
        assert_eq!(c.survival_at(4.0), 0.0);
        assert_eq!(c.survival_at(0.5), 1.0);
    }

    #[test]
    fn hand_computed_censored() {
        // n at t=3 is 1 after the censoring at 2
        let c = kaplan_meier(&[ev(1.0), (2.0, true), ev(3.0)]).unwrap();
        assert!((c.survival_at(1.0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((c.survival_at(2.5) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(c.at_risk[2], 1);
        assert_eq!(c.survival_at(3.0), 0.0);
        assert_eq!(c.events().count(), 2);
    }

    #[test]
    fn all_censored_stays_one() {
        let c = kaplan_meier(&[(1.0, true), (5.0, true)]).unwrap();
        assert!(c.survival.iter().all(|&s| s == 1.0));
        assert_eq!(c.median(), None);
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(kaplan_meier(&[]), Err(SurvivalError::EmptyInput));
        assert!(matches!(kaplan_meier(&[(-1.0, false)]), Err(SurvivalError::InvalidDuration(_))));
        assert!(kaplan_meier(&[(f64::NAN, false)]).is_err());
    }

    #[test]
    fn empirical_oracle_on_random_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let n = rng.random_range(1..=200);
            let data: Vec<(f64, bool)> = (0..n).map(|_| ev(rng.random_range(0..60) as f64)).collect();
            let c = kaplan_meier(&data).unwrap();
            for &t in &c.times {
                let frac = data.iter().filter(|(x, _)| *x > t).count() as f64 / n as f64;
                assert!((c.survival_at(t) - frac).abs() <= 1e-12);
            }
        }
    }

    fn sample(level: u32, days: i64, censored: bool) -> LifetimeSample {
        LifetimeSample {
            cve_id: "C".into(),
            artifact_id: format!("a{days}"),
            version: "1".into(),
            level,
            cumulative_days: days,
            level_days: days / 2,
            censored,
            fixed_at: (!censored).then_some(days),
        }
    }

    #[test]
    fn stratifies_by_level() {
        let samples = vec![sample(0, 3, false), sample(1, 5, false), sample(1, 9, true)];
        let curves = stratified_survival(&samples, DurationField::Cumulative).unwrap();
        assert_eq!(curves.len(), 2);
        let direct = kaplan_meier(&[(3.0, false)]).unwrap();
        assert_eq!(curves[&0], direct);
        let lvl = stratified_survival(&samples, DurationField::Level).unwrap();
        assert_eq!(lvl[&1].times, vec![2.0, 4.0]);
    }

    #[test]
    fn describe_examples() {
        let d = describe(&[0.0, 10.0, 20.0]).unwrap();
        assert_eq!((d.mean, d.median, d.min, d.max), (10.0, 10.0, 0.0, 20.0));
        assert_eq!((d.q25, d.q75), (5.0, 15.0));
        assert_eq!(d.std, 10.0);
        let one = describe(&[7.0]).unwrap();
        assert_eq!((one.q25, one.median, one.q75, one.std), (7.0, 7.0, 7.0, 0.0));
        assert!(describe(&[]).is_none());
    }

    #[test]
    fn level_stats_rows_and_censoring() {
        let mut samples: Vec<_> = (0..=10).map(|l| sample(l, 10 * l as i64, false)).collect();
        samples.push(sample(3, 5000, true));
        let rows = level_stats(&samples, DurationField::Cumulative, false);
        assert_eq!(rows.len(), 11);
        assert_eq!(rows[3].stats.max, 30.0);
        let rows = level_stats(&samples, DurationField::Cumulative, true);
        assert_eq!(rows[3].stats.max, 5000.0);
        assert_eq!(rows[3].stats.count, 2);
        let only_censored = vec![sample(2, 4, true)];
        assert!(level_stats(&only_censored, DurationField::Cumulative, false).is_empty());
    }

    fn arb_obs() -> impl Strategy<Value = Vec<(f64, bool)>> {
        proptest::collection::vec(((0u32..40).prop_map(f64::from), proptest::bool::weighted(0.3)), 1..120)
    }

    proptest! {
        #[test]
        fn monotone_bounded_and_consistent(obs in arb_obs()) {
            let c = kaplan_meier(&obs).unwrap();
            prop_assert_eq!(c.at_risk[0], obs.len());
            for i in 0..c.len() {
                prop_assert!((0.0..=1.0).contains(&c.survival[i]));
                if i > 0 {
                    prop_assert!(c.survival[i] <= c.survival[i - 1]);
                    prop_assert!(c.at_risk[i] <= c.at_risk[i - 1] - c.deaths[i - 1]);
                }
            }
        }

        #[test]
        fn invariant_under_duplication(obs in arb_obs()) {
            let c = kaplan_meier(&obs).unwrap();
            let doubled: Vec<_> = obs.iter().chain(obs.iter()).copied().collect();
            let d = kaplan_meier(&doubled).unwrap();
            prop_assert_eq!(&c.times, &d.times);
            for (a, b) in c.survival.iter().zip(&d.survival) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn quartiles_ordered(values in proptest::collection::vec(0.0f64..1e4, 1..60)) {
            let d = describe(&values).unwrap();
            prop_assert!(d.min <= d.q25 && d.q25 <= d.median && d.median <= d.q75 && d.q75 <= d.max);
        }
    }
}
