//! Maximum-likelihood fitting of resolution-time distributions.
//!
//! Four families are supported: Exponential, Weibull, Gamma and Log-Normal.
//! Exponential and Log-Normal estimates are closed form. The Gamma shape
//! solves `ln(a) - digamma(a) = ln(mean) - mean(ln x)` by Newton iteration
//! and the Weibull shape solves the profile-likelihood equation by a
//! bracketed Newton iteration; the remaining parameter follows in closed form.
//!
//! Fits are compared by AIC and checked with the Anderson-Darling statistic,
//! whose p-value comes from a seeded parametric bootstrap that refits every
//! replicate.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::ContinuousCDF;
use statrs::function::erf::{erfc, erfc_inv};
use statrs::function::gamma::{digamma, gamma_lr, ln_gamma};
use thiserror::Error;

/// Smallest sample a fit accepts.
pub const MIN_SAMPLES: usize = 10;
/// Value substituted for zero durations before fitting.
pub const ZERO_SHIFT: f64 = 0.5;
/// CDF values are clamped into `[EPS, 1 - EPS]` inside the A-D statistic.
pub const CDF_EPS: f64 = 1e-12;
pub const DEFAULT_BOOTSTRAP: usize = 250;
/// Bootstrap p-values are clipped into `[P_FLOOR, 1]`.
pub const P_FLOOR: f64 = 0.01;

const TOLERANCE: f64 = 1e-9;
const MAX_ITER: usize = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("need at least {MIN_SAMPLES} observations, got {0}")]
    InsufficientData(usize),
    #[error("invalid observation {0}: durations must be finite and non-negative")]
    InvalidData(f64),
    #[error("all observations are equal")]
    DegenerateData,
    #[error("{family} fit did not converge in {iterations} iterations")]
    NonConvergence { family: Family, iterations: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Exponential,
    Weibull,
    Gamma,
    LogNormal,
}

impl Family {
    pub const ALL: [Family; 4] = [
        Family::Exponential,
        Family::Weibull,
        Family::Gamma,
        Family::LogNormal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Exponential => "exponential",
            Family::Weibull => "weibull",
            Family::Gamma => "gamma",
            Family::LogNormal => "lognormal",
        }
    }

    pub fn param_count(self) -> usize {
        match self {
            Family::Exponential => 1,
            _ => 2,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s.to_ascii_lowercase())
            .ok_or_else(|| format!("unknown family {s:?}"))
    }
}

/// Family parameters. Gamma uses shape and rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Params {
    Exponential { rate: f64 },
    Weibull { shape: f64, scale: f64 },
    Gamma { shape: f64, rate: f64 },
    LogNormal { mu: f64, sigma: f64 },
}

impl Params {
    pub fn family(&self) -> Family {
        match self {
            Params::Exponential { .. } => Family::Exponential,
            Params::Weibull { .. } => Family::Weibull,
            Params::Gamma { .. } => Family::Gamma,
            Params::LogNormal { .. } => Family::LogNormal,
        }
    }

    pub fn is_valid(&self) -> bool {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        match *self {
            Params::Exponential { rate } => pos(rate),
            Params::Weibull { shape, scale } => pos(shape) && pos(scale),
            Params::Gamma { shape, rate } => pos(shape) && pos(rate),
            Params::LogNormal { mu, sigma } => mu.is_finite() && pos(sigma),
        }
    }

    /// Parameter vector in declaration order.
    pub fn values(&self) -> Vec<f64> {
        match *self {
            Params::Exponential { rate } => vec![rate],
            Params::Weibull { shape, scale } => vec![shape, scale],
            Params::Gamma { shape, rate } => vec![shape, rate],
            Params::LogNormal { mu, sigma } => vec![mu, sigma],
        }
    }

    pub fn with_values(&self, v: &[f64]) -> Params {
        match self {
            Params::Exponential { .. } => Params::Exponential { rate: v[0] },
            Params::Weibull { .. } => Params::Weibull {
                shape: v[0],
                scale: v[1],
            },
            Params::Gamma { .. } => Params::Gamma {
                shape: v[0],
                rate: v[1],
            },
            Params::LogNormal { .. } => Params::LogNormal {
                mu: v[0],
                sigma: v[1],
            },
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Params::Exponential { rate } => 1.0 / rate,
            Params::Weibull { shape, scale } => scale * ln_gamma(1.0 + 1.0 / shape).exp(),
            Params::Gamma { shape, rate } => shape / rate,
            Params::LogNormal { mu, sigma } => (mu + sigma * sigma / 2.0).exp(),
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        match *self {
            Params::Exponential { rate } => -(-rate * x).exp_m1(),
            Params::Weibull { shape, scale } => -(-(x / scale).powf(shape)).exp_m1(),
            Params::Gamma { shape, rate } => gamma_lr(shape, rate * x),
            Params::LogNormal { mu, sigma } => {
                0.5 * erfc(-(x.ln() - mu) / (sigma * std::f64::consts::SQRT_2))
            }
        }
    }

    /// Inverse CDF for `p` in `(0, 1)`.
    pub fn quantile(&self, p: f64) -> f64 {
        match *self {
            Params::Exponential { rate } => -(-p).ln_1p() / rate,
            Params::Weibull { shape, scale } => scale * (-(-p).ln_1p()).powf(1.0 / shape),
            Params::Gamma { shape, rate } => statrs::distribution::Gamma::new(shape, rate)
                .map(|g| g.inverse_cdf(p))
                .unwrap_or(f64::NAN),
            Params::LogNormal { mu, sigma } => {
                let z = -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p);
                (mu + sigma * z).exp()
            }
        }
    }

    pub fn log_likelihood(&self, data: &[f64]) -> f64 {
        let n = data.len() as f64;
        let sum_x: f64 = data.iter().sum();
        let sum_ln: f64 = data.iter().map(|x| x.ln()).sum();
        match *self {
            Params::Exponential { rate } => n * rate.ln() - rate * sum_x,
            Params::Weibull { shape, scale } => {
                let tail: f64 = data.iter().map(|x| (x / scale).powf(shape)).sum();
                n * shape.ln() - n * shape * scale.ln() + (shape - 1.0) * sum_ln - tail
            }
            Params::Gamma { shape, rate } => {
                n * shape * rate.ln() - n * ln_gamma(shape) + (shape - 1.0) * sum_ln - rate * sum_x
            }
            Params::LogNormal { mu, sigma } => {
                let ss: f64 = data.iter().map(|x| (x.ln() - mu).powi(2)).sum();
                -sum_ln
                    - n * sigma.ln()
                    - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
                    - ss / (2.0 * sigma * sigma)
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Params::Exponential { rate } => rand_distr::Exp::new(rate).unwrap().sample(rng),
            Params::Weibull { shape, scale } => {
                rand_distr::Weibull::new(scale, shape).unwrap().sample(rng)
            }
            Params::Gamma { shape, rate } => {
                rand_distr::Gamma::new(shape, 1.0 / rate).unwrap().sample(rng)
            }
            Params::LogNormal { mu, sigma } => {
                rand_distr::LogNormal::new(mu, sigma).unwrap().sample(rng)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GoodnessOfFit {
    pub statistic: f64,
    pub p_value: f64,
    /// Bootstrap replicates that refitted successfully.
    pub replicates: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub family: Family,
    pub params: Params,
    pub n: usize,
    pub log_likelihood: f64,
    pub aic: f64,
    pub goodness: Option<GoodnessOfFit>,
}

/// Serialised fit: `{family, params, loglik, aic, ad_stat, ad_p}`.
#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub family: Family,
    pub params: Params,
    pub loglik: f64,
    pub aic: f64,
    pub ad_stat: Option<f64>,
    pub ad_p: Option<f64>,
}

impl From<&FitResult> for FitReport {
    fn from(f: &FitResult) -> Self {
        FitReport {
            family: f.family,
            params: f.params,
            loglik: f.log_likelihood,
            aic: f.aic,
            ad_stat: f.goodness.map(|g| g.statistic),
            ad_p: f.goodness.map(|g| g.p_value),
        }
    }
}

/// Validates durations and replaces zeros by [`ZERO_SHIFT`].
pub fn prepare_durations(data: &[f64]) -> Result<Vec<f64>, FitError> {
    data.iter()
        .map(|&x| {
            if !x.is_finite() || x < 0.0 {
                Err(FitError::InvalidData(x))
            } else if x == 0.0 {
                Ok(ZERO_SHIFT)
            } else {
                Ok(x)
            }
        })
        .collect()
}

fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 12.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    acc + inv
        + inv2 / 2.0
        + inv * inv2 * (1.0 / 6.0 - inv2 * (1.0 / 30.0 - inv2 * (1.0 / 42.0 - inv2 / 30.0)))
}

fn fit_gamma(data: &[f64]) -> Result<Params, FitError> {
    let n = data.len() as f64;
    let mean = data.iter().sum::<f64>() / n;
    let mean_ln = data.iter().map(|x| x.ln()).sum::<f64>() / n;
    let s = mean.ln() - mean_ln;
    if s <= 0.0 || !s.is_finite() {
        return Err(FitError::DegenerateData);
    }
    let mut a = (3.0 - s + ((s - 3.0).powi(2) + 24.0 * s).sqrt()) / (12.0 * s);
    for _ in 0..MAX_ITER {
        let f = a.ln() - digamma(a) - s;
        let df = 1.0 / a - trigamma(a);
        let mut next = a - f / df;
        if !next.is_finite() || next <= 0.0 {
            next = a / 2.0;
        }
        let done = ((next - a) / a).abs() < TOLERANCE;
        a = next;
        if done {
            return Ok(Params::Gamma {
                shape: a,
                rate: a / mean,
            });
        }
    }
    Err(FitError::NonConvergence {
        family: Family::Gamma,
        iterations: MAX_ITER,
    })
}

/// Weibull profile equation on geometric-mean normalised data
/// (`mean(ln y) = 0`): `g(k) = sum(y^k ln y) / sum(y^k) - 1/k`, increasing in `k`.
/// Returns `(g, g', ln(mean(y^k)))`, evaluated with a max shift to avoid overflow.
fn weibull_profile(ln_y: &[f64], k: f64) -> (f64, f64, f64) {
    let m = ln_y.iter().fold(f64::NEG_INFINITY, |acc, &l| acc.max(k * l));
    let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
    for &l in ln_y {
        let w = (k * l - m).exp();
        s0 += w;
        s1 += w * l;
        s2 += w * l * l;
    }
    let ratio = s1 / s0;
    let g = ratio - 1.0 / k;
    let dg = s2 / s0 - ratio * ratio + 1.0 / (k * k);
    (g, dg, m + (s0 / ln_y.len() as f64).ln())
}

fn fit_weibull(data: &[f64]) -> Result<Params, FitError> {
    let n = data.len() as f64;
    let mean_ln = data.iter().map(|x| x.ln()).sum::<f64>() / n;
    let ln_y: Vec<f64> = data.iter().map(|x| x.ln() - mean_ln).collect();
    let sd = (ln_y.iter().map(|l| l * l).sum::<f64>() / n).sqrt();
    if sd <= 0.0 || !sd.is_finite() {
        return Err(FitError::DegenerateData);
    }
    let mut k = 1.2825 / sd;
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    for _ in 0..MAX_ITER {
        let (g, dg, _) = weibull_profile(&ln_y, k);
        if g < 0.0 {
            lo = lo.max(k);
        } else {
            hi = hi.min(k);
        }
        let mut next = k - g / dg;
        if !next.is_finite() || next <= lo || next >= hi {
            next = if hi.is_finite() { 0.5 * (lo + hi) } else { 2.0 * k };
        }
        let done = ((next - k) / k).abs() < TOLERANCE;
        k = next;
        if done {
            let (_, _, ln_mean_pow) = weibull_profile(&ln_y, k);
            let scale = (mean_ln + ln_mean_pow / k).exp();
            return Ok(Params::Weibull { shape: k, scale });
        }
    }
    Err(FitError::NonConvergence {
        family: Family::Weibull,
        iterations: MAX_ITER,
    })
}

fn estimate(family: Family, data: &[f64]) -> Result<Params, FitError> {
    let n = data.len() as f64;
    match family {
        Family::Exponential => Ok(Params::Exponential {
            rate: n / data.iter().sum::<f64>(),
        }),
        Family::LogNormal => {
            let mu = data.iter().map(|x| x.ln()).sum::<f64>() / n;
            let var = data.iter().map(|x| (x.ln() - mu).powi(2)).sum::<f64>() / n;
            Ok(Params::LogNormal {
                mu,
                sigma: var.sqrt(),
            })
        }
        Family::Gamma => fit_gamma(data),
        Family::Weibull => fit_weibull(data),
    }
}

/// Maximum-likelihood fit of `family` to non-negative durations.
pub fn fit_mle(family: Family, data: &[f64]) -> Result<FitResult, FitError> {
    if data.len() < MIN_SAMPLES {
        return Err(FitError::InsufficientData(data.len()));
    }
    let data = prepare_durations(data)?;
    if data.iter().all(|&x| x == data[0]) {
        return Err(FitError::DegenerateData);
    }
    let params = estimate(family, &data)?;
    let log_likelihood = params.log_likelihood(&data);
    Ok(FitResult {
        family,
        params,
        n: data.len(),
        log_likelihood,
        aic: 2.0 * family.param_count() as f64 - 2.0 * log_likelihood,
        goodness: None,
    })
}

/// Fits sorted by ascending AIC, ties broken by family name.
pub fn aic_rank(mut fits: Vec<FitResult>) -> Vec<FitResult> {
    fits.sort_by(|a, b| {
        a.aic
            .total_cmp(&b.aic)
            .then_with(|| a.family.name().cmp(b.family.name()))
    });
    fits
}

/// Anderson-Darling A² of `data` against the CDF of `params`.
pub fn ad_statistic(params: &Params, data: &[f64]) -> f64 {
    let mut sorted = data.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let cdf: Vec<f64> = sorted
        .iter()
        .map(|&x| params.cdf(x).clamp(CDF_EPS, 1.0 - CDF_EPS))
        .collect();
    let sum: f64 = (0..n)
        .map(|i| (2 * i + 1) as f64 * (cdf[i].ln() + (1.0 - cdf[n - 1 - i]).ln()))
        .sum();
    -(n as f64) - sum / n as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BootstrapOptions {
    pub replicates: usize,
    pub seed: u64,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        Self {
            replicates: DEFAULT_BOOTSTRAP,
            seed: 0,
        }
    }
}

/// Replicate `r` draws from ChaCha8 seeded with `seed`, stream `r`.
pub fn replicate_rng(seed: u64, r: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(r);
    rng
}

/// A² of the fit plus a parametric-bootstrap p-value: each replicate draws
/// `n` values from the fitted distribution, refits the same family and
/// recomputes A². The p-value is the share of replicates at or above the
/// observed statistic, clipped into `[0.01, 1]`.
pub fn anderson_darling(
    fit: &FitResult,
    data: &[f64],
    opts: BootstrapOptions,
) -> Result<GoodnessOfFit, FitError> {
    let data = prepare_durations(data)?;
    let observed = ad_statistic(&fit.params, &data);
    let n = data.len();
    let stats: Vec<f64> = (0..opts.replicates as u64)
        .into_par_iter()
        .filter_map(|r| {
            let mut rng = replicate_rng(opts.seed, r);
            let sample: Vec<f64> = (0..n).map(|_| fit.params.sample(&mut rng)).collect();
            let refit = fit_mle(fit.family, &sample).ok()?;
            Some(ad_statistic(&refit.params, &sample))
        })
        .collect();
    if stats.is_empty() {
        return Err(FitError::NonConvergence {
            family: fit.family,
            iterations: opts.replicates,
        });
    }
    let exceed = stats.iter().filter(|&&s| s >= observed).count();
    let p = (exceed as f64 / stats.len() as f64).clamp(P_FLOOR, 1.0);
    Ok(GoodnessOfFit {
        statistic: observed,
        p_value: p,
        replicates: stats.len(),
    })
}

/// Fits `family`, then attaches the bootstrap goodness of fit.
pub fn fit_with_gof(
    family: Family,
    data: &[f64],
    opts: BootstrapOptions,
) -> Result<FitResult, FitError> {
    let mut fit = fit_mle(family, data)?;
    fit.goodness = Some(anderson_darling(&fit, data, opts)?);
    Ok(fit)
}

/// Upper-tail probability of the limiting A² distribution
/// (Marsaglia & Marsaglia approximation, absolute error below 2e-6).
pub fn ad_asymptotic_p_value(a2: f64) -> f64 {
    if a2 <= 0.0 {
        return 1.0;
    }
    let z = a2;
    let cdf = if z < 2.0 {
        (-1.2337141 / z).exp() / z.sqrt()
            * (2.00012
                + (0.247105
                    - (0.0649821 - (0.0347962 - (0.0116720 - 0.00168691 * z) * z) * z) * z)
                    * z)
    } else {
        (-(1.0776
            - (2.30695 - (0.43424 - (0.082433 - (0.008056 - 0.0003146 * z) * z) * z) * z) * z)
            .exp())
        .exp()
    };
    (1.0 - cdf).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TwoSampleAd {
    pub statistic: f64,
    pub p_value: f64,
}

/// Two-sample Anderson-Darling test for continuous data:
/// `A² = (1/(m n)) * sum_{j<N} (N M_j - j m)^2 / (j (N - j))`, where `M_j`
/// counts first-sample values among the `j` smallest pooled values. The
/// p-value uses the limiting A² distribution, which the two-sample
/// statistic shares with the one-sample case.
pub fn two_sample_anderson_darling(x: &[f64], y: &[f64]) -> TwoSampleAd {
    let (m, n) = (x.len(), y.len());
    let total = m + n;
    if m == 0 || n == 0 {
        return TwoSampleAd {
            statistic: 0.0,
            p_value: 1.0,
        };
    }
    let mut pooled: Vec<(f64, bool)> = x
        .iter()
        .map(|&v| (v, true))
        .chain(y.iter().map(|&v| (v, false)))
        .collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (mf, nf, tf) = (m as f64, n as f64, total as f64);
    let mut in_first = 0usize;
    let mut sum = 0.0;
    for (j, &(_, first)) in pooled.iter().enumerate().take(total - 1) {
        if first {
            in_first += 1;
        }
        let jf = (j + 1) as f64;
        let d = tf * in_first as f64 - jf * mf;
        sum += d * d / (jf * (tf - jf));
    }
    let statistic = sum / (mf * nf);
    TwoSampleAd {
        statistic,
        p_value: ad_asymptotic_p_value(statistic),
    }
}

/// Q-Q pairs `(theoretical, empirical)` at plotting positions `(i - 0.5)/n`.
pub fn qq_points(fit: &FitResult, data: &[f64]) -> Result<Vec<(f64, f64)>, FitError> {
    let mut sorted = prepare_durations(data)?;
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    Ok(sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| (fit.params.quantile((i as f64 + 0.5) / n), x))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn draw(params: Params, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| params.sample(&mut rng)).collect()
    }

    #[test]
    fn exponential_closed_form() {
        let data: Vec<f64> = (0..10).map(|i| if i % 2 == 0 { 2.0 } else { 6.0 }).collect();
        let fit = fit_mle(Family::Exponential, &data).unwrap();
        assert_eq!(fit.params, Params::Exponential { rate: 0.25 });
        assert!((fit.aic - (2.0 - 2.0 * fit.log_likelihood)).abs() < 1e-12);
    }

    #[test]
    fn input_validation() {
        assert_eq!(fit_mle(Family::Gamma, &[1.0; 5]), Err(FitError::InsufficientData(5)));
        for fam in Family::ALL {
            assert_eq!(fit_mle(fam, &[3.0; 20]), Err(FitError::DegenerateData));
        }
        let mut data = vec![1.0; 12];
        data[3] = -2.0;
        assert_eq!(fit_mle(Family::Weibull, &data), Err(FitError::InvalidData(-2.0)));
        assert_eq!(prepare_durations(&[0.0, 2.0]).unwrap(), vec![0.5, 2.0]);
    }

    #[test]
    fn zeros_are_shifted_before_log_families() {
        let mut data: Vec<f64> = (1..30).map(f64::from).collect();
        data.push(0.0);
        let fit = fit_mle(Family::LogNormal, &data).unwrap();
        assert!(fit.params.is_valid());
    }

    #[test]
    fn trigamma_reference_values() {
        // psi'(1) = pi^2/6, psi'(1/2) = pi^2/2
        let pi2 = std::f64::consts::PI.powi(2);
        assert!((trigamma(1.0) - pi2 / 6.0).abs() < 1e-12);
        assert!((trigamma(0.5) - pi2 / 2.0).abs() < 1e-12);
        // finite difference of digamma
        for x in [0.3, 2.5, 17.0] {
            let h = 1e-5;
            let fd = (digamma(x + h) - digamma(x - h)) / (2.0 * h);
            assert!((trigamma(x) - fd).abs() < 1e-6 * fd.abs().max(1.0), "{x}");
        }
    }

    #[test]
    fn gamma_recovers_shape() {
        let data = draw(Params::Gamma { shape: 3.0, rate: 0.1 }, 50_000, 3);
        let fit = fit_mle(Family::Gamma, &data).unwrap();
        let Params::Gamma { shape, rate } = fit.params else { unreachable!() };
        assert!((shape - 3.0).abs() / 3.0 < 0.03, "{shape}");
        assert!((rate - 0.1).abs() / 0.1 < 0.03, "{rate}");
    }

    #[test]
    fn gamma_of_exponential_data_has_unit_shape() {
        let data = draw(Params::Exponential { rate: 0.02 }, 20_000, 8);
        let Params::Gamma { shape, .. } = fit_mle(Family::Gamma, &data).unwrap().params else {
            unreachable!()
        };
        assert!((0.9..=1.1).contains(&shape), "{shape}");
    }

    #[test]
    fn weibull_recovers_parameters() {
        for (shape, scale, seed) in [(0.7, 50.0, 1), (1.5, 200.0, 2), (8.0, 3.0, 3)] {
            let data = draw(Params::Weibull { shape, scale }, 20_000, seed);
            let fit = fit_mle(Family::Weibull, &data).unwrap();
            let Params::Weibull { shape: k, scale: l } = fit.params else { unreachable!() };
            assert!((k - shape).abs() / shape < 0.03, "{k} vs {shape}");
            assert!((l - scale).abs() / scale < 0.03, "{l} vs {scale}");
        }
    }

    #[test]
    fn aic_prefers_generating_family() {
        let data = draw(Params::Gamma { shape: 3.0, rate: 0.05 }, 5_000, 21);
        let fits: Vec<_> = Family::ALL.iter().map(|&f| fit_mle(f, &data).unwrap()).collect();
        let ranked = aic_rank(fits);
        let pos = |f: Family| ranked.iter().position(|r| r.family == f).unwrap();
        assert!(pos(Family::Gamma).min(pos(Family::Weibull)) < pos(Family::Exponential));
    }

    #[test]
    fn aic_ties_alphabetical() {
        let mk = |family| FitResult {
            family,
            params: Params::Exponential { rate: 1.0 },
            n: 10,
            log_likelihood: -5.0,
            aic: 12.0,
            goodness: None,
        };
        let ranked = aic_rank(vec![mk(Family::Weibull), mk(Family::LogNormal), mk(Family::Gamma), mk(Family::Exponential)]);
        let names: Vec<_> = ranked.iter().map(|f| f.family.name()).collect();
        assert_eq!(names, ["exponential", "gamma", "lognormal", "weibull"]);
    }

    #[test]
    fn ad_statistic_matches_direct_formula() {
        // n = 3 against Exp(1): hand-expanded sum
        let p = Params::Exponential { rate: 1.0 };
        let x = [0.2, 1.0, 3.0];
        let f: Vec<f64> = x.iter().map(|v: &f64| 1.0 - (-v).exp()).collect();
        let s = 1.0 * (f[0].ln() + (1.0 - f[2]).ln())
            + 3.0 * (f[1].ln() + (1.0 - f[1]).ln())
            + 5.0 * (f[2].ln() + (1.0 - f[0]).ln());
        let expect = -3.0 - s / 3.0;
        assert!((ad_statistic(&p, &[3.0, 0.2, 1.0]) - expect).abs() < 1e-12);
    }

    #[test]
    fn bimodal_data_rejects_exponential() {
        let mut data = draw(Params::Gamma { shape: 40.0, rate: 4.0 }, 200, 5);
        data.extend(draw(Params::Gamma { shape: 400.0, rate: 4.0 }, 200, 6));
        let fit = fit_mle(Family::Exponential, &data).unwrap();
        let gof = anderson_darling(&fit, &data, BootstrapOptions { replicates: 100, seed: 1 }).unwrap();
        assert!(gof.statistic > 10.0, "{}", gof.statistic);
        assert_eq!(gof.p_value, P_FLOOR);
    }

    #[test]
    fn bootstrap_is_seed_deterministic() {
        let data = draw(Params::Weibull { shape: 1.3, scale: 10.0 }, 80, 4);
        let fit = fit_mle(Family::Weibull, &data).unwrap();
        let opts = BootstrapOptions { replicates: 60, seed: 9 };
        assert_eq!(anderson_darling(&fit, &data, opts), anderson_darling(&fit, &data, opts));
    }

    #[test]
    fn asymptotic_p_matches_critical_values() {
        // classic limiting critical values for 10%, 5%, 1%
        for (a2, p) in [(1.933, 0.10), (2.492, 0.05), (3.857, 0.01)] {
            assert!((ad_asymptotic_p_value(a2) - p).abs() < 1e-3, "{a2}");
        }
        assert_eq!(ad_asymptotic_p_value(0.0), 1.0);
    }

    #[test]
    fn two_sample_matches_ecdf_form() {
        // Pettitt's form: (m n / N^2) * sum_{j<N} (F_m - G_n)^2 / (H (1 - H)) at pooled points
        let x = draw(Params::Gamma { shape: 2.0, rate: 1.0 }, 37, 1);
        let y = draw(Params::Exponential { rate: 0.8 }, 23, 2);
        let mut pooled: Vec<f64> = x.iter().chain(&y).copied().collect();
        pooled.sort_by(f64::total_cmp);
        let (m, n) = (x.len() as f64, y.len() as f64);
        let big_n = m + n;
        let mut sum = 0.0;
        for (j, z) in pooled.iter().enumerate().take(pooled.len() - 1) {
            let fm = x.iter().filter(|v| *v <= z).count() as f64 / m;
            let gn = y.iter().filter(|v| *v <= z).count() as f64 / n;
            let h = (j + 1) as f64 / big_n;
            sum += (fm - gn).powi(2) / (h * (1.0 - h));
        }
        let oracle = m * n / (big_n * big_n) * sum;
        let got = two_sample_anderson_darling(&x, &y);
        assert!((got.statistic - oracle).abs() < 1e-9 * oracle.max(1.0));
    }

    #[test]
    fn two_sample_detects_shift() {
        let x = draw(Params::Gamma { shape: 3.0, rate: 1.0 }, 2000, 1);
        let y = draw(Params::Gamma { shape: 3.0, rate: 0.8 }, 2000, 2);
        assert!(two_sample_anderson_darling(&x, &y).p_value < 0.01);
        let z = draw(Params::Gamma { shape: 3.0, rate: 1.0 }, 2000, 3);
        assert!(two_sample_anderson_darling(&x, &z).p_value > 0.01);
    }

    #[test]
    fn qq_points_track_diagonal() {
        let params = Params::Gamma { shape: 2.0, rate: 0.02 };
        let data = draw(params, 10_000, 17);
        let fit = fit_mle(Family::Gamma, &data).unwrap();
        let pts = qq_points(&fit, &data).unwrap();
        assert_eq!(pts.len(), data.len());
        let scale = fit.params.mean();
        // compare over the central 98% where order statistics are stable
        let band = pts[100..pts.len() - 100]
            .iter()
            .map(|(t, e)| (t - e).abs() / scale)
            .fold(0.0, f64::max);
        assert!(band < 0.1, "{band}");
        let one = qq_points(&fit, &[5.0]).unwrap();
        assert_eq!(one.len(), 1);
        assert!((one[0].0 - fit.params.quantile(0.5)).abs() < 1e-9);
    }

    #[test]
    fn quantile_inverts_cdf() {
        let cases = [
            Params::Exponential { rate: 0.3 },
            Params::Weibull { shape: 1.7, scale: 4.0 },
            Params::Gamma { shape: 2.5, rate: 0.4 },
            Params::LogNormal { mu: 1.0, sigma: 0.6 },
        ];
        for p in cases {
            for q in [0.01, 0.25, 0.5, 0.9, 0.999] {
                assert!((p.cdf(p.quantile(q)) - q).abs() < 1e-8, "{p:?} {q}");
            }
        }
    }

    fn arb_params() -> impl Strategy<Value = Params> {
        prop_oneof![
            (0.01f64..5.0).prop_map(|rate| Params::Exponential { rate }),
            (0.2f64..6.0, 0.1f64..500.0).prop_map(|(shape, scale)| Params::Weibull { shape, scale }),
            (0.2f64..20.0, 0.001f64..5.0).prop_map(|(shape, rate)| Params::Gamma { shape, rate }),
            (-2.0f64..6.0, 0.05f64..3.0).prop_map(|(mu, sigma)| Params::LogNormal { mu, sigma }),
        ]
    }

    proptest! {
        #[test]
        fn cdf_monotone_in_unit_interval(p in arb_params(), xs in proptest::collection::vec(0.0f64..1e4, 2..40)) {
            let mut xs = xs;
            xs.sort_by(f64::total_cmp);
            let mut prev = 0.0;
            for x in xs {
                let c = p.cdf(x);
                prop_assert!((0.0..=1.0).contains(&c));
                prop_assert!(c + 1e-15 >= prev);
                prev = c;
            }
        }

        #[test]
        fn mle_is_local_maximum(p in arb_params(), seed in 0u64..1000) {
            let data = draw(p, 300, seed);
            prop_assume!(data.iter().all(|x| x.is_finite() && *x > 1e-300));
            for fam in Family::ALL {
                let Ok(fit) = fit_mle(fam, &data) else { continue };
                prop_assert!(fit.params.is_valid());
                let base = fit.log_likelihood;
                let prepared = prepare_durations(&data).unwrap();
                let v = fit.params.values();
                for i in 0..v.len() {
                    for f in [0.99, 1.01] {
                        let mut w = v.clone();
                        w[i] *= f;
                        let ll = fit.params.with_values(&w).log_likelihood(&prepared);
                        prop_assert!(ll <= base + 1e-7 * base.abs().max(1.0), "{fam} param {i} x{f}: {ll} > {base}");
                    }
                }
            }
        }
    }
}
