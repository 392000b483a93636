//! Avalanche-size CCDF and power-law tail fits with KS-selected cutoff.
//!
//! Two exponent estimators are available. [`TailEstimator::DiscreteMle`]
//! maximises the exact discrete power-law likelihood
//! `p(x) = x^{-α} / ζ(α, x_min)` and is the default. [`TailEstimator::Hill`]
//! is the closed-form continuous estimator with the usual half-integer
//! shift, `α = 1 + n / Σ ln(x / (x_min − ½))`. It is fast but noticeably
//! biased when the cutoff is only a few units.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_MIN_TAIL: usize = 50;
/// Upper end of the exponent search interval for the discrete MLE.
pub const MAX_ALPHA: f64 = 50.0;
const MIN_ALPHA: f64 = 1.0 + 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TailEstimator {
    #[default]
    DiscreteMle,
    Hill,
}

impl std::str::FromStr for TailEstimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "discrete-mle" | "discrete" | "mle" => Ok(TailEstimator::DiscreteMle),
            "hill" => Ok(TailEstimator::Hill),
            _ => Err(Error::InvalidArgument(format!(
                "unknown tail estimator {s:?} (expected discrete-mle or hill)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TailConfig {
    /// Minimum number of samples at or above a candidate cutoff.
    pub min_tail: usize,
    pub estimator: TailEstimator,
}

impl Default for TailConfig {
    fn default() -> Self {
        TailConfig {
            min_tail: DEFAULT_MIN_TAIL,
            estimator: TailEstimator::DiscreteMle,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailFit {
    pub x_min: usize,
    pub n_tail: usize,
    /// `None` when no candidate cutoff supports a fit.
    pub alpha: Option<f64>,
    pub ks_distance: Option<f64>,
    pub informative: bool,
}

impl TailFit {
    /// `(α − 1)/√n_tail`, the continuous approximation. It runs low for the
    /// discrete fit when `x_min` is small.
    pub fn standard_error(&self) -> Option<f64> {
        self.alpha.map(|a| (a - 1.0) / (self.n_tail as f64).sqrt())
    }
}

fn check_samples(samples: &[usize]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("empty sample".into()));
    }
    if samples.contains(&0) {
        return Err(Error::InvalidArgument(
            "tail samples must be positive integers".into(),
        ));
    }
    Ok(())
}

/// Distinct values with their counts, ascending.
fn value_counts(samples: &[usize]) -> Vec<(usize, usize)> {
    let mut m = BTreeMap::new();
    for &s in samples {
        *m.entry(s).or_insert(0usize) += 1;
    }
    m.into_iter().collect()
}

/// `P(S ≥ x)` at each distinct sample value.
pub fn ccdf(samples: &[usize]) -> Result<Vec<(usize, f64)>> {
    check_samples(samples)?;
    let n = samples.len() as f64;
    let mut remaining = samples.len();
    Ok(value_counts(samples)
        .into_iter()
        .map(|(x, c)| {
            let p = remaining as f64 / n;
            remaining -= c;
            (x, p)
        })
        .collect())
}

/// Continuous Hill estimator `1 + n / Σ ln(x/scale)` over `values`.
pub fn hill_continuous(values: &[f64], scale: f64) -> Result<f64> {
    if values.len() < 2 || !(scale > 0.0) {
        return Err(Error::InvalidArgument(
            "Hill estimator needs >= 2 values and a positive scale".into(),
        ));
    }
    let log_sum: f64 = values.iter().map(|x| (x / scale).ln()).sum();
    if !(log_sum > 0.0) {
        return Err(Error::InvalidArgument(
            "degenerate tail: no spread above the scale".into(),
        ));
    }
    Ok(1.0 + values.len() as f64 / log_sum)
}

fn tail_of(samples: &[usize], x_min: usize) -> Result<Vec<usize>> {
    if x_min == 0 {
        return Err(Error::InvalidArgument(
            "x_min must be a positive integer".into(),
        ));
    }
    let tail: Vec<usize> = samples.iter().copied().filter(|&x| x >= x_min).collect();
    if tail.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 samples >= x_min = {x_min}, got {}",
            tail.len()
        )));
    }
    if tail.iter().all(|&x| x == x_min) {
        return Err(Error::InvalidArgument(format!(
            "degenerate tail: every sample equals x_min = {x_min}"
        )));
    }
    Ok(tail)
}

/// Hill estimator with the half-integer continuity shift.
pub fn hill_alpha(samples: &[usize], x_min: usize) -> Result<f64> {
    let tail: Vec<f64> = tail_of(samples, x_min)?
        .into_iter()
        .map(|x| x as f64)
        .collect();
    hill_continuous(&tail, x_min as f64 - 0.5)
}

/// Discrete power-law MLE over samples `≥ x_min`.
pub fn discrete_mle_alpha(samples: &[usize], x_min: usize) -> Result<f64> {
    let tail = tail_of(samples, x_min)?;
    let log_sum: f64 = tail.iter().map(|&x| (x as f64).ln()).sum();
    Ok(discrete_mle_from_sums(tail.len(), log_sum, x_min))
}

fn discrete_mle_from_sums(n: usize, log_sum: f64, x_min: usize) -> f64 {
    let q = x_min as f64;
    let n = n as f64;
    // Negative log-likelihood, convex in α.
    let nll = |a: f64| a * log_sum + n * ln_hurwitz_zeta(a, q);
    golden_min(nll, MIN_ALPHA, MAX_ALPHA, 1e-10)
}

pub fn fit_alpha(samples: &[usize], x_min: usize, estimator: TailEstimator) -> Result<f64> {
    match estimator {
        TailEstimator::DiscreteMle => discrete_mle_alpha(samples, x_min),
        TailEstimator::Hill => hill_alpha(samples, x_min),
    }
}

fn golden_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let (mut fc, mut fd) = (f(c), f(d));
    while hi - lo > tol * (1.0 + c.abs()) {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = f(d);
        }
    }
    0.5 * (lo + hi)
}

// Euler-Maclaurin coefficients B_{2j} / (2j)!.
const EM_COEFFS: [f64; 6] = [
    1.0 / 12.0,
    -1.0 / 720.0,
    1.0 / 30_240.0,
    -1.0 / 1_209_600.0,
    1.0 / 47_900_160.0,
    -691.0 / 1_307_674_368_000.0,
];

/// `ln ζ(s, q)` for `s > 1`, `q > 0`, computed as `−s ln q + ln(q^s ζ(s, q))`
/// so large cutoffs and exponents do not underflow.
pub fn ln_hurwitz_zeta(s: f64, q: f64) -> f64 {
    debug_assert!(s > 1.0 && q > 0.0);
    let direct = (15.0 + s - q).ceil().max(0.0) as usize;
    let rel = |x: f64| (x / q).powf(-s);
    let mut acc: f64 = (0..direct).map(|k| rel(q + k as f64)).sum();
    let a = q + direct as f64;
    let ra = rel(a);
    acc += ra * a / (s - 1.0) + 0.5 * ra;
    let mut poch = s;
    let mut pow = ra / a;
    for (j, c) in EM_COEFFS.iter().enumerate() {
        acc += c * poch * pow;
        let k = 2.0 * (j as f64 + 1.0);
        poch *= (s + k - 1.0) * (s + k);
        pow /= a * a;
    }
    -s * q.ln() + acc.ln()
}

/// Model `P(X ≥ x | X ≥ x_min)` for the chosen estimator.
fn model_ccdf(estimator: TailEstimator, alpha: f64, x_min: usize, ln_z_min: f64, x: usize) -> f64 {
    match estimator {
        TailEstimator::DiscreteMle => (ln_hurwitz_zeta(alpha, x as f64) - ln_z_min).exp(),
        TailEstimator::Hill => ((x as f64 - 0.5) / (x_min as f64 - 0.5)).powf(1.0 - alpha),
    }
}

/// KS distance between the empirical and fitted tail-conditional CCDFs.
/// `tail` is the value-count table restricted to `x ≥ x_min`.
fn ks_distance(
    tail: &[(usize, usize)],
    n_tail: usize,
    alpha: f64,
    estimator: TailEstimator,
) -> f64 {
    let x_min = tail[0].0;
    let ln_z_min = match estimator {
        TailEstimator::DiscreteMle => ln_hurwitz_zeta(alpha, x_min as f64),
        TailEstimator::Hill => 0.0,
    };
    let n = n_tail as f64;
    let mut remaining = n_tail;
    let mut ks: f64 = 0.0;
    for &(x, c) in tail {
        // Empirical CCDF is flat on (previous value, x]; the model is
        // decreasing, so the extremes sit at x and x + 1.
        let at = remaining as f64 / n;
        remaining -= c;
        let after = remaining as f64 / n;
        let m_at = model_ccdf(estimator, alpha, x_min, ln_z_min, x);
        let m_after = model_ccdf(estimator, alpha, x_min, ln_z_min, x + 1);
        ks = ks.max((at - m_at).abs()).max((after - m_after).abs());
    }
    ks.min(1.0)
}

/// Scans candidate cutoffs and keeps the fit with the smallest KS distance
/// (ties go to the smaller cutoff). Candidates are distinct values with at
/// least `min_tail` samples at or above them and at least three distinct
/// values in their tail.
pub fn select_xmin(samples: &[usize], cfg: &TailConfig) -> Result<TailFit> {
    check_samples(samples)?;
    let counts = value_counts(samples);
    let m = counts.len();

    // suffix[k] = samples >= counts[k].0, log_suffix likewise for Σ ln x.
    let mut suffix = vec![0usize; m + 1];
    let mut log_suffix = vec![0.0f64; m + 1];
    for k in (0..m).rev() {
        let (x, c) = counts[k];
        suffix[k] = suffix[k + 1] + c;
        log_suffix[k] = log_suffix[k + 1] + c as f64 * (x as f64).ln();
    }

    let uninformative = TailFit {
        x_min: counts[0].0,
        n_tail: samples.len(),
        alpha: None,
        ks_distance: None,
        informative: false,
    };
    if m <= 2 {
        return Ok(uninformative);
    }

    let min_tail = cfg.min_tail.max(2);
    let candidates: Vec<usize> = (0..m.saturating_sub(2))
        .filter(|&k| suffix[k] >= min_tail)
        .collect();
    let fits: Vec<(usize, f64, f64)> = candidates
        .par_iter()
        .map(|&k| {
            let x_min = counts[k].0;
            let n_tail = suffix[k];
            let alpha = match cfg.estimator {
                TailEstimator::DiscreteMle => discrete_mle_from_sums(n_tail, log_suffix[k], x_min),
                TailEstimator::Hill => {
                    let scale = (x_min as f64 - 0.5).ln();
                    1.0 + n_tail as f64 / (log_suffix[k] - n_tail as f64 * scale)
                }
            };
            (
                k,
                alpha,
                ks_distance(&counts[k..], n_tail, alpha, cfg.estimator),
            )
        })
        .collect();

    let best = fits
        .into_iter()
        .fold(None::<(usize, f64, f64)>, |best, cur| match best {
            Some(b) if b.2 <= cur.2 => Some(b),
            _ => Some(cur),
        });
    Ok(match best {
        None => uninformative,
        Some((k, alpha, ks)) => TailFit {
            x_min: counts[k].0,
            n_tail: suffix[k],
            alpha: Some(alpha),
            ks_distance: Some(ks),
            informative: alpha > 1.0,
        },
    })
}
