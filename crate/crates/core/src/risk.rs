//! Exact Beta-tail feasibility certificates for scenario programs.
//!
//! `binomial_tail(h, n, eps)` is the probability that a Binomial(n, eps)
//! variable is below `h`. It bounds the chance that a solution built from `n`
//! i.i.d. scenarios with complexity `h` has violation probability above `eps`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest sample size `sample_size` will search.
pub const MAX_SAMPLE_SIZE: usize = 10_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum RiskError {
    #[error("epsilon must lie in (0, 1), got {0}")]
    Epsilon(f64),
    #[error("beta must lie in (0, 1), got {0}")]
    Beta(f64),
    #[error("complexity must be >= 1")]
    Complexity,
    #[error("sample count {n} is smaller than complexity {h}")]
    TooFewSamples { h: usize, n: usize },
    #[error("required sample size exceeds {MAX_SAMPLE_SIZE}")]
    Overflow,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskBudget {
    pub epsilon: f64,
    pub beta: f64,
}

impl RiskBudget {
    pub fn new(epsilon: f64, beta: f64) -> Result<Self, RiskError> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(RiskError::Epsilon(epsilon));
        }
        if !(beta > 0.0 && beta < 1.0) {
            return Err(RiskError::Beta(beta));
        }
        Ok(Self { epsilon, beta })
    }
}

/// Risk statement attached to a solved scenario program.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub complexity_h: usize,
    pub sample_count_n: usize,
    pub posterior_epsilon: f64,
}

impl Certificate {
    pub fn new(h: usize, n: usize, beta: f64) -> Result<Self, RiskError> {
        Ok(Self {
            complexity_h: h,
            sample_count_n: n,
            posterior_epsilon: posterior_risk(h.max(1), n, beta)?,
        })
    }
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// `ln` of `sum_{i<h} C(n,i) eps^i (1-eps)^(n-i)`.
///
/// Binomial coefficients are accumulated as `ln C(n,i+1) = ln C(n,i) + ln(n-i) - ln(i+1)`.
pub fn ln_binomial_tail(h: usize, n: usize, epsilon: f64) -> f64 {
    debug_assert!(h >= 1 && n >= h);
    if epsilon <= 0.0 {
        return 0.0;
    }
    if epsilon >= 1.0 {
        // Only the i = n term survives, and it is excluded when h <= n.
        return f64::NEG_INFINITY;
    }
    let ln_e = epsilon.ln();
    let ln_q = (-epsilon).ln_1p();
    let mut ln_c = 0.0;
    let mut terms = Vec::with_capacity(h);
    for i in 0..h {
        terms.push(ln_c + i as f64 * ln_e + (n - i) as f64 * ln_q);
        ln_c += ((n - i) as f64).ln() - ((i + 1) as f64).ln();
    }
    log_sum_exp(&terms).min(0.0)
}

pub fn binomial_tail(h: usize, n: usize, epsilon: f64) -> f64 {
    ln_binomial_tail(h, n, epsilon).exp()
}

/// Smallest `N >= h` whose tail at `budget.epsilon` is at most `budget.beta`.
pub fn sample_size(h: usize, budget: RiskBudget) -> Result<usize, RiskError> {
    if h == 0 {
        return Err(RiskError::Complexity);
    }
    let RiskBudget { epsilon, beta } = RiskBudget::new(budget.epsilon, budget.beta)?;
    let ln_beta = beta.ln();
    let ok = |n: usize| ln_binomial_tail(h, n, epsilon) <= ln_beta;

    if ok(h) {
        return Ok(h);
    }
    let mut lo = h; // tail > beta here
    let mut hi = h.max(1) * 2;
    while !ok(hi) {
        lo = hi;
        if hi >= MAX_SAMPLE_SIZE {
            return Err(RiskError::Overflow);
        }
        hi = (hi * 2).min(MAX_SAMPLE_SIZE);
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Bisection on the strictly decreasing map `eps -> tail` for `tail(eps) = target`.
fn invert_tail(ln_tail: impl Fn(f64) -> f64, ln_target: f64) -> f64 {
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if ln_tail(mid) > ln_target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// The `eps` in (0,1) with `binomial_tail(h, n, eps) = beta`.
pub fn posterior_risk(h: usize, n: usize, beta: f64) -> Result<f64, RiskError> {
    if h == 0 {
        return Err(RiskError::Complexity);
    }
    if n < h {
        return Err(RiskError::TooFewSamples { h, n });
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(RiskError::Beta(beta));
    }
    Ok(invert_tail(|e| ln_binomial_tail(h, n, e), beta.ln()))
}

/// Violation bound after discarding `k` of `n` scenarios from a program of complexity `h`:
/// `C(k+h-1, k) * binomial_tail(k+h, n, eps)`.
pub fn discard_tail(h: usize, k: usize, n: usize, epsilon: f64) -> f64 {
    ln_discard_tail(h, k, n, epsilon).exp().min(1.0)
}

fn ln_discard_tail(h: usize, k: usize, n: usize, epsilon: f64) -> f64 {
    let mut ln_c = 0.0;
    for i in 1..=k {
        ln_c += ((h - 1 + i) as f64).ln() - (i as f64).ln();
    }
    ln_c + ln_binomial_tail(k + h, n, epsilon)
}

/// The `eps` at which the discarding bound equals `beta`.
pub fn discard_posterior_risk(h: usize, k: usize, n: usize, beta: f64) -> Result<f64, RiskError> {
    if h == 0 {
        return Err(RiskError::Complexity);
    }
    if n < h + k {
        return Err(RiskError::TooFewSamples { h: h + k, n });
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(RiskError::Beta(beta));
    }
    Ok(invert_tail(|e| ln_discard_tail(h, k, n, e), beta.ln()))
}
