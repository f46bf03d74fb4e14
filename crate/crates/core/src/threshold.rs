//! Precision-rate function and the required-key solver.
//!
//! A node that combines `k + 1` of `n` noisy keys decodes with precision
//! `D(k, n, beta)`, the binomial CDF at `k` with per-key noise rate `beta`.
//! The required key count for a target precision `alpha` is the smallest
//! `k` with `D(k, n, beta) >= alpha`.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ThresholdError {
    #[error("key count {k} exceeds n = {n}")]
    KeysExceedN { k: usize, n: usize },
    #[error("noise rate beta = {0} must lie in (0, 1)")]
    BadBeta(f64),
    #[error("target precision alpha = {0} must lie in (0, 1]")]
    BadAlpha(f64),
    #[error("n must be positive")]
    ZeroN,
}

/// Outcome of [`required_keys`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RequiredKeys {
    Keys(usize),
    /// The smallest sufficient `k` is more than the `n - 1` gossiped keys
    /// a node can ever collect.
    Infeasible {
        k: usize,
    },
}

impl RequiredKeys {
    pub fn keys(self) -> Option<usize> {
        match self {
            RequiredKeys::Keys(k) => Some(k),
            RequiredKeys::Infeasible { .. } => None,
        }
    }

    /// The solved `k`, feasible or not.
    pub fn raw(self) -> usize {
        match self {
            RequiredKeys::Keys(k) | RequiredKeys::Infeasible { k } => k,
        }
    }
}

fn check_beta(beta: f64) -> Result<(), ThresholdError> {
    if beta > 0.0 && beta < 1.0 {
        Ok(())
    } else {
        Err(ThresholdError::BadBeta(beta))
    }
}

/// `D(k, n, beta) = sum_{i <= k} C(n, i) beta^i (1 - beta)^(n - i)`.
///
/// Terms are accumulated in log space with an incremental log-binomial so
/// that `n` in the tens of thousands neither overflows nor underflows.
pub fn precision(k: usize, n: usize, beta: f64) -> Result<f64, ThresholdError> {
    check_beta(beta)?;
    if k > n {
        return Err(ThresholdError::KeysExceedN { k, n });
    }
    if k == n {
        return Ok(1.0);
    }
    let ln_b = beta.ln();
    let ln_q = (-beta).ln_1p();
    let nf = n as f64;

    let mut ln_choose = 0.0;
    let mut logs = Vec::with_capacity(k + 1);
    for i in 0..=k {
        if i > 0 {
            ln_choose += ((nf - i as f64 + 1.0) / i as f64).ln();
        }
        logs.push(ln_choose + i as f64 * ln_b + (nf - i as f64) * ln_q);
    }
    let peak = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logs.iter().map(|l| (l - peak).exp()).sum();
    Ok((peak + sum.ln()).exp().clamp(0.0, 1.0))
}

/// Smallest `k` in `0..=n` with `rate(k) >= alpha`, for any precision-rate
/// function that is nondecreasing in `k` and reaches 1 at `k = n`.
pub fn required_keys_with<F>(n: usize, alpha: f64, rate: F) -> Result<RequiredKeys, ThresholdError>
where
    F: Fn(usize) -> Result<f64, ThresholdError>,
{
    if n == 0 {
        return Err(ThresholdError::ZeroN);
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(ThresholdError::BadAlpha(alpha));
    }
    // binary search for the first k meeting the target
    let (mut lo, mut hi) = (0usize, n);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if rate(mid)? >= alpha {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Ok(if lo + 1 > n {
        RequiredKeys::Infeasible { k: lo }
    } else {
        RequiredKeys::Keys(lo)
    })
}

/// `inf { k : D(k, n, beta) >= alpha }` for the binomial precision rate.
pub fn required_keys(n: usize, beta: f64, alpha: f64) -> Result<RequiredKeys, ThresholdError> {
    check_beta(beta)?;
    required_keys_with(n, alpha, |k| precision(k, n, beta))
}
