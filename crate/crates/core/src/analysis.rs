//! Closed-form k-keys version ages.
//!
//! Everything reduces to three moments of `X = X_(k:m)`, the k-th smallest
//! of independent exponentials with the in-edge activation rates of one
//! node, raced against an exponential update clock `U ~ Exp(lambda_s)`:
//!
//! * `E[X]`
//! * `E[min(X, U)]`
//! * `mu = P(X <= U)`
//!
//! With memory the age is `E[X] * lambda_s`; without memory it is
//! `E[min(X, U)] * lambda_s / mu`.
//!
//! The survival function of `X` expands by inclusion-exclusion into a
//! signed sum of exponentials `sum_S c_S exp(-r_S t)` over subsets `S` of at
//! least `m - k + 1` edges, with `r_S` the subset's rate sum and
//! `c_S = (-1)^(|S| - m + k - 1) C(|S| - 1, m - k)`. Each moment is then a
//! finite sum. When the signed sum is badly conditioned, the moments are
//! recomputed from the chain of which edges have fired so far, whose terms
//! are all positive. For large `m` they come from quadrature of the
//! survival function.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::net::{Network, NodeId};
use crate::stats::GeometricLaw;
use crate::Scheme;

/// Default largest in-degree handled by exact inclusion-exclusion.
pub const DEFAULT_EXACT_THRESHOLD: usize = 16;

/// Above this ratio of absolute to signed term mass the expansion is
/// considered too cancellation-prone and the firing chain is used instead.
pub const MAX_CONDITION: f64 = 1e3;

const QUADRATURE_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("rate set must be non-empty")]
    EmptyRates,
    #[error("rate {0} must be strictly positive and finite")]
    BadRate(f64),
    #[error("order k = {k} out of range 1..={m}")]
    OrderOutOfRange { k: usize, m: usize },
    #[error("node {node} needs {k} keys but has in-degree {in_degree}")]
    InfeasibleNode {
        node: NodeId,
        in_degree: usize,
        k: usize,
    },
    #[error("k = {k} out of range 0..={max} for an SHN with n = {n}")]
    ShnKeysOutOfRange { k: usize, n: usize, max: usize },
    #[error("epsilon = {0} must be positive")]
    BadEpsilon(f64),
    #[error("search interval [{lo}, {hi}] is invalid")]
    BadInterval { lo: f64, hi: f64 },
    #[error("gap {gap_hi} at upper bound {hi} still exceeds epsilon {epsilon}")]
    NotBracketed { hi: f64, gap_hi: f64, epsilon: f64 },
    #[error("age gap is not decreasing on [{lo}, {hi}]")]
    NonMonotone { lo: f64, hi: f64 },
}

fn check_rate(r: f64) -> Result<(), AnalysisError> {
    if r.is_finite() && r > 0.0 {
        Ok(())
    } else {
        Err(AnalysisError::BadRate(r))
    }
}

/// Activation rates of the in-edges of one node.
#[derive(Debug, Clone, PartialEq)]
pub struct RateSet(Vec<f64>);

impl RateSet {
    pub fn new(rates: Vec<f64>) -> Result<Self, AnalysisError> {
        if rates.is_empty() {
            return Err(AnalysisError::EmptyRates);
        }
        for &r in &rates {
            check_rate(r)?;
        }
        Ok(Self(rates))
    }

    /// `m` copies of `rate`.
    pub fn homogeneous(m: usize, rate: f64) -> Result<Self, AnalysisError> {
        Self::new(vec![rate; m])
    }

    /// In-edge rates of an SHN receiver.
    pub fn shn(n: usize, gossip_rate: f64) -> Result<Self, AnalysisError> {
        Self::homogeneous(n.saturating_sub(1), gossip_rate / (n as f64 - 1.0))
    }

    pub fn rates(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    fn check_order(&self, k: usize) -> Result<(), AnalysisError> {
        if k == 0 || k > self.len() {
            Err(AnalysisError::OrderOutOfRange { k, m: self.len() })
        } else {
            Ok(())
        }
    }
}

/// How the order-statistic moments are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    /// Inclusion-exclusion when `m <= exact_threshold` and well conditioned,
    /// the firing chain when `m <= exact_threshold` but ill conditioned,
    /// quadrature otherwise.
    Auto,
    InclusionExclusion,
    FiringChain,
    Quadrature,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Options {
    pub exact_threshold: usize,
    pub route: Route,
}

impl Default for Options {
    fn default() -> Self {
        Self {
            exact_threshold: DEFAULT_EXACT_THRESHOLD,
            route: Route::Auto,
        }
    }
}

impl Options {
    pub fn with_route(route: Route) -> Self {
        Self {
            route,
            ..Self::default()
        }
    }
}

/// `E[X]`, `E[min(X, U)]` and `P(X <= U)` for one `(rates, k, lambda_s)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mean: f64,
    pub min_with_update: f64,
    pub mu: f64,
}

/// Neumaier-compensated sum of terms taken in descending magnitude.
/// Returns the sum and the absolute mass `sum |t|`.
fn compensated_sum(terms: &mut [f64]) -> (f64, f64) {
    terms.sort_unstable_by(|a, b| b.abs().total_cmp(&a.abs()));
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    let mut mass = 0.0f64;
    for &t in terms.iter() {
        mass += t.abs();
        let s = sum + t;
        if sum.abs() >= t.abs() {
            comp += (sum - s) + t;
        } else {
            comp += (t - s) + sum;
        }
        sum = s;
    }
    (sum + comp, mass)
}

/// Signed exponential expansion of `P(X_(k:m) > t)`.
struct Expansion {
    coef: Vec<f64>,
    rate: Vec<f64>,
}

impl Expansion {
    fn new(rates: &RateSet, k: usize) -> Self {
        let r = rates.rates();
        let m = r.len();
        let min_size = m - k + 1;
        let binom = binomial_row(m, m - k);

        let full = 1usize << m;
        let mut sums = vec![0.0f64; full];
        let mut coef = Vec::new();
        let mut rate = Vec::new();
        for mask in 1..full {
            let low = mask.trailing_zeros() as usize;
            sums[mask] = sums[mask & (mask - 1)] + r[low];
            let size = mask.count_ones() as usize;
            if size >= min_size {
                let sign = if (size - min_size).is_multiple_of(2) {
                    1.0
                } else {
                    -1.0
                };
                coef.push(sign * binom[size - 1]);
                rate.push(sums[mask]);
            }
        }
        Self { coef, rate }
    }

    /// `sum_S c_S f(r_S)`, with the conditioning of the signed sum.
    fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> (f64, f64) {
        let mut terms: Vec<f64> = self
            .coef
            .iter()
            .zip(&self.rate)
            .map(|(&c, &r)| c * f(r))
            .collect();
        let (sum, mass) = compensated_sum(&mut terms);
        (sum, mass / sum.abs())
    }
}

/// `binomial_row(m, s)[j] = C(j, s)` for `j` in `0..m`.
fn binomial_row(m: usize, s: usize) -> Vec<f64> {
    (0..m)
        .map(|j| {
            if j < s {
                0.0
            } else {
                // C(j, s) built multiplicatively; exact for the sizes used here
                let mut c = 1.0f64;
                for i in 0..s {
                    c = c * (j - i) as f64 / (i + 1) as f64;
                }
                c.round()
            }
        })
        .collect()
}

fn moments_inclusion_exclusion(rates: &RateSet, k: usize, source_rate: f64) -> (Moments, f64) {
    let exp = Expansion::new(rates, k);
    let (mean, c1) = exp.integrate(|r| 1.0 / r);
    let (min_with_update, c2) = exp.integrate(|r| 1.0 / (r + source_rate));
    let (mu, c3) = exp.integrate(|r| r / (r + source_rate));
    (
        Moments {
            mean,
            min_with_update,
            mu,
        },
        c1.max(c2).max(c3),
    )
}

/// Walks the Markov chain over the set of already-fired edges. From a set
/// with remaining rate `R`, the expected sojourn is `1 / R` (or
/// `1 / (R + lambda_s)` when racing the update) and edge `i` fires next
/// with probability `r_i / R` (or `r_i / (R + lambda_s)`). Every term is
/// positive, so nothing cancels; cost is `O(2^m m)`.
fn moments_firing_chain(rates: &RateSet, k: usize, source_rate: f64) -> Moments {
    let r = rates.rates();
    let m = r.len();
    let full = 1usize << m;
    let mut plain = vec![0.0f64; full];
    let mut raced = vec![0.0f64; full];
    plain[0] = 1.0;
    raced[0] = 1.0;
    let (mut mean, mut min_with_update, mut mu) = (0.0, 0.0, 0.0);
    for mask in 0..full {
        let size = mask.count_ones() as usize;
        if size == k {
            mu += raced[mask];
            continue;
        }
        if size > k || (plain[mask] == 0.0 && raced[mask] == 0.0) {
            continue;
        }
        // summed afresh rather than by subtraction, to keep full precision
        let rest: f64 = (0..m).filter(|i| mask >> i & 1 == 0).map(|i| r[i]).sum();
        mean += plain[mask] / rest;
        min_with_update += raced[mask] / (rest + source_rate);
        for (i, &ri) in r.iter().enumerate() {
            if mask >> i & 1 == 0 {
                plain[mask | 1 << i] += plain[mask] * ri / rest;
                raced[mask | 1 << i] += raced[mask] * ri / (rest + source_rate);
            }
        }
    }
    Moments {
        mean,
        min_with_update,
        mu,
    }
}

/// Distribution of the number of fired edges by time `t`; returns
/// `(P(count < k), P(count >= k))`, both computed without cancellation.
fn fired_split(rates: &[f64], k: usize, t: f64, dp: &mut Vec<f64>) -> (f64, f64) {
    dp.clear();
    dp.resize(rates.len() + 1, 0.0);
    dp[0] = 1.0;
    for (i, &r) in rates.iter().enumerate() {
        let fired = -(-r * t).exp_m1();
        let idle = (-r * t).exp();
        for c in (0..=i + 1).rev() {
            let stay = dp[c] * idle;
            let step = if c > 0 { dp[c - 1] * fired } else { 0.0 };
            dp[c] = stay + step;
        }
    }
    let below = dp[..k].iter().sum();
    let above = dp[k..].iter().sum();
    (below, above)
}

/// `int_0^inf h(t) dt` through `t = scale * u / (1 - u)`.
fn integrate_half_line<F: Fn(f64) -> f64>(h: F, scale: f64) -> f64 {
    let out = quadrature::integrate(
        |u| {
            if u >= 1.0 {
                return 0.0;
            }
            let w = 1.0 - u;
            h(scale * u / w) * scale / (w * w)
        },
        0.0,
        1.0,
        QUADRATURE_TOL,
    );
    out.integral
}

fn mean_quadrature(rates: &RateSet, k: usize) -> f64 {
    let r = rates.rates();
    let scale = rates.len() as f64 / rates.total();
    integrate_half_line(
        |t| fired_split(r, k, t, &mut Vec::with_capacity(r.len() + 1)).0,
        scale,
    )
}

fn moments_quadrature(rates: &RateSet, k: usize, source_rate: f64) -> Moments {
    let r = rates.rates();
    let scale = rates.len() as f64 / rates.total();
    let survival = |t: f64| {
        let mut dp = Vec::with_capacity(r.len() + 1);
        fired_split(r, k, t, &mut dp)
    };
    let mean = integrate_half_line(|t| survival(t).0, scale);
    let min_with_update = integrate_half_line(|t| survival(t).0 * (-source_rate * t).exp(), scale);
    let mu = integrate_half_line(
        |t| survival(t).1 * source_rate * (-source_rate * t).exp(),
        scale,
    );
    Moments {
        mean,
        min_with_update,
        mu,
    }
}

/// All three order-statistic moments, by the route `opts` selects.
pub fn moments(
    rates: &RateSet,
    k: usize,
    source_rate: f64,
    opts: &Options,
) -> Result<Moments, AnalysisError> {
    rates.check_order(k)?;
    check_rate(source_rate)?;
    let exact_ok = rates.len() <= opts.exact_threshold;
    Ok(match opts.route {
        Route::InclusionExclusion => moments_inclusion_exclusion(rates, k, source_rate).0,
        Route::FiringChain => moments_firing_chain(rates, k, source_rate),
        Route::Quadrature => moments_quadrature(rates, k, source_rate),
        Route::Auto if exact_ok => {
            let (m, condition) = moments_inclusion_exclusion(rates, k, source_rate);
            if condition <= MAX_CONDITION {
                m
            } else {
                moments_firing_chain(rates, k, source_rate)
            }
        }
        Route::Auto => moments_quadrature(rates, k, source_rate),
    })
}

/// `E[X_(k:m)]`.
pub fn order_stat_mean(rates: &RateSet, k: usize) -> Result<f64, AnalysisError> {
    order_stat_mean_with(rates, k, &Options::default())
}

pub fn order_stat_mean_with(
    rates: &RateSet,
    k: usize,
    opts: &Options,
) -> Result<f64, AnalysisError> {
    rates.check_order(k)?;
    let exact_ok = rates.len() <= opts.exact_threshold;
    Ok(match opts.route {
        Route::InclusionExclusion => Expansion::new(rates, k).integrate(|r| 1.0 / r).0,
        // the update rate only affects the raced moments
        Route::FiringChain => moments_firing_chain(rates, k, 1.0).mean,
        Route::Quadrature => mean_quadrature(rates, k),
        Route::Auto if exact_ok => {
            let (mean, condition) = Expansion::new(rates, k).integrate(|r| 1.0 / r);
            if condition <= MAX_CONDITION {
                mean
            } else {
                moments_firing_chain(rates, k, 1.0).mean
            }
        }
        Route::Auto => mean_quadrature(rates, k),
    })
}

/// `mu = P(X_(k:m) <= U)`.
pub fn prob_service_before_update(
    rates: &RateSet,
    k: usize,
    source_rate: f64,
) -> Result<f64, AnalysisError> {
    Ok(moments(rates, k, source_rate, &Options::default())?.mu)
}

/// `E[min(X_(k:m), U)]`.
pub fn exp_min_with_update(
    rates: &RateSet,
    k: usize,
    source_rate: f64,
) -> Result<f64, AnalysisError> {
    Ok(moments(rates, k, source_rate, &Options::default())?.min_with_update)
}

/// Closed-form age together with the moments it was built from.
///
/// For `k = 0` the node decodes on its own key: the age is 0, the service
/// time is 0 and `mu` is 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticAge {
    pub scheme: Scheme,
    pub value: f64,
    pub order_stat_mean: f64,
    pub min_with_update: f64,
    pub mu: f64,
}

impl AnalyticAge {
    fn from_moments(scheme: Scheme, m: Moments, source_rate: f64) -> Self {
        let value = match scheme {
            Scheme::Memory => m.mean * source_rate,
            Scheme::Memoryless => m.min_with_update * source_rate / m.mu,
        };
        Self {
            scheme,
            value,
            order_stat_mean: m.mean,
            min_with_update: m.min_with_update,
            mu: m.mu,
        }
    }

    fn instant(scheme: Scheme) -> Self {
        Self {
            scheme,
            value: 0.0,
            order_stat_mean: 0.0,
            min_with_update: 0.0,
            mu: 1.0,
        }
    }
}

/// Age of a node with the given in-edge rates, any scheme.
pub fn age_for_rates(
    scheme: Scheme,
    rates: &[f64],
    k: usize,
    source_rate: f64,
    opts: &Options,
) -> Result<AnalyticAge, AnalysisError> {
    check_rate(source_rate)?;
    if k == 0 {
        return Ok(AnalyticAge::instant(scheme));
    }
    let rates = RateSet::new(rates.to_vec())?;
    let m = moments(&rates, k, source_rate, opts)?;
    Ok(AnalyticAge::from_moments(scheme, m, source_rate))
}

/// Age of receiver `node` of `network` under `scheme`.
pub fn age(
    scheme: Scheme,
    network: &Network,
    node: NodeId,
    k: usize,
    opts: &Options,
) -> Result<AnalyticAge, AnalysisError> {
    let in_degree = network.in_degree(node);
    if k > in_degree {
        return Err(AnalysisError::InfeasibleNode { node, in_degree, k });
    }
    age_for_rates(
        scheme,
        &network.in_rates(node),
        k,
        network.source_rate(),
        opts,
    )
}

/// Age with memory: `E[X_(k:n_j)] * lambda_s`.
pub fn age_memory(network: &Network, node: NodeId, k: usize) -> Result<AnalyticAge, AnalysisError> {
    age(Scheme::Memory, network, node, k, &Options::default())
}

/// Age without memory: `E[min(X_(k:n_j), U)] * lambda_s / P(X_(k:n_j) <= U)`.
pub fn age_memoryless(
    network: &Network,
    node: NodeId,
    k: usize,
) -> Result<AnalyticAge, AnalysisError> {
    age(Scheme::Memoryless, network, node, k, &Options::default())
}

fn check_shn(n: usize, k: usize, gossip_rate: f64, source_rate: f64) -> Result<(), AnalysisError> {
    check_rate(gossip_rate)?;
    check_rate(source_rate)?;
    let max = n.saturating_sub(1);
    if n < 2 || k > max {
        return Err(AnalysisError::ShnKeysOutOfRange { k, n, max });
    }
    Ok(())
}

/// SHN age with memory: `(n-1) lambda_s / lambda_e * sum_{i=n-k}^{n-1} 1/i`.
pub fn shn_age_memory(
    n: usize,
    k: usize,
    gossip_rate: f64,
    source_rate: f64,
) -> Result<f64, AnalysisError> {
    check_shn(n, k, gossip_rate, source_rate)?;
    let harmonic: f64 = (n - k..n).map(|i| 1.0 / i as f64).sum();
    Ok((n - 1) as f64 * source_rate / gossip_rate * harmonic)
}

/// Rate of the i-th spacing of the SHN order statistic: `lambda_e (n-i)/(n-1)`.
fn spacing_rate(n: usize, i: usize, gossip_rate: f64) -> f64 {
    gossip_rate * (n - i) as f64 / (n - 1) as f64
}

/// SHN `P(X_(k:n-1) <= U)` as a product over independent spacings.
pub fn shn_mu(
    n: usize,
    k: usize,
    gossip_rate: f64,
    source_rate: f64,
) -> Result<f64, AnalysisError> {
    check_shn(n, k, gossip_rate, source_rate)?;
    Ok((1..=k)
        .map(|i| {
            let r = spacing_rate(n, i, gossip_rate);
            r / (r + source_rate)
        })
        .product())
}

/// SHN age without memory, summing the spacing decomposition of
/// `lambda_s * E[min(X, U)]` and dividing by `mu`.
pub fn shn_age_memoryless(
    n: usize,
    k: usize,
    gossip_rate: f64,
    source_rate: f64,
) -> Result<f64, AnalysisError> {
    check_shn(n, k, gossip_rate, source_rate)?;
    if k == 0 {
        return Ok(0.0);
    }
    let mut numerator = 0.0;
    // probability that the first j-1 spacings all beat the update clock
    let mut survive = 1.0;
    for j in 1..=k {
        let r = spacing_rate(n, j, gossip_rate);
        numerator += source_rate / (r + source_rate) * survive;
        survive *= r / (r + source_rate);
    }
    Ok(numerator / survive)
}

/// `k lambda_s / lambda_e`, the large-network limit of the memory age.
pub fn asymptotic_age_memory(k: usize, source_rate: f64, gossip_rate: f64) -> f64 {
    k as f64 * source_rate / gossip_rate
}

/// `memoryless - memory` on an SHN.
pub fn shn_age_gap(
    n: usize,
    k: usize,
    gossip_rate: f64,
    source_rate: f64,
) -> Result<f64, AnalysisError> {
    Ok(shn_age_memoryless(n, k, gossip_rate, source_rate)?
        - shn_age_memory(n, k, gossip_rate, source_rate)?)
}

/// Smallest gossip rate in `[lo, hi]` at which the memory and memoryless
/// SHN ages differ by at most `epsilon`, by bisection to `1e-6` relative.
pub fn critical_gossip_rate(
    k: usize,
    n: usize,
    source_rate: f64,
    epsilon: f64,
    interval: (f64, f64),
) -> Result<f64, AnalysisError> {
    let (mut lo, mut hi) = interval;
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(AnalysisError::BadEpsilon(epsilon));
    }
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(AnalysisError::BadInterval { lo, hi });
    }
    let gap = |rate: f64| shn_age_gap(n, k, rate, source_rate).map(f64::abs);

    let mut gap_lo = gap(lo)?;
    if gap_lo <= epsilon {
        return Ok(lo);
    }
    let mut gap_hi = gap(hi)?;
    if gap_hi > epsilon {
        return Err(AnalysisError::NotBracketed {
            hi,
            gap_hi,
            epsilon,
        });
    }
    while hi - lo > 1e-6 * hi {
        let mid = 0.5 * (lo + hi);
        let gap_mid = gap(mid)?;
        if gap_mid > gap_lo || gap_mid < gap_hi {
            return Err(AnalysisError::NonMonotone { lo, hi });
        }
        if gap_mid <= epsilon {
            hi = mid;
            gap_hi = gap_mid;
        } else {
            lo = mid;
            gap_lo = gap_mid;
        }
    }
    Ok(hi)
}

/// Law of the number of keys carried by one memory-scheme message on an
/// edge of rate `edge_rate`: geometric on `{0, 1, ...}` with success
/// probability `edge_rate / (edge_rate + lambda_s)`.
pub fn message_size_law(edge_rate: f64, source_rate: f64) -> Result<GeometricLaw, AnalysisError> {
    check_rate(edge_rate)?;
    check_rate(source_rate)?;
    Ok(GeometricLaw::from_zero(
        edge_rate / (edge_rate + source_rate),
    ))
}
