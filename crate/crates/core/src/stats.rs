//! Estimators and oracles used to check simulated and analytic ages:
//! batch-means confidence intervals for time averages, plain Monte Carlo
//! for order-statistic moments, and geometric goodness-of-fit.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::rng::{stream_rng, ORACLE_STREAM};

/// Fewer batches than this and a confidence interval is flagged unreliable.
pub const MIN_RELIABLE_BATCHES: usize = 20;

/// Minimum sample count for a geometric fit to be considered meaningful.
pub const MIN_FIT_SAMPLES: usize = 1_000;

/// Minimum number of oracle trials.
pub const MIN_ORACLE_TRIALS: u64 = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("need at least 2 batches, got {0}")]
    TooFewBatches(usize),
    #[error("time window [{start}, {end}] is empty")]
    EmptyWindow { start: f64, end: f64 },
    #[error("time series must be sorted by time")]
    Unsorted,
    #[error("sample is empty")]
    EmptySample,
    #[error("success probability {0} must lie in (0, 1]")]
    BadProbability(f64),
    #[error("oracle needs at least {MIN_ORACLE_TRIALS} trials, got {0}")]
    TooFewTrials(u64),
    #[error("oracle order k = {k} out of range 1..={m}")]
    BadOrder { k: usize, m: usize },
    #[error("oracle rate {0} must be strictly positive and finite")]
    BadRate(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiMethod {
    BatchMeans,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateWithCI {
    pub point: f64,
    pub half_width: f64,
    pub confidence: f64,
    pub method: CiMethod,
    pub batches: usize,
    /// False when there are fewer than [`MIN_RELIABLE_BATCHES`] batches or
    /// some batch saw no event.
    pub reliable: bool,
}

impl EstimateWithCI {
    pub fn contains(&self, value: f64) -> bool {
        (self.point - value).abs() <= self.half_width
    }
}

/// Integrates a piecewise-constant process into equal-width batches over
/// `[start, end]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchAccumulator {
    start: f64,
    end: f64,
    width: f64,
    sums: Vec<f64>,
    events: Vec<u32>,
}

impl BatchAccumulator {
    pub fn new(start: f64, end: f64, batches: usize) -> Result<Self, StatsError> {
        if batches < 2 {
            return Err(StatsError::TooFewBatches(batches));
        }
        if !start.is_finite() || !end.is_finite() || end <= start {
            return Err(StatsError::EmptyWindow { start, end });
        }
        Ok(Self {
            start,
            end,
            width: (end - start) / batches as f64,
            sums: vec![0.0; batches],
            events: vec![0; batches],
        })
    }

    pub fn batches(&self) -> usize {
        self.sums.len()
    }

    pub fn window(&self) -> (f64, f64) {
        (self.start, self.end)
    }

    fn batch_of(&self, t: f64) -> usize {
        (((t - self.start) / self.width) as usize).min(self.sums.len() - 1)
    }

    /// Adds `value` held on `[t0, t1)`, clipped to the window.
    pub fn add(&mut self, t0: f64, t1: f64, value: f64) {
        let a = t0.max(self.start);
        let b = t1.min(self.end);
        if b.partial_cmp(&a) != Some(std::cmp::Ordering::Greater) || value == 0.0 {
            return;
        }
        let first = self.batch_of(a);
        let last = self.batch_of(b);
        for i in first..=last {
            let lo = if i == first {
                a
            } else {
                self.start + i as f64 * self.width
            };
            let hi = if i == last {
                b
            } else {
                self.start + (i + 1) as f64 * self.width
            };
            if hi > lo {
                self.sums[i] += value * (hi - lo);
            }
        }
    }

    /// Records that the process changed at `t`.
    pub fn mark_event(&mut self, t: f64) {
        if t >= self.start && t < self.end {
            let i = self.batch_of(t);
            self.events[i] += 1;
        }
    }

    /// Per-batch time averages.
    pub fn batch_averages(&self) -> Vec<f64> {
        self.sums.iter().map(|s| s / self.width).collect()
    }

    /// Time integral over the whole window.
    pub fn integral(&self) -> f64 {
        self.sums.iter().sum()
    }

    /// Element-wise mean of several accumulators over the same window.
    pub fn average(accs: &[BatchAccumulator]) -> Option<BatchAccumulator> {
        let first = accs.first()?;
        let mut out = first.clone();
        let count = accs.len() as f64;
        for (i, slot) in out.sums.iter_mut().enumerate() {
            *slot = accs.iter().map(|a| a.sums[i]).sum::<f64>() / count;
        }
        for (i, slot) in out.events.iter_mut().enumerate() {
            *slot = accs.iter().map(|a| a.events[i]).sum();
        }
        Some(out)
    }

    /// Batch-means point estimate with a Student-t interval.
    pub fn estimate(&self, confidence: f64) -> EstimateWithCI {
        let avgs = self.batch_averages();
        let b = avgs.len();
        let mean = avgs.iter().sum::<f64>() / b as f64;
        let var = avgs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (b - 1) as f64;
        let t = StudentsT::new(0.0, 1.0, (b - 1) as f64)
            .expect("degrees of freedom are positive")
            .inverse_cdf(0.5 + confidence / 2.0);
        EstimateWithCI {
            point: mean,
            half_width: t * (var / b as f64).sqrt(),
            confidence,
            method: CiMethod::BatchMeans,
            batches: b,
            reliable: b >= MIN_RELIABLE_BATCHES && self.events.iter().all(|&e| e > 0),
        }
    }
}

/// Batch-means estimate of the time average of a step function given as
/// `(t_i, a_i)` pairs, where `a_i` holds from `t_i` until `t_{i+1}` (the
/// last value holds until `horizon`). Time before the first pair counts as
/// zero.
pub fn batch_means(
    series: &[(f64, f64)],
    horizon: f64,
    batches: usize,
    confidence: f64,
) -> Result<EstimateWithCI, StatsError> {
    let mut acc = BatchAccumulator::new(0.0, horizon, batches)?;
    if series.windows(2).any(|w| w[1].0 < w[0].0) {
        return Err(StatsError::Unsorted);
    }
    for (i, &(t, a)) in series.iter().enumerate() {
        let next = series.get(i + 1).map_or(horizon, |p| p.0);
        acc.add(t, next, a);
        if i > 0 {
            acc.mark_event(t);
        }
    }
    Ok(acc.estimate(confidence))
}

/// Sample mean and its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub trials: u64,
}

impl McEstimate {
    /// Distance from `value` in standard errors.
    pub fn z(&self, value: f64) -> f64 {
        if self.std_err == 0.0 {
            if self.mean == value {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.mean - value) / self.std_err
        }
    }

    pub fn within(&self, value: f64, sigmas: f64) -> bool {
        self.z(value).abs() <= sigmas
    }
}

#[derive(Debug, Default, Clone, Copy)]
struct Welford {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    fn finish(&self) -> McEstimate {
        let var = if self.n > 1 {
            self.m2 / (self.n - 1) as f64
        } else {
            0.0
        };
        McEstimate {
            mean: self.mean,
            std_err: (var / self.n as f64).sqrt(),
            trials: self.n,
        }
    }
}

/// Monte Carlo estimates of `E[X_(k:m)]`, `E[min(X_(k:m), U)]` and
/// `P(X_(k:m) <= U)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleEstimates {
    pub order_stat_mean: McEstimate,
    pub min_with_update: McEstimate,
    pub mu: McEstimate,
}

/// Samples the `m` activation times and the update clock directly by
/// inverse transform, on a generator stream reserved for oracles.
pub fn mc_order_stat_oracle(
    rates: &[f64],
    k: usize,
    source_rate: f64,
    trials: u64,
    seed: u64,
) -> Result<OracleEstimates, StatsError> {
    if trials < MIN_ORACLE_TRIALS {
        return Err(StatsError::TooFewTrials(trials));
    }
    if k == 0 || k > rates.len() {
        return Err(StatsError::BadOrder { k, m: rates.len() });
    }
    for &r in rates.iter().chain(std::iter::once(&source_rate)) {
        if !(r.is_finite() && r > 0.0) {
            return Err(StatsError::BadRate(r));
        }
    }
    let mut rng = stream_rng(seed, ORACLE_STREAM);
    let mut draw = |rate: f64| -> f64 {
        let u: f64 = rng.random();
        -(1.0 - u).ln() / rate
    };

    let mut times = vec![0.0; rates.len()];
    let (mut mean, mut min_u, mut mu) =
        (Welford::default(), Welford::default(), Welford::default());
    for _ in 0..trials {
        for (slot, &r) in times.iter_mut().zip(rates) {
            *slot = draw(r);
        }
        let (_, kth, _) = times.select_nth_unstable_by(k - 1, |a, b| a.total_cmp(b));
        let x = *kth;
        let u = draw(source_rate);
        mean.push(x);
        min_u.push(x.min(u));
        mu.push(if x <= u { 1.0 } else { 0.0 });
    }
    Ok(OracleEstimates {
        order_stat_mean: mean.finish(),
        min_with_update: min_u.finish(),
        mu: mu.finish(),
    })
}

/// Which integer the geometric support starts at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Support {
    /// Failures before the first success, `{0, 1, 2, ...}`.
    FromZero,
    /// Trials up to and including the first success, `{1, 2, ...}`.
    FromOne,
}

impl Support {
    fn offset(self) -> u64 {
        match self {
            Support::FromZero => 0,
            Support::FromOne => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometricLaw {
    p: f64,
    support: Support,
}

impl GeometricLaw {
    pub fn new(p: f64, support: Support) -> Result<Self, StatsError> {
        if p > 0.0 && p <= 1.0 {
            Ok(Self { p, support })
        } else {
            Err(StatsError::BadProbability(p))
        }
    }

    pub(crate) fn from_zero(p: f64) -> Self {
        Self {
            p,
            support: Support::FromZero,
        }
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn support(&self) -> Support {
        self.support
    }

    pub fn mean(&self) -> f64 {
        (1.0 - self.p) / self.p + self.support.offset() as f64
    }

    pub fn variance(&self) -> f64 {
        (1.0 - self.p) / (self.p * self.p)
    }

    pub fn pmf(&self, x: u64) -> f64 {
        match x.checked_sub(self.support.offset()) {
            Some(failures) => (1.0 - self.p).powf(failures as f64) * self.p,
            None => 0.0,
        }
    }

    /// `P(X >= x)`.
    pub fn tail(&self, x: u64) -> f64 {
        match x.checked_sub(self.support.offset()) {
            Some(failures) => (1.0 - self.p).powf(failures as f64),
            None => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeometricFit {
    pub samples: usize,
    pub sample_mean: f64,
    pub expected_mean: f64,
    /// `(sample mean - expected mean) / (sigma / sqrt(N))`.
    pub z: f64,
    pub chi_square: f64,
    pub dof: usize,
    pub p_value: Option<f64>,
    /// At least [`MIN_FIT_SAMPLES`] samples.
    pub enough_samples: bool,
}

/// Compares a sample against a geometric law: a z-score on the mean and a
/// chi-square statistic over the support, pooling the tail once the
/// expected count drops below 5.
pub fn geometric_fit(samples: &[u64], law: &GeometricLaw) -> Result<GeometricFit, StatsError> {
    if samples.is_empty() {
        return Err(StatsError::EmptySample);
    }
    let n = samples.len() as f64;
    let sample_mean = samples.iter().map(|&x| x as f64).sum::<f64>() / n;
    let expected_mean = law.mean();
    let sd = law.variance().sqrt();
    let z = if sd > 0.0 {
        (sample_mean - expected_mean) / (sd / n.sqrt())
    } else if sample_mean == expected_mean {
        0.0
    } else {
        f64::INFINITY
    };

    let first = law.support().offset();
    let max = samples.iter().copied().max().unwrap_or(first);
    let mut counts = vec![0u64; (max.max(first) - first + 1) as usize];
    for &x in samples {
        if x >= first {
            counts[(x - first) as usize] += 1;
        }
    }
    let count_from = |from: usize| counts.iter().skip(from).sum::<u64>() as f64;

    let mut chi_square = 0.0;
    let mut bins = 0usize;
    let mut x = first;
    loop {
        let idx = (x - first) as usize;
        let expected_tail_after = n * law.tail(x + 1);
        if expected_tail_after < 5.0 {
            // pooled tail bin {x, x+1, ...}
            let expected = n * law.tail(x);
            let observed = count_from(idx);
            if expected > 0.0 {
                chi_square += (observed - expected).powi(2) / expected;
            }
            bins += 1;
            break;
        }
        let expected = n * law.pmf(x);
        let observed = counts.get(idx).copied().unwrap_or(0) as f64;
        chi_square += (observed - expected).powi(2) / expected;
        bins += 1;
        x += 1;
    }
    let dof = bins.saturating_sub(1);
    let p_value = (dof > 0).then(|| {
        1.0 - ChiSquared::new(dof as f64)
            .expect("positive dof")
            .cdf(chi_square)
    });

    Ok(GeometricFit {
        samples: samples.len(),
        sample_mean,
        expected_mean,
        z,
        chi_square,
        dof,
        p_value,
        enough_samples: samples.len() >= MIN_FIT_SAMPLES,
    })
}
