//! Oracle and property suites behind `kage validate`.

use rand::Rng;
use serde::Serialize;

use crate::analysis::{self, Options, RateSet, Route};
use crate::net::{build_network, NetworkSpec};
use crate::rng::stream_rng;
use crate::sim::{self, extract_cycles, SimConfig};
use crate::stats::{geometric_fit, mc_order_stat_oracle, GeometricLaw, Support};
use crate::Scheme;

const VALIDATE_STREAM: u64 = 0x7661_6c69_6461_7465;

/// Standard errors allowed between an oracle and a closed form.
pub const SIGMAS: f64 = 4.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Budget {
    pub oracle_instances: usize,
    pub oracle_trials: u64,
    pub sim_horizon: f64,
    pub cycle_horizon: f64,
    pub message_horizon: f64,
}

impl Default for Budget {
    fn default() -> Self {
        Self {
            oracle_instances: 50,
            oracle_trials: 1_000_000,
            sim_horizon: 1e4,
            cycle_horizon: 5e3,
            message_horizon: 2e4,
        }
    }
}

impl Budget {
    pub fn quick() -> Self {
        Self {
            oracle_instances: 10,
            oracle_trials: 100_000,
            sim_horizon: 1e4,
            cycle_horizon: 2e3,
            message_horizon: 1e4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub suites: Vec<SuiteOutcome>,
}

impl Report {
    pub fn all_passed(&self) -> bool {
        self.suites.iter().all(|s| s.passed)
    }

    pub fn lines(&self) -> Vec<String> {
        self.suites
            .iter()
            .map(|s| {
                format!(
                    "{} {} {}",
                    if s.passed { "PASS" } else { "FAIL" },
                    s.name,
                    s.detail
                )
            })
            .collect()
    }

    /// One-line JSON: `{"passed": .., "failed": .., "failures": [..]}`.
    pub fn summary_json(&self) -> String {
        let failures: Vec<&SuiteOutcome> = self.suites.iter().filter(|s| !s.passed).collect();
        serde_json::json!({
            "passed": self.suites.len() - failures.len(),
            "failed": failures.len(),
            "failures": failures,
        })
        .to_string()
    }
}

fn outcome(name: &'static str, failures: Vec<String>, checked: usize) -> SuiteOutcome {
    SuiteOutcome {
        name,
        passed: failures.is_empty(),
        detail: if failures.is_empty() {
            format!("{checked} checks")
        } else {
            format!(
                "{}/{checked} failed; first: {}",
                failures.len(),
                failures[0]
            )
        },
    }
}

fn rel_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

/// Random heterogeneous rate sets against Monte Carlo.
pub fn oracle_equivalence(budget: &Budget, seed: u64) -> SuiteOutcome {
    let mut rng = stream_rng(seed, VALIDATE_STREAM);
    let mut failures = Vec::new();
    for i in 0..budget.oracle_instances {
        let m = rng.random_range(1..=6usize);
        let rates: Vec<f64> = (0..m).map(|_| rng.random_range(0.1..10.0)).collect();
        let k = rng.random_range(1..=m);
        let source_rate = rng.random_range(0.1..10.0);
        let set = RateSet::new(rates.clone()).expect("positive rates");
        let exact =
            analysis::moments(&set, k, source_rate, &Options::default()).expect("k in range");
        let mc = mc_order_stat_oracle(
            &rates,
            k,
            source_rate,
            budget.oracle_trials,
            seed ^ i as u64,
        )
        .expect("valid oracle input");
        for (name, est, value) in [
            ("mean", mc.order_stat_mean, exact.mean),
            ("min", mc.min_with_update, exact.min_with_update),
            ("mu", mc.mu, exact.mu),
        ] {
            if !est.within(value, SIGMAS) {
                failures.push(format!(
                    "{name} rates={rates:?} k={k} ls={source_rate}: z={:.2}",
                    est.z(value)
                ));
            }
        }
    }
    outcome("oracle_equivalence", failures, budget.oracle_instances * 3)
}

fn shn_grid() -> Vec<(usize, usize, f64)> {
    const RATIOS: [f64; 6] = [0.1, 0.5, 1.0, 2.0, 10.0, 100.0];
    let mut grid = Vec::new();
    for n in 4..=12usize {
        for k in 1..n {
            grid.extend(RATIOS.iter().map(|&r| (n, k, r)));
        }
    }
    grid
}

/// SHN closed forms against the heterogeneous general route.
pub fn path_equivalence() -> SuiteOutcome {
    let source_rate = 3.0;
    let mut failures = Vec::new();
    let mut checked = 0;
    for (n, k, ratio) in shn_grid() {
        let gossip = ratio * source_rate;
        let net = build_network(&NetworkSpec::shn(n, gossip, source_rate)).expect("valid SHN");
        let mem = analysis::age_memory(&net, 1, k).expect("feasible").value;
        let less = analysis::age_memoryless(&net, 1, k)
            .expect("feasible")
            .value;
        let fast_mem = analysis::shn_age_memory(n, k, gossip, source_rate).expect("in range");
        let fast_less = analysis::shn_age_memoryless(n, k, gossip, source_rate).expect("in range");
        checked += 2;
        if rel_gap(mem, fast_mem) > 1e-12 {
            failures.push(format!(
                "memory n={n} k={k} ratio={ratio}: {mem} vs {fast_mem}"
            ));
        }
        if rel_gap(less, fast_less) > 1e-12 {
            failures.push(format!(
                "memoryless n={n} k={k} ratio={ratio}: {less} vs {fast_less}"
            ));
        }
    }
    outcome("path_equivalence", failures, checked)
}

/// Memory never ages worse than memoryless; both grow with k; k = 1 ties.
pub fn ordering_and_monotonicity() -> SuiteOutcome {
    let source_rate = 2.0;
    let mut failures = Vec::new();
    let mut checked = 0;
    for (n, k, ratio) in shn_grid() {
        let gossip = ratio * source_rate;
        let mem = analysis::shn_age_memory(n, k, gossip, source_rate).expect("in range");
        let less = analysis::shn_age_memoryless(n, k, gossip, source_rate).expect("in range");
        checked += 1;
        if mem > less * (1.0 + 1e-12) {
            failures.push(format!("order n={n} k={k} ratio={ratio}: {mem} > {less}"));
        }
        if k == 1 {
            checked += 1;
            let expect = source_rate / gossip;
            if rel_gap(mem, expect) > 1e-12 || rel_gap(less, expect) > 1e-12 {
                failures.push(format!("k=1 n={n} ratio={ratio}: {mem} {less} vs {expect}"));
            }
        }
        if k + 1 < n {
            checked += 1;
            let mem_next =
                analysis::shn_age_memory(n, k + 1, gossip, source_rate).expect("in range");
            let less_next =
                analysis::shn_age_memoryless(n, k + 1, gossip, source_rate).expect("in range");
            if mem_next < mem || less_next < less {
                failures.push(format!("monotone-k n={n} k={k} ratio={ratio}"));
            }
        }
    }
    outcome("ordering_and_monotonicity", failures, checked)
}

/// Ages depend on rates only through their ratios.
pub fn scale_invariance(seed: u64) -> SuiteOutcome {
    let mut rng = stream_rng(seed, VALIDATE_STREAM + 1);
    let mut failures = Vec::new();
    let trials = 200;
    for _ in 0..trials {
        let m = rng.random_range(1..=8usize);
        let rates: Vec<f64> = (0..m).map(|_| rng.random_range(0.1..10.0)).collect();
        let k = rng.random_range(1..=m);
        let source_rate = rng.random_range(0.1..10.0);
        let c = rng.random_range(0.01..100.0);
        let scaled: Vec<f64> = rates.iter().map(|r| r * c).collect();
        for scheme in Scheme::ALL {
            let opts = Options::default();
            let a = analysis::age_for_rates(scheme, &rates, k, source_rate, &opts).expect("valid");
            let b =
                analysis::age_for_rates(scheme, &scaled, k, source_rate * c, &opts).expect("valid");
            if rel_gap(b.value, a.value) > 1e-12 {
                failures.push(format!(
                    "{scheme} rates={rates:?} k={k} c={c}: {} vs {}",
                    a.value, b.value
                ));
            }
        }
    }
    outcome("scale_invariance", failures, trials * 2)
}

/// Inclusion-exclusion against quadrature of the survival function.
pub fn route_agreement(seed: u64) -> SuiteOutcome {
    let mut rng = stream_rng(seed, VALIDATE_STREAM + 2);
    let mut failures = Vec::new();
    let trials = 60;
    let exact = Options::with_route(Route::InclusionExclusion);
    let quad = Options::with_route(Route::Quadrature);
    let chain = Options::with_route(Route::FiringChain);
    for _ in 0..trials {
        let m = rng.random_range(1..=10usize);
        let set =
            RateSet::new((0..m).map(|_| rng.random_range(0.1..10.0)).collect()).expect("rates");
        let k = rng.random_range(1..=m);
        let source_rate = rng.random_range(0.1..10.0);
        let a = analysis::moments(&set, k, source_rate, &exact).expect("valid");
        for (other, tol) in [(&quad, 1e-8), (&chain, 1e-10)] {
            let b = analysis::moments(&set, k, source_rate, other).expect("valid");
            for (name, x, y) in [
                ("mean", a.mean, b.mean),
                ("min", a.min_with_update, b.min_with_update),
                ("mu", a.mu, b.mu),
            ] {
                if rel_gap(x, y) > tol {
                    failures.push(format!(
                        "{name} {:?} {:?} k={k}: {x} vs {y}",
                        other.route,
                        set.rates()
                    ));
                }
            }
        }
    }
    outcome("route_agreement", failures, trials * 6)
}

/// Simulated SHN ages at the reference point, within 2%.
pub fn simulation_anchor(budget: &Budget, seed: u64) -> SuiteOutcome {
    let net = build_network(&NetworkSpec::shn(6, 100.0, 10.0)).expect("valid SHN");
    let mut failures = Vec::new();
    for (scheme, expect) in [(Scheme::Memory, 0.225), (Scheme::Memoryless, 0.2375)] {
        let r = sim::run(
            &net,
            &[2; 6],
            scheme,
            &SimConfig::new(budget.sim_horizon, seed),
        )
        .expect("feasible");
        let got = r.network_average(0.95).point;
        if rel_gap(got, expect) > 0.02 {
            failures.push(format!("{scheme}: {got} vs {expect}"));
        }
    }
    outcome("simulation_anchor", failures, 2)
}

/// Missed-update counts of a memoryless run are geometric with `mu`.
pub fn success_run_law(budget: &Budget, seed: u64) -> SuiteOutcome {
    let (n, k, source_rate, gossip) = (6, 3, 10.0, 30.0);
    let net = build_network(&NetworkSpec::shn(n, gossip, source_rate)).expect("valid SHN");
    let r = sim::run(
        &net,
        &[k; 6],
        Scheme::Memoryless,
        &SimConfig::new(budget.cycle_horizon, seed),
    )
    .expect("feasible");
    let mu = analysis::shn_mu(n, k, gossip, source_rate).expect("in range");
    let law = GeometricLaw::new(mu, Support::FromOne).expect("mu in (0,1]");
    let cycles = extract_cycles(&r, 1).expect("memoryless");
    let fit = geometric_fit(cycles, &law).expect("non-empty");
    let mut failures = Vec::new();
    if fit.z.abs() >= SIGMAS {
        failures.push(format!("z={:.2} over {} cycles", fit.z, fit.samples));
    }
    outcome("success_run_law", failures, 1)
}

/// Memory-scheme message sizes have mean `lambda_s / lambda_ij`.
pub fn message_size_law(budget: &Budget, seed: u64) -> SuiteOutcome {
    let (source_rate, gossip) = (10.0, 25.0);
    let net = build_network(&NetworkSpec::shn(6, gossip, source_rate)).expect("valid SHN");
    let r = sim::run(
        &net,
        &[2; 6],
        Scheme::Memory,
        &SimConfig::new(budget.message_horizon, seed),
    )
    .expect("feasible");
    let edge_rate = net.edge(0).rate;
    let law = analysis::message_size_law(edge_rate, source_rate).expect("positive rates");
    let hist = &r.message_sizes[0];
    let mut failures = Vec::new();
    if rel_gap(hist.mean(), law.mean()) > 0.02 {
        failures.push(format!(
            "mean {} vs {} over {} messages",
            hist.mean(),
            law.mean(),
            hist.total()
        ));
    }
    outcome("message_size_law", failures, 1)
}

pub fn run_suites(budget: &Budget, seed: u64) -> Report {
    Report {
        suites: vec![
            oracle_equivalence(budget, seed),
            path_equivalence(),
            ordering_and_monotonicity(),
            scale_invariance(seed),
            route_agreement(seed),
            simulation_anchor(budget, seed),
            success_run_law(budget, seed),
            message_size_law(budget, seed),
        ],
    }
}
