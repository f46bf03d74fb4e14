//! End-to-end acceptance checks, run without the libtest harness so each
//! criterion's PASS/FAIL line is always printed.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use kage::analysis::{self, Options, RateSet, Route};
use kage::net::{build_network, Network, NetworkSpec};
use kage::sim::{self, extract_cycles, SimConfig, SimResult};
use kage::stats::{geometric_fit, GeometricLaw, Support};
use kage::threshold::{required_keys, RequiredKeys};
use kage::Scheme;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;

type Outcome = Result<String, String>;
type Check = fn() -> Outcome;

const GRID_N: [usize; 2] = [6, 8];
const GRID_K: [usize; 2] = [2, 4];
const GRID_GOSSIP: [f64; 4] = [25.0, 50.0, 100.0, 200.0];
const GRID_SOURCE: f64 = 10.0;

fn grid() -> Vec<(usize, usize, f64)> {
    let mut points = Vec::new();
    for n in GRID_N {
        for k in GRID_K {
            for g in GRID_GOSSIP {
                points.push((n, k, g));
            }
        }
    }
    points
}

fn shn(n: usize, gossip: f64, source: f64) -> Network {
    build_network(&NetworkSpec::shn(n, gossip, source)).unwrap()
}

fn simulate(
    n: usize,
    k: usize,
    gossip: f64,
    source: f64,
    scheme: Scheme,
    cfg: &SimConfig,
) -> SimResult {
    sim::run(&shn(n, gossip, source), &vec![k; n], scheme, cfg).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

/// Simulates the 16-point grid for one scheme and compares with `closed`.
fn grid_against_closed_form<F>(scheme: Scheme, closed: F) -> Outcome
where
    F: Fn(usize, usize, f64) -> f64 + Sync,
{
    let start = Instant::now();
    let results: Vec<(usize, usize, f64, f64, f64, f64)> = grid()
        .into_par_iter()
        .enumerate()
        .map(|(i, (n, k, g))| {
            let cfg = SimConfig::new(1e4, 1000 + i as u64);
            let est = simulate(n, k, g, GRID_SOURCE, scheme, &cfg).network_average(0.95);
            (n, k, g, closed(n, k, g), est.point, est.half_width)
        })
        .collect();
    let elapsed = start.elapsed();
    let mut worst = 0.0f64;
    for &(n, k, g, exact, point, hw) in &results {
        let tol = (0.02 * exact).max(hw);
        worst = worst.max((point - exact).abs() / tol);
        if (point - exact).abs() > tol {
            return Err(format!(
                "n={n} k={k} lambda_e={g}: simulated {point:.5} vs closed form {exact:.5} (tol {tol:.5})"
            ));
        }
    }
    if elapsed > Duration::from_secs(60) {
        return Err(format!("grid took {elapsed:?}"));
    }
    Ok(format!(
        "{} points, worst |error|/tol = {worst:.2}, {:.1}s",
        results.len(),
        elapsed.as_secs_f64()
    ))
}

fn criterion_1() -> Outcome {
    grid_against_closed_form(Scheme::Memory, |n, k, g| {
        analysis::shn_age_memory(n, k, g, GRID_SOURCE).unwrap()
    })
}

fn criterion_2() -> Outcome {
    let grid = grid_against_closed_form(Scheme::Memoryless, |n, k, g| {
        analysis::shn_age_memoryless(n, k, g, GRID_SOURCE).unwrap()
    })?;

    let net = shn(6, 100.0, 10.0);
    for (scheme, anchor) in [(Scheme::Memory, 0.225), (Scheme::Memoryless, 0.2375)] {
        let fast = match scheme {
            Scheme::Memory => analysis::shn_age_memory(6, 2, 100.0, 10.0).unwrap(),
            Scheme::Memoryless => analysis::shn_age_memoryless(6, 2, 100.0, 10.0).unwrap(),
        };
        for route in [
            Route::InclusionExclusion,
            Route::FiringChain,
            Route::Quadrature,
        ] {
            let rates = net.in_rates(1);
            let general =
                analysis::age_for_rates(scheme, &rates, 2, 10.0, &Options::with_route(route))
                    .unwrap();
            if rel(general.value, anchor) > 1e-12 {
                return Err(format!(
                    "{scheme} via {route:?}: {} vs {anchor}",
                    general.value
                ));
            }
        }
        if rel(fast, anchor) > 1e-12 {
            return Err(format!("{scheme} closed form: {fast} vs {anchor}"));
        }
        let est =
            simulate(6, 2, 100.0, 10.0, scheme, &SimConfig::new(1e4, 77)).network_average(0.95);
        if rel(est.point, anchor) > 0.02 {
            return Err(format!("{scheme} simulated {} vs {anchor}", est.point));
        }
    }
    Ok(format!("{grid}; anchors 0.225 / 0.2375 reproduced"))
}

fn criterion_3() -> Outcome {
    for (n, k, g) in grid() {
        let mem = analysis::shn_age_memory(n, k, g, GRID_SOURCE).unwrap();
        let less = analysis::shn_age_memoryless(n, k, g, GRID_SOURCE).unwrap();
        if mem > less {
            return Err(format!(
                "n={n} k={k} lambda_e={g}: memory {mem} > memoryless {less}"
            ));
        }
    }
    for n in GRID_N {
        for g in GRID_GOSSIP {
            let expect = GRID_SOURCE / g;
            let mem = analysis::shn_age_memory(n, 1, g, GRID_SOURCE).unwrap();
            let less = analysis::shn_age_memoryless(n, 1, g, GRID_SOURCE).unwrap();
            if rel(mem, expect) > 1e-12 || rel(less, expect) > 1e-12 {
                return Err(format!("k=1 n={n} lambda_e={g}: {mem}, {less} vs {expect}"));
            }
        }
    }
    Ok("memory <= memoryless on 16 points; k = 1 equals lambda_s/lambda_e".into())
}

fn criterion_4() -> Outcome {
    let ns = [12, 50, 100, 500, 1000];
    let values: Vec<f64> = ns
        .iter()
        .map(|&n| analysis::shn_age_memory(n, 10, 150.0, 15.0).unwrap())
        .collect();
    if values.windows(2).any(|w| w[1] >= w[0]) {
        return Err(format!("not decreasing: {values:?}"));
    }
    let last = values[values.len() - 1];
    if (last - 1.0).abs() > 0.01 {
        return Err(format!("n=1000 age {last}"));
    }
    Ok(format!("{values:.4?}"))
}

fn criterion_5() -> Outcome {
    let (n, k, source, gossip) = (6, 3, 10.0, 30.0);
    let result = simulate(
        n,
        k,
        gossip,
        source,
        Scheme::Memoryless,
        &SimConfig::new(1e4, 5),
    );
    let cycles = extract_cycles(&result, 1).unwrap();
    if cycles.len() < 10_000 {
        return Err(format!("only {} cycles", cycles.len()));
    }
    let rates = RateSet::shn(n, gossip).unwrap();
    let mu = analysis::prob_service_before_update(&rates, k, source).unwrap();
    let fit = geometric_fit(cycles, &GeometricLaw::new(mu, Support::FromOne).unwrap()).unwrap();
    if fit.z.abs() >= 4.0 {
        return Err(format!("z = {:.2} over {} cycles", fit.z, fit.samples));
    }
    Ok(format!(
        "{} cycles, mean {:.4} vs 1/mu {:.4}, z = {:.2}",
        fit.samples,
        fit.sample_mean,
        1.0 / mu,
        fit.z
    ))
}

fn criterion_6() -> Outcome {
    let (n, source, gossip) = (6, 10.0, 25.0);
    let edge_rate = gossip / (n - 1) as f64;
    let result = simulate(
        n,
        2,
        gossip,
        source,
        Scheme::Memory,
        &SimConfig::new(2.2e4, 6),
    );
    let sizes = &result.message_sizes[0];
    if sizes.total() < 100_000 {
        return Err(format!("only {} messages", sizes.total()));
    }
    let expect = source / edge_rate;
    if rel(sizes.mean(), expect) > 0.02 {
        return Err(format!("mean {} vs {expect}", sizes.mean()));
    }
    Ok(format!(
        "{} messages, mean {:.4} vs {expect}",
        sizes.total(),
        sizes.mean()
    ))
}

struct Instance {
    rates: Vec<f64>,
    k: usize,
    source: f64,
}

/// Brute-force sampling of the k-th first arrival among independent
/// exponential clocks, raced against an exponential update clock.
fn monte_carlo(inst: &Instance, trials: u64, seed: u64) -> [(f64, f64); 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clocks: Vec<Exp<f64>> = inst.rates.iter().map(|&r| Exp::new(r).unwrap()).collect();
    let update = Exp::new(inst.source).unwrap();
    let mut sums = [[0.0f64; 2]; 3];
    let mut draws = vec![0.0; clocks.len()];
    for _ in 0..trials {
        for (d, c) in draws.iter_mut().zip(&clocks) {
            *d = c.sample(&mut rng);
        }
        draws.sort_by(f64::total_cmp);
        let x = draws[inst.k - 1];
        let u = update.sample(&mut rng);
        for (s, v) in sums
            .iter_mut()
            .zip([x, x.min(u), if x <= u { 1.0 } else { 0.0 }])
        {
            s[0] += v;
            s[1] += v * v;
        }
    }
    let t = trials as f64;
    sums.map(|[s, s2]| {
        let mean = s / t;
        (mean, ((s2 / t - mean * mean).max(0.0) / t).sqrt())
    })
}

fn criterion_7() -> Outcome {
    use rand::Rng;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let instances: Vec<Instance> = (0..50)
        .map(|_| {
            let m = rng.random_range(1..=6usize);
            Instance {
                rates: (0..m).map(|_| rng.random_range(0.1..=10.0)).collect(),
                k: rng.random_range(1..=m),
                source: rng.random_range(0.1..=10.0),
            }
        })
        .collect();
    let worst = instances
        .par_iter()
        .enumerate()
        .map(|(i, inst)| {
            let set = RateSet::new(inst.rates.clone()).unwrap();
            let exact = [
                analysis::order_stat_mean(&set, inst.k).unwrap(),
                analysis::exp_min_with_update(&set, inst.k, inst.source).unwrap(),
                analysis::prob_service_before_update(&set, inst.k, inst.source).unwrap(),
            ];
            let mc = monte_carlo(inst, 1_000_000, 100 + i as u64);
            exact
                .iter()
                .zip(mc)
                .map(|(&e, (mean, se))| (mean - e).abs() / se)
                .fold(0.0f64, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    let elapsed = start.elapsed();
    if worst >= 4.0 {
        return Err(format!("worst deviation {worst:.2} SE"));
    }
    if elapsed > Duration::from_secs(120) {
        return Err(format!("took {elapsed:?}"));
    }
    Ok(format!(
        "150 moments, worst {worst:.2} SE, {:.1}s",
        elapsed.as_secs_f64()
    ))
}

fn criterion_8() -> Outcome {
    let interval = (1.0, 1e7);
    let one = analysis::critical_gossip_rate(1, 30, 15.0, 0.1, interval).unwrap();
    if one != interval.0 {
        return Err(format!("k=1 gave {one}"));
    }
    let rates: Vec<f64> = (2..=10)
        .map(|k| analysis::critical_gossip_rate(k, 30, 15.0, 0.1, interval).unwrap())
        .collect();
    if rates.windows(2).any(|w| w[1] < w[0]) {
        return Err(format!("decreasing somewhere: {rates:?}"));
    }
    Ok(format!("k=2..10: {rates:.2?}"))
}

fn keyed_ages(k: RequiredKeys) -> (f64, f64) {
    match k {
        RequiredKeys::Keys(0) => (0.0, 0.0),
        RequiredKeys::Keys(k) => (
            analysis::shn_age_memory(30, k, 150.0, 15.0).unwrap(),
            analysis::shn_age_memoryless(30, k, 150.0, 15.0).unwrap(),
        ),
        RequiredKeys::Infeasible { .. } => (f64::INFINITY, f64::INFINITY),
    }
}

fn criterion_9() -> Outcome {
    let alphas: Vec<f64> = (1..=99).map(|i| i as f64 / 100.0).collect();
    let betas = [0.2, 0.5, 0.8];
    let mut per_beta = Vec::new();
    for beta in betas {
        let keys: Vec<RequiredKeys> = alphas
            .iter()
            .map(|&a| required_keys(30, beta, a).unwrap())
            .collect();
        if keys.windows(2).any(|w| w[1].raw() < w[0].raw()) {
            return Err(format!("beta={beta}: required keys decrease"));
        }
        let ages: Vec<(f64, f64)> = keys.iter().map(|&k| keyed_ages(k)).collect();
        if ages.windows(2).any(|w| w[1].0 < w[0].0 || w[1].1 < w[0].1) {
            return Err(format!("beta={beta}: ages decrease along alpha"));
        }
        per_beta.push(ages);
    }
    for pair in per_beta.windows(2) {
        for (i, (lo, hi)) in pair[0].iter().zip(&pair[1]).enumerate() {
            if hi.0 < lo.0 || hi.1 < lo.1 {
                return Err(format!(
                    "alpha={}: higher beta gave a smaller age",
                    alphas[i]
                ));
            }
        }
    }
    Ok(format!("{} alphas x {:?}", alphas.len(), betas))
}

fn run_cli(config: &Path, out: &Path) -> Vec<u8> {
    let status = Command::new(env!("CARGO_BIN_EXE_kage"))
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .arg("--deterministic")
        .arg("simulate")
        .status()
        .unwrap();
    assert!(status.success());
    std::fs::read(out).unwrap()
}

fn criterion_10() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.json");
    std::fs::write(
        &config,
        r#"{"network": {"shn": {"n": 5, "lambda_e": 40}}, "lambda_s": 8, "k": 2,
            "horizon": 500, "seed": 31}"#,
    )
    .unwrap();
    let first = run_cli(&config, &dir.path().join("a.csv"));
    let second = run_cli(&config, &dir.path().join("b.csv"));
    if first != second {
        return Err("outputs differ".into());
    }
    Ok(format!("{} identical bytes", first.len()))
}

fn main() {
    let criteria: [(&str, Check); 10] = [
        ("memory closed form vs simulation", criterion_1),
        ("memoryless closed form vs simulation", criterion_2),
        ("scheme ordering", criterion_3),
        ("large-network limit", criterion_4),
        ("success-run law", criterion_5),
        ("message-size law", criterion_6),
        ("order-statistic oracles", criterion_7),
        ("critical gossip rate", criterion_8),
        ("precision sweep", criterion_9),
        ("deterministic simulate output", criterion_10),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS {} {name}: {detail}", i + 1),
            Err(detail) => {
                println!("FAIL {} {name}: {detail}", i + 1);
                failed.push(i + 1);
            }
        }
    }
    if failed.is_empty() {
        println!("all {} criteria passed", criteria.len());
    } else {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
