//! Run configuration: a JSON document, validated into [`RunConfig`].
//!
//! ```json
//! {
//!   "network": { "shn": { "n": 6, "lambda_e": 100 } },
//!   "lambda_s": 10,
//!   "k": 2,
//!   "scheme": "both",
//!   "horizon": 1e4,
//!   "seed": 1
//! }
//! ```
//!
//! The threshold is given either as `k` (one value or one per receiver) or
//! as `beta` and `alpha` (each one value or one per receiver), never both.
//! Defaults: `warmup` 0, `exact_threshold` 16, `batches` 30, `scheme`
//! both, `feasibility` per_node_strict, `search_interval` [1, 1e7].

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::analysis::DEFAULT_EXACT_THRESHOLD;
use crate::net::{EdgeSpec, FeasibilityMode, NetworkSpec, NodeId};
use crate::threshold::{required_keys, RequiredKeys};
use crate::Scheme;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    /// Expands to one value per receiver.
    fn per_node(&self, n: usize, field: &str) -> Result<Vec<T>, CliError> {
        match self {
            OneOrMany::One(v) => Ok(vec![v.clone(); n]),
            OneOrMany::Many(vs) if vs.len() == n => Ok(vs.clone()),
            OneOrMany::Many(vs) => Err(CliError::invalid(
                field,
                format!("expected {n} per-node values, got {}", vs.len()),
            )),
        }
    }

    fn to_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v.clone()],
            OneOrMany::Many(vs) => vs.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum NetworkConfig {
    Shn {
        n: usize,
        lambda_e: f64,
    },
    Explicit {
        n: usize,
        /// `[from, to, rate]` triples.
        edges: Vec<(NodeId, NodeId, f64)>,
        #[serde(default)]
        profile_id: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    LambdaE,
    LambdaS,
    K,
    N,
    Beta,
    Alpha,
}

impl SweepParameter {
    pub fn name(self) -> &'static str {
        match self {
            SweepParameter::LambdaE => "lambda_e",
            SweepParameter::LambdaS => "lambda_s",
            SweepParameter::K => "k",
            SweepParameter::N => "n",
            SweepParameter::Beta => "beta",
            SweepParameter::Alpha => "alpha",
        }
    }
}

/// The file as written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub network: NetworkConfig,
    pub lambda_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<OneOrMany<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<OneOrMany<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<OneOrMany<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme: Option<OneOrMany<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Vec<SweepAxis>>,
    /// Sweeps also simulate every grid point.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact_threshold: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batches: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feasibility: Option<FeasibilityMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<OneOrMany<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search_interval: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Topology {
    Shn {
        n: usize,
        lambda_e: f64,
    },
    Explicit {
        n: usize,
        edges: Vec<EdgeSpec>,
        profile_id: String,
    },
}

impl Topology {
    pub fn n(&self) -> usize {
        match self {
            Topology::Shn { n, .. } | Topology::Explicit { n, .. } => *n,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ThresholdSpec {
    Keys(OneOrMany<usize>),
    Precision {
        beta: OneOrMany<f64>,
        alpha: OneOrMany<f64>,
    },
}

/// Validated configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub topology: Topology,
    pub lambda_s: f64,
    pub threshold: ThresholdSpec,
    pub schemes: Vec<Scheme>,
    pub horizon: Option<f64>,
    pub seed: Option<u64>,
    pub sweep: Vec<SweepAxis>,
    pub simulate: bool,
    pub output: Option<PathBuf>,
    pub warmup: f64,
    pub exact_threshold: usize,
    pub batches: usize,
    pub feasibility: FeasibilityMode,
    pub epsilons: Vec<f64>,
    pub search_interval: (f64, f64),
    /// Canonical one-line JSON echo of the input.
    pub echo: String,
}

fn positive(field: &str, v: f64) -> Result<f64, CliError> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(CliError::invalid(
            field,
            format!("must be positive and finite, got {v}"),
        ))
    }
}

fn parse_schemes(spec: Option<&OneOrMany<String>>) -> Result<Vec<Scheme>, CliError> {
    let names = spec.map_or_else(|| vec!["both".to_string()], OneOrMany::to_vec);
    let mut out = Vec::new();
    for name in names {
        match name.as_str() {
            "memory" => out.push(Scheme::Memory),
            "memoryless" => out.push(Scheme::Memoryless),
            "both" => out.extend(Scheme::ALL),
            other => {
                return Err(CliError::invalid(
                    "scheme",
                    format!("unknown scheme {other:?} (memory, memoryless, both)"),
                ))
            }
        }
    }
    out.sort();
    out.dedup();
    if out.is_empty() {
        return Err(CliError::invalid("scheme", "no scheme given"));
    }
    Ok(out)
}

impl RawConfig {
    pub fn validate(self) -> Result<RunConfig, CliError> {
        let echo = serde_json::to_string(&self).expect("config serializes");
        let topology = match self.network {
            NetworkConfig::Shn { n, lambda_e } => {
                if n < 2 {
                    return Err(CliError::invalid("network.shn.n", "an SHN needs n >= 2"));
                }
                Topology::Shn {
                    n,
                    lambda_e: positive("network.shn.lambda_e", lambda_e)?,
                }
            }
            NetworkConfig::Explicit {
                n,
                edges,
                profile_id,
            } => {
                if n == 0 {
                    return Err(CliError::invalid("network.explicit.n", "must be positive"));
                }
                Topology::Explicit {
                    n,
                    edges: edges
                        .into_iter()
                        .map(|(from, to, rate)| EdgeSpec::new(from, to, rate))
                        .collect(),
                    profile_id: profile_id.unwrap_or_else(|| "explicit".to_string()),
                }
            }
        };

        let threshold = match (self.k, self.beta, self.alpha) {
            (Some(_), Some(_), _) | (Some(_), _, Some(_)) => {
                return Err(CliError::invalid(
                    "k",
                    "give either k or beta/alpha, not both",
                ))
            }
            (Some(k), None, None) => ThresholdSpec::Keys(k),
            (None, Some(beta), Some(alpha)) => ThresholdSpec::Precision { beta, alpha },
            (None, Some(_), None) => return Err(CliError::invalid("alpha", "beta requires alpha")),
            (None, None, Some(_)) => return Err(CliError::invalid("beta", "alpha requires beta")),
            (None, None, None) => {
                return Err(CliError::invalid(
                    "k",
                    "a threshold (k or beta/alpha) is required",
                ))
            }
        };

        let sweep = self.sweep.unwrap_or_default();
        for axis in &sweep {
            let field = format!("sweep.{}", axis.parameter.name());
            if axis.values.is_empty() {
                return Err(CliError::invalid(&field, "no values"));
            }
            let shn_only = matches!(axis.parameter, SweepParameter::LambdaE | SweepParameter::N);
            if shn_only && !matches!(topology, Topology::Shn { .. }) {
                return Err(CliError::invalid(&field, "only applies to SHN networks"));
            }
            let precision_axis =
                matches!(axis.parameter, SweepParameter::Beta | SweepParameter::Alpha);
            match (&threshold, axis.parameter) {
                (ThresholdSpec::Keys(_), _) if precision_axis => {
                    return Err(CliError::invalid(&field, "needs a beta/alpha threshold"))
                }
                (ThresholdSpec::Precision { .. }, SweepParameter::K) => {
                    return Err(CliError::invalid(&field, "needs a k threshold"))
                }
                _ => {}
            }
            if matches!(axis.parameter, SweepParameter::K | SweepParameter::N)
                && axis.values.iter().any(|v| v.fract() != 0.0 || *v < 0.0)
            {
                return Err(CliError::invalid(
                    &field,
                    "values must be non-negative integers",
                ));
            }
        }
        let mut names: Vec<_> = sweep.iter().map(|a| a.parameter.name()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(CliError::invalid("sweep", "parameter listed twice"));
        }

        let warmup = self.warmup.unwrap_or(0.0);
        if !(0.0..1.0).contains(&warmup) {
            return Err(CliError::invalid("warmup", "must lie in [0, 1)"));
        }
        if let Some(h) = self.horizon {
            positive("horizon", h)?;
        }
        let batches = self.batches.unwrap_or(30);
        if batches < 2 {
            return Err(CliError::invalid("batches", "need at least 2"));
        }
        let epsilons = self.epsilon.map(|e| e.to_vec()).unwrap_or_default();
        for &e in &epsilons {
            positive("epsilon", e)?;
        }
        let search_interval = self.search_interval.unwrap_or((1.0, 1e7));
        if !(search_interval.0 > 0.0 && search_interval.1 > search_interval.0) {
            return Err(CliError::invalid("search_interval", "need 0 < lo < hi"));
        }

        Ok(RunConfig {
            topology,
            lambda_s: positive("lambda_s", self.lambda_s)?,
            threshold,
            schemes: parse_schemes(self.scheme.as_ref())?,
            horizon: self.horizon,
            seed: self.seed,
            sweep,
            simulate: self.simulate.unwrap_or(false),
            output: self.output,
            warmup,
            exact_threshold: self.exact_threshold.unwrap_or(DEFAULT_EXACT_THRESHOLD),
            batches,
            feasibility: self.feasibility.unwrap_or_default(),
            epsilons,
            search_interval,
            echo,
        })
    }
}

/// Parses and validates a configuration document.
pub fn parse_config_str(text: &str) -> Result<RunConfig, CliError> {
    let raw: RawConfig = serde_json::from_str(text).map_err(|e| CliError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    raw.validate()
}

pub fn parse_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    parse_config_str(&text)
}

/// One fully specified parameter point.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub topology: Topology,
    pub lambda_s: f64,
    pub threshold: ThresholdSpec,
}

/// Keys per receiver after solving any precision targets.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedKeys {
    pub k: Vec<usize>,
    /// Receivers whose precision target needs more than `n - 1` keys.
    pub unreachable: Vec<NodeId>,
    pub beta: Option<Vec<f64>>,
    pub alpha: Option<Vec<f64>>,
}

impl ResolvedKeys {
    /// The common key count when every receiver needs the same number.
    pub fn uniform(&self) -> Option<usize> {
        let first = *self.k.first()?;
        self.k.iter().all(|&k| k == first).then_some(first)
    }
}

impl Point {
    pub fn n(&self) -> usize {
        self.topology.n()
    }

    pub fn network_spec(&self) -> NetworkSpec {
        match &self.topology {
            Topology::Shn { n, lambda_e } => NetworkSpec::shn(*n, *lambda_e, self.lambda_s),
            Topology::Explicit { n, edges, .. } => {
                NetworkSpec::explicit(*n, self.lambda_s, edges.clone())
            }
        }
    }

    pub fn resolve_keys(&self) -> Result<ResolvedKeys, CliError> {
        let n = self.n();
        match &self.threshold {
            ThresholdSpec::Keys(k) => Ok(ResolvedKeys {
                k: k.per_node(n, "k")?,
                unreachable: Vec::new(),
                beta: None,
                alpha: None,
            }),
            ThresholdSpec::Precision { beta, alpha } => {
                let beta = beta.per_node(n, "beta")?;
                let alpha = alpha.per_node(n, "alpha")?;
                let mut k = Vec::with_capacity(n);
                let mut unreachable = Vec::new();
                for (j, (&b, &a)) in beta.iter().zip(&alpha).enumerate() {
                    match required_keys(n, b, a)? {
                        RequiredKeys::Keys(v) => k.push(v),
                        RequiredKeys::Infeasible { k: v } => {
                            unreachable.push(j + 1);
                            k.push(v);
                        }
                    }
                }
                Ok(ResolvedKeys {
                    k,
                    unreachable,
                    beta: Some(beta),
                    alpha: Some(alpha),
                })
            }
        }
    }
}

impl RunConfig {
    /// The un-swept point.
    pub fn base_point(&self) -> Point {
        Point {
            topology: self.topology.clone(),
            lambda_s: self.lambda_s,
            threshold: self.threshold.clone(),
        }
    }

    /// Cartesian product of the sweep axes, first axis outermost.
    pub fn grid(&self) -> Vec<Point> {
        let mut points = vec![self.base_point()];
        for axis in &self.sweep {
            let mut next = Vec::with_capacity(points.len() * axis.values.len());
            for p in &points {
                for &v in &axis.values {
                    let mut q = p.clone();
                    apply(&mut q, axis.parameter, v);
                    next.push(q);
                }
            }
            points = next;
        }
        points
    }
}

fn apply(p: &mut Point, param: SweepParameter, v: f64) {
    match param {
        SweepParameter::LambdaE => {
            if let Topology::Shn { lambda_e, .. } = &mut p.topology {
                *lambda_e = v;
            }
        }
        SweepParameter::N => {
            if let Topology::Shn { n, .. } = &mut p.topology {
                *n = v as usize;
            }
        }
        SweepParameter::LambdaS => p.lambda_s = v,
        SweepParameter::K => p.threshold = ThresholdSpec::Keys(OneOrMany::One(v as usize)),
        SweepParameter::Beta | SweepParameter::Alpha => {
            if let ThresholdSpec::Precision { beta, alpha } = &mut p.threshold {
                let slot = if param == SweepParameter::Beta {
                    beta
                } else {
                    alpha
                };
                *slot = OneOrMany::One(v);
            }
        }
    }
}
