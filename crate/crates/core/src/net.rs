//! Gossip network topology: receivers `1..=n`, an implicit broadcasting
//! source `0`, and directed receiver-to-receiver edges that activate as
//! independent Poisson processes.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Node identifier. `0` is the source, receivers are `1..=n`.
pub type NodeId = usize;

/// Identifier of the source node.
pub const SOURCE: NodeId = 0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("network needs at least one receiver")]
    NoReceivers,
    #[error("rate {name} = {value} must be strictly positive and finite")]
    BadRate { name: String, value: f64 },
    #[error("duplicate edge {from} -> {to}")]
    DuplicateEdge { from: NodeId, to: NodeId },
    #[error("self-loop on node {0}")]
    SelfLoop(NodeId),
    #[error("unknown node id {id} (receivers are 1..={n})")]
    UnknownNode { id: NodeId, n: usize },
    #[error("source links are implicit; edge {from} -> {to} touches node 0")]
    SourceEdge { from: NodeId, to: NodeId },
    #[error("threshold vector has length {got}, expected {expected}")]
    ThresholdLength { got: usize, expected: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeSpec {
    pub from: NodeId,
    pub to: NodeId,
    pub rate: f64,
}

impl EdgeSpec {
    pub fn new(from: NodeId, to: NodeId, rate: f64) -> Self {
        Self { from, to, rate }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Topology {
    Explicit(Vec<EdgeSpec>),
    /// Scalable homogeneous network: complete directed graph on the
    /// receivers with every edge rate `gossip_rate / (n - 1)`.
    Shn {
        gossip_rate: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub n: usize,
    pub source_rate: f64,
    pub topology: Topology,
}

impl NetworkSpec {
    pub fn shn(n: usize, gossip_rate: f64, source_rate: f64) -> Self {
        Self {
            n,
            source_rate,
            topology: Topology::Shn { gossip_rate },
        }
    }

    pub fn explicit(n: usize, source_rate: f64, edges: Vec<EdgeSpec>) -> Self {
        Self {
            n,
            source_rate,
            topology: Topology::Explicit(edges),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub from: NodeId,
    pub to: NodeId,
    pub rate: f64,
}

/// Validated, immutable network with adjacency indexes.
#[derive(Debug, Clone)]
pub struct Network {
    n: usize,
    source_rate: f64,
    gossip_rate: Option<f64>,
    edges: Vec<Edge>,
    // indexed by node id; slot 0 (source) stays empty
    in_edges: Vec<Vec<usize>>,
    out_edges: Vec<Vec<usize>>,
}

fn check_rate(name: &str, value: f64) -> Result<(), NetError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(NetError::BadRate {
            name: name.to_string(),
            value,
        })
    }
}

/// Expands and validates a [`NetworkSpec`].
pub fn build_network(spec: &NetworkSpec) -> Result<Network, NetError> {
    let n = spec.n;
    if n == 0 {
        return Err(NetError::NoReceivers);
    }
    check_rate("lambda_s", spec.source_rate)?;

    let (edges, gossip_rate) = match &spec.topology {
        Topology::Shn { gossip_rate } => {
            check_rate("lambda_e", *gossip_rate)?;
            let mut edges = Vec::with_capacity(n * n.saturating_sub(1));
            if n > 1 {
                let rate = gossip_rate / (n - 1) as f64;
                for from in 1..=n {
                    for to in 1..=n {
                        if from != to {
                            edges.push(Edge { from, to, rate });
                        }
                    }
                }
            }
            (edges, Some(*gossip_rate))
        }
        Topology::Explicit(list) => {
            let mut seen = std::collections::HashSet::with_capacity(list.len());
            let mut edges = Vec::with_capacity(list.len());
            for e in list {
                if e.from == SOURCE || e.to == SOURCE {
                    return Err(NetError::SourceEdge {
                        from: e.from,
                        to: e.to,
                    });
                }
                for id in [e.from, e.to] {
                    if id > n {
                        return Err(NetError::UnknownNode { id, n });
                    }
                }
                if e.from == e.to {
                    return Err(NetError::SelfLoop(e.from));
                }
                check_rate(&format!("lambda_{}{}", e.from, e.to), e.rate)?;
                if !seen.insert((e.from, e.to)) {
                    return Err(NetError::DuplicateEdge {
                        from: e.from,
                        to: e.to,
                    });
                }
                edges.push(Edge {
                    from: e.from,
                    to: e.to,
                    rate: e.rate,
                });
            }
            (edges, None)
        }
    };

    let mut in_edges = vec![Vec::new(); n + 1];
    let mut out_edges = vec![Vec::new(); n + 1];
    for (id, e) in edges.iter().enumerate() {
        in_edges[e.to].push(id);
        out_edges[e.from].push(id);
    }

    Ok(Network {
        n,
        source_rate: spec.source_rate,
        gossip_rate,
        edges,
        in_edges,
        out_edges,
    })
}

impl Network {
    /// Number of receivers.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn source_rate(&self) -> f64 {
        self.source_rate
    }

    /// `Some(lambda_e)` when the network was built as an SHN.
    pub fn gossip_rate(&self) -> Option<f64> {
        self.gossip_rate
    }

    pub fn is_shn(&self) -> bool {
        self.gossip_rate.is_some()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, id: usize) -> &Edge {
        &self.edges[id]
    }

    pub fn receivers(&self) -> impl Iterator<Item = NodeId> {
        1..=self.n
    }

    /// Edge ids terminating at `node`.
    pub fn in_edge_ids(&self, node: NodeId) -> &[usize] {
        &self.in_edges[node]
    }

    pub fn out_edge_ids(&self, node: NodeId) -> &[usize] {
        &self.out_edges[node]
    }

    pub fn in_degree(&self, node: NodeId) -> usize {
        self.in_edges[node].len()
    }

    /// In-neighbour ids of `node`, in edge order.
    pub fn in_neighbors(&self, node: NodeId) -> Vec<NodeId> {
        self.in_edges[node]
            .iter()
            .map(|&id| self.edges[id].from)
            .collect()
    }

    /// Activation rates of the edges terminating at `node`.
    pub fn in_rates(&self, node: NodeId) -> Vec<f64> {
        self.in_edges[node]
            .iter()
            .map(|&id| self.edges[id].rate)
            .collect()
    }

    pub fn out_rate(&self, node: NodeId) -> f64 {
        self.out_edges[node]
            .iter()
            .map(|&id| self.edges[id].rate)
            .sum()
    }

    /// Sum of every Poisson rate in the system, source included.
    pub fn total_rate(&self) -> f64 {
        self.source_rate + self.edges.iter().map(|e| e.rate).sum::<f64>()
    }

    /// Copy of the network without edge `id`. Used by monotonicity checks.
    pub fn without_edge(&self, id: usize) -> Network {
        let edges: Vec<EdgeSpec> = self
            .edges
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != id)
            .map(|(_, e)| EdgeSpec::new(e.from, e.to, e.rate))
            .collect();
        build_network(&NetworkSpec::explicit(self.n, self.source_rate, edges))
            .expect("subgraph of a valid network is valid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FeasibilityMode {
    /// Every receiver has at least as many in-neighbours as keys it needs.
    #[default]
    PerNodeStrict,
    /// Smallest receiver in-degree is at least the smallest requirement.
    MinDegree,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeFeasibility {
    pub node: NodeId,
    pub in_degree: usize,
    pub required: usize,
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityReport {
    pub feasible: bool,
    pub mode: FeasibilityMode,
    pub per_node_strict: bool,
    pub min_degree: bool,
    pub per_node: Vec<NodeFeasibility>,
}

impl FeasibilityReport {
    pub fn unsatisfied(&self) -> impl Iterator<Item = &NodeFeasibility> {
        self.per_node.iter().filter(|r| !r.satisfied)
    }
}

/// `k[j - 1]` is the number of gossiped keys receiver `j` needs.
pub fn check_feasibility(
    network: &Network,
    k: &[usize],
    mode: FeasibilityMode,
) -> Result<FeasibilityReport, NetError> {
    if k.len() != network.n() {
        return Err(NetError::ThresholdLength {
            got: k.len(),
            expected: network.n(),
        });
    }
    let per_node: Vec<NodeFeasibility> = network
        .receivers()
        .map(|j| {
            let in_degree = network.in_degree(j);
            let required = k[j - 1];
            NodeFeasibility {
                node: j,
                in_degree,
                required,
                satisfied: in_degree >= required,
            }
        })
        .collect();

    let per_node_strict = per_node.iter().all(|r| r.satisfied);
    let min_in = per_node.iter().map(|r| r.in_degree).min().unwrap_or(0);
    let min_k = k.iter().copied().min().unwrap_or(0);
    let min_degree = min_in >= min_k;

    Ok(FeasibilityReport {
        feasible: match mode {
            FeasibilityMode::PerNodeStrict => per_node_strict,
            FeasibilityMode::MinDegree => min_degree,
        },
        mode,
        per_node_strict,
        min_degree,
        per_node,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn shn_expansion() {
        let net = build_network(&NetworkSpec::shn(6, 100.0, 10.0)).unwrap();
        assert_eq!(net.edges().len(), 30);
        assert!(net.edges().iter().all(|e| e.rate == 20.0));
        for j in net.receivers() {
            assert_eq!(net.in_degree(j), 5);
            assert!((net.out_rate(j) - 100.0).abs() < 1e-12);
        }
    }

    #[test]
    fn explicit_in_neighbourhood() {
        let spec = NetworkSpec::explicit(
            3,
            1.0,
            vec![EdgeSpec::new(1, 2, 0.5), EdgeSpec::new(3, 2, 1.5)],
        );
        let net = build_network(&spec).unwrap();
        assert_eq!(net.in_degree(2), 2);
        assert_eq!(net.in_neighbors(2), vec![1, 3]);
        assert_eq!(net.in_rates(2), vec![0.5, 1.5]);
        assert_eq!(net.in_degree(1), 0);
    }

    #[test]
    fn rejects_bad_edges() {
        let dup = NetworkSpec::explicit(
            2,
            1.0,
            vec![EdgeSpec::new(1, 2, 0.5), EdgeSpec::new(1, 2, 0.7)],
        );
        assert_eq!(
            build_network(&dup).unwrap_err(),
            NetError::DuplicateEdge { from: 1, to: 2 }
        );
        let unknown = NetworkSpec::explicit(2, 1.0, vec![EdgeSpec::new(1, 3, 0.5)]);
        assert!(matches!(
            build_network(&unknown),
            Err(NetError::UnknownNode { id: 3, .. })
        ));
        let neg = NetworkSpec::explicit(2, 1.0, vec![EdgeSpec::new(1, 2, -1.0)]);
        assert!(matches!(build_network(&neg), Err(NetError::BadRate { .. })));
        let lp = NetworkSpec::explicit(2, 1.0, vec![EdgeSpec::new(2, 2, 1.0)]);
        assert_eq!(build_network(&lp).unwrap_err(), NetError::SelfLoop(2));
        let src = NetworkSpec::explicit(2, 1.0, vec![EdgeSpec::new(0, 2, 1.0)]);
        assert!(matches!(
            build_network(&src),
            Err(NetError::SourceEdge { .. })
        ));
        assert!(matches!(
            build_network(&NetworkSpec::shn(4, 0.0, 1.0)),
            Err(NetError::BadRate { .. })
        ));
        assert!(matches!(
            build_network(&NetworkSpec::shn(4, 1.0, f64::INFINITY)),
            Err(NetError::BadRate { .. })
        ));
    }

    #[test]
    fn feasibility_shn() {
        let net = build_network(&NetworkSpec::shn(6, 100.0, 10.0)).unwrap();
        for mode in [FeasibilityMode::PerNodeStrict, FeasibilityMode::MinDegree] {
            assert!(check_feasibility(&net, &[4; 6], mode).unwrap().feasible);
            assert!(check_feasibility(&net, &[0; 6], mode).unwrap().feasible);
        }
        assert!(matches!(
            check_feasibility(&net, &[1; 5], FeasibilityMode::PerNodeStrict),
            Err(NetError::ThresholdLength {
                got: 5,
                expected: 6
            })
        ));
    }

    #[test]
    fn feasibility_modes_disagree() {
        // complete graph on 6 receivers except node 2 only hears from node 1
        let mut edges = Vec::new();
        for from in 1..=6 {
            for to in 1..=6 {
                if from != to && (to != 2 || from == 1) {
                    edges.push(EdgeSpec::new(from, to, 1.0));
                }
            }
        }
        let net = build_network(&NetworkSpec::explicit(6, 1.0, edges)).unwrap();
        assert_eq!(net.in_degree(2), 1);
        let k = [1, 3, 1, 1, 1, 1];
        let strict = check_feasibility(&net, &k, FeasibilityMode::PerNodeStrict).unwrap();
        assert!(!strict.feasible);
        assert_eq!(
            strict.unsatisfied().map(|r| r.node).collect::<Vec<_>>(),
            vec![2]
        );
        let loose = check_feasibility(&net, &k, FeasibilityMode::MinDegree).unwrap();
        assert!(loose.feasible);
        assert!(!loose.per_node_strict);
    }

    fn arb_network() -> impl Strategy<Value = (Network, Vec<usize>)> {
        (2usize..7).prop_flat_map(|n| {
            let pairs: Vec<(usize, usize)> = (1..=n)
                .flat_map(|a| (1..=n).filter(move |&b| b != a).map(move |b| (a, b)))
                .collect();
            let m = pairs.len();
            (
                proptest::collection::vec(any::<bool>(), m),
                proptest::collection::vec(0usize..n, n),
            )
                .prop_map(move |(keep, k)| {
                    let edges = pairs
                        .iter()
                        .zip(keep)
                        .filter(|(_, keep)| *keep)
                        .map(|(&(a, b), _)| EdgeSpec::new(a, b, 1.0))
                        .collect();
                    (
                        build_network(&NetworkSpec::explicit(n, 1.0, edges)).unwrap(),
                        k,
                    )
                })
        })
    }

    proptest! {
        #[test]
        fn feasibility_is_monotone((net, k) in arb_network(), pick in any::<prop::sample::Index>()) {
            for mode in [FeasibilityMode::PerNodeStrict, FeasibilityMode::MinDegree] {
                let base = check_feasibility(&net, &k, mode).unwrap().feasible;
                if !net.edges().is_empty() {
                    let smaller = net.without_edge(pick.index(net.edges().len()));
                    let after = check_feasibility(&smaller, &k, mode).unwrap().feasible;
                    prop_assert!(base || !after);
                }
                let j = pick.index(k.len());
                if k[j] > 0 {
                    let mut relaxed = k.clone();
                    relaxed[j] -= 1;
                    let after = check_feasibility(&net, &relaxed, mode).unwrap().feasible;
                    prop_assert!(!base || after);
                }
            }
        }

        #[test]
        fn shn_out_rate_is_gossip_rate(n in 2usize..20, rate in 0.01f64..1e3) {
            let net = build_network(&NetworkSpec::shn(n, rate, 1.0)).unwrap();
            prop_assert_eq!(net.edges().len(), n * (n - 1));
            for j in net.receivers() {
                prop_assert!((net.out_rate(j) - rate).abs() <= 1e-12 * rate);
            }
        }
    }
}
