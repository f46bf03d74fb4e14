//! Discrete-event simulation of key gossip under the memory and memoryless
//! schemes.
//!
//! The source and every edge are independent Poisson streams. Each stream
//! always has exactly one pending event in the queue; when it fires, its
//! next firing is drawn lazily. Ages are integer step functions, so the time
//! integral is accumulated exactly as `age * elapsed` at every change.
//!
//! Initial state: source version 0 exists at `t = 0` and every receiver has
//! already decoded it, so all ages start at 0.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, VecDeque};
use std::fmt;

use rand_distr::{Distribution, Exp};
use thiserror::Error;

use crate::net::{check_feasibility, FeasibilityMode, NetError, Network, NodeId};
use crate::rng::{stream_rng, SimRng, GENERATOR_ID, SIMULATOR_STREAM};
use crate::stats::{BatchAccumulator, EstimateWithCI, StatsError};
use crate::Scheme;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("network is infeasible: node(s) {nodes:?} need more keys than their in-degree")]
    Infeasible { nodes: Vec<NodeId> },
    #[error("horizon {0} must be positive and finite")]
    BadHorizon(f64),
    #[error("warmup fraction {0} must lie in [0, 1)")]
    BadWarmup(f64),
    #[error("cycle extraction needs a memoryless run")]
    NotMemoryless,
    #[error("node {0} is not a receiver")]
    UnknownNode(NodeId),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub horizon: f64,
    pub seed: u64,
    /// Fraction of `[0, horizon]` discarded before averaging.
    pub warmup: f64,
    pub batches: usize,
    pub confidence: f64,
    pub record_events: bool,
}

impl SimConfig {
    pub fn new(horizon: f64, seed: u64) -> Self {
        Self {
            horizon,
            seed,
            warmup: 0.0,
            batches: 30,
            confidence: 0.95,
            record_events: false,
        }
    }

    pub fn with_events(mut self) -> Self {
        self.record_events = true;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    SourceUpdate,
    EdgeActivation(usize),
}

const SOURCE_STREAM: usize = 0;

impl EventKind {
    fn stream(self) -> usize {
        match self {
            EventKind::SourceUpdate => SOURCE_STREAM,
            EventKind::EdgeActivation(e) => e + 1,
        }
    }

    fn from_stream(stream: usize) -> Self {
        if stream == SOURCE_STREAM {
            EventKind::SourceUpdate
        } else {
            EventKind::EdgeActivation(stream - 1)
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Pending {
    time: f64,
    seq: u64,
    stream: usize,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Pending {}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pending {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.seq.cmp(&other.seq))
    }
}

/// Min-queue of `(time, sequence)`-keyed events.
#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Reverse<Pending>>,
    seq: u64,
}

impl EventQueue {
    pub fn schedule(&mut self, time: f64, kind: EventKind) {
        self.heap.push(Reverse(Pending {
            time,
            seq: self.seq,
            stream: kind.stream(),
        }));
        self.seq += 1;
    }

    pub fn pop(&mut self) -> Option<(f64, EventKind)> {
        self.heap
            .pop()
            .map(|Reverse(p)| (p.time, EventKind::from_stream(p.stream)))
    }

    pub fn peek_time(&self) -> Option<f64> {
        self.heap.peek().map(|Reverse(p)| p.time)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

/// Key-collection state of one receiver.
#[derive(Debug, Clone)]
pub struct NodeState {
    k: usize,
    decoded: u64,
    /// Memory scheme: provider ids of versions `decoded + 1 ..`, front first.
    backlog: VecDeque<Vec<NodeId>>,
    /// Memoryless scheme: which in-edges (by local index) supplied the
    /// current version.
    current: Vec<bool>,
    current_count: usize,
}

impl NodeState {
    fn new(k: usize, in_degree: usize) -> Self {
        Self {
            k,
            decoded: 0,
            backlog: VecDeque::new(),
            current: vec![false; in_degree],
            current_count: 0,
        }
    }

    pub fn required_keys(&self) -> usize {
        self.k
    }

    pub fn decoded_version(&self) -> u64 {
        self.decoded
    }

    /// Number of undecoded versions with at least one provider slot.
    pub fn backlog_len(&self) -> usize {
        self.backlog.len()
    }

    /// Providers recorded for `version` under the memory scheme.
    pub fn providers(&self, version: u64) -> &[NodeId] {
        if version <= self.decoded {
            return &[];
        }
        self.backlog
            .get((version - self.decoded - 1) as usize)
            .map_or(&[], Vec::as_slice)
    }

    /// Memoryless scheme: number of distinct providers of the current version.
    pub fn current_providers(&self) -> usize {
        self.current_count
    }
}

/// Counts of message key-counts on one edge, indexed by key-count.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Histogram(Vec<u64>);

impl Histogram {
    fn record(&mut self, value: u64) {
        let i = value as usize;
        if self.0.len() <= i {
            self.0.resize(i + 1, 0);
        }
        self.0[i] += 1;
    }

    pub fn counts(&self) -> &[u64] {
        &self.0
    }

    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        let weighted: f64 = self
            .0
            .iter()
            .enumerate()
            .map(|(v, &c)| v as f64 * c as f64)
            .sum();
        weighted / self.total() as f64
    }

    /// The recorded values, expanded in ascending order.
    pub fn samples(&self) -> Vec<u64> {
        self.0
            .iter()
            .enumerate()
            .flat_map(|(v, &c)| std::iter::repeat_n(v as u64, c as usize))
            .collect()
    }
}

/// One processed event and every receiver's age right after it.
#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub time: f64,
    pub kind: EventKind,
    /// Directed edge endpoints for activations.
    pub link: Option<(NodeId, NodeId)>,
    /// Keys carried by the message, for activations.
    pub keys: Option<u64>,
    pub ages: Vec<u64>,
}

impl fmt::Display for EventRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ages = self
            .ages
            .iter()
            .map(u64::to_string)
            .collect::<Vec<_>>()
            .join(" ");
        match (self.kind, self.link) {
            (EventKind::EdgeActivation(_), Some((i, j))) => write!(
                f,
                "{},edge,{}->{},{},{}",
                self.time,
                i,
                j,
                self.keys.unwrap_or(0),
                ages
            ),
            _ => write!(f, "{},source,0,,{}", self.time, ages),
        }
    }
}

/// Everything measured for one receiver.
#[derive(Debug, Clone)]
pub struct NodeOutcome {
    pub node: NodeId,
    pub k: usize,
    /// `int A dt` over the averaging window.
    pub integral: f64,
    /// Empirical time-average age.
    pub time_average: f64,
    pub estimate: EstimateWithCI,
    pub batches: BatchAccumulator,
    /// Memoryless runs: updates between consecutive instants at which the
    /// age is exactly 1 right after a source update.
    pub cycles: Vec<u64>,
    pub max_backlog: usize,
    pub decodes: u64,
}

#[derive(Debug, Clone)]
pub struct SimResult {
    pub scheme: Scheme,
    pub horizon: f64,
    pub window: (f64, f64),
    pub seed: u64,
    pub generator: &'static str,
    pub nodes: Vec<NodeOutcome>,
    /// Message key-count histogram, indexed by edge id.
    pub message_sizes: Vec<Histogram>,
    pub events: u64,
    pub source_updates: u64,
    pub event_log: Option<Vec<EventRecord>>,
}

impl SimResult {
    pub fn node(&self, node: NodeId) -> Option<&NodeOutcome> {
        self.nodes.get(node.checked_sub(1)?)
    }

    /// Cross-receiver average age with a batch-means interval over the
    /// per-batch node averages.
    pub fn network_average(&self, confidence: f64) -> EstimateWithCI {
        let accs: Vec<BatchAccumulator> = self.nodes.iter().map(|o| o.batches.clone()).collect();
        BatchAccumulator::average(&accs)
            .expect("at least one receiver")
            .estimate(confidence)
    }
}

/// Missed-update counts `M_a` of a memoryless run.
pub fn extract_cycles(result: &SimResult, node: NodeId) -> Result<&[u64], SimError> {
    if result.scheme != Scheme::Memoryless {
        return Err(SimError::NotMemoryless);
    }
    result
        .node(node)
        .map(|o| o.cycles.as_slice())
        .ok_or(SimError::UnknownNode(node))
}

struct NodeTrack {
    last_change: f64,
    age: u64,
    integral: f64,
    acc: BatchAccumulator,
    cycle_start: Option<u64>,
    cycles: Vec<u64>,
    max_backlog: usize,
    decodes: u64,
}

/// A running simulation. Use [`run`] for the common case; the event
/// handlers are public so that scripted scenarios can drive the state
/// machine directly.
pub struct Simulation<'a> {
    network: &'a Network,
    scheme: Scheme,
    config: SimConfig,
    window: (f64, f64),
    rng: SimRng,
    clocks: Vec<Exp<f64>>,
    queue: EventQueue,
    version: u64,
    nodes: Vec<NodeState>,
    tracks: Vec<NodeTrack>,
    /// Memory scheme: source version at each edge's previous activation.
    last_sent: Vec<u64>,
    /// Position of each edge in its head's in-edge list.
    local_index: Vec<usize>,
    message_sizes: Vec<Histogram>,
    events: u64,
    source_updates: u64,
    log: Option<Vec<EventRecord>>,
}

impl<'a> Simulation<'a> {
    pub fn new(
        network: &'a Network,
        k: &[usize],
        scheme: Scheme,
        config: SimConfig,
    ) -> Result<Self, SimError> {
        if !(config.horizon > 0.0 && config.horizon.is_finite()) {
            return Err(SimError::BadHorizon(config.horizon));
        }
        if !(0.0..1.0).contains(&config.warmup) {
            return Err(SimError::BadWarmup(config.warmup));
        }
        let report = check_feasibility(network, k, FeasibilityMode::PerNodeStrict)?;
        if !report.feasible {
            return Err(SimError::Infeasible {
                nodes: report.unsatisfied().map(|r| r.node).collect(),
            });
        }

        let window = (config.warmup * config.horizon, config.horizon);
        let mut tracks = Vec::with_capacity(network.n());
        for _ in network.receivers() {
            tracks.push(NodeTrack {
                last_change: 0.0,
                age: 0,
                integral: 0.0,
                acc: BatchAccumulator::new(window.0, window.1, config.batches)?,
                cycle_start: None,
                cycles: Vec::new(),
                max_backlog: 0,
                decodes: 0,
            });
        }
        let nodes = network
            .receivers()
            .map(|j| NodeState::new(k[j - 1], network.in_degree(j)))
            .collect();
        let mut local_index = vec![0; network.edges().len()];
        for j in network.receivers() {
            for (pos, &e) in network.in_edge_ids(j).iter().enumerate() {
                local_index[e] = pos;
            }
        }
        let clocks = std::iter::once(network.source_rate())
            .chain(network.edges().iter().map(|e| e.rate))
            .map(|rate| Exp::new(rate).expect("validated positive rate"))
            .collect();

        Ok(Self {
            network,
            scheme,
            rng: stream_rng(config.seed, SIMULATOR_STREAM),
            log: config.record_events.then(Vec::new),
            config,
            window,
            clocks,
            queue: EventQueue::default(),
            version: 0,
            nodes,
            tracks,
            last_sent: vec![0; network.edges().len()],
            local_index,
            message_sizes: vec![Histogram::default(); network.edges().len()],
            events: 0,
            source_updates: 0,
        })
    }

    fn schedule_next(&mut self, kind: EventKind, now: f64) {
        let delay = self.clocks[kind.stream()].sample(&mut self.rng);
        self.queue.schedule(now + delay, kind);
    }

    /// Arms one pending event per stream, starting at `t = 0`.
    pub fn prime(&mut self) {
        self.schedule_next(EventKind::SourceUpdate, 0.0);
        for e in 0..self.network.edges().len() {
            self.schedule_next(EventKind::EdgeActivation(e), 0.0);
        }
    }

    pub fn source_version(&self) -> u64 {
        self.version
    }

    pub fn node_state(&self, node: NodeId) -> &NodeState {
        &self.nodes[node - 1]
    }

    pub fn age(&self, node: NodeId) -> u64 {
        self.tracks[node - 1].age
    }

    pub fn queue(&self) -> &EventQueue {
        &self.queue
    }

    /// Integrates node `idx`'s current age up to `t` and sets its new age.
    fn set_age(&mut self, idx: usize, t: f64, age: u64) {
        let track = &mut self.tracks[idx];
        let (lo, hi) = self.window;
        let a = track.last_change.max(lo);
        let b = t.min(hi);
        if b > a {
            track.integral += track.age as f64 * (b - a);
        }
        track.acc.add(track.last_change, t, track.age as f64);
        if track.age != age {
            track.acc.mark_event(t);
        }
        track.last_change = t;
        track.age = age;
    }

    fn log_event(&mut self, t: f64, kind: EventKind, keys: Option<u64>) {
        if let Some(log) = self.log.as_mut() {
            let link = match kind {
                EventKind::EdgeActivation(e) => {
                    let edge = self.network.edge(e);
                    Some((edge.from, edge.to))
                }
                EventKind::SourceUpdate => None,
            };
            log.push(EventRecord {
                time: t,
                kind,
                link,
                keys,
                ages: self.tracks.iter().map(|tr| tr.age).collect(),
            });
        }
    }

    /// New source version: every age grows by one, memoryless nodes drop
    /// the keys they collected for the previous version.
    pub fn handle_source_update(&mut self, t: f64) {
        self.version += 1;
        self.source_updates += 1;
        let version = self.version;
        for idx in 0..self.nodes.len() {
            let state = &mut self.nodes[idx];
            if state.k == 0 {
                state.decoded = version;
            }
            if self.scheme == Scheme::Memoryless {
                state.current.iter_mut().for_each(|c| *c = false);
                state.current_count = 0;
            }
            let age = version - state.decoded;
            if state.k == 0 {
                self.tracks[idx].decodes += 1;
            }
            self.set_age(idx, t, age);
            if self.scheme == Scheme::Memoryless && age == 1 {
                let track = &mut self.tracks[idx];
                if let Some(start) = track.cycle_start {
                    track.cycles.push(version - start);
                }
                track.cycle_start = Some(version);
            }
        }
        self.log_event(t, EventKind::SourceUpdate, None);
    }

    /// Activation of edge `edge` (i -> j): i forwards its own keys to j.
    /// Returns the number of keys in the message.
    pub fn handle_edge_activation(&mut self, edge: usize, t: f64) -> u64 {
        let (from, to) = {
            let e = self.network.edge(edge);
            (e.from, e.to)
        };
        let idx = to - 1;
        let version = self.version;
        let keys;
        let mut decoded_to = None;

        match self.scheme {
            Scheme::Memory => {
                let sent_before = self.last_sent[edge];
                self.last_sent[edge] = version;
                keys = version - sent_before;
                let state = &mut self.nodes[idx];
                let first = sent_before.max(state.decoded) + 1;
                if state.k > 0 && first <= version {
                    let needed = (version - state.decoded) as usize;
                    if state.backlog.len() < needed {
                        state.backlog.resize_with(needed, Vec::new);
                    }
                    let mut best = None;
                    for v in first..=version {
                        let slot = &mut state.backlog[(v - state.decoded - 1) as usize];
                        slot.push(from);
                        if slot.len() >= state.k {
                            best = Some(v);
                        }
                    }
                    let backlog = state.backlog.len();
                    let track = &mut self.tracks[idx];
                    track.max_backlog = track.max_backlog.max(backlog);
                    if let Some(v) = best {
                        let drop = (v - state.decoded) as usize;
                        state.backlog.drain(..drop);
                        state.decoded = v;
                        decoded_to = Some(v);
                    }
                }
            }
            Scheme::Memoryless => {
                keys = 1;
                let local = self.local_index[edge];
                let state = &mut self.nodes[idx];
                if state.decoded < version && !state.current[local] {
                    state.current[local] = true;
                    state.current_count += 1;
                    if state.current_count >= state.k {
                        state.decoded = version;
                        decoded_to = Some(version);
                    }
                }
            }
        }
        self.message_sizes[edge].record(keys);

        if let Some(v) = decoded_to {
            self.tracks[idx].decodes += 1;
            self.set_age(idx, t, version - v);
        }
        self.log_event(t, EventKind::EdgeActivation(edge), Some(keys));
        keys
    }

    /// Processes the next event if it falls within the horizon.
    pub fn step(&mut self) -> bool {
        match self.queue.peek_time() {
            Some(t) if t <= self.config.horizon => {}
            _ => return false,
        }
        let (t, kind) = self.queue.pop().expect("peeked");
        self.events += 1;
        match kind {
            EventKind::SourceUpdate => self.handle_source_update(t),
            EventKind::EdgeActivation(e) => {
                self.handle_edge_activation(e, t);
            }
        }
        self.schedule_next(kind, t);
        true
    }

    /// Closes every age integral at the horizon.
    pub fn finish(mut self) -> SimResult {
        let horizon = self.config.horizon;
        for idx in 0..self.tracks.len() {
            let age = self.tracks[idx].age;
            self.set_age(idx, horizon, age);
        }
        let span = self.window.1 - self.window.0;
        let confidence = self.config.confidence;
        let nodes = self
            .tracks
            .into_iter()
            .zip(&self.nodes)
            .enumerate()
            .map(|(idx, (track, state))| NodeOutcome {
                node: idx + 1,
                k: state.k,
                integral: track.integral,
                time_average: track.integral / span,
                estimate: track.acc.estimate(confidence),
                batches: track.acc,
                cycles: track.cycles,
                max_backlog: track.max_backlog,
                decodes: track.decodes,
            })
            .collect();
        SimResult {
            scheme: self.scheme,
            horizon,
            window: self.window,
            seed: self.config.seed,
            generator: GENERATOR_ID,
            nodes,
            message_sizes: self.message_sizes,
            events: self.events,
            source_updates: self.source_updates,
            event_log: self.log,
        }
    }
}

/// Simulates `scheme` on `network` with per-receiver key requirements
/// `k[j - 1]` up to `config.horizon`.
pub fn run(
    network: &Network,
    k: &[usize],
    scheme: Scheme,
    config: &SimConfig,
) -> Result<SimResult, SimError> {
    let mut sim = Simulation::new(network, k, scheme, config.clone())?;
    sim.prime();
    while sim.step() {}
    Ok(sim.finish())
}
