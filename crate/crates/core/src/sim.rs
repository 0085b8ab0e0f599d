//! Deterministic synchronous message-passing engine.
//!
//! Each round every node reads the messages sent to it in the previous
//! round, updates its state, and posts new messages; posts are delivered at
//! the next round. Nodes run one after another in id order, but since they
//! only see the previous round's messages the result equals any parallel
//! schedule.

use std::collections::{BTreeMap, VecDeque};
use std::hash::Hasher;
use std::io::{self, Write};

use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type NodeId = usize;

/// Undirected graph of communicating nodes. `labels` are stable external
/// identities used for randomness and tie-breaking, so a node behaves the
/// same inside an extracted sub-network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Network {
    adj: Vec<Vec<NodeId>>,
    labels: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NetworkError {
    #[error("edge ({0}, {1}) references a missing node")]
    OutOfRange(NodeId, NodeId),
    #[error("self loop at node {0}")]
    SelfLoop(NodeId),
}

impl Network {
    /// Network on `n` nodes labelled `0..n`; duplicate edges are merged.
    pub fn new(n: usize, edges: &[(NodeId, NodeId)]) -> Result<Self, NetworkError> {
        Self::with_labels((0..n as u64).collect(), edges)
    }

    pub fn with_labels(labels: Vec<u64>, edges: &[(NodeId, NodeId)]) -> Result<Self, NetworkError> {
        let n = labels.len();
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(NetworkError::OutOfRange(a, b));
            }
            if a == b {
                return Err(NetworkError::SelfLoop(a));
            }
            adj[a].push(b);
            adj[b].push(a);
        }
        for l in &mut adj {
            l.sort_unstable();
            l.dedup();
        }
        Ok(Self { adj, labels })
    }

    pub fn len(&self) -> usize {
        self.adj.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adj.is_empty()
    }

    pub fn neighbors(&self, v: NodeId) -> &[NodeId] {
        &self.adj[v]
    }

    pub fn label(&self, v: NodeId) -> u64 {
        self.labels[v]
    }

    pub fn labels(&self) -> &[u64] {
        &self.labels
    }

    pub fn is_adjacent(&self, a: NodeId, b: NodeId) -> bool {
        self.adj[a].binary_search(&b).is_ok()
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Hop distances from `src` (`usize::MAX` when unreachable).
    pub fn distances(&self, src: NodeId) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.len()];
        dist[src] = 0;
        let mut q = VecDeque::from([src]);
        while let Some(u) = q.pop_front() {
            for &v in &self.adj[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    q.push_back(v);
                }
            }
        }
        dist
    }

    /// Induced sub-network on nodes within `radius` hops of `center`.
    /// Returns it with the original id of each new node, in increasing
    /// original id so relative order is preserved.
    pub fn ball(&self, center: NodeId, radius: usize) -> (Network, Vec<NodeId>) {
        let dist = self.distances(center);
        let keep: Vec<NodeId> = (0..self.len()).filter(|&v| dist[v] <= radius).collect();
        let mut index = vec![usize::MAX; self.len()];
        for (k, &v) in keep.iter().enumerate() {
            index[v] = k;
        }
        let mut edges = Vec::new();
        for &v in &keep {
            for &w in &self.adj[v] {
                if v < w && index[w] != usize::MAX {
                    edges.push((index[v], index[w]));
                }
            }
        }
        let labels = keep.iter().map(|&v| self.labels[v]).collect();
        (Network::with_labels(labels, &edges).expect("sub-network is valid"), keep)
    }
}

/// Source of a node's random choices.
pub trait RandomSource {
    /// Positions the stream for `label`'s computation in `round`.
    fn begin(&mut self, label: u64, round: u64);
    fn coin(&mut self) -> bool;
    /// Uniform index in `0..n`, `n >= 1`.
    fn index(&mut self, n: usize) -> usize;
    /// Uniform in `[0, 1)`.
    fn unit(&mut self) -> f64;
}

fn mix(seed: u64, label: u64, round: u64) -> u64 {
    let mut z = seed
        ^ label.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ round.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent ChaCha stream per (seed, node label, round).
#[derive(Debug, Clone)]
pub struct SeededSource {
    seed: u64,
    rng: ChaCha8Rng,
}

impl SeededSource {
    pub fn new(seed: u64) -> Self {
        Self { seed, rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl RandomSource for SeededSource {
    fn begin(&mut self, label: u64, round: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(mix(self.seed, label, round));
    }
    fn coin(&mut self) -> bool {
        self.rng.random_bool(0.5)
    }
    fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }
    fn unit(&mut self) -> f64 {
        self.rng.random::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScriptError {
    #[error("enumeration needs more than {0} random bits")]
    BitBudget(u32),
    #[error("continuous draws cannot be enumerated")]
    Continuous,
}

/// Replays a fixed sequence of discrete choices, recording new ones as 0.
/// Driving it with [`enumerate_outcomes`] visits every outcome exactly once.
#[derive(Debug, Clone, Default)]
pub struct ScriptedSource {
    /// `(choice, arity)` per draw in order.
    script: Vec<(usize, usize)>,
    pos: usize,
    error: Option<ScriptError>,
}

impl ScriptedSource {
    fn draw(&mut self, n: usize) -> usize {
        if self.pos == self.script.len() {
            self.script.push((0, n));
        }
        let (c, arity) = self.script[self.pos];
        assert_eq!(arity, n, "scripted draw {} changed arity", self.pos);
        self.pos += 1;
        c
    }

    fn bits(&self) -> f64 {
        self.script.iter().map(|&(_, n)| (n as f64).log2()).sum()
    }

    /// Probability of the current outcome.
    pub fn probability(&self) -> Ratio<u64> {
        self.script
            .iter()
            .fold(Ratio::from_integer(1), |p, &(_, n)| p / Ratio::from_integer(n as u64))
    }

    /// Moves to the next outcome; false when all were visited.
    fn advance(&mut self) -> bool {
        self.script.truncate(self.pos);
        while let Some((c, n)) = self.script.pop() {
            if c + 1 < n {
                self.script.push((c + 1, n));
                self.pos = 0;
                return true;
            }
        }
        false
    }
}

impl RandomSource for ScriptedSource {
    fn begin(&mut self, _label: u64, _round: u64) {}
    fn coin(&mut self) -> bool {
        self.draw(2) == 1
    }
    fn index(&mut self, n: usize) -> usize {
        if n == 1 {
            return 0;
        }
        self.draw(n)
    }
    fn unit(&mut self) -> f64 {
        self.error = Some(ScriptError::Continuous);
        0.0
    }
}

/// Runs `f` once per outcome of its random choices and returns each
/// result with its exact probability. Fails if a single outcome needs more
/// than `max_bits` random bits.
pub fn enumerate_outcomes<T>(
    max_bits: u32,
    mut f: impl FnMut(&mut ScriptedSource) -> T,
) -> Result<Vec<(Ratio<u64>, T)>, ScriptError> {
    let mut src = ScriptedSource::default();
    let mut out = Vec::new();
    loop {
        src.pos = 0;
        let value = f(&mut src);
        if let Some(e) = src.error.take() {
            return Err(e);
        }
        if src.bits() > f64::from(max_bits) + 1e-9 {
            return Err(ScriptError::BitBudget(max_bits));
        }
        out.push((src.probability(), value));
        if !src.advance() {
            return Ok(out);
        }
    }
}

/// Byte count of a message, for reporting only.
pub trait WireSize {
    fn wire_size(&self) -> usize;
}

/// Per-node view of one round.
pub struct Ctx<'a, M> {
    pub node: NodeId,
    /// 1-based round number.
    pub round: u64,
    pub net: &'a Network,
    pub inbox: &'a [(NodeId, M)],
    outbox: &'a mut Vec<(NodeId, NodeId, M)>,
    pub rng: &'a mut dyn RandomSource,
}

impl<M: Clone> Ctx<'_, M> {
    pub fn label(&self) -> u64 {
        self.net.label(self.node)
    }

    pub fn neighbors(&self) -> &[NodeId] {
        self.net.neighbors(self.node)
    }

    /// Queues `msg` for neighbor `to`, delivered next round.
    pub fn send(&mut self, to: NodeId, msg: M) {
        self.outbox.push((self.node, to, msg));
    }

    pub fn broadcast(&mut self, msg: M) {
        for &w in self.net.neighbors(self.node) {
            self.outbox.push((self.node, w, msg.clone()));
        }
    }
}

/// Observable per-round totals reported by a protocol.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Counters {
    pub satisfied: usize,
    pub phi_total: f64,
    pub packed: usize,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("round {round}: node {from} sent to non-neighbor {to}")]
    NotNeighbor { round: u64, from: NodeId, to: NodeId },
    #[error("round {round}: node {node} violated a protocol invariant: {detail}")]
    Violation { round: u64, node: NodeId, detail: String },
    #[error("max_rounds must be at least 1")]
    NoRounds,
}

/// A node-local error raised by a protocol handler.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation(pub String);

/// A distributed algorithm as per-node handlers.
pub trait Protocol {
    type State;
    type Msg: Clone + WireSize;

    fn init(&self, net: &Network, node: NodeId) -> Self::State;

    fn step(&self, ctx: &mut Ctx<'_, Self::Msg>, state: &mut Self::State) -> Result<(), Violation>;

    /// Global termination test, evaluated after every round.
    fn finished(&self, states: &[Self::State]) -> bool;

    fn counters(&self, _states: &[Self::State]) -> Counters {
        Counters::default()
    }

    /// Feeds a node's state into the round digest.
    fn digest(&self, state: &Self::State, h: &mut Fnv);
}

/// 64-bit FNV-1a, stable across platforms and toolchains.
#[derive(Debug, Clone)]
pub struct Fnv(u64);

impl Default for Fnv {
    fn default() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }
}

impl Hasher for Fnv {
    fn finish(&self) -> u64 {
        self.0
    }
    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
}

impl Fnv {
    pub fn f64(&mut self, v: f64) {
        self.write_u64(v.to_bits());
    }
}

/// Per-round trace line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRow {
    pub round: u64,
    pub satisfied: usize,
    pub phi_total: f64,
    pub msgs: usize,
    pub max_msg_bytes: usize,
    pub packed: usize,
    pub digest: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundTrace {
    pub rows: Vec<RoundRow>,
}

impl RoundTrace {
    pub fn write_jsonl(&self, mut out: impl Write) -> io::Result<()> {
        for r in &self.rows {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("utf-8")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Terminated { rounds: u64 },
    Timeout { rounds: u64 },
}

impl Outcome {
    pub fn rounds(&self) -> u64 {
        match *self {
            Outcome::Terminated { rounds } | Outcome::Timeout { rounds } => rounds,
        }
    }

    pub fn terminated(&self) -> bool {
        matches!(self, Outcome::Terminated { .. })
    }
}

/// Final states plus trace of one execution.
#[derive(Debug)]
pub struct Execution<S> {
    pub outcome: Outcome,
    pub states: Vec<S>,
    pub trace: RoundTrace,
}

/// Executes `protocol` on `net` until it reports termination or
/// `max_rounds` rounds have run.
pub fn run<P: Protocol>(
    protocol: &P,
    net: &Network,
    rng: &mut dyn RandomSource,
    max_rounds: u64,
) -> Result<Execution<P::State>, SimError> {
    if max_rounds == 0 {
        return Err(SimError::NoRounds);
    }
    let n = net.len();
    let mut states: Vec<P::State> = (0..n).map(|v| protocol.init(net, v)).collect();
    let mut inboxes: Vec<Vec<(NodeId, P::Msg)>> = vec![Vec::new(); n];
    let mut trace = RoundTrace::default();
    let mut outbox = Vec::new();
    for round in 1..=max_rounds {
        outbox.clear();
        for v in 0..n {
            rng.begin(net.label(v), round);
            let mut ctx = Ctx {
                node: v,
                round,
                net,
                inbox: &inboxes[v],
                outbox: &mut outbox,
                rng: &mut *rng,
            };
            protocol
                .step(&mut ctx, &mut states[v])
                .map_err(|Violation(detail)| SimError::Violation { round, node: v, detail })?;
        }
        let mut max_bytes = 0;
        let msgs = outbox.len();
        for inbox in &mut inboxes {
            inbox.clear();
        }
        for (from, to, msg) in outbox.drain(..) {
            if to >= n || !net.is_adjacent(from, to) {
                return Err(SimError::NotNeighbor { round, from, to });
            }
            max_bytes = max_bytes.max(msg.wire_size());
            inboxes[to].push((from, msg));
        }
        let c = protocol.counters(&states);
        let mut h = Fnv::default();
        for s in &states {
            protocol.digest(s, &mut h);
        }
        trace.rows.push(RoundRow {
            round,
            satisfied: c.satisfied,
            phi_total: c.phi_total,
            msgs,
            max_msg_bytes: max_bytes,
            packed: c.packed,
            digest: format!("{:016x}", h.finish()),
        });
        if protocol.finished(&states) {
            return Ok(Execution { outcome: Outcome::Terminated { rounds: round }, states, trace });
        }
    }
    Ok(Execution { outcome: Outcome::Timeout { rounds: max_rounds }, states, trace })
}

/// Folds per-outcome values into a distribution keyed by value.
pub fn distribution<T: Ord>(outcomes: Vec<(Ratio<u64>, T)>) -> BTreeMap<T, Ratio<u64>> {
    let mut m = BTreeMap::new();
    for (p, v) in outcomes {
        *m.entry(v).or_insert_with(|| Ratio::from_integer(0)) += p;
    }
    m
}
