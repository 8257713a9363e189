//! Switching digraphs over the node set `{0, 1, ..., N}`, where node 0 is
//! the leader and nodes `1..=N` are followers.
//!
//! Edge `(j, i)` means node `i` receives information from node `j`; its
//! weight is stored at entry `(i, j)` of the adjacency matrix.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{check_len, Matrix, Vector};

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedDigraph {
    weights: Matrix,
}

impl WeightedDigraph {
    /// Validates a square, finite, nonnegative weight matrix with a zero
    /// diagonal.
    pub fn new(weights: Matrix) -> Result<Self> {
        if !weights.is_square() || weights.nrows() == 0 {
            return Err(Error::Topology(format!(
                "adjacency must be a nonempty square matrix, got {}x{}",
                weights.nrows(),
                weights.ncols()
            )));
        }
        for i in 0..weights.nrows() {
            for j in 0..weights.ncols() {
                let a = weights[(i, j)];
                if !a.is_finite() || a < 0.0 {
                    return Err(Error::Topology(format!(
                        "weight a[{i}][{j}] = {a} must be finite and nonnegative"
                    )));
                }
                if i == j && a != 0.0 {
                    return Err(Error::Topology(format!(
                        "self-loop weight a[{i}][{i}] = {a} must be zero"
                    )));
                }
            }
        }
        Ok(Self { weights })
    }

    /// Graph with no edges.
    pub fn empty(node_count: usize) -> Self {
        Self {
            weights: Matrix::zeros(node_count, node_count),
        }
    }

    /// Builds a graph from `(from, to)` pairs, all with the same weight.
    pub fn from_edges(node_count: usize, edges: &[(usize, usize)], weight: f64) -> Result<Self> {
        let mut w = Matrix::zeros(node_count, node_count);
        for &(from, to) in edges {
            if from >= node_count || to >= node_count {
                return Err(Error::Topology(format!(
                    "edge ({from}, {to}) out of range for {node_count} nodes"
                )));
            }
            w[(to, from)] = weight;
        }
        Self::new(w)
    }

    pub fn node_count(&self) -> usize {
        self.weights.nrows()
    }

    pub fn follower_count(&self) -> usize {
        self.node_count() - 1
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    /// Whether `to` receives from `from`.
    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.weights[(to, from)] > 0.0
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.node_count();
        (0..n)
            .flat_map(|to| (0..n).map(move |from| (from, to)))
            .filter(|&(from, to)| self.has_edge(from, to))
            .collect()
    }

    /// Checks `e_min <= a_ij <= e_max` on every present edge.
    pub fn check_weight_bounds(&self, e_min: f64, e_max: f64) -> Result<()> {
        if !(e_min > 0.0 && e_min <= e_max) {
            return Err(Error::Topology(format!(
                "weight bounds require 0 < e_min <= e_max, got [{e_min}, {e_max}]"
            )));
        }
        for (from, to) in self.edges() {
            let a = self.weights[(to, from)];
            if a < e_min || a > e_max {
                return Err(Error::Topology(format!(
                    "edge ({from}, {to}) weight {a} outside [{e_min}, {e_max}]"
                )));
            }
        }
        Ok(())
    }

    /// Nodes reachable from the leader along directed paths (node 0 included).
    pub fn reachable_from_leader(&self) -> Vec<bool> {
        let n = self.node_count();
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(j) = queue.pop_front() {
            for i in 0..n {
                if !seen[i] && self.has_edge(j, i) {
                    seen[i] = true;
                    queue.push_back(i);
                }
            }
        }
        seen
    }
}

/// Edge-set union; the weight of a merged edge is the largest input weight.
pub fn union_digraph(graphs: &[&WeightedDigraph]) -> Result<WeightedDigraph> {
    let first = graphs
        .first()
        .ok_or_else(|| Error::Topology("union of an empty graph list".into()))?;
    let n = first.node_count();
    let mut w = Matrix::zeros(n, n);
    for g in graphs {
        if g.node_count() != n {
            return Err(Error::Dimension(format!(
                "union of graphs with {} and {} nodes",
                n,
                g.node_count()
            )));
        }
        w.zip_apply(&g.weights, |a, b| *a = a.max(b));
    }
    Ok(WeightedDigraph { weights: w })
}

/// Row-stochastic normalization of a weighted digraph.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    omega: Matrix,
    lambda: Matrix,
    leader_weights: Vector,
}

impl NormalizedAdjacency {
    /// `(N+1)x(N+1)` row-stochastic matrix.
    pub fn omega(&self) -> &Matrix {
        &self.omega
    }

    /// Follower block: last `N` rows and columns of `omega`.
    pub fn lambda(&self) -> &Matrix {
        &self.lambda
    }

    /// Leader coupling weights `omega_i0` for `i = 1..=N`.
    pub fn leader_weights(&self) -> &Vector {
        &self.leader_weights
    }

    /// Diagonal matrix of the leader coupling weights.
    pub fn delta(&self) -> Matrix {
        Matrix::from_diagonal(&self.leader_weights)
    }

    pub fn follower_count(&self) -> usize {
        self.lambda.nrows()
    }
}

pub fn normalize_adjacency(g: &WeightedDigraph) -> NormalizedAdjacency {
    let n = g.node_count();
    let mut omega = Matrix::zeros(n, n);
    for i in 0..n {
        let denom = 1.0 + g.weights.row(i).sum();
        for j in 0..n {
            omega[(i, j)] = if i == j {
                1.0 / denom
            } else {
                g.weights[(i, j)] / denom
            };
        }
    }
    let lambda = omega.view((1, 1), (n - 1, n - 1)).into_owned();
    let leader_weights = omega.view((1, 0), (n - 1, 1)).column(0).into_owned();
    NormalizedAdjacency {
        omega,
        lambda,
        leader_weights,
    }
}

/// One step of `x(t+1) = omega · x(t)`.
pub fn consensus_step(adj: &NormalizedAdjacency, x: &Vector) -> Result<Vector> {
    check_len("consensus state", x, adj.omega.nrows())?;
    Ok(&adj.omega * x)
}

/// Piecewise-constant map from time to a 1-based mode index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalSchedule {
    /// Repeats `(mode, length)` segments forever.
    Periodic { segments: Vec<(usize, usize)> },
    /// Explicit per-step modes; unlisted times use `tail`.
    Table {
        table: BTreeMap<usize, usize>,
        tail: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwitchingSignal {
    schedule: SignalSchedule,
    dwell: usize,
}

impl SwitchingSignal {
    pub fn periodic(segments: Vec<(usize, usize)>, dwell: usize) -> Result<Self> {
        if segments.is_empty() || segments.iter().any(|&(_, len)| len == 0) {
            return Err(Error::Topology(
                "periodic signal needs nonempty segments of positive length".into(),
            ));
        }
        Self::build(SignalSchedule::Periodic { segments }, dwell)
    }

    pub fn table(table: BTreeMap<usize, usize>, tail: usize, dwell: usize) -> Result<Self> {
        Self::build(SignalSchedule::Table { table, tail }, dwell)
    }

    /// A signal that never switches.
    pub fn constant(mode: usize) -> Self {
        Self {
            schedule: SignalSchedule::Periodic {
                segments: vec![(mode, 1)],
            },
            dwell: 1,
        }
    }

    fn build(schedule: SignalSchedule, dwell: usize) -> Result<Self> {
        if dwell == 0 {
            return Err(Error::Topology("dwell time must be positive".into()));
        }
        let signal = Self { schedule, dwell };
        if signal.modes().any(|m| m == 0) {
            return Err(Error::Topology("mode indices start at 1".into()));
        }
        if let Some((start, len)) = signal.short_interval() {
            return Err(Error::Topology(format!(
                "interval starting at t = {start} lasts {len} steps, shorter than dwell time {dwell}"
            )));
        }
        Ok(signal)
    }

    pub fn schedule(&self) -> &SignalSchedule {
        &self.schedule
    }

    pub fn dwell(&self) -> usize {
        self.dwell
    }

    /// Period length for periodic schedules.
    pub fn period(&self) -> Option<usize> {
        match &self.schedule {
            SignalSchedule::Periodic { segments } => Some(segments.iter().map(|s| s.1).sum()),
            SignalSchedule::Table { .. } => None,
        }
    }

    pub fn mode_at(&self, t: usize) -> usize {
        match &self.schedule {
            SignalSchedule::Periodic { segments } => {
                let period: usize = segments.iter().map(|s| s.1).sum();
                let mut phase = t % period;
                for &(mode, len) in segments {
                    if phase < len {
                        return mode;
                    }
                    phase -= len;
                }
                unreachable!("phase is below the period")
            }
            SignalSchedule::Table { table, tail } => table.get(&t).copied().unwrap_or(*tail),
        }
    }

    /// Every mode index the signal can produce.
    pub fn modes(&self) -> impl Iterator<Item = usize> + '_ {
        let (listed, tail): (Vec<usize>, Option<usize>) = match &self.schedule {
            SignalSchedule::Periodic { segments } => (segments.iter().map(|s| s.0).collect(), None),
            SignalSchedule::Table { table, tail } => (table.values().copied().collect(), Some(*tail)),
        };
        listed.into_iter().chain(tail)
    }

    /// Span of times after which the signal's behavior is fully known: two
    /// periods for periodic schedules, the table extent plus one for tables.
    fn inspection_span(&self) -> usize {
        match &self.schedule {
            SignalSchedule::Periodic { .. } => 2 * self.period().unwrap_or(1) + 1,
            SignalSchedule::Table { table, .. } => {
                table.keys().next_back().map_or(0, |&t| t + 1) + self.dwell + 1
            }
        }
    }

    /// First completed constant interval shorter than the dwell time.
    fn short_interval(&self) -> Option<(usize, usize)> {
        let span = self.inspection_span();
        let mut start = 0;
        for t in 1..span {
            if self.mode_at(t) != self.mode_at(t - 1) {
                if t - start < self.dwell {
                    return Some((start, t - start));
                }
                start = t;
            }
        }
        None
    }
}

impl PartialEq for SwitchingTopology {
    fn eq(&self, other: &Self) -> bool {
        self.graphs == other.graphs && self.signal == other.signal
    }
}

/// A finite family of digraphs selected over time by a switching signal.
#[derive(Debug, Clone)]
pub struct SwitchingTopology {
    graphs: Vec<WeightedDigraph>,
    normalized: Vec<NormalizedAdjacency>,
    signal: SwitchingSignal,
}

impl SwitchingTopology {
    pub fn new(graphs: Vec<WeightedDigraph>, signal: SwitchingSignal) -> Result<Self> {
        let first = graphs
            .first()
            .ok_or_else(|| Error::Topology("topology needs at least one graph".into()))?;
        let n = first.node_count();
        if n < 2 {
            return Err(Error::Topology(
                "topology needs the leader and at least one follower".into(),
            ));
        }
        if let Some(g) = graphs.iter().find(|g| g.node_count() != n) {
            return Err(Error::Dimension(format!(
                "graphs disagree on node count ({n} vs {})",
                g.node_count()
            )));
        }
        if let Some(m) = signal.modes().find(|&m| m > graphs.len()) {
            return Err(Error::Topology(format!(
                "signal references mode {m} but only {} graphs are defined",
                graphs.len()
            )));
        }
        let normalized = graphs.iter().map(normalize_adjacency).collect();
        Ok(Self {
            graphs,
            normalized,
            signal,
        })
    }

    /// A single graph that never switches.
    pub fn fixed(graph: WeightedDigraph) -> Result<Self> {
        Self::new(vec![graph], SwitchingSignal::constant(1))
    }

    pub fn graphs(&self) -> &[WeightedDigraph] {
        &self.graphs
    }

    pub fn signal(&self) -> &SwitchingSignal {
        &self.signal
    }

    pub fn node_count(&self) -> usize {
        self.graphs[0].node_count()
    }

    pub fn follower_count(&self) -> usize {
        self.node_count() - 1
    }

    pub fn mode_at(&self, t: usize) -> usize {
        self.signal.mode_at(t)
    }

    pub fn graph_at(&self, t: usize) -> &WeightedDigraph {
        &self.graphs[self.mode_at(t) - 1]
    }

    pub fn adjacency_at(&self, t: usize) -> &NormalizedAdjacency {
        &self.normalized[self.mode_at(t) - 1]
    }

    /// Same graphs, different signal.
    pub fn with_signal(&self, signal: SwitchingSignal) -> Result<Self> {
        Self::new(self.graphs.clone(), signal)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConnectivityWitness {
    /// Window start.
    pub t: usize,
    /// First follower not reachable from the leader in that window.
    pub node: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConnectivityReport {
    pub connected: bool,
    pub window: usize,
    /// Horizon actually inspected (capped for periodic signals).
    pub verified_horizon: usize,
    pub witness: Option<ConnectivityWitness>,
}

/// Checks that every follower is reachable from the leader in the union of
/// the graphs active over `[t, t + window]`, for every `t` in
/// `[0, horizon - window]`.
pub fn is_jointly_connected(
    topo: &SwitchingTopology,
    window: usize,
    horizon: usize,
) -> Result<ConnectivityReport> {
    if horizon < window {
        return Err(Error::Topology(format!(
            "connectivity horizon {horizon} is shorter than window {window}"
        )));
    }
    let horizon = match topo.signal.period() {
        Some(p) => horizon.min(p + window),
        None => horizon,
    };
    for t in 0..=horizon - window {
        let active: Vec<&WeightedDigraph> = (t..=t + window).map(|s| topo.graph_at(s)).collect();
        let reach = union_digraph(&active)?.reachable_from_leader();
        if let Some(node) = (1..reach.len()).find(|&i| !reach[i]) {
            return Ok(ConnectivityReport {
                connected: false,
                window,
                verified_horizon: horizon,
                witness: Some(ConnectivityWitness { t, node }),
            });
        }
    }
    Ok(ConnectivityReport {
        connected: true,
        window,
        verified_horizon: horizon,
        witness: None,
    })
}

/// Smallest window in `[0, max_window]` for which the topology is jointly
/// connected up to `horizon`.
pub fn find_connectivity_window(
    topo: &SwitchingTopology,
    max_window: usize,
    horizon: usize,
) -> Result<Option<usize>> {
    for window in 0..=max_window.min(horizon) {
        if is_jointly_connected(topo, window, horizon)?.connected {
            return Ok(Some(window));
        }
    }
    Ok(None)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProductBlock {
    FullOmega,
    Lambda,
}

/// State transition matrix `M(t-1) ··· M(t0)`; identity when `t == t0`.
pub fn transition_product(
    topo: &SwitchingTopology,
    t0: usize,
    t: usize,
    block: ProductBlock,
) -> Result<Matrix> {
    if t < t0 {
        return Err(Error::Topology(format!(
            "transition product needs t >= t0, got t = {t}, t0 = {t0}"
        )));
    }
    let dim = match block {
        ProductBlock::FullOmega => topo.node_count(),
        ProductBlock::Lambda => topo.follower_count(),
    };
    let mut product = Matrix::identity(dim, dim);
    for s in t0..t {
        let adj = topo.adjacency_at(s);
        let m = match block {
            ProductBlock::FullOmega => adj.omega(),
            ProductBlock::Lambda => adj.lambda(),
        };
        product = m * product;
    }
    Ok(product)
}

/// Four graphs over `{0, ..., 4}` with one or two unit-weight edges each.
/// No single graph reaches every follower, but every union over a full
/// period of the formation schedule does.
pub fn default_formation_graphs() -> Vec<WeightedDigraph> {
    let edge_sets: [&[(usize, usize)]; 4] = [
        &[(0, 1), (1, 2)],
        &[(2, 3)],
        &[(0, 3), (3, 4)],
        &[(4, 1), (1, 2)],
    ];
    edge_sets
        .iter()
        .map(|edges| WeightedDigraph::from_edges(5, edges, 1.0).expect("static edge sets are valid"))
        .collect()
}

/// Period 8, dwell 2: modes 1, 2, 3, 4 each active for two steps.
pub fn formation_signal() -> SwitchingSignal {
    SwitchingSignal::periodic(vec![(1, 2), (2, 2), (3, 2), (4, 2)], 2)
        .expect("static schedule is valid")
}
