//! Seeded generators for randomized property checks.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::linalg::{spectral_norm, spectral_radius, Matrix, Vector};
use crate::topology::{SwitchingSignal, SwitchingTopology, WeightedDigraph};

pub fn uniform_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, bound: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..=bound))
}

pub fn uniform_vector<R: Rng>(rng: &mut R, len: usize, bound: f64) -> Vector {
    Vector::from_fn(len, |_, _| rng.random_range(-bound..=bound))
}

/// Random square matrix rescaled to spectral radius `radius`.
pub fn matrix_with_radius<R: Rng>(rng: &mut R, dim: usize, radius: f64) -> Matrix {
    loop {
        let m = uniform_matrix(rng, dim, dim, 1.0);
        let rho = spectral_radius(&m).expect("square");
        if rho > 1e-3 {
            return m * (radius / rho);
        }
    }
}

/// Random square matrix rescaled to induced 2-norm `norm`.
pub fn matrix_with_norm<R: Rng>(rng: &mut R, dim: usize, norm: f64) -> Matrix {
    let m = uniform_matrix(rng, dim, dim, 1.0);
    let n = spectral_norm(&m);
    m * (norm / n)
}

/// A switching topology that is jointly connected with window
/// `period - 1`.
///
/// Between two and four modes are each active once per period for one to
/// three steps. A random spanning tree rooted at the leader is split across
/// the modes, so only the union over a full period is guaranteed to reach
/// every follower; each mode also gets a few random extra edges. Weights
/// are drawn from `[0.5, 2]`.
pub fn jointly_connected_topology<R: Rng>(rng: &mut R, followers: usize) -> SwitchingTopology {
    jointly_connected_topology_with(rng, followers, EXTRA_EDGE_PROBABILITY)
}

/// Probability of each non-tree edge being present in a mode.
pub const EXTRA_EDGE_PROBABILITY: f64 = 0.3;

pub fn jointly_connected_topology_with<R: Rng>(rng: &mut R, followers: usize, extra_edges: f64) -> SwitchingTopology {
    let nodes = followers + 1;
    let modes = rng.random_range(2..=4);
    let mut weights = vec![Matrix::zeros(nodes, nodes); modes];
    let mut order: Vec<usize> = (1..nodes).collect();
    order.shuffle(rng);
    for (k, &node) in order.iter().enumerate() {
        // parent is the leader or a follower already in the tree
        let pick = rng.random_range(0..=k);
        let parent = if pick == 0 { 0 } else { order[pick - 1] };
        let mode = rng.random_range(0..modes);
        weights[mode][(node, parent)] = rng.random_range(0.5..=2.0);
    }
    for w in &mut weights {
        for i in 1..nodes {
            for j in 0..nodes {
                if i != j && w[(i, j)] == 0.0 && rng.random_bool(extra_edges) {
                    w[(i, j)] = rng.random_range(0.5..=2.0);
                }
            }
        }
    }
    let mut mode_order: Vec<usize> = (1..=modes).collect();
    mode_order.shuffle(rng);
    let segments: Vec<(usize, usize)> = mode_order.iter().map(|&m| (m, rng.random_range(1..=3))).collect();
    let dwell = segments.iter().map(|s| s.1).min().unwrap_or(1);
    let graphs = weights
        .into_iter()
        .map(|w| WeightedDigraph::new(w).expect("generated weights are valid"))
        .collect();
    let signal = SwitchingSignal::periodic(segments, dwell).expect("generated signal is valid");
    SwitchingTopology::new(graphs, signal).expect("generated topology is valid")
}

/// Window for which [`jointly_connected_topology`] output is connected.
pub fn connectivity_window(topo: &SwitchingTopology) -> usize {
    topo.signal().period().map_or(0, |p| p.saturating_sub(1))
}

/// Removes every in-edge of follower `node` from every graph, so that node
/// can never be reached from the leader.
pub fn isolate_follower(topo: &SwitchingTopology, node: usize) -> SwitchingTopology {
    let graphs = topo
        .graphs()
        .iter()
        .map(|g| {
            let mut w = g.weights().clone();
            w.row_mut(node).fill(0.0);
            WeightedDigraph::new(w).expect("zeroing a row keeps weights valid")
        })
        .collect();
    SwitchingTopology::new(graphs, topo.signal().clone()).expect("same signal stays valid")
}
