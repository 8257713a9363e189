//! Built-in scenarios, addressed by stable names.

use crate::linalg::{kron, Matrix, Vector};
use crate::observers::{LeaderModel, ObserverMode};
use crate::regulation::{formation_gain, formation_plant, GainMethod, PlantModel, DEFAULT_SOLVER_TOL};
use crate::simkit::{ConnectivityCheck, FollowerSpec, Scenario, Thresholds};
use crate::topology::{default_formation_graphs, formation_signal, SwitchingTopology, WeightedDigraph};

pub const FORMATION_SEC5: &str = "formation-sec5";
pub const SINGLE_FOLLOWER: &str = "single-follower";
pub const DEFAULT_FIG2: &str = "default-fig2";

pub const BUILTINS: [(&str, &str); 3] = [
    (
        FORMATION_SEC5,
        "five-robot leader-following formation: double-integrator followers, period-8 dwell-2 schedule",
    ),
    (
        SINGLE_FOLLOWER,
        "one follower listening to the leader; observer error halves every step",
    ),
    (
        DEFAULT_FIG2,
        "formation graphs with an oscillating leader and Riccati-synthesized gains",
    ),
];

pub fn builtin(name: &str) -> Option<Scenario> {
    match name {
        FORMATION_SEC5 => Some(formation_sec5()),
        SINGLE_FOLLOWER => Some(single_follower()),
        DEFAULT_FIG2 => Some(default_fig2()),
        _ => None,
    }
}

/// Desired follower positions relative to the leader.
pub const FORMATION_OFFSETS: [(f64, f64); 4] = [(-10.0, 0.0), (0.0, -10.0), (-20.0, 0.0), (0.0, -20.0)];

/// Initial follower positions.
pub const FORMATION_POSITIONS: [(f64, f64); 4] = [(15.0, 3.0), (-10.0, 19.0), (1.0, 40.0), (30.0, -2.0)];

/// `[[1, 1], [0, 1]] kron I_2`: constant-velocity leader in the plane.
pub fn formation_leader_matrix() -> Matrix {
    kron(
        &Matrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]),
        &Matrix::identity(2, 2),
    )
}

fn formation_topology() -> SwitchingTopology {
    SwitchingTopology::new(default_formation_graphs(), formation_signal()).expect("builtin topology is valid")
}

/// Leader at the origin moving with velocity (1, 1); followers start at rest
/// at the listed positions with zero observer estimates. Follower states are
/// in offset coordinates `[x - x_d, y - y_d, w_x, w_y]`.
pub fn formation_sec5() -> Scenario {
    let leader = LeaderModel::new(formation_leader_matrix(), Vector::from_vec(vec![0.0, 0.0, 1.0, 1.0]))
        .expect("builtin leader is valid");
    let followers = FORMATION_POSITIONS
        .iter()
        .zip(FORMATION_OFFSETS.iter())
        .map(|(&(x, y), &(xd, yd))| FollowerSpec {
            plant: formation_plant(),
            x0: Vector::from_vec(vec![x - xd, y - yd, 0.0, 0.0]),
            eta0: Vector::zeros(4),
            s0: None,
            gain: GainMethod::UserSupplied(formation_gain()),
            random_components: vec![2, 3],
        })
        .collect();
    Scenario {
        name: FORMATION_SEC5.into(),
        leader,
        topology: formation_topology(),
        followers,
        observer_mode: ObserverMode::Distributed,
        // long enough for the adaptive observer, which starts from S_i = 0,
        // to also meet the default thresholds
        horizon: 400,
        solver_tol: DEFAULT_SOLVER_TOL,
        connectivity: ConnectivityCheck { window: 7, horizon: 64 },
        thresholds: Thresholds::default(),
    }
}

/// Leader `v(t+1) = v(t)` observed by one follower with `x(t+1) = x + u`
/// tracking `v`.
pub fn single_follower() -> Scenario {
    let graph = WeightedDigraph::from_edges(2, &[(0, 1)], 1.0).expect("builtin graph is valid");
    let i2 = Matrix::identity(2, 2);
    let plant = PlantModel::new(
        i2.clone(),
        i2.clone(),
        i2.clone(),
        Matrix::zeros(2, 2),
        Matrix::zeros(2, 2),
        -i2.clone(),
    )
    .expect("builtin plant is valid");
    Scenario {
        name: SINGLE_FOLLOWER.into(),
        leader: LeaderModel::new(i2.clone(), Vector::from_vec(vec![1.0, -1.0])).expect("builtin leader is valid"),
        topology: SwitchingTopology::fixed(graph).expect("builtin topology is valid"),
        followers: vec![FollowerSpec {
            plant,
            x0: Vector::from_vec(vec![3.0, 2.0]),
            eta0: Vector::zeros(2),
            s0: None,
            gain: GainMethod::UserSupplied(i2 * -0.5),
            random_components: vec![],
        }],
        observer_mode: ObserverMode::Distributed,
        horizon: 100,
        solver_tol: DEFAULT_SOLVER_TOL,
        connectivity: ConnectivityCheck { window: 0, horizon: 1 },
        thresholds: Thresholds::default(),
    }
}

/// Formation graphs driving scalar double integrators that track the first
/// component of a rotating leader.
pub fn default_fig2() -> Scenario {
    let theta = std::f64::consts::PI / 8.0;
    let s = Matrix::from_row_slice(2, 2, &[theta.cos(), -theta.sin(), theta.sin(), theta.cos()]);
    let plant = PlantModel::new(
        Matrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]),
        Matrix::from_row_slice(2, 1, &[0.0, 1.0]),
        Matrix::from_row_slice(1, 2, &[1.0, 0.0]),
        Matrix::zeros(1, 1),
        Matrix::zeros(2, 2),
        Matrix::from_row_slice(1, 2, &[-1.0, 0.0]),
    )
    .expect("builtin plant is valid");
    let followers = (0..4)
        .map(|i| FollowerSpec {
            plant: plant.clone(),
            x0: Vector::from_vec(vec![i as f64 - 1.5, 0.0]),
            eta0: Vector::zeros(2),
            s0: None,
            gain: GainMethod::default(),
            random_components: vec![1],
        })
        .collect();
    Scenario {
        name: DEFAULT_FIG2.into(),
        leader: LeaderModel::new(s, Vector::from_vec(vec![1.0, 0.0])).expect("builtin leader is valid"),
        topology: formation_topology(),
        followers,
        observer_mode: ObserverMode::Distributed,
        horizon: 300,
        solver_tol: DEFAULT_SOLVER_TOL,
        connectivity: ConnectivityCheck { window: 7, horizon: 64 },
        thresholds: Thresholds::default(),
    }
}
