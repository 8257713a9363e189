//! Distributed and adaptive distributed observers of the leader state.
//!
//! Each follower `i` keeps an estimate `eta_i` of the leader state `v`; the
//! adaptive variant also estimates the leader matrix `S` by matrix
//! consensus. Both updates are synchronous: every right-hand side reads the
//! time-`t` values of all neighbors. The leader's own entries (`eta_0 = v`,
//! `S_0 = S`) are never stored in a bank and are always read from the true
//! leader.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{fit_geometric, DecayFit};
use crate::linalg::{check_dims, check_len, kron, max_abs, spectral_radius, stack, Matrix, Vector};
use crate::topology::{NormalizedAdjacency, SwitchingTopology};

/// Spectral radius slack allowed when declaring `rho(S) <= 1`.
pub const RADIUS_SLACK: f64 = 1e-9;

/// Abort threshold on any simulated magnitude.
pub const OVERFLOW_LIMIT: f64 = 1e12;

/// Autonomous leader `v(t+1) = S v(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LeaderModel {
    s: Matrix,
    v0: Vector,
    radius: f64,
}

impl LeaderModel {
    pub fn new(s: Matrix, v0: Vector) -> Result<Self> {
        let radius = spectral_radius(&s)?;
        check_len("leader initial state", &v0, s.nrows())?;
        Ok(Self { s, v0, radius })
    }

    pub fn s(&self) -> &Matrix {
        &self.s
    }

    pub fn v0(&self) -> &Vector {
        &self.v0
    }

    pub fn dim(&self) -> usize {
        self.s.nrows()
    }

    pub fn spectral_radius(&self) -> f64 {
        self.radius
    }

    /// Whether `rho(S) <= 1` (up to [`RADIUS_SLACK`]).
    pub fn radius_at_most_one(&self) -> bool {
        self.radius <= 1.0 + RADIUS_SLACK
    }

    pub fn advance(&self, v: &Vector) -> Vector {
        &self.s * v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObserverMode {
    #[default]
    Distributed,
    Adaptive,
}

/// Per-follower estimates; `s_est` is present exactly in adaptive mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ObserverBank {
    eta: Vec<Vector>,
    s_est: Option<Vec<Matrix>>,
}

impl ObserverBank {
    pub fn distributed(eta: Vec<Vector>) -> Result<Self> {
        let bank = Self { eta, s_est: None };
        bank.validate()?;
        Ok(bank)
    }

    pub fn adaptive(eta: Vec<Vector>, s_est: Vec<Matrix>) -> Result<Self> {
        if s_est.len() != eta.len() {
            return Err(Error::Dimension(format!(
                "{} state estimates but {} matrix estimates",
                eta.len(),
                s_est.len()
            )));
        }
        let bank = Self {
            eta,
            s_est: Some(s_est),
        };
        bank.validate()?;
        Ok(bank)
    }

    fn validate(&self) -> Result<()> {
        let q = self.eta.first().map_or(0, |e| e.len());
        for (i, e) in self.eta.iter().enumerate() {
            check_len(&format!("eta_{}", i + 1), e, q)?;
        }
        if let Some(s_est) = &self.s_est {
            for (i, s) in s_est.iter().enumerate() {
                check_dims(&format!("S_{}", i + 1), s, q, q)?;
            }
        }
        Ok(())
    }

    pub fn mode(&self) -> ObserverMode {
        if self.s_est.is_some() {
            ObserverMode::Adaptive
        } else {
            ObserverMode::Distributed
        }
    }

    pub fn eta(&self) -> &[Vector] {
        &self.eta
    }

    pub fn s_est(&self) -> Option<&[Matrix]> {
        self.s_est.as_deref()
    }

    pub fn follower_count(&self) -> usize {
        self.eta.len()
    }

    fn check_against(&self, leader: &LeaderModel, v: &Vector, adj: &NormalizedAdjacency) -> Result<()> {
        if self.eta.len() != adj.follower_count() {
            return Err(Error::Dimension(format!(
                "bank has {} followers, graph has {}",
                self.eta.len(),
                adj.follower_count()
            )));
        }
        let q = leader.dim();
        check_len("leader state", v, q)?;
        if let Some(e) = self.eta.first() {
            check_len("eta_1", e, q)?;
        }
        Ok(())
    }

    fn max_magnitude(&self) -> f64 {
        let eta = self.eta.iter().map(|e| e.amax()).fold(0.0, f64::max);
        let s = self
            .s_est
            .iter()
            .flatten()
            .map(max_abs)
            .fold(0.0, f64::max);
        eta.max(s)
    }
}

/// `sum_j omega_ij (eta_j - eta_i)` over `j = 0..=N`, with `eta_0 = v`.
fn neighbor_disagreement(adj: &NormalizedAdjacency, v: &Vector, eta: &[Vector], i: usize) -> Vector {
    let omega = adj.omega();
    let row = i + 1;
    let mut acc = (v - &eta[i]) * omega[(row, 0)];
    for (j, eta_j) in eta.iter().enumerate() {
        if j != i {
            acc += (eta_j - &eta[i]) * omega[(row, j + 1)];
        }
    }
    acc
}

pub fn distributed_observer_step(
    leader: &LeaderModel,
    v: &Vector,
    bank: &ObserverBank,
    adj: &NormalizedAdjacency,
) -> Result<ObserverBank> {
    if bank.mode() != ObserverMode::Distributed {
        return Err(Error::Mode("distributed step on an adaptive bank".into()));
    }
    bank.check_against(leader, v, adj)?;
    let eta = (0..bank.eta.len())
        .map(|i| leader.s() * (&bank.eta[i] + neighbor_disagreement(adj, v, &bank.eta, i)))
        .collect();
    Ok(ObserverBank { eta, s_est: None })
}

pub fn adaptive_observer_step(
    leader: &LeaderModel,
    v: &Vector,
    bank: &ObserverBank,
    adj: &NormalizedAdjacency,
) -> Result<ObserverBank> {
    let s_est = bank
        .s_est
        .as_ref()
        .ok_or_else(|| Error::Mode("adaptive step on a distributed bank".into()))?;
    bank.check_against(leader, v, adj)?;
    let next_s = matrix_consensus_step(leader.s(), s_est, adj)?;
    // the state update uses the time-t matrix estimate
    let next_eta = (0..s_est.len())
        .map(|i| &s_est[i] * (&bank.eta[i] + neighbor_disagreement(adj, v, &bank.eta, i)))
        .collect();
    Ok(ObserverBank {
        eta: next_eta,
        s_est: Some(next_s),
    })
}

/// `S_i(t+1) = S_i + sum_j omega_ij (S_j - S_i)` with `S_0 = S`.
pub fn matrix_consensus_step(s: &Matrix, s_est: &[Matrix], adj: &NormalizedAdjacency) -> Result<Vec<Matrix>> {
    if s_est.len() != adj.follower_count() {
        return Err(Error::Dimension(format!(
            "{} matrix estimates for {} followers",
            s_est.len(),
            adj.follower_count()
        )));
    }
    let omega = adj.omega();
    Ok((0..s_est.len())
        .map(|i| {
            let row = i + 1;
            let mut drift = (s - &s_est[i]) * omega[(row, 0)];
            for (j, s_j) in s_est.iter().enumerate() {
                if j != i {
                    drift += (s_j - &s_est[i]) * omega[(row, j + 1)];
                }
            }
            &s_est[i] + drift
        })
        .collect())
}

/// `||S~(t)||_F` for `t = 0..=horizon` from the matrix estimates alone.
/// The matrix recursion never reads the leader state, so this stays finite
/// even when `rho(S) > 1`.
pub fn simulate_matrix_estimates(
    topo: &SwitchingTopology,
    s: &Matrix,
    s0: Vec<Matrix>,
    horizon: usize,
) -> Result<Vec<f64>> {
    let error_norm = |est: &[Matrix]| est.iter().map(|m| (m - s).norm_squared()).sum::<f64>().sqrt();
    let mut est = s0;
    let mut out = Vec::with_capacity(horizon + 1);
    out.push(error_norm(&est));
    for t in 0..horizon {
        est = matrix_consensus_step(s, &est, topo.adjacency_at(t))?;
        out.push(error_norm(&est));
    }
    Ok(out)
}

/// Dispatches on the bank's mode.
pub fn observer_step(
    leader: &LeaderModel,
    v: &Vector,
    bank: &ObserverBank,
    adj: &NormalizedAdjacency,
) -> Result<ObserverBank> {
    match bank.mode() {
        ObserverMode::Distributed => distributed_observer_step(leader, v, bank, adj),
        ObserverMode::Adaptive => adaptive_observer_step(leader, v, bank, adj),
    }
}

/// Stacked estimation errors relative to the leader.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorState {
    /// `col(eta_1 - v, ..., eta_N - v)`, length `N q`.
    pub eta_tilde: Vector,
    /// `col(S_1 - S, ..., S_N - S)`, shape `N q x q`.
    pub s_tilde: Option<Matrix>,
}

impl ErrorState {
    pub fn from_bank(bank: &ObserverBank, v: &Vector, leader: &LeaderModel) -> Self {
        let parts: Vec<Vector> = bank.eta.iter().map(|e| e - v).collect();
        let s_tilde = bank.s_est.as_ref().map(|s_est| {
            let q = leader.dim();
            let mut m = Matrix::zeros(q * s_est.len(), q);
            for (i, s) in s_est.iter().enumerate() {
                m.view_mut((i * q, 0), (q, q)).copy_from(&(s - leader.s()));
            }
            m
        });
        Self {
            eta_tilde: stack(&parts),
            s_tilde,
        }
    }

    pub fn mode(&self) -> ObserverMode {
        if self.s_tilde.is_some() {
            ObserverMode::Adaptive
        } else {
            ObserverMode::Distributed
        }
    }

    pub fn eta_norm(&self) -> f64 {
        self.eta_tilde.norm()
    }

    /// Frobenius norm of the stacked matrix error; zero in distributed mode.
    pub fn s_norm(&self) -> f64 {
        self.s_tilde.as_ref().map_or(0.0, |m| m.norm())
    }
}

/// The three terms of the adaptive error recursion
/// `eta~(t+1) = (gamma1 + gamma2) eta~(t) + gamma3`.
#[derive(Debug, Clone)]
pub struct AdaptiveErrorTerms {
    pub gamma1: Matrix,
    pub gamma2: Matrix,
    pub gamma3: Vector,
}

pub fn adaptive_error_terms(
    s_tilde: &Matrix,
    adj: &NormalizedAdjacency,
    leader: &LeaderModel,
    v: &Vector,
) -> Result<AdaptiveErrorTerms> {
    let q = leader.dim();
    let n = adj.follower_count();
    check_dims("stacked matrix error", s_tilde, n * q, q)?;
    check_len("leader state", v, q)?;
    let lambda = adj.lambda();
    let gamma1 = kron(lambda, leader.s());
    let shifted = lambda - Matrix::identity(n, n);
    let mut gamma2 = Matrix::zeros(n * q, n * q);
    let mut gamma3 = Vector::zeros(n * q);
    for i in 0..n {
        let block = s_tilde.view((i * q, 0), (q, q)).into_owned();
        // block diagonal part
        let mut diag = gamma2.view_mut((i * q, i * q), (q, q));
        diag += &block;
        // i-th row of (Lambda - I) kron S~_i
        let row = kron(&shifted.rows(i, 1).into_owned(), &block);
        let mut band = gamma2.view_mut((i * q, 0), (q, n * q));
        band += &row;
        gamma3.rows_mut(i * q, q).copy_from(&(&block * v));
    }
    Ok(AdaptiveErrorTerms {
        gamma1,
        gamma2,
        gamma3,
    })
}

/// One step of the compact error dynamics, computed without reference to
/// the bank update.
pub fn error_form_step(
    err: &ErrorState,
    adj: &NormalizedAdjacency,
    leader: &LeaderModel,
    v: &Vector,
    mode: ObserverMode,
) -> Result<ErrorState> {
    if err.mode() != mode {
        return Err(Error::Mode(format!(
            "error state is {:?}, requested {:?}",
            err.mode(),
            mode
        )));
    }
    let q = leader.dim();
    let n = adj.follower_count();
    check_len("stacked state error", &err.eta_tilde, n * q)?;
    match &err.s_tilde {
        None => Ok(ErrorState {
            eta_tilde: kron(adj.lambda(), leader.s()) * &err.eta_tilde,
            s_tilde: None,
        }),
        Some(s_tilde) => {
            let terms = adaptive_error_terms(s_tilde, adj, leader, v)?;
            let eta_tilde = (terms.gamma1 + terms.gamma2) * &err.eta_tilde + terms.gamma3;
            let s_next = kron(adj.lambda(), &Matrix::identity(q, q)) * s_tilde;
            Ok(ErrorState {
                eta_tilde,
                s_tilde: Some(s_next),
            })
        }
    }
}

/// Per-step error norms from an observer-only simulation.
#[derive(Debug, Clone)]
pub struct ObserverTrace {
    /// `||eta~(t)||` for `t = 0..=horizon`.
    pub eta_error: Vec<f64>,
    /// `||S~(t)||_F`; all zeros in distributed mode.
    pub s_error: Vec<f64>,
    pub final_bank: ObserverBank,
    pub final_leader: Vector,
}

/// Runs the leader and an observer bank for `horizon` steps.
pub fn simulate_observer(
    topo: &SwitchingTopology,
    leader: &LeaderModel,
    bank: ObserverBank,
    horizon: usize,
) -> Result<ObserverTrace> {
    let mut v = leader.v0().clone();
    let mut bank = bank;
    let mut eta_error = Vec::with_capacity(horizon + 1);
    let mut s_error = Vec::with_capacity(horizon + 1);
    for t in 0..=horizon {
        let err = ErrorState::from_bank(&bank, &v, leader);
        eta_error.push(err.eta_norm());
        s_error.push(err.s_norm());
        if t == horizon {
            break;
        }
        bank = observer_step(leader, &v, &bank, topo.adjacency_at(t))?;
        v = leader.advance(&v);
        let magnitude = bank.max_magnitude().max(v.amax());
        if !(magnitude <= OVERFLOW_LIMIT) {
            return Err(Error::Overflow {
                t: t + 1,
                limit: OVERFLOW_LIMIT,
            });
        }
    }
    Ok(ObserverTrace {
        eta_error,
        s_error,
        final_bank: bank,
        final_leader: v,
    })
}

/// Max absolute entry difference between `prod (Lambda_sigma(s) kron S)` and
/// `(prod Lambda_sigma(s)) kron S^t` over `s = 0..t`.
pub fn kron_factorization_check(topo: &SwitchingTopology, leader: &LeaderModel, t: usize) -> f64 {
    let n = topo.follower_count();
    let q = leader.dim();
    let mut direct = Matrix::identity(n * q, n * q);
    let mut lambda_product = Matrix::identity(n, n);
    let mut s_power = Matrix::identity(q, q);
    for step in 0..t {
        let lambda = topo.adjacency_at(step).lambda();
        direct = kron(lambda, leader.s()) * direct;
        lambda_product = lambda * lambda_product;
        s_power = leader.s() * s_power;
    }
    max_abs(&(direct - kron(&lambda_product, &s_power)))
}

/// Result of simulating `z(t+1) = C(t) z(t) + d(t)`.
#[derive(Debug, Clone)]
pub struct PerturbedRun {
    pub norms: Vec<f64>,
    pub fit: DecayFit,
}

/// Simulates a perturbed linear time-varying system and fits the geometric
/// decay rate of `||z(t)||`.
pub fn perturbed_convergence_check(
    c_seq: impl Fn(usize) -> Matrix,
    d_seq: impl Fn(usize) -> Vector,
    z0: &Vector,
    horizon: usize,
) -> Result<PerturbedRun> {
    let mut z = z0.clone();
    let mut norms = Vec::with_capacity(horizon + 1);
    norms.push(z.norm());
    for t in 0..horizon {
        let c = c_seq(t);
        let d = d_seq(t);
        check_dims("C(t)", &c, z.len(), z.len())?;
        check_len("d(t)", &d, z.len())?;
        z = c * z + d;
        norms.push(z.norm());
    }
    let fit = fit_geometric(&norms);
    Ok(PerturbedRun { norms, fit })
}
