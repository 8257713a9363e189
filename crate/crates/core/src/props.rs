//! Randomized property suites.
//!
//! Every suite draws its trials from a `ChaCha8Rng` seeded with
//! `seed + trial`, so any single trial can be replayed on its own.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::fit::{fit_geometric, DecayFit};
use crate::linalg::{kron, Matrix, Vector};
use crate::observers::{
    error_form_step, kron_factorization_check, observer_step, perturbed_convergence_check,
    simulate_matrix_estimates, simulate_observer, ErrorState, LeaderModel, ObserverBank, ObserverMode,
};
use crate::random::{
    connectivity_window, isolate_follower, jointly_connected_topology, matrix_with_norm, matrix_with_radius,
    uniform_vector,
};
use crate::topology::{consensus_step, transition_product, ProductBlock, SwitchingTopology};
use crate::{Error, Result};

pub const SUITES: [&str; 6] = ["consensus", "lemma2", "lemma3", "lemma4", "kron", "equivalence"];

/// Extra suites backing the observer convergence theorems.
pub const THEOREM_SUITES: [&str; 3] = ["theorem1", "theorem2", "theorem2-unstable"];

/// Consensus must settle within this many multiples of `N (T + 1)` steps.
pub const CONSENSUS_STEPS_PER_WINDOW: usize = 50;
pub const CONSENSUS_SPREAD: f64 = 1e-9;
pub const CONSENSUS_VECTORS: usize = 100;

pub const LEMMA2_TARGET: f64 = 1e-10;
pub const LEMMA2_MAX_STEPS: usize = 5000;
/// A fitted rate at or above this counts as "no decay".
pub const NON_DECAY_RATE: f64 = 1.0 - 1e-6;

pub const KRON_HORIZON: usize = 40;
pub const KRON_TOL: f64 = 1e-9;

pub const EQUIVALENCE_STEPS: usize = 100;
pub const EQUIVALENCE_TOL: f64 = 1e-10;

pub const THEOREM_HORIZON: usize = 500;
pub const THEOREM_FINAL: f64 = 1e-8;
pub const THEOREM_RESIDUAL: f64 = 0.1;
pub const UNSTABLE_RADIUS: f64 = 1.2;

#[derive(Debug, Clone, Serialize)]
pub struct TrialOutcome {
    pub trial: usize,
    pub seed: u64,
    pub passed: bool,
    /// The suite's headline number (deviation, spread or fitted rate).
    pub metric: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub seed: u64,
    pub trials: Vec<TrialOutcome>,
    /// Deterministic checks that ride along with the random trials.
    pub extra: Vec<TrialOutcome>,
    pub warning: Option<String>,
    pub passed: bool,
}

impl SuiteReport {
    /// Largest trial metric, or `None` for an empty suite.
    pub fn worst_metric(&self) -> Option<f64> {
        self.trials.iter().map(|t| t.metric).reduce(f64::max)
    }

    pub fn failures(&self) -> usize {
        self.trials.iter().chain(&self.extra).filter(|t| !t.passed).count()
    }
}

type TrialFn = fn(&mut ChaCha8Rng) -> Result<(bool, f64, String)>;

pub fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add(trial as u64))
}

pub fn run_suite(name: &str, trials: usize, seed: u64) -> Result<SuiteReport> {
    let trial_fn: TrialFn = match name {
        "consensus" => consensus_trial,
        "lemma2" => lemma2_trial,
        "lemma3" => lemma3_trial,
        "lemma4" => lemma4_trial,
        "kron" => kron_trial,
        "equivalence" => equivalence_trial,
        "theorem1" => theorem1_trial,
        "theorem2" => theorem2_trial,
        "theorem2-unstable" => theorem2_unstable_trial,
        other => {
            return Err(Error::Scenario(format!(
                "unknown suite `{other}`; expected one of {}",
                SUITES.iter().chain(&THEOREM_SUITES).copied().collect::<Vec<_>>().join(", ")
            )))
        }
    };
    let outcomes = run_trials(trials, seed, trial_fn);
    let mut extra = Vec::new();
    if name == "lemma2" && trials > 0 {
        extra.push(lemma2_witness(seed)?);
    }
    let warning = (trials == 0).then(|| format!("suite `{name}` ran zero trials; the pass is vacuous"));
    let passed = outcomes.iter().chain(&extra).all(|t| t.passed);
    Ok(SuiteReport {
        suite: name.to_string(),
        seed,
        trials: outcomes,
        extra,
        warning,
        passed,
    })
}

/// Runs trials on scoped threads; results come back in trial order and do
/// not depend on scheduling.
fn run_trials(
    trials: usize,
    seed: u64,
    trial_fn: TrialFn,
) -> Vec<TrialOutcome> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(trials.max(1));
    let mut slots: Vec<Option<TrialOutcome>> = vec![None; trials];
    std::thread::scope(|scope| {
        for (w, chunk) in slots.chunks_mut(trials.div_ceil(workers).max(1)).enumerate() {
            let first = w * trials.div_ceil(workers).max(1);
            scope.spawn(move || {
                for (k, slot) in chunk.iter_mut().enumerate() {
                    let trial = first + k;
                    let mut rng = trial_rng(seed, trial);
                    let (passed, metric, detail) = match trial_fn(&mut rng) {
                        Ok(r) => r,
                        Err(e) => (false, f64::NAN, format!("error: {e}")),
                    };
                    *slot = Some(TrialOutcome {
                        trial,
                        seed: seed.wrapping_add(trial as u64),
                        passed,
                        metric,
                        detail,
                    });
                }
            });
        }
    });
    slots.into_iter().map(|s| s.expect("every trial ran")).collect()
}

/// A random observer problem: `N` in `[2, 6]`, `q` in `[2, 4]`, a jointly
/// connected periodic schedule and random initial estimates.
#[derive(Debug, Clone)]
pub struct ObserverInstance {
    pub topology: SwitchingTopology,
    pub leader: LeaderModel,
    pub eta0: Vec<Vector>,
}

pub fn random_observer_instance<R: Rng>(rng: &mut R, radius: f64) -> ObserverInstance {
    let n = rng.random_range(2..=6);
    let q = rng.random_range(2..=4);
    let topology = jointly_connected_topology(rng, n);
    let s = matrix_with_radius(rng, q, radius);
    let leader = LeaderModel::new(s, uniform_vector(rng, q, 1.0)).expect("square leader");
    let eta0 = (0..n).map(|_| uniform_vector(rng, q, 1.0)).collect();
    ObserverInstance {
        topology,
        leader,
        eta0,
    }
}

/// Leader radius for the stable observer family, drawn from `[0.9, 1]`,
/// close to the marginal case where the leader neither grows nor decays.
fn stable_radius<R: Rng>(rng: &mut R) -> f64 {
    rng.random_range(0.9..=1.0)
}

fn describe_fit(fit: &DecayFit) -> String {
    match fit {
        DecayFit::Fitted { rate, residual, samples, .. } => {
            format!("rate {rate:.6} residual {residual:.4} over {samples} samples")
        }
        DecayFit::Floor => "collapsed to the floor".to_string(),
    }
}

fn consensus_trial(rng: &mut ChaCha8Rng) -> Result<(bool, f64, String)> {
    let n = rng.random_range(2..=6);
    let topo = jointly_connected_topology(rng, n);
    let window = connectivity_window(&topo);
    let horizon = CONSENSUS_STEPS_PER_WINDOW * n * (window + 1);
    let mut worst: f64 = 0.0;
    let mut expanded = false;
    for _ in 0..CONSENSUS_VECTORS {
        let mut x = uniform_vector(rng, n + 1, 10.0);
        for t in 0..horizon {
            let (lo, hi) = (x.min(), x.max());
            x = consensus_step(topo.adjacency_at(t), &x)?;
            // row-stochastic steps never widen the hull
            expanded |= x.min() < lo - 1e-12 || x.max() > hi + 1e-12;
        }
        worst = worst.max(x.max() - x.min());
    }
    let passed = worst < CONSENSUS_SPREAD && !expanded;
    let detail = format!(
        "N = {n}, T = {window}, {horizon} steps: spread {worst:.3e}{}",
        if expanded { ", hull expanded" } else { "" }
    );
    Ok((passed, worst, detail))
}

/// `||Phi_Lambda(k, 0)||_2` until it drops below `target` or `max_steps`.
pub fn lambda_product_norms(topo: &SwitchingTopology, target: f64, max_steps: usize) -> Vec<f64> {
    let n = topo.follower_count();
    let mut product = Matrix::identity(n, n);
    let mut norms = vec![crate::linalg::spectral_norm(&product)];
    for k in 0..max_steps {
        product = topo.adjacency_at(k).lambda() * product;
        let norm = crate::linalg::spectral_norm(&product);
        norms.push(norm);
        if norm < target {
            break;
        }
    }
    norms
}

fn lemma2_trial(rng: &mut ChaCha8Rng) -> Result<(bool, f64, String)> {
    let n = rng.random_range(2..=6);
    let topo = jointly_connected_topology(rng, n);
    let norms = lambda_product_norms(&topo, LEMMA2_TARGET, LEMMA2_MAX_STEPS);
    let fit = fit_geometric(&norms);
    let rate = fit.rate();
    Ok((rate < 1.0, rate, format!("N = {n}, {} steps: {}", norms.len() - 1, describe_fit(&fit))))
}

/// Lemma 2 on a schedule where one follower never hears anyone: the
/// product keeps a unit row, so no decay may be fitted.
pub fn lemma2_witness(seed: u64) -> Result<TrialOutcome> {
    let mut rng = trial_rng(seed, usize::MAX);
    let n = rng.random_range(2..=6);
    let node = rng.random_range(1..=n);
    let topo = isolate_follower(&jointly_connected_topology(&mut rng, n), node);
    // long enough for the surviving rows to settle at their limit
    let steps = LEMMA2_MAX_STEPS;
    let product = transition_product(&topo, 0, steps, ProductBlock::Lambda)?;
    let norms = lambda_product_norms(&topo, 0.0, steps);
    debug_assert!((crate::linalg::spectral_norm(&product) - norms[steps]).abs() < 1e-9);
    let fit = fit_geometric(&norms);
    let rate = if fit.is_floor() { 0.0 } else { fit.rate() };
    Ok(TrialOutcome {
        trial: usize::MAX,
        seed,
        passed: rate >= NON_DECAY_RATE,
        metric: rate,
        detail: format!("non-decay witness, follower {node} isolated: {}", describe_fit(&fit)),
    })
}

fn lemma3_trial(rng: &mut ChaCha8Rng) -> Result<(bool, f64, String)> {
    let inst = random_observer_instance(rng, 1.0);
    let radius = stable_radius(rng);
    let leader = LeaderModel::new(inst.leader.s() * (radius / inst.leader.spectral_radius()), inst.leader.v0().clone())?;
    let q = leader.dim();
    let mut err = ErrorState {
        eta_tilde: uniform_vector(rng, inst.topology.follower_count() * q, 1.0),
        s_tilde: None,
    };
    let mut norms = vec![err.eta_norm()];
    // stop well above the floor so the fit sees the decay itself
    for t in 0..LEMMA2_MAX_STEPS {
        err = error_form_step(&err, inst.topology.adjacency_at(t), &leader, leader.v0(), ObserverMode::Distributed)?;
        norms.push(err.eta_norm());
        if norms[t + 1] < LEMMA2_TARGET {
            break;
        }
    }
    let fit = fit_geometric(&norms);
    Ok((fit.rate() < 1.0, fit.rate(), format!("rho(S) = {radius:.3}: {}", describe_fit(&fit))))
}

fn lemma4_trial(rng: &mut ChaCha8Rng) -> Result<(bool, f64, String)> {
    let inst = random_observer_instance(rng, 1.0);
    let leader = &inst.leader;
    let n = inst.topology.follower_count();
    let dim = n * leader.dim();
    let decay: f64 = rng.random_range(0.8..0.95);
    let forcing: Vec<Vector> = (0..THEOREM_HORIZON)
        .map(|t| uniform_vector(rng, dim, 1.0) * decay.powi(t as i32))
        .collect();
    let z0 = uniform_vector(rng, dim, 1.0);
    let topo = &inst.topology;
    let run = perturbed_convergence_check(
        |t| kron(topo.adjacency_at(t).lambda(), leader.s()),
        |t| forcing[t].clone(),
        &z0,
        THEOREM_HORIZON,
    )?;
    Ok((
        run.fit.rate() < 1.0,
        run.fit.rate(),
        format!("forcing decays like {decay:.3}^t: {}", describe_fit(&run.fit)),
    ))
}

fn kron_trial(rng: &mut ChaCha8Rng) -> Result<(bool, f64, String)> {
    let n = rng.random_range(2..=6);
    let q = rng.random_range(2..=4);
    let topo = jointly_connected_topology(rng, n);
    let norm = rng.random_range(0.5..=1.0);
    let leader = LeaderModel::new(matrix_with_norm(rng, q, norm), Vector::zeros(q))?;
    let deviation = kron_factorization_check(&topo, &leader, KRON_HORIZON);
    Ok((
        deviation < KRON_TOL,
        deviation,
        format!("N = {n}, q = {q}, ||S|| = {norm:.3}: deviation {deviation:.3e}"),
    ))
}

/// Max-abs gap between the bank simulation (minus the leader) and the
/// compact error recursion, for one mode.
pub fn equivalence_gap(inst: &ObserverInstance, s0: Option<Vec<Matrix>>, steps: usize) -> Result<f64> {
    let leader = &inst.leader;
    let mut bank = match s0 {
        None => ObserverBank::distributed(inst.eta0.clone())?,
        Some(s0) => ObserverBank::adaptive(inst.eta0.clone(), s0)?,
    };
    let mode = bank.mode();
    let mut v = leader.v0().clone();
    let mut err = ErrorState::from_bank(&bank, &v, leader);
    let mut worst: f64 = 0.0;
    for t in 0..steps {
        let adj = inst.topology.adjacency_at(t);
        err = error_form_step(&err, adj, leader, &v, mode)?;
        bank = observer_step(leader, &v, &bank, adj)?;
        v = leader.advance(&v);
        let direct = ErrorState::from_bank(&bank, &v, leader);
        worst = worst.max((&direct.eta_tilde - &err.eta_tilde).amax());
        if let (Some(a), Some(b)) = (&direct.s_tilde, &err.s_tilde) {
            worst = worst.max((a - b).amax());
        }
    }
    Ok(worst)
}

fn equivalence_trial(rng: &mut ChaCha8Rng) -> Result<(bool, f64, String)> {
    let radius = stable_radius(rng);
    let inst = random_observer_instance(rng, radius);
    let q = inst.leader.dim();
    let s0: Vec<Matrix> = (0..inst.eta0.len())
        .map(|_| crate::random::uniform_matrix(rng, q, q, 1.0))
        .collect();
    let distributed = equivalence_gap(&inst, None, EQUIVALENCE_STEPS)?;
    let adaptive = equivalence_gap(&inst, Some(s0), EQUIVALENCE_STEPS)?;
    let worst = distributed.max(adaptive);
    Ok((
        worst < EQUIVALENCE_TOL,
        worst,
        format!("distributed gap {distributed:.3e}, adaptive gap {adaptive:.3e}"),
    ))
}

fn theorem1_trial(rng: &mut ChaCha8Rng) -> Result<(bool, f64, String)> {
    let radius = stable_radius(rng);
    let inst = random_observer_instance(rng, radius);
    let bank = ObserverBank::distributed(inst.eta0.clone())?;
    let trace = simulate_observer(&inst.topology, &inst.leader, bank, THEOREM_HORIZON)?;
    let fit = fit_geometric(&trace.eta_error);
    let last = trace.eta_error[THEOREM_HORIZON];
    let passed = fit.rate() < 1.0 && fit.residual() < THEOREM_RESIDUAL && last < THEOREM_FINAL;
    Ok((
        passed,
        fit.rate(),
        format!("rho(S) = {radius:.3}: {}, final {last:.3e}", describe_fit(&fit)),
    ))
}

fn theorem2_trial(rng: &mut ChaCha8Rng) -> Result<(bool, f64, String)> {
    let radius = stable_radius(rng);
    let inst = random_observer_instance(rng, radius);
    let q = inst.leader.dim();
    let bank = ObserverBank::adaptive(inst.eta0.clone(), vec![Matrix::zeros(q, q); inst.eta0.len()])?;
    let trace = simulate_observer(&inst.topology, &inst.leader, bank, THEOREM_HORIZON)?;
    let eta_fit = fit_geometric(&trace.eta_error);
    let s_fit = fit_geometric(&trace.s_error);
    let eta_last = trace.eta_error[THEOREM_HORIZON];
    let s_last = trace.s_error[THEOREM_HORIZON];
    let passed = eta_fit.rate() < 1.0 && s_fit.rate() < 1.0 && eta_last < THEOREM_FINAL && s_last < THEOREM_FINAL;
    Ok((
        passed,
        eta_fit.rate().max(s_fit.rate()),
        format!(
            "rho(S) = {radius:.3}: eta {} final {eta_last:.3e}; S {} final {s_last:.3e}",
            describe_fit(&eta_fit),
            describe_fit(&s_fit)
        ),
    ))
}

/// Matrix estimates only: with `rho(S) > 1` the state estimates may grow
/// without bound, but `S~` must still vanish.
fn theorem2_unstable_trial(rng: &mut ChaCha8Rng) -> Result<(bool, f64, String)> {
    let inst = random_observer_instance(rng, UNSTABLE_RADIUS);
    let q = inst.leader.dim();
    let s0 = vec![Matrix::zeros(q, q); inst.eta0.len()];
    let norms = simulate_matrix_estimates(&inst.topology, inst.leader.s(), s0, THEOREM_HORIZON)?;
    let fit = fit_geometric(&norms);
    let last = norms[THEOREM_HORIZON];
    Ok((
        fit.rate() < 1.0 && last < THEOREM_FINAL,
        last,
        format!("rho(S) = {UNSTABLE_RADIUS}: S {}, final {last:.3e}", describe_fit(&fit)),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_trials_is_a_vacuous_pass() {
        let r = run_suite("consensus", 0, 7).unwrap();
        assert!(r.passed);
        assert!(r.warning.is_some());
        assert!(r.worst_metric().is_none());
    }

    #[test]
    fn unknown_suite_is_rejected() {
        let err = run_suite("lemma9", 1, 0).unwrap_err().to_string();
        assert!(err.contains("lemma9") && err.contains("kron"));
    }

    #[test]
    fn trials_are_reproducible_one_at_a_time() {
        let all = run_suite("kron", 4, 11).unwrap();
        let third = run_suite("kron", 1, 13).unwrap();
        assert_eq!(all.trials[2].metric.to_bits(), third.trials[0].metric.to_bits());
        assert_eq!(all.trials[2].seed, 13);
    }

    #[test]
    fn small_suites_pass() {
        for name in SUITES {
            let r = run_suite(name, 3, 100).unwrap();
            assert!(r.passed, "{name}: {:?}", r.trials);
        }
    }

    #[test]
    fn isolated_follower_is_a_non_decay_witness() {
        let w = lemma2_witness(5).unwrap();
        assert!(w.passed, "{}", w.detail);
        assert!((w.metric - 1.0).abs() < 1e-6, "{}", w.metric);
    }

    #[test]
    fn kron_relative_deviation_stays_small_for_larger_norms() {
        // with ||S|| up to 2 the entries reach 2^100, so only the deviation
        // relative to the entry scale is meaningful
        let mut rng = trial_rng(3, 0);
        for _ in 0..5 {
            let n = rng.random_range(2..=4);
            let topo = jointly_connected_topology(&mut rng, n);
            let q = rng.random_range(2..=3);
            let s = matrix_with_norm(&mut rng, q, 2.0);
            let leader = LeaderModel::new(s.clone(), Vector::zeros(q)).unwrap();
            let lambda = transition_product(&topo, 0, 100, ProductBlock::Lambda).unwrap();
            let scale = crate::linalg::max_abs(&kron(&lambda, &s.pow(100))).max(1.0);
            let deviation = kron_factorization_check(&topo, &leader, 100);
            assert!(deviation / scale < 1e-9, "{deviation} vs scale {scale}");
        }
    }
}
