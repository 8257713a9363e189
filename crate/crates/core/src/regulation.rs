//! Regulator equations, gain synthesis, and the distributed output
//! regulation control law `u_i = K_x x_i + K_v eta_i`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{check_dims, check_len, kron, max_abs, spectral_radius, unvectorize, vectorize, Matrix, Vector};

pub const DEFAULT_SOLVER_TOL: f64 = 1e-9;
pub const RICCATI_TOL: f64 = 1e-12;
pub const RICCATI_MAX_ITER: usize = 10_000;

/// Follower dynamics
/// `x(t+1) = A x + B u + E v`, `e = C x + D u + F v`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantModel {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    pub d: Matrix,
    pub e: Matrix,
    pub f: Matrix,
}

impl PlantModel {
    pub fn new(a: Matrix, b: Matrix, c: Matrix, d: Matrix, e: Matrix, f: Matrix) -> Result<Self> {
        let n = a.nrows();
        let m = b.ncols();
        let p = c.nrows();
        let q = e.ncols();
        check_dims("A", &a, n, n)?;
        check_dims("B", &b, n, m)?;
        check_dims("C", &c, p, n)?;
        check_dims("D", &d, p, m)?;
        check_dims("E", &e, n, q)?;
        check_dims("F", &f, p, q)?;
        Ok(Self { a, b, c, d, e, f })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn leader_dim(&self) -> usize {
        self.e.ncols()
    }

    fn check_leader(&self, s: &Matrix) -> Result<()> {
        check_dims("leader matrix S", s, self.leader_dim(), self.leader_dim())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegulatorSolution {
    pub x: Matrix,
    pub u: Matrix,
    /// Max-abs residual over both regulator equations.
    pub residual: f64,
}

/// Max-abs residual of `X S = A X + B U + E` and `0 = C X + D U + F`.
pub fn regulator_residual(plant: &PlantModel, s: &Matrix, x: &Matrix, u: &Matrix) -> f64 {
    let first = x * s - &plant.a * x - &plant.b * u - &plant.e;
    let second = &plant.c * x + &plant.d * u + &plant.f;
    max_abs(&first).max(max_abs(&second))
}

/// Solves the regulator equations as one vectorized linear system in
/// `(vec X, vec U)`. The minimum-norm least-squares solution is returned
/// when the pair is not unique.
pub fn solve_regulator_equations(plant: &PlantModel, s: &Matrix, tol: f64) -> Result<RegulatorSolution> {
    plant.check_leader(s)?;
    let (n, m, p, q) = (
        plant.state_dim(),
        plant.input_dim(),
        plant.output_dim(),
        plant.leader_dim(),
    );
    let iq = Matrix::identity(q, q);
    let unknowns = (n + m) * q;
    let equations = (n + p) * q;
    let mut system = Matrix::zeros(equations, unknowns);
    // vec(X S - A X - B U) = vec(E)
    let x_block = kron(&s.transpose(), &Matrix::identity(n, n)) - kron(&iq, &plant.a);
    system.view_mut((0, 0), (n * q, n * q)).copy_from(&x_block);
    system
        .view_mut((0, n * q), (n * q, m * q))
        .copy_from(&(-kron(&iq, &plant.b)));
    // vec(C X + D U) = -vec(F)
    system
        .view_mut((n * q, 0), (p * q, n * q))
        .copy_from(&kron(&iq, &plant.c));
    system
        .view_mut((n * q, n * q), (p * q, m * q))
        .copy_from(&kron(&iq, &plant.d));
    let mut rhs = Vector::zeros(equations);
    rhs.rows_mut(0, n * q).copy_from(&vectorize(&plant.e));
    rhs.rows_mut(n * q, p * q).copy_from(&(-vectorize(&plant.f)));

    let solution = if unknowns == 0 || equations == 0 {
        Vector::zeros(unknowns)
    } else {
        let svd = system.svd(true, true);
        let largest = svd.singular_values.iter().copied().fold(0.0, f64::max);
        let cutoff = largest * (equations.max(unknowns) as f64) * f64::EPSILON;
        svd.solve(&rhs, cutoff)
            .map_err(|e| Error::Dimension(format!("least-squares solve failed: {e}")))?
    };
    let x = unvectorize(&solution.as_slice()[..n * q], n, q);
    let u = unvectorize(&solution.as_slice()[n * q..], m, q);
    let residual = regulator_residual(plant, s, &x, &u);
    if !(residual <= tol) {
        return Err(Error::Unsolvable {
            follower: None,
            residual,
            tol,
        });
    }
    Ok(RegulatorSolution { x, u, residual })
}

#[derive(Debug, Clone, PartialEq)]
pub enum GainMethod {
    /// Discrete Riccati recursion with state and input weights
    /// (identity when absent).
    Riccati {
        state_weight: Option<Matrix>,
        input_weight: Option<Matrix>,
    },
    UserSupplied(Matrix),
}

impl Default for GainMethod {
    fn default() -> Self {
        GainMethod::Riccati {
            state_weight: None,
            input_weight: None,
        }
    }
}

/// A state-feedback gain together with its Schur certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilizingGain {
    pub k_x: Matrix,
    /// `rho(A + B K_x)`, always below one.
    pub closed_loop_radius: f64,
}

/// Checks `rho(A + B K) < 1`.
pub fn certify_gain(a: &Matrix, b: &Matrix, k: &Matrix) -> Result<StabilizingGain> {
    check_dims("A", a, a.nrows(), a.nrows())?;
    check_dims("B", b, a.nrows(), b.ncols())?;
    check_dims("K_x", k, b.ncols(), a.nrows())?;
    let radius = spectral_radius(&(a + b * k))?;
    if !(radius < 1.0) {
        return Err(Error::NotStabilizable {
            follower: None,
            reason: format!("closed-loop spectral radius {radius:.6} is not below 1"),
        });
    }
    Ok(StabilizingGain {
        k_x: k.clone(),
        closed_loop_radius: radius,
    })
}

pub fn synthesize_stabilizing_gain(a: &Matrix, b: &Matrix, method: &GainMethod) -> Result<StabilizingGain> {
    match method {
        GainMethod::UserSupplied(k) => certify_gain(a, b, k),
        GainMethod::Riccati {
            state_weight,
            input_weight,
        } => {
            let n = a.nrows();
            let m = b.ncols();
            let q = state_weight.clone().unwrap_or_else(|| Matrix::identity(n, n));
            let r = input_weight.clone().unwrap_or_else(|| Matrix::identity(m, m));
            check_dims("Riccati state weight", &q, n, n)?;
            check_dims("Riccati input weight", &r, m, m)?;
            for (name, w) in [("state", &q), ("input", &r)] {
                if w.clone().cholesky().is_none() {
                    return Err(Error::Dimension(format!(
                        "Riccati {name} weight is not positive definite"
                    )));
                }
            }
            let k = riccati_gain(a, b, &q, &r)?;
            certify_gain(a, b, &k)
        }
    }
}

/// Iterates `P <- A'PA - A'PB (R + B'PB)^-1 B'PA + Q` from `P = Q` and
/// returns `K = -(R + B'PB)^-1 B'PA`.
fn riccati_gain(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix) -> Result<Matrix> {
    let at = a.transpose();
    let bt = b.transpose();
    let mut p = q.clone();
    for _ in 0..RICCATI_MAX_ITER {
        let pb = &p * b;
        let inner = (r + &bt * &pb)
            .try_inverse()
            .ok_or_else(|| not_stabilizable("Riccati inner matrix became singular"))?;
        let next = &at * &p * a - &at * &pb * inner * &bt * &p * a + q;
        if !next.iter().all(|x| x.is_finite()) {
            return Err(not_stabilizable("Riccati recursion diverged"));
        }
        let change = max_abs(&(&next - &p));
        p = next;
        if change <= RICCATI_TOL * max_abs(&p).max(1.0) {
            let inner = (r + &bt * &p * b)
                .try_inverse()
                .ok_or_else(|| not_stabilizable("Riccati inner matrix became singular"))?;
            return Ok(-(inner * &bt * &p * a));
        }
    }
    Err(not_stabilizable(&format!(
        "Riccati recursion did not converge in {RICCATI_MAX_ITER} iterations"
    )))
}

fn not_stabilizable(reason: &str) -> Error {
    Error::NotStabilizable {
        follower: None,
        reason: reason.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerGains {
    pub k_x: Matrix,
    pub k_v: Matrix,
    pub closed_loop_radius: f64,
    pub regulator: RegulatorSolution,
}

/// Solves the regulator equations and forms `K_v = U - K_x X` for a
/// certified `K_x`.
pub fn build_controller(plant: &PlantModel, s: &Matrix, k_x: &Matrix, tol: f64) -> Result<ControllerGains> {
    let gain = certify_gain(&plant.a, &plant.b, k_x)?;
    let regulator = solve_regulator_equations(plant, s, tol)?;
    let k_v = &regulator.u - &gain.k_x * &regulator.x;
    Ok(ControllerGains {
        k_x: gain.k_x,
        k_v,
        closed_loop_radius: gain.closed_loop_radius,
        regulator,
    })
}

/// Synthesizes `K_x` by `method`, then builds the controller.
pub fn design_controller(plant: &PlantModel, s: &Matrix, method: &GainMethod, tol: f64) -> Result<ControllerGains> {
    let gain = synthesize_stabilizing_gain(&plant.a, &plant.b, method)?;
    build_controller(plant, s, &gain.k_x, tol)
}

pub fn control_input(gains: &ControllerGains, x: &Vector, eta: &Vector) -> Result<Vector> {
    check_len("follower state", x, gains.k_x.ncols())?;
    check_len("leader estimate", eta, gains.k_v.ncols())?;
    Ok(&gains.k_x * x + &gains.k_v * eta)
}

/// Returns the next state and the current regulated output.
pub fn plant_step(plant: &PlantModel, x: &Vector, u: &Vector, v: &Vector) -> Result<(Vector, Vector)> {
    check_len("follower state", x, plant.state_dim())?;
    check_len("control input", u, plant.input_dim())?;
    check_len("leader state", v, plant.leader_dim())?;
    let next = &plant.a * x + &plant.b * u + &plant.e * v;
    let output = &plant.c * x + &plant.d * u + &plant.f * v;
    Ok((next, output))
}

/// Double-integrator formation follower in offset coordinates
/// `[x - x_d, y - y_d, w_x, w_y]`, tracking the leader position.
pub fn formation_plant() -> PlantModel {
    let i2 = Matrix::identity(2, 2);
    let integrator = Matrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
    let position = Matrix::from_row_slice(1, 2, &[1.0, 0.0]);
    PlantModel::new(
        kron(&integrator, &i2),
        kron(&Matrix::from_row_slice(2, 1, &[0.0, 1.0]), &i2),
        kron(&position, &i2),
        Matrix::zeros(2, 2),
        Matrix::zeros(4, 4),
        -kron(&position, &i2),
    )
    .expect("formation plant dimensions are consistent")
}

/// `[-0.7 -1.9] kron I_2`.
pub fn formation_gain() -> Matrix {
    kron(&Matrix::from_row_slice(1, 2, &[-0.7, -1.9]), &Matrix::identity(2, 2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn double_integrator_leader() -> Matrix {
        formation_plant().a
    }

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn homogeneous_equations_have_zero_solution() {
        let mut plant = formation_plant();
        plant.f = Matrix::zeros(2, 4);
        let sol = solve_regulator_equations(&plant, &double_integrator_leader(), 1e-9).unwrap();
        assert_eq!(sol.residual, 0.0);
        assert!(max_abs(&sol.x) == 0.0 && max_abs(&sol.u) == 0.0);
    }

    #[test]
    fn formation_plant_regulator_solution() {
        // A = S, E = 0 and C + F = 0 are satisfied by X = I, U = 0
        let plant = formation_plant();
        let s = double_integrator_leader();
        assert_eq!(regulator_residual(&plant, &s, &Matrix::identity(4, 4), &Matrix::zeros(2, 4)), 0.0);
        let sol = solve_regulator_equations(&plant, &s, 1e-9).unwrap();
        assert!(max_abs(&(&sol.x - Matrix::identity(4, 4))) < 1e-12);
        assert!(max_abs(&sol.u) < 1e-12);
        assert!(sol.residual < 1e-12);
    }

    #[test]
    fn inconsistent_output_equation_is_rejected() {
        let mut plant = formation_plant();
        plant.c = Matrix::zeros(2, 4);
        let err = solve_regulator_equations(&plant, &double_integrator_leader(), 1e-9).unwrap_err();
        assert!(matches!(err, Error::Unsolvable { .. }));
        assert!(err.for_follower(3).to_string().contains("follower 3"));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let plant = formation_plant();
        assert!(matches!(
            solve_regulator_equations(&plant, &Matrix::identity(3, 3), 1e-9),
            Err(Error::Dimension(_))
        ));
        assert!(PlantModel::new(
            Matrix::identity(2, 2),
            Matrix::zeros(3, 1),
            Matrix::zeros(1, 2),
            Matrix::zeros(1, 1),
            Matrix::zeros(2, 2),
            Matrix::zeros(1, 2)
        )
        .is_err());
    }

    #[test]
    fn random_solvable_plants() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let (n, m, p, q) = (rng.random_range(1..5), rng.random_range(1..4), 1, rng.random_range(1..4));
            let s = random_matrix(&mut rng, q, q);
            let a = random_matrix(&mut rng, n, n);
            let b = random_matrix(&mut rng, n, m);
            let c = random_matrix(&mut rng, p, n);
            let d = random_matrix(&mut rng, p, m);
            let x = random_matrix(&mut rng, n, q);
            let u = random_matrix(&mut rng, m, q);
            let e = &x * &s - &a * &x - &b * &u;
            let f = -(&c * &x + &d * &u);
            let plant = PlantModel::new(a, b, c, d, e, f).unwrap();
            let sol = solve_regulator_equations(&plant, &s, 1e-9).unwrap();
            assert!(sol.residual < 1e-9);
        }
    }

    #[test]
    fn formation_gain_certifies_with_radius_half() {
        let plant = formation_plant();
        let gain = synthesize_stabilizing_gain(&plant.a, &plant.b, &GainMethod::UserSupplied(formation_gain())).unwrap();
        assert!((gain.closed_loop_radius - 0.5).abs() < 1e-9);
    }

    #[test]
    fn schur_plant_needs_no_feedback() {
        let a = Matrix::from_row_slice(2, 2, &[0.5, 1.0, 0.0, -0.3]);
        let b = Matrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let gain = synthesize_stabilizing_gain(&a, &b, &GainMethod::UserSupplied(Matrix::zeros(1, 2))).unwrap();
        assert!((gain.closed_loop_radius - 0.5).abs() < 1e-12);
    }

    #[test]
    fn uncontrollable_unstable_mode_is_rejected() {
        let a = Matrix::from_element(1, 1, 2.0);
        let b = Matrix::zeros(1, 1);
        let err = synthesize_stabilizing_gain(&a, &b, &GainMethod::default()).unwrap_err();
        assert!(matches!(err, Error::NotStabilizable { .. }));
        assert!(certify_gain(&a, &b, &Matrix::from_element(1, 1, -5.0)).is_err());
    }

    #[test]
    fn riccati_stabilizes_random_controllable_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let n = rng.random_range(1..6);
            let m = rng.random_range(1..3);
            let a = random_matrix(&mut rng, n, n) * 1.5;
            let b = random_matrix(&mut rng, n, m);
            let gain = synthesize_stabilizing_gain(&a, &b, &GainMethod::default()).unwrap();
            assert!(gain.closed_loop_radius < 1.0);
        }
        let plant = formation_plant();
        let gain = synthesize_stabilizing_gain(&plant.a, &plant.b, &GainMethod::default()).unwrap();
        assert!(gain.closed_loop_radius < 1.0);
    }

    #[test]
    fn riccati_rejects_indefinite_weights() {
        let plant = formation_plant();
        let method = GainMethod::Riccati {
            state_weight: Some(-Matrix::identity(4, 4)),
            input_weight: None,
        };
        assert!(synthesize_stabilizing_gain(&plant.a, &plant.b, &method).is_err());
    }

    #[test]
    fn formation_controller_feedforward() {
        let gains = build_controller(&formation_plant(), &double_integrator_leader(), &formation_gain(), 1e-9).unwrap();
        let expected = kron(&Matrix::from_row_slice(1, 2, &[0.7, 1.9]), &Matrix::identity(2, 2));
        assert!(max_abs(&(&gains.k_v - expected)) < 1e-12);
        let v = Vector::from_vec(vec![3.0, -1.0, 0.5, 2.0]);
        let u = control_input(&gains, &v, &v).unwrap();
        assert!(u.amax() < 1e-12);
        assert_eq!(control_input(&gains, &Vector::zeros(4), &Vector::zeros(4)).unwrap(), Vector::zeros(2));
        assert!(control_input(&gains, &Vector::zeros(3), &v).is_err());
    }

    #[test]
    fn zero_state_gain_passes_feedforward_through() {
        let plant = PlantModel::new(
            Matrix::from_element(1, 1, 0.5),
            Matrix::from_element(1, 1, 0.0),
            Matrix::from_element(1, 1, 0.0),
            Matrix::from_element(1, 1, 1.0),
            Matrix::from_element(1, 1, 0.0),
            Matrix::from_element(1, 1, -2.0),
        )
        .unwrap();
        // B = 0, E = 0: X = 0.5 X forces X = 0, and D U = -F gives U = 2
        let gains = build_controller(&plant, &Matrix::from_element(1, 1, 1.0), &Matrix::zeros(1, 1), 1e-9).unwrap();
        assert!(max_abs(&gains.regulator.x) < 1e-12);
        assert!(max_abs(&(&gains.k_v - &gains.regulator.u)) < 1e-12);
        assert!((gains.k_v[(0, 0)] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn steady_state_input_and_invariant_manifold() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let (n, m, q) = (3, 2, 2);
            let s = random_matrix(&mut rng, q, q);
            let a = random_matrix(&mut rng, n, n);
            let b = random_matrix(&mut rng, n, m);
            let c = random_matrix(&mut rng, 1, n);
            let d = random_matrix(&mut rng, 1, m);
            let x = random_matrix(&mut rng, n, q);
            let u = random_matrix(&mut rng, m, q);
            let e = &x * &s - &a * &x - &b * &u;
            let f = -(&c * &x + &d * &u);
            let plant = PlantModel::new(a, b, c, d, e, f).unwrap();
            let Ok(gain) = synthesize_stabilizing_gain(&plant.a, &plant.b, &GainMethod::default()) else {
                continue;
            };
            let gains = build_controller(&plant, &s, &gain.k_x, 1e-9).unwrap();
            let k_v_oracle = &gains.regulator.u - &gains.k_x * &gains.regulator.x;
            assert!(max_abs(&(&gains.k_v - k_v_oracle)) < 1e-12);

            let v = Vector::from_fn(q, |_, _| rng.random_range(-1.0..1.0));
            let xs = &gains.regulator.x * &v;
            let us = control_input(&gains, &xs, &v).unwrap();
            assert!((&us - &gains.regulator.u * &v).amax() < 1e-10);
            let (next, out) = plant_step(&plant, &xs, &us, &v).unwrap();
            assert!((next - &gains.regulator.x * &s * &v).amax() < 1e-10);
            assert!(out.amax() < 1e-10);
        }
    }

    #[test]
    fn error_coordinates_identity() {
        // x~ = x - X v and u~ = u - U v obey
        // x~+ = (A + B K_x) x~ + B K_v (eta - v), e = C x~ + D u~
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut checked = 0;
        while checked < 30 {
            let (n, m, q) = (rng.random_range(1..5), rng.random_range(1..3), rng.random_range(1..4));
            let s = random_matrix(&mut rng, q, q);
            let a = random_matrix(&mut rng, n, n);
            let b = random_matrix(&mut rng, n, m);
            let c = random_matrix(&mut rng, 2, n);
            let d = random_matrix(&mut rng, 2, m);
            let xs = random_matrix(&mut rng, n, q);
            let us = random_matrix(&mut rng, m, q);
            let e = &xs * &s - &a * &xs - &b * &us;
            let f = -(&c * &xs + &d * &us);
            let plant = PlantModel::new(a, b, c, d, e, f).unwrap();
            let Ok(gains) = design_controller(&plant, &s, &GainMethod::default(), 1e-9) else {
                continue;
            };
            let sol = &gains.regulator;
            let v = Vector::from_fn(q, |_, _| rng.random_range(-2.0..2.0));
            let eta = Vector::from_fn(q, |_, _| rng.random_range(-2.0..2.0));
            let x = Vector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
            let u = control_input(&gains, &x, &eta).unwrap();
            let (next, out) = plant_step(&plant, &x, &u, &v).unwrap();
            let x_err = &x - &sol.x * &v;
            let u_err = &u - &sol.u * &v;
            let next_err = next - &sol.x * (&s * &v);
            let predicted = (&plant.a + &plant.b * &gains.k_x) * &x_err + &plant.b * &gains.k_v * (&eta - &v);
            assert!((next_err - predicted).amax() < 1e-10);
            assert!((out - (&plant.c * &x_err + &plant.d * &u_err)).amax() < 1e-10);
            checked += 1;
        }
    }

    #[test]
    fn plant_step_examples() {
        let plant = formation_plant();
        let (next, out) = plant_step(&plant, &Vector::zeros(4), &Vector::zeros(2), &Vector::zeros(4)).unwrap();
        assert_eq!(next, Vector::zeros(4));
        assert_eq!(out, Vector::zeros(2));
        let x = Vector::from_vec(vec![1.0, 2.0, 0.5, -0.25]);
        let (next, _) = plant_step(&plant, &x, &Vector::zeros(2), &Vector::zeros(4)).unwrap();
        assert_eq!(next.as_slice(), &[1.5, 1.75, 0.5, -0.25]);
        assert!(plant_step(&plant, &x, &Vector::zeros(3), &Vector::zeros(4)).is_err());
    }
}
