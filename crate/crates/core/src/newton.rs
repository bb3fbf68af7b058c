//! Reference Newton-Raphson power-flow solver with an analytic polar Jacobian.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::case::CaseData;
use crate::power::{mismatch, AdmittanceMatrix, PowerInjection, StateVector};
use crate::sparse::{dense_solve, CsrMatrix, LinalgError, SparseLu};

/// Below this many buses the Jacobian is solved densely.
pub const DENSE_BUS_LIMIT: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewtonOptions {
    /// Threshold on the residual ∞-norm.
    pub tol: f64,
    pub max_iter: usize,
    /// Start from V = setpoint / 1.0 and θ = slack angle instead of the case values.
    pub flat_start: bool,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions { tol: 1e-6, max_iter: 50, flat_start: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NewtonFailure {
    SingularJacobian { iteration: usize, detail: String },
    NonFinite { iteration: usize },
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewtonResult {
    pub state: StateVector,
    pub iterations: usize,
    pub converged: bool,
    pub final_mismatch_inf: f64,
    /// Residual ∞-norm before each iteration, followed by the final value.
    pub history: Vec<f64>,
    pub failure: Option<NewtonFailure>,
}

/// Conventional initial point: PQ magnitudes 1.0, PV and slack at their
/// setpoints, every angle at the slack reference.
pub fn flat_start(case: &CaseData) -> StateVector {
    let n = case.n_buses();
    let sets = &case.bus_sets;
    let mut vm = vec![1.0; n];
    for &i in sets.pv.iter().chain(std::iter::once(&sets.slack)) {
        vm[i] = case.voltage_setpoint(i);
    }
    StateVector { vm, va: vec![case.slack_angle(); n] }
}

/// Initial point taken from the case's stored bus voltages, with generator
/// setpoints imposed on PV and slack buses.
pub fn case_start(case: &CaseData) -> StateVector {
    let sets = &case.bus_sets;
    let mut vm: Vec<f64> = case.buses.iter().map(|b| b.vm).collect();
    let va = case.buses.iter().map(|b| b.va.to_radians()).collect();
    for &i in sets.pv.iter().chain(std::iter::once(&sets.slack)) {
        vm[i] = case.voltage_setpoint(i);
    }
    StateVector { vm, va }
}

/// Jacobian of the calculated injections with respect to the free variables.
///
/// Rows: `[P at non-slack buses; Q at PQ buses]`. Columns: `[θ at non-slack
/// buses; |V| at PQ buses]`, both in ascending bus order.
pub fn jacobian(state: &StateVector, y: &AdmittanceMatrix, case: &CaseData) -> CsrMatrix<f64> {
    let n = state.len();
    let non_slack = case.bus_sets.non_slack();
    let pq = &case.bus_sets.pq;
    let mut theta_pos = vec![None; n];
    for (k, &i) in non_slack.iter().enumerate() {
        theta_pos[i] = Some(k);
    }
    let mut vm_pos = vec![None; n];
    for (k, &j) in pq.iter().enumerate() {
        vm_pos[j] = Some(k);
    }
    let m_p = non_slack.len();
    let dim = m_p + pq.len();

    let v = state.complex_voltages();
    let current = y.y.mul_vec(&v);
    let unit: Vec<Complex64> =
        v.iter().zip(&state.vm).map(|(vi, &m)| if m != 0.0 { vi / m } else { Complex64::new(1.0, 0.0) }).collect();
    let j = Complex64::new(0.0, 1.0);

    let mut t = Vec::with_capacity(4 * y.y.nnz());
    for i in 0..n {
        let (row_p, row_q) = (theta_pos[i], vm_pos[i].map(|r| m_p + r));
        if row_p.is_none() && row_q.is_none() {
            continue;
        }
        for (k, yik) in y.y.row(i) {
            let mut ds_dva = -j * v[i] * (yik * v[k]).conj();
            let mut ds_dvm = v[i] * (yik * unit[k]).conj();
            if i == k {
                ds_dva += j * v[i] * current[i].conj();
                ds_dvm += current[i].conj() * unit[i];
            }
            if let Some(c) = theta_pos[k] {
                if let Some(r) = row_p {
                    t.push((r, c, ds_dva.re));
                }
                if let Some(r) = row_q {
                    t.push((r, c, ds_dva.im));
                }
            }
            if let Some(c) = vm_pos[k].map(|c| m_p + c) {
                if let Some(r) = row_p {
                    t.push((r, c, ds_dvm.re));
                }
                if let Some(r) = row_q {
                    t.push((r, c, ds_dvm.im));
                }
            }
        }
    }
    CsrMatrix::from_triplets(dim, dim, &t)
}

fn linear_solve(jac: &CsrMatrix<f64>, rhs: &[f64], n_buses: usize) -> Result<Vec<f64>, LinalgError> {
    if n_buses < DENSE_BUS_LIMIT {
        dense_solve(&jac.to_dense(), rhs)
    } else {
        SparseLu::factor(jac)?.solve(rhs)
    }
}

pub fn solve_newton(
    case: &CaseData,
    y: &AdmittanceMatrix,
    spec: &PowerInjection,
    opts: &NewtonOptions,
) -> NewtonResult {
    let init = if opts.flat_start { flat_start(case) } else { case_start(case) };
    solve_newton_from(case, y, spec, &init, opts)
}

/// Newton iterations from an explicit initial state.
pub fn solve_newton_from(
    case: &CaseData,
    y: &AdmittanceMatrix,
    spec: &PowerInjection,
    init: &StateVector,
    opts: &NewtonOptions,
) -> NewtonResult {
    assert!(opts.tol > 0.0 && opts.max_iter >= 1, "invalid Newton options");
    let non_slack = case.bus_sets.non_slack();
    let pq = &case.bus_sets.pq;
    let mut state = init.clone();
    let mut res = mismatch(&state, spec, case, y);
    let mut norm = res.inf_norm();
    let mut history = vec![norm];
    let mut iterations = 0;
    let mut failure = None;

    while norm > opts.tol {
        if iterations >= opts.max_iter {
            failure = Some(NewtonFailure::MaxIterations);
            break;
        }
        if !norm.is_finite() {
            failure = Some(NewtonFailure::NonFinite { iteration: iterations });
            break;
        }
        let jac = jacobian(&state, y, case);
        let dx = match linear_solve(&jac, &res.stacked(), case.n_buses()) {
            Ok(dx) => dx,
            Err(e) => {
                failure = Some(NewtonFailure::SingularJacobian { iteration: iterations, detail: e.to_string() });
                break;
            }
        };
        // Damped update: back off when a full step blows the mismatch up.
        let mut alpha = 1.0;
        let mut trial;
        let mut trial_res;
        let mut halvings = 0;
        loop {
            trial = state.clone();
            for (k, &i) in non_slack.iter().enumerate() {
                trial.va[i] += alpha * dx[k];
            }
            for (k, &jb) in pq.iter().enumerate() {
                trial.vm[jb] += alpha * dx[non_slack.len() + k];
            }
            trial_res = mismatch(&trial, spec, case, y);
            let grew = !(trial_res.inf_norm() <= 10.0 * norm);
            if !grew || halvings == 4 {
                break;
            }
            alpha *= 0.5;
            halvings += 1;
        }
        state = trial;
        res = trial_res;
        norm = res.inf_norm();
        history.push(norm);
        iterations += 1;
    }
    NewtonResult {
        state,
        iterations,
        converged: failure.is_none() && norm <= opts.tol,
        final_mismatch_inf: norm,
        history,
        failure,
    }
}
