//! Admittance matrix assembly and the power-flow residual machinery.
//!
//! Angles are radians everywhere in this module. The calculated injections
//! are evaluated through complex voltages (`S = V ∘ conj(Y V)`); the explicit
//! trigonometric expansion is kept as an independent cross-check.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::case::{base_injections, BaseInjections, CaseData, CaseError};
use crate::sparse::CsrMatrix;

/// Sparse nodal admittance `Y = G + jB` in internal bus order.
#[derive(Debug, Clone)]
pub struct AdmittanceMatrix {
    pub y: CsrMatrix<Complex64>,
    pub g: CsrMatrix<f64>,
    pub b: CsrMatrix<f64>,
}

impl AdmittanceMatrix {
    pub fn n(&self) -> usize {
        self.y.nrows
    }
}

/// Assemble Ybus from the standard π-model with off-nominal taps, phase
/// shifters, line charging and bus shunts.
pub fn build_ybus(case: &CaseData) -> Result<AdmittanceMatrix, CaseError> {
    let n = case.n_buses();
    let mut t: Vec<(usize, usize, Complex64)> = Vec::with_capacity(4 * case.branches.len() + n);
    let lookup = |id: i64| {
        case.bus_index(id)
            .ok_or_else(|| CaseError::Validation(format!("branch references unknown bus {id}")))
    };
    for br in case.branches.iter().filter(|b| b.status) {
        let f = lookup(br.from)?;
        let to = lookup(br.to)?;
        let ys = Complex64::new(1.0, 0.0) / Complex64::new(br.r, br.x);
        let charging = Complex64::new(0.0, br.b / 2.0);
        let tap = Complex64::from_polar(br.ratio(), br.shift.to_radians());
        t.push((f, f, (ys + charging) / tap.norm_sqr()));
        t.push((to, to, ys + charging));
        t.push((f, to, -ys / tap.conj()));
        t.push((to, f, -ys / tap));
    }
    for (i, bus) in case.buses.iter().enumerate() {
        // Always materialize the diagonal so the Jacobian pattern is complete.
        t.push((i, i, Complex64::new(bus.gs, bus.bs) / case.base_mva));
    }
    let y = CsrMatrix::from_triplets(n, n, &t);
    Ok(AdmittanceMatrix { g: y.real(), b: y.imag(), y })
}

/// Per-bus voltage magnitudes (p.u.) and angles (rad).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    pub vm: Vec<f64>,
    pub va: Vec<f64>,
}

impl StateVector {
    pub fn len(&self) -> usize {
        self.vm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vm.is_empty()
    }

    pub fn complex_voltages(&self) -> Vec<Complex64> {
        self.vm.iter().zip(&self.va).map(|(&m, &a)| Complex64::from_polar(m, a)).collect()
    }
}

/// Active and reactive injections in p.u.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerInjection {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl From<BaseInjections> for PowerInjection {
    fn from(b: BaseInjections) -> Self {
        PowerInjection { p: b.p, q: b.q }
    }
}

/// Mismatch `spec - calc` for every non-slack P and every PQ Q equation.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualVector {
    pub dp: Vec<f64>,
    pub dq: Vec<f64>,
    /// Bus index of each `dp` entry.
    pub p_buses: Vec<usize>,
    /// Bus index of each `dq` entry.
    pub q_buses: Vec<usize>,
}

impl ResidualVector {
    pub fn len(&self) -> usize {
        self.dp.len() + self.dq.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `[dP; dQ]` as one vector.
    pub fn stacked(&self) -> Vec<f64> {
        self.dp.iter().chain(&self.dq).copied().collect()
    }

    pub fn inf_norm(&self) -> f64 {
        self.dp.iter().chain(&self.dq).fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `½‖F‖²`.
    pub fn energy(&self) -> f64 {
        0.5 * self.dp.iter().chain(&self.dq).map(|v| v * v).sum::<f64>()
    }

    /// Mixed RMS norm `sqrt(mean(dP²) + mean(dQ²))`; an empty group contributes zero.
    pub fn norm(&self) -> f64 {
        let mean_sq = |v: &[f64]| {
            if v.is_empty() {
                0.0
            } else {
                v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64
            }
        };
        (mean_sq(&self.dp) + mean_sq(&self.dq)).sqrt()
    }
}

/// Load perturbation: `[ΔP_j, ΔQ_j for PQ j; ΔP_i for PV i]`, p.u.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationVector(pub Vec<f64>);

impl PerturbationVector {
    pub fn zeros(dim: usize) -> Self {
        PerturbationVector(vec![0.0; dim])
    }
}

/// Calculated injections through complex voltages: `S = V ∘ conj(Y V)`.
pub fn power_complex(state: &StateVector, y: &AdmittanceMatrix) -> PowerInjection {
    let v = state.complex_voltages();
    let current = y.y.mul_vec(&v);
    let (p, q) = v.iter().zip(&current).map(|(vi, ii)| {
        let s = vi * ii.conj();
        (s.re, s.im)
    }).unzip();
    PowerInjection { p, q }
}

/// Calculated injections by the explicit polar expansion.
pub fn power_trig(state: &StateVector, y: &AdmittanceMatrix) -> PowerInjection {
    let n = state.len();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for i in 0..n {
        let mut pi = 0.0;
        let mut qi = 0.0;
        for ((j, gij), (_, bij)) in y.g.row(i).zip(y.b.row(i)) {
            let d = state.va[i] - state.va[j];
            let (s, c) = d.sin_cos();
            pi += state.vm[j] * (gij * c + bij * s);
            qi += state.vm[j] * (gij * s - bij * c);
        }
        p[i] = state.vm[i] * pi;
        q[i] = state.vm[i] * qi;
    }
    PowerInjection { p, q }
}

/// Residual `spec - calc` given precomputed calculated injections.
pub fn residual_from_calc(calc: &PowerInjection, spec: &PowerInjection, case: &CaseData) -> ResidualVector {
    let p_buses = case.bus_sets.non_slack();
    let q_buses = case.bus_sets.pq.clone();
    ResidualVector {
        dp: p_buses.iter().map(|&i| spec.p[i] - calc.p[i]).collect(),
        dq: q_buses.iter().map(|&j| spec.q[j] - calc.q[j]).collect(),
        p_buses,
        q_buses,
    }
}

pub fn mismatch(
    state: &StateVector,
    spec: &PowerInjection,
    case: &CaseData,
    y: &AdmittanceMatrix,
) -> ResidualVector {
    residual_from_calc(&power_complex(state, y), spec, case)
}

/// Energy `½‖F(x)‖²`.
pub fn energy(state: &StateVector, spec: &PowerInjection, case: &CaseData, y: &AdmittanceMatrix) -> f64 {
    mismatch(state, spec, case, y).energy()
}

pub fn residual_norm(res: &ResidualVector) -> f64 {
    res.norm()
}

/// Shift specified injections by a load perturbation. The slack is untouched.
pub fn apply_perturbation(spec: &PowerInjection, u: &PerturbationVector, case: &CaseData) -> PowerInjection {
    let sets = &case.bus_sets;
    assert_eq!(u.0.len(), sets.input_dim(), "perturbation length does not match the case");
    let mut out = spec.clone();
    for (k, &j) in sets.pq.iter().enumerate() {
        out.p[j] += u.0[2 * k];
        out.q[j] += u.0[2 * k + 1];
    }
    let off = 2 * sets.pq.len();
    for (k, &i) in sets.pv.iter().enumerate() {
        out.p[i] += u.0[off + k];
    }
    out
}

/// Reverse-mode sensitivity of a scalar `L(P, Q)` with respect to bus
/// voltage magnitudes and angles, given `∂L/∂P` and `∂L/∂Q` at every bus.
///
/// Works on the complex form: with `c = ∂L/∂P + j ∂L/∂Q`,
/// `g = conj(c ∘ I) + Yᵀ (c ∘ conj V)` and then
/// `∂L/∂|V| = Re(g e^{jθ})`, `∂L/∂θ = -Im(g V)`.
pub fn injection_adjoint(
    voltages: &[Complex64],
    current: &[Complex64],
    y: &AdmittanceMatrix,
    dl_dp: &[f64],
    dl_dq: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let n = voltages.len();
    let c: Vec<Complex64> = dl_dp.iter().zip(dl_dq).map(|(&a, &b)| Complex64::new(a, b)).collect();
    let mut g: Vec<Complex64> = (0..n).map(|k| (c[k] * current[k]).conj()).collect();
    // Yᵀ w, accumulated row by row.
    for i in 0..n {
        let w = c[i] * voltages[i].conj();
        if w == Complex64::new(0.0, 0.0) {
            continue;
        }
        for (k, yik) in y.y.row(i) {
            g[k] += yik * w;
        }
    }
    let mut d_vm = vec![0.0; n];
    let mut d_va = vec![0.0; n];
    for k in 0..n {
        let unit = if voltages[k].norm() > 0.0 { voltages[k] / voltages[k].norm() } else { Complex64::new(1.0, 0.0) };
        d_vm[k] = (g[k] * unit).re;
        d_va[k] = -(g[k] * voltages[k]).im;
    }
    (d_vm, d_va)
}

/// Gradient of the energy over the free variables `[θ non-slack; |V| PQ]`.
pub fn energy_gradient(
    state: &StateVector,
    spec: &PowerInjection,
    case: &CaseData,
    y: &AdmittanceMatrix,
) -> Vec<f64> {
    let n = state.len();
    let v = state.complex_voltages();
    let current = y.y.mul_vec(&v);
    let calc: PowerInjection = {
        let (p, q) = v.iter().zip(&current).map(|(vi, ii)| {
            let s = vi * ii.conj();
            (s.re, s.im)
        }).unzip();
        PowerInjection { p, q }
    };
    let res = residual_from_calc(&calc, spec, case);
    // V = ½ Σ (spec - calc)², so ∂V/∂calc = -(spec - calc).
    let mut dl_dp = vec![0.0; n];
    let mut dl_dq = vec![0.0; n];
    for (&i, &r) in res.p_buses.iter().zip(&res.dp) {
        dl_dp[i] = -r;
    }
    for (&j, &r) in res.q_buses.iter().zip(&res.dq) {
        dl_dq[j] = -r;
    }
    let (d_vm, d_va) = injection_adjoint(&v, &current, y, &dl_dp, &dl_dq);
    res.p_buses.iter().map(|&i| d_va[i]).chain(res.q_buses.iter().map(|&j| d_vm[j])).collect()
}

/// Outcome of an explicit gradient-flow descent.
#[derive(Debug, Clone)]
pub struct GradientFlowResult {
    pub state: StateVector,
    pub steps: usize,
    pub converged: bool,
    pub initial_energy: f64,
    pub final_energy: f64,
    pub final_residual_norm: f64,
}

/// Explicit-Euler integration of `dx/dt = -∇V(x)` over the free variables.
///
/// A step that raises the energy is retried with half the step size (at most
/// 30 times); after an accepted step the step size may grow back toward
/// `step`. Stops once the residual norm drops below `tol`.
pub fn gradient_flow_solve(
    case: &CaseData,
    y: &AdmittanceMatrix,
    spec: &PowerInjection,
    init: &StateVector,
    step: f64,
    max_steps: usize,
    tol: f64,
) -> GradientFlowResult {
    assert!(step > 0.0, "step must be positive");
    let p_buses = case.bus_sets.non_slack();
    let q_buses = case.bus_sets.pq.clone();
    let mut state = init.clone();
    let mut res = mismatch(&state, spec, case, y);
    let initial_energy = res.energy();
    let mut h = step;
    let mut steps = 0;
    while res.norm() >= tol && steps < max_steps {
        let grad = energy_gradient(&state, spec, case, y);
        let current = res.energy();
        let mut accepted = None;
        for _ in 0..=30 {
            let mut trial = state.clone();
            for (k, &i) in p_buses.iter().enumerate() {
                trial.va[i] -= h * grad[k];
            }
            for (k, &j) in q_buses.iter().enumerate() {
                trial.vm[j] -= h * grad[p_buses.len() + k];
            }
            let trial_res = mismatch(&trial, spec, case, y);
            if trial_res.energy() <= current {
                accepted = Some((trial, trial_res));
                break;
            }
            h *= 0.5;
        }
        match accepted {
            Some((s, r)) => {
                state = s;
                res = r;
                steps += 1;
                h = (h * 2.0).min(step);
            }
            None => break,
        }
    }
    let norm = res.norm();
    GradientFlowResult {
        state,
        steps,
        converged: norm < tol,
        initial_energy,
        final_energy: res.energy(),
        final_residual_norm: norm,
    }
}

/// A case with its admittance matrix and base specified injections,
/// precomputed once and shared read-only.
#[derive(Debug, Clone)]
pub struct PowerSystem {
    pub case: CaseData,
    pub ybus: AdmittanceMatrix,
    pub base: PowerInjection,
}

impl PowerSystem {
    pub fn new(case: CaseData) -> Result<Self, CaseError> {
        let ybus = build_ybus(&case)?;
        let base = base_injections(&case).into();
        Ok(PowerSystem { case, ybus, base })
    }

    pub fn n_buses(&self) -> usize {
        self.case.n_buses()
    }

    pub fn input_dim(&self) -> usize {
        self.case.bus_sets.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.case.bus_sets.output_dim()
    }

    /// Specified injections at perturbation `u`.
    pub fn spec_at(&self, u: &PerturbationVector) -> PowerInjection {
        apply_perturbation(&self.base, u, &self.case)
    }

    pub fn mismatch(&self, state: &StateVector, spec: &PowerInjection) -> ResidualVector {
        mismatch(state, spec, &self.case, &self.ybus)
    }
}
