mod common;

use common::{load, random_state};
use gridflow::newton::{flat_start, jacobian, solve_newton, NewtonOptions};
use gridflow::power::{energy_gradient, mismatch, power_complex, power_trig, PowerInjection};
use gridflow::{parse_case, PowerSystem};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Dense admittance matrix assembled entry by entry from the branch list.
fn dense_ybus(sys: &PowerSystem) -> Vec<Vec<Complex64>> {
    let case = &sys.case;
    let n = case.n_buses();
    let mut y = vec![vec![Complex64::new(0.0, 0.0); n]; n];
    for br in &case.branches {
        let f = case.bus_index(br.from).unwrap();
        let t = case.bus_index(br.to).unwrap();
        let ys = Complex64::new(1.0, 0.0) / Complex64::new(br.r, br.x);
        let half = Complex64::new(0.0, br.b / 2.0);
        let tap = if br.tap == 0.0 { 1.0 } else { br.tap };
        let a = Complex64::from_polar(tap, br.shift.to_radians());
        y[f][f] += (ys + half) / (tap * tap);
        y[t][t] += ys + half;
        y[f][t] -= ys / a.conj();
        y[t][f] -= ys / a;
    }
    for (i, b) in case.buses.iter().enumerate() {
        y[i][i] += Complex64::new(b.gs, b.bs) / case.base_mva;
    }
    y
}

#[test]
fn ybus_matches_dense_assembly() {
    for name in ["case14.m", "case39.m", "case118.m", "case300.m"] {
        let sys = load(name);
        let dense = dense_ybus(&sys);
        let sparse = sys.ybus.y.to_dense();
        for i in 0..sys.n_buses() {
            for k in 0..sys.n_buses() {
                assert!((dense[i][k] - sparse[i][k]).norm() <= 1e-9 * (1.0 + dense[i][k].norm()), "{name} ({i},{k})");
            }
        }
    }
}

#[test]
fn complex_and_trig_forms_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for name in ["case14.m", "case39.m"] {
        let sys = load(name);
        let mut worst = 0.0f64;
        for _ in 0..1000 {
            let st = random_state(&sys, &mut rng);
            let (a, b) = (power_complex(&st, &sys.ybus), power_trig(&st, &sys.ybus));
            for k in 0..sys.n_buses() {
                worst = worst.max((a.p[k] - b.p[k]).abs()).max((a.q[k] - b.q[k]).abs());
            }
        }
        assert!(worst <= 1e-10, "{name}: {worst:e}");
    }
}

/// Calculated injections over the free variables `[θ non-slack; |V| PQ]`.
fn calc_free(sys: &PowerSystem, x: &[f64], base: &gridflow::StateVector) -> Vec<f64> {
    let sets = &sys.case.bus_sets;
    let ns = sets.non_slack();
    let mut st = base.clone();
    for (k, &i) in ns.iter().enumerate() {
        st.va[i] = x[k];
    }
    for (k, &j) in sets.pq.iter().enumerate() {
        st.vm[j] = x[ns.len() + k];
    }
    let s = power_complex(&st, &sys.ybus);
    ns.iter().map(|&i| s.p[i]).chain(sets.pq.iter().map(|&j| s.q[j])).collect()
}

fn free_vars(sys: &PowerSystem, st: &gridflow::StateVector) -> Vec<f64> {
    let sets = &sys.case.bus_sets;
    sets.non_slack().iter().map(|&i| st.va[i]).chain(sets.pq.iter().map(|&j| st.vm[j])).collect()
}

#[test]
fn jacobian_matches_central_differences() {
    let sys = load("case14.m");
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let h = 1e-6;
    for _ in 0..20 {
        let st = random_state(&sys, &mut rng);
        let jac = jacobian(&st, &sys.ybus, &sys.case).to_dense();
        let x = free_vars(&sys, &st);
        for c in 0..x.len() {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[c] += h;
            xm[c] -= h;
            let (fp, fm) = (calc_free(&sys, &xp, &st), calc_free(&sys, &xm, &st));
            for r in 0..x.len() {
                let fd = (fp[r] - fm[r]) / (2.0 * h);
                let err = gridflow::grad::relative_error(jac[r][c], fd);
                assert!(err <= 1e-5, "entry ({r},{c}): {} vs {fd}", jac[r][c]);
            }
        }
    }
}

#[test]
fn energy_gradient_lies_along_jacobian_transpose() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for name in ["case14.m", "case118.m"] {
        let sys = load(name);
        for _ in 0..5 {
            let st = random_state(&sys, &mut rng);
            let res = mismatch(&st, &sys.base, &sys.case, &sys.ybus);
            let f = res.stacked();
            let jac = jacobian(&st, &sys.ybus, &sys.case).to_dense();
            // F = spec − calc, so ∇(½‖F‖²) = −J_calcᵀ F.
            let expected: Vec<f64> =
                (0..f.len()).map(|c| -(0..f.len()).map(|r| jac[r][c] * f[r]).sum::<f64>()).collect();
            let got = energy_gradient(&st, &sys.base, &sys.case, &sys.ybus);
            let num: f64 = got.iter().zip(&expected).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let den: f64 = expected.iter().map(|b| b * b).sum::<f64>().sqrt();
            assert!(num / den <= 1e-8, "{name}: {:e}", num / den);
        }
    }
}

/// Reference solution at one bus: (bus id, |V| p.u., angle in degrees).
type BusSolution = (i64, f64, f64);

const REFERENCE: &[(&str, &[BusSolution])] = &[
    ("case14.m", &[(14, 1.03552995, -16.03364453), (8, 1.09, -13.35962737)]),
    ("case39.m", &[(1, 1.03938364, -13.5366018), (20, 0.99101054, -6.82117827), (39, 1.03, -14.53525619)]),
    ("case118.m", &[(1, 0.955, 10.97273998), (60, 0.99315625, 23.23012033), (118, 0.94943753, 21.94186663)]),
    ("case300.m", &[(1, 1.02842015, 5.96736574), (9533, 1.04051734, -18.18225614)]),
];

#[test]
fn newton_reproduces_reference_solutions() {
    let limits = [("case14.m", 10), ("case39.m", 15), ("case118.m", 15), ("case300.m", 50)];
    for ((name, buses), (_, max_iter)) in REFERENCE.iter().zip(limits) {
        let sys = load(name);
        let opts = NewtonOptions { tol: 1e-10, ..Default::default() };
        let out = solve_newton(&sys.case, &sys.ybus, &sys.base, &opts);
        assert!(out.converged, "{name}: {:?}", out.failure);
        assert!(out.iterations <= max_iter, "{name}: {} iterations", out.iterations);
        for &(id, vm, va) in *buses {
            let i = sys.case.bus_index(id).unwrap();
            assert!((out.state.vm[i] - vm).abs() < 1e-7, "{name} bus {id} |V|");
            assert!((out.state.va[i].to_degrees() - va).abs() < 1e-6, "{name} bus {id} angle");
        }
    }
}

#[test]
fn newton_extremes_on_largest_case() {
    let sys = load("case300.m");
    let out = solve_newton(&sys.case, &sys.ybus, &sys.base, &NewtonOptions { tol: 1e-10, ..Default::default() });
    let min_vm = out.state.vm.iter().copied().fold(f64::INFINITY, f64::min);
    let min_va = out.state.va.iter().copied().fold(f64::INFINITY, f64::min).to_degrees();
    assert!((min_vm - 0.928799261804196).abs() < 1e-7);
    assert!((min_va - -37.54254862965493).abs() < 1e-6);
}

#[test]
fn converged_state_matches_specified_injections() {
    let sys = load("case14.m");
    let out = solve_newton(&sys.case, &sys.ybus, &sys.base, &NewtonOptions::default());
    let calc: PowerInjection = power_complex(&out.state, &sys.ybus);
    for &i in &sys.case.bus_sets.non_slack() {
        assert!((calc.p[i] - sys.base.p[i]).abs() <= 1e-6);
    }
    assert!(out.iterations <= 10 && out.final_mismatch_inf <= 1e-6);
    assert_eq!(out.history.len(), out.iterations + 1);
    assert_eq!(flat_start(&sys.case).va, vec![0.0; 14]);
}

#[test]
fn native_json_matches_matpower_source() {
    let m = load("case39.m");
    let j = load("case39.json");
    assert_eq!((j.n_buses(), j.case.branches.len(), j.case.gens.len()), (39, 46, 10));
    assert_eq!(m.case.bus_sets, j.case.bus_sets);
    assert_eq!(m.base, j.base);
    let again = parse_case(&j.case.to_native_json()).unwrap();
    assert_eq!(again.buses, j.case.buses);
}
