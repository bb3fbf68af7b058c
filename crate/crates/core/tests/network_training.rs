mod common;

use common::load;
use gridflow::eval::{
    evaluate, export_figure_data, read_comparison_csv, read_trajectory_csv, EvalOptions, FigureMeta, NewtonOracle,
};
use gridflow::grad::{finite_difference_check, loss, loss_and_gradient, LossOptions};
use gridflow::network::{auto_config, init_network, softplus, stack_inputs, ArchOverrides, Checkpoint, NeuralSolver};
use gridflow::newton::NewtonOptions;
use gridflow::sampling::{sobol_batch, Stage};
use gridflow::train::{
    cosine_lr, train, train_with, Schedule, StepInfo, TrainObserver, TrainingConfig, TrajectoryLog,
};
use gridflow::PerturbationVector;

fn default_net(name: &str, seed: u64) -> (gridflow::PowerSystem, gridflow::NetworkParams) {
    let sys = load(name);
    let spec = auto_config(&sys.case.bus_sets, &ArchOverrides::default()).unwrap();
    let p = init_network(&spec, seed);
    (sys, p)
}

#[test]
fn ieee14_sizing_and_layout() {
    let (sys, p) = default_net("case14.m", 0);
    let s = &p.spec;
    assert_eq!((s.d_in, s.d_out, s.d_hidden, s.layers, s.use_layernorm), (22, 22, 256, 5, false));
    let bias = &p.layers.last().unwrap().bias;
    assert_eq!(bias.iter().filter(|&&b| b == 1.0).count(), 9);
    assert_eq!(bias.iter().filter(|&&b| b == 0.0).count(), 13);
    assert_eq!(sys.case.bus_sets.pv.len(), 4);
}

#[test]
fn wide_deep_parameter_counts() {
    let sys = load("case118.m");
    let o = ArchOverrides { d_hidden: Some(512), layers: Some(8), use_layernorm: Some(false), ..Default::default() };
    let spec = auto_config(&sys.case.bus_sets, &o).unwrap();
    assert_eq!(spec.d_in, 181);
    assert_eq!(init_network(&spec, 0).num_params(), 1_761_973);
}

#[test]
fn decoded_voltages_at_initialization() {
    // With zero hidden biases every hidden unit is tanh(0) at u = 0, so the
    // output equals the output bias and every PQ magnitude is softplus(1) + 0.5.
    let sys = load("case14.m");
    let spec = auto_config(&sys.case.bus_sets, &ArchOverrides::default()).unwrap();
    let expected = softplus(1.0) + 0.5;
    let u0 = PerturbationVector::zeros(spec.d_in);
    for seed in 0..100 {
        let p = init_network(&spec, seed);
        let st = NeuralSolver { params: &p, case: &sys.case }.predict(&u0).unwrap();
        for &j in &sys.case.bus_sets.pq {
            assert!((st.vm[j] - expected).abs() < 1e-12);
        }
    }
    assert!((expected - 1.8132616875182228).abs() < 1e-15);
}

#[test]
fn forward_is_bounded_and_batch_consistent() {
    let (_, p) = default_net("case14.m", 0);
    let z = p.forward(&PerturbationVector::zeros(22)).unwrap();
    assert!(z.iter().all(|v| v.is_finite() && v.abs() < 10.0));

    let batch = sobol_batch(22, 9, 3, 0.1).unwrap();
    let zb = p.forward_batch(&stack_inputs(&batch, 22)).unwrap();
    for (k, u) in batch.iter().enumerate() {
        assert_eq!(zb.row(k).to_vec(), p.forward(u).unwrap());
    }
    assert!(p.forward(&PerturbationVector::zeros(21)).is_err());
}

#[test]
fn gradient_matches_finite_differences_on_ieee14() {
    let batch = sobol_batch(22, 8, 1, 0.1).unwrap();
    let mut coarse = Vec::new();
    for seed in 0..3 {
        let (sys, p) = default_net("case14.m", seed);
        let fine = finite_difference_check(&p, &batch, &sys, 1e-5, 200, seed).unwrap();
        assert!(fine.max_rel_error <= 1e-4, "seed {seed}: {:e}", fine.max_rel_error);
        let rough = finite_difference_check(&p, &batch, &sys, 1e-1, 200, seed).unwrap();
        assert!(rough.max_rel_error > 100.0 * fine.max_rel_error);
        coarse.push(rough.max_rel_error);
    }
    assert!(coarse.iter().copied().fold(0.0, f64::max) > 1e-2, "{coarse:?}");
}

#[test]
fn deep_normalized_network_gradient() {
    let sys = load("case39.m");
    let o = ArchOverrides { layers: Some(7), ..Default::default() };
    let p = init_network(&auto_config(&sys.case.bus_sets, &o).unwrap(), 5);
    assert!(p.spec.use_layernorm);
    // Points away from u = 0: there every hidden row is constant, normalization
    // runs at 1/sqrt(eps), and the loss has features narrower than h.
    let batch = sobol_batch(sys.input_dim(), 4, 2, 0.1).unwrap();
    let rep = finite_difference_check(&p, &batch, &sys, 1e-5, 100, 5).unwrap();
    assert!(rep.max_rel_error <= 1e-4, "{:e}", rep.max_rel_error);
}

#[test]
fn hand_computed_loss_on_single_sample() {
    let (sys, p) = default_net("case14.m", 2);
    let u = sobol_batch(22, 1, 5, 0.1).unwrap();
    let st = NeuralSolver { params: &p, case: &sys.case }.predict(&u[0]).unwrap();
    // Trig-form residual as the oracle.
    let calc = gridflow::power::power_trig(&st, &sys.ybus);
    let target = sys.spec_at(&u[0]);
    let sets = &sys.case.bus_sets;
    let expected: f64 = sets.non_slack().iter().map(|&i| (target.p[i] - calc.p[i]).powi(2)).sum::<f64>()
        + sets.pq.iter().map(|&j| (target.q[j] - calc.q[j]).powi(2)).sum::<f64>();
    let got = loss(&p, &u, &sys, &LossOptions::default()).unwrap();
    assert!((got - expected).abs() <= 1e-10 * expected);
}

#[test]
fn output_layer_gradient_scales_with_residual() {
    // Single-sample chain rule check: with p_weight = 2 the active-power terms
    // double, so the loss gradient on a PQ-free case doubles exactly.
    use gridflow::case::{Branch, Bus, BusType, CaseData, Generator};
    let bus = |id, t, pd| Bus { id, bus_type: t, pd, qd: 0.0, gs: 0.0, bs: 0.0, vm: 1.0, va: 0.0, base_kv: 0.0 };
    let case = CaseData::new(
        "pv-only",
        100.0,
        vec![bus(1, BusType::Slack, 0.0), bus(2, BusType::PV, 80.0)],
        vec![Branch { from: 1, to: 2, r: 0.01, x: 0.1, b: 0.0, tap: 0.0, shift: 0.0, status: true }],
        vec![
            Generator { bus: 1, pg: 0.0, qg: 0.0, vg: 1.0, status: true },
            Generator { bus: 2, pg: 10.0, qg: 0.0, vg: 1.0, status: true },
        ],
    )
    .unwrap();
    let sys = gridflow::PowerSystem::new(case).unwrap();
    let p = init_network(&auto_config(&sys.case.bus_sets, &ArchOverrides::default()).unwrap(), 1);
    let batch = vec![PerturbationVector(vec![0.02])];
    let one = loss_and_gradient(&p, &batch, &sys, &LossOptions::default()).unwrap();
    let two = loss_and_gradient(&p, &batch, &sys, &LossOptions { p_weight: 2.0, ..Default::default() }).unwrap();
    assert!((two.loss - 2.0 * one.loss).abs() <= 1e-14 * one.loss);
    let (a, b) = (&one.grads.layers.last().unwrap().weight, &two.grads.layers.last().unwrap().weight);
    for (x, y) in a.iter().zip(b.iter()) {
        assert!((y - 2.0 * x).abs() <= 1e-12 * (1.0 + x.abs()));
    }
}

fn quick_config(epochs: usize) -> TrainingConfig {
    TrainingConfig { epochs, batch_size: 16, log_period: 5, ..Default::default() }
}

#[derive(Default)]
struct Recorder {
    steps: Vec<StepInfo>,
    checkpoints: Vec<usize>,
}

impl TrainObserver for Recorder {
    fn on_step(&mut self, info: &StepInfo) {
        self.steps.push(*info);
    }
    fn on_checkpoint(&mut self, epoch: usize, _params: &gridflow::NetworkParams) {
        self.checkpoints.push(epoch);
    }
}

#[test]
fn single_epoch_is_single_step() {
    let sys = load("case14.m");
    let out = train(&sys, &quick_config(1)).unwrap();
    assert_eq!(out.steps, 1);
    assert_eq!(out.log.len(), 1);
}

#[test]
fn schedule_invariants_hold_during_training() {
    let sys = load("case14.m");
    let cfg = TrainingConfig { checkpoint_period: 20, plateau_patience: 3, ..quick_config(60) };
    let spec = auto_config(&sys.case.bus_sets, &cfg.architecture).unwrap();
    let mut rec = Recorder::default();
    let out = train_with(&sys, &spec, &cfg, &mut rec).unwrap();
    assert_eq!(rec.steps.len(), 60);
    assert_eq!(rec.checkpoints, vec![20, 40, 60]);

    let mut factor = 1.0;
    let mut plateau = gridflow::train::Plateau::new(3, 0.5, cfg.lr_min / cfg.lr_init, cfg.plateau_rel_eps);
    for s in &rec.steps {
        assert!((s.lr - cosine_lr(s.epoch, 60, cfg.lr_init, cfg.lr_min) * factor).abs() <= 1e-18);
        assert!(s.clipped_norm <= cfg.clip_max_norm + 1e-12);
        factor = plateau.update(s.loss);
    }
    // Boundaries at ceil(0.3 · 60) = 18 and ceil(0.7 · 60) = 42.
    let first = |stage| rec.steps.iter().find(|s| s.stage == stage).unwrap().epoch;
    assert_eq!(first(Stage::LhsRefine), 18);
    assert_eq!(first(Stage::AdaptiveAugment), 42);
    let logged: Vec<usize> = out.log.records.iter().map(|r| r.epoch).collect();
    assert!(logged.contains(&18) && logged.contains(&42) && logged.contains(&59));
    assert!(logged.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn training_is_reproducible() {
    let sys = load("case14.m");
    let cfg = quick_config(30);
    let (a, b) = (train(&sys, &cfg).unwrap(), train(&sys, &cfg).unwrap());
    assert_eq!(a.log, b.log);
    assert_eq!(a.params, b.params);
    let other = train(&sys, &TrainingConfig { seed: 1, ..cfg }).unwrap();
    assert_ne!(a.log, other.log);
}

#[test]
fn alternative_schedules_run() {
    let sys = load("case14.m");
    for schedule in [Schedule::LhsOnly, Schedule::RandomUniform] {
        let out = train(&sys, &TrainingConfig { schedule, ..quick_config(12) }).unwrap();
        assert!(out.final_probe_loss.is_finite());
    }
}

#[test]
fn newton_oracle_has_zero_differences() {
    for name in ["case14.m", "case39.m", "case118.m", "case300.m"] {
        let sys = load(name);
        let oracle = NewtonOracle { ctx: &sys, options: NewtonOptions::default() };
        let rep = evaluate(&oracle, &sys, &PerturbationVector::zeros(sys.input_dim()), &EvalOptions {
            timing_repeats: 1,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(rep.dv_max, Some(0.0), "{name}");
        assert_eq!(rep.dtheta_max_deg, Some(0.0), "{name}");
        assert_eq!(rep.buses.len(), sys.n_buses());
        assert!(rep.residual_norm <= 1e-6);
    }
}

#[test]
fn angle_alignment_ignores_common_offsets() {
    struct Shifted<'a>(NewtonOracle<'a>, f64);
    impl gridflow::eval::StateModel for Shifted<'_> {
        fn predict(&self, u: &PerturbationVector) -> Result<gridflow::StateVector, gridflow::eval::EvalError> {
            let mut st = self.0.predict(u)?;
            st.va.iter_mut().for_each(|a| *a += self.1);
            Ok(st)
        }
    }
    let sys = load("case14.m");
    let model = Shifted(NewtonOracle { ctx: &sys, options: NewtonOptions::default() }, 0.7);
    let rep = evaluate(&model, &sys, &PerturbationVector::zeros(22), &EvalOptions { timing_repeats: 0, ..Default::default() })
        .unwrap();
    assert!(rep.dtheta_max_deg.unwrap() < 1e-9);
    assert!(rep.dv_max.unwrap() == 0.0);
}

#[test]
fn untrained_model_is_far_from_solution() {
    let (sys, p) = default_net("case14.m", 0);
    let model = NeuralSolver { params: &p, case: &sys.case };
    let rep = evaluate(&model, &sys, &PerturbationVector::zeros(22), &EvalOptions { timing_repeats: 3, ..Default::default() })
        .unwrap();
    assert!(rep.residual_norm > 0.1);
    assert!(rep.dv_max.unwrap() >= rep.dv_mean.unwrap());
    assert!(rep.dtheta_max_deg.unwrap() >= rep.dtheta_mean_deg.unwrap());
}

#[test]
fn figure_export_round_trips() {
    let sys = load("case14.m");
    let cfg = quick_config(20);
    let out = train(&sys, &cfg).unwrap();
    let model = NeuralSolver { params: &out.params, case: &sys.case };
    let rep = evaluate(&model, &sys, &PerturbationVector::zeros(22), &EvalOptions { timing_repeats: 0, ..Default::default() })
        .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files = export_figure_data(&out.log, &rep, &cfg.digest(), dir.path()).unwrap();

    let rows = read_trajectory_csv(std::fs::File::open(&files.trajectory).unwrap()).unwrap();
    assert_eq!(rows.len(), out.log.len());
    for (r, l) in rows.iter().zip(&out.log.records) {
        assert_eq!((r.epoch, r.stage, r.loss, r.lr, r.energy, r.mean_dp, r.mean_dq), (
            l.epoch, l.stage, l.loss, l.lr, l.energy, l.mean_dp, l.mean_dq
        ));
    }
    let header = std::fs::read_to_string(&files.trajectory).unwrap();
    assert!(header.starts_with("epoch,stage,mean_dP,mean_dQ,energy,loss,lr\n"));

    let cmp = read_comparison_csv(std::fs::File::open(&files.comparison).unwrap()).unwrap();
    assert_eq!(cmp.len(), 14);
    for (c, b) in cmp.iter().zip(&rep.buses) {
        assert_eq!((c.bus, c.v_nn, c.v_newton, c.theta_nn_deg, c.theta_newton_deg), (
            b.bus, b.v_nn, b.v_newton, b.theta_nn_deg, b.theta_newton_deg
        ));
    }
    let meta: FigureMeta = serde_json::from_str(&std::fs::read_to_string(&files.meta).unwrap()).unwrap();
    assert_eq!(meta.config_digest, cfg.digest());
    assert_eq!(meta.stages.len(), 3);
    assert_eq!(meta.comparison_rows, 14);
}

#[test]
fn empty_log_exports_headers_only() {
    let sys = load("case14.m");
    let oracle = NewtonOracle { ctx: &sys, options: NewtonOptions::default() };
    let rep = evaluate(&oracle, &sys, &PerturbationVector::zeros(22), &EvalOptions { timing_repeats: 0, ..Default::default() })
        .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files = export_figure_data(&TrajectoryLog::default(), &rep, "none", dir.path()).unwrap();
    assert_eq!(std::fs::read_to_string(&files.trajectory).unwrap(), "epoch,stage,mean_dP,mean_dQ,energy,loss,lr\n");
    let meta: FigureMeta = serde_json::from_str(&std::fs::read_to_string(&files.meta).unwrap()).unwrap();
    assert_eq!(meta.trajectory_rows, 0);
}

#[test]
fn checkpoint_preserves_trained_model() {
    let sys = load("case14.m");
    let out = train(&sys, &quick_config(5)).unwrap();
    let ck = Checkpoint::new(&out.params, 0, Default::default());
    let back = Checkpoint::from_json(&ck.to_json()).unwrap().params().unwrap();
    assert_eq!(back, out.params);
}
