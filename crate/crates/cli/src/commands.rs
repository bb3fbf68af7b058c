use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::Context;
use gridflow::eval::{
    ablation_sampling, batch_benchmark, evaluate, export_figure_data, EvalOptions, COMPARISON_COLUMNS,
};
use gridflow::network::{auto_config, Checkpoint, NeuralSolver};
use gridflow::newton::{solve_newton, NewtonOptions};
use gridflow::sampling::uniform_batch;
use gridflow::train::{train_with, Schedule, TrainError, TrainObserver, TrainingConfig, TrajectoryLog};
use gridflow::{config_digest, parse_case, NetworkParams, PerturbationVector, PowerSystem, VERSION};
use rand::SeedableRng;
use serde::Serialize;

use crate::config::{resolve, to_toml};
use crate::error::{CliError, Kind};
use crate::Common;

type Result<T> = std::result::Result<T, CliError>;

fn load_system(path: &Path) -> Result<PowerSystem> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::new(Kind::BadPath, format!("reading case {}: {e}", path.display())))?;
    let case = parse_case(&text).map_err(|e| CliError::new(Kind::Validation, format!("{}: {e}", path.display())))?;
    PowerSystem::new(case).map_err(|e| CliError::new(Kind::Validation, e.to_string()))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::new(Kind::BadPath, format!("creating {}: {e}", dir.display())))
}

fn header(digest: &str) -> String {
    format!("gridflow {VERSION} config={digest}")
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut f, value).context("writing JSON")?;
    writeln!(f).and_then(|_| f.flush()).context("writing JSON")?;
    Ok(())
}

fn load_checkpoint(path: &Path, sys: &PowerSystem) -> Result<(Checkpoint, NetworkParams)> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::new(Kind::BadPath, format!("reading checkpoint {}: {e}", path.display())))?;
    let ck = Checkpoint::from_json(&text).map_err(|e| CliError::new(Kind::Validation, e.to_string()))?;
    let params = ck.params().map_err(|e| CliError::new(Kind::Validation, e.to_string()))?;
    let sets = &sys.case.bus_sets;
    if ck.architecture.n_pv != sets.pv.len() || ck.architecture.n_pq != sets.pq.len() {
        return Err(CliError::new(
            Kind::Validation,
            format!(
                "checkpoint expects {} PV / {} PQ buses, case has {} / {}",
                ck.architecture.n_pv,
                ck.architecture.n_pq,
                sets.pv.len(),
                sets.pq.len()
            ),
        ));
    }
    Ok((ck, params))
}

pub fn info(common: &Common) -> Result<()> {
    let sys = load_system(&common.case)?;
    let cfg = resolve(common.config.as_deref(), &common.set, common.seed)?;
    let case = &sys.case;
    let sets = &case.bus_sets;
    let arch = auto_config(sets, &cfg.architecture).map_err(|e| CliError::new(Kind::Validation, e.to_string()))?;
    let n_params = gridflow::network::init_network(&arch, 0).num_params();
    println!("case={}", case.name);
    println!("buses={}", case.n_buses());
    println!("pq={}", sets.pq.len());
    println!("pv={}", sets.pv.len());
    println!("slack_bus={}", case.buses[sets.slack].id);
    println!("branches={}", case.branches.len());
    println!("generators={}", case.gens.len());
    println!("base_mva={}", case.base_mva);
    println!("d_in={}", arch.d_in);
    println!("d_out={}", arch.d_out);
    println!("d_hidden={}", arch.d_hidden);
    println!("layers={}", arch.layers);
    println!("use_layernorm={}", arch.use_layernorm);
    println!("parameters={n_params}");
    Ok(())
}

pub fn solve(common: &Common, out: &Path, tol: f64, max_iter: usize, flat_start: bool) -> Result<()> {
    let sys = load_system(&common.case)?;
    if !(tol > 0.0) || max_iter == 0 {
        return Err(CliError::new(Kind::Validation, "tol must be positive and max_iter at least 1"));
    }
    ensure_dir(out)?;
    let opts = NewtonOptions { tol, max_iter, flat_start };
    let digest = config_digest(&opts);
    let res = solve_newton(&sys.case, &sys.ybus, &sys.base, &opts);
    if !res.converged {
        let path = out.join("newton_history.csv");
        let mut f = BufWriter::new(File::create(&path).context("creating history file")?);
        writeln!(f, "# {}", header(&digest)).context("writing history")?;
        writeln!(f, "iteration,mismatch_inf").context("writing history")?;
        for (k, m) in res.history.iter().enumerate() {
            writeln!(f, "{k},{m}").context("writing history")?;
            eprintln!("iteration={k} mismatch_inf={m:e}");
        }
        f.flush().context("writing history")?;
        return Err(CliError::new(
            Kind::NoConvergence,
            format!(
                "Newton did not converge after {} iterations (mismatch {:e}, {:?}); history in {}",
                res.iterations,
                res.final_mismatch_inf,
                res.failure,
                path.display()
            ),
        ));
    }
    let path = out.join("solution.csv");
    let mut f = BufWriter::new(File::create(&path).context("creating solution file")?);
    writeln!(f, "# {}", header(&digest)).context("writing solution")?;
    let mut w = csv::Writer::from_writer(f);
    w.write_record(["bus_id", "Vm_pu", "Va_deg"]).context("writing solution")?;
    for (bus, (vm, va)) in sys.case.buses.iter().zip(res.state.vm.iter().zip(&res.state.va)) {
        w.write_record([bus.id.to_string(), vm.to_string(), va.to_degrees().to_string()]).context("writing solution")?;
    }
    w.flush().context("writing solution")?;
    println!("converged=true iterations={} mismatch_inf={:e} out={}", res.iterations, res.final_mismatch_inf, path.display());
    Ok(())
}

struct CheckpointWriter<'a> {
    dir: &'a Path,
    seed: u64,
    metadata: BTreeMap<String, serde_json::Value>,
    failure: Option<std::io::Error>,
}

impl TrainObserver for CheckpointWriter<'_> {
    fn on_checkpoint(&mut self, epoch: usize, params: &NetworkParams) {
        let ck = Checkpoint::new(params, self.seed, self.metadata.clone());
        let path = self.dir.join(format!("epoch_{epoch:06}.json"));
        if let Err(e) = fs::create_dir_all(self.dir).and_then(|_| fs::write(path, ck.to_json())) {
            self.failure.get_or_insert(e);
        }
    }
}

fn train_metadata(sys: &PowerSystem, cfg: &TrainingConfig) -> BTreeMap<String, serde_json::Value> {
    let mut meta = BTreeMap::new();
    meta.insert("case".into(), sys.case.name.clone().into());
    meta.insert("config_digest".into(), cfg.digest().into());
    meta.insert("config".into(), serde_json::to_value(cfg).expect("config serializes"));
    meta.insert("tool_version".into(), VERSION.into());
    meta
}

fn write_log(path: &Path, log: &TrajectoryLog, digest: &str) -> Result<()> {
    let f = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    log.write_csv(f, Some(&header(digest))).context("writing trajectory")?;
    Ok(())
}

pub fn train(common: &Common, out: &Path) -> Result<()> {
    let sys = load_system(&common.case)?;
    let cfg = resolve(common.config.as_deref(), &common.set, common.seed)?;
    let arch = auto_config(&sys.case.bus_sets, &cfg.architecture)
        .map_err(|e| CliError::new(Kind::Validation, e.to_string()))?;
    ensure_dir(out)?;
    let digest = cfg.digest();
    fs::write(out.join("config.toml"), to_toml(&cfg)?).context("writing config.toml")?;
    let mut metadata = train_metadata(&sys, &cfg);
    let ckpt_dir = out.join("checkpoints");
    let mut observer = CheckpointWriter { dir: &ckpt_dir, seed: cfg.seed, metadata: metadata.clone(), failure: None };
    let result = train_with(&sys, &arch, &cfg, &mut observer);
    let outcome = match result {
        Ok(o) => o,
        Err(TrainError::Diverged { epoch, source, last_good, log }) => {
            fs::write(out.join("model_last_good.json"), Checkpoint::new(&last_good, cfg.seed, metadata).to_json())
                .context("writing last good checkpoint")?;
            write_log(&out.join("trajectory.csv"), &log, &digest)?;
            return Err(CliError::new(
                Kind::Internal,
                format!("training diverged at epoch {epoch}: {source}; last good parameters in model_last_good.json"),
            ));
        }
        Err(e) => return Err(CliError::new(Kind::Validation, e.to_string())),
    };
    if let Some(e) = observer.failure {
        return Err(CliError::new(Kind::BadPath, format!("writing checkpoint: {e}")));
    }
    metadata.insert("initial_probe_loss".into(), outcome.initial_probe_loss.into());
    metadata.insert("final_probe_loss".into(), outcome.final_probe_loss.into());
    metadata.insert("steps".into(), outcome.steps.into());
    fs::write(out.join("model.json"), Checkpoint::new(&outcome.params, cfg.seed, metadata).to_json())
        .context("writing model.json")?;
    write_log(&out.join("trajectory.csv"), &outcome.log, &digest)?;
    println!(
        "epochs={} initial_probe_loss={:e} final_probe_loss={:e} buffer_size={} out={}",
        cfg.epochs,
        outcome.initial_probe_loss,
        outcome.final_probe_loss,
        outcome.buffer_size,
        out.display()
    );
    Ok(())
}

fn digest_of(ck: &Checkpoint) -> String {
    ck.metadata.get("config_digest").and_then(|v| v.as_str()).map(str::to_string).unwrap_or_else(|| "unknown".into())
}

pub fn eval(
    common: &Common,
    checkpoint: &Path,
    out: &Path,
    benchmark: Option<usize>,
    timing_repeats: usize,
) -> Result<()> {
    let sys = load_system(&common.case)?;
    let (ck, params) = load_checkpoint(checkpoint, &sys)?;
    ensure_dir(out)?;
    let model = NeuralSolver { params: &params, case: &sys.case };
    let u0 = PerturbationVector::zeros(sys.input_dim());
    let opts = EvalOptions { timing_repeats, ..Default::default() };
    let report = evaluate(&model, &sys, &u0, &opts).context("evaluating")?;
    write_json(&out.join("eval_report.json"), &report)?;

    let mut f = BufWriter::new(File::create(out.join("comparison.csv")).context("creating comparison.csv")?);
    writeln!(f, "# {}", header(&digest_of(&ck))).context("writing comparison")?;
    let mut w = csv::Writer::from_writer(f);
    w.write_record(COMPARISON_COLUMNS).context("writing comparison")?;
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for b in &report.buses {
        w.write_record([
            b.bus.to_string(),
            b.v_nn.to_string(),
            opt(b.v_newton),
            b.theta_nn_deg.to_string(),
            opt(b.theta_newton_deg),
        ])
        .context("writing comparison")?;
    }
    w.flush().context("writing comparison")?;

    println!(
        "residual_norm={:e} dv_max={} dtheta_max_deg={} newton_iterations={}",
        report.residual_norm,
        opt(report.dv_max),
        opt(report.dtheta_max_deg),
        report.newton_iterations
    );
    if let Some(k) = benchmark {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(common.seed.unwrap_or(ck.seed));
        let delta = ck
            .metadata
            .get("config")
            .and_then(|c| c.pointer("/sampling/delta"))
            .and_then(|d| d.as_f64())
            .unwrap_or(gridflow::sampling::SamplingConfig::default().delta);
        let scenarios = uniform_batch(sys.input_dim(), k, &mut rng, delta);
        let bench = batch_benchmark(&model, &sys, &scenarios, &NewtonOptions::default()).context("benchmarking")?;
        write_json(&out.join("benchmark.json"), &bench)?;
        println!(
            "benchmark scenarios={} nn_batch_s={:.6} newton_sequential_s={:.6} speedup={}",
            bench.scenarios,
            bench.nn_batch_s,
            bench.newton_sequential_s,
            bench.speedup.map(|s| format!("{s:.2}")).unwrap_or_else(|| "n/a".into())
        );
    }
    Ok(())
}

pub fn ablate(common: &Common, out: &Path, seeds: &[u64], eval_points: usize) -> Result<()> {
    let sys = load_system(&common.case)?;
    let cfg = resolve(common.config.as_deref(), &common.set, common.seed)?;
    if seeds.is_empty() {
        return Err(CliError::new(Kind::Validation, "at least one seed is required"));
    }
    ensure_dir(out)?;
    let report = ablation_sampling(&sys, &cfg, &[Schedule::RandomUniform, Schedule::ThreeStage], seeds, eval_points)
        .context("running ablation")?;
    write_json(&out.join("ablation.json"), &report)?;
    for s in &report.summary {
        println!(
            "schedule={} median_final_loss={:e} median_residual_norm={:e}",
            serde_json::to_value(s.schedule).expect("serializes").as_str().unwrap_or("?"),
            s.median_final_loss,
            s.median_residual_norm
        );
    }
    Ok(())
}

pub fn export_figures(common: &Common, checkpoint: &Path, log_path: &Path, out: &Path) -> Result<()> {
    let sys = load_system(&common.case)?;
    let (ck, params) = load_checkpoint(checkpoint, &sys)?;
    let file = File::open(log_path)
        .map_err(|e| CliError::new(Kind::BadPath, format!("reading log {}: {e}", log_path.display())))?;
    let log = TrajectoryLog::read_csv(file)
        .map_err(|e| CliError::new(Kind::Validation, format!("{}: {e}", log_path.display())))?;
    ensure_dir(out)?;
    let model = NeuralSolver { params: &params, case: &sys.case };
    let u0 = PerturbationVector::zeros(sys.input_dim());
    let report = evaluate(&model, &sys, &u0, &EvalOptions { timing_repeats: 0, ..Default::default() })
        .context("evaluating")?;
    let files = export_figure_data(&log, &report, &digest_of(&ck), out).context("exporting")?;
    println!(
        "trajectory={} comparison={} meta={}",
        files.trajectory.display(),
        files.comparison.display(),
        files.meta.display()
    );
    Ok(())
}

