use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{EvalError, EvalReport};
use crate::sampling::Stage;
use crate::train::TrajectoryLog;

pub const FIGURE_TRAJECTORY_COLUMNS: [&str; 7] = ["epoch", "stage", "mean_dP", "mean_dQ", "energy", "loss", "lr"];
pub const COMPARISON_COLUMNS: [&str; 5] = ["bus", "V_nn", "V_newton", "theta_nn_deg", "theta_newton_deg"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigureTrajectoryRow {
    pub epoch: usize,
    pub stage: Stage,
    #[serde(rename = "mean_dP")]
    pub mean_dp: f64,
    #[serde(rename = "mean_dQ")]
    pub mean_dq: f64,
    pub energy: f64,
    pub loss: f64,
    pub lr: f64,
}

/// One bus; Newton columns are empty when Newton failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub bus: i64,
    #[serde(rename = "V_nn")]
    pub v_nn: f64,
    #[serde(rename = "V_newton")]
    pub v_newton: Option<f64>,
    pub theta_nn_deg: f64,
    pub theta_newton_deg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigureMeta {
    pub case: String,
    pub config_digest: String,
    pub tool_version: String,
    pub trajectory_rows: usize,
    pub comparison_rows: usize,
    pub stages: Vec<Stage>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FigureFiles {
    pub trajectory: PathBuf,
    pub comparison: PathBuf,
    pub meta: PathBuf,
}

fn write_rows<T: Serialize>(path: &Path, header: &[&str], rows: impl IntoIterator<Item = T>) -> Result<(), EvalError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(BufWriter::new(File::create(path)?));
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Write `trajectory.csv`, `comparison.csv` and `meta.json` into `out_dir`.
pub fn export_figure_data(
    log: &TrajectoryLog,
    report: &EvalReport,
    config_digest: &str,
    out_dir: &Path,
) -> Result<FigureFiles, EvalError> {
    std::fs::create_dir_all(out_dir)?;
    let files = FigureFiles {
        trajectory: out_dir.join("trajectory.csv"),
        comparison: out_dir.join("comparison.csv"),
        meta: out_dir.join("meta.json"),
    };
    write_rows(
        &files.trajectory,
        &FIGURE_TRAJECTORY_COLUMNS,
        log.records.iter().map(|r| FigureTrajectoryRow {
            epoch: r.epoch,
            stage: r.stage,
            mean_dp: r.mean_dp,
            mean_dq: r.mean_dq,
            energy: r.energy,
            loss: r.loss,
            lr: r.lr,
        }),
    )?;
    write_rows(
        &files.comparison,
        &COMPARISON_COLUMNS,
        report.buses.iter().map(|b| ComparisonRow {
            bus: b.bus,
            v_nn: b.v_nn,
            v_newton: b.v_newton,
            theta_nn_deg: b.theta_nn_deg,
            theta_newton_deg: b.theta_newton_deg,
        }),
    )?;
    let mut stages: Vec<Stage> = Vec::new();
    for r in &log.records {
        if !stages.contains(&r.stage) {
            stages.push(r.stage);
        }
    }
    let meta = FigureMeta {
        case: report.case.clone(),
        config_digest: config_digest.to_string(),
        tool_version: crate::VERSION.to_string(),
        trajectory_rows: log.len(),
        comparison_rows: report.buses.len(),
        stages,
    };
    let mut f = BufWriter::new(File::create(&files.meta)?);
    serde_json::to_writer_pretty(&mut f, &meta)?;
    writeln!(f)?;
    f.flush()?;
    Ok(files)
}

pub fn read_trajectory_csv<R: Read>(input: R) -> Result<Vec<FigureTrajectoryRow>, EvalError> {
    let mut rdr = csv::Reader::from_reader(input);
    Ok(rdr.deserialize().collect::<Result<_, _>>()?)
}

pub fn read_comparison_csv<R: Read>(input: R) -> Result<Vec<ComparisonRow>, EvalError> {
    let mut rdr = csv::Reader::from_reader(input);
    Ok(rdr.deserialize().collect::<Result<_, _>>()?)
}
