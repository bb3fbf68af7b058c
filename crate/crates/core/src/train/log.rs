use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::sampling::Stage;

/// One logged epoch. `mean_dP`, `mean_dQ` and `energy` are measured on the
/// fixed probe batch with the parameters used for that epoch's update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub epoch: usize,
    pub stage: Stage,
    pub loss: f64,
    pub lr: f64,
    #[serde(rename = "mean_dP")]
    pub mean_dp: f64,
    #[serde(rename = "mean_dQ")]
    pub mean_dq: f64,
    pub energy: f64,
    pub buffer_size: usize,
}

pub const TRAJECTORY_COLUMNS: [&str; 8] = ["epoch", "stage", "loss", "lr", "mean_dP", "mean_dQ", "energy", "buffer_size"];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryLog {
    pub records: Vec<TrajectoryRecord>,
}

impl TrajectoryLog {
    pub fn push(&mut self, record: TrajectoryRecord) {
        debug_assert!(self.records.last().is_none_or(|r| r.epoch < record.epoch));
        self.records.push(record);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// CSV with the standard column order, optionally preceded by a `# ` comment line.
    pub fn write_csv<W: Write>(&self, mut out: W, comment: Option<&str>) -> Result<(), csv::Error> {
        if let Some(c) = comment {
            writeln!(out, "# {c}")?;
        }
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        w.write_record(TRAJECTORY_COLUMNS)?;
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Parse a CSV written by [`write_csv`](Self::write_csv); `#` lines are skipped.
    pub fn read_csv<R: Read>(input: R) -> Result<Self, csv::Error> {
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
        let records = rdr.deserialize().collect::<Result<Vec<TrajectoryRecord>, _>>()?;
        Ok(TrajectoryLog { records })
    }
}
