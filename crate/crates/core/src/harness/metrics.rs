use std::fs::{self, File};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Version tag written on the first line of every metrics file.
pub const METRICS_FORMAT_VERSION: u32 = 1;

/// Column order of the metrics CSV. Part of the file contract.
pub const METRICS_COLUMNS: [&str; 23] = [
    "update",
    "timesteps",
    "return_mean",
    "return_median",
    "return_min",
    "return_max",
    "episodes",
    "psi",
    "psi_min",
    "psi_max",
    "j_mean",
    "j_max",
    "j_min",
    "policy_loss",
    "value_loss",
    "entropy",
    "kl",
    "clip_fraction",
    "grad_norm",
    "accepted",
    "skipped_minibatches",
    "success_rate",
    "wall_clock_s",
];

/// One row per policy update.
///
/// Return statistics cover episodes that finished during the update's rollout;
/// when none finished they repeat the previous row (zeros before the first).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub update: usize,
    pub timesteps: u64,
    pub return_mean: f64,
    pub return_median: f64,
    pub return_min: f64,
    pub return_max: f64,
    pub episodes: usize,
    pub psi: f64,
    pub psi_min: f64,
    pub psi_max: f64,
    pub j_mean: f64,
    pub j_max: f64,
    pub j_min: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub kl: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
    pub accepted: bool,
    pub skipped_minibatches: usize,
    pub success_rate: f64,
    pub wall_clock_s: f64,
}

impl MetricsRow {
    pub fn all_finite(&self) -> bool {
        [
            self.return_mean,
            self.return_median,
            self.return_min,
            self.return_max,
            self.psi,
            self.psi_min,
            self.psi_max,
            self.j_mean,
            self.j_max,
            self.j_min,
            self.policy_loss,
            self.value_loss,
            self.entropy,
            self.kl,
            self.clip_fraction,
            self.grad_norm,
            self.success_rate,
            self.wall_clock_s,
        ]
        .iter()
        .all(|x| x.is_finite())
    }
}

fn version_line() -> String {
    format!("# condpolicy metrics format_version={METRICS_FORMAT_VERSION}\n")
}

/// Appends rows to a metrics file, writing the header on creation.
pub struct MetricsWriter {
    writer: csv::Writer<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(version_line().as_bytes())
            .map_err(|e| Error::io(path, e))?;
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        writer.write_record(METRICS_COLUMNS).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Ok(Self { writer })
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<()> {
        self.writer.serialize(row).map_err(|e| Error::Parse {
            path: "<metrics>".into(),
            message: e.to_string(),
        })?;
        self.writer.flush().map_err(|e| Error::io("<metrics>", e))
    }
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut w = MetricsWriter::create(path)?;
    rows.iter().try_for_each(|r| w.write(r))
}

/// Reads a metrics file, checking the version line and column order.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let perr = |message: String| Error::Parse {
        path: path.to_path_buf(),
        message,
    };
    let (first, rest) = text.split_once('\n').ok_or_else(|| perr("empty metrics file".into()))?;
    if format!("{first}\n") != version_line() {
        return Err(perr(format!("unsupported metrics version line {first:?}")));
    }
    let mut reader = csv::ReaderBuilder::new().from_reader(rest.as_bytes());
    let header = reader.headers().map_err(|e| perr(e.to_string()))?;
    if !header.iter().eq(METRICS_COLUMNS.iter().copied()) {
        return Err(perr("metrics header does not match the expected columns".into()));
    }
    reader
        .deserialize()
        .map(|r| r.map_err(|e| perr(e.to_string())))
        .collect()
}
