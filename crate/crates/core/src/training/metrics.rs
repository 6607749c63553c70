use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::step::LossBreakdown;
use crate::error::{Error, Result};

pub const METRICS_HEADER: &str = "step,l_cl,l_kl,total,lr";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub step: u64,
    pub contrastive: f64,
    pub fitting: f64,
    pub total: f64,
    pub lr: f64,
}

impl MetricRow {
    pub fn new(step: u64, loss: LossBreakdown, lr: f64) -> Self {
        MetricRow {
            step,
            contrastive: loss.contrastive,
            fitting: loss.fitting,
            total: loss.total,
            lr,
        }
    }

    /// Shortest round-trip decimal form, so CSVs compare bit-for-bit.
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.step, self.contrastive, self.fitting, self.total, self.lr
        )
    }
}

/// Append-only CSV sink that rejects non-increasing step indices.
pub struct MetricsWriter {
    path: PathBuf,
    file: File,
    last_step: Option<u64>,
}

impl MetricsWriter {
    /// Opens `path` for appending, writing the header if the file is new.
    pub fn open(path: &Path) -> Result<Self> {
        let existing = if path.exists() { read_metrics(path)? } else { Vec::new() };
        let fresh = !path.exists();
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        if fresh {
            writeln!(file, "{METRICS_HEADER}").map_err(|e| Error::io(path, e))?;
        }
        Ok(MetricsWriter {
            path: path.to_path_buf(),
            file,
            last_step: existing.last().map(|r| r.step),
        })
    }

    pub fn append(&mut self, row: &MetricRow) -> Result<()> {
        if self.last_step.is_some_and(|s| row.step <= s) {
            return Err(Error::State(format!(
                "metric step {} does not follow {}",
                row.step,
                self.last_step.unwrap_or_default()
            )));
        }
        writeln!(self.file, "{}", row.to_csv()).map_err(|e| Error::io(&self.path, e))?;
        self.last_step = Some(row.step);
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.file.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRow>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if i == 0 {
            if line != METRICS_HEADER {
                return Err(Error::Format(format!("unexpected metrics header {line:?}")));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let bad = || Error::Format(format!("bad metrics line {}: {line:?}", i + 1));
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 5 {
            return Err(bad());
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
        rows.push(MetricRow {
            step: cols[0].parse().map_err(|_| bad())?,
            contrastive: num(cols[1])?,
            fitting: num(cols[2])?,
            total: num(cols[3])?,
            lr: num(cols[4])?,
        });
    }
    Ok(rows)
}

/// End-of-run summary written next to the CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steps: u64,
    pub first: Option<MetricRow>,
    pub last: Option<MetricRow>,
    /// Mean total loss over the final tenth of the run.
    pub tail_mean_total: Option<f64>,
    pub wall_seconds: f64,
}

impl TrainSummary {
    pub fn from_rows(rows: &[MetricRow], wall_seconds: f64) -> Self {
        let tail = (rows.len() / 10).max(1).min(rows.len());
        let tail_mean_total = (!rows.is_empty())
            .then(|| rows[rows.len() - tail..].iter().map(|r| r.total).sum::<f64>() / tail as f64);
        TrainSummary {
            steps: rows.last().map_or(0, |r| r.step + 1),
            first: rows.first().copied(),
            last: rows.last().copied(),
            tail_mean_total,
            wall_seconds,
        }
    }
}
