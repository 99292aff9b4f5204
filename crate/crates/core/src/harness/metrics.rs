//! Per-epoch metrics and their CSV files.
//!
//! Metrics files hold one row per evaluation with the header
//!
//! ```text
//! epoch,minibatches,train_nll,eval_nll,eval_accuracy,eval_error_pct,c
//! ```
//!
//! Floats use Rust's shortest round-trip formatting. Wall-clock time is kept
//! out of these files (it goes to a separate timing file) so that reruns of
//! the same configuration are byte-identical.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub minibatches: u64,
    pub train_nll: f64,
    pub eval_nll: f64,
    pub eval_accuracy: f64,
    pub eval_error_pct: f64,
    /// Noise scale in effect at the end of the epoch.
    pub c: f64,
    #[serde(skip)]
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsRecord {
    pub rows: Vec<MetricsRow>,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

impl MetricsRecord {
    pub fn last(&self) -> Option<&MetricsRow> {
        self.rows.last()
    }

    pub fn best_eval_nll(&self) -> Option<f64> {
        self.rows.iter().map(|r| r.eval_nll).min_by(f64::total_cmp)
    }

    /// First epoch whose eval NLL is at or below `target`.
    pub fn first_epoch_reaching(&self, target: f64) -> Option<usize> {
        self.rows.iter().find(|r| r.eval_nll <= target).map(|r| r.epoch)
    }

    pub fn validate(&self) -> Result<()> {
        for pair in self.rows.windows(2) {
            if pair[1].epoch <= pair[0].epoch {
                return Err(Error::parse("metrics", "rows are not ordered by epoch"));
            }
        }
        for r in &self.rows {
            let fields = [r.train_nll, r.eval_nll, r.eval_accuracy, r.eval_error_pct, r.c];
            if fields.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("metrics row for epoch {}", r.epoch)));
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        if self.rows.is_empty() {
            w.write_record([
                "epoch",
                "minibatches",
                "train_nll",
                "eval_nll",
                "eval_accuracy",
                "eval_error_pct",
                "c",
            ])?;
        }
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.into_inner()
            .map_err(|e| Error::parse("metrics", e.to_string()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }

    /// `epoch,seconds` rows.
    pub fn write_timing_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["epoch", "seconds"])?;
        for r in &self.rows {
            w.write_record([r.epoch.to_string(), r.seconds.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let rows = r.deserialize().collect::<std::result::Result<Vec<MetricsRow>, _>>()?;
        let record = Self { rows };
        record.validate()?;
        Ok(record)
    }

    /// Row-wise median over runs. Rows are matched by position; the result is
    /// as long as the shortest record.
    pub fn median_of(records: &[MetricsRecord]) -> Self {
        let n = records.iter().map(|r| r.rows.len()).min().unwrap_or(0);
        let rows = (0..n)
            .map(|i| {
                let col = |f: &dyn Fn(&MetricsRow) -> f64| {
                    let mut v: Vec<f64> = records.iter().map(|r| f(&r.rows[i])).collect();
                    median(&mut v)
                };
                let first = &records[0].rows[i];
                MetricsRow {
                    epoch: first.epoch,
                    minibatches: first.minibatches,
                    train_nll: col(&|r| r.train_nll),
                    eval_nll: col(&|r| r.eval_nll),
                    eval_accuracy: col(&|r| r.eval_accuracy),
                    eval_error_pct: col(&|r| r.eval_error_pct),
                    c: col(&|r| r.c),
                    seconds: col(&|r| r.seconds),
                }
            })
            .collect();
        Self { rows }
    }
}

/// Median of a slice of finite values.
pub fn median_value(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    median(&mut v)
}
