use std::fmt::Write as _;
use std::path::Path;

use crate::data::Split;
use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "epoch,split,loss,accuracy,wall_time_s";

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRecord {
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
    pub accuracy: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    records: Vec<MetricRecord>,
}

impl MetricsLog {
    pub fn push(&mut self, rec: MetricRecord) -> Result<()> {
        if !(0.0..=1.0).contains(&rec.accuracy) {
            return Err(Error::Contract(format!("accuracy {} outside [0, 1]", rec.accuracy)));
        }
        if !(rec.loss >= 0.0 && rec.loss.is_finite()) {
            return Err(Error::NonFinite(format!(
                "{} loss {} at epoch {}",
                rec.split, rec.loss, rec.epoch
            )));
        }
        if let Some(prev) = self.records.last() {
            if rec.wall_time_s < prev.wall_time_s {
                return Err(Error::Contract("metric timestamps must not decrease".into()));
            }
        }
        self.records.push(rec);
        Ok(())
    }

    pub fn records(&self) -> &[MetricRecord] {
        &self.records
    }

    /// Most recent record of `split`.
    pub fn last(&self, split: Split) -> Option<&MetricRecord> {
        self.records.iter().rev().find(|r| r.split == split)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{:.10},{:.6},{:.3}",
                r.epoch, r.split, r.loss, r.accuracy, r.wall_time_s
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}
