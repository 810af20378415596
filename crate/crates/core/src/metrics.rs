//! Per-epoch training records and their CSV form.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const METRICS_HEADER: &str = "epoch,loss,std_acc,adv_acc,mean_confidence,wall_ms,peak_mem_bytes";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    /// 1-based.
    pub epoch: usize,
    pub loss: f32,
    pub std_acc: f32,
    pub adv_acc: f32,
    pub mean_confidence: f32,
    pub wall_ms: u64,
    pub peak_mem_bytes: u64,
}

pub fn format_metrics(records: &[MetricsRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(METRICS_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6},{},{}",
            r.epoch, r.loss, r.std_acc, r.adv_acc, r.mean_confidence, r.wall_ms, r.peak_mem_bytes
        );
    }
    out
}

pub fn write_metrics(records: &[MetricsRecord], path: &Path) -> Result<()> {
    if records.is_empty() {
        return Err(Error::InvalidInput("no metrics records to write".into()));
    }
    fs::write(path, format_metrics(records)).map_err(|e| Error::io(path, e))
}

pub fn parse_metrics(text: &str) -> Result<Vec<MetricsRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::InvalidInput("metrics header mismatch".into()));
    }
    lines
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(Error::InvalidInput(format!("bad metrics row `{line}`")));
            }
            let bad = |_| Error::InvalidInput(format!("bad metrics row `{line}`"));
            let float = |s: &str| {
                s.parse::<f32>()
                    .map_err(|_| Error::InvalidInput(format!("bad metrics row `{line}`")))
            };
            Ok(MetricsRecord {
                epoch: f[0].parse().map_err(bad)?,
                loss: float(f[1])?,
                std_acc: float(f[2])?,
                adv_acc: float(f[3])?,
                mean_confidence: float(f[4])?,
                wall_ms: f[5].parse().map_err(bad)?,
                peak_mem_bytes: f[6].parse().map_err(bad)?,
            })
        })
        .collect()
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_metrics(&text)
}
