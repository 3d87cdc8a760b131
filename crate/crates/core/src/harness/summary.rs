//! Metrics streams (one JSON object per line) and box-plot summaries.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::vfeel::MetricRecord;

/// Quantile of sorted data by linear interpolation between closest ranks:
/// position `q * (n - 1)`.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxStats {
    pub count: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl BoxStats {
    pub fn of(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        BoxStats {
            count: v.len(),
            min: quantile(&v, 0.0),
            q1: quantile(&v, 0.25),
            median: quantile(&v, 0.5),
            q3: quantile(&v, 0.75),
            max: quantile(&v, 1.0),
        }
    }
}

pub const SUMMARY_HEADER: &str = "scheme,seeds,min,q1,median,q3,max";

pub fn summary_row(scheme: &str, s: &BoxStats) -> String {
    format!(
        "{scheme},{},{:.6},{:.6},{:.6},{:.6},{:.6}",
        s.count, s.min, s.q1, s.median, s.q3, s.max
    )
}

/// Final test accuracy of every stream, in stream order.
pub fn final_accuracies(streams: &[Vec<MetricRecord>]) -> Vec<f64> {
    streams
        .iter()
        .map(|h| h.last().map(|r| r.test_accuracy).unwrap_or(f64::NAN))
        .collect()
}

pub fn encode_metrics(records: &[MetricRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(out, "{line}").unwrap();
    }
    Ok(out)
}

pub fn decode_metrics(text: &str) -> Result<Vec<MetricRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Format(format!("metrics line {}: {e}", i + 1))))
        .collect()
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    decode_metrics(&text)
}

/// Parses a summary table back into `(scheme, stats)` rows.
pub fn parse_summary(text: &str) -> Result<Vec<(String, BoxStats)>> {
    let mut lines = text.lines();
    if lines.next() != Some(SUMMARY_HEADER) {
        return Err(Error::Format("summary header mismatch".into()));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let num = |i: usize| -> Result<f64> {
                f.get(i)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::Format(format!("bad summary row '{l}'")))
            };
            Ok((
                f[0].to_string(),
                BoxStats {
                    count: num(1)? as usize,
                    min: num(2)?,
                    q1: num(3)?,
                    median: num(4)?,
                    q3: num(5)?,
                    max: num(6)?,
                },
            ))
        })
        .collect()
}
