//! Metrics CSV writing and reading.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grpo::IterationReport;

/// Appends one row per iteration and flushes it immediately, so an aborted
/// run leaves every completed row on disk.
#[derive(Debug)]
pub struct MetricsWriter {
    out: BufWriter<File>,
    record_wallclock: bool,
}

impl MetricsWriter {
    pub fn create(path: &Path, reward_count: usize, record_wallclock: bool) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{}", IterationReport::csv_header(reward_count))?;
        out.flush()?;
        Ok(Self { out, record_wallclock })
    }

    pub fn append(&mut self, report: &IterationReport) -> Result<()> {
        writeln!(self.out, "{}", report.csv_row(self.record_wallclock))?;
        self.out.flush()?;
        Ok(())
    }
}

/// A numeric CSV with a header row.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl MetricsTable {
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<String> = lines
            .next()
            .ok_or_else(|| Error::Input("empty metrics file".into()))?
            .split(',')
            .map(|s| s.trim().to_string())
            .collect();
        let rows = lines
            .enumerate()
            .map(|(i, line)| {
                let row: Vec<f64> = line
                    .split(',')
                    .map(|v| v.trim().parse::<f64>().map_err(|_| Error::Input(format!("row {}: bad value '{v}'", i + 1))))
                    .collect::<Result<_>>()?;
                if row.len() != header.len() {
                    return Err(Error::Input(format!("row {} has {} columns, header {}", i + 1, row.len(), header.len())));
                }
                Ok(row)
            })
            .collect::<Result<_>>()?;
        Ok(Self { header, rows })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[idx]).collect())
    }

    /// Names of the `mean_reward_k*` columns.
    pub fn reward_columns(&self) -> Vec<String> {
        self.header.iter().filter(|h| h.starts_with("mean_reward_k")).cloned().collect()
    }
}

/// Trailing moving average: entry `i` averages `values[i+1-w ..= i]`,
/// using fewer points at the start.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for i in 0..values.len() {
        sum += values[i];
        if i >= w {
            sum -= values[i - w];
        }
        out.push(sum / (i + 1).min(w) as f64);
    }
    out
}

/// Mean of the first and of the last `window` entries.
pub fn head_tail_means(values: &[f64], window: usize) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let w = window.clamp(1, values.len());
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    Some((mean(&values[..w]), mean(&values[values.len() - w..])))
}
