//! Line-delimited training metrics.
//!
//! One JSON object per line, appended as training progresses. Field order is
//! fixed by the struct and float formatting is shortest-round-trip, so a
//! deterministic run writes byte-identical files. Wall-clock timing is
//! deliberately absent — it goes to the console, not the artifact.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    /// Environment steps completed when this record was taken.
    pub step: u64,
    /// Training episodes completed so far.
    pub episode: u64,
    /// Mean undiscounted return of the periodic greedy evaluation.
    pub mean_return: f64,
    /// Fraction of evaluation episodes the environment counts as successes.
    pub success_rate: f64,
    /// Mean loss per head since the previous record.
    pub losses: BTreeMap<String, f64>,
    pub epsilon: f64,
    pub sigma: f64,
}

pub struct MetricsWriter {
    file: std::io::BufWriter<std::fs::File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = std::fs::File::create(path)
            .with_context(|| format!("creating metrics file {}", path.display()))?;
        Ok(MetricsWriter {
            file: std::io::BufWriter::new(file),
        })
    }

    pub fn append(&mut self, record: &MetricsRecord) -> Result<()> {
        serde_json::to_writer(&mut self.file, record)?;
        self.file.write_all(b"\n")?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.file.flush()?;
        Ok(())
    }
}

/// Reads a whole metrics file, reporting parse failures with their line
/// number. An empty file is an error: it cannot be plotted.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let file = std::fs::File::open(path)
        .with_context(|| format!("opening metrics file {}", path.display()))?;
    let mut records = Vec::new();
    for (line_no, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: MetricsRecord = serde_json::from_str(&line).with_context(|| {
            format!("{}: parse error on line {}", path.display(), line_no + 1)
        })?;
        records.push(record);
    }
    if records.is_empty() {
        anyhow::bail!("{}: no metrics records", path.display());
    }
    Ok(records)
}
