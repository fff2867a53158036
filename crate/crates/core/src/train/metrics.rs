//! Metrics records and the JSON-lines sink.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerMetrics {
    pub layer_id: usize,
    pub interval: u64,
    pub last_similarity: Option<f64>,
    pub svd_count: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    /// Loss of the batch consumed at `step`; absent before training starts.
    pub train_loss: Option<f64>,
    pub val_loss: f64,
    pub lr: f64,
    pub svd_calls_total: u64,
    pub per_layer: Vec<LayerMetrics>,
    pub wallclock_ms: u64,
    pub estimated_memory_bytes: u64,
}

impl MetricsRecord {
    /// The record with wall-clock time zeroed, for determinism comparisons.
    pub fn without_wallclock(&self) -> Self {
        Self {
            wallclock_ms: 0,
            ..self.clone()
        }
    }
}

/// Written in place of a record when training aborts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivergenceRecord {
    pub step: u64,
    pub diverged: bool,
    pub detail: String,
}

pub struct MetricsSink {
    out: BufWriter<File>,
}

impl MetricsSink {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(Self {
            out: BufWriter::new(File::create(path)?),
        })
    }

    /// Appends to an existing stream, as when resuming.
    pub fn append(path: &Path) -> Result<Self> {
        Ok(Self {
            out: BufWriter::new(File::options().create(true).append(true).open(path)?),
        })
    }

    pub fn write<S: Serialize>(&mut self, record: &S) -> Result<()> {
        serde_json::to_writer(&mut self.out, record).map_err(std::io::Error::from)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| std::io::Error::from(e).into()))
        .collect()
}
