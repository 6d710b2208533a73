//! Reconstruction and sparsity measures, and the CSV metrics log.

use std::fmt::Write as _;
use std::time::{SystemTime, UNIX_EPOCH};

use crate::lif::DT_MS;
use crate::raster::SpikeRaster;

/// Squared Euclidean distance between two spike-count vectors.
pub fn reconstruction_error(input_counts: &[u32], recon_counts: &[u32]) -> f64 {
    assert_eq!(input_counts.len(), recon_counts.len(), "count vectors differ in length");
    input_counts
        .iter()
        .zip(recon_counts)
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sparsity {
    /// Share of neurons with at least one spike.
    pub active_fraction: f64,
    /// Mean firing rate in Hz over all neurons.
    pub mean_rate_hz: f64,
}

pub fn measure_sparsity(raster: &SpikeRaster) -> Sparsity {
    let counts = raster.counts();
    let n = counts.len().max(1) as f64;
    let active = counts.iter().filter(|&&c| c > 0).count() as f64;
    let total: u64 = counts.iter().map(|&c| c as u64).sum();
    let window_s = raster.len_steps() as f64 * DT_MS / 1000.0;
    Sparsity {
        active_fraction: active / n,
        mean_rate_hz: if window_s > 0.0 {
            total as f64 / (n * window_s)
        } else {
            0.0
        },
    }
}

/// One row of the metrics log.
#[derive(Debug, Clone, PartialEq)]
pub enum MetricRow {
    /// Aggregate reconstruction losses of one conv layer over one pass.
    Reconstruction {
        layer: usize,
        pass: usize,
        images: usize,
        potential_loss: f64,
        count_error: f64,
    },
    /// Aggregate readout potential loss over one pass of the labeled subset.
    Readout { pass: usize, images: usize, loss: f64 },
    Accuracy {
        iteration: usize,
        images: usize,
        accuracy: f64,
    },
    Sparsity {
        layer: usize,
        active_fraction: f64,
        mean_rate_hz: f64,
    },
}

/// Append-only metrics log.
///
/// CSV columns: `timestamp_ms,kind,layer,pass,images,value1,value2`, where
/// per kind
///
/// | kind           | value1          | value2       |
/// |----------------|-----------------|--------------|
/// | reconstruction | potential loss  | count error  |
/// | readout        | potential loss  |              |
/// | accuracy       | accuracy        |              |
/// | sparsity       | active fraction | mean rate Hz |
///
/// `pass` holds the evaluation iteration for accuracy rows. Empty cells are
/// left blank.
#[derive(Debug, Clone, Default)]
pub struct MetricsLog {
    rows: Vec<(u128, MetricRow)>,
}

pub const CSV_HEADER: &str = "timestamp_ms,kind,layer,pass,images,value1,value2";

impl MetricsLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, row: MetricRow) {
        let ts = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis())
            .unwrap_or(0);
        self.rows.push((ts, row));
    }

    pub fn extend(&mut self, other: MetricsLog) {
        self.rows.extend(other.rows);
    }

    pub fn rows(&self) -> impl Iterator<Item = &MetricRow> {
        self.rows.iter().map(|(_, r)| r)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// `(pass, potential_loss, count_error)` rows of `layer`, in order.
    pub fn reconstruction(&self, layer: usize) -> Vec<(usize, f64, f64)> {
        self.rows()
            .filter_map(|r| match *r {
                MetricRow::Reconstruction {
                    layer: l,
                    pass,
                    potential_loss,
                    count_error,
                    ..
                } if l == layer => Some((pass, potential_loss, count_error)),
                _ => None,
            })
            .collect()
    }

    /// Render as CSV; `with_timestamps = false` blanks the first column.
    pub fn to_csv(&self, with_timestamps: bool) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for (ts, row) in &self.rows {
            let ts = if with_timestamps { ts.to_string() } else { String::new() };
            let line = match row {
                MetricRow::Reconstruction {
                    layer,
                    pass,
                    images,
                    potential_loss,
                    count_error,
                } => {
                    format!("{ts},reconstruction,{layer},{pass},{images},{potential_loss:e},{count_error:e}")
                }
                MetricRow::Readout { pass, images, loss } => format!("{ts},readout,,{pass},{images},{loss:e},"),
                MetricRow::Accuracy {
                    iteration,
                    images,
                    accuracy,
                } => {
                    format!("{ts},accuracy,,{iteration},{images},{accuracy:e},")
                }
                MetricRow::Sparsity {
                    layer,
                    active_fraction,
                    mean_rate_hz,
                } => {
                    format!("{ts},sparsity,{layer},,,{active_fraction:e},{mean_rate_hz:e}")
                }
            };
            let _ = writeln!(s, "{line}");
        }
        s
    }
}
