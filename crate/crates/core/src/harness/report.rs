//! CSV result rows. Column order is part of the output format.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::{DimStat, SplitConfig};
use crate::error::Result;
use crate::pipeline::{DenoiseSteps, PipelineConfig, TrialResult};

/// One (configuration cell, seed) outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub snr_db: f64,
    pub t_f1: usize,
    pub t_f2: usize,
    pub t_b_resolved: usize,
    pub variant: String,
    pub t_b_mode: String,
    pub transmitter_mode: String,
    pub receiver_forward_mode: String,
    pub seed: u64,
    pub mse: f64,
    pub nmse: f64,
    pub sw2: f64,
    pub mmd2: f64,
    pub sigma_eps2: f64,
    pub sigma_n2: f64,
    pub sigma_tot2: f64,
    pub gamma_mean: f64,
    pub saturated: bool,
}

pub const RESULT_COLUMNS: [&str; 18] = [
    "snr_db",
    "t_f1",
    "t_f2",
    "t_b_resolved",
    "variant",
    "t_b_mode",
    "transmitter_mode",
    "receiver_forward_mode",
    "seed",
    "mse",
    "nmse",
    "sw2",
    "mmd2",
    "sigma_eps2",
    "sigma_n2",
    "sigma_tot2",
    "gamma_mean",
    "saturated",
];

impl ResultRow {
    /// Row for a trial run with `cfg`. The baseline reports the split it
    /// actually used, (0, T_F), and its stochastic receiver forward.
    pub fn from_trial(cfg: &PipelineConfig, t_b: DenoiseSteps, seed: u64, trial: &TrialResult) -> Self {
        use crate::pipeline::Variant;
        let (split, tx, rx) = match trial.variant {
            Variant::Proposed => (cfg.split, cfg.transmitter_mode.as_str(), cfg.receiver_forward_mode.as_str()),
            Variant::RandomNoise => (SplitConfig::new(0, cfg.split.total()), "none", "stochastic"),
        };
        Self {
            snr_db: cfg.channel.snr_db,
            t_f1: split.t_f1,
            t_f2: split.t_f2,
            t_b_resolved: trial.selection.steps,
            variant: trial.variant.as_str().into(),
            t_b_mode: t_b.label(),
            transmitter_mode: tx.into(),
            receiver_forward_mode: rx.into(),
            seed,
            mse: trial.metrics.mse,
            nmse: trial.metrics.nmse,
            sw2: trial.metrics.sw2,
            mmd2: trial.metrics.mmd2,
            sigma_eps2: trial.budget.sigma_eps2,
            sigma_n2: trial.budget.sigma_n2,
            sigma_tot2: trial.budget.sigma_tot2,
            gamma_mean: trial.gamma_mean,
            saturated: trial.selection.saturated,
        }
    }

    /// Legend label grouping rows into plot series.
    pub fn series_label(&self) -> String {
        format!("{} ({},{}) T_B={}", self.variant, self.t_f1, self.t_f2, self.t_b_mode)
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        Some(match name {
            "mse" => self.mse,
            "nmse" => self.nmse,
            "sw2" => self.sw2,
            "mmd2" => self.mmd2,
            "sigma_tot2" => self.sigma_tot2,
            "gamma_mean" => self.gamma_mean,
            "t_b_resolved" => self.t_b_resolved as f64,
            _ => return None,
        })
    }
}

/// Per-dimension Prop-1 statistics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prop1Row {
    pub dim: usize,
    pub empirical_mean_err: f64,
    pub empirical_var: f64,
    pub predicted_var: f64,
    pub rel_err: f64,
}

impl From<&DimStat> for Prop1Row {
    fn from(s: &DimStat) -> Self {
        Self { dim: s.dim, empirical_mean_err: s.mean_err, empirical_var: s.var, predicted_var: s.predicted_var, rel_err: s.rel_err }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossRow {
    pub iteration: usize,
    pub loss: f64,
}

/// CSV writer that flushes after every row, so an aborted run leaves the
/// rows completed so far on disk.
pub struct RowWriter {
    inner: csv::Writer<BufWriter<File>>,
}

impl RowWriter {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(Self { inner: csv::Writer::from_writer(BufWriter::new(File::create(path)?)) })
    }

    pub fn write<T: Serialize>(&mut self, row: &T) -> Result<()> {
        self.inner.serialize(row)?;
        self.inner.flush()?;
        Ok(())
    }
}

/// Writes all rows at once (header included even when `rows` is empty).
pub fn write_rows<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(BufWriter::new(File::create(path)?));
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_result_rows(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}
