//! Power normalization, AWGN injection and SNR bookkeeping.
//!
//! A real latent of length 2k is read as k complex symbols (real and
//! imaginary parts interleaved). Under [`ChannelModel::ComplexPaper`] the
//! complex noise CN(0, σ²) puts variance σ²/2 on each real component.

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::rng::{standard_normal, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ChannelModel {
    #[default]
    ComplexPaper,
    RealSimplified,
}

impl ChannelModel {
    pub fn as_str(self) -> &'static str {
        match self {
            ChannelModel::ComplexPaper => "complex_paper",
            ChannelModel::RealSimplified => "real_simplified",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelConfig {
    pub snr_db: f64,
    pub model: ChannelModel,
}

impl ChannelConfig {
    /// `snr_db = +inf` describes a noiseless channel.
    pub fn new(snr_db: f64, model: ChannelModel) -> Result<Self> {
        if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
            return Err(param("snr_db must be a number or +inf"));
        }
        Ok(Self { snr_db, model })
    }

    /// σ_ch² at unit signal power.
    pub fn noise_var(&self) -> f64 {
        snr_to_noise_var(self.snr_db)
    }

    /// Variance actually injected per real component.
    pub fn effective_noise_var(&self) -> f64 {
        effective_noise_var(self.noise_var(), self.model)
    }

    /// Complex symbols used for a latent of dimension `d`.
    pub fn symbols(&self, d: usize) -> Result<usize> {
        match self.model {
            ChannelModel::ComplexPaper if !d.is_multiple_of(2) => {
                Err(param(format!("complex channel needs an even latent dimension (got {d})")))
            }
            _ => Ok(d.div_ceil(2)),
        }
    }

    /// Bandwidth compression ratio k/N under the identity codec.
    pub fn bandwidth_ratio(&self, d: usize) -> Result<f64> {
        Ok(self.symbols(d)? as f64 / d as f64)
    }
}

pub fn snr_to_noise_var(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

pub fn effective_noise_var(noise_var: f64, model: ChannelModel) -> f64 {
    match model {
        ChannelModel::ComplexPaper => noise_var / 2.0,
        ChannelModel::RealSimplified => noise_var,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedSignal {
    pub values: Vec<f64>,
    pub gamma: f64,
}

/// γ = 1/√((1/2k)‖z‖²), applied so the signal has unit average power.
pub fn power_normalize(z: &[f64]) -> Result<NormalizedSignal> {
    let energy: f64 = z.iter().map(|v| v * v).sum();
    if z.is_empty() || !(energy > 0.0) || !energy.is_finite() {
        return Err(Error::Degenerate("cannot normalize a zero or non-finite signal".into()));
    }
    let gamma = 1.0 / (energy / z.len() as f64).sqrt();
    Ok(NormalizedSignal { values: z.iter().map(|v| gamma * v).collect(), gamma })
}

/// Adds zero-mean Gaussian noise of the model's per-component variance.
pub fn awgn_apply(signal: &[f64], noise_var: f64, model: ChannelModel, rng: &mut RngStream) -> Result<Vec<f64>> {
    if !(noise_var >= 0.0) || !noise_var.is_finite() {
        return Err(param(format!("noise variance must be finite and >= 0 (got {noise_var})")));
    }
    if noise_var == 0.0 {
        return Ok(signal.to_vec());
    }
    let sd = effective_noise_var(noise_var, model).sqrt();
    Ok(signal.iter().map(|v| v + sd * standard_normal(rng)).collect())
}

/// 10·log10(Σ‖sent‖² / Σ‖received − sent‖²); +∞ when no noise was added.
pub fn measure_snr(sent: &[Vec<f64>], received: &[Vec<f64>]) -> Result<f64> {
    if sent.len() != received.len() || sent.iter().zip(received).any(|(a, b)| a.len() != b.len()) {
        return Err(param("sent and received batches differ in shape"));
    }
    let mut signal = 0.0;
    let mut noise = 0.0;
    for (a, b) in sent.iter().zip(received) {
        for (x, y) in a.iter().zip(b) {
            signal += x * x;
            noise += (y - x) * (y - x);
        }
    }
    if noise == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (signal / noise).log10())
}
