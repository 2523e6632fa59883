//! Diffusion noise schedules and jump-sampling stride plans.
//!
//! Indexing follows the training convention: `betas[t-1]` is β_t for
//! t in 1..=T, and `alpha_bars[t]` is ᾱ_t with ᾱ_0 = 1.

use serde::{Deserialize, Serialize};

use crate::error::{param, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Linear,
    ScaledLinear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

pub const DEFAULT_T_TRAIN: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 8.5e-4;
pub const DEFAULT_BETA_END: f64 = 0.012;

impl NoiseSchedule {
    pub fn new(kind: ScheduleKind, t_train: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if t_train == 0 {
            return Err(param("t_train must be at least 1"));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(param(format!(
                "beta range must satisfy 0 < beta_start <= beta_end < 1 (got {beta_start}, {beta_end})"
            )));
        }
        let frac = |i: usize| {
            if t_train == 1 {
                0.0
            } else {
                i as f64 / (t_train - 1) as f64
            }
        };
        let betas: Vec<f64> = (0..t_train)
            .map(|i| match kind {
                ScheduleKind::Linear => beta_start + frac(i) * (beta_end - beta_start),
                ScheduleKind::ScaledLinear => {
                    let (lo, hi) = (beta_start.sqrt(), beta_end.sqrt());
                    let s = lo + frac(i) * (hi - lo);
                    s * s
                }
            })
            .collect();
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(t_train + 1);
        alpha_bars.push(1.0);
        for &a in &alphas {
            let prev = *alpha_bars.last().unwrap();
            alpha_bars.push(prev * a);
        }
        Ok(Self { kind, betas, alphas, alpha_bars })
    }

    /// The latent-diffusion default: scaled_linear, 1000 steps, β in [8.5e-4, 0.012].
    pub fn latent_default() -> Self {
        Self::new(ScheduleKind::ScaledLinear, DEFAULT_T_TRAIN, DEFAULT_BETA_START, DEFAULT_BETA_END)
            .expect("default schedule parameters are valid")
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn t_train(&self) -> usize {
        self.betas.len()
    }

    /// β_t for t in 1..=T.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// α_t = 1 − β_t for t in 1..=T.
    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// ᾱ_t for t in 0..=T.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    fn check_index(&self, t: usize) -> Result<()> {
        if t > self.t_train() {
            return Err(param(format!("timestep {t} exceeds T_train = {}", self.t_train())));
        }
        Ok(())
    }

    /// r = ᾱ_{t_hi} / ᾱ_{t_lo}, the signal retention between two timesteps.
    pub fn alpha_bar_ratio(&self, t_lo: usize, t_hi: usize) -> Result<f64> {
        self.check_index(t_hi)?;
        if t_lo > t_hi {
            return Err(param(format!("t_lo = {t_lo} is above t_hi = {t_hi}")));
        }
        if t_lo == t_hi {
            return Ok(1.0);
        }
        Ok(self.alpha_bars[t_hi] / self.alpha_bars[t_lo])
    }

    /// Uniform-stride plan of `k` scheduler steps over the training steps.
    pub fn stride_plan(&self, k: usize) -> Result<StridePlan> {
        StridePlan::uniform(self.t_train(), k)
    }
}

/// Maps scheduler steps 1..=K onto training steps. Scheduler step 0 is the
/// clean latent (training step 0).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StridePlan {
    timesteps: Vec<usize>,
}

impl StridePlan {
    pub fn uniform(t_train: usize, k: usize) -> Result<Self> {
        if k == 0 || k > t_train {
            return Err(param(format!("step count K = {k} must lie in 1..={t_train}")));
        }
        let mut timesteps: Vec<usize> = Vec::with_capacity(k);
        for i in 1..=k {
            // round-half-up of i·T/K in exact integer arithmetic
            let t = (2 * i * t_train + k) / (2 * k);
            if t == 0 || timesteps.last() == Some(&t) {
                return Err(param(format!("K = {k} cannot be honored on {t_train} training steps")));
            }
            timesteps.push(t);
        }
        Ok(Self { timesteps })
    }

    pub fn from_timesteps(timesteps: Vec<usize>, t_train: usize) -> Result<Self> {
        if timesteps.is_empty() {
            return Err(param("stride plan must contain at least one step"));
        }
        if timesteps[0] == 0 || timesteps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(param("stride plan must be strictly increasing and start above 0"));
        }
        if *timesteps.last().unwrap() > t_train {
            return Err(param("stride plan exceeds T_train"));
        }
        Ok(Self { timesteps })
    }

    /// Scheduler step count K.
    pub fn k(&self) -> usize {
        self.timesteps.len()
    }

    pub fn timesteps(&self) -> &[usize] {
        &self.timesteps
    }

    /// Training step of scheduler step `s` (0 maps to 0).
    pub fn training_step(&self, s: usize) -> Result<usize> {
        match s {
            0 => Ok(0),
            s if s <= self.k() => Ok(self.timesteps[s - 1]),
            s => Err(param(format!("scheduler step {s} exceeds K = {}", self.k()))),
        }
    }

    /// Ascending training steps visited when moving from scheduler step
    /// `from` up to `to` (exclusive of `from`).
    pub fn ascending(&self, from: usize, to: usize) -> Result<Vec<usize>> {
        if from > to {
            return Err(param(format!("ascending range {from}..{to} is reversed")));
        }
        (from + 1..=to).map(|s| self.training_step(s)).collect()
    }

    /// Descending training steps visited when sampling down from scheduler
    /// step `from` to the clean latent, ending with 0.
    pub fn descending_to_zero(&self, from: usize) -> Result<Vec<usize>> {
        self.training_step(from)?;
        (0..from).rev().map(|s| self.training_step(s)).collect()
    }
}
