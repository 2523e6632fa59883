//! Forward noising, deterministic DDIM sampling and DDIM inversion over
//! arbitrary strides. ᾱ is the cumulative product throughout.

use serde::{Deserialize, Serialize};

use crate::denoiser::{Denoiser, GuidanceConfig};
use crate::error::{param, Result};
use crate::rng::{standard_normal, RngStream};
use crate::schedule::NoiseSchedule;

/// A latent vector tagged with the training step it nominally sits at.
#[derive(Debug, Clone, PartialEq)]
pub struct Latent {
    pub values: Vec<f64>,
    pub t: usize,
}

impl Latent {
    pub fn new(values: Vec<f64>, t: usize) -> Self {
        Self { values, t }
    }

    pub fn clean(values: Vec<f64>) -> Self {
        Self { values, t: 0 }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// √r·z + √(1−r)·ε with r = ᾱ_{t_to}/ᾱ_{z.t}.
pub fn forward_reparam(schedule: &NoiseSchedule, z: &Latent, t_to: usize, rng: &mut RngStream) -> Result<Latent> {
    if t_to < z.t {
        return Err(param(format!("forward target {t_to} is below current step {}", z.t)));
    }
    let r = schedule.alpha_bar_ratio(z.t, t_to)?;
    if t_to == z.t {
        return Ok(z.clone());
    }
    let (a, b) = (r.sqrt(), (1.0 - r).sqrt());
    let values = z.values.iter().map(|v| a * v + b * standard_normal(rng)).collect();
    Ok(Latent::new(values, t_to))
}

/// Forward noising with a caller-supplied ε, for tests and replay.
pub fn forward_with_noise(schedule: &NoiseSchedule, z: &Latent, t_to: usize, eps: &[f64]) -> Result<Latent> {
    if t_to < z.t {
        return Err(param(format!("forward target {t_to} is below current step {}", z.t)));
    }
    if eps.len() != z.dim() {
        return Err(param("noise dimension mismatch"));
    }
    let r = schedule.alpha_bar_ratio(z.t, t_to)?;
    let (a, b) = (r.sqrt(), (1.0 - r).sqrt());
    let values = z.values.iter().zip(eps).map(|(v, e)| a * v + b * e).collect();
    Ok(Latent::new(values, t_to))
}

fn guided_eps<D: Denoiser + ?Sized>(denoiser: &D, z: &Latent, guidance: &GuidanceConfig) -> Result<Vec<f64>> {
    let eps = denoiser.predict_guided(&z.values, z.t, guidance)?;
    if eps.len() != z.dim() {
        return Err(param(format!("denoiser returned dimension {}, expected {}", eps.len(), z.dim())));
    }
    Ok(eps)
}

/// Moves `z` from step `z.t` to `t_to` along the deterministic DDIM path
/// defined by prediction `eps`: predict z₀ then re-noise with the same ε.
fn ddim_transfer(schedule: &NoiseSchedule, z: &Latent, t_to: usize, eps: &[f64]) -> Latent {
    let ab_from = schedule.alpha_bar(z.t);
    let ab_to = schedule.alpha_bar(t_to);
    let (s_from, n_from) = (ab_from.sqrt(), (1.0 - ab_from).sqrt());
    let (s_to, n_to) = (ab_to.sqrt(), (1.0 - ab_to).sqrt());
    let values = z
        .values
        .iter()
        .zip(eps)
        .map(|(v, e)| s_to * ((v - n_from * e) / s_from) + n_to * e)
        .collect();
    Latent::new(values, t_to)
}

/// One deterministic DDIM sampling jump from `z.t` down to `t_prev`.
pub fn ddim_sample_step<D: Denoiser + ?Sized>(
    schedule: &NoiseSchedule,
    z: &Latent,
    t_prev: usize,
    denoiser: &D,
    guidance: &GuidanceConfig,
) -> Result<Latent> {
    if t_prev >= z.t {
        return Err(param(format!("sampling target {t_prev} is not below current step {}", z.t)));
    }
    let eps = guided_eps(denoiser, z, guidance)?;
    Ok(ddim_transfer(schedule, z, t_prev, &eps))
}

/// Sampling step that also accepts `t_prev == z.t`, where it is the identity.
#[doc(hidden)]
pub fn ddim_sample_step_unchecked<D: Denoiser + ?Sized>(
    schedule: &NoiseSchedule,
    z: &Latent,
    t_prev: usize,
    denoiser: &D,
    guidance: &GuidanceConfig,
) -> Result<Latent> {
    if t_prev > z.t {
        return Err(param("sampling target above current step"));
    }
    let eps = guided_eps(denoiser, z, guidance)?;
    Ok(ddim_transfer(schedule, z, t_prev, &eps))
}

/// One DDIM inversion jump from `z.t` up to `t_next`, using the prediction
/// at the current step.
pub fn ddim_invert_step<D: Denoiser + ?Sized>(
    schedule: &NoiseSchedule,
    z: &Latent,
    t_next: usize,
    denoiser: &D,
    guidance: &GuidanceConfig,
) -> Result<Latent> {
    if t_next <= z.t {
        return Err(param(format!("inversion target {t_next} is not above current step {}", z.t)));
    }
    if t_next > schedule.t_train() {
        return Err(param(format!("inversion target {t_next} exceeds T_train")));
    }
    let eps = guided_eps(denoiser, z, guidance)?;
    Ok(ddim_transfer(schedule, z, t_next, &eps))
}

/// Folds sampling steps over a strictly descending plan ending at 0.
pub fn run_ddim_sample<D: Denoiser + ?Sized>(
    schedule: &NoiseSchedule,
    z: &Latent,
    plan: &[usize],
    denoiser: &D,
    guidance: &GuidanceConfig,
) -> Result<Latent> {
    if plan.is_empty() {
        return Ok(z.clone());
    }
    if plan[0] >= z.t || plan.windows(2).any(|w| w[1] >= w[0]) || *plan.last().unwrap() != 0 {
        return Err(param(format!(
            "sampling plan must descend strictly from below {} to 0 (got {plan:?})",
            z.t
        )));
    }
    let mut cur = z.clone();
    for &t in plan {
        cur = ddim_sample_step(schedule, &cur, t, denoiser, guidance)?;
    }
    Ok(cur)
}

/// Folds inversion steps over a strictly ascending plan starting above `z.t`.
pub fn run_ddim_invert<D: Denoiser + ?Sized>(
    schedule: &NoiseSchedule,
    z: &Latent,
    plan: &[usize],
    denoiser: &D,
    guidance: &GuidanceConfig,
) -> Result<Latent> {
    if plan.is_empty() {
        return Ok(z.clone());
    }
    if plan[0] <= z.t || plan.windows(2).any(|w| w[1] <= w[0]) {
        return Err(param(format!(
            "inversion plan must ascend strictly from above {} (got {plan:?})",
            z.t
        )));
    }
    let mut cur = z.clone();
    for &t in plan {
        cur = ddim_invert_step(schedule, &cur, t, denoiser, guidance)?;
    }
    Ok(cur)
}

/// How a latent is pushed to higher noise levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForwardMode {
    /// Deterministic DDIM inversion with the denoiser.
    DdimInversion,
    /// Reparameterized forward noising with fresh Gaussian noise.
    Stochastic,
}

impl ForwardMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ForwardMode::DdimInversion => "ddim_inversion",
            ForwardMode::Stochastic => "stochastic",
        }
    }
}

/// Walks `z` up through the ascending training steps in `plan` using `mode`.
/// The stochastic walk draws fresh noise at every plan step.
pub fn advance<D: Denoiser + ?Sized>(
    schedule: &NoiseSchedule,
    z: &Latent,
    plan: &[usize],
    mode: ForwardMode,
    denoiser: &D,
    guidance: &GuidanceConfig,
    rng: &mut RngStream,
) -> Result<Latent> {
    match mode {
        ForwardMode::DdimInversion => run_ddim_invert(schedule, z, plan, denoiser, guidance),
        ForwardMode::Stochastic => {
            if plan.first().is_some_and(|&t| t <= z.t) || plan.windows(2).any(|w| w[1] <= w[0]) {
                return Err(param(format!("forward plan must ascend strictly from above {} (got {plan:?})", z.t)));
            }
            let mut cur = z.clone();
            for &t in plan {
                cur = forward_reparam(schedule, &cur, t, rng)?;
            }
            Ok(cur)
        }
    }
}
