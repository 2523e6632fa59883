//! End-to-end transmission: DDIM-inversion encoder with power
//! normalization, AWGN channel, receiver-side forward continuation and
//! noise-matched DDIM decoding. Also the random-noise baseline that sends
//! the clean latent and noises it only at the receiver.
//!
//! The image codec is the identity, so the source latent z₀ is the input
//! and the decoded z̃₀ is the output.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{compute_noise_budget, select_denoise_steps, NoiseBudget, SplitConfig, StepSelection};
use crate::channel::{awgn_apply, power_normalize, ChannelConfig, NormalizedSignal};
use crate::denoiser::{Denoiser, GaussianMixture, GuidanceConfig};
use crate::diffusion::{advance, run_ddim_sample, ForwardMode, Latent};
use crate::error::{param, Error, Result};
use crate::metrics::{evaluate, MetricReport, MetricSettings};
use crate::rng::{self, ids};
use crate::schedule::{NoiseSchedule, StridePlan};

/// Denoising step count: fixed, or matched to the noise budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DenoiseSteps {
    Auto,
    /// T_B = T_F.
    MatchForward,
    Fixed(usize),
}

impl DenoiseSteps {
    pub fn label(&self) -> String {
        match self {
            DenoiseSteps::Auto => "auto".into(),
            DenoiseSteps::MatchForward => "t_f".into(),
            DenoiseSteps::Fixed(n) => n.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub split: SplitConfig,
    pub t_b: DenoiseSteps,
    pub transmitter_mode: ForwardMode,
    pub receiver_forward_mode: ForwardMode,
    pub guidance: GuidanceConfig,
    /// Apply the guidance label during receiver-side forward continuation.
    pub condition_receiver_forward: bool,
    pub channel: ChannelConfig,
}

/// Schedule plus the scheduler plan every step count refers to.
#[derive(Debug, Clone)]
pub struct DiffusionSetup {
    pub schedule: NoiseSchedule,
    pub plan: StridePlan,
}

impl DiffusionSetup {
    pub fn new(schedule: NoiseSchedule, k: usize) -> Result<Self> {
        let plan = schedule.stride_plan(k)?;
        Ok(Self { schedule, plan })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Proposed,
    RandomNoise,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Proposed => "proposed",
            Variant::RandomNoise => "random_noise",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionRecord {
    pub z0: Vec<f64>,
    pub z_tx: Vec<f64>,
    pub gamma: f64,
    pub y: Vec<f64>,
    pub z_hat_tf: Vec<f64>,
    pub z_tilde_0: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrialResult {
    pub variant: Variant,
    pub records: Vec<TransmissionRecord>,
    pub metrics: MetricReport,
    pub budget: NoiseBudget,
    pub selection: StepSelection,
    pub gamma_mean: f64,
}

/// Transmitter: T_F1 forward steps (DDIM inversion or stochastic), then
/// power normalization. Returns the signal and the training step reached.
pub fn encode_transmit<D: Denoiser + ?Sized>(
    setup: &DiffusionSetup,
    z0: &[f64],
    cfg: &PipelineConfig,
    denoiser: &D,
    rng: &mut rng::RngStream,
) -> Result<(NormalizedSignal, usize)> {
    cfg.split.validate(&setup.plan)?;
    let plan = setup.plan.ascending(0, cfg.split.t_f1)?;
    let z = advance(
        &setup.schedule,
        &Latent::clean(z0.to_vec()),
        &plan,
        cfg.transmitter_mode,
        denoiser,
        &cfg.guidance,
        rng,
    )?;
    Ok((power_normalize(&z.values)?, z.t))
}

/// Resolves T_B against the budget implied by the measured γ.
pub fn resolve_steps(
    setup: &DiffusionSetup,
    split: SplitConfig,
    t_b: DenoiseSteps,
    gamma: f64,
    channel: &ChannelConfig,
) -> Result<(NoiseBudget, StepSelection)> {
    let budget = compute_noise_budget(&setup.schedule, &setup.plan, split, gamma, channel.effective_noise_var())?;
    let selection = match t_b {
        DenoiseSteps::Auto => select_denoise_steps(&setup.schedule, &setup.plan, budget.sigma_tot2)?,
        DenoiseSteps::MatchForward => StepSelection { steps: split.total(), saturated: false },
        DenoiseSteps::Fixed(n) => {
            if n > setup.plan.k() {
                return Err(Error::Config(format!("T_B = {n} exceeds the {}-step plan", setup.plan.k())));
            }
            StepSelection { steps: n, saturated: false }
        }
    };
    Ok((budget, selection))
}

/// Receiver forward from the channel output and DDIM sampling for `t_b`
/// scheduler steps. `y` is taken as the latent at step T_F1 unchanged.
/// Returns (ẑ_{T_F}, z̃₀).
fn decode<D: Denoiser + ?Sized>(
    setup: &DiffusionSetup,
    y: &[f64],
    from: usize,
    to: usize,
    mode: ForwardMode,
    t_b: usize,
    denoiser: &D,
    forward_guidance: &GuidanceConfig,
    guidance: &GuidanceConfig,
    rng: &mut rng::RngStream,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let start = Latent::new(y.to_vec(), setup.plan.training_step(from)?);
    let fwd = setup.plan.ascending(from, to)?;
    let z_hat = advance(&setup.schedule, &start, &fwd, mode, denoiser, forward_guidance, rng)?;
    let tilde = Latent::new(z_hat.values.clone(), setup.plan.training_step(t_b)?);
    let down = setup.plan.descending_to_zero(t_b)?;
    let z0 = run_ddim_sample(&setup.schedule, &tilde, &down, denoiser, guidance)?;
    Ok((z_hat.values, z0.values))
}

/// Receiver: set ẑ_{T_F1} = y, continue forward for T_F2 steps, then run
/// T_B DDIM sampling steps starting from the nominal level plan[T_B].
pub fn receive_decode<D: Denoiser + ?Sized>(
    setup: &DiffusionSetup,
    y: &[f64],
    cfg: &PipelineConfig,
    t_b: usize,
    denoiser: &D,
    rng: &mut rng::RngStream,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if t_b < 1 {
        return Err(Error::Config("resolved T_B must be at least 1".into()));
    }
    cfg.split.validate(&setup.plan)?;
    let fwd_guidance = if cfg.condition_receiver_forward {
        cfg.guidance.clone()
    } else {
        cfg.guidance.without_condition()
    };
    decode(
        setup,
        y,
        cfg.split.t_f1,
        cfg.split.total(),
        cfg.receiver_forward_mode,
        t_b,
        denoiser,
        &fwd_guidance,
        &cfg.guidance,
        rng,
    )
}

fn draw_sources(source: &GaussianMixture, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    source.sample(n, &mut rng::stream(seed, ids::SOURCE))
}

fn check_trial(source: &GaussianMixture, denoiser: &(impl Denoiser + ?Sized), cfg: &PipelineConfig, n: usize) -> Result<()> {
    if n < 2 {
        return Err(param("a trial needs at least two samples for its metrics"));
    }
    if source.dim() != denoiser.dim() {
        return Err(param(format!("source dimension {} does not match denoiser {}", source.dim(), denoiser.dim())));
    }
    cfg.channel.symbols(source.dim())?;
    Ok(())
}

/// Runs the proposed system on `n` fresh source draws. Every random draw
/// comes from per-sample streams of `seed`, so results do not depend on
/// scheduling and paired runs share source draws and channel noise.
pub fn run_trial<D: Denoiser + ?Sized>(
    setup: &DiffusionSetup,
    cfg: &PipelineConfig,
    source: &GaussianMixture,
    denoiser: &D,
    n: usize,
    seed: u64,
    metric_settings: &MetricSettings,
) -> Result<TrialResult> {
    check_trial(source, denoiser, cfg, n)?;
    let z0s = draw_sources(source, n, seed)?;
    let sent: Vec<(NormalizedSignal, usize)> = z0s
        .par_iter()
        .enumerate()
        .map(|(i, z0)| {
            let mut r = rng::substream(seed, ids::TRANSMIT_FORWARD, i as u64);
            encode_transmit(setup, z0, cfg, denoiser, &mut r)
        })
        .collect::<Result<_>>()?;
    let gamma_mean = sent.iter().map(|(s, _)| s.gamma).sum::<f64>() / n as f64;
    let (budget, selection) = resolve_steps(setup, cfg.split, cfg.t_b, gamma_mean, &cfg.channel)?;

    let noise_var = cfg.channel.noise_var();
    let records: Vec<TransmissionRecord> = z0s
        .into_par_iter()
        .zip(sent)
        .enumerate()
        .map(|(i, (z0, (signal, _)))| {
            let mut ch = rng::substream(seed, ids::CHANNEL, i as u64);
            let y = awgn_apply(&signal.values, noise_var, cfg.channel.model, &mut ch)?;
            let mut rx = rng::substream(seed, ids::RECEIVE_FORWARD, i as u64);
            let (z_hat_tf, z_tilde_0) = receive_decode(setup, &y, cfg, selection.steps, denoiser, &mut rx)?;
            Ok(TransmissionRecord { z0, z_tx: signal.values, gamma: signal.gamma, y, z_hat_tf, z_tilde_0 })
        })
        .collect::<Result<_>>()?;
    finish(Variant::Proposed, records, budget, selection, gamma_mean, metric_settings)
}

/// Baseline: transmit the normalized clean latent; the receiver adds
/// T_F steps of fresh forward noise, then decodes for T_B steps. The
/// automatic T_B uses the budget of a (0, T_F) split.
pub fn run_baseline_random_noise<D: Denoiser + ?Sized>(
    setup: &DiffusionSetup,
    cfg: &PipelineConfig,
    source: &GaussianMixture,
    denoiser: &D,
    n: usize,
    seed: u64,
    metric_settings: &MetricSettings,
) -> Result<TrialResult> {
    check_trial(source, denoiser, cfg, n)?;
    let t_f = cfg.split.total();
    let split = SplitConfig::new(0, t_f);
    split.validate(&setup.plan)?;
    let z0s = draw_sources(source, n, seed)?;
    let sent: Vec<NormalizedSignal> = z0s.iter().map(|z| power_normalize(z)).collect::<Result<_>>()?;
    let gamma_mean = sent.iter().map(|s| s.gamma).sum::<f64>() / n as f64;
    let (budget, selection) = resolve_steps(setup, split, cfg.t_b, gamma_mean, &cfg.channel)?;
    if selection.steps == 0 && t_f > 0 {
        return Err(Error::Config("T_B = 0 is only meaningful without forward steps".into()));
    }

    let noise_var = cfg.channel.noise_var();
    let records: Vec<TransmissionRecord> = z0s
        .into_par_iter()
        .zip(sent)
        .enumerate()
        .map(|(i, (z0, signal))| {
            let mut ch = rng::substream(seed, ids::CHANNEL, i as u64);
            let y = awgn_apply(&signal.values, noise_var, cfg.channel.model, &mut ch)?;
            let mut rx = rng::substream(seed, ids::RECEIVE_FORWARD, i as u64);
            let (z_hat_tf, z_tilde_0) = decode(
                setup,
                &y,
                0,
                t_f,
                ForwardMode::Stochastic,
                selection.steps,
                denoiser,
                &cfg.guidance,
                &cfg.guidance,
                &mut rx,
            )?;
            Ok(TransmissionRecord { z0, z_tx: signal.values, gamma: signal.gamma, y, z_hat_tf, z_tilde_0 })
        })
        .collect::<Result<_>>()?;
    finish(Variant::RandomNoise, records, budget, selection, gamma_mean, metric_settings)
}

fn finish(
    variant: Variant,
    records: Vec<TransmissionRecord>,
    budget: NoiseBudget,
    selection: StepSelection,
    gamma_mean: f64,
    metric_settings: &MetricSettings,
) -> Result<TrialResult> {
    let decoded: Vec<Vec<f64>> = records.iter().map(|r| r.z_tilde_0.clone()).collect();
    let reference: Vec<Vec<f64>> = records.iter().map(|r| r.z0.clone()).collect();
    let metrics = evaluate(&decoded, &reference, metric_settings)?;
    Ok(TrialResult { variant, records, metrics, budget, selection, gamma_mean })
}
