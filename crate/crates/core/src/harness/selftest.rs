//! Fast built-in consistency checks, each against an independent
//! recomputation.

use rand::Rng;
use serde::Serialize;

use crate::analysis::{compute_noise_budget, select_denoise_steps, SplitConfig};
use crate::channel::{awgn_apply, measure_snr, ChannelModel};
use crate::denoiser::{AnalyticDenoiser, ConstantDenoiser, Denoiser, GaussianMixture, GuidanceConfig, MixtureComponent};
use crate::diffusion::{run_ddim_invert, run_ddim_sample, Latent};
use crate::error::Result;
use crate::rng::{normal_vec, stream};
use crate::schedule::{NoiseSchedule, ScheduleKind};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckRow {
    pub check: String,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

fn row(check: &str, value: f64, threshold: f64) -> CheckRow {
    CheckRow { check: check.into(), value, threshold, passed: value <= threshold }
}

/// Largest deviation between the budget's σ_ε² and its regrouped form.
pub fn budget_identity(tuples: usize, seed: u64) -> Result<f64> {
    let mut rng = stream(seed, 100);
    let mut worst: f64 = 0.0;
    for _ in 0..tuples {
        let kind = if rng.random::<bool>() { ScheduleKind::Linear } else { ScheduleKind::ScaledLinear };
        let t_train = rng.random_range(50..=1000);
        let s = match kind {
            ScheduleKind::Linear => NoiseSchedule::new(kind, t_train, 1e-4, 0.02)?,
            ScheduleKind::ScaledLinear => NoiseSchedule::new(kind, t_train, 8.5e-4, 0.012)?,
        };
        let plan = s.stride_plan(rng.random_range(1..=t_train.min(100)))?;
        let t_f1 = rng.random_range(0..=plan.k());
        let split = SplitConfig::new(t_f1, rng.random_range(0..=plan.k() - t_f1));
        let gamma = rng.random_range(0.3..2.0);
        let b = compute_noise_budget(&s, &plan, split, gamma, rng.random_range(0.0..2.0))?;
        let ab1 = s.alpha_bar(plan.training_step(split.t_f1)?);
        let regrouped = (1.0 - b.r) + gamma * gamma * b.r * (1.0 - ab1);
        worst = worst.max((b.sigma_eps2 - regrouped).abs());
    }
    Ok(worst)
}

/// Number of random noise levels where the selector disagrees with a
/// linear scan over the plan.
pub fn selector_mismatches(trials: usize, seed: u64) -> Result<usize> {
    let s = NoiseSchedule::latent_default();
    let plan = s.stride_plan(50)?;
    let mut rng = stream(seed, 101);
    let mut bad = 0;
    for _ in 0..trials {
        let target = rng.random_range(0.0..1.1);
        let got = select_denoise_steps(&s, &plan, target)?;
        let scan = (1..=plan.k()).find(|&k| 1.0 - s.alpha_bar(plan.timesteps()[k - 1]) >= target);
        let want = (scan.unwrap_or(plan.k()), scan.is_none());
        if (got.steps, got.saturated) != want {
            bad += 1;
        }
    }
    Ok(bad)
}

/// Worst component error of invert-then-sample under a constant predictor.
pub fn constant_round_trip(trials: usize, seed: u64) -> Result<f64> {
    let s = NoiseSchedule::latent_default();
    let mut rng = stream(seed, 102);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let d = 6;
        let den = ConstantDenoiser::new(normal_vec(&mut rng, d));
        let z = normal_vec(&mut rng, d);
        let k = rng.random_range(1..=60);
        let stride = rng.random_range(1..=1000 / k);
        let up: Vec<usize> = (1..=k).map(|i| i * stride).collect();
        let down: Vec<usize> = (0..k).rev().map(|i| i * stride).collect();
        let g = GuidanceConfig::unconditional();
        let hi = run_ddim_invert(&s, &Latent::clean(z.clone()), &up, &den, &g)?;
        let back = run_ddim_sample(&s, &hi, &down, &den, &g)?;
        worst = back.values.iter().zip(&z).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
    }
    Ok(worst)
}

/// Worst relative error of the diffused mixture score against central
/// differences of the log density.
pub fn score_finite_difference(probes: usize, seed: u64) -> Result<f64> {
    let s = NoiseSchedule::latent_default();
    let mut rng = stream(seed, 103);
    let mut worst: f64 = 0.0;
    let h = 1e-5;
    for _ in 0..probes {
        let d = rng.random_range(1..=8);
        let j = rng.random_range(1..=4);
        let raw: Vec<f64> = (0..j).map(|_| rng.random_range(0.1..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let comps = raw
            .iter()
            .map(|w| MixtureComponent {
                weight: w / total,
                mean: (0..d).map(|_| rng.random_range(-2.0..2.0)).collect(),
                variance: (0..d).map(|_| rng.random_range(0.1..1.5)).collect(),
            })
            .collect();
        let g = GaussianMixture::new(comps)?;
        let ab = s.alpha_bar(rng.random_range(0..=1000));
        let z: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let score = g.score_diffused(&z, ab, None)?;
        for i in 0..d {
            let mut p = z.clone();
            let mut m = z.clone();
            p[i] += h;
            m[i] -= h;
            let fd = (g.log_density_diffused(&p, ab, None)? - g.log_density_diffused(&m, ab, None)?) / (2.0 * h);
            let scale = score[i].abs().max(1e-3);
            worst = worst.max((score[i] - fd).abs() / scale);
        }
    }
    Ok(worst)
}

/// Largest deviation of the standard-normal predictor from √(1−ᾱ_t)·z.
pub fn standard_normal_predictor(seed: u64) -> Result<f64> {
    let s = NoiseSchedule::latent_default();
    let den = AnalyticDenoiser::new(GaussianMixture::standard_normal(4)?, s.clone());
    let mut rng = stream(seed, 104);
    let mut worst: f64 = 0.0;
    for t in (0..=1000).step_by(37) {
        let z = normal_vec(&mut rng, 4);
        let eps = den.predict(&z, t, None)?;
        let c = (1.0 - s.alpha_bar(t)).sqrt();
        worst = eps.iter().zip(&z).map(|(e, x)| (e - c * x).abs()).fold(worst, f64::max);
    }
    Ok(worst)
}

/// |measured − configured| SNR in dB over a 10⁵-component batch.
pub fn channel_snr_error(snr_db: f64, seed: u64) -> Result<f64> {
    let n = 100_000;
    let x: Vec<f64> = normal_vec(&mut stream(seed, 105), n);
    let power = x.iter().map(|v| v * v).sum::<f64>() / n as f64;
    let unit: Vec<f64> = x.iter().map(|v| v / power.sqrt()).collect();
    let noise_var = crate::channel::snr_to_noise_var(snr_db);
    let y = awgn_apply(&unit, noise_var, ChannelModel::RealSimplified, &mut stream(seed, 106))?;
    Ok((measure_snr(&[unit], &[y])? - snr_db).abs())
}

pub fn run_all() -> Result<Vec<CheckRow>> {
    Ok(vec![
        row("budget_identity_max_abs", budget_identity(1000, 0)?, 1e-12),
        row("selector_vs_scan_mismatches", selector_mismatches(100, 0)? as f64, 0.0),
        row("constant_round_trip_max_abs", constant_round_trip(100, 0)?, 1e-12),
        row("score_fd_max_rel", score_finite_difference(200, 0)?, 1e-4),
        row("standard_normal_eps_max_abs", standard_normal_predictor(0)?, 1e-12),
        row("channel_snr_abs_db", channel_snr_error(5.0, 0)?, 0.2),
    ])
}
