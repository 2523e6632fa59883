//! Noise budget of the split forward process, noise-matched step
//! selection, and a Monte-Carlo check of the budget.
//!
//! With r = ᾱ_{T_F}/ᾱ_{T_F1}, a latent noised to T_F1, scaled by γ, hit by
//! AWGN of per-component variance σ² and noised on to T_F is distributed as
//! N(γ√ᾱ_{T_F}·z₀, (σ_ε² + σ_n²)·I) with
//!
//!   σ_ε² = 1 − r(1 − γ²) − γ²ᾱ_{T_F},   σ_n² = r·σ².

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{awgn_apply, power_normalize, ChannelConfig};
use crate::denoiser::{Denoiser, GuidanceConfig};
use crate::diffusion::{advance, ForwardMode, Latent};
use crate::error::{param, Error, Result};
use crate::rng::{self, RngStream};
use crate::schedule::{NoiseSchedule, StridePlan};

/// Transmitter/receiver split in scheduler steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub t_f1: usize,
    pub t_f2: usize,
}

impl SplitConfig {
    pub fn new(t_f1: usize, t_f2: usize) -> Self {
        Self { t_f1, t_f2 }
    }

    pub fn total(&self) -> usize {
        self.t_f1 + self.t_f2
    }

    pub fn validate(&self, plan: &StridePlan) -> Result<()> {
        if self.total() > plan.k() {
            return Err(param(format!(
                "T_F1 + T_F2 = {} exceeds the {}-step plan",
                self.total(),
                plan.k()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseBudget {
    pub sigma_eps2: f64,
    pub sigma_n2: f64,
    pub sigma_tot2: f64,
    /// ᾱ_{T_F}/ᾱ_{T_F1}
    pub r: f64,
    pub gamma_used: f64,
    /// γ·√ᾱ_{T_F}
    pub mean_coeff: f64,
    /// Noise level of an ideal T_F-step forward process, 1 − ᾱ_{T_F}.
    pub ideal_var: f64,
}

const IDENTITY_TOL: f64 = 1e-12;

pub fn compute_noise_budget(
    schedule: &NoiseSchedule,
    plan: &StridePlan,
    split: SplitConfig,
    gamma: f64,
    sigma_eff2: f64,
) -> Result<NoiseBudget> {
    split.validate(plan)?;
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(param(format!("gamma must be positive (got {gamma})")));
    }
    if !(sigma_eff2 >= 0.0) {
        return Err(param(format!("channel noise variance must be >= 0 (got {sigma_eff2})")));
    }
    let t1 = plan.training_step(split.t_f1)?;
    let tf = plan.training_step(split.total())?;
    let ab1 = schedule.alpha_bar(t1);
    let abf = schedule.alpha_bar(tf);
    let r = schedule.alpha_bar_ratio(t1, tf)?;
    let g2 = gamma * gamma;
    let sigma_eps2 = 1.0 - r * (1.0 - g2) - g2 * abf;
    let regrouped = (1.0 - r) + g2 * r * (1.0 - ab1);
    if (sigma_eps2 - regrouped).abs() > IDENTITY_TOL * sigma_eps2.abs().max(1.0) {
        return Err(Error::Consistency(format!(
            "sigma_eps2 = {sigma_eps2} disagrees with regrouped form {regrouped}"
        )));
    }
    let sigma_n2 = r * sigma_eff2;
    Ok(NoiseBudget {
        sigma_eps2,
        sigma_n2,
        sigma_tot2: sigma_eps2 + sigma_n2,
        r,
        gamma_used: gamma,
        mean_coeff: gamma * abf.sqrt(),
        ideal_var: 1.0 - abf,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepSelection {
    /// Denoising steps T_B, in scheduler steps.
    pub steps: usize,
    /// The requested noise level exceeds the plan's largest step.
    pub saturated: bool,
}

/// Smallest scheduler step s in 1..=K with 1 − ᾱ_{plan[s]} ≥ σ_tot².
pub fn select_denoise_steps(schedule: &NoiseSchedule, plan: &StridePlan, sigma_tot2: f64) -> Result<StepSelection> {
    if !(sigma_tot2 >= 0.0) {
        return Err(param(format!("sigma_tot2 must be >= 0 (got {sigma_tot2})")));
    }
    let levels: Vec<f64> = plan.timesteps().iter().map(|&t| 1.0 - schedule.alpha_bar(t)).collect();
    let idx = levels.partition_point(|&lvl| lvl < sigma_tot2);
    if idx == levels.len() {
        return Ok(StepSelection { steps: plan.k(), saturated: true });
    }
    Ok(StepSelection { steps: idx + 1, saturated: false })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaMode {
    /// Each sample is normalized with its own γ.
    PerSample,
    /// γ fixed to 1 (no normalization).
    ForcedUnit,
}

#[derive(Debug, Clone)]
pub struct ValidationSetup {
    pub split: SplitConfig,
    pub channel: ChannelConfig,
    pub n_samples: usize,
    pub gamma_mode: GammaMode,
    /// Transmitter forward process. The budget models `Stochastic`.
    pub transmitter: ForwardMode,
    pub guidance: GuidanceConfig,
    /// Test hook: predict with T_F shifted by one scheduler step.
    pub misindex_alpha_bar: bool,
    pub seed: u64,
}

pub const MIN_VALIDATION_SAMPLES: usize = 10_000;
pub const VARIANCE_REL_TOL: f64 = 0.03;
pub const MEAN_BAND_SIGMAS: f64 = 3.0;
/// Fraction of dimensions whose mean must fall inside the band.
pub const MEAN_BAND_COVERAGE: f64 = 0.99;
const CHUNK: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct DimStat {
    pub dim: usize,
    pub mean_err: f64,
    pub var: f64,
    pub predicted_var: f64,
    pub rel_err: f64,
    pub band: f64,
}

#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub budget: NoiseBudget,
    pub dims: Vec<DimStat>,
    pub n_samples: usize,
    pub gamma_mean: f64,
    /// Empirical variance pooled over dimensions.
    pub pooled_var: f64,
    pub var_rel_err: f64,
    pub mean_coverage: f64,
    pub effective_noise_var: f64,
    pub channel_model: &'static str,
    pub transmitter: ForwardMode,
}

impl ValidationReport {
    pub fn variance_ok(&self) -> bool {
        self.var_rel_err.abs() <= VARIANCE_REL_TOL
    }

    pub fn mean_ok(&self) -> bool {
        self.mean_coverage >= MEAN_BAND_COVERAGE
    }

    pub fn passed(&self) -> bool {
        self.variance_ok() && self.mean_ok()
    }

    pub fn summary(&self) -> String {
        format!(
            "prop1 {}: transmitter={} channel={} sigma_eff2={:.6} n={} gamma_mean={:.6} \
             predicted_var={:.6} empirical_var={:.6} var_rel_err={:+.4} mean_in_band={:.4} \
             (sigma_eps2={:.6} sigma_n2={:.6})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.transmitter.as_str(),
            self.channel_model,
            self.effective_noise_var,
            self.n_samples,
            self.gamma_mean,
            self.budget.sigma_tot2,
            self.pooled_var,
            self.var_rel_err,
            self.mean_coverage,
            self.budget.sigma_eps2,
            self.budget.sigma_n2,
        )
    }
}

/// Running per-dimension moments of one chunk.
struct Moments {
    count: usize,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
    gamma_sum: f64,
}

impl Moments {
    fn new(d: usize) -> Self {
        Self { count: 0, sum: vec![0.0; d], sum_sq: vec![0.0; d], gamma_sum: 0.0 }
    }

    fn push(&mut self, x: &[f64], gamma: f64) {
        self.count += 1;
        self.gamma_sum += gamma;
        for ((s, q), v) in self.sum.iter_mut().zip(self.sum_sq.iter_mut()).zip(x) {
            *s += v;
            *q += v * v;
        }
    }

    /// Pairwise merge so the combined result does not depend on thread count.
    fn merge_all(mut parts: Vec<Moments>) -> Moments {
        while parts.len() > 1 {
            let mut next = Vec::with_capacity(parts.len().div_ceil(2));
            let mut it = parts.into_iter();
            while let Some(mut a) = it.next() {
                if let Some(b) = it.next() {
                    a.count += b.count;
                    a.gamma_sum += b.gamma_sum;
                    for (x, y) in a.sum.iter_mut().zip(b.sum) {
                        *x += y;
                    }
                    for (x, y) in a.sum_sq.iter_mut().zip(b.sum_sq) {
                        *x += y;
                    }
                }
                next.push(a);
            }
            parts = next;
        }
        parts.pop().expect("at least one chunk")
    }
}

/// Simulates the split forward process around a fixed source point `z0`
/// and compares the empirical moments with the predicted budget.
pub fn validate_prop1<D: Denoiser + ?Sized>(
    schedule: &NoiseSchedule,
    plan: &StridePlan,
    setup: &ValidationSetup,
    z0: &[f64],
    denoiser: &D,
) -> Result<ValidationReport> {
    if setup.n_samples < MIN_VALIDATION_SAMPLES {
        return Err(param(format!(
            "validation needs at least {MIN_VALIDATION_SAMPLES} samples (got {})",
            setup.n_samples
        )));
    }
    setup.split.validate(plan)?;
    let d = z0.len();
    setup.channel.symbols(d)?;
    let tx_plan = plan.ascending(0, setup.split.t_f1)?;
    let rx_plan = plan.ascending(setup.split.t_f1, setup.split.total())?;
    let noise_var = setup.channel.noise_var();
    let model = setup.channel.model;

    // Under DDIM inversion the transmitted latent is a deterministic function of z0.
    let fixed_tx = match setup.transmitter {
        ForwardMode::DdimInversion => {
            let mut unused = rng::stream(setup.seed, rng::ids::TRANSMIT_FORWARD);
            Some(advance(schedule, &Latent::clean(z0.to_vec()), &tx_plan, setup.transmitter, denoiser, &setup.guidance, &mut unused)?)
        }
        ForwardMode::Stochastic => None,
    };

    let chunks = setup.n_samples.div_ceil(CHUNK);
    let parts: Vec<Result<Moments>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng: RngStream = rng::substream(setup.seed, rng::ids::VALIDATION, c as u64);
            let count = CHUNK.min(setup.n_samples - c * CHUNK);
            let mut m = Moments::new(d);
            let clean = Latent::clean(z0.to_vec());
            for _ in 0..count {
                let z_t1 = match &fixed_tx {
                    Some(z) => z.clone(),
                    None => advance(schedule, &clean, &tx_plan, ForwardMode::Stochastic, denoiser, &setup.guidance, &mut rng)?,
                };
                let (sent, gamma) = match setup.gamma_mode {
                    GammaMode::PerSample => {
                        let n = power_normalize(&z_t1.values)?;
                        (n.values, n.gamma)
                    }
                    GammaMode::ForcedUnit => (z_t1.values, 1.0),
                };
                let y = awgn_apply(&sent, noise_var, model, &mut rng)?;
                let z_hat = advance(
                    schedule,
                    &Latent::new(y, z_t1.t),
                    &rx_plan,
                    ForwardMode::Stochastic,
                    denoiser,
                    &setup.guidance,
                    &mut rng,
                )?;
                m.push(&z_hat.values, gamma);
            }
            Ok(m)
        })
        .collect();
    let parts = parts.into_iter().collect::<Result<Vec<_>>>()?;
    let total = Moments::merge_all(parts);

    let n = total.count as f64;
    let gamma_mean = total.gamma_sum / n;
    let predict_split = if setup.misindex_alpha_bar {
        if setup.split.total() >= plan.k() {
            SplitConfig::new(setup.split.t_f1, setup.split.t_f2 - 1)
        } else {
            SplitConfig::new(setup.split.t_f1, setup.split.t_f2 + 1)
        }
    } else {
        setup.split
    };
    let budget = compute_noise_budget(schedule, plan, predict_split, gamma_mean, setup.channel.effective_noise_var())?;

    let mut dims = Vec::with_capacity(d);
    let mut in_band = 0usize;
    let mut var_acc = 0.0;
    for i in 0..d {
        let mean = total.sum[i] / n;
        let var = (total.sum_sq[i] - n * mean * mean) / (n - 1.0);
        let mean_err = mean - budget.mean_coeff * z0[i];
        let band = MEAN_BAND_SIGMAS * (var / n).sqrt();
        if mean_err.abs() <= band {
            in_band += 1;
        }
        var_acc += var;
        dims.push(DimStat {
            dim: i,
            mean_err,
            var,
            predicted_var: budget.sigma_tot2,
            rel_err: (var - budget.sigma_tot2) / budget.sigma_tot2,
            band,
        });
    }
    let pooled_var = var_acc / d as f64;
    Ok(ValidationReport {
        budget,
        dims,
        n_samples: total.count,
        gamma_mean,
        pooled_var,
        var_rel_err: (pooled_var - budget.sigma_tot2) / budget.sigma_tot2,
        mean_coverage: in_band as f64 / d as f64,
        effective_noise_var: setup.channel.effective_noise_var(),
        channel_model: setup.channel.model.as_str(),
        transmitter: setup.transmitter,
    })
}

/// Median |γ − 1| of the transmitted latent for each transmitter step count.
pub fn gamma_trend<D: Denoiser + ?Sized>(
    schedule: &NoiseSchedule,
    plan: &StridePlan,
    sources: &[Vec<f64>],
    t_f1_values: &[usize],
    mode: ForwardMode,
    denoiser: &D,
    guidance: &GuidanceConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(t_f1_values.len());
    for &t_f1 in t_f1_values {
        let tx_plan = plan.ascending(0, t_f1)?;
        let mut rng = rng::stream(seed, rng::ids::TRANSMIT_FORWARD);
        let mut devs = Vec::with_capacity(sources.len());
        for z0 in sources {
            let z = advance(schedule, &Latent::clean(z0.clone()), &tx_plan, mode, denoiser, guidance, &mut rng)?;
            devs.push((power_normalize(&z.values)?.gamma - 1.0).abs());
        }
        out.push(median(&mut devs));
    }
    Ok(out)
}

pub(crate) fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelModel;
    use crate::denoiser::{AnalyticDenoiser, GaussianMixture};

    fn setup() -> (NoiseSchedule, StridePlan) {
        let s = NoiseSchedule::latent_default();
        let p = s.stride_plan(50).unwrap();
        (s, p)
    }

    #[test]
    fn no_receiver_steps_unit_gamma() {
        let (s, p) = setup();
        let b = compute_noise_budget(&s, &p, SplitConfig::new(5, 0), 1.0, 0.2).unwrap();
        assert!((b.sigma_eps2 - (1.0 - s.alpha_bar(100))).abs() < 1e-15);
        assert_eq!(b.sigma_n2, 0.2);
        assert_eq!(b.r, 1.0);
    }

    #[test]
    fn unit_gamma_gives_ideal_level() {
        let (s, p) = setup();
        for (a, b) in [(0, 10), (5, 5), (3, 40), (50, 0)] {
            let bud = compute_noise_budget(&s, &p, SplitConfig::new(a, b), 1.0, 0.0).unwrap();
            assert!((bud.sigma_eps2 - bud.ideal_var).abs() < 1e-15);
        }
    }

    #[test]
    fn receiver_steps_shrink_channel_share() {
        let (s, p) = setup();
        let mut last = f64::INFINITY;
        for t_f2 in 0..=20 {
            let b = compute_noise_budget(&s, &p, SplitConfig::new(5, t_f2), 0.9, 0.158).unwrap();
            assert!(b.sigma_n2 < last);
            last = b.sigma_n2;
        }
    }

    #[test]
    fn budget_rejects_bad_inputs() {
        let (s, p) = setup();
        assert!(compute_noise_budget(&s, &p, SplitConfig::new(40, 11), 1.0, 0.1).is_err());
        assert!(compute_noise_budget(&s, &p, SplitConfig::new(5, 5), 0.0, 0.1).is_err());
        assert!(compute_noise_budget(&s, &p, SplitConfig::new(5, 5), 1.0, -0.1).is_err());
    }

    #[test]
    fn selector_boundaries() {
        let (s, p) = setup();
        assert_eq!(select_denoise_steps(&s, &p, 0.0).unwrap(), StepSelection { steps: 1, saturated: false });
        let exact = 1.0 - s.alpha_bar(p.training_step(17).unwrap());
        assert_eq!(select_denoise_steps(&s, &p, exact).unwrap().steps, 17);
        let top = 1.0 - s.alpha_bar(1000);
        assert_eq!(select_denoise_steps(&s, &p, top).unwrap(), StepSelection { steps: 50, saturated: false });
        assert_eq!(select_denoise_steps(&s, &p, 1.2).unwrap(), StepSelection { steps: 50, saturated: true });
        assert!(select_denoise_steps(&s, &p, f64::NAN).is_err());
    }

    #[test]
    fn selected_steps_cover_forward_steps() {
        let (s, p) = setup();
        for snr in [0.0, 5.0, 10.0, 20.0] {
            let ch = ChannelConfig::new(snr, ChannelModel::ComplexPaper).unwrap();
            let b = compute_noise_budget(&s, &p, SplitConfig::new(5, 5), 0.97, ch.effective_noise_var()).unwrap();
            let sel = select_denoise_steps(&s, &p, b.sigma_tot2).unwrap();
            assert!(sel.steps >= 10, "snr {snr}: {sel:?}");
        }
    }

    #[test]
    fn reduction_without_channel_noise() {
        let (s, p) = setup();
        let src = GaussianMixture::standard_normal(64).unwrap();
        let den = AnalyticDenoiser::new(src.clone(), s.clone());
        let z0 = src.sample(1, &mut rng::stream(3, 1)).unwrap().remove(0);
        let cfg = ValidationSetup {
            split: SplitConfig::new(5, 0),
            channel: ChannelConfig::new(400.0, ChannelModel::ComplexPaper).unwrap(),
            n_samples: 10_000,
            gamma_mode: GammaMode::ForcedUnit,
            transmitter: ForwardMode::Stochastic,
            guidance: GuidanceConfig::unconditional(),
            misindex_alpha_bar: false,
            seed: 5,
        };
        let rep = validate_prop1(&s, &p, &cfg, &z0, &den).unwrap();
        let expect = 1.0 - s.alpha_bar(100);
        assert!((rep.budget.sigma_tot2 - expect).abs() < 1e-12);
        // pooled over 64 dims of 1e4 draws: relative MC error ≈ sqrt(2/(64e4))
        let mc = (2.0 / (64.0 * 1e4f64)).sqrt();
        assert!(rep.var_rel_err.abs() < 3.0 * mc, "{}", rep.var_rel_err);
        assert!(rep.passed());
    }

    #[test]
    fn validation_needs_enough_samples() {
        let (s, p) = setup();
        let src = GaussianMixture::standard_normal(4).unwrap();
        let den = AnalyticDenoiser::new(src, s.clone());
        let cfg = ValidationSetup {
            split: SplitConfig::new(5, 5),
            channel: ChannelConfig::new(5.0, ChannelModel::ComplexPaper).unwrap(),
            n_samples: 100,
            gamma_mode: GammaMode::PerSample,
            transmitter: ForwardMode::Stochastic,
            guidance: GuidanceConfig::unconditional(),
            misindex_alpha_bar: false,
            seed: 1,
        };
        assert!(validate_prop1(&s, &p, &cfg, &[0.0; 4], &den).is_err());
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
