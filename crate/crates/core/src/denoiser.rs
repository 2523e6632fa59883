//! ε-prediction contract, Gaussian-mixture sources with exact diffused
//! scores, and classifier-free guidance.

use rand::Rng;

use crate::error::{param, Error, Result};
use crate::rng::{standard_normal, RngStream};
use crate::schedule::NoiseSchedule;

/// A noise predictor ε(z, t, cond).
///
/// `cond` is a discrete label standing in for a text embedding; `None` is
/// the unconditional prediction.
pub trait Denoiser: Send + Sync {
    fn dim(&self) -> usize;

    fn predict(&self, z: &[f64], t: usize, cond: Option<usize>) -> Result<Vec<f64>>;

    /// Guided prediction. Without a label the unconditional prediction is
    /// returned unchanged, whatever the scale.
    fn predict_guided(&self, z: &[f64], t: usize, guidance: &GuidanceConfig) -> Result<Vec<f64>> {
        let uncond = self.predict(z, t, None)?;
        match guidance.cond {
            None => Ok(uncond),
            Some(label) => {
                let cond = self.predict(z, t, Some(label))?;
                guide(&uncond, &cond, guidance.scale)
            }
        }
    }
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn predict(&self, z: &[f64], t: usize, cond: Option<usize>) -> Result<Vec<f64>> {
        (**self).predict(z, t, cond)
    }
}

impl<D: Denoiser + ?Sized> Denoiser for Box<D> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn predict(&self, z: &[f64], t: usize, cond: Option<usize>) -> Result<Vec<f64>> {
        (**self).predict(z, t, cond)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceConfig {
    pub scale: f64,
    pub cond: Option<usize>,
}

impl GuidanceConfig {
    pub fn new(scale: f64, cond: Option<usize>) -> Result<Self> {
        if !(scale >= 0.0) || !scale.is_finite() {
            return Err(param(format!("guidance scale must be finite and >= 0 (got {scale})")));
        }
        Ok(Self { scale, cond })
    }

    pub fn unconditional() -> Self {
        Self { scale: 0.0, cond: None }
    }

    /// Same scale with the label removed.
    pub fn without_condition(&self) -> Self {
        Self { scale: self.scale, cond: None }
    }
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self::unconditional()
    }
}

/// ε_u + w·(ε_c − ε_u)
pub fn guide(eps_uncond: &[f64], eps_cond: &[f64], w: f64) -> Result<Vec<f64>> {
    if eps_uncond.len() != eps_cond.len() {
        return Err(param(format!(
            "guidance dimension mismatch: {} vs {}",
            eps_uncond.len(),
            eps_cond.len()
        )));
    }
    Ok(eps_uncond.iter().zip(eps_cond).map(|(u, c)| u + w * (c - u)).collect())
}

/// ε̂ = −√(1−ᾱ_t)·∇log p_t
pub fn eps_from_score(score: &[f64], schedule: &NoiseSchedule, t: usize) -> Vec<f64> {
    let s = (1.0 - schedule.alpha_bar(t)).sqrt();
    score.iter().map(|g| -s * g).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Diagonal variances.
    pub variance: Vec<f64>,
}

/// Diagonal-covariance Gaussian mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    dim: usize,
    components: Vec<MixtureComponent>,
}

impl GaussianMixture {
    pub fn new(components: Vec<MixtureComponent>) -> Result<Self> {
        let first = components.first().ok_or_else(|| param("mixture needs at least one component"))?;
        let dim = first.mean.len();
        if dim == 0 {
            return Err(param("mixture dimension must be at least 1"));
        }
        let mut total = 0.0;
        for (j, c) in components.iter().enumerate() {
            if c.mean.len() != dim || c.variance.len() != dim {
                return Err(param(format!("component {j} has inconsistent dimension")));
            }
            if !(c.weight >= 0.0) || !c.weight.is_finite() {
                return Err(param(format!("component {j} weight must be finite and >= 0")));
            }
            if c.variance.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                return Err(param(format!("component {j} variances must be positive")));
            }
            if c.mean.iter().any(|m| !m.is_finite()) {
                return Err(param(format!("component {j} mean must be finite")));
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(param(format!("mixture weights sum to {total}, expected 1")));
        }
        Ok(Self { dim, components })
    }

    pub fn standard_normal(dim: usize) -> Result<Self> {
        Self::new(vec![MixtureComponent {
            weight: 1.0,
            mean: vec![0.0; dim],
            variance: vec![1.0; dim],
        }])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }

    pub fn component_count(&self) -> usize {
        self.components.len()
    }

    /// Per-dimension variance of the whole mixture, averaged over dimensions.
    pub fn mean_variance(&self) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.dim {
            let m: f64 = self.components.iter().map(|c| c.weight * c.mean[i]).sum();
            let second: f64 = self
                .components
                .iter()
                .map(|c| c.weight * (c.variance[i] + c.mean[i] * c.mean[i]))
                .sum();
            acc += second - m * m;
        }
        acc / self.dim as f64
    }

    fn pick_component(&self, rng: &mut RngStream) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (j, c) in self.components.iter().enumerate() {
            acc += c.weight;
            if u < acc && c.weight > 0.0 {
                return j;
            }
        }
        self.components.iter().rposition(|c| c.weight > 0.0).unwrap_or(0)
    }

    /// Draws `n` labelled samples.
    pub fn sample_labelled(&self, n: usize, rng: &mut RngStream) -> Result<Vec<(usize, Vec<f64>)>> {
        if n == 0 {
            return Err(param("sample count must be at least 1"));
        }
        Ok((0..n)
            .map(|_| {
                let j = self.pick_component(rng);
                let c = &self.components[j];
                let x = c
                    .mean
                    .iter()
                    .zip(&c.variance)
                    .map(|(m, v)| m + v.sqrt() * standard_normal(rng))
                    .collect();
                (j, x)
            })
            .collect())
    }

    pub fn sample(&self, n: usize, rng: &mut RngStream) -> Result<Vec<Vec<f64>>> {
        Ok(self.sample_labelled(n, rng)?.into_iter().map(|(_, x)| x).collect())
    }

    /// The mixture after forward diffusion to step `t`: means √ᾱ_t·μ_j,
    /// variances ᾱ_t·σ²_j + 1 − ᾱ_t.
    pub fn marginal_at(&self, schedule: &NoiseSchedule, t: usize) -> Result<GaussianMixture> {
        if t > schedule.t_train() {
            return Err(param(format!("timestep {t} exceeds T_train")));
        }
        let ab = schedule.alpha_bar(t);
        let components = self
            .components
            .iter()
            .map(|c| MixtureComponent {
                weight: c.weight,
                mean: c.mean.iter().map(|m| ab.sqrt() * m).collect(),
                variance: c.variance.iter().map(|v| ab * v + (1.0 - ab)).collect(),
            })
            .collect();
        Ok(GaussianMixture { dim: self.dim, components })
    }

    fn component_log_density(c: &MixtureComponent, z: &[f64], ab: f64) -> f64 {
        let mut acc = 0.0;
        for ((zi, m), v) in z.iter().zip(&c.mean).zip(&c.variance) {
            let var = ab * v + (1.0 - ab);
            let d = zi - ab.sqrt() * m;
            acc -= 0.5 * (d * d / var + var.ln() + (2.0 * std::f64::consts::PI).ln());
        }
        acc
    }

    fn component_score<'a>(c: &'a MixtureComponent, z: &'a [f64], ab: f64) -> impl Iterator<Item = f64> + 'a {
        let s = ab.sqrt();
        z.iter()
            .zip(&c.mean)
            .zip(&c.variance)
            .map(move |((zi, m), v)| -(zi - s * m) / (ab * v + (1.0 - ab)))
    }

    /// log p(z) of this mixture, or of one component when `cond` is given.
    pub fn log_density(&self, z: &[f64], cond: Option<usize>) -> Result<f64> {
        self.log_density_diffused(z, 1.0, cond)
    }

    /// log p_t(z) of the mixture diffused to a step with cumulative retention `ab`.
    pub fn log_density_diffused(&self, z: &[f64], ab: f64, cond: Option<usize>) -> Result<f64> {
        self.check_point(z, cond)?;
        if let Some(j) = cond {
            return Ok(Self::component_log_density(&self.components[j], z, ab));
        }
        let logs: Vec<f64> = self
            .components
            .iter()
            .filter(|c| c.weight > 0.0)
            .map(|c| c.weight.ln() + Self::component_log_density(c, z, ab))
            .collect();
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Ok(max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln())
    }

    /// ∇_z log p(z).
    pub fn score(&self, z: &[f64], cond: Option<usize>) -> Result<Vec<f64>> {
        self.score_diffused(z, 1.0, cond)
    }

    /// ∇_z log p_t(z) for the mixture diffused to retention `ab`, with
    /// responsibilities computed by log-sum-exp.
    pub fn score_diffused(&self, z: &[f64], ab: f64, cond: Option<usize>) -> Result<Vec<f64>> {
        self.check_point(z, cond)?;
        if let Some(j) = cond {
            return Ok(Self::component_score(&self.components[j], z, ab).collect());
        }
        let active: Vec<&MixtureComponent> = self.components.iter().filter(|c| c.weight > 0.0).collect();
        if active.len() == 1 {
            return Ok(Self::component_score(active[0], z, ab).collect());
        }
        let logs: Vec<f64> = active
            .iter()
            .map(|c| c.weight.ln() + Self::component_log_density(c, z, ab))
            .collect();
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let unnorm: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = unnorm.iter().sum();
        let mut out = vec![0.0; self.dim];
        for (c, u) in active.iter().zip(&unnorm) {
            let resp = u / total;
            for (o, s) in out.iter_mut().zip(Self::component_score(c, z, ab)) {
                *o += resp * s;
            }
        }
        Ok(out)
    }

    fn check_point(&self, z: &[f64], cond: Option<usize>) -> Result<()> {
        if z.len() != self.dim {
            return Err(param(format!("point has dimension {}, mixture has {}", z.len(), self.dim)));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(param("point has non-finite entries"));
        }
        if let Some(j) = cond {
            if j >= self.components.len() {
                return Err(param(format!("label {j} out of range for {} components", self.components.len())));
            }
        }
        Ok(())
    }
}

/// Exact ε-predictor for a Gaussian-mixture source: ε̂ = −√(1−ᾱ_t)·∇log p_t.
#[derive(Debug, Clone)]
pub struct AnalyticDenoiser {
    source: GaussianMixture,
    schedule: NoiseSchedule,
}

impl AnalyticDenoiser {
    pub fn new(source: GaussianMixture, schedule: NoiseSchedule) -> Self {
        Self { source, schedule }
    }

    pub fn source(&self) -> &GaussianMixture {
        &self.source
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    /// ∇_z log p_t(z | cond).
    pub fn score(&self, z: &[f64], t: usize, cond: Option<usize>) -> Result<Vec<f64>> {
        if t > self.schedule.t_train() {
            return Err(param(format!("timestep {t} exceeds T_train")));
        }
        self.source.score_diffused(z, self.schedule.alpha_bar(t), cond)
    }
}

impl Denoiser for AnalyticDenoiser {
    fn dim(&self) -> usize {
        self.source.dim()
    }

    fn predict(&self, z: &[f64], t: usize, cond: Option<usize>) -> Result<Vec<f64>> {
        let score = self.score(z, t, cond)?;
        Ok(eps_from_score(&score, &self.schedule, t))
    }
}

/// Predicts the same vector everywhere. DDIM steps are exactly invertible
/// under a state-independent prediction.
#[derive(Debug, Clone)]
pub struct ConstantDenoiser {
    value: Vec<f64>,
}

impl ConstantDenoiser {
    pub fn new(value: Vec<f64>) -> Self {
        Self { value }
    }

    pub fn zeros(dim: usize) -> Self {
        Self { value: vec![0.0; dim] }
    }
}

impl Denoiser for ConstantDenoiser {
    fn dim(&self) -> usize {
        self.value.len()
    }

    fn predict(&self, z: &[f64], _t: usize, _cond: Option<usize>) -> Result<Vec<f64>> {
        if z.len() != self.value.len() {
            return Err(Error::Parameter(format!(
                "input dimension {} does not match denoiser dimension {}",
                z.len(),
                self.value.len()
            )));
        }
        Ok(self.value.clone())
    }
}
