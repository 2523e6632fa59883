//! Experiment configuration: a sectioned TOML file. Every section and key
//! is optional; unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{GammaMode, SplitConfig, ValidationSetup, MIN_VALIDATION_SAMPLES};
use crate::channel::{ChannelConfig, ChannelModel};
use crate::denoiser::{AnalyticDenoiser, Denoiser, GaussianMixture, GuidanceConfig, MixtureComponent};
use crate::diffusion::ForwardMode;
use crate::error::{Error, Result};
use crate::metrics::MetricSettings;
use crate::mlp::{Mlp, Optimizer, TrainConfig};
use crate::pipeline::{DenoiseSteps, DiffusionSetup, PipelineConfig};
use crate::schedule::{NoiseSchedule, ScheduleKind};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "GENSEMCOM_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "gensemcom-out";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schedule: ScheduleSection,
    pub source: SourceSection,
    pub denoiser: DenoiserSection,
    pub pipeline: PipelineSection,
    pub guidance: GuidanceSection,
    pub channel: ChannelSection,
    pub sweep: SweepSection,
    pub ablation: AblationSection,
    pub prop1: Prop1Section,
    pub train: TrainSection,
    pub metrics: MetricsSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    pub kind: ScheduleKind,
    pub t_train: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    /// Scheduler steps K of the stride plan.
    pub steps: usize,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self { kind: ScheduleKind::ScaledLinear, t_train: 1000, beta_start: 0.00085, beta_end: 0.012, steps: 50 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    /// Three-cluster mixture with ±1 means and within-cluster variance 0.2.
    Toy,
    StandardNormal,
    Mixture,
}

/// A scalar broadcast over all dimensions, or one value per dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Values {
    Scalar(f64),
    PerDim(Vec<f64>),
}

impl Values {
    fn len(&self) -> Option<usize> {
        match self {
            Values::Scalar(_) => None,
            Values::PerDim(v) => Some(v.len()),
        }
    }

    fn expand(&self, d: usize) -> Vec<f64> {
        match self {
            Values::Scalar(x) => vec![*x; d],
            Values::PerDim(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSpec {
    pub weight: f64,
    pub mean: Values,
    pub variance: Values,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceSection {
    pub kind: SourceKind,
    /// Dimension of `toy` and `standard_normal` (default 32); for
    /// `mixture` only needed when every component value is a scalar.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub components: Vec<ComponentSpec>,
}

impl Default for SourceSection {
    fn default() -> Self {
        Self { kind: SourceKind::Toy, dim: None, components: Vec::new() }
    }
}

pub const DEFAULT_SOURCE_DIM: usize = 32;
pub const TOY_WEIGHTS: [f64; 3] = [0.4, 0.35, 0.25];
pub const TOY_VARIANCE: f64 = 0.2;

/// Three clusters with ±1 sign-pattern means and variance 0.2 per
/// dimension, so the mean power per dimension is 1.2.
pub fn toy_source(d: usize) -> Result<GaussianMixture> {
    let patterns: [Box<dyn Fn(usize) -> bool>; 3] =
        [Box::new(|i| i % 2 == 0), Box::new(|i| i % 3 != 0), Box::new(move |i| i < d / 2)];
    let components = patterns
        .iter()
        .zip(TOY_WEIGHTS)
        .map(|(plus, weight)| MixtureComponent {
            weight,
            mean: (0..d).map(|i| if plus(i) { 1.0 } else { -1.0 }).collect(),
            variance: vec![TOY_VARIANCE; d],
        })
        .collect();
    GaussianMixture::new(components)
}

impl SourceSection {
    /// Builds the source; `dim_override` replaces the dimension of the
    /// parametric kinds (an explicit mixture keeps its own).
    pub fn build_with_dim(&self, dim_override: Option<usize>) -> Result<GaussianMixture> {
        let need_dim = || {
            dim_override
                .or(self.dim)
                .or(Some(DEFAULT_SOURCE_DIM))
                .filter(|&d| d > 0)
                .ok_or_else(|| Error::Config("source.dim must be a positive integer".into()))
        };
        let mixture = match self.kind {
            SourceKind::Toy => toy_source(need_dim()?),
            SourceKind::StandardNormal => GaussianMixture::standard_normal(need_dim()?),
            SourceKind::Mixture => {
                if self.components.is_empty() {
                    return Err(Error::Config("source.kind = \"mixture\" needs [[source.components]]".into()));
                }
                let lens: Vec<usize> =
                    self.components.iter().flat_map(|c| [c.mean.len(), c.variance.len()]).flatten().collect();
                let d = match (lens.first(), self.dim) {
                    (Some(&l), _) => l,
                    (None, Some(d)) => d,
                    (None, None) => {
                        return Err(Error::Config("source.dim is required when all component values are scalars".into()))
                    }
                };
                if lens.iter().any(|&l| l != d) || self.dim.is_some_and(|x| x != d) {
                    return Err(Error::Config("source component arrays disagree in dimension".into()));
                }
                GaussianMixture::new(
                    self.components
                        .iter()
                        .map(|c| MixtureComponent { weight: c.weight, mean: c.mean.expand(d), variance: c.variance.expand(d) })
                        .collect(),
                )
            }
        };
        mixture.map_err(config_err("source"))
    }

    pub fn build(&self) -> Result<GaussianMixture> {
        self.build_with_dim(None)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenoiserKind {
    Analytic,
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiserSection {
    pub kind: DenoiserKind,
    /// MLP checkpoint; relative paths resolve against the config file.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
}

impl Default for DenoiserSection {
    fn default() -> Self {
        Self { kind: DenoiserKind::Analytic, checkpoint: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedSteps {
    Auto,
    TF,
}

/// `"auto"`, `"t_f"` or a fixed step count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StepsSpec {
    Named(NamedSteps),
    Fixed(usize),
}

impl StepsSpec {
    pub fn resolve(self) -> DenoiseSteps {
        match self {
            StepsSpec::Named(NamedSteps::Auto) => DenoiseSteps::Auto,
            StepsSpec::Named(NamedSteps::TF) => DenoiseSteps::MatchForward,
            StepsSpec::Fixed(n) => DenoiseSteps::Fixed(n),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSection {
    pub t_f1: usize,
    pub t_f2: usize,
    pub t_b: StepsSpec,
    pub transmitter_mode: ForwardMode,
    pub receiver_forward_mode: ForwardMode,
    pub condition_receiver_forward: bool,
}

impl Default for PipelineSection {
    fn default() -> Self {
        Self {
            t_f1: 5,
            t_f2: 5,
            t_b: StepsSpec::Named(NamedSteps::Auto),
            transmitter_mode: ForwardMode::DdimInversion,
            receiver_forward_mode: ForwardMode::DdimInversion,
            condition_receiver_forward: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidanceSection {
    pub scale: f64,
    /// Component label used as the condition; none means unconditional.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cond: Option<usize>,
}

impl Default for GuidanceSection {
    fn default() -> Self {
        Self { scale: 6.0, cond: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelSection {
    pub snr_db: f64,
    pub model: ChannelModel,
}

impl Default for ChannelSection {
    fn default() -> Self {
        Self { snr_db: 5.0, model: ChannelModel::ComplexPaper }
    }
}

fn default_seeds() -> Vec<u64> {
    (0..20).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub snr_db: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Source draws per cell.
    pub n: usize,
    pub baseline: bool,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self { snr_db: vec![0.0, 5.0, 10.0, 15.0, 20.0], seeds: default_seeds(), n: 200, baseline: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSection {
    pub snr_db: f64,
    /// (T_F1, T_F2) pairs.
    pub splits: Vec<[usize; 2]>,
    pub t_b: Vec<StepsSpec>,
    pub seeds: Vec<u64>,
    pub n: usize,
    pub baseline: bool,
}

impl Default for AblationSection {
    fn default() -> Self {
        Self {
            snr_db: 5.0,
            splits: vec![[10, 0], [5, 5], [0, 10]],
            t_b: vec![StepsSpec::Named(NamedSteps::TF), StepsSpec::Named(NamedSteps::Auto)],
            seeds: default_seeds(),
            n: 200,
            baseline: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Prop1Section {
    pub n_samples: usize,
    /// Dimension for the parametric source kinds.
    pub dim: usize,
    pub gamma_mode: GammaMode,
    pub transmitter: ForwardMode,
    pub seed: u64,
    /// Negative control: predicts with T_F shifted by one step.
    pub misindex_alpha_bar: bool,
}

impl Default for Prop1Section {
    fn default() -> Self {
        Self {
            n_samples: 20_000,
            dim: 512,
            gamma_mode: GammaMode::PerSample,
            transmitter: ForwardMode::Stochastic,
            seed: 0,
            misindex_alpha_bar: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub hidden: usize,
    /// Feed one-hot component labels to the network.
    pub labels: bool,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub optimizer: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub label_dropout: f64,
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            hidden: 64,
            labels: false,
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            iterations: t.iterations,
            optimizer: OptimizerKind::Adam,
            beta1: t.beta1,
            beta2: t.beta2,
            epsilon: t.epsilon,
            label_dropout: t.label_dropout,
            seed: t.seed,
        }
    }
}

impl TrainSection {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            iterations: self.iterations,
            optimizer: match self.optimizer {
                OptimizerKind::Adam => Optimizer::Adam,
                OptimizerKind::Sgd => Optimizer::Sgd,
            },
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            label_dropout: self.label_dropout,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    pub projections: usize,
    pub seed: u64,
}

impl Default for MetricsSection {
    fn default() -> Self {
        let m = MetricSettings::default();
        Self { projections: m.projections, seed: m.seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    /// Output directory; falls back to $GENSEMCOM_OUT_DIR, then `gensemcom-out`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    pub plot: bool,
    /// Metric drawn in the sweep plot.
    pub plot_metric: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: None, plot: true, plot_metric: "sw2".into() }
    }
}

fn config_err(what: &'static str) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Parameter(m) | Error::Config(m) => Error::Config(format!("{what}: {m}")),
        other => other,
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file. A relative checkpoint path is
    /// made relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        if let Some(ck) = cfg.denoiser.checkpoint.as_mut() {
            if ck.is_relative() {
                if let Some(dir) = path.parent() {
                    *ck = dir.join(&*ck);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Checks every section against the module contracts without running
    /// anything expensive.
    pub fn validate(&self) -> Result<()> {
        let setup = self.diffusion_setup()?;
        let source = self.source.build()?;
        self.pipeline_config(self.channel.snr_db)?;
        self.split().validate(&setup.plan).map_err(config_err("pipeline"))?;
        if let StepsSpec::Fixed(n) = self.pipeline.t_b {
            if n == 0 || n > setup.plan.k() {
                return Err(Error::Config(format!("pipeline.t_b = {n} must lie in 1..={}", setup.plan.k())));
            }
        }
        if let Some(c) = self.guidance.cond {
            if c >= source.component_count() {
                return Err(Error::Config(format!(
                    "guidance.cond = {c} but the source has {} components",
                    source.component_count()
                )));
            }
        }
        let even = |d: usize, what: &str| -> Result<()> {
            if self.channel.model == ChannelModel::ComplexPaper && !d.is_multiple_of(2) {
                return Err(Error::Config(format!("{what} = {d} must be even for the complex channel")));
            }
            Ok(())
        };
        even(source.dim(), "source dimension")?;
        if self.denoiser.kind == DenoiserKind::Mlp && self.denoiser.checkpoint.is_none() {
            return Err(Error::Config("denoiser.kind = \"mlp\" needs denoiser.checkpoint".into()));
        }
        for s in &self.sweep.snr_db {
            ChannelConfig::new(*s, self.channel.model).map_err(config_err("sweep.snr_db"))?;
        }
        ChannelConfig::new(self.ablation.snr_db, self.channel.model).map_err(config_err("ablation.snr_db"))?;
        if self.sweep.seeds.is_empty() || self.ablation.seeds.is_empty() {
            return Err(Error::Config("seed lists must be non-empty".into()));
        }
        if self.sweep.n < 2 || self.ablation.n < 2 {
            return Err(Error::Config("n must be at least 2 per cell".into()));
        }
        for [a, b] in &self.ablation.splits {
            SplitConfig::new(*a, *b).validate(&setup.plan).map_err(config_err("ablation.splits"))?;
        }
        if self.prop1.n_samples < MIN_VALIDATION_SAMPLES {
            return Err(Error::Config(format!("prop1.n_samples must be at least {MIN_VALIDATION_SAMPLES}")));
        }
        even(self.prop1_source()?.dim(), "prop1 source dimension")?;
        if self.train.hidden == 0 {
            return Err(Error::Config("train.hidden must be positive".into()));
        }
        self.train.train_config().validate().map_err(config_err("train"))?;
        if self.metrics.projections == 0 {
            return Err(Error::Config("metrics.projections must be positive".into()));
        }
        super::plot::check_metric(&self.output.plot_metric).map_err(config_err("output.plot_metric"))?;
        Ok(())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        let s = &self.schedule;
        NoiseSchedule::new(s.kind, s.t_train, s.beta_start, s.beta_end).map_err(config_err("schedule"))
    }

    pub fn diffusion_setup(&self) -> Result<DiffusionSetup> {
        DiffusionSetup::new(self.schedule()?, self.schedule.steps).map_err(config_err("schedule.steps"))
    }

    pub fn split(&self) -> SplitConfig {
        SplitConfig::new(self.pipeline.t_f1, self.pipeline.t_f2)
    }

    pub fn guidance(&self) -> Result<GuidanceConfig> {
        GuidanceConfig::new(self.guidance.scale, self.guidance.cond).map_err(config_err("guidance"))
    }

    pub fn pipeline_config(&self, snr_db: f64) -> Result<PipelineConfig> {
        Ok(PipelineConfig {
            split: self.split(),
            t_b: self.pipeline.t_b.resolve(),
            transmitter_mode: self.pipeline.transmitter_mode,
            receiver_forward_mode: self.pipeline.receiver_forward_mode,
            guidance: self.guidance()?,
            condition_receiver_forward: self.pipeline.condition_receiver_forward,
            channel: ChannelConfig::new(snr_db, self.channel.model).map_err(config_err("channel"))?,
        })
    }

    pub fn metric_settings(&self) -> MetricSettings {
        MetricSettings { projections: self.metrics.projections, seed: self.metrics.seed }
    }

    /// Source used by the Prop-1 validator.
    pub fn prop1_source(&self) -> Result<GaussianMixture> {
        self.source.build_with_dim(Some(self.prop1.dim))
    }

    pub fn validation_setup(&self) -> Result<ValidationSetup> {
        Ok(ValidationSetup {
            split: self.split(),
            channel: ChannelConfig::new(self.channel.snr_db, self.channel.model).map_err(config_err("channel"))?,
            n_samples: self.prop1.n_samples,
            gamma_mode: self.prop1.gamma_mode,
            transmitter: self.prop1.transmitter,
            guidance: self.guidance()?,
            misindex_alpha_bar: self.prop1.misindex_alpha_bar,
            seed: self.prop1.seed,
        })
    }

    /// The configured ε-predictor for `source`.
    pub fn build_denoiser(&self, source: &GaussianMixture) -> Result<Box<dyn Denoiser>> {
        match self.denoiser.kind {
            DenoiserKind::Analytic => Ok(Box::new(AnalyticDenoiser::new(source.clone(), self.schedule()?))),
            DenoiserKind::Mlp => {
                let path = self
                    .denoiser
                    .checkpoint
                    .as_ref()
                    .ok_or_else(|| Error::Config("denoiser.kind = \"mlp\" needs denoiser.checkpoint".into()))?;
                let mlp = Mlp::load(path)?;
                if mlp.dim() != source.dim() {
                    return Err(Error::Config(format!(
                        "checkpoint dimension {} does not match source dimension {}",
                        mlp.dim(),
                        source.dim()
                    )));
                }
                Ok(Box::new(mlp))
            }
        }
    }

    /// Output directory: explicit override, then the config, then the
    /// environment, then the built-in default.
    pub fn out_dir(&self, override_dir: Option<&Path>) -> PathBuf {
        if let Some(d) = override_dir {
            return d.to_path_buf();
        }
        if let Some(d) = &self.output.dir {
            return d.clone();
        }
        match std::env::var_os(OUT_DIR_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => PathBuf::from(DEFAULT_OUT_DIR),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_source_has_power_one_point_two() {
        let s = toy_source(32).unwrap();
        assert_eq!(s.component_count(), 3);
        for c in s.components() {
            let p = c.mean.iter().zip(&c.variance).map(|(m, v)| m * m + v).sum::<f64>() / 32.0;
            assert!((p - 1.2).abs() < 1e-12);
        }
    }

    #[test]
    fn steps_spec_forms() {
        #[derive(Deserialize)]
        struct W {
            t_b: StepsSpec,
        }
        let p = |s: &str| toml::from_str::<W>(s).map(|w| w.t_b.resolve());
        assert_eq!(p("t_b = \"auto\"").unwrap(), DenoiseSteps::Auto);
        assert_eq!(p("t_b = \"t_f\"").unwrap(), DenoiseSteps::MatchForward);
        assert_eq!(p("t_b = 12").unwrap(), DenoiseSteps::Fixed(12));
        assert!(p("t_b = \"sometimes\"").is_err());
    }

    #[test]
    fn scalar_values_broadcast() {
        let cfg = ExperimentConfig::from_toml_str(
            r#"
            [source]
            kind = "mixture"
            dim = 4
            [[source.components]]
            weight = 0.5
            mean = 1.0
            variance = 0.5
            [[source.components]]
            weight = 0.5
            mean = [-1.0, 0.0, 1.0, 2.0]
            variance = 0.25
            "#,
        )
        .unwrap();
        let s = cfg.source.build().unwrap();
        assert_eq!(s.components()[0].mean, vec![1.0; 4]);
        assert_eq!(s.components()[1].variance, vec![0.25; 4]);
    }
}
