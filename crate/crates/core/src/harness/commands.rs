//! The harness subcommands. Each writes its CSV into the output directory
//! and reports whether its tolerance checks held.

use std::fs;
use std::path::{Path, PathBuf};

use super::config::ExperimentConfig;
use super::plot::{emit_svg_plot, PlotSpec};
use super::report::{write_rows, LossRow, Prop1Row, ResultRow, RowWriter};
use super::selftest;
use crate::analysis::{validate_prop1, SplitConfig, ValidationReport};
use crate::error::{Error, Result};
use crate::mlp::{smoothed_endpoints, train_denoiser, Mlp, MlpShape, DEFAULT_TIME_FREQS};
use crate::pipeline::{run_baseline_random_noise, run_trial, DenoiseSteps, PipelineConfig};
use crate::rng::{self, ids};

pub const SWEEP_CSV: &str = "sweep.csv";
pub const SWEEP_SVG: &str = "sweep.svg";
pub const ABLATION_CSV: &str = "ablation.csv";
pub const PROP1_CSV: &str = "prop1.csv";
pub const TRAIN_LOSS_CSV: &str = "train_loss.csv";
pub const CHECKPOINT_FILE: &str = "mlp.ckpt";
pub const SELFTEST_CSV: &str = "selftest.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Passed,
    ToleranceFailure,
}

impl Status {
    pub fn from_bool(ok: bool) -> Self {
        if ok {
            Status::Passed
        } else {
            Status::ToleranceFailure
        }
    }
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_TOLERANCE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

pub fn exit_code(outcome: &Result<Status>) -> i32 {
    match outcome {
        Ok(Status::Passed) => EXIT_OK,
        Ok(Status::ToleranceFailure) => EXIT_TOLERANCE,
        Err(Error::Config(_)) => EXIT_CONFIG,
        Err(_) => EXIT_RUNTIME,
    }
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub baseline: Option<bool>,
    pub plot: Option<bool>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(s) = self.seed {
            cfg.sweep.seeds = vec![s];
            cfg.ablation.seeds = vec![s];
            cfg.prop1.seed = s;
            cfg.train.seed = s;
        }
        if let Some(b) = self.baseline {
            cfg.sweep.baseline = b;
            cfg.ablation.baseline = b;
        }
        if let Some(p) = self.plot {
            cfg.output.plot = p;
        }
        if let Some(o) = &self.out {
            cfg.output.dir = Some(o.clone());
        }
    }
}

fn prepare_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

pub fn cmd_verify_prop1(cfg: &ExperimentConfig, out_dir: &Path) -> Result<(Status, ValidationReport)> {
    prepare_dir(out_dir)?;
    let setup = cfg.diffusion_setup()?;
    let source = cfg.prop1_source()?;
    let denoiser = cfg.build_denoiser(&source)?;
    let z0 = source.sample(1, &mut rng::stream(cfg.prop1.seed, ids::SOURCE))?.remove(0);
    let report = validate_prop1(&setup.schedule, &setup.plan, &cfg.validation_setup()?, &z0, &denoiser)?;
    let rows: Vec<Prop1Row> = report.dims.iter().map(Prop1Row::from).collect();
    write_rows(
        &out_dir.join(PROP1_CSV),
        &["dim", "empirical_mean_err", "empirical_var", "predicted_var", "rel_err"],
        &rows,
    )?;
    Ok((Status::from_bool(report.passed()), report))
}

fn trial_rows(
    cfg: &ExperimentConfig,
    pipe: &PipelineConfig,
    t_b: DenoiseSteps,
    seed: u64,
    n: usize,
    baseline: bool,
    ctx: &TrialContext,
) -> Result<Vec<ResultRow>> {
    let ms = cfg.metric_settings();
    let mut rows = Vec::with_capacity(2);
    let trial = run_trial(&ctx.setup, pipe, &ctx.source, &ctx.denoiser, n, seed, &ms)?;
    rows.push(ResultRow::from_trial(pipe, t_b, seed, &trial));
    if baseline {
        let base = run_baseline_random_noise(&ctx.setup, pipe, &ctx.source, &ctx.denoiser, n, seed, &ms)?;
        rows.push(ResultRow::from_trial(pipe, t_b, seed, &base));
    }
    Ok(rows)
}

struct TrialContext {
    setup: crate::pipeline::DiffusionSetup,
    source: crate::denoiser::GaussianMixture,
    denoiser: Box<dyn crate::denoiser::Denoiser>,
}

impl TrialContext {
    fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let source = cfg.source.build()?;
        let denoiser = cfg.build_denoiser(&source)?;
        Ok(Self { setup: cfg.diffusion_setup()?, source, denoiser })
    }
}

/// SNR × seed grid of the configured pipeline (and optionally the
/// random-noise baseline). Rows are written as soon as each cell finishes.
pub fn cmd_sweep(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<ResultRow>> {
    prepare_dir(out_dir)?;
    let ctx = TrialContext::new(cfg)?;
    let mut out = RowWriter::create(&out_dir.join(SWEEP_CSV))?;
    let mut all = Vec::new();
    for &snr in &cfg.sweep.snr_db {
        let pipe = cfg.pipeline_config(snr)?;
        for &seed in &cfg.sweep.seeds {
            for row in trial_rows(cfg, &pipe, pipe.t_b, seed, cfg.sweep.n, cfg.sweep.baseline, &ctx)? {
                out.write(&row)?;
                all.push(row);
            }
        }
    }
    if cfg.output.plot {
        let svg = emit_svg_plot(&all, &PlotSpec::new(&cfg.output.plot_metric))?;
        fs::write(out_dir.join(SWEEP_SVG), svg)?;
    }
    Ok(all)
}

/// Split × T_B grid at a fixed SNR, plus the random-noise baseline for the
/// configured pipeline.
pub fn cmd_ablate(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<ResultRow>> {
    prepare_dir(out_dir)?;
    let ctx = TrialContext::new(cfg)?;
    let ab = &cfg.ablation;
    let mut out = RowWriter::create(&out_dir.join(ABLATION_CSV))?;
    let mut all = Vec::new();
    let base_pipe = cfg.pipeline_config(ab.snr_db)?;
    for &[t_f1, t_f2] in &ab.splits {
        for spec in &ab.t_b {
            let t_b = spec.resolve();
            let pipe = PipelineConfig { split: SplitConfig::new(t_f1, t_f2), t_b, ..base_pipe.clone() };
            for &seed in &ab.seeds {
                for row in trial_rows(cfg, &pipe, t_b, seed, ab.n, false, &ctx)? {
                    out.write(&row)?;
                    all.push(row);
                }
            }
        }
    }
    if ab.baseline {
        let ms = cfg.metric_settings();
        for &seed in &ab.seeds {
            let base = run_baseline_random_noise(&ctx.setup, &base_pipe, &ctx.source, &ctx.denoiser, ab.n, seed, &ms)?;
            let row = ResultRow::from_trial(&base_pipe, base_pipe.t_b, seed, &base);
            out.write(&row)?;
            all.push(row);
        }
    }
    Ok(all)
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub checkpoint: PathBuf,
}

/// Window over which the first and last losses are averaged.
pub const LOSS_WINDOW: usize = 10;

/// Trains the MLP on the configured source; writes the checkpoint and the
/// loss trace. The trace is flushed even when training diverges.
pub fn cmd_train(cfg: &ExperimentConfig, out_dir: &Path) -> Result<(Status, TrainSummary)> {
    prepare_dir(out_dir)?;
    let source = cfg.source.build()?;
    let schedule = cfg.schedule()?;
    let t = &cfg.train;
    let shape = MlpShape {
        d: source.dim(),
        hidden: t.hidden,
        labels: if t.labels { source.component_count() } else { 0 },
        freqs: DEFAULT_TIME_FREQS,
    };
    let model = Mlp::init_with_freqs(shape, &mut rng::stream(t.seed, ids::INIT))?;
    let write_trace = |losses: &[f64]| {
        let rows: Vec<LossRow> = losses.iter().enumerate().map(|(iteration, &loss)| LossRow { iteration, loss }).collect();
        write_rows(&out_dir.join(TRAIN_LOSS_CSV), &["iteration", "loss"], &rows)
    };
    let outcome = match train_denoiser(model, &source, &schedule, &t.train_config()) {
        Ok(o) => o,
        Err(Error::Divergence { iteration, loss, trace }) => {
            write_trace(&trace)?;
            return Err(Error::Divergence { iteration, loss, trace });
        }
        Err(e) => return Err(e),
    };
    write_trace(&outcome.losses)?;
    let checkpoint = out_dir.join(CHECKPOINT_FILE);
    outcome.model.save(&checkpoint)?;
    let (initial_loss, final_loss) = smoothed_endpoints(&outcome.losses, LOSS_WINDOW);
    Ok((Status::from_bool(final_loss.is_finite()), TrainSummary { initial_loss, final_loss, checkpoint }))
}

pub fn cmd_selftest(out_dir: &Path) -> Result<(Status, Vec<selftest::CheckRow>)> {
    prepare_dir(out_dir)?;
    let rows = selftest::run_all()?;
    write_rows(&out_dir.join(SELFTEST_CSV), &["check", "value", "threshold", "passed"], &rows)?;
    Ok((Status::from_bool(rows.iter().all(|r| r.passed)), rows))
}
