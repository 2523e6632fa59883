//! C ABI over the gensemcom simulator.
//!
//! Every function returns a [`GscStatus`]; results are written through out
//! pointers. Objects are opaque handles created by `*_new` functions and
//! released with the matching `*_free`. On failure the message is kept per
//! thread and can be read with [`gsc_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use gensemcom::analysis::{compute_noise_budget, select_denoise_steps, validate_prop1, SplitConfig};
use gensemcom::denoiser::{Denoiser, GaussianMixture};
use gensemcom::harness::ExperimentConfig;
use gensemcom::pipeline::{run_baseline_random_noise, run_trial, DiffusionSetup};
use gensemcom::rng::{ids, stream};
use gensemcom::schedule::{NoiseSchedule, ScheduleKind, StridePlan};
use gensemcom::Error;

/// Status code returned by every exported function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GscStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidParameter = 2,
    Degenerate = 3,
    Config = 4,
    Checkpoint = 5,
    Io = 6,
    Divergence = 7,
    Consistency = 8,
    Utf8 = 9,
    Panic = 10,
}

/// Schedule family accepted by [`gsc_schedule_new`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GscScheduleKind {
    Linear = 0,
    ScaledLinear = 1,
}

/// Noise schedule together with its K-step stride plan.
pub struct GscSchedule {
    schedule: NoiseSchedule,
    plan: StridePlan,
}

/// Parsed experiment configuration.
pub struct GscConfig {
    inner: ExperimentConfig,
}

/// Configuration with its source, denoiser and schedule built once.
pub struct GscSimulator {
    cfg: ExperimentConfig,
    setup: DiffusionSetup,
    source: GaussianMixture,
    denoiser: Box<dyn Denoiser>,
}

/// Received-latent noise budget for one split.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GscNoiseBudget {
    pub sigma_eps2: f64,
    pub sigma_n2: f64,
    pub sigma_tot2: f64,
    pub mean_coeff: f64,
}

/// Aggregate outcome of one trial.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GscTrialResult {
    pub mse: f64,
    pub nmse: f64,
    pub sw2: f64,
    pub mmd2: f64,
    pub sigma_tot2: f64,
    pub gamma_mean: f64,
    pub t_b: usize,
    pub saturated: bool,
}

/// Summary of a Monte-Carlo check of the noise budget.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GscProp1Report {
    pub predicted_var: f64,
    pub empirical_var: f64,
    pub var_rel_err: f64,
    pub mean_coverage: f64,
    pub passed: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_last_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(err: &Error) -> GscStatus {
    match err {
        Error::Parameter(_) => GscStatus::InvalidParameter,
        Error::Degenerate(_) => GscStatus::Degenerate,
        Error::Consistency(_) => GscStatus::Consistency,
        Error::Divergence { .. } => GscStatus::Divergence,
        Error::Config(_) => GscStatus::Config,
        Error::Checkpoint(_) => GscStatus::Checkpoint,
        Error::Io(_) | Error::Csv(_) => GscStatus::Io,
    }
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), (GscStatus, String)>) -> GscStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error(String::new());
            GscStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("panic inside gensemcom".into());
            GscStatus::Panic
        }
    }
}

fn lib<T>(r: gensemcom::Result<T>) -> Result<T, (GscStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (GscStatus, String) {
    (GscStatus::NullPointer, format!("{what} is null"))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, (GscStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn write<T>(p: *mut T, value: T, what: &str) -> Result<(), (GscStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    p.write(value);
    Ok(())
}

fn into_handle<T>(value: T) -> *mut T {
    Box::into_raw(Box::new(value))
}

/// Copies the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `len - 1` bytes) and returns the full message length in bytes.
/// Pass a null `buf` to query the length.
///
/// # Safety
/// `buf` must be null or point to at least `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn gsc_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Creates a noise schedule over `t_train` training steps with a `steps`-entry
/// stride plan.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for a handle.
#[no_mangle]
pub unsafe extern "C" fn gsc_schedule_new(
    kind: GscScheduleKind,
    t_train: usize,
    beta_start: f64,
    beta_end: f64,
    steps: usize,
    out: *mut *mut GscSchedule,
) -> GscStatus {
    guard(|| {
        let kind = match kind {
            GscScheduleKind::Linear => ScheduleKind::Linear,
            GscScheduleKind::ScaledLinear => ScheduleKind::ScaledLinear,
        };
        let schedule = lib(NoiseSchedule::new(kind, t_train, beta_start, beta_end))?;
        let plan = lib(schedule.stride_plan(steps))?;
        write(out, into_handle(GscSchedule { schedule, plan }), "out")
    })
}

/// Releases a schedule handle. Null is ignored.
///
/// # Safety
/// `handle` must be null or a handle from [`gsc_schedule_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gsc_schedule_free(handle: *mut GscSchedule) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Writes the cumulative signal coefficient ᾱ_t for training step `t`.
///
/// # Safety
/// `handle` must be a live schedule handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn gsc_schedule_alpha_bar(handle: *const GscSchedule, t: usize, out: *mut f64) -> GscStatus {
    guard(|| {
        let h = deref(handle, "schedule")?;
        if t > h.schedule.t_train() {
            return Err((GscStatus::InvalidParameter, format!("t = {t} exceeds {}", h.schedule.t_train())));
        }
        write(out, h.schedule.alpha_bar(t), "out")
    })
}

/// Writes the training step reached after `s` plan steps (0 for `s = 0`).
///
/// # Safety
/// `handle` must be a live schedule handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn gsc_schedule_training_step(handle: *const GscSchedule, s: usize, out: *mut usize) -> GscStatus {
    guard(|| {
        let h = deref(handle, "schedule")?;
        write(out, lib(h.plan.training_step(s))?, "out")
    })
}

/// Computes the noise budget of a received latent for split (`t_f1`, `t_f2`),
/// power scaling `gamma` and per-component channel noise `sigma_eff2`.
///
/// # Safety
/// `handle` must be a live schedule handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn gsc_noise_budget(
    handle: *const GscSchedule,
    t_f1: usize,
    t_f2: usize,
    gamma: f64,
    sigma_eff2: f64,
    out: *mut GscNoiseBudget,
) -> GscStatus {
    guard(|| {
        let h = deref(handle, "schedule")?;
        let b = lib(compute_noise_budget(&h.schedule, &h.plan, SplitConfig::new(t_f1, t_f2), gamma, sigma_eff2))?;
        let value = GscNoiseBudget {
            sigma_eps2: b.sigma_eps2,
            sigma_n2: b.sigma_n2,
            sigma_tot2: b.sigma_tot2,
            mean_coeff: b.mean_coeff,
        };
        write(out, value, "out")
    })
}

/// Selects the smallest number of decoder steps whose noise level covers
/// `sigma_tot2`; `saturated` is set when even the last plan step falls short.
///
/// # Safety
/// `handle` must be a live schedule handle; `steps` and `saturated` writable.
#[no_mangle]
pub unsafe extern "C" fn gsc_select_steps(
    handle: *const GscSchedule,
    sigma_tot2: f64,
    steps: *mut usize,
    saturated: *mut bool,
) -> GscStatus {
    guard(|| {
        let h = deref(handle, "schedule")?;
        if steps.is_null() || saturated.is_null() {
            return Err(null("out"));
        }
        let sel = lib(select_denoise_steps(&h.schedule, &h.plan, sigma_tot2))?;
        write(steps, sel.steps, "steps")?;
        write(saturated, sel.saturated, "saturated")
    })
}

/// Creates a configuration holding the built-in defaults.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for a handle.
#[no_mangle]
pub unsafe extern "C" fn gsc_config_default(out: *mut *mut GscConfig) -> GscStatus {
    guard(|| write(out, into_handle(GscConfig { inner: ExperimentConfig::default() }), "out"))
}

/// Parses a TOML configuration from a NUL-terminated UTF-8 string. Unknown
/// keys and invalid values are reported as [`GscStatus::Config`].
///
/// # Safety
/// `toml` must be a valid NUL-terminated string; `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn gsc_config_from_toml(toml: *const c_char, out: *mut *mut GscConfig) -> GscStatus {
    guard(|| {
        if toml.is_null() {
            return Err(null("toml"));
        }
        let text = CStr::from_ptr(toml).to_str().map_err(|e| (GscStatus::Utf8, e.to_string()))?;
        let inner = lib(ExperimentConfig::from_toml_str(text))?;
        write(out, into_handle(GscConfig { inner }), "out")
    })
}

/// Releases a configuration handle. Null is ignored.
///
/// # Safety
/// `handle` must be null or a config handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gsc_config_free(handle: *mut GscConfig) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Builds a simulator from a configuration; the configuration handle stays
/// owned by the caller.
///
/// # Safety
/// `config` must be a live config handle; `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn gsc_simulator_new(config: *const GscConfig, out: *mut *mut GscSimulator) -> GscStatus {
    guard(|| {
        let cfg = deref(config, "config")?.inner.clone();
        let setup = lib(cfg.diffusion_setup())?;
        let source = lib(cfg.source.build())?;
        let denoiser = lib(cfg.build_denoiser(&source))?;
        write(out, into_handle(GscSimulator { cfg, setup, source, denoiser }), "out")
    })
}

/// Releases a simulator handle. Null is ignored.
///
/// # Safety
/// `handle` must be null or a simulator handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gsc_simulator_free(handle: *mut GscSimulator) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Transmits `n` source samples at `snr_db` with the configured pipeline
/// (or the random-noise baseline when `baseline` is true) and writes the
/// aggregate metrics. Results depend only on the arguments and configuration.
///
/// # Safety
/// `sim` must be a live simulator handle; `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn gsc_simulator_run_trial(
    sim: *const GscSimulator,
    snr_db: f64,
    baseline: bool,
    n: usize,
    seed: u64,
    out: *mut GscTrialResult,
) -> GscStatus {
    guard(|| {
        let s = deref(sim, "simulator")?;
        let p = lib(s.cfg.pipeline_config(snr_db))?;
        let settings = s.cfg.metric_settings();
        let run = if baseline { run_baseline_random_noise } else { run_trial };
        let t = lib(run(&s.setup, &p, &s.source, &s.denoiser, n, seed, &settings))?;
        let value = GscTrialResult {
            mse: t.metrics.mse,
            nmse: t.metrics.nmse,
            sw2: t.metrics.sw2,
            mmd2: t.metrics.mmd2,
            sigma_tot2: t.budget.sigma_tot2,
            gamma_mean: t.gamma_mean,
            t_b: t.selection.steps,
            saturated: t.selection.saturated,
        };
        write(out, value, "out")
    })
}

/// Runs the configured Monte-Carlo check of the received-latent noise budget.
///
/// # Safety
/// `sim` must be a live simulator handle; `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn gsc_simulator_verify_prop1(sim: *const GscSimulator, out: *mut GscProp1Report) -> GscStatus {
    guard(|| {
        let s = deref(sim, "simulator")?;
        let source = lib(s.cfg.prop1_source())?;
        let den = lib(s.cfg.build_denoiser(&source))?;
        let z0 = lib(source.sample(1, &mut stream(s.cfg.prop1.seed, ids::SOURCE)))?.remove(0);
        let setup = lib(s.cfg.validation_setup())?;
        let r = lib(validate_prop1(&s.setup.schedule, &s.setup.plan, &setup, &z0, &den))?;
        let value = GscProp1Report {
            predicted_var: r.budget.sigma_tot2,
            empirical_var: r.pooled_var,
            var_rel_err: r.var_rel_err,
            mean_coverage: r.mean_coverage,
            passed: r.passed(),
        };
        write(out, value, "out")
    })
}
