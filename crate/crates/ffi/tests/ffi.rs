use std::ffi::{c_char, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use gensemcom_ffi::*;

fn last_error() -> String {
    let len = unsafe { gsc_last_error_message(ptr::null_mut(), 0) };
    let mut buf = vec![0 as c_char; len + 1];
    unsafe { gsc_last_error_message(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf[..len].iter().map(|&c| c as u8).collect();
    String::from_utf8(bytes).unwrap()
}

fn default_schedule() -> *mut GscSchedule {
    let mut h = ptr::null_mut();
    let st = unsafe { gsc_schedule_new(GscScheduleKind::ScaledLinear, 1000, 8.5e-4, 0.012, 50, &mut h) };
    assert_eq!(st, GscStatus::Ok);
    h
}

const SMALL: &str = r#"
[source]
dim = 8

[prop1]
n_samples = 10000
dim = 32
"#;

fn simulator(toml: &str) -> *mut GscSimulator {
    let text = CString::new(toml).unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { gsc_config_from_toml(text.as_ptr(), &mut cfg) }, GscStatus::Ok, "{}", last_error());
    let mut sim = ptr::null_mut();
    assert_eq!(unsafe { gsc_simulator_new(cfg, &mut sim) }, GscStatus::Ok);
    unsafe { gsc_config_free(cfg) };
    sim
}

#[test]
fn schedule_queries_match_reference_levels() {
    let h = default_schedule();
    let mut ab = 0.0;
    let mut t = 0;
    unsafe {
        assert_eq!(gsc_schedule_alpha_bar(h, 0, &mut ab), GscStatus::Ok);
        assert_eq!(ab, 1.0);
        assert_eq!(gsc_schedule_training_step(h, 5, &mut t), GscStatus::Ok);
        assert_eq!(t, 100);
        assert_eq!(gsc_schedule_alpha_bar(h, 100, &mut ab), GscStatus::Ok);
        assert!((ab - 0.8955).abs() < 5e-4);
        assert_eq!(gsc_schedule_alpha_bar(h, 1001, &mut ab), GscStatus::InvalidParameter);
        gsc_schedule_free(h);
    }
}

#[test]
fn budget_and_selector_agree() {
    let h = default_schedule();
    let mut b = GscNoiseBudget::default();
    let (mut steps, mut sat) = (0usize, true);
    let (mut ab100, mut ab200) = (0.0, 0.0);
    unsafe {
        // Noiseless channel with unit scaling: the received latent sits exactly at plan step 10.
        assert_eq!(gsc_noise_budget(h, 5, 5, 1.0, 0.0, &mut b), GscStatus::Ok);
        gsc_schedule_alpha_bar(h, 100, &mut ab100);
        gsc_schedule_alpha_bar(h, 200, &mut ab200);
        assert!((b.sigma_tot2 - (1.0 - ab200)).abs() < 1e-12);
        assert!((b.mean_coeff - ab200.sqrt()).abs() < 1e-12);
        assert_eq!(gsc_select_steps(h, b.sigma_tot2, &mut steps, &mut sat), GscStatus::Ok);
        assert_eq!((steps, sat), (10, false));
        assert_eq!(gsc_select_steps(h, 2.0, &mut steps, &mut sat), GscStatus::Ok);
        assert_eq!((steps, sat), (50, true));
        gsc_schedule_free(h);
    }
    assert!(ab100 > ab200);
}

#[test]
fn errors_set_status_and_message() {
    let mut h = ptr::null_mut();
    unsafe {
        assert_eq!(gsc_schedule_new(GscScheduleKind::Linear, 10, 1e-4, 0.02, 50, &mut h), GscStatus::InvalidParameter);
        assert!(h.is_null());
        assert!(!last_error().is_empty());
        assert_eq!(gsc_schedule_alpha_bar(ptr::null(), 0, ptr::null_mut()), GscStatus::NullPointer);
        assert!(last_error().contains("schedule"));

        let s = default_schedule();
        let mut b = GscNoiseBudget::default();
        assert_eq!(gsc_noise_budget(s, 40, 20, 1.0, 0.1, &mut b), GscStatus::InvalidParameter);
        assert_eq!(gsc_noise_budget(s, 5, 5, 1.0, 0.1, ptr::null_mut()), GscStatus::NullPointer);
        assert_eq!(gsc_noise_budget(s, 5, 5, 1.0, 0.1, &mut b), GscStatus::Ok);
        assert!(last_error().is_empty());
        gsc_schedule_free(s);

        let bad = CString::new("[chanel]\nsnr_db = 3\n").unwrap();
        let mut cfg = ptr::null_mut();
        assert_eq!(gsc_config_from_toml(bad.as_ptr(), &mut cfg), GscStatus::Config);
        assert!(last_error().contains("chanel"));
        assert!(cfg.is_null());

        let mut buf = [1 as c_char; 4];
        let len = gsc_last_error_message(buf.as_mut_ptr(), buf.len());
        assert!(len > 3);
        assert_eq!(buf[3], 0);

        gsc_schedule_free(ptr::null_mut());
        gsc_config_free(ptr::null_mut());
        gsc_simulator_free(ptr::null_mut());
    }
}

#[test]
fn trials_are_deterministic_and_inversion_beats_baseline_on_mse() {
    let sim = simulator(SMALL);
    let mut a = GscTrialResult::default();
    let mut b = GscTrialResult::default();
    let mut base = GscTrialResult::default();
    unsafe {
        assert_eq!(gsc_simulator_run_trial(sim, 5.0, false, 60, 3, &mut a), GscStatus::Ok);
        assert_eq!(gsc_simulator_run_trial(sim, 5.0, false, 60, 3, &mut b), GscStatus::Ok);
        assert_eq!(gsc_simulator_run_trial(sim, 5.0, true, 60, 3, &mut base), GscStatus::Ok);
        assert_ne!(gsc_simulator_run_trial(sim, f64::NAN, false, 60, 3, &mut b), GscStatus::Ok);
        assert!(last_error().contains("snr"), "{}", last_error());
        gsc_simulator_free(sim);
    }
    assert!(a.mse.is_finite() && a.sw2.is_finite() && a.t_b > 10);
    assert!(a.mse < base.mse);
    let mut again = GscTrialResult::default();
    let sim = simulator(SMALL);
    unsafe {
        gsc_simulator_run_trial(sim, 5.0, false, 60, 3, &mut again);
        gsc_simulator_free(sim);
    }
    assert_eq!(a, again);
}

#[test]
fn prop1_check_passes_and_detects_misindexing() {
    let mut r = GscProp1Report::default();
    let sim = simulator(SMALL);
    unsafe {
        assert_eq!(gsc_simulator_verify_prop1(sim, &mut r), GscStatus::Ok);
        gsc_simulator_free(sim);
    }
    assert!(r.passed, "{r:?}");
    assert!(r.var_rel_err.abs() <= 0.03);

    let sim = simulator(&SMALL.replace("[prop1]\n", "[prop1]\nmisindex_alpha_bar = true\n"));
    unsafe {
        assert_eq!(gsc_simulator_verify_prop1(sim, &mut r), GscStatus::Ok);
        gsc_simulator_free(sim);
    }
    assert!(!r.passed);
}

#[test]
fn default_config_builds_a_simulator() {
    let mut cfg = ptr::null_mut();
    let mut sim = ptr::null_mut();
    unsafe {
        assert_eq!(gsc_config_default(&mut cfg), GscStatus::Ok);
        assert_eq!(gsc_simulator_new(cfg, &mut sim), GscStatus::Ok);
        assert_eq!(gsc_simulator_new(ptr::null(), &mut sim), GscStatus::NullPointer);
        gsc_simulator_free(sim);
        gsc_config_free(cfg);
    }
}

#[test]
fn header_is_valid_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/gensemcom.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for sym in ["gsc_schedule_new", "gsc_noise_budget", "gsc_select_steps", "gsc_simulator_run_trial", "gsc_simulator_verify_prop1", "gsc_last_error_message"] {
        assert!(text.contains(sym), "{sym} missing from header");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(&src, "#include \"gensemcom.h\"\nint main(void) { GscSchedule *h = 0; return gsc_schedule_new(GSC_SCHEDULE_KIND_SCALED_LINEAR, 1000, 8.5e-4, 0.012, 50, &h) == GSC_STATUS_OK ? 0 : 1; }\n").unwrap();
    let Ok(status) = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header.parent().unwrap())
        .arg(&src)
        .status()
    else {
        eprintln!("no C compiler available; skipped syntax check");
        return;
    };
    assert!(status.success());
}
