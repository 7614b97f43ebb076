use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use gravdec_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(gravdec_last_error_message()) }.to_string_lossy().into_owned()
}

fn preset_model() -> *mut GravdecModel {
    let name = CString::new("paper-electron").unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { gravdec_model_new_preset(name.as_ptr(), &mut m) }, GravdecStatus::Ok);
    assert!(!m.is_null());
    m
}

#[test]
fn preset_rate_is_calibrated() {
    let m = preset_model();
    let mut r = GravdecRate::default();
    unsafe {
        assert_eq!(gravdec_model_rate(m, GravdecMethod::Auto, &mut r), GravdecStatus::Ok);
        assert!((r.gamma_hz - 1e-2).abs() < 1e-12);
        assert_eq!(r.closed_form, 1);
        assert_eq!(r.negative_rate_warning, 0);
        let mut q = GravdecRate::default();
        assert_eq!(gravdec_model_rate(m, GravdecMethod::Quadrature, &mut q), GravdecStatus::Ok);
        assert_eq!(q.closed_form, 0);
        assert!((q.gamma_hz - r.gamma_hz).abs() < 1e-6 * r.gamma_hz);
        gravdec_model_free(m);
    }
}

#[test]
fn unknown_preset_and_nulls_report_status() {
    let name = CString::new("nope").unwrap();
    let mut m = ptr::null_mut();
    unsafe {
        assert_eq!(gravdec_model_new_preset(name.as_ptr(), &mut m), GravdecStatus::InvalidArgument);
        assert!(last_error().contains("nope"));
        assert_eq!(gravdec_model_new_preset(ptr::null(), &mut m), GravdecStatus::NullPointer);
        assert!(m.is_null());
        let mut r = GravdecRate::default();
        assert_eq!(gravdec_model_rate(ptr::null(), GravdecMethod::Auto, &mut r), GravdecStatus::NullPointer);
        gravdec_model_free(ptr::null_mut());
        gravdec_csl_free(ptr::null_mut());
        gravdec_string_free(ptr::null_mut());
    }
}

#[test]
fn invalid_separation_is_rejected_without_mutation() {
    let m = preset_model();
    let mut r = GravdecRate::default();
    unsafe {
        assert_eq!(gravdec_model_set_dx(m, -1.0), GravdecStatus::InvalidArgument);
        assert_eq!(gravdec_model_rate(m, GravdecMethod::ClosedForm, &mut r), GravdecStatus::Ok);
        assert!((r.gamma_hz - 1e-2).abs() < 1e-12);
        assert_eq!(gravdec_model_set_dx(m, 0.0), GravdecStatus::Ok);
        assert_eq!(gravdec_model_rate(m, GravdecMethod::ClosedForm, &mut r), GravdecStatus::Ok);
        assert_eq!(r.gamma_hz, 0.0);
        assert_eq!(gravdec_model_set_rel_tol(m, 0.5), GravdecStatus::InvalidArgument);
        gravdec_model_free(m);
    }
}

#[test]
fn exponential_model_negative_regime_warns() {
    let mut m = ptr::null_mut();
    unsafe {
        let st = gravdec_model_new_exponential(9.109e-31, 1e-9, 1e-8, 1e-27, 4.25e84, 1e9, GravdecKernel::Normalized, &mut m);
        assert_eq!(st, GravdecStatus::Ok);
        let mut r = GravdecRate::default();
        assert_eq!(gravdec_model_rate(m, GravdecMethod::Auto, &mut r), GravdecStatus::Ok);
        assert!(r.gamma_hz < 0.0);
        assert_eq!(r.negative_rate_warning, 1);
        gravdec_model_free(m);
        let st = gravdec_model_new_exponential(1.0, 1e-9, 1e-9, 1.0, -1.0, 1e9, GravdecKernel::Raw, &mut m);
        assert_eq!(st, GravdecStatus::InvalidArgument);
    }
}

#[test]
fn dynamics_entry_points() {
    let (mut re, mut im) = (0.0, 0.0);
    unsafe {
        assert_eq!(gravdec_evolve_coherence(0.5, 0.0, 2.0, 1.0, &mut re, &mut im), GravdecStatus::Ok);
        assert!((re - 0.5 * (-2.0f64).exp()).abs() < 1e-15);
        assert_eq!(im, 0.0);
        assert_eq!(gravdec_evolve_coherence(0.5, 0.0, 2.0, -1.0, &mut re, &mut im), GravdecStatus::InvalidArgument);

        let mut s = [0.5, 0.5, 0.5, 0.0];
        assert_eq!(gravdec_evolve_populations(s.as_mut_ptr(), 1.0, 40.0), GravdecStatus::Ok);
        assert!((s[0] - 0.5).abs() < 1e-12 && s[2].abs() < 1e-8);
        let mut bad = [0.9, 0.9, 0.0, 0.0];
        assert_ne!(gravdec_evolve_populations(bad.as_mut_ptr(), 1.0, 1.0), GravdecStatus::Ok);

        assert_eq!(gravdec_amplified_rate(1e3, 2.0), 2e6);
        let mut reg = GravdecRegime::FullyCoherent;
        assert_eq!(gravdec_classify_regime(1e-2, 1.0, &mut reg), GravdecStatus::Ok);
        assert_eq!(reg, GravdecRegime::TransitionRegime);
        let label = CStr::from_ptr(gravdec_regime_label(reg)).to_str().unwrap();
        assert_eq!(label, "Transition regime");
    }
}

#[test]
fn sweep_and_verify_return_owned_strings() {
    let m = preset_model();
    let mut csv = ptr::null_mut();
    unsafe {
        let st = gravdec_sweep_csv(m, 1e-27, 1e-25, 3, 1.0, 100.0, 3, 1.0, &mut csv);
        assert_eq!(st, GravdecStatus::Ok, "{}", last_error());
        let text = CStr::from_ptr(csv).to_str().unwrap().to_owned();
        gravdec_string_free(csv);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "M_kg,N,gamma_hz,tau_s,regime,on_physical_line");
        assert_eq!(lines.len(), 10);

        let mut tau = 0.0;
        assert_eq!(gravdec_composite_tau(m, 1e-25, 1.0, &mut tau), GravdecStatus::Ok);
        assert!(tau.is_finite() && tau > 0.0);

        let mut json = ptr::null_mut();
        assert_eq!(gravdec_verify_json(32, 32, 100, 7, &mut json), GravdecStatus::Ok);
        let v: serde_json::Value = serde_json::from_str(CStr::from_ptr(json).to_str().unwrap()).unwrap();
        gravdec_string_free(json);
        let records = v.as_array().unwrap();
        assert!(records.iter().any(|r| r["status"] == "flagged"));
        assert!(records.iter().any(|r| r["status"] == "pass"));
        gravdec_model_free(m);
    }
}

#[test]
fn csl_handles() {
    let name = CString::new("grw").unwrap();
    let mut c = ptr::null_mut();
    unsafe {
        assert_eq!(gravdec_csl_new_preset(name.as_ptr(), &mut c), GravdecStatus::Ok);
        let (mut l, mut r, mut m0) = (0.0, 0.0, 0.0);
        assert_eq!(gravdec_csl_params(c, &mut l, &mut r, &mut m0), GravdecStatus::Ok);
        assert_eq!((l, r), (1e-16, 1e-7));
        let mut rate = 0.0;
        assert_eq!(gravdec_csl_two_site_rate(c, m0, 1e-7, &mut rate), GravdecStatus::Ok);
        assert!((rate - 1e-16 * (1.0 - (-0.25f64).exp())).abs() < 1e-28);
        gravdec_csl_free(c);

        let bad = CString::new("xyz").unwrap();
        assert_eq!(gravdec_csl_new_preset(bad.as_ptr(), &mut c), GravdecStatus::InvalidArgument);

        assert_eq!(gravdec_csl_new(1.0, 1.0, 1.0, &mut c), GravdecStatus::Ok);
        let mut s = GravdecEnsembleSummary::default();
        let st = gravdec_csl_ensemble(c, 1.0, 2.0, 256, 0.5, 1e-5, 3, &mut s);
        assert_eq!(st, GravdecStatus::Ok, "{}", last_error());
        assert!(s.max_trace_distance < s.trace_distance_bound, "{s:?}");
        assert!((s.lindblad_coherence_abs - 0.5 * (-s.gamma_csl_hz * 0.5).exp()).abs() < 1e-6);
        gravdec_csl_free(c);
    }
}

#[test]
fn header_is_valid_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/gravdec.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for sym in ["gravdec_model_new_preset", "gravdec_model_rate", "gravdec_csl_ensemble", "GRAVDEC_STATUS_OK"] {
        assert!(text.contains(sym), "{sym} missing from header");
    }
    let Ok(out) = Command::new("cc").args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"]).arg(&header).output() else {
        eprintln!("cc not found; skipping compile check");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
