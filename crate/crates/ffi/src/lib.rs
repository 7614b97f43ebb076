#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! C ABI for gravdec.
//!
//! Every fallible function returns a [`GravdecStatus`]; on failure the
//! message is kept per thread and read back with
//! [`gravdec_last_error_message`]. Objects are opaque handles created by a
//! `*_new*` function and released by the matching `*_free`. Strings
//! returned through out-pointers are owned by the caller and released with
//! [`gravdec_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use gravdec::angular;
use gravdec::config::PRESET_PAPER_ELECTRON;
use gravdec::csl::{self, CslLattice, CslParams, SdeOptions, TimeGrid};
use gravdec::decoherence::{
    gamma_closed_form_exponential, gamma_rate, presets, PhysicalParams, RateOptions, RateResult,
    SpatialKernel,
};
use gravdec::dynamics::{self, AmplifiedSystem, LogGrid, QubitState, Regime, SweepConfig};
use gravdec::numerics::SphericalGrid;
use gravdec::spectrum::GravitonSpectrum;
use num_complex::Complex64;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GravdecStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Numerical = 3,
    Panic = 4,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GravdecKernel {
    Normalized = 0,
    Raw = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GravdecMethod {
    /// Closed form when available, quadrature otherwise.
    Auto = 0,
    ClosedForm = 1,
    Quadrature = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GravdecRegime {
    FullyCoherent = 0,
    WeakDecoherence = 1,
    TransitionRegime = 2,
    RapidDecoherence = 3,
    ClassicalLimit = 4,
}

impl From<Regime> for GravdecRegime {
    fn from(r: Regime) -> Self {
        match r {
            Regime::FullyCoherent => GravdecRegime::FullyCoherent,
            Regime::WeakDecoherence => GravdecRegime::WeakDecoherence,
            Regime::TransitionRegime => GravdecRegime::TransitionRegime,
            Regime::RapidDecoherence => GravdecRegime::RapidDecoherence,
            Regime::ClassicalLimit => GravdecRegime::ClassicalLimit,
        }
    }
}

/// Rate model handle.
pub struct GravdecModel {
    params: PhysicalParams,
    spectrum: GravitonSpectrum,
    kernel: SpatialKernel,
    options: RateOptions,
}

/// CSL collapse parameters.
pub struct GravdecCsl {
    params: CslParams,
}

/// Result of a rate evaluation.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GravdecRate {
    pub gamma_hz: f64,
    pub abs_error_hz: f64,
    /// 1 when the rate came out negative.
    pub negative_rate_warning: i32,
    /// 1 for the closed form, 0 for quadrature.
    pub closed_form: i32,
}

/// Summary of a stochastic ensemble run on the two-site lattice.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GravdecEnsembleSummary {
    pub gamma_csl_hz: f64,
    pub final_coherence_abs: f64,
    pub lindblad_coherence_abs: f64,
    pub max_trace_distance: f64,
    pub trace_distance_bound: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).expect("nul removed"));
}

struct Failure(GravdecStatus, String);

impl Failure {
    fn invalid(msg: impl ToString) -> Self {
        Failure(GravdecStatus::InvalidArgument, msg.to_string())
    }
    fn numerical(msg: impl ToString) -> Self {
        Failure(GravdecStatus::Numerical, msg.to_string())
    }
    fn null(what: &str) -> Self {
        Failure(GravdecStatus::NullPointer, format!("{what} is null"))
    }
}

impl From<gravdec::decoherence::DecoherenceError> for Failure {
    fn from(e: gravdec::decoherence::DecoherenceError) -> Self {
        use gravdec::decoherence::DecoherenceError as E;
        match e {
            E::Quadrature(_) => Failure::numerical(e),
            _ => Failure::invalid(e),
        }
    }
}

impl From<gravdec::dynamics::DynamicsError> for Failure {
    fn from(e: gravdec::dynamics::DynamicsError) -> Self {
        use gravdec::dynamics::DynamicsError as E;
        match e {
            E::StepTooCoarse { .. } => Failure::numerical(e),
            E::Decoherence(d) => d.into(),
            _ => Failure::invalid(e),
        }
    }
}

impl From<csl::CslError> for Failure {
    fn from(e: csl::CslError) -> Self {
        match e {
            csl::CslError::Unstable { .. } | csl::CslError::NotPsd(_) => Failure::numerical(e),
            _ => Failure::invalid(e),
        }
    }
}

impl From<gravdec::spectrum::SpectrumError> for Failure {
    fn from(e: gravdec::spectrum::SpectrumError) -> Self {
        Failure::invalid(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> GravdecStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GravdecStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            GravdecStatus::Panic
        }
    }
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| Failure::null(what))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure::null(what))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure::invalid(format!("{what} is not UTF-8")))
}

fn into_c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s).map(CString::into_raw).map_err(|_| Failure::invalid("output contains NUL"))
}

/// Message of the last failed call on this thread; empty when none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn gravdec_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from a gravdec function and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn gravdec_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gravdec_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Model from a named preset; "paper-electron" is the calibrated electron
/// at 1e-2 Hz.
///
/// # Safety
/// `name` must be a NUL-terminated string and `out_model` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gravdec_model_new_preset(name: *const c_char, out_model: *mut *mut GravdecModel) -> GravdecStatus {
    guard(|| {
        let slot = out(out_model, "out_model")?;
        let name = c_str(name, "name")?;
        if name != PRESET_PAPER_ELECTRON {
            return Err(Failure::invalid(format!("unknown preset {name:?} (known: {PRESET_PAPER_ELECTRON})")));
        }
        let p = presets::paper_electron();
        *slot = Box::into_raw(Box::new(GravdecModel {
            params: p.params,
            spectrum: p.spectrum,
            kernel: p.kernel,
            options: RateOptions::default(),
        }));
        Ok(())
    })
}

/// Model with an exponential spectrum I0 exp(-p/p_c). SI inputs except
/// `i0` (m^-5) and `p_c` (m^-1).
///
/// # Safety
/// `out_model` must be a valid pointer.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn gravdec_model_new_exponential(
    m_f: f64,
    sigma0: f64,
    dx: f64,
    volume: f64,
    i0: f64,
    p_c: f64,
    kernel: GravdecKernel,
    out_model: *mut *mut GravdecModel,
) -> GravdecStatus {
    guard(|| {
        let slot = out(out_model, "out_model")?;
        let params = PhysicalParams::new(m_f, sigma0, dx, volume)?;
        let spectrum = GravitonSpectrum::exponential(i0, p_c)?;
        let kernel = match kernel {
            GravdecKernel::Normalized => SpatialKernel::normalized(sigma0),
            GravdecKernel::Raw => SpatialKernel::raw(sigma0),
        };
        *slot = Box::into_raw(Box::new(GravdecModel { params, spectrum, kernel, options: RateOptions::default() }));
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from a `gravdec_model_new*` call and not be reused.
#[no_mangle]
pub unsafe extern "C" fn gravdec_model_free(model: *mut GravdecModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Changes the branch separation (m).
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn gravdec_model_set_dx(model: *mut GravdecModel, dx: f64) -> GravdecStatus {
    guard(|| {
        let m = out(model, "model")?;
        let mut p = m.params;
        p.dx = dx;
        p.validate()?;
        m.params = p;
        Ok(())
    })
}

/// Changes the constituent mass (kg).
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn gravdec_model_set_mass(model: *mut GravdecModel, m_f: f64) -> GravdecStatus {
    guard(|| {
        let m = out(model, "model")?;
        let mut p = m.params;
        p.m_f = m_f;
        p.validate()?;
        m.params = p;
        Ok(())
    })
}

/// Sets the quadrature relative tolerance.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn gravdec_model_set_rel_tol(model: *mut GravdecModel, rel_tol: f64) -> GravdecStatus {
    guard(|| {
        let m = out(model, "model")?;
        if !(1e-13..=1e-2).contains(&rel_tol) {
            return Err(Failure::invalid(format!("rel_tol {rel_tol} outside [1e-13, 1e-2]")));
        }
        m.options = m.options.with_rel_tol(rel_tol);
        Ok(())
    })
}

fn model_rate(m: &GravdecModel, method: GravdecMethod) -> Result<RateResult, Failure> {
    Ok(match (method, &m.spectrum) {
        (GravdecMethod::Quadrature, _) => gamma_rate(&m.params, &m.spectrum, &m.kernel, &m.options)?,
        (_, GravitonSpectrum::Exponential { i0, p_c }) => {
            gamma_closed_form_exponential(&m.params, *i0, *p_c, &m.kernel, &m.options.constants)?
        }
        (GravdecMethod::ClosedForm, _) => return Err(Failure::invalid("closed form needs the exponential spectrum")),
        _ => gamma_rate(&m.params, &m.spectrum, &m.kernel, &m.options)?,
    })
}

/// Single-constituent decoherence rate.
///
/// # Safety
/// `model` must be a live handle and `out_rate` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gravdec_model_rate(
    model: *const GravdecModel,
    method: GravdecMethod,
    out_rate: *mut GravdecRate,
) -> GravdecStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let slot = out(out_rate, "out_rate")?;
        let r = model_rate(m, method)?;
        *slot = GravdecRate {
            gamma_hz: r.gamma_hz,
            abs_error_hz: r.abs_error_hz,
            negative_rate_warning: i32::from(!r.warnings.is_empty()),
            closed_form: i32::from(r.method == gravdec::decoherence::RateMethod::ClosedForm),
        };
        Ok(())
    })
}

/// Sweep over log grids of total mass (kg) and constituent number; writes
/// the CSV table (`M_kg,N,gamma_hz,tau_s,regime,on_physical_line`) to
/// `out_csv`, to be released with [`gravdec_string_free`].
///
/// # Safety
/// `model` must be a live handle and `out_csv` a valid pointer.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn gravdec_sweep_csv(
    model: *const GravdecModel,
    m_min: f64,
    m_max: f64,
    m_points: usize,
    n_min: f64,
    n_max: f64,
    n_points: usize,
    horizon_s: f64,
    out_csv: *mut *mut c_char,
) -> GravdecStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let slot = out(out_csv, "out_csv")?;
        let cfg = SweepConfig {
            masses: LogGrid::new(m_min, m_max, m_points)?,
            constituents: LogGrid::new(n_min, n_max, n_points)?,
            params: m.params,
            spectrum: m.spectrum.clone(),
            rate_options: m.options,
            horizon_s,
        };
        let rows = dynamics::sweep_grid(&cfg)?;
        let mut buf = Vec::new();
        dynamics::write_sweep_csv(&rows, &mut buf).map_err(Failure::invalid)?;
        *slot = into_c_string(String::from_utf8(buf).map_err(Failure::invalid)?)?;
        Ok(())
    })
}

/// rho12(t) = rho12(0) exp(-gamma t).
///
/// # Safety
/// Output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn gravdec_evolve_coherence(
    re0: f64,
    im0: f64,
    gamma_hz: f64,
    t_s: f64,
    out_re: *mut f64,
    out_im: *mut f64,
) -> GravdecStatus {
    guard(|| {
        if !(t_s >= 0.0 && t_s.is_finite()) {
            return Err(Failure::invalid(format!("t = {t_s}")));
        }
        let z = dynamics::evolve_coherence(Complex64::new(re0, im0), gamma_hz, t_s);
        *out(out_re, "out_re")? = z.re;
        *out(out_im, "out_im")? = z.im;
        Ok(())
    })
}

/// Qubit state (rho11, rho22, rho12) after time `t_s` under rate `gamma_hz`.
///
/// # Safety
/// `state` must point to four doubles {rho11, rho22, re rho12, im rho12};
/// it is overwritten with the evolved state.
#[no_mangle]
pub unsafe extern "C" fn gravdec_evolve_populations(state: *mut f64, gamma_hz: f64, t_s: f64) -> GravdecStatus {
    guard(|| {
        if state.is_null() {
            return Err(Failure::null("state"));
        }
        let s = std::slice::from_raw_parts_mut(state, 4);
        let q = QubitState::new(s[0], s[1], Complex64::new(s[2], s[3]))?;
        let r = dynamics::evolve_populations(&q, gamma_hz, t_s)?;
        s.copy_from_slice(&[r.rho11, r.rho22, r.rho12.re, r.rho12.im]);
        Ok(())
    })
}

/// N^2 gamma1.
#[no_mangle]
pub extern "C" fn gravdec_amplified_rate(n_constituents: f64, gamma1_hz: f64) -> f64 {
    n_constituents * n_constituents * gamma1_hz
}

/// Regime label for an amplified rate against a horizon in seconds.
///
/// # Safety
/// `out_regime` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gravdec_classify_regime(
    gamma_n_hz: f64,
    horizon_s: f64,
    out_regime: *mut GravdecRegime,
) -> GravdecStatus {
    guard(|| {
        let slot = out(out_regime, "out_regime")?;
        *slot = dynamics::classify_regime(gamma_n_hz, horizon_s)?.into();
        Ok(())
    })
}

/// Static human-readable label, e.g. "Transition regime".
#[no_mangle]
pub extern "C" fn gravdec_regime_label(regime: GravdecRegime) -> *const c_char {
    let s: &'static str = match regime {
        GravdecRegime::FullyCoherent => "Fully coherent\0",
        GravdecRegime::WeakDecoherence => "Weak decoherence\0",
        GravdecRegime::TransitionRegime => "Transition regime\0",
        GravdecRegime::RapidDecoherence => "Rapid decoherence\0",
        GravdecRegime::ClassicalLimit => "Classical limit\0",
    };
    s.as_ptr().cast()
}

/// Decoherence time of an N-constituent composite of total mass `m_kg`,
/// using the per-constituent rate of `model`.
///
/// # Safety
/// `model` must be a live handle and `out_tau_s` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gravdec_composite_tau(
    model: *const GravdecModel,
    m_kg: f64,
    n_constituents: f64,
    out_tau_s: *mut f64,
) -> GravdecStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let slot = out(out_tau_s, "out_tau_s")?;
        let sys = AmplifiedSystem::from_total_mass(m_kg, n_constituents)?;
        let mut params = m.params;
        params.m_f = sys.constituent_mass;
        let g1 = dynamics::constituent_rate(&params, &m.spectrum, &m.options)?;
        *slot = dynamics::decoherence_time(dynamics::amplified_rate(&sys, g1));
        Ok(())
    })
}

/// Angular-identity report as a JSON array, released with
/// [`gravdec_string_free`].
///
/// # Safety
/// `out_json` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gravdec_verify_json(
    n_theta: usize,
    n_phi: usize,
    n_directions: usize,
    seed: u64,
    out_json: *mut *mut c_char,
) -> GravdecStatus {
    guard(|| {
        let slot = out(out_json, "out_json")?;
        let grid = SphericalGrid::new(n_theta, n_phi).map_err(Failure::invalid)?;
        let mut records = angular::verify_identities(&grid, n_directions, seed);
        records.push(csl::printed_sign_audit()?);
        let text = serde_json::to_string(&records).map_err(Failure::invalid)?;
        *slot = into_c_string(text)?;
        Ok(())
    })
}

/// CSL parameters by preset name ("grw", "adler_a", "adler_b").
///
/// # Safety
/// `name` must be a NUL-terminated string and `out_csl` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gravdec_csl_new_preset(name: *const c_char, out_csl: *mut *mut GravdecCsl) -> GravdecStatus {
    guard(|| {
        let slot = out(out_csl, "out_csl")?;
        let params = csl::preset(c_str(name, "name")?)?;
        *slot = Box::into_raw(Box::new(GravdecCsl { params }));
        Ok(())
    })
}

/// CSL parameters from lambda (1/s), r_c (m) and m0 (kg).
///
/// # Safety
/// `out_csl` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gravdec_csl_new(lambda: f64, r_c: f64, m0: f64, out_csl: *mut *mut GravdecCsl) -> GravdecStatus {
    guard(|| {
        let slot = out(out_csl, "out_csl")?;
        *slot = Box::into_raw(Box::new(GravdecCsl { params: CslParams::new(lambda, r_c, m0)? }));
        Ok(())
    })
}

/// Releases CSL parameters. Null is ignored.
///
/// # Safety
/// `csl` must come from a `gravdec_csl_new*` call and not be reused.
#[no_mangle]
pub unsafe extern "C" fn gravdec_csl_free(csl: *mut GravdecCsl) {
    if !csl.is_null() {
        drop(Box::from_raw(csl));
    }
}

/// Reads back (lambda, r_c, m0).
///
/// # Safety
/// `csl` must be a live handle; output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn gravdec_csl_params(
    csl: *const GravdecCsl,
    out_lambda: *mut f64,
    out_r_c: *mut f64,
    out_m0: *mut f64,
) -> GravdecStatus {
    guard(|| {
        let p = handle(csl, "csl")?.params;
        *out(out_lambda, "out_lambda")? = p.lambda;
        *out(out_r_c, "out_r_c")? = p.r_c;
        *out(out_m0, "out_m0")? = p.m0;
        Ok(())
    })
}

/// Two-branch coherence decay rate for a particle of `mass` (kg) at
/// separation `d` (m).
///
/// # Safety
/// `csl` must be a live handle and `out_rate` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gravdec_csl_two_site_rate(
    csl: *const GravdecCsl,
    mass: f64,
    d: f64,
    out_rate: *mut f64,
) -> GravdecStatus {
    guard(|| {
        let p = handle(csl, "csl")?.params;
        let slot = out(out_rate, "out_rate")?;
        if !(mass > 0.0 && d >= 0.0) {
            return Err(Failure::invalid(format!("mass = {mass}, d = {d}")));
        }
        *slot = csl::two_site_rate(&p, mass, d);
        Ok(())
    })
}

/// Stochastic ensemble on the two-site lattice compared with the Lindblad
/// solution, starting from the equal superposition.
///
/// # Safety
/// `csl` must be a live handle and `out_summary` a valid pointer.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn gravdec_csl_ensemble(
    csl: *const GravdecCsl,
    mass: f64,
    d: f64,
    n_traj: usize,
    t_end_s: f64,
    dt_s: f64,
    seed: u64,
    out_summary: *mut GravdecEnsembleSummary,
) -> GravdecStatus {
    guard(|| {
        let p = handle(csl, "csl")?.params;
        let slot = out(out_summary, "out_summary")?;
        let lat = CslLattice::two_site(mass, d)?;
        let steps = TimeGrid::new(t_end_s, dt_s, 1)?.n_steps();
        let grid = TimeGrid::new(t_end_s, dt_s, (steps / 50).max(1))?;
        let psi0 = csl::two_branch_state(2);
        let ens = csl::sde_ensemble(&lat, &p, &psi0, &SdeOptions::new(grid), n_traj, seed)?;
        let lind = csl::evolve_lindblad(&lat, &p, &csl::projector(&psi0), &grid)?;
        let max_td = ens.mean.iter().zip(&lind).map(|(m, (_, l))| csl::trace_distance(m, l)).fold(0.0, f64::max);
        let last = ens.mean.last().expect("records");
        let (_, lind_last) = lind.last().expect("records");
        *slot = GravdecEnsembleSummary {
            gamma_csl_hz: csl::two_site_rate(&p, mass, d),
            final_coherence_abs: last[(0, 1)].norm(),
            lindblad_coherence_abs: lind_last[(0, 1)].norm(),
            max_trace_distance: max_td,
            trace_distance_bound: csl::ensemble_bound(n_traj, dt_s, ens.rate_scale, t_end_s),
        };
        Ok(())
    })
}
