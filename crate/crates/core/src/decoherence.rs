//! Graviton-bremsstrahlung decoherence rate of a two-branch superposition.
//!
//! ```text
//! Gamma(dx) = kappa^2 / (16 m_f^2) * V * \int_0^\infty p^2 dp / (2 pi^2)
//!             * I(p) * [ G(dx) - sin(p dx) / (p dx) ]
//! ```
//!
//! All factors are evaluated in natural units (hbar = c = 1, lengths in
//! meters) and the result is converted to s^-1 at the end. The spectral
//! amplitude is taken in m^-5 so that the rate is m^-1 before conversion;
//! only the product I0 * V (m^-2) enters the rate.

use std::f64::consts::PI;

use serde::Serialize;
use thiserror::Error;

use crate::numerics::{self, QuadratureError, SemiInfiniteOptions, DEFAULT_REL_TOL};
use crate::spectrum::{GravitonSpectrum, SpectrumError};
use crate::units::Constants;

#[derive(Debug, Error)]
pub enum DecoherenceError {
    #[error("invalid physical parameters: {0}")]
    InvalidParams(String),
    #[error("calibration impossible: bracket {0:e} is not positive")]
    NonPositiveBracket(f64),
    #[error("invalid calibration target {0:e} Hz")]
    BadTarget(f64),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error(transparent)]
    Spectrum(#[from] SpectrumError),
}

/// Mass in kg, lengths in m, volume in m^3.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhysicalParams {
    pub m_f: f64,
    pub sigma0: f64,
    pub dx: f64,
    pub volume: f64,
}

impl PhysicalParams {
    pub fn new(m_f: f64, sigma0: f64, dx: f64, volume: f64) -> Result<Self, DecoherenceError> {
        let p = Self { m_f, sigma0, dx, volume };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), DecoherenceError> {
        let bad = |what: &str, v: f64| Err(DecoherenceError::InvalidParams(format!("{what} = {v}")));
        if !(self.m_f > 0.0 && self.m_f.is_finite()) {
            return bad("m_f", self.m_f);
        }
        if !(self.sigma0 > 0.0 && self.sigma0.is_finite()) {
            return bad("sigma0", self.sigma0);
        }
        if !(self.dx >= 0.0 && self.dx.is_finite()) {
            return bad("dx", self.dx);
        }
        if !(self.volume > 0.0 && self.volume.is_finite()) {
            return bad("volume", self.volume);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelNormalization {
    /// (4 pi sigma0^2)^{-3/2} exp(-dx^2 / 8 sigma0^2), units m^-3.
    Raw,
    /// exp(-dx^2 / 8 sigma0^2), equal to 1 at dx = 0.
    Normalized,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialKernel {
    pub sigma0: f64,
    pub normalization: KernelNormalization,
}

impl SpatialKernel {
    pub fn normalized(sigma0: f64) -> Self {
        Self { sigma0, normalization: KernelNormalization::Normalized }
    }

    pub fn raw(sigma0: f64) -> Self {
        Self { sigma0, normalization: KernelNormalization::Raw }
    }

    /// (4 pi sigma0^2)^{3/2}: the volume that turns the raw kernel into a
    /// dimensionless overlap.
    pub fn compensating_volume(&self) -> f64 {
        (4.0 * PI * self.sigma0 * self.sigma0).powf(1.5)
    }

    pub fn value(&self, dx: f64) -> f64 {
        let g = (-dx * dx / (8.0 * self.sigma0 * self.sigma0)).exp();
        match self.normalization {
            KernelNormalization::Normalized => g,
            KernelNormalization::Raw => g / self.compensating_volume(),
        }
    }

    /// The dimensionless kernel that enters the bracket. Raw mode multiplies
    /// the literal kernel by the compensating volume.
    pub fn bracket_value(&self, dx: f64) -> f64 {
        match self.normalization {
            KernelNormalization::Normalized => self.value(dx),
            KernelNormalization::Raw => self.value(dx) * self.compensating_volume(),
        }
    }

    /// bracket_value(dx) - 1 without cancellation in Normalized mode.
    fn bracket_value_minus_one(&self, dx: f64) -> f64 {
        match self.normalization {
            KernelNormalization::Normalized => {
                (-dx * dx / (8.0 * self.sigma0 * self.sigma0)).exp_m1()
            }
            KernelNormalization::Raw => self.bracket_value(dx) - 1.0,
        }
    }
}

pub fn kernel_value(k: &SpatialKernel, dx: f64) -> f64 {
    k.value(dx)
}

/// sin(x)/x with x = p dx; 4th-order series below |x| = 1e-4.
pub fn sinc_factor(p: f64, dx: f64) -> f64 {
    let x = p * dx;
    if x.abs() < 1e-4 {
        let x2 = x * x;
        1.0 - x2 / 6.0 + x2 * x2 / 120.0
    } else {
        x.sin() / x
    }
}

/// 1 - sin(x)/x, accurate for small x.
fn one_minus_sinc(x: f64) -> f64 {
    if x.abs() < 0.1 {
        let x2 = x * x;
        x2 * (1.0 / 6.0
            - x2 * (1.0 / 120.0
                - x2 * (1.0 / 5040.0 - x2 * (1.0 / 362_880.0 - x2 / 39_916_800.0))))
    } else {
        1.0 - x.sin() / x
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateMethod {
    ClosedForm,
    Quadrature,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RateWarning {
    #[serde(rename = "negative-rate-regime")]
    NegativeRate,
}

impl RateWarning {
    pub fn as_str(&self) -> &'static str {
        match self {
            RateWarning::NegativeRate => "negative-rate-regime",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateResult {
    /// s^-1; negative values are reported as computed.
    pub gamma_hz: f64,
    pub abs_error_hz: f64,
    pub method: RateMethod,
    pub warnings: Vec<RateWarning>,
}

impl RateResult {
    fn new(gamma_hz: f64, abs_error_hz: f64, method: RateMethod) -> Self {
        let mut warnings = Vec::new();
        if gamma_hz < 0.0 {
            warnings.push(RateWarning::NegativeRate);
        }
        Self { gamma_hz, abs_error_hz, method, warnings }
    }

    pub fn tau_s(&self) -> f64 {
        1.0 / self.gamma_hz
    }
}

/// Finite-time weighting of the spectrum. The stationary limit uses the
/// spectral density as given.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeWindow {
    Stationary,
    /// Interaction window in seconds. Each mode is weighted by
    /// Re[filter(p, tau0)] / tau0 = sin(p tau0) / (p tau0).
    Finite(f64),
}

#[derive(Debug, Clone, Copy)]
pub struct RateOptions {
    pub rel_tol: f64,
    pub window: TimeWindow,
    pub constants: Constants,
}

impl Default for RateOptions {
    fn default() -> Self {
        Self { rel_tol: DEFAULT_REL_TOL, window: TimeWindow::Stationary, constants: Constants::CODATA_2018 }
    }
}

impl RateOptions {
    pub fn with_rel_tol(mut self, rel_tol: f64) -> Self {
        self.rel_tol = rel_tol;
        self
    }
    pub fn with_constants(mut self, constants: Constants) -> Self {
        self.constants = constants;
        self
    }
    pub fn with_window(mut self, window: TimeWindow) -> Self {
        self.window = window;
        self
    }
}

/// kappa^2 / (16 m_f^2) in natural units (m^4).
fn coupling_prefactor(c: &Constants, m_f_kg: f64) -> f64 {
    let kappa2 = c.kappa_squared(crate::units::UnitSystem::Natural).value;
    let m = c.mass_to_inv_m(m_f_kg);
    kappa2 / (16.0 * m * m)
}

/// Evaluates the rate by adaptive quadrature over graviton momentum.
pub fn gamma_rate(
    params: &PhysicalParams,
    spectrum: &GravitonSpectrum,
    kernel: &SpatialKernel,
    opts: &RateOptions,
) -> Result<RateResult, DecoherenceError> {
    params.validate()?;
    let dx = params.dx;
    let k_minus_one = kernel.bracket_value_minus_one(dx);
    let tau0_m = match opts.window {
        TimeWindow::Stationary => None,
        TimeWindow::Finite(t) if t > 0.0 && t.is_finite() => Some(opts.constants.c() * t),
        TimeWindow::Finite(t) => {
            return Err(DecoherenceError::InvalidParams(format!("tau0 = {t}")));
        }
    };
    let integrand = |p: f64| {
        let bracket = k_minus_one + one_minus_sinc(p * dx);
        let weight = match tau0_m {
            None => 1.0,
            Some(t) => sinc_factor(p, t),
        };
        p * p * spectrum.eval_unchecked(p) * weight * bracket / (2.0 * PI * PI)
    };
    let limit = spectrum.support_limit();
    let mut qopts = SemiInfiniteOptions::new(opts.rel_tol)
        .with_scale(spectrum.momentum_scale())
        .with_breakpoints(spectrum.knots())
        .with_abs_tol(
            1e-3 * opts.rel_tol * spectrum.second_moment() * (1.0 + k_minus_one.abs() + 1.0),
        );
    if dx > 0.0 {
        qopts = qopts.with_periodic_cuts(PI / dx, limit, 4000);
    }
    if let Some(t) = tau0_m {
        qopts = qopts.with_periodic_cuts(PI / t, limit, 4000);
    }
    let q = numerics::integrate_semi_infinite_with(integrand, &qopts)?;
    let pref = coupling_prefactor(&opts.constants, params.m_f) * params.volume;
    let c = &opts.constants;
    Ok(RateResult::new(
        c.inv_m_to_rate(pref * q.value),
        c.inv_m_to_rate(pref * q.abs_error_estimate),
        RateMethod::Quadrature,
    ))
}

/// [K(dx) - (1 + p_c^2 dx^2)^{-2}] for the exponential spectrum.
pub fn exponential_bracket(kernel: &SpatialKernel, dx: f64, p_c: f64) -> f64 {
    let a2 = (p_c * dx) * (p_c * dx);
    // 1 - (1 + a^2)^{-2} = a^2 (2 + a^2) / (1 + a^2)^2
    kernel.bracket_value_minus_one(dx) + a2 * (2.0 + a2) / ((1.0 + a2) * (1.0 + a2))
}

/// Closed form for I(p) = I0 exp(-p/p_c), using
/// \int_0^\infty p^2 e^{-p/p_c} sin(p dx)/(p dx) dp = 2 p_c^3 / (1 + p_c^2 dx^2)^2.
pub fn gamma_closed_form_exponential(
    params: &PhysicalParams,
    i0: f64,
    p_c: f64,
    kernel: &SpatialKernel,
    constants: &Constants,
) -> Result<RateResult, DecoherenceError> {
    params.validate()?;
    let bracket = exponential_bracket(kernel, params.dx, p_c);
    let gamma = constants.inv_m_to_rate(closed_form_unit_rate(params.m_f, p_c, constants))
        * params.volume
        * i0
        * bracket;
    Ok(RateResult::new(gamma, 0.0, RateMethod::ClosedForm))
}

/// kappa^2 p_c^3 / (16 pi^2 m_f^2) in m^-1 per unit I0 V.
fn closed_form_unit_rate(m_f: f64, p_c: f64, constants: &Constants) -> f64 {
    coupling_prefactor(constants, m_f) * p_c.powi(3) / (PI * PI)
}

/// The constant C = kappa^2 V I0 p_c^3 / (16 pi^2 m_f^2), in s^-1.
pub fn exponential_rate_constant(
    params: &PhysicalParams,
    i0: f64,
    p_c: f64,
    constants: &Constants,
) -> f64 {
    constants.inv_m_to_rate(closed_form_unit_rate(params.m_f, p_c, constants)) * params.volume * i0
}

/// Returns the product I0 * V (m^-2) that gives `target_hz` for the
/// exponential spectrum. `params.volume` is ignored.
pub fn calibrate_amplitude(
    target_hz: f64,
    params: &PhysicalParams,
    p_c: f64,
    kernel: &SpatialKernel,
    constants: &Constants,
) -> Result<f64, DecoherenceError> {
    if !(target_hz > 0.0 && target_hz.is_finite()) {
        return Err(DecoherenceError::BadTarget(target_hz));
    }
    params.validate()?;
    let bracket = exponential_bracket(kernel, params.dx, p_c);
    if !(bracket > 0.0) {
        return Err(DecoherenceError::NonPositiveBracket(bracket));
    }
    let per_unit = constants.inv_m_to_rate(closed_form_unit_rate(params.m_f, p_c, constants)) * bracket;
    Ok(target_hz / per_unit)
}

/// Reference configurations.
pub mod presets {
    use super::*;

    pub const PAPER_ELECTRON_SIGMA0: f64 = 1e-9;
    pub const PAPER_ELECTRON_DX: f64 = 1e-9;
    pub const PAPER_ELECTRON_GAMMA_HZ: f64 = 1e-2;
    /// Normalization volume used by the preset; only I0 V is meaningful.
    pub const PAPER_ELECTRON_VOLUME: f64 = 1e-27;

    /// I0 * V (m^-2) that puts the electron at 1e-2 Hz for
    /// sigma0 = dx = 1 nm, p_c = 1/sigma0, normalized kernel.
    pub const PAPER_ELECTRON_I0_V: f64 = 4.253_222_145_831_881_4e57;

    #[derive(Debug, Clone, PartialEq)]
    pub struct RatePreset {
        pub params: PhysicalParams,
        pub spectrum: GravitonSpectrum,
        pub kernel: SpatialKernel,
    }

    pub fn paper_electron() -> RatePreset {
        let c = Constants::CODATA_2018;
        let params = PhysicalParams {
            m_f: c.electron_mass(),
            sigma0: PAPER_ELECTRON_SIGMA0,
            dx: PAPER_ELECTRON_DX,
            volume: PAPER_ELECTRON_VOLUME,
        };
        RatePreset {
            params,
            spectrum: GravitonSpectrum::Exponential {
                i0: PAPER_ELECTRON_I0_V / PAPER_ELECTRON_VOLUME,
                p_c: 1.0 / PAPER_ELECTRON_SIGMA0,
            },
            kernel: SpatialKernel::normalized(PAPER_ELECTRON_SIGMA0),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const C: Constants = Constants::CODATA_2018;

    fn unit_params(dx_over_sigma: f64) -> PhysicalParams {
        PhysicalParams::new(C.electron_mass(), 1e-9, dx_over_sigma * 1e-9, 1e-27).unwrap()
    }

    #[test]
    fn kernel_examples() {
        let k = SpatialKernel::normalized(2.0);
        assert_eq!(k.value(0.0), 1.0);
        assert!((k.value(8f64.sqrt() * 2.0) - (-1f64).exp()).abs() < 1e-15);
        let raw = SpatialKernel::raw(1.0);
        assert!((raw.value(0.0) - (4.0 * PI).powf(-1.5)).abs() < 1e-16);
        assert!((raw.value(0.0) - 0.022_448_4).abs() < 1e-7);
        assert!((raw.bracket_value(0.3) - SpatialKernel::normalized(1.0).value(0.3)).abs() < 1e-15);
    }

    #[test]
    fn sinc_examples() {
        assert_eq!(sinc_factor(0.0, 1.0), 1.0);
        assert!(sinc_factor(PI, 1.0).abs() < 1e-16);
        assert!((sinc_factor(PI / 2.0, 1.0) - 2.0 / PI).abs() < 1e-15);
        // continuity across the series threshold
        let below = sinc_factor(0.999_999e-4, 1.0);
        let above = sinc_factor(1.000_001e-4, 1.0);
        assert!((below - above).abs() < 1e-14);
        for x in [1e-8_f64, 1e-3, 0.05, 0.099, 0.1, 0.5] {
            let direct = if x < 1e-4 { x * x / 6.0 } else { 1.0 - x.sin() / x };
            assert!((one_minus_sinc(x) / direct - 1.0).abs() < 1e-7, "x={x}");
        }
    }

    #[test]
    fn zero_separation_gives_zero_rate() {
        let p = unit_params(0.0);
        let s = GravitonSpectrum::exponential(1e84, 1e9).unwrap();
        let k = SpatialKernel::normalized(p.sigma0);
        let q = gamma_rate(&p, &s, &k, &RateOptions::default()).unwrap();
        assert_eq!(q.gamma_hz, 0.0);
        let cf = gamma_closed_form_exponential(&p, 1e84, 1e9, &k, &C).unwrap();
        assert_eq!(cf.gamma_hz, 0.0);
        assert!(cf.warnings.is_empty());
    }

    #[test]
    fn bracket_examples() {
        let k = SpatialKernel::normalized(1.0);
        assert!((exponential_bracket(&k, 1.0, 1.0) - 0.632_496_902_584_595_9).abs() < 1e-13);
        let far = exponential_bracket(&k, 10.0, 1.0);
        let expect = (-12.5f64).exp() - 1.0 / (101.0 * 101.0);
        assert!((far - expect).abs() < 1e-15);
        assert!((far - -9.43e-5).abs() < 1e-7);
        // p_c dx -> infinity: bracket -> kernel
        let k = SpatialKernel::normalized(1e-3);
        let b = exponential_bracket(&k, 1e-4, 1e9);
        assert!((b - k.value(1e-4)).abs() < 1e-8);
    }

    #[test]
    fn negative_rate_is_flagged_not_clamped() {
        let p = unit_params(10.0);
        let k = SpatialKernel::normalized(p.sigma0);
        let r = gamma_closed_form_exponential(&p, 1e84, 1e9, &k, &C).unwrap();
        assert!(r.gamma_hz < 0.0);
        assert_eq!(r.warnings, vec![RateWarning::NegativeRate]);
        let cst = exponential_rate_constant(&p, 1e84, 1e9, &C);
        assert!((r.gamma_hz / cst - -9.43e-5).abs() < 1e-7);
    }

    #[test]
    fn quadrature_matches_closed_form_on_example() {
        let p = unit_params(1.0);
        let k = SpatialKernel::normalized(p.sigma0);
        let s = GravitonSpectrum::exponential(1e84, 1e9).unwrap();
        let q = gamma_rate(&p, &s, &k, &RateOptions::default()).unwrap();
        let cf = gamma_closed_form_exponential(&p, 1e84, 1e9, &k, &C).unwrap();
        let cst = exponential_rate_constant(&p, 1e84, 1e9, &C);
        assert!((cf.gamma_hz / cst - 0.632_496_9).abs() < 1e-7);
        assert!((q.gamma_hz / cf.gamma_hz - 1.0).abs() < 1e-6);
        assert_eq!(q.method, RateMethod::Quadrature);
    }

    #[test]
    fn raw_mode_reproduces_normalized_rate() {
        let p = unit_params(2.0);
        let s = GravitonSpectrum::exponential(1e84, 1e9).unwrap();
        let a = gamma_rate(&p, &s, &SpatialKernel::raw(p.sigma0), &RateOptions::default()).unwrap();
        let b = gamma_rate(&p, &s, &SpatialKernel::normalized(p.sigma0), &RateOptions::default()).unwrap();
        assert!((a.gamma_hz / b.gamma_hz - 1.0).abs() < 1e-8);
    }

    #[test]
    fn calibration_round_trip_and_linearity() {
        let p = unit_params(1.0);
        let k = SpatialKernel::normalized(p.sigma0);
        let i0v = 3.7e57;
        let r = gamma_closed_form_exponential(&p, i0v / p.volume, 1e9, &k, &C).unwrap();
        let back = calibrate_amplitude(r.gamma_hz, &p, 1e9, &k, &C).unwrap();
        assert!((back / i0v - 1.0).abs() < 1e-12);
        let a = calibrate_amplitude(1e-2, &p, 1e9, &k, &C).unwrap();
        let b = calibrate_amplitude(2e-2, &p, 1e9, &k, &C).unwrap();
        assert!((b / a - 2.0).abs() < 1e-14);
        let far = unit_params(10.0);
        assert!(matches!(
            calibrate_amplitude(1e-2, &far, 1e9, &k, &C),
            Err(DecoherenceError::NonPositiveBracket(_))
        ));
        assert!(calibrate_amplitude(0.0, &p, 1e9, &k, &C).is_err());
    }

    #[test]
    fn paper_electron_golden_amplitude() {
        let pre = presets::paper_electron();
        let i0v = calibrate_amplitude(1e-2, &pre.params, 1e9, &pre.kernel, &C).unwrap();
        assert!((i0v / presets::PAPER_ELECTRON_I0_V - 1.0).abs() < 1e-12, "{i0v:e}");
        let (i0, pc) = match pre.spectrum {
            GravitonSpectrum::Exponential { i0, p_c } => (i0, p_c),
            _ => unreachable!(),
        };
        let r = gamma_closed_form_exponential(&pre.params, i0, pc, &pre.kernel, &C).unwrap();
        assert!((r.gamma_hz - 1e-2).abs() < 1e-14);
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(PhysicalParams::new(0.0, 1.0, 0.0, 1.0).is_err());
        assert!(PhysicalParams::new(1.0, -1.0, 0.0, 1.0).is_err());
        assert!(PhysicalParams::new(1.0, 1.0, -1.0, 1.0).is_err());
        assert!(PhysicalParams::new(1.0, 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn finite_window_suppresses_rate() {
        let p = unit_params(1.0);
        let k = SpatialKernel::normalized(p.sigma0);
        let s = GravitonSpectrum::exponential(1e84, 1e9).unwrap();
        let base = gamma_rate(&p, &s, &k, &RateOptions::default()).unwrap();
        // tau0 c << sigma0: every relevant mode has p tau0 << 1
        let short = RateOptions::default().with_window(TimeWindow::Finite(1e-22));
        let r = gamma_rate(&p, &s, &k, &short).unwrap();
        assert!((r.gamma_hz / base.gamma_hz - 1.0).abs() < 1e-6);
        let long = RateOptions::default().with_window(TimeWindow::Finite(1e-16));
        let r = gamma_rate(&p, &s, &k, &long).unwrap();
        assert!(r.gamma_hz.abs() < base.gamma_hz);
        assert!(gamma_rate(&p, &s, &k, &RateOptions::default().with_window(TimeWindow::Finite(-1.0))).is_err());
    }
}
