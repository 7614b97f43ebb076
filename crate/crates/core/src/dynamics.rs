//! Two-level dynamics under the graviton dissipator, N^2 amplification,
//! regime labels and the (M, N) classicality sweep.

use std::io::{self, Write};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::decoherence::{
    gamma_closed_form_exponential, gamma_rate, DecoherenceError, PhysicalParams, RateOptions,
    SpatialKernel,
};
use crate::spectrum::GravitonSpectrum;

/// Tolerance on trace and positivity checks.
pub const STATE_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("invalid qubit state: {0}")]
    InvalidState(String),
    #[error("invalid time {0}")]
    InvalidTime(f64),
    #[error("invalid rate {0}")]
    InvalidRate(f64),
    #[error("invalid system: {0}")]
    InvalidSystem(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("richardson estimate {estimate:e} exceeds tolerance {tol:e}; reduce the step")]
    StepTooCoarse { estimate: f64, tol: f64 },
    #[error(transparent)]
    Decoherence(#[from] DecoherenceError),
}

/// Density matrix of a two-branch superposition; rho21 = conj(rho12).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QubitState {
    pub rho11: f64,
    pub rho22: f64,
    pub rho12: Complex64,
}

impl QubitState {
    pub fn new(rho11: f64, rho22: f64, rho12: Complex64) -> Result<Self, DynamicsError> {
        let s = Self { rho11, rho22, rho12 };
        s.validate()?;
        Ok(s)
    }

    /// (|1> + e^{i phase}|2>)/sqrt2.
    pub fn equal_superposition(phase: f64) -> Self {
        Self { rho11: 0.5, rho22: 0.5, rho12: Complex64::from_polar(0.5, -phase) }
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        let bad = |m: String| Err(DynamicsError::InvalidState(m));
        let (a, b, c) = (self.rho11, self.rho22, self.rho12);
        if !(a.is_finite() && b.is_finite() && c.re.is_finite() && c.im.is_finite()) {
            return bad("non-finite entry".into());
        }
        if (a + b - 1.0).abs() > STATE_TOL {
            return bad(format!("trace {} != 1", a + b));
        }
        if !(-STATE_TOL..=1.0 + STATE_TOL).contains(&a) || !(-STATE_TOL..=1.0 + STATE_TOL).contains(&b) {
            return bad(format!("populations ({a}, {b}) outside [0, 1]"));
        }
        if c.norm_sqr() > a * b + STATE_TOL {
            return bad(format!("|rho12|^2 = {} exceeds rho11 rho22 = {}", c.norm_sqr(), a * b));
        }
        Ok(())
    }

    pub fn rho21(&self) -> Complex64 {
        self.rho12.conj()
    }

    pub fn trace(&self) -> f64 {
        self.rho11 + self.rho22
    }

    /// Population gap w = rho11 - rho22.
    pub fn gap(&self) -> f64 {
        self.rho11 - self.rho22
    }

    pub fn purity(&self) -> f64 {
        self.rho11 * self.rho11 + self.rho22 * self.rho22 + 2.0 * self.rho12.norm_sqr()
    }

    /// max(|rho11 - o.rho11|, |rho22 - o.rho22|, |rho12 - o.rho12|).
    pub fn max_abs_diff(&self, o: &QubitState) -> f64 {
        (self.rho11 - o.rho11)
            .abs()
            .max((self.rho22 - o.rho22).abs())
            .max((self.rho12 - o.rho12).norm())
    }
}

/// rho12(t) = rho12(0) exp(-gamma t).
pub fn evolve_coherence(rho12_0: Complex64, gamma: f64, t: f64) -> Complex64 {
    debug_assert!(t >= 0.0);
    rho12_0 * (-gamma * t).exp()
}

/// Analytic solution: w(t) = w(0) exp(-2 gamma t) at fixed trace, coherence
/// per [`evolve_coherence`].
pub fn evolve_populations(state0: &QubitState, gamma: f64, t: f64) -> Result<QubitState, DynamicsError> {
    state0.validate()?;
    check_time(t)?;
    if !gamma.is_finite() {
        return Err(DynamicsError::InvalidRate(gamma));
    }
    let trace = state0.trace();
    let w = state0.gap() * (-2.0 * gamma * t).exp();
    Ok(QubitState {
        rho11: 0.5 * (trace + w),
        rho22: 0.5 * (trace - w),
        rho12: evolve_coherence(state0.rho12, gamma, t),
    })
}

fn check_time(t: f64) -> Result<(), DynamicsError> {
    if t >= 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(DynamicsError::InvalidTime(t))
    }
}

fn generator(gamma: f64, s: &QubitState) -> QubitState {
    let w = s.gap();
    QubitState { rho11: -gamma * w, rho22: gamma * w, rho12: -gamma * s.rho12 }
}

fn axpy(s: &QubitState, h: f64, d: &QubitState) -> QubitState {
    QubitState { rho11: s.rho11 + h * d.rho11, rho22: s.rho22 + h * d.rho22, rho12: s.rho12 + d.rho12 * h }
}

fn rk4_step(gamma: f64, s: &QubitState, h: f64) -> QubitState {
    let k1 = generator(gamma, s);
    let k2 = generator(gamma, &axpy(s, 0.5 * h, &k1));
    let k3 = generator(gamma, &axpy(s, 0.5 * h, &k2));
    let k4 = generator(gamma, &axpy(s, h, &k3));
    QubitState {
        rho11: s.rho11 + h / 6.0 * (k1.rho11 + 2.0 * k2.rho11 + 2.0 * k3.rho11 + k4.rho11),
        rho22: s.rho22 + h / 6.0 * (k1.rho22 + 2.0 * k2.rho22 + 2.0 * k3.rho22 + k4.rho22),
        rho12: s.rho12 + (k1.rho12 + k2.rho12 * 2.0 + k3.rho12 * 2.0 + k4.rho12) * (h / 6.0),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepSolution {
    pub times: Vec<f64>,
    pub states: Vec<QubitState>,
    /// max |y_h - y_{h/2}| / 15 over the step grid.
    pub richardson_estimate: f64,
}

/// Fixed-step RK4 over [0, t_end] with step close to `h` (the interval is
/// split into whole steps). The run is repeated at h/2 and the Richardson
/// estimate is checked against `richardson_tol`.
pub fn integrate_rk4(
    state0: &QubitState,
    gamma: f64,
    t_end: f64,
    h: f64,
    richardson_tol: f64,
) -> Result<StepSolution, DynamicsError> {
    state0.validate()?;
    check_time(t_end)?;
    if !gamma.is_finite() {
        return Err(DynamicsError::InvalidRate(gamma));
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(DynamicsError::InvalidTime(h));
    }
    let n = ((t_end / h).ceil() as usize).max(1);
    let h = t_end / n as f64;
    let mut times = Vec::with_capacity(n + 1);
    let mut states = Vec::with_capacity(n + 1);
    let mut coarse = *state0;
    let mut fine = *state0;
    let mut estimate: f64 = 0.0;
    times.push(0.0);
    states.push(coarse);
    for i in 1..=n {
        coarse = rk4_step(gamma, &coarse, h);
        fine = rk4_step(gamma, &rk4_step(gamma, &fine, 0.5 * h), 0.5 * h);
        estimate = estimate.max(coarse.max_abs_diff(&fine) / 15.0);
        times.push(h * i as f64);
        states.push(coarse);
    }
    if estimate > richardson_tol {
        return Err(DynamicsError::StepTooCoarse { estimate, tol: richardson_tol });
    }
    Ok(StepSolution { times, states, richardson_estimate: estimate })
}

/// Analytic time series on `n_points` equally spaced times in [0, t_end].
pub fn evolve_series(
    state0: &QubitState,
    gamma: f64,
    t_end: f64,
    n_points: usize,
) -> Result<Vec<(f64, QubitState)>, DynamicsError> {
    check_time(t_end)?;
    if n_points < 2 {
        return Err(DynamicsError::InvalidGrid(format!("n_points = {n_points}")));
    }
    (0..n_points)
        .map(|i| {
            let t = if i + 1 == n_points { t_end } else { t_end * i as f64 / (n_points - 1) as f64 };
            Ok((t, evolve_populations(state0, gamma, t)?))
        })
        .collect()
}

pub fn write_series_csv<W: Write>(series: &[(f64, QubitState)], mut w: W) -> io::Result<()> {
    writeln!(w, "t_s,rho11,rho22,re_rho12,im_rho12")?;
    for (t, s) in series {
        writeln!(w, "{:e},{:e},{:e},{:e},{:e}", t, s.rho11, s.rho22, s.rho12.re, s.rho12.im)?;
    }
    Ok(())
}

/// A composite of N identical constituents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AmplifiedSystem {
    /// Stored as f64 so log grids up to 1e18 and beyond are representable.
    pub n_constituents: f64,
    pub total_mass: f64,
    pub constituent_mass: f64,
}

impl AmplifiedSystem {
    /// m_f = M / N.
    pub fn from_total_mass(total_mass: f64, n: f64) -> Result<Self, DynamicsError> {
        check_n(n)?;
        check_mass(total_mass)?;
        Ok(Self { n_constituents: n, total_mass, constituent_mass: total_mass / n })
    }

    /// M = N m_f.
    pub fn from_constituents(constituent_mass: f64, n: f64) -> Result<Self, DynamicsError> {
        check_n(n)?;
        check_mass(constituent_mass)?;
        Ok(Self { n_constituents: n, total_mass: constituent_mass * n, constituent_mass })
    }

    pub fn single(mass: f64) -> Result<Self, DynamicsError> {
        Self::from_constituents(mass, 1.0)
    }
}

fn check_n(n: f64) -> Result<(), DynamicsError> {
    if n >= 1.0 && n.is_finite() {
        Ok(())
    } else {
        Err(DynamicsError::InvalidSystem(format!("N = {n}")))
    }
}

fn check_mass(m: f64) -> Result<(), DynamicsError> {
    if m > 0.0 && m.is_finite() {
        Ok(())
    } else {
        Err(DynamicsError::InvalidSystem(format!("mass = {m}")))
    }
}

/// Gamma_N = N^2 Gamma_1.
pub fn amplified_rate(sys: &AmplifiedSystem, gamma1: f64) -> f64 {
    sys.n_constituents * sys.n_constituents * gamma1
}

/// Gamma_M = (M / m_f)^2 Gamma_1.
pub fn mass_scaled_rate(total_mass: f64, constituent_mass: f64, gamma1: f64) -> f64 {
    let r = total_mass / constituent_mass;
    r * r * gamma1
}

/// 1 / Gamma; infinite for a vanishing or negative rate.
pub fn decoherence_time(gamma: f64) -> f64 {
    if gamma > 0.0 {
        1.0 / gamma
    } else {
        f64::INFINITY
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    FullyCoherent,
    WeakDecoherence,
    TransitionRegime,
    RapidDecoherence,
    ClassicalLimit,
}

impl Regime {
    pub const ALL: [Regime; 5] = [
        Regime::FullyCoherent,
        Regime::WeakDecoherence,
        Regime::TransitionRegime,
        Regime::RapidDecoherence,
        Regime::ClassicalLimit,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Regime::FullyCoherent => "Fully coherent",
            Regime::WeakDecoherence => "Weak decoherence",
            Regime::TransitionRegime => "Transition regime",
            Regime::RapidDecoherence => "Rapid decoherence",
            Regime::ClassicalLimit => "Classical limit",
        }
    }

    /// Token used in CSV output.
    pub fn slug(&self) -> &'static str {
        match self {
            Regime::FullyCoherent => "fully-coherent",
            Regime::WeakDecoherence => "weak-decoherence",
            Regime::TransitionRegime => "transition-regime",
            Regime::RapidDecoherence => "rapid-decoherence",
            Regime::ClassicalLimit => "classical-limit",
        }
    }

    /// Lower bound on tau_dec / horizon for the label (None for the last).
    pub fn lower_ratio(&self) -> Option<f64> {
        REGIME_THRESHOLDS.iter().find(|(r, _)| r == self).map(|&(_, t)| t)
    }
}

/// A label applies when tau_dec / horizon strictly exceeds its threshold;
/// anything at or below the last threshold is the classical limit. Ratios
/// within [`THRESHOLD_SLACK`] of a threshold count as sitting on it, so
/// last-digit noise in a calibrated rate cannot flip the label.
pub const REGIME_THRESHOLDS: [(Regime, f64); 4] = [
    (Regime::FullyCoherent, 1e6),
    (Regime::WeakDecoherence, 1e2),
    (Regime::TransitionRegime, 1e-2),
    (Regime::RapidDecoherence, 1e-6),
];

pub const THRESHOLD_SLACK: f64 = 1e-9;

pub const DEFAULT_HORIZON_S: f64 = 1.0;

/// Labels the amplified rate against an observation horizon in seconds.
/// Non-positive rates mean no decoherence.
pub fn classify_regime(gamma_n: f64, horizon: f64) -> Result<Regime, DynamicsError> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(DynamicsError::InvalidTime(horizon));
    }
    if gamma_n.is_nan() {
        return Err(DynamicsError::InvalidRate(gamma_n));
    }
    let ratio = decoherence_time(gamma_n) / horizon;
    Ok(REGIME_THRESHOLDS
        .iter()
        .find(|&&(_, t)| ratio > t * (1.0 + THRESHOLD_SLACK))
        .map(|&(r, _)| r)
        .unwrap_or(Regime::ClassicalLimit))
}

impl AmplifiedSystem {
    pub fn classify(&self, gamma1: f64, horizon: f64) -> Result<Regime, DynamicsError> {
        classify_regime(amplified_rate(self, gamma1), horizon)
    }
}

/// n log-spaced points from `start` to `stop` inclusive. Integral decades
/// are produced exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogGrid {
    pub start: f64,
    pub stop: f64,
    pub n: usize,
}

impl LogGrid {
    pub fn new(start: f64, stop: f64, n: usize) -> Result<Self, DynamicsError> {
        let g = Self { start, stop, n };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        if !(self.start > 0.0 && self.stop > 0.0 && self.start.is_finite() && self.stop.is_finite()) {
            return Err(DynamicsError::InvalidGrid(format!("range [{}, {}]", self.start, self.stop)));
        }
        if self.n == 0 || (self.n == 1 && self.start != self.stop) {
            return Err(DynamicsError::InvalidGrid(format!("{} points for [{}, {}]", self.n, self.start, self.stop)));
        }
        if self.stop < self.start {
            return Err(DynamicsError::InvalidGrid(format!("stop {} below start {}", self.stop, self.start)));
        }
        Ok(())
    }

    /// Decades between neighbouring points (0 for a single point).
    pub fn log_step(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.stop.log10() - self.start.log10()) / (self.n - 1) as f64
        }
    }

    pub fn points(&self) -> Vec<f64> {
        let (l0, step) = (self.start.log10(), self.log_step());
        (0..self.n)
            .map(|i| {
                if i == 0 {
                    return self.start;
                }
                if i + 1 == self.n {
                    return self.stop;
                }
                let l = l0 + step * i as f64;
                let r = l.round();
                if (l - r).abs() < 1e-9 {
                    format!("1e{}", r as i32).parse().expect("decade literal")
                } else {
                    10f64.powf(l)
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub masses: LogGrid,
    pub constituents: LogGrid,
    /// sigma0, dx and volume are used; m_f is replaced by M / N per cell.
    pub params: PhysicalParams,
    pub spectrum: GravitonSpectrum,
    pub rate_options: RateOptions,
    pub horizon_s: f64,
}

impl SweepConfig {
    pub const DEFAULT_MASSES: LogGrid = LogGrid { start: 1e-31, stop: 1e-6, n: 26 };
    pub const DEFAULT_CONSTITUENTS: LogGrid = LogGrid { start: 1.0, stop: 1e18, n: 19 };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub m_kg: f64,
    pub n: f64,
    pub gamma_hz: f64,
    pub tau_s: f64,
    pub regime: Regime,
    pub on_physical_line: bool,
}

pub const SWEEP_CSV_HEADER: &str = "M_kg,N,gamma_hz,tau_s,regime,on_physical_line";

/// Single-constituent rate for the sweep: normalized kernel, closed form
/// for the exponential spectrum, quadrature otherwise.
pub fn constituent_rate(
    params: &PhysicalParams,
    spectrum: &GravitonSpectrum,
    opts: &RateOptions,
) -> Result<f64, DynamicsError> {
    let kernel = SpatialKernel::normalized(params.sigma0);
    let r = match *spectrum {
        GravitonSpectrum::Exponential { i0, p_c } => {
            gamma_closed_form_exponential(params, i0, p_c, &kernel, &opts.constants)?
        }
        GravitonSpectrum::Tabulated { .. } => gamma_rate(params, spectrum, &kernel, opts)?,
    };
    Ok(r.gamma_hz)
}

/// Evaluates every (M, N) cell; rows are ordered by M then N. A cell lies on
/// the physical line when |log10(N m_N / M)| is within half a log-step of
/// the N grid (half a decade for a single-point grid).
pub fn sweep_grid(cfg: &SweepConfig) -> Result<Vec<SweepRow>, DynamicsError> {
    cfg.masses.validate()?;
    cfg.constituents.validate()?;
    if cfg.constituents.start < 1.0 {
        return Err(DynamicsError::InvalidGrid(format!("N grid starts at {}", cfg.constituents.start)));
    }
    let masses = cfg.masses.points();
    let ns = cfg.constituents.points();
    let half_step = match cfg.constituents.log_step() {
        s if s > 0.0 => 0.5 * s,
        _ => 0.5,
    };
    let m_n = cfg.rate_options.constants.nucleon_mass();
    let cells: Vec<(f64, f64)> = masses.iter().flat_map(|&m| ns.iter().map(move |&n| (m, n))).collect();
    cells
        .par_iter()
        .map(|&(m, n)| {
            let sys = AmplifiedSystem::from_total_mass(m, n)?;
            let mut params = cfg.params;
            params.m_f = sys.constituent_mass;
            let gamma1 = constituent_rate(&params, &cfg.spectrum, &cfg.rate_options)?;
            let gamma_n = amplified_rate(&sys, gamma1);
            Ok(SweepRow {
                m_kg: m,
                n,
                gamma_hz: gamma_n,
                tau_s: decoherence_time(gamma_n),
                regime: classify_regime(gamma_n, cfg.horizon_s)?,
                on_physical_line: (n * m_n / m).log10().abs() <= half_step,
            })
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut w: W) -> io::Result<()> {
    writeln!(w, "{SWEEP_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{:e},{:e},{:e},{:e},{},{}",
            r.m_kg,
            r.n,
            r.gamma_hz,
            r.tau_s,
            r.regime.slug(),
            u8::from(r.on_physical_line)
        )?;
    }
    Ok(())
}
