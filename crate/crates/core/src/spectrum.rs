//! Graviton spectral density models and their moments.
//!
//! Momenta are in inverse meters. The amplitude carries whatever dimension
//! makes the decoherence rate come out as a rate; only the product I0 * V
//! is physically pinned (see [`crate::decoherence::calibrate_amplitude`]).

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use thiserror::Error;

use crate::numerics::{self, QuadratureError, SemiInfiniteOptions};

#[derive(Debug, Error)]
pub enum SpectrumError {
    #[error("momentum must be nonnegative, got {0}")]
    NegativeMomentum(f64),
    #[error("volume must be positive, got {0}")]
    NonPositiveVolume(f64),
    #[error("invalid exponential spectrum: {0}")]
    InvalidExponential(String),
    #[error("invalid tabulated spectrum: {0}")]
    InvalidTable(String),
    #[error("reading spectrum table: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum GravitonSpectrum {
    /// I0 exp(-p / p_c).
    Exponential { i0: f64, p_c: f64 },
    /// Piecewise-linear through (p, value) points, zero beyond the last point.
    Tabulated { p: Vec<f64>, value: Vec<f64> },
}

impl GravitonSpectrum {
    pub fn exponential(i0: f64, p_c: f64) -> Result<Self, SpectrumError> {
        if !(i0 >= 0.0 && i0.is_finite()) {
            return Err(SpectrumError::InvalidExponential(format!("amplitude {i0}")));
        }
        if !(p_c > 0.0 && p_c.is_finite()) {
            return Err(SpectrumError::InvalidExponential(format!("cutoff {p_c}")));
        }
        Ok(Self::Exponential { i0, p_c })
    }

    pub fn tabulated(p: Vec<f64>, value: Vec<f64>) -> Result<Self, SpectrumError> {
        if p.len() != value.len() {
            return Err(SpectrumError::InvalidTable("column lengths differ".into()));
        }
        if p.len() < 2 {
            return Err(SpectrumError::InvalidTable("need at least 2 points".into()));
        }
        if p[0] < 0.0 || p.iter().any(|x| !x.is_finite()) {
            return Err(SpectrumError::InvalidTable("momenta must be finite and >= 0".into()));
        }
        if p.windows(2).any(|w| w[1] <= w[0]) {
            return Err(SpectrumError::InvalidTable("momenta must be strictly ascending".into()));
        }
        if value.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(SpectrumError::InvalidTable("values must be finite and >= 0".into()));
        }
        Ok(Self::Tabulated { p, value })
    }

    /// Parses a two-column CSV `p_inv_m,intensity`. A non-numeric first line
    /// is treated as a header; blank lines and `#` comments are skipped.
    pub fn from_csv_str(text: &str) -> Result<Self, SpectrumError> {
        let mut ps = Vec::new();
        let mut vs = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut cols = line.split(',').map(str::trim);
            let (a, b) = match (cols.next(), cols.next(), cols.next()) {
                (Some(a), Some(b), None) => (a, b),
                _ => {
                    return Err(SpectrumError::InvalidTable(format!(
                        "line {}: expected two columns",
                        lineno + 1
                    )))
                }
            };
            match (a.parse::<f64>(), b.parse::<f64>()) {
                (Ok(p), Ok(v)) => {
                    ps.push(p);
                    vs.push(v);
                }
                _ if ps.is_empty() && lineno == 0 => continue,
                _ => {
                    return Err(SpectrumError::InvalidTable(format!(
                        "line {}: not a number",
                        lineno + 1
                    )))
                }
            }
        }
        Self::tabulated(ps, vs)
    }

    pub fn from_csv_path(path: &Path) -> Result<Self, SpectrumError> {
        Self::from_csv_str(&std::fs::read_to_string(path)?)
    }

    pub fn eval(&self, p: f64) -> Result<f64, SpectrumError> {
        if p < 0.0 || p.is_nan() {
            return Err(SpectrumError::NegativeMomentum(p));
        }
        Ok(self.eval_unchecked(p))
    }

    pub(crate) fn eval_unchecked(&self, p: f64) -> f64 {
        match self {
            Self::Exponential { i0, p_c } => i0 * (-p / p_c).exp(),
            Self::Tabulated { p: grid, value } => {
                let last = grid.len() - 1;
                if p < grid[0] || p > grid[last] {
                    return 0.0;
                }
                let k = grid.partition_point(|x| *x <= p).clamp(1, last);
                let (p0, p1) = (grid[k - 1], grid[k]);
                let s = (p - p0) / (p1 - p0);
                value[k - 1] + s * (value[k] - value[k - 1])
            }
        }
    }

    /// Characteristic momentum used to scale quadrature mappings.
    pub fn momentum_scale(&self) -> f64 {
        match self {
            Self::Exponential { p_c, .. } => *p_c,
            Self::Tabulated { p, .. } => {
                let top = p[p.len() - 1];
                if top > 0.0 {
                    top
                } else {
                    1.0
                }
            }
        }
    }

    /// Momentum beyond which the spectrum is negligible (or exactly zero).
    pub(crate) fn support_limit(&self) -> f64 {
        match self {
            Self::Exponential { p_c, .. } => 750.0 * p_c,
            Self::Tabulated { p, .. } => p[p.len() - 1],
        }
    }

    /// Integration breakpoints intrinsic to the model (table knots).
    pub(crate) fn knots(&self) -> Vec<f64> {
        match self {
            Self::Exponential { .. } => Vec::new(),
            Self::Tabulated { p, .. } => p.clone(),
        }
    }

    /// \int_0^\infty p^2 I(p) dp / (2 pi^2), in closed form.
    pub fn second_moment(&self) -> f64 {
        match self {
            Self::Exponential { i0, p_c } => i0 * 2.0 * p_c.powi(3) / (2.0 * PI * PI),
            Self::Tabulated { p, value } => {
                // exact integral of p^2 times a linear segment
                let mut acc = 0.0;
                for k in 1..p.len() {
                    let (a, b) = (p[k - 1], p[k]);
                    let (fa, fb) = (value[k - 1], value[k]);
                    let slope = (fb - fa) / (b - a);
                    let c0 = fa - slope * a;
                    acc += c0 * (b.powi(3) - a.powi(3)) / 3.0 + slope * (b.powi(4) - a.powi(4)) / 4.0;
                }
                acc / (2.0 * PI * PI)
            }
        }
    }

    /// The same moment by adaptive quadrature, independent of the closed forms.
    pub fn second_moment_quadrature(
        &self,
        rel_tol: f64,
    ) -> Result<numerics::QuadratureResult<f64>, SpectrumError> {
        let opts = SemiInfiniteOptions::new(rel_tol)
            .with_scale(self.momentum_scale())
            .with_breakpoints(self.knots());
        let r = numerics::integrate_semi_infinite_with(
            |p| p * p * self.eval_unchecked(p) / (2.0 * PI * PI),
            &opts,
        )?;
        Ok(r)
    }

    /// N_g = V * second moment.
    pub fn graviton_number(&self, volume: f64) -> Result<f64, SpectrumError> {
        if !(volume > 0.0) {
            return Err(SpectrumError::NonPositiveVolume(volume));
        }
        Ok(volume * self.second_moment())
    }
}

/// \int_0^{tau0} e^{-i p tau} d tau = e^{-i p tau0 / 2} 2 sin(p tau0 / 2) / p.
///
/// `p` in inverse meters, `tau0` in meters (c = 1).
pub fn time_filter(p: f64, tau0: f64) -> Complex64 {
    let half = 0.5 * p * tau0;
    let amplitude = if half.abs() < 1e-4 {
        // 2 sin(x)/p = tau0 * sin(x)/x
        tau0 * (1.0 - half * half / 6.0 + half.powi(4) / 120.0)
    } else {
        2.0 * half.sin() / p
    };
    Complex64::from_polar(1.0, -half) * amplitude
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_examples() {
        let s = GravitonSpectrum::exponential(1.0, 1.0).unwrap();
        assert_eq!(s.eval(0.0).unwrap(), 1.0);
        let s = GravitonSpectrum::exponential(2.0, 3.0).unwrap();
        assert!((s.eval(3.0).unwrap() - 0.735_758_882_342_884_6).abs() < 1e-15);
        assert!(matches!(s.eval(-1.0), Err(SpectrumError::NegativeMomentum(_))));
        let t = GravitonSpectrum::tabulated(vec![0.0, 1.0], vec![1.0, 0.0]).unwrap();
        assert_eq!(t.eval(0.5).unwrap(), 0.5);
        assert_eq!(t.eval(1.5).unwrap(), 0.0);
        assert_eq!(t.eval(1.0).unwrap(), 0.0);
    }

    #[test]
    fn invalid_tables_rejected() {
        assert!(GravitonSpectrum::tabulated(vec![0.0], vec![1.0]).is_err());
        assert!(GravitonSpectrum::tabulated(vec![0.0, 0.0], vec![1.0, 1.0]).is_err());
        assert!(GravitonSpectrum::tabulated(vec![0.0, 1.0], vec![1.0, -1.0]).is_err());
        assert!(GravitonSpectrum::exponential(1.0, 0.0).is_err());
        assert!(GravitonSpectrum::exponential(-1.0, 1.0).is_err());
    }

    #[test]
    fn second_moment_examples() {
        let m = GravitonSpectrum::exponential(1.0, 1.0).unwrap().second_moment();
        assert!((m - 0.101_321_183_642_337_77).abs() < 1e-15);
        assert_eq!(GravitonSpectrum::exponential(0.0, 5.0).unwrap().second_moment(), 0.0);
        let m = GravitonSpectrum::exponential(1.0, 2.0).unwrap().second_moment();
        assert!((m - 16.0 / (2.0 * PI * PI)).abs() < 1e-14);
        assert!((m - 0.810_569).abs() < 1e-6);
    }

    #[test]
    fn closed_form_moment_matches_quadrature() {
        for pc in [0.1, 1.0, 10.0] {
            let s = GravitonSpectrum::exponential(1.3, pc).unwrap();
            let q = s.second_moment_quadrature(1e-10).unwrap();
            assert!((q.value / s.second_moment() - 1.0).abs() < 1e-8, "pc={pc}");
        }
        let t = GravitonSpectrum::tabulated(vec![0.5, 1.0, 2.0, 4.0], vec![1.0, 3.0, 0.5, 2.0]).unwrap();
        let q = t.second_moment_quadrature(1e-10).unwrap();
        assert!((q.value / t.second_moment() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn graviton_number_examples() {
        let s = GravitonSpectrum::exponential(1.0, 1.0).unwrap();
        assert!((s.graviton_number(PI * PI).unwrap() - 1.0).abs() < 1e-14);
        assert!((s.graviton_number(1.0).unwrap() - 0.101_321_183_642_337_77).abs() < 1e-15);
        assert_eq!(s.graviton_number(4.0).unwrap(), 2.0 * s.graviton_number(2.0).unwrap());
        let s2 = GravitonSpectrum::exponential(2.0, 1.0).unwrap();
        assert_eq!(s2.graviton_number(3.0).unwrap(), 2.0 * s.graviton_number(3.0).unwrap());
        assert!(s.graviton_number(0.0).is_err());
        // V I0 p_c^3 / pi^2
        let s3 = GravitonSpectrum::exponential(0.7, 3.0).unwrap();
        assert!((s3.graviton_number(2.0).unwrap() / (2.0 * 0.7 * 27.0 / (PI * PI)) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn csv_loading() {
        let s = GravitonSpectrum::from_csv_str("p_inv_m,intensity\n0,1\n# c\n1,0\n").unwrap();
        assert_eq!(s.eval(0.25).unwrap(), 0.75);
        assert!(GravitonSpectrum::from_csv_str("0,1\n1\n").is_err());
        assert!(GravitonSpectrum::from_csv_str("0,1\nx,y\n").is_err());
    }

    #[test]
    fn time_filter_examples() {
        assert_eq!(time_filter(0.0, 5.0), Complex64::new(5.0, 0.0));
        assert!(time_filter(2.0 * PI / 3.0, 3.0).norm() < 1e-15);
        let f = time_filter(1.0, PI);
        assert!((f - Complex64::new(0.0, -2.0)).norm() < 1e-15);
    }

    #[test]
    fn time_filter_matches_direct_integration() {
        let (p, tau0): (f64, f64) = (1.7, 2.3);
        let re = numerics::integrate_interval(|t| (p * t).cos(), 0.0, tau0, 1e-12, 0.0).unwrap();
        let im = numerics::integrate_interval(|t| -(p * t).sin(), 0.0, tau0, 1e-12, 0.0).unwrap();
        let f = time_filter(p, tau0);
        assert!((f.re - re.value).abs() < 1e-12);
        assert!((f.im - im.value).abs() < 1e-12);
    }

    #[test]
    fn time_filter_amplitude_bound() {
        for i in 0..400 {
            let p = 0.05 * i as f64;
            for tau0 in [0.0, 0.3, 1.0, 7.0] {
                assert!(time_filter(p, tau0).norm() <= tau0 * (1.0 + 1e-15));
            }
        }
    }
}
