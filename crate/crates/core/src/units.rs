//! Physical constants and the SI <-> natural unit bridge.
//!
//! Internally everything is expressed with hbar = c = 1 and lengths in
//! meters, so masses, momenta, energies and rates all become inverse meters
//! and durations become meters. SI values only appear at the edges (CLI,
//! FFI, presets).

use std::fmt;
use std::ops::{Div, Mul};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum UnitError {
    #[error("dimension mismatch: {0} vs {1}")]
    Mismatch(Dimension, Dimension),
    #[error("unsupported dimension: {0}")]
    Unsupported(String),
    #[error("no natural-unit image for dimension {0}")]
    NoNaturalImage(Dimension),
    #[error("quantity is already in the {0:?} system")]
    WrongSystem(UnitSystem),
}

/// CODATA-2018 constants used throughout the crate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constants {
    g: f64,
    hbar: f64,
    c: f64,
    m_e: f64,
    m_n: f64,
}

/// Electron volt in joules (exact in SI-2019).
pub const ELECTRON_VOLT: f64 = 1.602_176_634e-19;

impl Constants {
    pub const CODATA_2018: Constants = Constants {
        g: 6.674_30e-11,
        hbar: 1.054_571_817e-34,
        c: 299_792_458.0,
        m_e: 9.109_383_701_5e-31,
        // proton mass stands in for the nucleon mass m0
        m_n: 1.672_621_923_69e-27,
    };

    pub const fn codata_2018() -> Self {
        Self::CODATA_2018
    }

    /// Replaces the gravitational constant. Only meant for scaling-law tests.
    #[doc(hidden)]
    pub fn override_g_for_testing(mut self, g: f64) -> Self {
        self.g = g;
        self
    }

    pub fn g(&self) -> f64 {
        self.g
    }
    pub fn hbar(&self) -> f64 {
        self.hbar
    }
    pub fn c(&self) -> f64 {
        self.c
    }
    pub fn electron_mass(&self) -> f64 {
        self.m_e
    }
    pub fn nucleon_mass(&self) -> f64 {
        self.m_n
    }

    /// Planck length sqrt(hbar G / c^3) in meters.
    pub fn planck_length(&self) -> f64 {
        (self.hbar * self.g / self.c.powi(3)).sqrt()
    }

    /// kappa^2 = 16 pi G in the requested system. In natural units this is
    /// 16 pi l_P^2 (m^2).
    pub fn kappa_squared(&self, system: UnitSystem) -> Quantity {
        let si = Quantity::si(16.0 * std::f64::consts::PI * self.g, Dimension::COUPLING);
        match system {
            UnitSystem::Si => si,
            UnitSystem::Natural => self.to_natural(si).expect("coupling has a natural image"),
        }
    }

    /// Natural-unit conversion factor for an SI quantity of dimension `dim`:
    /// `value_nat = value_si * factor`.
    fn natural_factor(&self, dim: Dimension) -> Result<f64, UnitError> {
        if dim.temperature != 0 {
            return Err(UnitError::NoNaturalImage(dim));
        }
        // kg -> (c/hbar) m^-1, s -> c m; m stays m.
        Ok((self.c / self.hbar).powi(dim.mass as i32) * self.c.powi(dim.time as i32))
    }

    pub fn to_natural(&self, q: Quantity) -> Result<Quantity, UnitError> {
        if q.system != UnitSystem::Si {
            return Err(UnitError::WrongSystem(q.system));
        }
        let f = self.natural_factor(q.dim)?;
        Ok(Quantity { value: q.value * f, dim: q.dim, system: UnitSystem::Natural })
    }

    pub fn to_si(&self, q: Quantity) -> Result<Quantity, UnitError> {
        if q.system != UnitSystem::Natural {
            return Err(UnitError::WrongSystem(q.system));
        }
        let f = self.natural_factor(q.dim)?;
        Ok(Quantity { value: q.value / f, dim: q.dim, system: UnitSystem::Si })
    }

    // Shorthands for the conversions the physics modules need.

    /// kg -> m^-1 (inverse reduced Compton wavelength).
    pub fn mass_to_inv_m(&self, kg: f64) -> f64 {
        kg * self.c / self.hbar
    }
    /// s^-1 -> m^-1.
    pub fn rate_to_inv_m(&self, hz: f64) -> f64 {
        hz / self.c
    }
    /// m^-1 -> s^-1.
    pub fn inv_m_to_rate(&self, inv_m: f64) -> f64 {
        inv_m * self.c
    }
    /// kg m/s -> m^-1.
    pub fn momentum_to_inv_m(&self, p: f64) -> f64 {
        p / self.hbar
    }
}

impl Default for Constants {
    fn default() -> Self {
        Self::CODATA_2018
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnitSystem {
    Si,
    Natural,
}

/// SI dimension as integer exponents of (m, kg, s, K).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dimension {
    pub length: i8,
    pub mass: i8,
    pub time: i8,
    pub temperature: i8,
}

const fn dim(length: i8, mass: i8, time: i8) -> Dimension {
    Dimension { length, mass, time, temperature: 0 }
}

impl Dimension {
    pub const DIMENSIONLESS: Dimension = dim(0, 0, 0);
    pub const LENGTH: Dimension = dim(1, 0, 0);
    pub const MASS: Dimension = dim(0, 1, 0);
    pub const TIME: Dimension = dim(0, 0, 1);
    pub const MOMENTUM: Dimension = dim(1, 1, -1);
    pub const ENERGY: Dimension = dim(2, 1, -2);
    pub const ACTION: Dimension = dim(2, 1, -1);
    pub const RATE: Dimension = dim(0, 0, -1);
    pub const AREA: Dimension = dim(2, 0, 0);
    pub const VOLUME: Dimension = dim(3, 0, 0);
    pub const INVERSE_LENGTH: Dimension = dim(-1, 0, 0);
    pub const INVERSE_VOLUME: Dimension = dim(-3, 0, 0);
    pub const VELOCITY: Dimension = dim(1, 0, -1);
    /// Dimension of G and kappa^2: m^3 kg^-1 s^-2.
    pub const COUPLING: Dimension = dim(3, -1, -2);
    pub const TEMPERATURE: Dimension =
        Dimension { length: 0, mass: 0, time: 0, temperature: 1 };

    const SUPPORTED: [(Dimension, &'static str); 15] = [
        (Self::DIMENSIONLESS, "dimensionless"),
        (Self::LENGTH, "length"),
        (Self::MASS, "mass"),
        (Self::TIME, "time"),
        (Self::MOMENTUM, "momentum"),
        (Self::ENERGY, "energy"),
        (Self::ACTION, "action"),
        (Self::RATE, "rate"),
        (Self::AREA, "area"),
        (Self::VOLUME, "volume"),
        (Self::INVERSE_LENGTH, "inverse-length"),
        (Self::INVERSE_VOLUME, "inverse-volume"),
        (Self::VELOCITY, "velocity"),
        (Self::COUPLING, "gravitational-coupling"),
        (Self::TEMPERATURE, "temperature"),
    ];

    pub fn name(&self) -> Option<&'static str> {
        Self::SUPPORTED.iter().find(|(d, _)| d == self).map(|(_, n)| *n)
    }

    fn checked(self) -> Result<Dimension, UnitError> {
        if self.name().is_some() {
            Ok(self)
        } else {
            Err(UnitError::Unsupported(self.exponents()))
        }
    }

    fn exponents(&self) -> String {
        format!(
            "m^{} kg^{} s^{} K^{}",
            self.length, self.mass, self.time, self.temperature
        )
    }

    pub fn try_mul(self, rhs: Dimension) -> Result<Dimension, UnitError> {
        Dimension {
            length: self.length + rhs.length,
            mass: self.mass + rhs.mass,
            time: self.time + rhs.time,
            temperature: self.temperature + rhs.temperature,
        }
        .checked()
    }

    pub fn try_div(self, rhs: Dimension) -> Result<Dimension, UnitError> {
        Dimension {
            length: self.length - rhs.length,
            mass: self.mass - rhs.mass,
            time: self.time - rhs.time,
            temperature: self.temperature - rhs.temperature,
        }
        .checked()
    }

    /// Power of meters the dimension maps to under hbar = c = 1.
    pub fn natural_length_power(&self) -> i32 {
        self.length as i32 - self.mass as i32 + self.time as i32
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.name() {
            Some(n) => f.write_str(n),
            None => f.write_str(&self.exponents()),
        }
    }
}

/// A value tagged with its dimension and the unit system the value is in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quantity {
    pub value: f64,
    pub dim: Dimension,
    pub system: UnitSystem,
}

impl Quantity {
    pub fn si(value: f64, dim: Dimension) -> Self {
        Self { value, dim, system: UnitSystem::Si }
    }

    pub fn natural(value: f64, dim: Dimension) -> Self {
        Self { value, dim, system: UnitSystem::Natural }
    }

    fn same_kind(&self, rhs: &Quantity) -> Result<(), UnitError> {
        if self.system != rhs.system {
            return Err(UnitError::WrongSystem(rhs.system));
        }
        if self.dim != rhs.dim {
            return Err(UnitError::Mismatch(self.dim, rhs.dim));
        }
        Ok(())
    }

    pub fn try_add(self, rhs: Quantity) -> Result<Quantity, UnitError> {
        self.same_kind(&rhs)?;
        Ok(Quantity { value: self.value + rhs.value, ..self })
    }

    pub fn try_sub(self, rhs: Quantity) -> Result<Quantity, UnitError> {
        self.same_kind(&rhs)?;
        Ok(Quantity { value: self.value - rhs.value, ..self })
    }

    pub fn try_mul(self, rhs: Quantity) -> Result<Quantity, UnitError> {
        if self.system != rhs.system {
            return Err(UnitError::WrongSystem(rhs.system));
        }
        Ok(Quantity { value: self.value * rhs.value, dim: self.dim.try_mul(rhs.dim)?, ..self })
    }

    pub fn try_div(self, rhs: Quantity) -> Result<Quantity, UnitError> {
        if self.system != rhs.system {
            return Err(UnitError::WrongSystem(rhs.system));
        }
        Ok(Quantity { value: self.value / rhs.value, dim: self.dim.try_div(rhs.dim)?, ..self })
    }
}

impl Mul<f64> for Quantity {
    type Output = Quantity;
    fn mul(self, rhs: f64) -> Quantity {
        Quantity { value: self.value * rhs, ..self }
    }
}

impl Div<f64> for Quantity {
    type Output = Quantity;
    fn div(self, rhs: f64) -> Quantity {
        Quantity { value: self.value / rhs, ..self }
    }
}

/// Convenience free function using the frozen CODATA-2018 set.
pub fn to_natural(q: Quantity) -> Result<Quantity, UnitError> {
    Constants::CODATA_2018.to_natural(q)
}

pub fn to_si(q: Quantity) -> Result<Quantity, UnitError> {
    Constants::CODATA_2018.to_si(q)
}

pub fn kappa_squared(system: UnitSystem) -> Quantity {
    Constants::CODATA_2018.kappa_squared(system)
}
