//! Continuous spontaneous localization on a small lattice: Gaussian
//! correlator, the Lindblad master equation, its nonlinear stochastic
//! unraveling and the standard parameter presets.
//!
//! Mass-density operators are diagonal in the lattice basis. Basis state
//! `i` carries mass `m_ia` at point `a`, so single-particle hopping models
//! and rigid clusters share one representation.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::angular::IdentityRecord;
use crate::units::Constants;

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

const HERMITIAN_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum CslError {
    #[error("invalid CSL parameters: {0}")]
    InvalidParams(String),
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),
    #[error("correlator matrix not positive semidefinite (eigenvalue {0:e})")]
    NotPsd(f64),
    #[error("input is not Hermitian (deviation {0:e})")]
    NotHermitian(f64),
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("invalid time step: {0}")]
    InvalidStep(String),
    #[error("unstable step {step}: norm drift {drift:e} exceeds {limit:e}; reduce dt")]
    Unstable { step: usize, drift: f64, limit: f64 },
    #[error("unknown preset '{0}' (known: grw, adler_a, adler_b)")]
    UnknownPreset(String),
}

/// Collapse rate lambda (1/s), correlation length r_c (m), reference mass m0 (kg).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CslParams {
    pub lambda: f64,
    pub r_c: f64,
    pub m0: f64,
}

impl CslParams {
    pub fn new(lambda: f64, r_c: f64, m0: f64) -> Result<Self, CslError> {
        let p = Self { lambda, r_c, m0 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), CslError> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(CslError::InvalidParams(format!("lambda = {}", self.lambda)));
        }
        if !(self.r_c > 0.0 && self.r_c.is_finite()) {
            return Err(CslError::InvalidParams(format!("r_c = {}", self.r_c)));
        }
        if !(self.m0 > 0.0 && self.m0.is_finite()) {
            return Err(CslError::InvalidParams(format!("m0 = {}", self.m0)));
        }
        Ok(())
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }
}

/// (lambda / m0^2) exp(-r^2 / 4 r_c^2), in s^-1 kg^-2.
pub fn correlator(p: &CslParams, r: f64) -> f64 {
    reduced_correlator(p, r) / (p.m0 * p.m0)
}

/// m0^2 times the correlator, in s^-1.
fn reduced_correlator(p: &CslParams, r: f64) -> f64 {
    p.lambda * (-(r * r) / (4.0 * p.r_c * p.r_c)).exp()
}

/// Analytic two-branch coherence decay rate lambda (m/m0)^2 (1 - e^{-d^2/4r_c^2}).
pub fn two_site_rate(p: &CslParams, mass: f64, d: f64) -> f64 {
    let mu = mass / p.m0;
    p.lambda * mu * mu * -(-(d * d) / (4.0 * p.r_c * p.r_c)).exp_m1()
}

pub const PRESET_NAMES: [&str; 3] = ["grw", "adler_a", "adler_b"];

/// Named parameter sets with m0 the nucleon mass.
pub fn presets() -> Vec<(&'static str, CslParams)> {
    let m0 = Constants::CODATA_2018.nucleon_mass();
    vec![
        ("grw", CslParams { lambda: 1e-16, r_c: 1e-7, m0 }),
        ("adler_a", CslParams { lambda: 4e-8, r_c: 1e-7, m0 }),
        ("adler_b", CslParams { lambda: 1e-6, r_c: 1e-6, m0 }),
    ]
}

pub fn preset(name: &str) -> Result<CslParams, CslError> {
    presets()
        .into_iter()
        .find(|(n, _)| *n == name)
        .map(|(_, p)| p)
        .ok_or_else(|| CslError::UnknownPreset(name.to_string()))
}

pub type Point = [f64; 3];

fn distance(a: &Point, b: &Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CslLattice {
    points: Vec<Point>,
    /// dim x n_points, kg.
    masses: DMatrix<f64>,
    /// dim x dim Hermitian, J.
    hamiltonian: CMatrix,
}

impl CslLattice {
    pub fn new(points: Vec<Point>, masses: DMatrix<f64>, hamiltonian: CMatrix) -> Result<Self, CslError> {
        if points.is_empty() || masses.nrows() == 0 {
            return Err(CslError::InvalidLattice("empty lattice".into()));
        }
        if masses.ncols() != points.len() {
            return Err(CslError::InvalidLattice(format!(
                "mass table has {} columns for {} points",
                masses.ncols(),
                points.len()
            )));
        }
        let dim = masses.nrows();
        if hamiltonian.nrows() != dim || hamiltonian.ncols() != dim {
            return Err(CslError::InvalidLattice(format!("hamiltonian is not {dim}x{dim}")));
        }
        if masses.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(CslError::InvalidLattice("masses must be finite and non-negative".into()));
        }
        if points.iter().flatten().any(|x| !x.is_finite()) {
            return Err(CslError::InvalidLattice("non-finite point".into()));
        }
        check_hermitian(&hamiltonian)?;
        Ok(Self { points, masses, hamiltonian })
    }

    /// One particle of `mass` on sites x = 0 and x = d.
    pub fn two_site(mass: f64, d: f64) -> Result<Self, CslError> {
        let masses = DMatrix::from_row_slice(2, 2, &[mass, 0.0, 0.0, mass]);
        Self::new(vec![[0.0; 3], [d, 0.0, 0.0]], masses, CMatrix::zeros(2, 2))
    }

    /// One particle hopping along a line of `n` sites with spacing `a`.
    /// The Hamiltonian is -hopping (|i><i+1| + h.c.).
    pub fn chain(n: usize, mass: f64, a: f64, hopping: f64) -> Result<Self, CslError> {
        let points = (0..n).map(|i| [a * i as f64, 0.0, 0.0]).collect();
        let masses = DMatrix::from_diagonal_element(n, n, mass);
        let mut h = CMatrix::zeros(n, n);
        for i in 0..n.saturating_sub(1) {
            h[(i, i + 1)] = Complex64::new(-hopping, 0.0);
            h[(i + 1, i)] = Complex64::new(-hopping, 0.0);
        }
        Self::new(points, masses, h)
    }

    /// A rigid cluster of `n` constituents spread over `size` in two branches
    /// separated by `d`. Basis state 0 is the left branch, 1 the right.
    pub fn rigid_cluster(n: usize, constituent_mass: f64, d: f64, size: f64) -> Result<Self, CslError> {
        if n == 0 {
            return Err(CslError::InvalidLattice("empty cluster".into()));
        }
        let offsets: Vec<f64> = (0..n)
            .map(|k| if n == 1 { 0.0 } else { size * (k as f64 / (n - 1) as f64 - 0.5) })
            .collect();
        let mut points: Vec<Point> = offsets.iter().map(|&o| [0.0, o, 0.0]).collect();
        points.extend(offsets.iter().map(|&o| [d, o, 0.0]));
        let mut masses = DMatrix::zeros(2, 2 * n);
        for k in 0..n {
            masses[(0, k)] = constituent_mass;
            masses[(1, n + k)] = constituent_mass;
        }
        Self::new(points, masses, CMatrix::zeros(2, 2))
    }

    pub fn with_hamiltonian(mut self, h: CMatrix) -> Result<Self, CslError> {
        if h.shape() != self.hamiltonian.shape() {
            return Err(CslError::InvalidLattice("hamiltonian shape".into()));
        }
        check_hermitian(&h)?;
        self.hamiltonian = h;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.masses.nrows()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn masses(&self) -> &DMatrix<f64> {
        &self.masses
    }

    pub fn hamiltonian(&self) -> &CMatrix {
        &self.hamiltonian
    }

    /// D_ab = correlator(|x_a - x_b|), checked positive semidefinite.
    pub fn correlator_matrix(&self, p: &CslParams) -> Result<DMatrix<f64>, CslError> {
        let d = self.reduced_correlator_matrix(p)?;
        Ok(d / (p.m0 * p.m0))
    }

    fn reduced_correlator_matrix(&self, p: &CslParams) -> Result<DMatrix<f64>, CslError> {
        p.validate()?;
        let n = self.points.len();
        let d = DMatrix::from_fn(n, n, |a, b| reduced_correlator(p, distance(&self.points[a], &self.points[b])));
        let eig = SymmetricEigen::new(d.clone()).eigenvalues;
        let max = eig.iter().cloned().fold(0.0, f64::max);
        let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        if min < -1e-12 * max {
            return Err(CslError::NotPsd(min));
        }
        Ok(d)
    }

    /// Masses in units of m0.
    fn reduced_masses(&self, p: &CslParams) -> DMatrix<f64> {
        &self.masses / p.m0
    }

    /// Gamma_ij with [M_a,[M_b,rho]]_ij = (m_ia - m_ja)(m_ib - m_jb) rho_ij:
    /// the dissipator multiplies rho_ij by -Gamma_ij.
    pub fn decay_matrix(&self, p: &CslParams) -> Result<DMatrix<f64>, CslError> {
        let d = self.reduced_correlator_matrix(p)?;
        let mu = self.reduced_masses(p);
        let dim = self.dim();
        Ok(DMatrix::from_fn(dim, dim, |i, j| {
            let delta = mu.row(i) - mu.row(j);
            0.5 * (&delta * &d * delta.transpose())[(0, 0)]
        }))
    }
}

fn check_hermitian(m: &CMatrix) -> Result<(), CslError> {
    let dev = (m - m.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
    let scale = m.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1.0);
    if dev > HERMITIAN_TOL * scale {
        return Err(CslError::NotHermitian(dev));
    }
    Ok(())
}

/// Overall sign of the double-commutator term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DissipatorSign {
    /// -1/2 sum D [M,[M,rho]]: completely positive.
    CompletelyPositive,
    /// + sum D [M,[M,rho]] as printed; trace preserving but not positive.
    Printed,
}

/// Precomputed generator for repeated right-hand-side evaluations.
#[derive(Debug, Clone)]
pub struct LindbladGenerator {
    decay: DMatrix<f64>,
    /// -(i/hbar) H.
    minus_i_h: CMatrix,
}

impl LindbladGenerator {
    pub fn new(lat: &CslLattice, p: &CslParams) -> Result<Self, CslError> {
        Self::with_sign(lat, p, DissipatorSign::CompletelyPositive)
    }

    pub fn with_sign(lat: &CslLattice, p: &CslParams, sign: DissipatorSign) -> Result<Self, CslError> {
        let gamma = lat.decay_matrix(p)?;
        let decay = match sign {
            DissipatorSign::CompletelyPositive => gamma,
            // the printed form has twice the magnitude and the opposite sign
            DissipatorSign::Printed => gamma * -2.0,
        };
        let hbar = Constants::CODATA_2018.hbar();
        let minus_i_h = lat.hamiltonian().map(|z| z * Complex64::new(0.0, -1.0 / hbar));
        Ok(Self { decay, minus_i_h })
    }

    pub fn rhs(&self, rho: &CMatrix) -> CMatrix {
        let mut out = &self.minus_i_h * rho - rho * &self.minus_i_h;
        for j in 0..rho.ncols() {
            for i in 0..rho.nrows() {
                out[(i, j)] -= rho[(i, j)] * self.decay[(i, j)];
            }
        }
        out
    }

    /// Largest decay rate, 1/s.
    pub fn rate_scale(&self) -> f64 {
        self.decay.iter().fold(0.0, |m: f64, g| m.max(g.abs()))
    }

    fn rk4_step(&self, rho: &CMatrix, h: f64) -> CMatrix {
        let k1 = self.rhs(rho);
        let k2 = self.rhs(&(rho + &k1 * Complex64::new(0.5 * h, 0.0)));
        let k3 = self.rhs(&(rho + &k2 * Complex64::new(0.5 * h, 0.0)));
        let k4 = self.rhs(&(rho + &k3 * Complex64::new(h, 0.0)));
        rho + (k1 + k2 * Complex64::new(2.0, 0.0) + k3 * Complex64::new(2.0, 0.0) + k4)
            * Complex64::new(h / 6.0, 0.0)
    }
}

/// dRho/dt = -(i/hbar)[H, rho] - 1/2 sum_ab D_ab [M_a, [M_b, rho]].
pub fn lindblad_rhs(lat: &CslLattice, p: &CslParams, rho: &CMatrix) -> Result<CMatrix, CslError> {
    check_density_shape(lat, rho)?;
    check_hermitian(rho)?;
    Ok(LindbladGenerator::new(lat, p)?.rhs(rho))
}

fn check_density_shape(lat: &CslLattice, rho: &CMatrix) -> Result<(), CslError> {
    let dim = lat.dim();
    if rho.shape() != (dim, dim) {
        return Err(CslError::InvalidState(format!("density matrix is {:?}, lattice dim {dim}", rho.shape())));
    }
    Ok(())
}

/// Time grid shared by the deterministic and stochastic integrators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeGrid {
    pub t_end: f64,
    pub dt: f64,
    /// A record is taken every `record_every` steps and at t = 0.
    pub record_every: usize,
}

impl TimeGrid {
    pub fn new(t_end: f64, dt: f64, record_every: usize) -> Result<Self, CslError> {
        let g = Self { t_end, dt, record_every };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), CslError> {
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(CslError::InvalidStep(format!("t_end = {}", self.t_end)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(CslError::InvalidStep(format!("dt = {}", self.dt)));
        }
        if self.record_every == 0 {
            return Err(CslError::InvalidStep("record_every = 0".into()));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    pub fn time(&self, step: usize) -> f64 {
        step as f64 * self.dt
    }

    pub fn record_steps(&self) -> Vec<usize> {
        let n = self.n_steps();
        let mut v: Vec<usize> = (0..=n).step_by(self.record_every).collect();
        if *v.last().unwrap() != n {
            v.push(n);
        }
        v
    }
}

/// RK4 integration of the master equation; returns the recorded states.
pub fn evolve_lindblad(
    lat: &CslLattice,
    p: &CslParams,
    rho0: &CMatrix,
    grid: &TimeGrid,
) -> Result<Vec<(f64, CMatrix)>, CslError> {
    evolve_with(&LindbladGenerator::new(lat, p)?, lat, rho0, grid)
}

fn evolve_with(
    gen: &LindbladGenerator,
    lat: &CslLattice,
    rho0: &CMatrix,
    grid: &TimeGrid,
) -> Result<Vec<(f64, CMatrix)>, CslError> {
    grid.validate()?;
    check_density_shape(lat, rho0)?;
    check_hermitian(rho0)?;
    let records = grid.record_steps();
    let mut out = Vec::with_capacity(records.len());
    let mut rho = rho0.clone();
    let mut next = 0;
    for step in 0..=grid.n_steps() {
        if records.get(next) == Some(&step) {
            out.push((grid.time(step), rho.clone()));
            next += 1;
        }
        if step < grid.n_steps() {
            rho = gen.rk4_step(&rho, grid.dt);
        }
    }
    Ok(out)
}

/// -ln(|rho_ij(t)| / |rho_ij(0)|) / t from the last record.
pub fn fitted_coherence_rate(series: &[(f64, CMatrix)], i: usize, j: usize) -> f64 {
    let (t0, first) = &series[0];
    let (t1, last) = &series[series.len() - 1];
    -(last[(i, j)].norm() / first[(i, j)].norm()).ln() / (t1 - t0)
}

/// |psi><psi|.
pub fn projector(psi: &CVector) -> CMatrix {
    psi * psi.adjoint()
}

/// (|0> + |1>)/sqrt2 in a lattice of dimension `dim`.
pub fn two_branch_state(dim: usize) -> CVector {
    let mut v = CVector::zeros(dim);
    v[0] = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    v[1] = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    v
}

pub fn min_eigenvalue(rho: &CMatrix) -> f64 {
    SymmetricEigen::new(rho.clone()).eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// (1/2) sum |eig(a - b)|.
pub fn trace_distance(a: &CMatrix, b: &CMatrix) -> f64 {
    0.5 * SymmetricEigen::new(a - b).eigenvalues.iter().map(|e| e.abs()).sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SdeOptions {
    pub grid: TimeGrid,
    /// Largest tolerated |<psi|psi> - 1| before renormalization.
    pub max_step_drift: f64,
}

impl SdeOptions {
    pub const DEFAULT_MAX_STEP_DRIFT: f64 = 1e-3;

    pub fn new(grid: TimeGrid) -> Self {
        Self { grid, max_step_drift: Self::DEFAULT_MAX_STEP_DRIFT }
    }
}

/// Precomputed stochastic step: Hamiltonian part as the exact propagator,
/// collapse part by Euler-Maruyama with E[dW_a dW_b] = D_ab dt.
#[derive(Debug, Clone)]
pub struct SdeStepper {
    dim: usize,
    n_points: usize,
    /// reduced masses, row-major dim x n_points
    mu: Vec<f64>,
    /// m0^2 D, row-major
    d: Vec<f64>,
    /// sqrt(m0^2 D) sqrt(dt), row-major
    noise: Vec<f64>,
    propagator: Option<CMatrix>,
    dt: f64,
    rate_scale: f64,
}

impl SdeStepper {
    pub fn new(lat: &CslLattice, p: &CslParams, dt: f64) -> Result<Self, CslError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(CslError::InvalidStep(format!("dt = {dt}")));
        }
        let d = lat.reduced_correlator_matrix(p)?;
        let eig = SymmetricEigen::new(d.clone());
        let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        let clipped = eig.eigenvalues.map(|e| if e < 1e-12 * max { 0.0 } else { e.sqrt() });
        let sqrt_d = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
        let noise = sqrt_d * dt.sqrt();
        let h = lat.hamiltonian();
        let propagator = if h.iter().all(|z| *z == Complex64::new(0.0, 0.0)) {
            None
        } else {
            let hbar = Constants::CODATA_2018.hbar();
            let e = SymmetricEigen::new(h.clone());
            let phases = e.eigenvalues.map(|l| Complex64::from_polar(1.0, -l * dt / hbar));
            Some(&e.eigenvectors * CMatrix::from_diagonal(&phases) * e.eigenvectors.adjoint())
        };
        let mu = lat.reduced_masses(p);
        let rate_scale = lat.decay_matrix(p)?.iter().fold(0.0, |m: f64, g| m.max(*g));
        let row_major = |m: &DMatrix<f64>| m.transpose().as_slice().to_vec();
        Ok(Self {
            dim: lat.dim(),
            n_points: lat.points().len(),
            mu: row_major(&mu),
            d: row_major(&d),
            noise: row_major(&noise),
            propagator,
            dt,
            rate_scale,
        })
    }

    pub fn rate_scale(&self) -> f64 {
        self.rate_scale
    }

    /// Advances `psi` one step; returns the pre-renormalization drift.
    fn step(&self, psi: &mut CVector, rng: &mut ChaCha8Rng, scratch: &mut Scratch) -> f64 {
        if let Some(u) = &self.propagator {
            *psi = u * &*psi;
        }
        let (np, dim) = (self.n_points, self.dim);
        for a in 0..np {
            scratch.xi[a] = StandardNormal.sample(rng);
        }
        for a in 0..np {
            scratch.dw[a] = (0..np).map(|b| self.noise[a * np + b] * scratch.xi[b]).sum();
        }
        scratch.mean.iter_mut().for_each(|m| *m = 0.0);
        for i in 0..dim {
            let pi = psi[i].norm_sqr();
            for a in 0..np {
                scratch.mean[a] += pi * self.mu[i * np + a];
            }
        }
        let mut norm2 = 0.0;
        for i in 0..dim {
            for a in 0..np {
                scratch.delta[a] = self.mu[i * np + a] - scratch.mean[a];
            }
            let x: f64 = (0..np).map(|a| scratch.delta[a] * scratch.dw[a]).sum();
            let mut q = 0.0;
            for a in 0..np {
                let row: f64 = (0..np).map(|b| self.d[a * np + b] * scratch.delta[b]).sum();
                q += scratch.delta[a] * row;
            }
            psi[i] *= 1.0 + x - 0.5 * q * self.dt;
            norm2 += psi[i].norm_sqr();
        }
        let s = norm2.sqrt().recip();
        psi.iter_mut().for_each(|z| *z *= s);
        (norm2 - 1.0).abs()
    }
}

#[derive(Debug, Clone)]
struct Scratch {
    xi: Vec<f64>,
    dw: Vec<f64>,
    mean: Vec<f64>,
    delta: Vec<f64>,
}

impl Scratch {
    fn new(n: usize) -> Self {
        Self { xi: vec![0.0; n], dw: vec![0.0; n], mean: vec![0.0; n], delta: vec![0.0; n] }
    }
}

/// Generator for trajectory `index` of a run seeded with `seed`.
pub fn trajectory_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<CVector>,
    pub max_step_drift: f64,
    /// Root-mean-square pre-renormalization drift over all steps.
    pub rms_step_drift: f64,
}

fn check_pure_state(lat: &CslLattice, psi0: &CVector) -> Result<(), CslError> {
    if psi0.len() != lat.dim() {
        return Err(CslError::InvalidState(format!("state has {} entries, lattice dim {}", psi0.len(), lat.dim())));
    }
    let n = psi0.norm_squared();
    if (n - 1.0).abs() > 1e-12 {
        return Err(CslError::InvalidState(format!("norm^2 = {n}")));
    }
    Ok(())
}

fn run_trajectory(
    stepper: &SdeStepper,
    psi0: &CVector,
    opts: &SdeOptions,
    rng: &mut ChaCha8Rng,
    mut on_record: impl FnMut(usize, &CVector),
) -> Result<(f64, f64), CslError> {
    let grid = &opts.grid;
    let records = grid.record_steps();
    let mut scratch = Scratch::new(stepper.n_points);
    let mut psi = psi0.clone();
    let (mut worst, mut sum_sq) = (0.0f64, 0.0);
    let mut next = 0;
    let n = grid.n_steps();
    for step in 0..=n {
        if records.get(next) == Some(&step) {
            on_record(next, &psi);
            next += 1;
        }
        if step < n {
            let drift = stepper.step(&mut psi, rng, &mut scratch);
            if !(drift <= opts.max_step_drift) {
                return Err(CslError::Unstable { step, drift, limit: opts.max_step_drift });
            }
            worst = worst.max(drift);
            sum_sq += drift * drift;
        }
    }
    Ok((worst, if n > 0 { (sum_sq / n as f64).sqrt() } else { 0.0 }))
}

/// A single stochastic trajectory, deterministic in `seed`.
pub fn sde_trajectory(
    lat: &CslLattice,
    p: &CslParams,
    psi0: &CVector,
    opts: &SdeOptions,
    seed: u64,
) -> Result<Trajectory, CslError> {
    opts.grid.validate()?;
    check_pure_state(lat, psi0)?;
    let stepper = SdeStepper::new(lat, p, opts.grid.dt)?;
    let mut rng = trajectory_rng(seed, 0);
    let mut states = Vec::new();
    let (max_step_drift, rms_step_drift) = run_trajectory(&stepper, psi0, opts, &mut rng, |_, psi| states.push(psi.clone()))?;
    let times = opts.grid.record_steps().into_iter().map(|s| opts.grid.time(s)).collect();
    Ok(Trajectory { times, states, max_step_drift, rms_step_drift })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleResult {
    pub times: Vec<f64>,
    /// E[|psi><psi|] at each record.
    pub mean: Vec<CMatrix>,
    pub n_traj: usize,
    pub max_step_drift: f64,
    /// Largest off-diagonal decay rate, 1/s.
    pub rate_scale: f64,
}

/// Trajectories per block of the fixed reduction tree.
const BLOCK: usize = 64;

/// Ensemble mean over `n_traj` trajectories. Trajectory k uses stream k of
/// the seed. Blocks of trajectories are summed in index order and block
/// sums are combined pairwise, so results do not depend on thread count.
pub fn sde_ensemble(
    lat: &CslLattice,
    p: &CslParams,
    psi0: &CVector,
    opts: &SdeOptions,
    n_traj: usize,
    seed: u64,
) -> Result<EnsembleResult, CslError> {
    opts.grid.validate()?;
    check_pure_state(lat, psi0)?;
    if n_traj == 0 {
        return Err(CslError::InvalidParams("n_traj = 0".into()));
    }
    let stepper = SdeStepper::new(lat, p, opts.grid.dt)?;
    let n_records = opts.grid.record_steps().len();
    let dim = lat.dim();
    let n_blocks = n_traj.div_ceil(BLOCK);
    let blocks: Vec<(Vec<CMatrix>, f64)> = (0..n_blocks)
        .into_par_iter()
        .map(|b| {
            let mut sums = vec![CMatrix::zeros(dim, dim); n_records];
            let mut worst: f64 = 0.0;
            for k in b * BLOCK..((b + 1) * BLOCK).min(n_traj) {
                let mut rng = trajectory_rng(seed, k as u64);
                let (w, _) = run_trajectory(&stepper, psi0, opts, &mut rng, |r, psi| sums[r] += projector(psi))?;
                worst = worst.max(w);
            }
            Ok((sums, worst))
        })
        .collect::<Result<_, CslError>>()?;
    let max_step_drift = blocks.iter().map(|b| b.1).fold(0.0, f64::max);
    let total = pairwise_sum(blocks.into_iter().map(|b| b.0).collect());
    let scale = Complex64::new(1.0 / n_traj as f64, 0.0);
    Ok(EnsembleResult {
        times: opts.grid.record_steps().into_iter().map(|s| opts.grid.time(s)).collect(),
        mean: total.into_iter().map(|m| m * scale).collect(),
        n_traj,
        max_step_drift,
        rate_scale: stepper.rate_scale,
    })
}

fn pairwise_sum(mut level: Vec<Vec<CMatrix>>) -> Vec<CMatrix> {
    while level.len() > 1 {
        let mut next = Vec::with_capacity(level.len().div_ceil(2));
        let mut it = level.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
            }
            next.push(a);
        }
        level = next;
    }
    level.pop().unwrap_or_default()
}

/// Statistical plus discretization allowance: 3 / sqrt(n) + 2 (rate dt)(rate t).
pub fn ensemble_bound(n_traj: usize, dt: f64, rate_scale: f64, t: f64) -> f64 {
    3.0 / (n_traj as f64).sqrt() + 2.0 * (rate_scale * dt) * (rate_scale * t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Channel {
    Graviton,
    Csl,
    Equal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChannelComparison {
    pub gamma_graviton: f64,
    pub gamma_csl: f64,
    /// gamma_graviton / gamma_csl.
    pub ratio: f64,
    pub dominant: Channel,
}

/// Graviton rate against the two-branch CSL rate for a particle of `mass`
/// in a superposition of separation `d`.
pub fn compare_channels(gamma_graviton: f64, p: &CslParams, mass: f64, d: f64) -> Result<ChannelComparison, CslError> {
    p.validate()?;
    if !(d >= 0.0 && d.is_finite()) {
        return Err(CslError::InvalidParams(format!("d = {d}")));
    }
    let gamma_csl = two_site_rate(p, mass, d);
    let dominant = if gamma_graviton > gamma_csl {
        Channel::Graviton
    } else if gamma_csl > gamma_graviton {
        Channel::Csl
    } else {
        Channel::Equal
    };
    Ok(ChannelComparison { gamma_graviton, gamma_csl, ratio: gamma_graviton / gamma_csl, dominant })
}

/// Evolves the two-branch state with the dissipator sign as printed for one
/// decay time and reports the most negative eigenvalue reached.
pub fn printed_sign_audit() -> Result<IdentityRecord, CslError> {
    let p = CslParams::new(1.0, 1.0, 1.0)?;
    let lat = CslLattice::two_site(1.0, 2.0)?;
    let rho0 = projector(&two_branch_state(2));
    let grid = TimeGrid::new(1.0 / two_site_rate(&p, 1.0, 2.0), 1e-3, 1000)?;
    let gen = LindbladGenerator::with_sign(&lat, &p, DissipatorSign::Printed)?;
    let series = evolve_with(&gen, &lat, &rho0, &grid)?;
    let (_, last) = series.last().expect("records");
    let min = min_eigenvalue(last);
    Ok(IdentityRecord::new(
        "csl-lindblad-printed-sign-positivity",
        min,
        0.0,
        (-min).max(0.0),
        1e-12,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CslRecord {
    pub t_s: f64,
    pub coherence_abs: f64,
    pub lindblad_coherence_abs: f64,
    pub trace_distance: f64,
}

/// Rows: t_s, pop_0..pop_{dim-1}, coherence_abs, lindblad_coherence_abs,
/// trace_distance. Coherence is |rho_01|.
pub fn write_ensemble_csv<W: Write>(
    ens: &EnsembleResult,
    lindblad: &[(f64, CMatrix)],
    mut w: W,
) -> io::Result<()> {
    let dim = ens.mean.first().map_or(0, |m| m.nrows());
    let pops: Vec<String> = (0..dim).map(|i| format!("pop_{i}")).collect();
    writeln!(w, "t_s,{},coherence_abs,lindblad_coherence_abs,trace_distance", pops.join(","))?;
    for ((t, m), (_, l)) in ens.times.iter().zip(&ens.mean).zip(lindblad) {
        write!(w, "{t:e}")?;
        for i in 0..dim {
            write!(w, ",{:e}", m[(i, i)].re)?;
        }
        let coh = |x: &CMatrix| if dim > 1 { x[(0, 1)].norm() } else { 0.0 };
        writeln!(w, ",{:e},{:e},{:e}", coh(m), coh(l), trace_distance(m, l))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_params() -> CslParams {
        CslParams::new(1.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn correlator_examples() {
        let p = unit_params().with_lambda(3.0);
        assert_eq!(correlator(&p, 0.0), 3.0);
        assert!((correlator(&p, 2.0) - 3.0 * (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(correlator(&p.with_lambda(0.0), 0.5), 0.0);
        let g = preset("grw").unwrap();
        assert!((correlator(&g, 0.0) * g.m0 * g.m0 / 1e-16 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn preset_values() {
        let g = preset("grw").unwrap();
        assert_eq!((g.lambda, g.r_c), (1e-16, 1e-7));
        let a = preset("adler_a").unwrap();
        assert_eq!((a.lambda, a.r_c), (4e-8, 1e-7));
        let b = preset("adler_b").unwrap();
        assert_eq!((b.lambda, b.r_c), (1e-6, 1e-6));
        assert_eq!(g.m0, Constants::CODATA_2018.nucleon_mass());
        assert!(matches!(preset("dp"), Err(CslError::UnknownPreset(_))));
        assert!(CslParams::new(-1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn diagonal_states_are_stationary() {
        let lat = CslLattice::chain(3, 2.0, 0.7, 0.0).unwrap();
        let rho = CMatrix::from_diagonal(&CVector::from_vec(vec![
            Complex64::new(0.2, 0.0),
            Complex64::new(0.5, 0.0),
            Complex64::new(0.3, 0.0),
        ]));
        let d = lindblad_rhs(&lat, &unit_params(), &rho).unwrap();
        assert!(d.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn rhs_rejects_non_hermitian() {
        let lat = CslLattice::two_site(1.0, 1.0).unwrap();
        let mut rho = CMatrix::identity(2, 2) * Complex64::new(0.5, 0.0);
        rho[(0, 1)] = Complex64::new(0.1, 0.0);
        assert!(matches!(lindblad_rhs(&lat, &unit_params(), &rho), Err(CslError::NotHermitian(_))));
    }

    #[test]
    fn two_site_decay_matrix_matches_formula() {
        let p = CslParams::new(0.7, 1.3, 2.0).unwrap();
        for d in [0.0, 0.5, 1.3, 2.6, 20.0] {
            let g = CslLattice::two_site(3.0, d).unwrap().decay_matrix(&p).unwrap();
            let expect = two_site_rate(&p, 3.0, d);
            assert!((g[(0, 1)] - expect).abs() <= 1e-14 * expect.max(1e-300), "d={d}");
            assert_eq!(g[(0, 0)], 0.0);
        }
        assert!((two_site_rate(&p, 2.0, 1e3) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn lindblad_preserves_trace_and_hermiticity() {
        let lat = CslLattice::chain(4, 1.0, 0.8, 1e-34).unwrap();
        let mut psi = CVector::from_element(4, Complex64::new(0.5, 0.0));
        psi[2] = Complex64::new(0.0, 0.5);
        let grid = TimeGrid::new(1.0, 1e-3, 100).unwrap();
        let series = evolve_lindblad(&lat, &unit_params(), &projector(&psi), &grid).unwrap();
        for (_, rho) in &series {
            assert!((rho.trace() - Complex64::new(1.0, 0.0)).norm() < 1e-12);
            assert!((rho - rho.adjoint()).iter().all(|z| z.norm() < 1e-12));
            assert!(min_eigenvalue(rho) > -1e-12);
        }
    }

    #[test]
    fn two_site_rate_from_integration() {
        let p = unit_params();
        let lat = CslLattice::two_site(1.0, 1.5).unwrap();
        let expect = two_site_rate(&p, 1.0, 1.5);
        let grid = TimeGrid::new(1.0 / expect, 1e-3 / expect, 10).unwrap();
        let series = evolve_lindblad(&lat, &p, &projector(&two_branch_state(2)), &grid).unwrap();
        let fit = fitted_coherence_rate(&series, 0, 1);
        assert!((fit / expect - 1.0).abs() < 1e-9, "{fit} vs {expect}");
    }

    #[test]
    fn cluster_amplification() {
        let p = CslParams::new(1.0, 1.0, 1.0).unwrap();
        let base = CslLattice::rigid_cluster(1, 1.0, 50.0, 0.0).unwrap().decay_matrix(&p).unwrap()[(0, 1)];
        for n in [2usize, 4, 8] {
            let g = CslLattice::rigid_cluster(n, 1.0, 50.0, 0.01).unwrap().decay_matrix(&p).unwrap()[(0, 1)];
            let ratio = g / base / (n * n) as f64;
            assert!((ratio - 1.0).abs() < 1e-2, "n={n} ratio={ratio}");
        }
    }

    #[test]
    fn sde_without_generators_is_constant() {
        let lat = CslLattice::two_site(1.0, 2.0).unwrap();
        let psi = two_branch_state(2);
        let opts = SdeOptions::new(TimeGrid::new(1.0, 1e-2, 10).unwrap());
        let t = sde_trajectory(&lat, &unit_params().with_lambda(0.0), &psi, &opts, 3).unwrap();
        assert!(t.states.iter().all(|s| (s - &psi).norm() < 1e-15));
    }

    #[test]
    fn sde_unitary_limit() {
        let hbar = Constants::CODATA_2018.hbar();
        let lat = CslLattice::chain(2, 1.0, 1.0, hbar).unwrap();
        let mut psi = CVector::zeros(2);
        psi[0] = Complex64::new(1.0, 0.0);
        let dt = 1e-3;
        let opts = SdeOptions::new(TimeGrid::new(10.0, dt, 10_000).unwrap());
        let t = sde_trajectory(&lat, &unit_params().with_lambda(0.0), &psi, &opts, 1).unwrap();
        assert!(t.max_step_drift < 1e-8, "{}", t.max_step_drift);
        // Rabi oscillation |c0|^2 = cos^2(t)
        let last = t.states.last().unwrap();
        assert!((last[0].norm_sqr() - 10.0f64.cos().powi(2)).abs() < 1e-9);
    }

    #[test]
    fn sde_is_seed_deterministic() {
        let lat = CslLattice::two_site(1.0, 2.0).unwrap();
        let opts = SdeOptions::new(TimeGrid::new(0.1, 1e-5, 1000).unwrap());
        let a = sde_trajectory(&lat, &unit_params(), &two_branch_state(2), &opts, 9).unwrap();
        let b = sde_trajectory(&lat, &unit_params(), &two_branch_state(2), &opts, 9).unwrap();
        let c = sde_trajectory(&lat, &unit_params(), &two_branch_state(2), &opts, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.states.last(), c.states.last());
    }

    #[test]
    fn large_steps_are_rejected() {
        let lat = CslLattice::two_site(1.0, 2.0).unwrap();
        let opts = SdeOptions::new(TimeGrid::new(1.0, 0.05, 1).unwrap());
        let r = sde_trajectory(&lat, &unit_params(), &two_branch_state(2), &opts, 1);
        assert!(matches!(r, Err(CslError::Unstable { .. })));
    }

    #[test]
    fn step_drift_scales_linearly_in_dt() {
        let lat = CslLattice::two_site(1.0, 2.0).unwrap();
        let psi = two_branch_state(2);
        let rms = |dt: f64| {
            let opts = SdeOptions::new(TimeGrid::new(0.05, dt, 1_000_000).unwrap());
            (0..8)
                .map(|s| sde_trajectory(&lat, &unit_params(), &psi, &opts, s).unwrap().rms_step_drift)
                .sum::<f64>()
                / 8.0
        };
        let ratio = rms(1e-5) / rms(5e-6);
        assert!((ratio - 2.0).abs() < 0.2, "{ratio}");
    }

    #[test]
    fn small_ensemble_tracks_lindblad() {
        let p = unit_params();
        let lat = CslLattice::two_site(1.0, 2.0).unwrap();
        let psi = two_branch_state(2);
        let grid = TimeGrid::new(0.2, 2e-5, 2_000).unwrap();
        let ens = sde_ensemble(&lat, &p, &psi, &SdeOptions::new(grid), 400, 5).unwrap();
        let lind = evolve_lindblad(&lat, &p, &projector(&psi), &grid).unwrap();
        assert_eq!(ens.times.len(), lind.len());
        let bound = ensemble_bound(400, grid.dt, ens.rate_scale, grid.t_end);
        for (m, (_, l)) in ens.mean.iter().zip(&lind) {
            assert!(trace_distance(m, l) < bound);
            assert!((m.trace().re - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ensemble_ignores_thread_count() {
        let p = unit_params();
        let lat = CslLattice::two_site(1.0, 2.0).unwrap();
        let opts = SdeOptions::new(TimeGrid::new(0.01, 1e-5, 500).unwrap());
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| sde_ensemble(&lat, &p, &two_branch_state(2), &opts, 200, 4).unwrap())
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn channel_comparison() {
        let c = Constants::CODATA_2018;
        let grw = preset("grw").unwrap();
        let zero = compare_channels(1e-2, &grw, c.electron_mass(), 0.0).unwrap();
        assert_eq!(zero.gamma_csl, 0.0);
        assert_eq!(zero.dominant, Channel::Graviton);
        let e = compare_channels(1e-2, &grw, c.electron_mass(), 1e-7).unwrap();
        assert!((e.gamma_csl / 6.561e-24 - 1.0).abs() < 1e-3, "{}", e.gamma_csl);
        assert!(e.ratio.log10() > 20.0 && e.ratio.log10() < 22.0);
        let same = compare_channels(e.gamma_csl, &grw, c.electron_mass(), 1e-7).unwrap();
        assert_eq!(same.ratio, 1.0);
        assert_eq!(same.dominant, Channel::Equal);
    }

    #[test]
    fn printed_sign_breaks_positivity() {
        let r = printed_sign_audit().unwrap();
        assert!(r.computed < -0.1);
        assert_eq!(r.status, crate::angular::IdentityStatus::Flagged);
    }

    #[test]
    fn correlator_matrix_is_psd() {
        let lat = CslLattice::chain(6, 1.0, 0.1, 0.0).unwrap();
        assert!(lat.correlator_matrix(&unit_params()).is_ok());
    }
}
