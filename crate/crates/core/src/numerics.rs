#![allow(clippy::type_complexity)]
//! Adaptive Gauss-Kronrod quadrature on [0, inf) and product-grid quadrature
//! on the unit sphere.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::PI;
use std::ops::{Add, Mul};

use num_complex::Complex64;
use thiserror::Error;

pub const DEFAULT_REL_TOL: f64 = 1e-8;
const ABS_FLOOR: f64 = 1e-300;
const DEFAULT_MAX_EVALUATIONS: usize = 2_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadratureError {
    #[error("relative tolerance {0} outside [1e-13, 1e-2]")]
    BadTolerance(f64),
    #[error("integrand returned a non-finite value at x = {0}")]
    NonFinite(f64),
    #[error(
        "no convergence after {evaluations} evaluations: best value {value:e}, error estimate {error:e}"
    )]
    NoConvergence { value: f64, error: f64, evaluations: usize },
    #[error("degenerate spherical grid {n_theta}x{n_phi} (need n_theta >= 2, n_phi >= 4)")]
    DegenerateGrid { n_theta: usize, n_phi: usize },
}

/// Scalar types the quadrature rules can accumulate.
pub trait QuadValue: Copy + Add<Output = Self> + Mul<f64, Output = Self> {
    fn zero() -> Self;
    fn magnitude(&self) -> f64;
}

impl QuadValue for f64 {
    fn zero() -> Self {
        0.0
    }
    fn magnitude(&self) -> f64 {
        self.abs()
    }
}

impl QuadValue for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn magnitude(&self) -> f64 {
        self.norm()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureResult<T> {
    pub value: T,
    pub abs_error_estimate: f64,
    pub evaluations: usize,
}

// Gauss-Kronrod 10/21 abscissae and weights (QUADPACK qk21).
#[allow(clippy::excessive_precision)]
const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689_003,
    0.973_906_528_517_171_720_077_964_012_084_452,
    0.930_157_491_355_708_226_001_207_180_059_508,
    0.865_063_366_688_984_510_732_096_688_423_493,
    0.780_817_726_586_416_897_063_717_578_345_042,
    0.679_409_568_299_024_406_234_327_365_114_874,
    0.562_757_134_668_604_683_339_000_099_272_694,
    0.433_395_394_129_247_190_799_265_943_165_784,
    0.294_392_862_701_460_198_131_126_603_103_866,
    0.148_874_338_981_631_210_884_826_001_129_720,
    0.0,
];
#[allow(clippy::excessive_precision)]
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];
#[allow(clippy::excessive_precision)]
const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_958_109_831_074,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];

#[derive(Debug, Clone, Copy)]
struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        // ties broken on position so the refinement order is deterministic
        self.error
            .total_cmp(&other.error)
            .then_with(|| other.a.total_cmp(&self.a))
    }
}

/// One 21-point Kronrod panel with the QUADPACK error heuristic.
fn kronrod21<F: Fn(f64) -> Result<f64, QuadratureError>>(
    f: &F,
    a: f64,
    b: f64,
) -> Result<Panel, QuadratureError> {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center)?;
    let mut res_g = 0.0;
    let mut res_k = WGK[10] * fc;
    let mut res_abs = res_k.abs();
    let mut fv1 = [0.0; 10];
    let mut fv2 = [0.0; 10];
    for j in 0..10 {
        let dx = half * XGK[j];
        let f1 = f(center - dx)?;
        let f2 = f(center + dx)?;
        fv1[j] = f1;
        fv2[j] = f2;
        res_k += WGK[j] * (f1 + f2);
        res_abs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            res_g += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = 0.5 * res_k;
    let mut res_asc = WGK[10] * (fc - mean).abs();
    for j in 0..10 {
        res_asc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }
    let value = res_k * half;
    let res_abs = res_abs * half.abs();
    let res_asc = res_asc * half.abs();
    let mut error = ((res_k - res_g) * half).abs();
    if res_asc != 0.0 && error != 0.0 {
        error = res_asc * (1.0f64).min((200.0 * error / res_asc).powf(1.5));
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        error = error.max(50.0 * f64::EPSILON * res_abs);
    }
    Ok(Panel { a, b, value, error })
}

/// Global adaptive bisection over an initial partition of [a, b].
fn adaptive<F: Fn(f64) -> Result<f64, QuadratureError>>(
    f: &F,
    cuts: &[f64],
    rel_tol: f64,
    abs_tol: f64,
    max_evaluations: usize,
) -> Result<QuadratureResult<f64>, QuadratureError> {
    let mut heap = BinaryHeap::new();
    let mut done: Vec<Panel> = Vec::new();
    let mut evaluations = 0;
    for w in cuts.windows(2) {
        if w[1] > w[0] {
            heap.push(kronrod21(f, w[0], w[1])?);
            evaluations += 21;
        }
    }
    let mut value: f64 = heap.iter().map(|p| p.value).sum();
    let mut error: f64 = heap.iter().map(|p| p.error).sum();
    loop {
        let target = abs_tol.max(rel_tol * value.abs()).max(ABS_FLOOR);
        if error <= target {
            let (value, error) = exact_sums(heap.into_vec(), done);
            return Ok(QuadratureResult { value, abs_error_estimate: error, evaluations });
        }
        let worst = match heap.pop() {
            Some(p) => p,
            None => {
                let (value, error) = exact_sums(Vec::new(), done);
                return Err(QuadratureError::NoConvergence { value, error, evaluations });
            }
        };
        if evaluations >= max_evaluations {
            heap.push(worst);
            let (value, error) = exact_sums(heap.into_vec(), done);
            return Err(QuadratureError::NoConvergence { value, error, evaluations });
        }
        let mid = 0.5 * (worst.a + worst.b);
        // panel too narrow to split further: keep its contribution as is
        if mid <= worst.a || mid >= worst.b || (worst.b - worst.a) < 1e3 * f64::EPSILON * mid.abs()
        {
            done.push(worst);
            continue;
        }
        let left = kronrod21(f, worst.a, mid)?;
        let right = kronrod21(f, mid, worst.b)?;
        value += left.value + right.value - worst.value;
        error += left.error + right.error - worst.error;
        heap.push(left);
        heap.push(right);
        evaluations += 42;
    }
}

/// Sums panel contributions in order of position.
fn exact_sums(mut panels: Vec<Panel>, done: Vec<Panel>) -> (f64, f64) {
    panels.extend(done);
    panels.sort_by(|x, y| x.a.total_cmp(&y.a));
    panels.iter().fold((0.0, 0.0), |(v, e), p| (v + p.value, e + p.error))
}

/// Options for [`integrate_semi_infinite_with`].
#[derive(Debug, Clone)]
pub struct SemiInfiniteOptions {
    pub rel_tol: f64,
    /// Absolute tolerance; the effective target is max(abs_tol, rel_tol |I|).
    pub abs_tol: f64,
    /// Characteristic scale s of the mapping x = s t / (1 - t).
    pub scale: f64,
    /// Points in x where the initial partition is cut (zeros of an
    /// oscillatory factor, kinks of a tabulated spectrum, ...).
    pub breakpoints: Vec<f64>,
    pub max_evaluations: usize,
}

impl SemiInfiniteOptions {
    pub fn new(rel_tol: f64) -> Self {
        Self {
            rel_tol,
            abs_tol: 0.0,
            scale: 1.0,
            breakpoints: Vec::new(),
            max_evaluations: DEFAULT_MAX_EVALUATIONS,
        }
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    pub fn with_abs_tol(mut self, abs_tol: f64) -> Self {
        self.abs_tol = abs_tol;
        self
    }

    pub fn with_breakpoints(mut self, points: impl IntoIterator<Item = f64>) -> Self {
        self.breakpoints.extend(points);
        self
    }

    /// Cuts at multiples of `period` up to `limit`.
    pub fn with_periodic_cuts(mut self, period: f64, limit: f64, max_cuts: usize) -> Self {
        if period > 0.0 && period.is_finite() {
            let n = ((limit / period).floor() as usize).min(max_cuts);
            self.breakpoints.extend((1..=n).map(|k| k as f64 * period));
        }
        self
    }
}

impl Default for SemiInfiniteOptions {
    fn default() -> Self {
        Self::new(DEFAULT_REL_TOL)
    }
}

fn check_tol(rel_tol: f64) -> Result<(), QuadratureError> {
    if (1e-13..=1e-2).contains(&rel_tol) {
        Ok(())
    } else {
        Err(QuadratureError::BadTolerance(rel_tol))
    }
}

/// Integrates `f` over (0, inf) to relative tolerance `rel_tol`.
pub fn integrate_semi_infinite<F: Fn(f64) -> f64>(
    f: F,
    rel_tol: f64,
) -> Result<QuadratureResult<f64>, QuadratureError> {
    integrate_semi_infinite_with(f, &SemiInfiniteOptions::new(rel_tol))
}

pub fn integrate_semi_infinite_with<F: Fn(f64) -> f64>(
    f: F,
    opts: &SemiInfiniteOptions,
) -> Result<QuadratureResult<f64>, QuadratureError> {
    check_tol(opts.rel_tol)?;
    let s = opts.scale;
    let mapped = |t: f64| -> Result<f64, QuadratureError> {
        let one_minus = 1.0 - t;
        let x = s * t / one_minus;
        let jac = s / (one_minus * one_minus);
        let y = f(x);
        if !y.is_finite() {
            return Err(QuadratureError::NonFinite(x));
        }
        let v = y * jac;
        // y * jac can overflow to inf * 0 near t = 1 when y has underflowed
        Ok(if v.is_finite() { v } else { 0.0 })
    };
    let mut cuts = vec![0.0];
    let mut bps: Vec<f64> = opts
        .breakpoints
        .iter()
        .copied()
        .filter(|x| *x > 0.0 && x.is_finite())
        .map(|x| x / (s + x))
        .collect();
    bps.sort_by(f64::total_cmp);
    bps.dedup();
    cuts.extend(bps);
    cuts.push(1.0);
    adaptive(&mapped, &cuts, opts.rel_tol, opts.abs_tol, opts.max_evaluations)
}

/// Integrates `f` over the finite interval [a, b].
pub fn integrate_interval<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> Result<QuadratureResult<f64>, QuadratureError> {
    check_tol(rel_tol)?;
    let g = |x: f64| {
        let y = f(x);
        if y.is_finite() {
            Ok(y)
        } else {
            Err(QuadratureError::NonFinite(x))
        }
    };
    adaptive(&g, &[a, b], rel_tol, abs_tol, DEFAULT_MAX_EVALUATIONS)
}

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // P_n(z) and its derivative by recurrence
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else if n == 1 { z } else { p1 };
            let pnm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pnm1) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphereNode {
    pub theta: f64,
    pub phi: f64,
    pub weight: f64,
}

/// Gauss-Legendre in cos(theta) times the trapezoid rule in phi.
#[derive(Debug, Clone, PartialEq)]
pub struct SphericalGrid {
    n_theta: usize,
    n_phi: usize,
    nodes: Vec<SphereNode>,
}

impl SphericalGrid {
    pub fn new(n_theta: usize, n_phi: usize) -> Result<Self, QuadratureError> {
        if n_theta < 2 || n_phi < 4 {
            return Err(QuadratureError::DegenerateGrid { n_theta, n_phi });
        }
        Ok(Self::build(n_theta, n_phi))
    }

    fn build(n_theta: usize, n_phi: usize) -> Self {
        let (x, w) = gauss_legendre(n_theta);
        let dphi = 2.0 * PI / n_phi as f64;
        let mut nodes = Vec::with_capacity(n_theta * n_phi);
        for (xi, wi) in x.iter().zip(&w) {
            let theta = xi.acos();
            for j in 0..n_phi {
                nodes.push(SphereNode { theta, phi: j as f64 * dphi, weight: wi * dphi });
            }
        }
        Self { n_theta, n_phi, nodes }
    }

    pub fn n_theta(&self) -> usize {
        self.n_theta
    }
    pub fn n_phi(&self) -> usize {
        self.n_phi
    }
    pub fn nodes(&self) -> &[SphereNode] {
        &self.nodes
    }

    /// Highest spherical-polynomial degree integrated exactly.
    pub fn exact_degree(&self) -> usize {
        (2 * self.n_theta - 1).min(self.n_phi - 1)
    }

    fn sum<T: QuadValue, G: Fn(f64, f64) -> T>(&self, g: &G) -> (T, f64) {
        let mut acc = T::zero();
        let mut abs = 0.0;
        for n in &self.nodes {
            let v = g(n.theta, n.phi);
            acc = acc + v * n.weight;
            abs += v.magnitude() * n.weight;
        }
        (acc, abs)
    }
}

/// Integrates `g(theta, phi)` over the unit sphere. The error estimate is
/// the difference to a half-resolution grid, floored at rounding level.
pub fn integrate_sphere<T, G>(g: G, grid: &SphericalGrid) -> QuadratureResult<T>
where
    T: QuadValue,
    G: Fn(f64, f64) -> T,
{
    let (fine, abs) = grid.sum(&g);
    let coarse_grid = SphericalGrid::build((grid.n_theta / 2).max(1), (grid.n_phi / 2).max(2));
    let (coarse, _) = coarse_grid.sum(&g);
    let diff = (fine + coarse * -1.0).magnitude();
    let floor = 8.0 * f64::EPSILON * abs.max(f64::MIN_POSITIVE);
    QuadratureResult {
        value: fine,
        abs_error_estimate: diff.max(floor),
        evaluations: grid.nodes.len() + coarse_grid.nodes.len(),
    }
}
