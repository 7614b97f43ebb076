//! Numerical audit of the graviton polarization algebra: polarization
//! bases, transverse-traceless projectors and the angular identities used
//! to reduce the dissipator to a scalar rate.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::numerics::{integrate_sphere, QuadratureResult, SphericalGrid};

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn outer(a: &Vec3, b: &Vec3) -> Mat3 {
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = a[i] * b[j];
        }
    }
    m
}

fn delta(i: usize, j: usize) -> f64 {
    if i == j {
        1.0
    } else {
        0.0
    }
}

/// Levi-Civita symbol.
fn epsilon(i: usize, j: usize, k: usize) -> f64 {
    ((j as f64 - i as f64) * (k as f64 - i as f64) * (k as f64 - j as f64)) / 2.0
}

/// Propagation direction (sin t cos p, sin t sin p, cos t).
pub fn direction(theta: f64, phi: f64) -> Vec3 {
    [theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisConvention {
    /// h^(s) = e^(s) (x) e^(s).
    PaperLinear,
    /// h+ = (e1 e1 - e2 e2)/sqrt2, hx = (e1 e2 + e2 e1)/sqrt2.
    PlusCross,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TtConvention {
    /// (P_ik P_jl + P_il P_jk - P_ij P_kl) / 2
    Half,
    /// P_ik P_jl + P_il P_jk - P_ij P_kl
    Unnormalized,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarizationBasis {
    pub direction: Vec3,
    pub e1: Vec3,
    pub e2: Vec3,
    pub convention: BasisConvention,
}

impl PolarizationBasis {
    pub fn new(theta: f64, phi: f64, convention: BasisConvention) -> Self {
        let (st, ct) = theta.sin_cos();
        let (sp, cp) = phi.sin_cos();
        Self {
            direction: [st * cp, st * sp, ct],
            e1: [ct * cp, ct * sp, -st],
            e2: [-sp, cp, 0.0],
            convention,
        }
    }

    pub fn tensors(&self) -> [Mat3; 2] {
        let (e1, e2) = (&self.e1, &self.e2);
        match self.convention {
            BasisConvention::PaperLinear => [outer(e1, e1), outer(e2, e2)],
            BasisConvention::PlusCross => {
                let s = std::f64::consts::FRAC_1_SQRT_2;
                let mut plus = [[0.0; 3]; 3];
                let mut cross = [[0.0; 3]; 3];
                for i in 0..3 {
                    for j in 0..3 {
                        plus[i][j] = s * (e1[i] * e1[j] - e2[i] * e2[j]);
                        cross[i][j] = s * (e1[i] * e2[j] + e2[i] * e1[j]);
                    }
                }
                [plus, cross]
            }
        }
    }

    /// Largest deviation from orthonormality of (p, e1, e2).
    pub fn orthonormality_defect(&self) -> f64 {
        let n = &self.direction;
        [
            dot(&self.e1, n).abs(),
            dot(&self.e2, n).abs(),
            dot(&self.e1, &self.e2).abs(),
            (dot(&self.e1, &self.e1) - 1.0).abs(),
            (dot(&self.e2, &self.e2) - 1.0).abs(),
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// Dense 3x3x3x3 tensor, index order (i, j, k, l).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rank4Tensor {
    pub components: [[[[f64; 3]; 3]; 3]; 3],
}

impl Rank4Tensor {
    pub fn zeros() -> Self {
        Self { components: [[[[0.0; 3]; 3]; 3]; 3] }
    }

    pub fn from_fn(f: impl Fn(usize, usize, usize, usize) -> f64) -> Self {
        let mut t = Self::zeros();
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    for l in 0..3 {
                        t.components[i][j][k][l] = f(i, j, k, l);
                    }
                }
            }
        }
        t
    }

    /// Component with 1-based indices, e.g. `get(1, 1, 1, 1)` for (11,11).
    pub fn get(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.components[i - 1][j - 1][k - 1][l - 1]
    }

    pub fn max_abs_diff(&self, other: &Rank4Tensor) -> f64 {
        let mut m: f64 = 0.0;
        self.for_each(|i, j, k, l| {
            m = m.max((self.components[i][j][k][l] - other.components[i][j][k][l]).abs())
        });
        m
    }

    pub fn is_pair_symmetric(&self, tol: f64) -> bool {
        let mut ok = true;
        self.for_each(|i, j, k, l| {
            ok &= (self.components[i][j][k][l] - self.components[k][l][i][j]).abs() <= tol
        });
        ok
    }

    fn for_each(&self, mut f: impl FnMut(usize, usize, usize, usize)) {
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    for l in 0..3 {
                        f(i, j, k, l);
                    }
                }
            }
        }
    }

    fn scaled_add(&mut self, other: &Rank4Tensor, w: f64) {
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    for l in 0..3 {
                        self.components[i][j][k][l] += w * other.components[i][j][k][l];
                    }
                }
            }
        }
    }
}

/// sum_s h^(s)_ij h^(s)_kl for the basis convention.
pub fn polarization_sum(basis: &PolarizationBasis) -> Rank4Tensor {
    let hs = basis.tensors();
    Rank4Tensor::from_fn(|i, j, k, l| hs.iter().map(|h| h[i][j] * h[k][l]).sum())
}

/// Transverse-traceless projector built from P_ij = delta_ij - n_i n_j.
pub fn tt_projector(n: &Vec3, convention: TtConvention) -> Rank4Tensor {
    let p = |i: usize, j: usize| delta(i, j) - n[i] * n[j];
    let scale = match convention {
        TtConvention::Half => 0.5,
        TtConvention::Unnormalized => 1.0,
    };
    Rank4Tensor::from_fn(|i, j, k, l| {
        scale * (p(i, k) * p(j, l) + p(i, l) * p(j, k) - p(i, j) * p(k, l))
    })
}

/// (8 pi / 5)(d_ik d_jl + d_il d_jk - 2/3 d_ij d_kl), the claimed average.
pub fn claimed_tt_average() -> Rank4Tensor {
    isotropic_tensor(8.0 * PI / 5.0)
}

/// scale * (d_ik d_jl + d_il d_jk - 2/3 d_ij d_kl).
pub fn isotropic_tensor(scale: f64) -> Rank4Tensor {
    Rank4Tensor::from_fn(|i, j, k, l| {
        scale
            * (delta(i, k) * delta(j, l) + delta(i, l) * delta(j, k)
                - 2.0 / 3.0 * delta(i, j) * delta(k, l))
    })
}

/// Exact average for a convention: the isotropic tensor with scale 4 pi / 5
/// (Half) or 8 pi / 5 (Unnormalized).
pub fn analytic_tt_average(convention: TtConvention) -> Rank4Tensor {
    match convention {
        TtConvention::Half => isotropic_tensor(4.0 * PI / 5.0),
        TtConvention::Unnormalized => isotropic_tensor(8.0 * PI / 5.0),
    }
}

/// \int dOmega Pi^TT by product-grid quadrature.
pub fn tt_projector_average(convention: TtConvention, grid: &SphericalGrid) -> Rank4Tensor {
    let mut acc = Rank4Tensor::zeros();
    for node in grid.nodes() {
        let n = direction(node.theta, node.phi);
        acc.scaled_add(&tt_projector(&n, convention), node.weight);
    }
    acc
}

/// The scalar angular kernel sin^2 t + cos^2 t sin^2 p.
pub fn f_kernel(theta: f64, phi: f64) -> f64 {
    let (st, ct) = theta.sin_cos();
    let sp = phi.sin();
    st * st + ct * ct * sp * sp
}

/// sum_s h_ij h_kl eps_ijm eps_kln for the basis, returned as a 3x3 matrix
/// in (m, n).
pub fn f_kernel_contraction(basis: &PolarizationBasis) -> Mat3 {
    let sum = polarization_sum(basis);
    let mut out = [[0.0; 3]; 3];
    for m in 0..3 {
        for n in 0..3 {
            let mut acc = 0.0;
            sum.for_each(|i, j, k, l| {
                acc += sum.components[i][j][k][l] * epsilon(i, j, m) * epsilon(k, l, n);
            });
            out[m][n] = acc;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FAverage {
    pub quadrature: f64,
    pub abs_error_estimate: f64,
    pub analytic: f64,
    pub claimed: f64,
    pub relative_discrepancy: f64,
}

/// \int F dOmega: quadrature, the elementary value
/// 8 pi/3 + 2 pi/3 = 10 pi/3, and the claimed 4 pi.
pub fn f_kernel_average(grid: &SphericalGrid) -> FAverage {
    let q = integrate_sphere(f_kernel, grid);
    let analytic = 10.0 * PI / 3.0;
    let claimed = 4.0 * PI;
    FAverage {
        quadrature: q.value,
        abs_error_estimate: q.abs_error_estimate,
        analytic,
        claimed,
        relative_discrepancy: (claimed - analytic).abs() / claimed,
    }
}

/// \int dOmega exp(-i p.dx) with dx along z and |p||dx| = `pdx`.
pub fn plane_wave_average(pdx: f64, grid: &SphericalGrid) -> QuadratureResult<Complex64> {
    integrate_sphere(|theta: f64, _| Complex64::from_polar(1.0, -pdx * theta.cos()), grid)
}

/// 4 pi sin(x)/x.
pub fn plane_wave_average_exact(pdx: f64) -> f64 {
    4.0 * PI * crate::decoherence::sinc_factor(pdx, 1.0)
}

/// Seeded uniformly distributed directions (theta, phi).
pub fn random_directions(n: usize, seed: u64) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let u: f64 = rng.random_range(-1.0..1.0);
            let phi: f64 = rng.random_range(0.0..2.0 * PI);
            (u.acos(), phi)
        })
        .collect()
}

/// Worst transversality, trace and orthonormality defects of the tensor basis
/// over the given directions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TensorDefects {
    pub transversality: f64,
    pub trace: f64,
    pub orthonormality: f64,
    pub vector_basis: f64,
}

impl TensorDefects {
    pub fn max(&self) -> f64 {
        self.transversality.max(self.trace).max(self.orthonormality).max(self.vector_basis)
    }
}

pub fn tensor_defects(convention: BasisConvention, directions: &[(f64, f64)]) -> TensorDefects {
    let mut d = TensorDefects { transversality: 0.0, trace: 0.0, orthonormality: 0.0, vector_basis: 0.0 };
    for &(theta, phi) in directions {
        let b = PolarizationBasis::new(theta, phi, convention);
        d.vector_basis = d.vector_basis.max(b.orthonormality_defect());
        let hs = b.tensors();
        for h in &hs {
            for i in 0..3 {
                let hn: f64 = (0..3).map(|j| h[i][j] * b.direction[j]).sum();
                d.transversality = d.transversality.max(hn.abs());
            }
            d.trace = d.trace.max((h[0][0] + h[1][1] + h[2][2]).abs());
        }
        for s in 0..2 {
            for t in 0..2 {
                let mut ip = 0.0;
                for i in 0..3 {
                    for j in 0..3 {
                        ip += hs[s][i][j] * hs[t][i][j];
                    }
                }
                d.orthonormality = d.orthonormality.max((ip - delta(s, t)).abs());
            }
        }
    }
    d
}

/// max over directions and components of |sum_s h h - Pi^TT|.
pub fn polarization_sum_residual(
    basis: BasisConvention,
    tt: TtConvention,
    directions: &[(f64, f64)],
) -> f64 {
    directions
        .iter()
        .map(|&(theta, phi)| {
            let b = PolarizationBasis::new(theta, phi, basis);
            polarization_sum(&b).max_abs_diff(&tt_projector(&b.direction, tt))
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum IdentityStatus {
    Pass,
    Flagged,
}

/// One line of the verification report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityRecord {
    pub name: String,
    pub computed: f64,
    pub paper_value: f64,
    pub residual: f64,
    pub tolerance: f64,
    pub status: IdentityStatus,
}

impl IdentityRecord {
    pub fn new(name: impl Into<String>, computed: f64, paper_value: f64, residual: f64, tolerance: f64) -> Self {
        let status = if residual <= tolerance { IdentityStatus::Pass } else { IdentityStatus::Flagged };
        Self { name: name.into(), computed, paper_value, residual, tolerance, status }
    }

    pub fn is_finite(&self) -> bool {
        self.computed.is_finite() && self.residual.is_finite()
    }
}

pub const PLANE_WAVE_TOL: f64 = 1e-10;
pub const TT_AVERAGE_TOL: f64 = 1e-8;
pub const F_AVERAGE_TOL: f64 = 1e-10;
pub const TENSOR_BASIS_TOL: f64 = 1e-14;
pub const POLARIZATION_SUM_TOL: f64 = 1e-12;

/// Runs every angular identity on `grid` and reports residuals.
pub fn verify_identities(grid: &SphericalGrid, n_directions: usize, seed: u64) -> Vec<IdentityRecord> {
    let mut out = Vec::new();

    for pdx in [0.1, 1.0, PI, 10.0] {
        let q = plane_wave_average(pdx, grid);
        let exact = plane_wave_average_exact(pdx);
        let residual = (q.value - Complex64::new(exact, 0.0)).norm() / (4.0 * PI);
        out.push(IdentityRecord::new(
            format!("plane-wave-average(p*dx={pdx})"),
            q.value.re,
            exact,
            residual,
            PLANE_WAVE_TOL,
        ));
    }

    let claimed = claimed_tt_average();
    for (conv, label) in [(TtConvention::Unnormalized, "unnormalized"), (TtConvention::Half, "half")] {
        let avg = tt_projector_average(conv, grid);
        out.push(IdentityRecord::new(
            format!("tt-projector-average[{label}]"),
            avg.get(1, 1, 1, 1),
            claimed.get(1, 1, 1, 1),
            avg.max_abs_diff(&claimed),
            TT_AVERAGE_TOL,
        ));
    }

    let f = f_kernel_average(grid);
    out.push(IdentityRecord::new(
        "f-kernel-average",
        f.quadrature,
        f.claimed,
        (f.quadrature - f.claimed).abs() / f.claimed,
        F_AVERAGE_TOL,
    ));
    out.push(IdentityRecord::new(
        "f-kernel-average-vs-analytic",
        f.quadrature,
        f.analytic,
        (f.quadrature - f.analytic).abs(),
        F_AVERAGE_TOL,
    ));

    let dirs = random_directions(n_directions, seed);

    // the printed F against the contraction its definition asks for
    let contraction_residual = dirs
        .iter()
        .map(|&(t, p)| {
            let c = f_kernel_contraction(&PolarizationBasis::new(t, p, BasisConvention::PaperLinear));
            let fv = f_kernel(t, p);
            let mut r: f64 = 0.0;
            for m in 0..3 {
                for n in 0..3 {
                    r = r.max((c[m][n] - fv * delta(m, n)).abs());
                }
            }
            r
        })
        .fold(0.0, f64::max);
    out.push(IdentityRecord::new(
        "f-kernel-from-paper-linear-contraction",
        0.0,
        f_kernel(PI / 2.0, 0.0),
        contraction_residual,
        POLARIZATION_SUM_TOL,
    ));

    let d = tensor_defects(BasisConvention::PlusCross, &dirs);
    out.push(IdentityRecord::new("plus-cross-transverse-traceless-orthonormal", d.max(), 0.0, d.max(), TENSOR_BASIS_TOL));
    let d = tensor_defects(BasisConvention::PaperLinear, &dirs);
    out.push(IdentityRecord::new("paper-linear-transverse-traceless-orthonormal", d.max(), 0.0, d.max(), TENSOR_BASIS_TOL));

    for (b, bl) in [(BasisConvention::PaperLinear, "paper-linear"), (BasisConvention::PlusCross, "plus-cross")] {
        for (t, tl) in [(TtConvention::Half, "half"), (TtConvention::Unnormalized, "unnormalized")] {
            let r = polarization_sum_residual(b, t, &dirs);
            out.push(IdentityRecord::new(
                format!("polarization-sum[{bl},{tl}]"),
                r,
                0.0,
                r,
                POLARIZATION_SUM_TOL,
            ));
        }
    }
    out
}
