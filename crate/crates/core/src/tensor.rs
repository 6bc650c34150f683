//! Pointwise multilinear algebra on 3-dimensional tangent spaces.
//!
//! Dense tensors are plain nested arrays indexed from 0, and index formulas are
//! written with the `tensorN`/`sumN` helpers so they read like the component
//! expressions they implement. Symmetric 2-tensors get their own type, [`Sym2`],
//! which stores six components and carries a variance flag.

use nalgebra::{Matrix3, SymmetricEigen};
#[allow(unused_imports)]
use num_traits::Float;

use crate::{Error, Result};

pub const DIM: usize = 3;

pub type Vec3 = [f64; 3];
pub type Covec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];
pub type Rank3 = [[[f64; 3]; 3]; 3];
pub type Rank4 = [[[[f64; 3]; 3]; 3]; 3];

/// Relative singularity threshold; the absolute threshold is `TAU_DET_REL * scale^3`.
pub const TAU_DET_REL: f64 = 1e-12;

pub fn tensor1(f: impl FnMut(usize) -> f64) -> Vec3 {
    core::array::from_fn(f)
}

pub fn tensor2(mut f: impl FnMut(usize, usize) -> f64) -> Mat3 {
    core::array::from_fn(|i| core::array::from_fn(|j| f(i, j)))
}

pub fn tensor3(mut f: impl FnMut(usize, usize, usize) -> f64) -> Rank3 {
    core::array::from_fn(|i| core::array::from_fn(|j| core::array::from_fn(|k| f(i, j, k))))
}

pub fn tensor4(mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Rank4 {
    core::array::from_fn(|i| {
        core::array::from_fn(|j| core::array::from_fn(|k| core::array::from_fn(|l| f(i, j, k, l))))
    })
}

pub fn sum1(mut f: impl FnMut(usize) -> f64) -> f64 {
    f(0) + f(1) + f(2)
}

pub fn sum2(mut f: impl FnMut(usize, usize) -> f64) -> f64 {
    sum1(|i| sum1(|j| f(i, j)))
}

pub fn sum3(mut f: impl FnMut(usize, usize, usize) -> f64) -> f64 {
    sum1(|i| sum1(|j| sum1(|k| f(i, j, k))))
}

pub fn sum4(mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> f64 {
    sum1(|i| sum1(|j| sum1(|k| sum1(|l| f(i, j, k, l)))))
}

pub fn det3(m: &Mat3) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    tensor2(|i, j| sum1(|k| a[i][k] * b[k][j]))
}

pub fn transpose(a: &Mat3) -> Mat3 {
    tensor2(|i, j| a[j][i])
}

/// Inverse by the adjugate. Callers check the determinant first.
pub fn mat_inverse_unchecked(m: &Mat3) -> Mat3 {
    let det = det3(m);
    let cof = |i: usize, j: usize| {
        let (i1, i2) = ((i + 1) % 3, (i + 2) % 3);
        let (j1, j2) = ((j + 1) % 3, (j + 2) % 3);
        m[i1][j1] * m[i2][j2] - m[i1][j2] * m[i2][j1]
    };
    tensor2(|i, j| cof(j, i) / det)
}

pub fn max_abs(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

/// The alternating symbol `eps_ijk` with `eps_012 = 1`.
pub fn epsilon(i: usize, j: usize, k: usize) -> f64 {
    match (i, j, k) {
        (0, 1, 2) | (1, 2, 0) | (2, 0, 1) => 1.0,
        (0, 2, 1) | (2, 1, 0) | (1, 0, 2) => -1.0,
        _ => 0.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Variance {
    Covariant,
    Contravariant,
}

impl Variance {
    pub fn flipped(self) -> Self {
        match self {
            Variance::Covariant => Variance::Contravariant,
            Variance::Contravariant => Variance::Covariant,
        }
    }
}

/// Storage slot of component `(i, j)`; the order is 00, 01, 02, 11, 12, 22.
const SLOT: [[usize; 3]; 3] = [[0, 1, 2], [1, 3, 4], [2, 4, 5]];

/// Symmetric rank-2 tensor in three dimensions.
///
/// Symmetry is enforced by storage: only the upper triangle is kept.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Sym2 {
    c: [f64; 6],
    variance: Variance,
}

impl Sym2 {
    pub fn from_components(variance: Variance, c: [f64; 6]) -> Self {
        Self { c, variance }
    }

    /// Builds from a full matrix, symmetrizing `(m + m^T) / 2`.
    pub fn from_mat(variance: Variance, m: &Mat3) -> Self {
        Self::from_fn(variance, |i, j| 0.5 * (m[i][j] + m[j][i]))
    }

    /// Builds from `f(i, j)` evaluated on the upper triangle `i <= j`.
    pub fn from_fn(variance: Variance, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let c = [f(0, 0), f(0, 1), f(0, 2), f(1, 1), f(1, 2), f(2, 2)];
        Self { c, variance }
    }

    pub fn zeros(variance: Variance) -> Self {
        Self { c: [0.0; 6], variance }
    }

    pub fn identity(variance: Variance) -> Self {
        Self::diag(variance, [1.0; 3])
    }

    pub fn diag(variance: Variance, d: [f64; 3]) -> Self {
        Self { c: [d[0], 0.0, 0.0, d[1], 0.0, d[2]], variance }
    }

    pub fn covariant(m: &Mat3) -> Self {
        Self::from_mat(Variance::Covariant, m)
    }

    pub fn contravariant(m: &Mat3) -> Self {
        Self::from_mat(Variance::Contravariant, m)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.c[SLOT[i][j]]
    }

    pub fn components(&self) -> [f64; 6] {
        self.c
    }

    pub fn variance(&self) -> Variance {
        self.variance
    }

    /// Same components, relabelled variance.
    pub fn with_variance(self, variance: Variance) -> Self {
        Self { c: self.c, variance }
    }

    pub fn to_mat(&self) -> Mat3 {
        tensor2(|i, j| self.get(i, j))
    }

    pub fn det(&self) -> f64 {
        det3(&self.to_mat())
    }

    pub fn trace(&self) -> f64 {
        self.c[0] + self.c[3] + self.c[5]
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { c: self.c.map(|v| v * s), variance: self.variance }
    }

    pub fn add(&self, other: &Sym2) -> Self {
        debug_assert_eq!(self.variance, other.variance);
        Self { c: core::array::from_fn(|n| self.c[n] + other.c[n]), variance: self.variance }
    }

    pub fn sub(&self, other: &Sym2) -> Self {
        self.add(&other.scale(-1.0))
    }

    /// `self + a * other`.
    pub fn axpy(&self, a: f64, other: &Sym2) -> Self {
        debug_assert_eq!(self.variance, other.variance);
        Self { c: core::array::from_fn(|n| self.c[n] + a * other.c[n]), variance: self.variance }
    }

    pub fn max_abs(&self) -> f64 {
        max_abs(self.c)
    }

    /// Full contraction `self_ij other^ij` (variances are not checked).
    pub fn contract(&self, other: &Sym2) -> f64 {
        sum2(|i, j| self.get(i, j) * other.get(i, j))
    }

    pub fn is_finite(&self) -> bool {
        self.c.iter().all(|v| v.is_finite())
    }

    /// Sylvester's criterion on the leading principal minors.
    pub fn is_positive_definite(&self) -> bool {
        let m = self.to_mat();
        let m1 = m[0][0];
        let m2 = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        self.is_finite() && m1 > 0.0 && m2 > 0.0 && det3(&m) > 0.0
    }

    /// Singularity threshold `1e-12 * (max |component|)^3`.
    pub fn singular_tolerance(&self) -> f64 {
        let scale = self.max_abs();
        TAU_DET_REL * scale * scale * scale
    }

    /// Maps `s -> A s A^T` (a covariant change of frame when `A` is the
    /// transposed basis matrix).
    pub fn congruence(&self, a: &Mat3) -> Sym2 {
        let m = self.to_mat();
        Sym2::from_fn(self.variance, |i, j| sum2(|k, l| a[i][k] * m[k][l] * a[j][l]))
    }
}

fn require_metric(g: &Sym2) -> Result<()> {
    if g.variance() != Variance::Covariant || !g.is_positive_definite() {
        return Err(Error::NonPositiveMetric);
    }
    Ok(())
}

/// Inverse of a symmetric tensor, with the variance flipped.
pub fn invert_sym2(s: &Sym2) -> Result<Sym2> {
    let det = s.det();
    let tolerance = s.singular_tolerance();
    if !(det.abs() > tolerance) {
        return Err(Error::SingularTensor { det, tolerance });
    }
    let inv = mat_inverse_unchecked(&s.to_mat());
    Ok(Sym2::from_mat(s.variance().flipped(), &inv))
}

/// Inverse of a positive-definite covariant metric.
pub fn metric_inverse(g: &Sym2) -> Result<Sym2> {
    require_metric(g)?;
    invert_sym2(g)
}

/// Relative determinant `det(s^{ij}) / det(g^{ij}) = det(s) det(g)`.
pub fn det_rel(s: &Sym2, g: &Sym2) -> Result<f64> {
    require_metric(g)?;
    debug_assert_eq!(s.variance(), Variance::Contravariant);
    Ok(s.det() * g.det())
}

/// `g_ik s^kl g_lj`.
pub fn lower(s: &Sym2, g: &Sym2) -> Sym2 {
    let (s, g) = (s.to_mat(), g.to_mat());
    Sym2::from_fn(Variance::Covariant, |i, j| sum2(|k, l| g[i][k] * s[k][l] * g[l][j]))
}

/// `g^ik s_kl g^lj`.
pub fn raise(s: &Sym2, g_inv: &Sym2) -> Sym2 {
    let (s, gi) = (s.to_mat(), g_inv.to_mat());
    Sym2::from_fn(Variance::Contravariant, |i, j| sum2(|k, l| gi[i][k] * s[k][l] * gi[l][j]))
}

/// Eigenvalues of the mixed tensor built from `s` and the metric `g`, ascending.
///
/// Covariant `s` uses `g^{-1} s`; contravariant `s` uses `s g`. The problem is
/// reduced with the Cholesky factor of `g` so the eigensolver sees a symmetric
/// matrix.
pub fn generalized_eigenvalues(s: &Sym2, g: &Sym2) -> Result<[f64; 3]> {
    require_metric(g)?;
    let s_cov = match s.variance() {
        Variance::Covariant => *s,
        Variance::Contravariant => lower(s, g),
    };
    let gm = Matrix3::from_fn(|i, j| g.get(i, j));
    let chol = gm.cholesky().ok_or(Error::NonPositiveMetric)?;
    let l_inv = chol.l().try_inverse().ok_or(Error::NonPositiveMetric)?;
    let sm = Matrix3::from_fn(|i, j| s_cov.get(i, j));
    let reduced = l_inv * sm * l_inv.transpose();
    let reduced = (reduced + reduced.transpose()) * 0.5;
    let eig = SymmetricEigen::new(reduced).eigenvalues;
    let mut out = [eig[0], eig[1], eig[2]];
    out.sort_by(|a, b| a.total_cmp(b));
    Ok(out)
}

/// The metric volume form and its raised version.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeviCivita {
    /// `mu_ijk = sqrt(det g) eps_ijk`
    pub down: Rank3,
    /// `mu^ijk = eps_ijk / sqrt(det g)`
    pub up: Rank3,
}

impl LeviCivita {
    pub fn new(g: &Sym2) -> Result<Self> {
        require_metric(g)?;
        let vol = g.det().sqrt();
        Ok(Self { down: tensor3(|i, j, k| vol * epsilon(i, j, k)), up: tensor3(|i, j, k| epsilon(i, j, k) / vol) })
    }

    /// `mu^ijk = g^ip g^jq g^kr mu_pqr`, computed literally.
    pub fn raised_by_rule(&self, g_inv: &Sym2) -> Rank3 {
        let gi = g_inv.to_mat();
        tensor3(|i, j, k| sum3(|p, q, r| gi[i][p] * gi[j][q] * gi[k][r] * self.down[p][q][r]))
    }
}

/// Covariant rank-4 curvature-type tensor `R_ijkl`, stored densely.
///
/// The sign convention makes the round unit sphere have `R_0101 = +1` in an
/// orthonormal frame, i.e. `R_ijkl = K (g_ik g_jl - g_il g_jk)` for constant
/// curvature `K`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Riem4(pub Rank4);

impl Riem4 {
    pub fn zero() -> Self {
        Riem4([[[[0.0; 3]; 3]; 3]; 3])
    }

    pub fn from_fn(f: impl FnMut(usize, usize, usize, usize) -> f64) -> Self {
        Riem4(tensor4(f))
    }

    pub fn constant_curvature(g: &Sym2, k: f64) -> Self {
        let g = g.to_mat();
        Riem4::from_fn(|i, j, l, m| k * (g[i][l] * g[j][m] - g[i][m] * g[j][l]))
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.0[i][j][k][l]
    }

    pub fn max_abs(&self) -> f64 {
        let r = &self.0;
        max_abs((0..81).map(|n| r[n / 27][(n / 9) % 3][(n / 3) % 3][n % 3]))
    }

    /// Largest violation of antisymmetry, pair symmetry, and the first Bianchi identity.
    pub fn symmetry_defect(&self) -> f64 {
        let r = &self.0;
        let mut worst: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    for l in 0..3 {
                        let v = r[i][j][k][l];
                        worst = worst
                            .max((v + r[j][i][k][l]).abs())
                            .max((v + r[i][j][l][k]).abs())
                            .max((v - r[k][l][i][j]).abs())
                            .max((v + r[i][k][l][j] + r[i][l][j][k]).abs());
                    }
                }
            }
        }
        worst
    }

    /// Projection onto algebraic curvature tensors: antisymmetrize both pairs and
    /// symmetrize under pair exchange. In three dimensions the first Bianchi
    /// identity then holds automatically. Exact inputs are unchanged.
    pub fn project_algebraic(&self) -> Self {
        let r = &self.0;
        let anti = tensor4(|i, j, k, l| 0.25 * (r[i][j][k][l] - r[j][i][k][l] - r[i][j][l][k] + r[j][i][l][k]));
        Riem4(tensor4(|i, j, k, l| 0.5 * (anti[i][j][k][l] + anti[k][l][i][j])))
    }

    pub fn scale(&self, s: f64) -> Self {
        let r = &self.0;
        Riem4::from_fn(|i, j, k, l| s * r[i][j][k][l])
    }
}

/// Cross curvature tensor by the polynomial contraction
/// `h_ij = 1/8 R_ilpq mu^pqk R_kjrs mu^rsl`.
pub fn mu_contract_h(riem: &Riem4, mu: &LeviCivita) -> Sym2 {
    let r = &riem.0;
    let up = &mu.up;
    // a[i][l][k] = R_ilpq mu^pqk
    let a = tensor3(|i, l, k| sum2(|p, q| r[i][l][p][q] * up[p][q][k]));
    // b[k][j][l] = R_kjrs mu^rsl
    let b = tensor3(|k, j, l| sum2(|p, q| r[k][j][p][q] * up[p][q][l]));
    let full = tensor2(|i, j| 0.125 * sum2(|k, l| a[i][l][k] * b[k][j][l]));
    Sym2::covariant(&full)
}

/// Connection part of the covariant derivative of a dense tensor.
///
/// `t` holds `3^r` components in row-major order with one [`Variance`] per slot.
/// The result has `3^(r+1)` components with the derivative index first:
/// `out[d, I] = sum over slots of (+Gamma^{I_s}_{d m} t[.., m, ..])` for upper
/// slots and `(-Gamma^m_{d I_s} t[.., m, ..])` for lower slots. Adding the
/// partial derivatives gives `nabla_d t_I`; left-invariant tensors in a
/// left-invariant frame have no partial part.
pub fn connection_terms(gamma: &Rank3, t: &[f64], variances: &[Variance]) -> alloc::vec::Vec<f64> {
    let rank = variances.len();
    let n = 3usize.pow(rank as u32);
    debug_assert_eq!(t.len(), n);
    let mut out = alloc::vec![0.0; 3 * n];
    for d in 0..3 {
        for idx in 0..n {
            let mut acc = 0.0;
            for (slot, variance) in variances.iter().enumerate() {
                let stride = 3usize.pow((rank - 1 - slot) as u32);
                let current = (idx / stride) % 3;
                let base = idx - current * stride;
                for m in 0..3 {
                    let value = t[base + m * stride];
                    acc += match variance {
                        Variance::Contravariant => gamma[current][d][m] * value,
                        Variance::Covariant => -gamma[m][d][current] * value,
                    };
                }
            }
            out[d * n + idx] = acc;
        }
    }
    out
}

pub fn flatten_mat(m: &Mat3) -> [f64; 9] {
    core::array::from_fn(|n| m[n / 3][n % 3])
}

pub fn rank3_from_flat(v: &[f64]) -> Rank3 {
    tensor3(|i, j, k| v[9 * i + 3 * j + k])
}

pub fn rank4_from_flat(v: &[f64]) -> Rank4 {
    tensor4(|i, j, k, l| v[27 * i + 9 * j + 3 * k + l])
}

pub fn flatten_rank3(t: &Rank3) -> [f64; 27] {
    core::array::from_fn(|n| t[n / 9][(n / 3) % 3][n % 3])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn rel_err(a: &Sym2, b: &Sym2) -> f64 {
        a.sub(b).max_abs() / (1.0 + b.max_abs())
    }

    #[test]
    fn invert_identity_and_diagonal() {
        let id = Sym2::identity(Variance::Covariant);
        let inv = invert_sym2(&id).unwrap();
        assert_eq!(inv.variance(), Variance::Contravariant);
        assert!(rel_err(&inv.with_variance(Variance::Covariant), &id) < 1e-15);

        let d = Sym2::diag(Variance::Covariant, [1.0, 2.0, 4.0]);
        let inv = invert_sym2(&d).unwrap();
        for (n, want) in [1.0, 0.5, 0.25].into_iter().enumerate() {
            assert_relative_eq!(inv.get(n, n), want, epsilon = 1e-15);
        }
    }

    #[test]
    fn invert_singular_is_an_error() {
        let s = Sym2::diag(Variance::Covariant, [1.0, 2.0, 0.0]);
        assert!(matches!(invert_sym2(&s), Err(Error::SingularTensor { .. })));
        let rank_one = Sym2::covariant(&tensor2(|i, j| (i + 1) as f64 * (j + 1) as f64));
        assert!(matches!(invert_sym2(&rank_one), Err(Error::SingularTensor { .. })));
    }

    #[test]
    fn det_rel_examples() {
        let g = Sym2::covariant(&[[2.0, 0.3, 0.1], [0.3, 1.5, -0.2], [0.1, -0.2, 0.8]]);
        let g_inv = metric_inverse(&g).unwrap();
        assert_relative_eq!(det_rel(&g_inv, &g).unwrap(), 1.0, epsilon = 1e-14);

        let s = Sym2::identity(Variance::Contravariant);
        let g = Sym2::diag(Variance::Covariant, [4.0, 1.0, 1.0]);
        assert_relative_eq!(det_rel(&s, &g).unwrap(), 4.0, epsilon = 1e-15);

        let bad = Sym2::diag(Variance::Covariant, [1.0, -1.0, 1.0]);
        assert_eq!(det_rel(&s, &bad), Err(Error::NonPositiveMetric));
    }

    #[test]
    fn generalized_eigenvalue_examples() {
        let g = Sym2::covariant(&[[2.0, 0.3, 0.1], [0.3, 1.5, -0.2], [0.1, -0.2, 0.8]]);
        for (s, want) in [(g, 1.0), (g.scale(2.0), 2.0)] {
            let ev = generalized_eigenvalues(&s, &g).unwrap();
            for v in ev {
                assert_relative_eq!(v, want, epsilon = 1e-12);
            }
        }
        let nil_einstein = Sym2::diag(Variance::Covariant, [-0.25, -0.25, 0.75]);
        let ev = generalized_eigenvalues(&nil_einstein, &Sym2::identity(Variance::Covariant)).unwrap();
        assert_relative_eq!(ev[0], -0.25, epsilon = 1e-14);
        assert_relative_eq!(ev[1], -0.25, epsilon = 1e-14);
        assert_relative_eq!(ev[2], 0.75, epsilon = 1e-14);

        let indefinite = Sym2::diag(Variance::Covariant, [1.0, 0.0, 1.0]);
        assert_eq!(generalized_eigenvalues(&g, &indefinite), Err(Error::NonPositiveMetric));
    }

    #[test]
    fn levi_civita_normalization() {
        let g = Sym2::covariant(&[[2.0, 0.3, 0.1], [0.3, 1.5, -0.2], [0.1, -0.2, 0.8]]);
        let mu = LeviCivita::new(&g).unwrap();
        assert_relative_eq!(mu.down[0][1][2] * mu.up[0][1][2], 1.0, epsilon = 1e-14);
        let id = LeviCivita::new(&Sym2::identity(Variance::Covariant)).unwrap();
        assert_eq!(id.down[0][1][2], 1.0);
        assert_eq!(id.up[0][1][2], 1.0);
    }

    #[test]
    fn h_from_mu_contraction_examples() {
        let g = Sym2::identity(Variance::Covariant);
        let mu = LeviCivita::new(&g).unwrap();
        let h = mu_contract_h(&Riem4::constant_curvature(&g, -1.0), &mu);
        assert!(rel_err(&h, &g) < 1e-14);

        let h = mu_contract_h(&Riem4::zero(), &mu);
        assert_eq!(h.max_abs(), 0.0);
    }

    #[test]
    fn constant_curvature_riemann_is_algebraic() {
        let g = Sym2::covariant(&[[2.0, 0.3, 0.1], [0.3, 1.5, -0.2], [0.1, -0.2, 0.8]]);
        let r = Riem4::constant_curvature(&g, 0.7);
        assert!(r.symmetry_defect() < 1e-15);
        assert_eq!(r.project_algebraic(), r);
    }
}
