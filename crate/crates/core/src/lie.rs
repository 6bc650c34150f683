//! Left-invariant metrics on 3-dimensional Lie groups.
//!
//! A left-invariant metric is an inner product `q` on the Lie algebra. In a
//! left-invariant frame every left-invariant tensor has constant components, so
//! curvature and covariant derivatives reduce to algebra on the structure
//! constants and the evaluation is free of discretization error.

use alloc::vec::Vec;

use crate::curvature::CurvatureBundle;
use crate::tensor::{
    connection_terms, metric_inverse, rank3_from_flat, rank4_from_flat, sum1, tensor3, tensor4, Rank3, Rank4, Riem4,
    Sym2, Variance,
};
use crate::{Error, Result};

/// Jacobi sums must vanish to this absolute tolerance.
pub const JACOBI_TOLERANCE: f64 = 1e-14;

/// Structure constants `[e_i, e_j] = C^k_ij e_k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LieAlgebraData {
    /// `c[k][i][j] = C^k_ij`
    c: Rank3,
    unimodular: bool,
}

impl LieAlgebraData {
    pub fn new(c: Rank3) -> Result<Self> {
        for k in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    if (c[k][i][j] + c[k][j][i]).abs() > JACOBI_TOLERANCE {
                        return Err(Error::NotAntisymmetric);
                    }
                }
            }
        }
        // tr ad(e_i) = C^j_ij
        let unimodular = (0..3).all(|i| sum1(|j| c[j][i][j]).abs() <= JACOBI_TOLERANCE);
        Ok(Self { c, unimodular })
    }

    /// Builds from brackets `[e_i, e_j] = v` for `i < j`; unlisted brackets vanish.
    pub fn from_brackets(brackets: &[((usize, usize), [f64; 3])]) -> Result<Self> {
        let mut c = [[[0.0; 3]; 3]; 3];
        for &((i, j), v) in brackets {
            if i >= 3 || j >= 3 || i == j {
                return Err(Error::InvalidParameter(alloc::format!("bracket indices ({i}, {j})")));
            }
            for k in 0..3 {
                c[k][i][j] = v[k];
                c[k][j][i] = -v[k];
            }
        }
        Self::new(c)
    }

    pub fn abelian() -> Self {
        Self { c: [[[0.0; 3]; 3]; 3], unimodular: true }
    }

    pub fn structure_constants(&self) -> &Rank3 {
        &self.c
    }

    pub fn is_unimodular(&self) -> bool {
        self.unimodular
    }

    /// Largest cyclic sum `C^m_il C^l_jk + C^m_jl C^l_ki + C^m_kl C^l_ij`.
    pub fn jacobi_defect(&self) -> f64 {
        let c = &self.c;
        let mut worst: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    for m in 0..3 {
                        let s = sum1(|l| c[m][i][l] * c[l][j][k] + c[m][j][l] * c[l][k][i] + c[m][k][l] * c[l][i][j]);
                        worst = worst.max(s.abs());
                    }
                }
            }
        }
        worst
    }
}

pub fn validate_jacobi(l: &LieAlgebraData) -> bool {
    l.jacobi_defect() <= JACOBI_TOLERANCE
}

/// An inner product on the algebra at time `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomogeneousState {
    pub q: Sym2,
    pub t: f64,
}

impl HomogeneousState {
    pub fn new(q: Sym2, t: f64) -> Result<Self> {
        if q.variance() != Variance::Covariant || !q.is_positive_definite() {
            return Err(Error::NonPositiveMetric);
        }
        Ok(Self { q, t })
    }
}

/// Levi-Civita connection in the left-invariant frame, `nabla_{e_i} e_j = Gamma^k_ij e_k`,
/// from the Koszul formula for left-invariant fields:
/// `Gamma^k_ij = 1/2 q^kl (C^m_ij q_ml - C^m_jl q_mi + C^m_li q_mj)`.
pub fn frame_connection(l: &LieAlgebraData, q: &Sym2) -> Result<Rank3> {
    let q_inv = metric_inverse(q)?;
    let c = &l.c;
    let lowered = tensor3(|l_, i, j| {
        0.5 * sum1(|m| c[m][i][j] * q.get(m, l_) - c[m][j][l_] * q.get(m, i) + c[m][l_][i] * q.get(m, j))
    });
    Ok(tensor3(|k, i, j| sum1(|l_| q_inv.get(k, l_) * lowered[l_][i][j])))
}

/// Riemann tensor of a left-invariant metric.
///
/// `R(e_i, e_j) e_l = (G^m_jl G^n_im - G^m_il G^n_jm - C^p_ij G^n_pl) e_n` and
/// `R_ijkl = q(R(e_i, e_j) e_l, e_k)`.
pub fn frame_riemann(l: &LieAlgebraData, q: &Sym2, gamma: &Rank3) -> Riem4 {
    let c = &l.c;
    let up = tensor4(|i, j, l_, n| {
        sum1(|m| gamma[m][j][l_] * gamma[n][i][m] - gamma[m][i][l_] * gamma[n][j][m] - c[m][i][j] * gamma[n][m][l_])
    });
    Riem4::from_fn(|i, j, k, l_| sum1(|n| up[i][j][l_][n] * q.get(n, k))).project_algebraic()
}

pub fn curvature_homogeneous(l: &LieAlgebraData, q: &Sym2) -> Result<CurvatureBundle> {
    let defect = l.jacobi_defect();
    if defect > JACOBI_TOLERANCE {
        return Err(Error::JacobiViolation { defect });
    }
    let gamma = frame_connection(l, q)?;
    CurvatureBundle::from_riemann(q, frame_riemann(l, q, &gamma))
}

/// Covariant derivative of a left-invariant dense tensor (derivative index first).
pub fn frame_covariant_derivative(gamma: &Rank3, t: &[f64], variances: &[Variance]) -> Vec<f64> {
    connection_terms(gamma, t, variances)
}

/// `nabla_l S^jk` of a left-invariant contravariant symmetric tensor, as `[l][j][k]`.
pub fn frame_grad_contravariant(gamma: &Rank3, s: &Sym2) -> Rank3 {
    let flat = crate::tensor::flatten_mat(&s.to_mat());
    rank3_from_flat(&connection_terms(gamma, &flat, &[Variance::Contravariant; 2]))
}

/// `nabla_l S_jk` of a left-invariant covariant symmetric tensor, as `[l][j][k]`.
pub fn frame_grad_covariant(gamma: &Rank3, s: &Sym2) -> Rank3 {
    let flat = crate::tensor::flatten_mat(&s.to_mat());
    rank3_from_flat(&connection_terms(gamma, &flat, &[Variance::Covariant; 2]))
}

/// Second covariant derivative `nabla_a nabla_b S^jk` as `[a][b][j][k]`.
pub fn frame_hessian_contravariant(gamma: &Rank3, s: &Sym2) -> Rank4 {
    let flat = crate::tensor::flatten_mat(&s.to_mat());
    let first = connection_terms(gamma, &flat, &[Variance::Contravariant; 2]);
    let vars = [Variance::Covariant, Variance::Contravariant, Variance::Contravariant];
    rank4_from_flat(&connection_terms(gamma, &first, &vars))
}

/// Second covariant derivative `nabla_a nabla_b S_jk` as `[a][b][j][k]`.
pub fn frame_hessian_covariant(gamma: &Rank3, s: &Sym2) -> Rank4 {
    let flat = crate::tensor::flatten_mat(&s.to_mat());
    let first = connection_terms(gamma, &flat, &[Variance::Covariant; 2]);
    rank4_from_flat(&connection_terms(gamma, &first, &[Variance::Covariant; 3]))
}
