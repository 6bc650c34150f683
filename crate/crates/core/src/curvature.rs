//! Curvature of a metric from its 2-jet (or from a connection), and the
//! pointwise operators built on it: the Einstein tensor, the cross curvature
//! tensor, the principal symbol of the flow and the integrability operator.

use nalgebra::{Matrix6, Schur};
#[allow(unused_imports)]
use num_traits::Float;

use crate::tensor::{
    det_rel, generalized_eigenvalues, invert_sym2, max_abs, metric_inverse, mu_contract_h, sum1, sum2, sum4, tensor1,
    tensor2, tensor3, tensor4, Covec3, LeviCivita, Mat3, Rank3, Rank4, Riem4, Sym2, Variance, Vec3,
};
use crate::{Error, Result};

/// Value, first and second coordinate derivatives of a metric at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricJet2 {
    pub g: Sym2,
    /// `dg[k] = d_k g`
    pub dg: [Sym2; 3],
    /// `ddg[k][l] = d_k d_l g`, symmetric in `k, l`.
    pub ddg: [[Sym2; 3]; 3],
}

impl MetricJet2 {
    /// Validates positivity and symmetrizes `ddg` in the derivative indices.
    pub fn new(g: Sym2, dg: [Sym2; 3], ddg: [[Sym2; 3]; 3]) -> Result<Self> {
        if !g.is_positive_definite() {
            return Err(Error::NonPositiveMetric);
        }
        let ddg = core::array::from_fn(|k| core::array::from_fn(|l| ddg[k][l].add(&ddg[l][k]).scale(0.5)));
        Ok(Self { g, dg, ddg })
    }

    pub fn constant(g: Sym2) -> Result<Self> {
        let z = Sym2::zeros(Variance::Covariant);
        Self::new(g, [z; 3], [[z; 3]; 3])
    }
}

/// `Gamma^k_ij = 1/2 g^kl (d_i g_jl + d_j g_il - d_l g_ij)`, stored as `[k][i][j]`.
pub fn christoffels(g_inv: &Sym2, dg: &[Sym2; 3]) -> Rank3 {
    let lowered = tensor3(|l, i, j| 0.5 * (dg[i].get(j, l) + dg[j].get(i, l) - dg[l].get(i, j)));
    tensor3(|k, i, j| sum1(|l| g_inv.get(k, l) * lowered[l][i][j]))
}

pub fn christoffels_from_jet(jet: &MetricJet2) -> Result<Rank3> {
    let g_inv = metric_inverse(&jet.g)?;
    Ok(christoffels(&g_inv, &jet.dg))
}

/// Analytic `d_m Gamma^k_ij` from the jet, stored as `[m][k][i][j]`.
pub fn dgamma_from_jet(jet: &MetricJet2) -> Result<Rank4> {
    let g_inv = metric_inverse(&jet.g)?;
    let gi = g_inv.to_mat();
    // d_m g^kl = -g^ka d_m g_ab g^bl
    let dginv = tensor3(|m, k, l| -sum2(|a, b| gi[k][a] * jet.dg[m].get(a, b) * gi[b][l]));
    let lowered = tensor3(|l, i, j| 0.5 * (jet.dg[i].get(j, l) + jet.dg[j].get(i, l) - jet.dg[l].get(i, j)));
    let dlowered =
        tensor4(|m, l, i, j| 0.5 * (jet.ddg[m][i].get(j, l) + jet.ddg[m][j].get(i, l) - jet.ddg[m][l].get(i, j)));
    Ok(tensor4(|m, k, i, j| sum1(|l| dginv[m][k][l] * lowered[l][i][j] + gi[k][l] * dlowered[m][l][i][j])))
}

/// Riemann tensor from a connection and its coordinate derivatives.
///
/// `R(d_i, d_j) d_l = R_ijl^m d_m` with
/// `R_ijl^m = d_i G^m_jl - d_j G^m_il + G^m_ip G^p_jl - G^m_jp G^p_il`, and
/// `R_ijkl = g_km R_ijl^m`. The result is projected onto algebraic curvature
/// tensors, which is the identity for exact derivatives and removes the
/// truncation-level asymmetry of finite-difference derivatives.
pub fn riemann_from_connection(g: &Sym2, gamma: &Rank3, dgamma: &Rank4) -> Riem4 {
    let up = tensor4(|i, j, l, m| {
        dgamma[i][m][j][l] - dgamma[j][m][i][l]
            + sum1(|p| gamma[m][i][p] * gamma[p][j][l] - gamma[m][j][p] * gamma[p][i][l])
    });
    Riem4::from_fn(|i, j, k, l| sum1(|m| g.get(k, m) * up[i][j][l][m])).project_algebraic()
}

/// Every pointwise curvature quantity the flow and its identities need.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureBundle {
    pub g: Sym2,
    pub g_inv: Sym2,
    pub mu: LeviCivita,
    pub riem: Riem4,
    pub ric: Sym2,
    pub scalar: f64,
    /// Einstein tensor with raised indices, `P^ij`.
    pub p_up: Sym2,
    /// Inverse of `P^ij`, present only when `P` is not singular.
    pub v: Option<Sym2>,
    /// Cross curvature tensor `h_ij` from the polynomial contraction.
    pub h: Sym2,
    /// `H = g^ij h_ij`
    pub h_trace: f64,
    /// Relative determinant `det P^ij / det g^ij`.
    pub det_p: f64,
    /// Eigenvalues of `P` with respect to `g`, ascending.
    pub sec: [f64; 3],
}

impl CurvatureBundle {
    pub fn from_riemann(g: &Sym2, riem: Riem4) -> Result<Self> {
        let g_inv = metric_inverse(g)?;
        let mu = LeviCivita::new(g)?;
        let gi = g_inv.to_mat();
        let r = &riem.0;
        // Ric_jl = g^ik R_ijkl
        let ric = Sym2::covariant(&tensor2(|j, l| sum2(|i, k| gi[i][k] * r[i][j][k][l])));
        let scalar = g_inv.contract(&ric);
        let ric_up = crate::tensor::raise(&ric, &g_inv);
        let p_up = ric_up.axpy(-0.5 * scalar, &g_inv);
        let v = invert_sym2(&p_up).ok();
        let h = mu_contract_h(&riem, &mu);
        let h_trace = g_inv.contract(&h);
        let det_p = det_rel(&p_up, g)?;
        let sec = generalized_eigenvalues(&p_up, g)?;
        Ok(Self { g: *g, g_inv, mu, riem, ric, scalar, p_up, v, h, h_trace, det_p, sec })
    }

    /// `det P * V_ij`, the defining form of the cross curvature tensor.
    pub fn h_by_inverse(&self) -> Option<Sym2> {
        self.v.map(|v| v.scale(self.det_p).with_variance(Variance::Covariant))
    }

    /// Sorted eigenvalues of `h` with respect to `g`.
    pub fn h_eigenvalues(&self) -> Result<[f64; 3]> {
        generalized_eigenvalues(&self.h, &self.g)
    }

    /// `P = g_ij P^ij`
    pub fn p_trace(&self) -> f64 {
        self.g.contract(&self.p_up)
    }
}

/// The scalar and symmetric-tensor part of a [`CurvatureBundle`]; what grid
/// fields and flow diagnostics keep per node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointCurvature {
    pub p_up: Sym2,
    pub h: Sym2,
    pub h_trace: f64,
    pub det_p: f64,
    /// `P = g_ij P^ij`
    pub p_trace: f64,
    pub scalar: f64,
    pub sec: [f64; 3],
}

impl From<&CurvatureBundle> for PointCurvature {
    fn from(b: &CurvatureBundle) -> Self {
        Self {
            p_up: b.p_up,
            h: b.h,
            h_trace: b.h_trace,
            det_p: b.det_p,
            p_trace: b.p_trace(),
            scalar: b.scalar,
            sec: b.sec,
        }
    }
}

pub fn curvature_from_jet(jet: &MetricJet2, dgamma: &Rank4) -> Result<CurvatureBundle> {
    let gamma = christoffels_from_jet(jet)?;
    let riem = riemann_from_connection(&jet.g, &gamma, dgamma);
    CurvatureBundle::from_riemann(&jet.g, riem)
}

/// `P^mn = -1/4 mu^ijm mu^kln R_ijkl`
pub fn einstein_via_mu(riem: &Riem4, mu: &LeviCivita) -> Mat3 {
    let (r, up) = (&riem.0, &mu.up);
    // half[k][l][m] = mu^ijm R_ijkl
    let half = tensor3(|k, l, m| sum2(|i, j| up[i][j][m] * r[i][j][k][l]));
    tensor2(|m, n| -0.25 * sum2(|k, l| half[k][l][m] * up[k][l][n]))
}

/// Left side of the contraction identity, `mu^pqk R_kjrs mu^rsl`, as `[p][q][j][l]`.
pub fn mu_contraction(riem: &Riem4, mu: &LeviCivita) -> Rank4 {
    let (r, up) = (&riem.0, &mu.up);
    let b = tensor3(|k, j, l| sum2(|p, q| r[k][j][p][q] * up[p][q][l]));
    tensor4(|p, q, j, l| sum1(|k| up[p][q][k] * b[k][j][l]))
}

/// Right side of the contraction identity, `-2 (delta^p_j P^ql - delta^q_j P^pl)`.
pub fn mu_contraction_rhs(p_up: &Sym2) -> Rank4 {
    let d = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
    tensor4(|p, q, j, l| -2.0 * (d(p, j) * p_up.get(q, l) - d(q, j) * p_up.get(p, l)))
}

/// The curvature term `1/2 mu^ijm mu^kln g^pq R_ijpl h_qk` of the determinant identity.
pub fn det_p_identity_curvature_term(b: &CurvatureBundle) -> Mat3 {
    let (r, up, gi) = (&b.riem.0, &b.mu.up, b.g_inv.to_mat());
    // s[i][j][l][k] = g^pq R_ijpl h_qk
    let rg = tensor4(|i, j, l, q| sum1(|p| r[i][j][p][l] * gi[p][q]));
    let s = tensor4(|i, j, l, k| sum1(|q| rg[i][j][l][q] * b.h.get(q, k)));
    let left = tensor3(|l, k, m| sum2(|i, j| up[i][j][m] * s[i][j][l][k]));
    tensor2(|m, n| 0.5 * sum2(|k, l| up[k][l][n] * left[l][k][m]))
}

/// Orthonormal basis of symmetric 2-tensors: diagonal units, then
/// `(e_i e_j + e_j e_i) / sqrt 2` for `(0,1), (0,2), (1,2)`.
pub const SYM_BASIS: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)];

fn basis_tensor(b: usize) -> Mat3 {
    let (i, j) = SYM_BASIS[b];
    let w = if i == j { 1.0 } else { core::f64::consts::FRAC_1_SQRT_2 };
    tensor2(|a, c| if (a, c) == (i, j) || (a, c) == (j, i) { w } else { 0.0 })
}

fn sym_coordinates(s: &Mat3) -> [f64; 6] {
    core::array::from_fn(|b| {
        let (i, j) = SYM_BASIS[b];
        if i == j {
            s[i][i]
        } else {
            core::f64::consts::SQRT_2 * 0.5 * (s[i][j] + s[j][i])
        }
    })
}

/// The principal symbol acting on a symmetric variation:
/// `-P^ml (z_i z_m g_lj + z_l z_j g_im - z_i z_j g_lm - z_l z_m g_ij)`,
/// symmetrized in `(i, j)`. `last_sign` multiplies the final term.
pub(crate) fn apply_symbol(p_up: &Sym2, zeta: &Covec3, var: &Mat3, last_sign: f64) -> Mat3 {
    let pz: Vec3 = tensor1(|l| sum1(|m| p_up.get(m, l) * zeta[m]));
    let zpz = sum1(|l| pz[l] * zeta[l]);
    let tr = sum2(|l, m| p_up.get(m, l) * var[l][m]);
    let raw = tensor2(|i, j| {
        let t1 = zeta[i] * sum1(|l| pz[l] * var[l][j]);
        let t2 = zeta[j] * sum1(|m| pz[m] * var[i][m]);
        -(t1 + t2 - zeta[i] * zeta[j] * tr - last_sign * zpz * var[i][j])
    });
    tensor2(|i, j| 0.5 * (raw[i][j] + raw[j][i]))
}

pub(crate) fn symbol_matrix_signed(p_up: &Sym2, zeta: &Covec3, last_sign: f64) -> [[f64; 6]; 6] {
    let mut m = [[0.0; 6]; 6];
    for col in 0..6 {
        let image = apply_symbol(p_up, zeta, &basis_tensor(col), last_sign);
        let coords = sym_coordinates(&image);
        for row in 0..6 {
            m[row][col] = coords[row];
        }
    }
    m
}

/// Matrix of `g~ -> sigma(zeta) g~` on symmetric 2-tensors in the
/// `sqrt 2`-weighted orthonormal basis [`SYM_BASIS`].
pub fn symbol_matrix(p_up: &Sym2, zeta: &Covec3) -> [[f64; 6]; 6] {
    symbol_matrix_signed(p_up, zeta, 1.0)
}

/// Eigenvalues of a symbol matrix.
///
/// The matrix is not symmetric in general, so this returns the real parts sorted
/// ascending together with the largest imaginary part seen.
pub fn symbol_eigenvalues(m: &[[f64; 6]; 6]) -> ([f64; 6], f64) {
    // QR deflation stalls on clusters of exact zeros; shifting the spectrum away
    // from the origin avoids it.
    let mat = Matrix6::from_fn(|i, j| m[i][j]);
    let shift = 1.0 + mat.norm();
    let shifted = mat + Matrix6::identity() * shift;
    let Some(schur) = Schur::try_new(shifted, f64::EPSILON, 10_000) else {
        return ([f64::NAN; 6], f64::NAN);
    };
    let eig = schur.complex_eigenvalues();
    let mut re: [f64; 6] = core::array::from_fn(|n| eig[n].re - shift);
    let im = max_abs((0..6).map(|n| eig[n].im));
    re.sort_by(|a, b| a.total_cmp(b));
    (re, im)
}

/// `L(T)_k = h^ij nabla_i T_jk - 1/2 h^ij nabla_k T_ij`, with
/// `grad_t[i][j][k] = nabla_i T_jk`.
pub fn integrability_l(h: &Sym2, grad_t: &Rank3) -> Result<Covec3> {
    let h_inv = invert_sym2(h)?;
    Ok(core::array::from_fn(|k| sum2(|i, j| h_inv.get(i, j) * (grad_t[i][j][k] - 0.5 * grad_t[k][i][j]))))
}

/// Tension field of the identity map `(M, domain) -> (M, target)`:
/// `tau^k = domain^ij (Gamma(target)^k_ij - Gamma(domain)^k_ij)`.
pub fn tension_from_connections(domain_inv: &Sym2, gamma_domain: &Rank3, gamma_target: &Rank3) -> Vec3 {
    core::array::from_fn(|k| sum2(|i, j| domain_inv.get(i, j) * (gamma_target[k][i][j] - gamma_domain[k][i][j])))
}

pub fn tension_of_identity(domain: &MetricJet2, target: &MetricJet2) -> Result<Vec3> {
    let domain_inv = metric_inverse(&domain.g)?;
    let gd = christoffels(&domain_inv, &domain.dg);
    let gt = christoffels_from_jet(target)?;
    Ok(tension_from_connections(&domain_inv, &gd, &gt))
}

/// Largest absolute entry of a rank-4 array.
pub fn rank4_max_abs(t: &Rank4) -> f64 {
    let mut m: f64 = 0.0;
    for a in t {
        for b in a {
            for c in b {
                for d in c {
                    m = m.max(d.abs());
                }
            }
        }
    }
    m
}

/// Largest absolute entry of a 3x3 array.
pub fn mat_max_abs(m: &Mat3) -> f64 {
    max_abs(m.iter().flatten().copied())
}

/// `sum_ijkl a_ijkl b_ijkl`; used to contract identities against test tensors.
pub fn rank4_dot(a: &Rank4, b: &Rank4) -> f64 {
    sum4(|i, j, k, l| a[i][j][k][l] * b[i][j][k][l])
}

pub fn rank3_max_abs(t: &Rank3) -> f64 {
    max_abs((0..27).map(|n| t[n / 9][(n / 3) % 3][n % 3]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn jet_zero() -> [[Sym2; 3]; 3] {
        [[Sym2::zeros(Variance::Covariant); 3]; 3]
    }

    /// Jet of `diag(1, e^{2x}, e^{2x})` at `x = 0`.
    fn hyperbolic_jet() -> MetricJet2 {
        let g = Sym2::identity(Variance::Covariant);
        let d1 = Sym2::diag(Variance::Covariant, [0.0, 2.0, 2.0]);
        let z = Sym2::zeros(Variance::Covariant);
        let mut ddg = jet_zero();
        ddg[0][0] = Sym2::diag(Variance::Covariant, [0.0, 4.0, 4.0]);
        MetricJet2::new(g, [d1, z, z], ddg).unwrap()
    }

    #[test]
    fn flat_jet_has_no_connection() {
        let g = Sym2::covariant(&[[2.0, 0.3, 0.1], [0.3, 1.5, -0.2], [0.1, -0.2, 0.8]]);
        let jet = MetricJet2::constant(g).unwrap();
        assert_eq!(rank3_max_abs(&christoffels_from_jet(&jet).unwrap()), 0.0);
        let b = curvature_from_jet(&jet, &dgamma_from_jet(&jet).unwrap()).unwrap();
        assert_eq!(b.riem.max_abs(), 0.0);
        assert_eq!(b.h.max_abs(), 0.0);
        assert_eq!(b.det_p, 0.0);
        assert!(b.v.is_none());
    }

    #[test]
    fn hyperbolic_christoffels() {
        let gamma = christoffels_from_jet(&hyperbolic_jet()).unwrap();
        let expect = tensor3(|k, i, j| match (k, i, j) {
            (0, 1, 1) | (0, 2, 2) => -1.0,
            (1, 0, 1) | (1, 1, 0) | (2, 0, 2) | (2, 2, 0) => 1.0,
            _ => 0.0,
        });
        for k in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    assert_relative_eq!(gamma[k][i][j], expect[k][i][j], epsilon = 1e-15);
                }
            }
        }
    }

    #[test]
    fn conformal_christoffels() {
        let eps = 0.3;
        let z = Sym2::zeros(Variance::Covariant);
        let jet = MetricJet2::new(
            Sym2::identity(Variance::Covariant),
            [Sym2::identity(Variance::Covariant).scale(eps), z, z],
            jet_zero(),
        )
        .unwrap();
        let gamma = christoffels_from_jet(&jet).unwrap();
        let d = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
        for k in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    let want = 0.5 * eps * (d(k, i) * d(j, 0) + d(k, j) * d(i, 0) - d(k, 0) * d(i, j));
                    assert_relative_eq!(gamma[k][i][j], want, epsilon = 1e-15);
                }
            }
        }
    }

    #[test]
    fn hyperbolic_jet_is_unit_hyperbolic() {
        let jet = hyperbolic_jet();
        let b = curvature_from_jet(&jet, &dgamma_from_jet(&jet).unwrap()).unwrap();
        let g = jet.g;
        assert!(b.ric.sub(&g.scale(-2.0)).max_abs() < 1e-14);
        assert_relative_eq!(b.scalar, -6.0, epsilon = 1e-14);
        assert!(b.p_up.with_variance(Variance::Covariant).sub(&g).max_abs() < 1e-14);
        assert!(b.h.sub(&g).max_abs() < 1e-14);
        assert_relative_eq!(b.h_trace, 3.0, epsilon = 1e-14);
        assert_relative_eq!(b.det_p, 1.0, epsilon = 1e-14);
        for s in b.sec {
            assert_relative_eq!(s, 1.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn sphere_riemann_bundle() {
        let g = Sym2::covariant(&[[2.0, 0.3, 0.1], [0.3, 1.5, -0.2], [0.1, -0.2, 0.8]]);
        let b = CurvatureBundle::from_riemann(&g, Riem4::constant_curvature(&g, 1.0)).unwrap();
        assert!(b.p_up.add(&b.g_inv).max_abs() < 1e-13);
        for s in b.sec {
            assert_relative_eq!(s, -1.0, epsilon = 1e-12);
        }
        assert!(b.h.sub(&g).max_abs() < 1e-13);
        assert_relative_eq!(b.h_trace, 3.0, epsilon = 1e-13);
        assert_relative_eq!(b.det_p, -1.0, epsilon = 1e-13);
    }

    #[test]
    fn symbol_examples() {
        let p = Sym2::identity(Variance::Contravariant);
        let zeta = [1.0, 0.0, 0.0];
        let mut var = [[0.0; 3]; 3];
        var[1][2] = 1.0;
        var[2][1] = 1.0;
        let out = apply_symbol(&p, &zeta, &var, 1.0);
        assert_eq!(out, var);

        let mut e11 = [[0.0; 3]; 3];
        e11[0][0] = 1.0;
        let out = apply_symbol(&p, &zeta, &e11, 1.0);
        assert_eq!(mat_max_abs(&out), 0.0);

        let m = symbol_matrix(&p, &[0.0; 3]);
        assert!(m.iter().flatten().all(|&v| v == 0.0));

        let (ev, im) = symbol_eigenvalues(&symbol_matrix(&p, &zeta));
        assert!(im < 1e-12);
        for (n, want) in [0.0, 0.0, 0.0, 1.0, 1.0, 1.0].into_iter().enumerate() {
            assert_relative_eq!(ev[n], want, epsilon = 1e-12);
        }
    }

    #[test]
    fn integrability_vanishes_for_parallel_tensors() {
        let h = Sym2::diag(Variance::Covariant, [1.0, 2.0, 3.0]);
        let l = integrability_l(&h, &[[[0.0; 3]; 3]; 3]).unwrap();
        assert_eq!(l, [0.0; 3]);
        assert!(matches!(
            integrability_l(&Sym2::zeros(Variance::Covariant), &[[[0.0; 3]; 3]; 3]),
            Err(Error::SingularTensor { .. })
        ));
    }

    #[test]
    fn tension_of_identity_on_itself_is_zero() {
        let jet = hyperbolic_jet();
        assert_eq!(tension_of_identity(&jet, &jet).unwrap(), [0.0; 3]);
    }
}
