//! Monotone quantities of the flow: the tensor `T^ijk = P^il nabla_l P^jk`, its
//! trace-free part, norms with respect to `V = P^-1`, the eta-functionals
//! `int (det P)^eta dmu`, the pinching functional `J` and the rates that the
//! flow predicts for each of them.

use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::curvature::PointCurvature;
use crate::grid::compensated_sum;
use crate::tensor::{invert_sym2, sum1, sum2, sum3, tensor3, Covec3, Rank3, Sym2, Vec3, TAU_DET_REL};
use crate::{Error, Result};

/// `T^ijk`, its trace `T^i` and the trace-free part `E^ijk`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TDecomposition {
    pub t: Rank3,
    /// `T^i = V_jk T^ijk`
    pub t_trace: Vec3,
    /// `T^i = P^ij d_j log det P`, when the gradient of `det P` was supplied.
    pub t_trace_log: Option<Vec3>,
    pub e: Rank3,
    /// `V_ij = (P^ij)^-1`
    pub v: Sym2,
}

/// Builds the decomposition from `P^ij` and `grad_p[l][j][k] = nabla_l P^jk`.
///
/// `grad_log_det_p` enables the second formula for the trace.
pub fn compute_t(p_up: &Sym2, grad_p: &Rank3, grad_log_det_p: Option<&Covec3>) -> Result<TDecomposition> {
    let v = invert_sym2(p_up)?;
    let t = tensor3(|i, j, k| sum1(|l| p_up.get(i, l) * grad_p[l][j][k]));
    let t_trace = core::array::from_fn(|i| sum2(|j, k| v.get(j, k) * t[i][j][k]));
    let t_trace_log = grad_log_det_p.map(|d| core::array::from_fn(|i| sum1(|j| p_up.get(i, j) * d[j])));
    let tt = &t_trace;
    let e = tensor3(|i, j, k| {
        t[i][j][k] + 0.1 * (p_up.get(i, j) * tt[k] + p_up.get(i, k) * tt[j]) - 0.4 * p_up.get(j, k) * tt[i]
    });
    Ok(TDecomposition { t, t_trace, t_trace_log, e, v })
}

/// `E^ijk - (1/10)(P^ij T^k + P^ik T^j) + (2/5) P^jk T^i`
pub fn reconstruct_t(p_up: &Sym2, e: &Rank3, t_trace: &Vec3) -> Rank3 {
    tensor3(|i, j, k| {
        e[i][j][k] - 0.1 * (p_up.get(i, j) * t_trace[k] + p_up.get(i, k) * t_trace[j])
            + 0.4 * p_up.get(j, k) * t_trace[i]
    })
}

/// The three `V`-traces of `E`: over `(i,j)`, `(i,k)` and `(j,k)`.
pub fn e_traces(e: &Rank3, v: &Sym2) -> [Vec3; 3] {
    [
        core::array::from_fn(|k| sum2(|i, j| v.get(i, j) * e[i][j][k])),
        core::array::from_fn(|j| sum2(|i, k| v.get(i, k) * e[i][j][k])),
        core::array::from_fn(|i| sum2(|j, k| v.get(j, k) * e[i][j][k])),
    ]
}

/// `X^ijk - X^jik`
pub fn antisym12(x: &Rank3) -> Rank3 {
    tensor3(|i, j, k| x[i][j][k] - x[j][i][k])
}

/// `V_ia V_jb V_kc X^ijk X^abc`. Negative values are possible when `V` is indefinite.
pub fn vnorm_sq3(x: &Rank3, v: &Sym2) -> f64 {
    let lowered = tensor3(|a, b, c| sum3(|i, j, k| v.get(a, i) * v.get(b, j) * v.get(c, k) * x[i][j][k]));
    sum3(|a, b, c| lowered[a][b][c] * x[a][b][c])
}

/// `V_ij X^i X^j`
pub fn vnorm_sq1(x: &Vec3, v: &Sym2) -> f64 {
    sum2(|i, j| v.get(i, j) * x[i] * x[j])
}

/// `(det P)^eta`; non-integer powers of non-positive values are a [`Error::DomainError`].
pub fn det_p_power(det_p: f64, eta: f64) -> Result<f64> {
    if eta == 0.0 {
        return Ok(1.0);
    }
    if eta.fract() == 0.0 && eta.abs() <= i32::MAX as f64 {
        return Ok(det_p.powi(eta as i32));
    }
    if det_p <= 0.0 {
        return Err(Error::DomainError(alloc::format!("(det P)^{eta} with det P = {det_p:e}")));
    }
    Ok(det_p.powf(eta))
}

/// `(1/2)|T^ijk - T^jik|^2`, `|T^i|^2` and `|E^ijk - E^jik|^2` with respect to `V`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TNorms {
    pub t_antisym: f64,
    pub trace: f64,
    pub e_antisym: f64,
}

impl TDecomposition {
    pub fn norms(&self) -> TNorms {
        TNorms {
            t_antisym: vnorm_sq3(&antisym12(&self.t), &self.v),
            trace: vnorm_sq1(&self.t_trace, &self.v),
            e_antisym: vnorm_sq3(&antisym12(&self.e), &self.v),
        }
    }
}

/// `eta ((1/2)|T - T^t|^2 - eta |T^i|^2)(det P)^eta + (1 - 2 eta)(det P)^eta H`
pub fn eta_rhs_density(norms: &TNorms, det_p: f64, h_trace: f64, eta: f64) -> Result<f64> {
    let w = det_p_power(det_p, eta)?;
    Ok(eta * (0.5 * norms.t_antisym - eta * norms.trace) * w + (1.0 - 2.0 * eta) * w * h_trace)
}

/// `(1/4)|E - E^t|^2 (det P)^(1/2)`, the eta = 1/2 rate after decomposition.
pub fn eta_half_density(norms: &TNorms, det_p: f64) -> Result<f64> {
    Ok(0.25 * norms.e_antisym * det_p_power(det_p, 0.5)?)
}

/// `P/3 - (det P)^(1/3)` with `P = g_ij P^ij`.
pub fn j_density(p_trace: f64, det_p: f64) -> Result<f64> {
    if det_p <= 0.0 {
        return Err(Error::DomainError(alloc::format!("J needs det P > 0, got {det_p:e}")));
    }
    Ok(p_trace / 3.0 - det_p.cbrt())
}

/// `-(1/6)(|E - E^t|^2 + |T^i|^2 / 3)(det P)^(1/3) - (H/3 - (det h)^(1/3))(det P)^(1/3)`.
///
/// `det_h` is the relative determinant `det h_ij / det g_ij`.
pub fn j_rhs_density(norms: &TNorms, det_p: f64, h_trace: f64, det_h: f64) -> Result<f64> {
    if det_p <= 0.0 || det_h <= 0.0 {
        return Err(Error::DomainError(alloc::format!("J rate needs det P, det h > 0 (got {det_p:e}, {det_h:e})")));
    }
    let w = det_p.cbrt();
    Ok(-(norms.e_antisym + norms.trace / 3.0) * w / 6.0 - (h_trace / 3.0 - det_h.cbrt()) * w)
}

/// Density of `d/dt int P dmu`: `3 det P`.
pub fn dp_integral_density(det_p: f64) -> f64 {
    3.0 * det_p
}

/// `box log det P + (1/2)|T - T^t|^2 - 2H` with `box_log_det_p = P^ij nabla_i nabla_j log det P`.
pub fn logdetp_rhs(box_log_det_p: f64, norms: &TNorms, det_p: f64, h_trace: f64) -> Result<f64> {
    if det_p <= 0.0 {
        return Err(Error::DomainError(alloc::format!("log det P with det P = {det_p:e}")));
    }
    Ok(box_log_det_p + 0.5 * norms.t_antisym - 2.0 * h_trace)
}

/// Nodes whose `|det P|` exceeds this are used by functionals that need `V` or
/// non-integer powers of `det P`.
pub fn det_p_mask_threshold(curv: &[PointCurvature]) -> f64 {
    let scale = curv.iter().flat_map(|c| c.sec).fold(1.0f64, |m, s| m.max(s.abs()));
    10.0 * TAU_DET_REL * scale * scale * scale
}

/// Integral quantities at one time.
///
/// Entries are `None` when undefined on the evaluation set (for example
/// `(det P)^(1/2)` with `det P < 0` on an unmasked node).
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FunctionalSample {
    pub t: f64,
    /// `(eta, int (det P)^eta dmu)`
    pub eta: Vec<(f64, Option<f64>)>,
    pub p_integral: f64,
    pub det_p_integral: f64,
    pub j: Option<f64>,
    pub vol_p: Option<f64>,
    /// Fraction of the domain (by node count) kept by the `det P` mask.
    pub mask_fraction: f64,
}

/// `int (det P)^eta dmu` over masked nodes. `weights` are the quadrature weights
/// (or `sqrt(det q)` for a homogeneous density with unit reference volume).
pub fn eta_functional(curv: &[PointCurvature], weights: &[f64], eta: f64) -> Result<f64> {
    if eta.fract() == 0.0 {
        return Ok(compensated_sum(
            curv.iter().zip(weights).map(|(c, w)| det_p_power(c.det_p, eta).unwrap_or(0.0) * w),
        ));
    }
    let tau = det_p_mask_threshold(curv);
    let mut terms = Vec::with_capacity(curv.len());
    for (c, w) in curv.iter().zip(weights) {
        if c.det_p.abs() > tau {
            terms.push(det_p_power(c.det_p, eta)? * w);
        }
    }
    Ok(compensated_sum(terms))
}

/// `J = int (P/3 - (det P)^(1/3)) dmu` over masked nodes.
pub fn j_functional(curv: &[PointCurvature], weights: &[f64]) -> Result<f64> {
    let tau = det_p_mask_threshold(curv);
    let mut terms = Vec::with_capacity(curv.len());
    for (c, w) in curv.iter().zip(weights) {
        if c.det_p.abs() > tau {
            terms.push(j_density(c.p_trace, c.det_p)? * w);
        }
    }
    Ok(compensated_sum(terms))
}

pub fn functional_sample(t: f64, curv: &[PointCurvature], weights: &[f64], etas: &[f64]) -> FunctionalSample {
    let tau = det_p_mask_threshold(curv);
    let kept = curv.iter().filter(|c| c.det_p.abs() > tau).count();
    let mask_fraction = if curv.is_empty() { 0.0 } else { kept as f64 / curv.len() as f64 };
    FunctionalSample {
        t,
        eta: etas.iter().map(|&e| (e, eta_functional(curv, weights, e).ok())).collect(),
        p_integral: compensated_sum(curv.iter().zip(weights).map(|(c, w)| c.p_trace * w)),
        det_p_integral: compensated_sum(curv.iter().zip(weights).map(|(c, w)| c.det_p * w)),
        j: j_functional(curv, weights).ok(),
        vol_p: eta_functional(curv, weights, 0.5).ok(),
        mask_fraction,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Variance;
    use approx::assert_relative_eq;

    fn sample_p() -> Sym2 {
        Sym2::contravariant(&[[2.0, 0.3, -0.1], [0.3, 1.5, 0.2], [-0.1, 0.2, 0.9]])
    }

    /// A gradient with `sum_j D[j][j][k] = 0`.
    fn divergence_free_gradient() -> Rank3 {
        let mut d = tensor3(|l, j, k| ((l + 2 * j + 2 * k) as f64 * 0.37).sin() + ((l * j * k) as f64 * 0.11).cos());
        let w: Vec3 = core::array::from_fn(|k| sum1(|j| d[j][j][k]) / 4.0);
        for l in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    let delta = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
                    d[l][j][k] -= delta(l, j) * w[k] + delta(l, k) * w[j];
                }
            }
        }
        d
    }

    #[test]
    fn parallel_p_has_zero_decomposition() {
        let d = compute_t(&sample_p(), &[[[0.0; 3]; 3]; 3], None).unwrap();
        assert_eq!(d.t, [[[0.0; 3]; 3]; 3]);
        assert_eq!(d.e, [[[0.0; 3]; 3]; 3]);
        assert_eq!(d.t_trace, [0.0; 3]);
    }

    #[test]
    fn e_is_trace_free_and_reconstructs_t() {
        let p = sample_p();
        let d = compute_t(&p, &divergence_free_gradient(), None).unwrap();
        for tr in e_traces(&d.e, &d.v) {
            assert!(tr.iter().all(|x| x.abs() < 1e-12), "{tr:?}");
        }
        let back = reconstruct_t(&p, &d.e, &d.t_trace);
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    assert_relative_eq!(back[i][j][k], d.t[i][j][k], epsilon = 1e-13);
                }
            }
        }
    }

    #[test]
    fn norm_identity() {
        let d = compute_t(&sample_p(), &divergence_free_gradient(), None).unwrap();
        let n = d.norms();
        assert_relative_eq!(n.t_antisym, n.e_antisym + n.trace, max_relative = 1e-12);
    }

    #[test]
    fn vnorm_examples() {
        let id = Sym2::identity(Variance::Covariant);
        assert_eq!(vnorm_sq1(&[0.0; 3], &id), 0.0);
        assert_eq!(vnorm_sq1(&[1.0, 0.0, 0.0], &id), 1.0);
        let mut x = [[[0.0; 3]; 3]; 3];
        x[0][1][2] = 2.0;
        assert_eq!(vnorm_sq3(&x, &id), 4.0);
    }

    #[test]
    fn powers_of_det_p() {
        assert_eq!(det_p_power(-2.0, 2.0).unwrap(), 4.0);
        assert_eq!(det_p_power(-2.0, 1.0).unwrap(), -2.0);
        assert_eq!(det_p_power(-2.0, 0.0).unwrap(), 1.0);
        assert!(matches!(det_p_power(-2.0, 0.5), Err(Error::DomainError(_))));
        assert_relative_eq!(det_p_power(8.0, 1.0 / 3.0).unwrap(), 2.0, epsilon = 1e-15);
    }

    #[test]
    fn space_form_densities() {
        // Unit hyperbolic: det P = 1, H = 3, T = 0.
        let zero = TNorms { t_antisym: 0.0, trace: 0.0, e_antisym: 0.0 };
        assert_eq!(eta_rhs_density(&zero, 1.0, 3.0, 0.5).unwrap(), 0.0);
        assert_eq!(eta_rhs_density(&zero, 1.0, 3.0, 1.0).unwrap(), -3.0);
        assert_eq!(j_density(3.0, 1.0).unwrap(), 0.0);
        assert_eq!(j_rhs_density(&zero, 1.0, 3.0, 1.0).unwrap(), 0.0);
        assert_eq!(logdetp_rhs(0.0, &zero, 1.0, 3.0).unwrap(), -6.0);
        assert_eq!(dp_integral_density(1.0), 3.0);
    }

    #[test]
    fn j_density_is_homogeneous_of_degree_one() {
        let (tr, det) = (7.0, 8.0);
        let lambda = 2.5;
        let a = j_density(tr, det).unwrap();
        let b = j_density(lambda * tr, lambda.powi(3) * det).unwrap();
        assert_relative_eq!(b, lambda * a, max_relative = 1e-14);
        assert!(j_density(1.0, -1.0).is_err());
    }
}
