//! The identity suite.
//!
//! Every check compares two computations of the same quantity and reports the
//! residual `max |a - b| / (1 + max(|a|, |b|))`. Pointwise algebraic identities
//! are resolution independent and must hold to a fixed tolerance. Differential
//! identities are evaluated at several grid resolutions or time steps and must
//! also converge at their declared order.
//!
//! Each check has one sign in its formula that [`Suite::run`] flips when asked
//! to mutate; a mutated suite must fail every check.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::curvature::{
    christoffels, det_p_identity_curvature_term, einstein_via_mu, mu_contraction, mu_contraction_rhs,
    symbol_eigenvalues, symbol_matrix_signed, CurvatureBundle, PointCurvature,
};
use crate::flow::{analytic_dp_dt, analytic_driem_dt, rk4_metrics, Backend, DpDtTerms};
use crate::functionals::{
    compute_t, e_traces, eta_half_density, eta_rhs_density, j_density, j_rhs_density, TDecomposition, TNorms,
};
use crate::grid::{
    compensated_sum, covariant_derivative, GridGeometry, GridSpec, MetricGrid, ScalarGrid, SyntheticMetric,
    SyntheticVectorField, TensorGrid,
};
use crate::lie::{
    curvature_homogeneous, frame_connection, frame_grad_contravariant, frame_grad_covariant,
    frame_hessian_contravariant, frame_hessian_covariant, LieAlgebraData,
};
use crate::par::{map_indices, try_map_indices};
use crate::presets::{build_preset, PresetId};
use crate::tensor::{
    det_rel, invert_sym2, rank3_from_flat, rank4_from_flat, sum1, sum2, tensor2, tensor3, tensor4, Covec3, Mat3, Rank3,
    Rank4, Sym2, Variance, Vec3,
};
use crate::{Error, Result};

/// Residuals below this are treated as exact and no convergence order is fitted.
pub const EXACT_FLOOR: f64 = 1e-13;

/// A fitted order may fall short of the declared one by this much.
pub const ORDER_SLACK: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CheckMetadata {
    pub grid_n: Vec<usize>,
    pub dt: Vec<f64>,
    /// Residual at each resolution or step, aligned with `grid_n` or `dt`.
    pub residuals: Vec<f64>,
    pub seed: Option<u64>,
    pub mask_fraction: Option<f64>,
    pub samples: usize,
    pub note: Option<String>,
}

impl CheckMetadata {
    fn new(samples: usize) -> Self {
        Self {
            grid_n: Vec::new(),
            dt: Vec::new(),
            residuals: Vec::new(),
            seed: None,
            mask_fraction: None,
            samples,
            note: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CheckResult {
    pub id: String,
    pub family: String,
    pub backend: String,
    pub residual: f64,
    pub tolerance: f64,
    pub order: Option<f64>,
    pub declared_order: Option<f64>,
    pub pass: bool,
    pub metadata: CheckMetadata,
}

impl CheckResult {
    fn finish(
        spec: &CheckSpec,
        residual: f64,
        order: Option<f64>,
        declared: Option<f64>,
        metadata: CheckMetadata,
    ) -> Self {
        let order_ok = match (order, declared) {
            (Some(o), Some(d)) => o >= d - ORDER_SLACK,
            _ => true,
        };
        let pass = residual <= spec.tolerance && order_ok && residual.is_finite();
        Self {
            id: spec.id.to_string(),
            family: spec.family.to_string(),
            backend: spec.backend.to_string(),
            residual,
            tolerance: spec.tolerance,
            order,
            declared_order: declared,
            pass,
            metadata,
        }
    }

    fn failed(spec: &CheckSpec, err: &Error) -> Self {
        let mut metadata = CheckMetadata::new(0);
        metadata.note = Some(alloc::format!("error: {err}"));
        Self {
            id: spec.id.to_string(),
            family: spec.family.to_string(),
            backend: spec.backend.to_string(),
            residual: f64::INFINITY,
            tolerance: spec.tolerance,
            order: None,
            declared_order: None,
            pass: false,
            metadata,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FormulaEntry {
    pub family: String,
    pub formula: String,
    /// The sign change applied by a mutated run.
    pub mutation: String,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct VerificationReport {
    pub checks: Vec<CheckResult>,
    pub formulas: Vec<FormulaEntry>,
    /// `(key, value)` pairs describing the build; never timestamps.
    pub fingerprint: Vec<(String, String)>,
    pub config: SuiteConfig,
    pub mutated: bool,
}

impl VerificationReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn get(&self, id: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.id == id)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(deny_unknown_fields, default))]
pub struct SuiteConfig {
    /// Grid resolutions, coarsest first; each must divide the next.
    pub grid_n: Vec<usize>,
    pub stencil_order: usize,
    pub eps: f64,
    pub seed: u64,
    pub modes: usize,
    pub max_wavenumber: i32,
    /// Time step for the centred difference on the grid.
    pub grid_dt: f64,
    /// Largest step of the temporal studies; it is halved `dt_halvings` times.
    pub dt: f64,
    pub dt_halvings: usize,
    /// Random samples for the algebraic and sign checks.
    pub samples: usize,
    /// Differential checks that divide by `h` or `det P` use nodes with
    /// `|det P| >= mask_fraction * max |det P|`.
    pub mask_fraction: f64,
    /// Check ids or families to run; empty runs everything.
    pub only: Vec<String>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            grid_n: alloc::vec![16, 32, 64],
            stencil_order: 4,
            eps: 0.05,
            seed: 7,
            modes: 6,
            max_wavenumber: 1,
            grid_dt: 1e-3,
            dt: 5e-3,
            dt_halvings: 2,
            samples: 1000,
            mask_fraction: 0.2,
            only: Vec::new(),
        }
    }
}

impl SuiteConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_n.is_empty() {
            return Err(Error::InvalidParameter("grid_n must list at least one resolution".into()));
        }
        for w in self.grid_n.windows(2) {
            if w[1] <= w[0] || w[1] % w[0] != 0 {
                return Err(Error::InvalidParameter(alloc::format!(
                    "grid_n must increase with each entry dividing the next ({} then {})",
                    w[0],
                    w[1]
                )));
            }
        }
        for &n in &self.grid_n {
            GridSpec::new(n, self.stencil_order)?;
        }
        if !(self.grid_dt > 0.0 && self.dt > 0.0 && self.eps >= 0.0) {
            return Err(Error::InvalidParameter("dt, grid_dt must be positive and eps non-negative".into()));
        }
        if self.samples == 0 {
            return Err(Error::InvalidParameter("samples must be positive".into()));
        }
        for name in &self.only {
            if !CHECKS.iter().any(|c| c.id == name || c.family == name) {
                return Err(Error::InvalidParameter(alloc::format!("unknown check {name:?}")));
            }
        }
        Ok(())
    }

    fn selected(&self, spec: &CheckSpec) -> bool {
        self.only.is_empty() || self.only.iter().any(|o| o == spec.id || o == spec.family)
    }

    fn dts(&self) -> Vec<f64> {
        (0..=self.dt_halvings).map(|k| self.dt / (1u64 << k) as f64).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Algebraic,
    Homogeneous,
    Grid,
}

struct CheckSpec {
    id: &'static str,
    family: &'static str,
    backend: &'static str,
    kind: Kind,
    tolerance: f64,
}

const fn spec(id: &'static str, family: &'static str, kind: Kind, tolerance: f64) -> CheckSpec {
    let backend = match kind {
        Kind::Algebraic => "algebraic",
        Kind::Homogeneous => "homogeneous",
        Kind::Grid => "grid",
    };
    CheckSpec { id, family, backend, kind, tolerance }
}

/// Temporal-difference tolerance at the smallest step of a homogeneous study.
const TOL_TEMPORAL: f64 = 1e-4;
/// Residual tolerance at the finest grid.
const TOL_GRID: f64 = 1e-4;
/// Grid checks that divide by `h` or `det P`, where the stencil error is amplified.
const TOL_GRID_MASKED: f64 = 1e-2;
const TOL_ALGEBRAIC: f64 = 1e-10;
const TOL_EXACT: f64 = 1e-12;

const CHECKS: &[CheckSpec] = &[
    spec("check_h_equivalence", "check_h_equivalence", Kind::Algebraic, TOL_ALGEBRAIC),
    spec("check_P_mu", "check_P_mu", Kind::Algebraic, TOL_ALGEBRAIC),
    spec("check_mu_contraction", "check_mu_contraction", Kind::Algebraic, TOL_ALGEBRAIC),
    spec("check_detP_identity", "check_detP_identity", Kind::Algebraic, TOL_ALGEBRAIC),
    spec("check_E_traces", "check_E_traces", Kind::Algebraic, TOL_ALGEBRAIC),
    spec("check_norm_identity", "check_norm_identity", Kind::Algebraic, TOL_ALGEBRAIC),
    spec("check_symbol", "check_symbol", Kind::Algebraic, TOL_ALGEBRAIC),
    spec("check_bianchi_homogeneous", "check_bianchi", Kind::Homogeneous, TOL_EXACT),
    spec("check_bianchi_grid", "check_bianchi", Kind::Grid, TOL_GRID),
    spec("check_dual_bianchi_homogeneous", "check_dual_bianchi", Kind::Homogeneous, TOL_EXACT),
    spec("check_dual_bianchi_grid", "check_dual_bianchi", Kind::Grid, TOL_GRID_MASKED),
    spec("check_harmonicity_homogeneous", "check_harmonicity", Kind::Homogeneous, TOL_ALGEBRAIC),
    spec("check_harmonicity_grid", "check_harmonicity", Kind::Grid, TOL_GRID_MASKED),
    spec("check_evolution_P_homogeneous", "check_evolution_P", Kind::Homogeneous, TOL_TEMPORAL),
    spec("check_evolution_P_grid", "check_evolution_P", Kind::Grid, TOL_GRID),
    spec("check_evolution_Riem_homogeneous", "check_evolution_Riem", Kind::Homogeneous, TOL_TEMPORAL),
    spec("check_evolution_Riem_grid", "check_evolution_Riem", Kind::Grid, TOL_GRID),
    spec("check_volume_evolution_homogeneous", "check_volume_evolution", Kind::Homogeneous, TOL_TEMPORAL),
    spec("check_volume_evolution_grid", "check_volume_evolution", Kind::Grid, TOL_TEMPORAL),
    spec("check_logdetP_homogeneous", "check_logdetP", Kind::Homogeneous, TOL_TEMPORAL),
    spec("check_logdetP_grid", "check_logdetP", Kind::Grid, TOL_GRID_MASKED),
    spec("check_stokes_grid", "check_stokes", Kind::Grid, TOL_GRID),
    spec("check_eta_rate_1/3", "check_eta_rate", Kind::Homogeneous, TOL_TEMPORAL),
    spec("check_eta_rate_1/2", "check_eta_rate", Kind::Homogeneous, TOL_TEMPORAL),
    spec("check_eta_rate_1", "check_eta_rate", Kind::Homogeneous, TOL_TEMPORAL),
    spec("check_eta_rate_2", "check_eta_rate", Kind::Homogeneous, TOL_TEMPORAL),
    spec("check_eta_half", "check_eta_half", Kind::Homogeneous, TOL_ALGEBRAIC),
    spec("check_J_space_form", "check_J_space_form", Kind::Homogeneous, TOL_ALGEBRAIC),
    spec("check_J_rhs_sign", "check_J_rhs_sign", Kind::Algebraic, TOL_ALGEBRAIC),
    spec("check_dP_integral", "check_dP_integral", Kind::Homogeneous, TOL_TEMPORAL),
];

/// Ids of every registered check, in report order.
pub fn check_ids() -> Vec<&'static str> {
    CHECKS.iter().map(|c| c.id).collect()
}

/// `(family, formula, mutation)`.
const FORMULAS: &[(&str, &str, &str)] = &[
    ("check_h_equivalence", "h_ij = det P V_ij = (1/8) R_ilpq mu^pqk R_kjrs mu^rsl", "det P V_ij -> -det P V_ij"),
    ("check_P_mu", "P^mn = -(1/4) mu^ijm mu^kln R_ijkl", "-(1/4) -> +(1/4)"),
    ("check_mu_contraction", "mu^pqk R_kjrs mu^rsl = -2 (delta^p_j P^ql - delta^q_j P^pl)", "-2 (...) -> +2 (...)"),
    ("check_detP_identity", "(1/2) mu^ijm mu^kln g^pq R_ijpl h_qk + H P^mn = det P g^mn", "+H P^mn -> -H P^mn"),
    ("check_E_traces", "V_ij E^ijk = V_ik E^ijk = V_jk E^ijk = 0, E = T + (1/10)(P^ij T^k + P^ik T^j) - (2/5) P^jk T^i", "+(1/10)(P^ij T^k + P^ik T^j) -> -(1/10)(...)"),
    ("check_norm_identity", "|T^ijk - T^jik|^2 = |E^ijk - E^jik|^2 + |T^i|^2", "+|T^i|^2 -> -|T^i|^2"),
    ("check_symbol", "spec sigma(zeta) = {zeta P zeta (x3), 0 (x3)} >= 0 for P > 0", "+zeta P zeta g~_ij -> -zeta P zeta g~_ij"),
    ("check_bianchi", "nabla_i P^ij = 0", "+Gamma^k_im P^im -> -Gamma^k_im P^im"),
    ("check_dual_bianchi", "h^ij nabla_i h_jk = (1/2) h^ij nabla_k h_ij", "contract with g^ij in place of h^ij"),
    ("check_harmonicity", "tau(id: g -> Ric) = 0 for Ric > 0; tau(id: h -> g) = 0", "-Gamma(domain) -> +Gamma(domain)"),
    ("check_evolution_P", "dP^ij/dt = nabla_k nabla_l (P^kl P^ij - P^ik P^jl) - det P g^ij - H P^ij", "+nabla_k nabla_l (...) -> -nabla_k nabla_l (...)"),
    ("check_evolution_Riem", "dR_ijkl/dt = nabla_i nabla_l h_jk + nabla_j nabla_k h_il - nabla_i nabla_k h_jl - nabla_j nabla_l h_ik + g^pq (R_ijkp h_ql + R_ijpl h_qk)", "+g^pq (R h + R h) -> -g^pq (R h + R h)"),
    ("check_volume_evolution", "d mu/dt = H mu", "+H mu -> -H mu"),
    ("check_logdetP", "d log det P/dt = P^ij nabla_i nabla_j log det P + (1/2)|T^ijk - T^jik|^2 - 2H", "-2H -> +2H"),
    ("check_stokes", "int nabla_i W^i dmu = 0", "+Gamma^i_im W^m -> -Gamma^i_im W^m"),
    ("check_eta_rate", "d/dt (det P)^eta dmu = [eta((1/2)|T - T^t|^2 - eta |T^i|^2) + (1 - 2 eta) H] (det P)^eta dmu", "(1 - 2 eta) H -> (1 + 2 eta) H"),
    ("check_eta_half", "eta = 1/2 rate = (1/4)|E^ijk - E^jik|^2 (det P)^(1/2) >= 0", "+(1/4)|E - E^t|^2 -> -(1/4)|E - E^t|^2"),
    ("check_J_space_form", "J = int (P/3 - (det P)^(1/3)) dmu = 0 and dJ/dt = 0 on space forms", "-(det P)^(1/3) -> +(det P)^(1/3)"),
    ("check_J_rhs_sign", "-(1/6)(|E - E^t|^2 + |T^i|^2/3)(det P)^(1/3) - (H/3 - (det h)^(1/3))(det P)^(1/3) <= 0", "-(H/3 - (det h)^(1/3)) -> +(H/3 - (det h)^(1/3))"),
    ("check_dP_integral", "d/dt (P dmu) = 3 det P dmu", "3 det P -> -3 det P"),
];

/// Largest-difference accumulator for `max |a - b| / (1 + max(|a|, |b|))`.
#[derive(Debug, Clone, Copy, Default)]
struct Acc {
    diff: f64,
    mag: f64,
    count: usize,
}

impl Acc {
    fn add(&mut self, a: f64, b: f64) {
        let d = (a - b).abs();
        self.diff = if d.is_nan() { f64::INFINITY } else { self.diff.max(d) };
        self.mag = self.mag.max(a.abs()).max(b.abs());
        self.count += 1;
    }

    fn add_all(&mut self, a: impl IntoIterator<Item = f64>, b: impl IntoIterator<Item = f64>) {
        for (x, y) in a.into_iter().zip(b) {
            self.add(x, y);
        }
    }

    fn add_mat(&mut self, a: &Mat3, b: &Mat3) {
        self.add_all(a.iter().flatten().copied(), b.iter().flatten().copied());
    }

    fn merge(&mut self, other: &Acc) {
        self.diff = self.diff.max(other.diff);
        self.mag = self.mag.max(other.mag);
        self.count += other.count;
    }

    fn residual(&self) -> f64 {
        self.diff / (1.0 + self.mag)
    }
}

fn flat4(t: &Rank4) -> impl Iterator<Item = f64> + '_ {
    t.iter().flatten().flatten().flatten().copied()
}

/// Least-squares slope of `log r` against `log h`; `None` when the finest
/// residual is below [`EXACT_FLOOR`] or fewer than two points exist.
pub fn fit_order(h: &[f64], r: &[f64]) -> Option<f64> {
    if h.len() < 2 || r.last().is_none_or(|&x| x < EXACT_FLOOR) {
        return None;
    }
    let xs: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let ys: Vec<f64> = r.iter().map(|v| v.max(EXACT_FLOOR).ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    Some(sxy / sxx)
}

fn random_sym(rng: &mut ChaCha8Rng, variance: Variance) -> Sym2 {
    Sym2::from_fn(variance, |_, _| rng.gen_range(-1.0..1.0))
}

/// `A A^t + shift I` with uniform entries.
fn random_spd(rng: &mut ChaCha8Rng, variance: Variance, shift: f64) -> Sym2 {
    let a: Mat3 = core::array::from_fn(|_| core::array::from_fn(|_| rng.gen_range(-1.0..1.0)));
    Sym2::from_fn(variance, |i, j| sum1(|k| a[i][k] * a[j][k]) + if i == j { shift } else { 0.0 })
}

/// A symmetric nondegenerate tensor, definite or not.
fn random_nondegenerate(rng: &mut ChaCha8Rng, variance: Variance) -> Sym2 {
    loop {
        let s = random_sym(rng, variance);
        if s.det().abs() > 0.05 {
            return s;
        }
    }
}

/// Random `D[l][j][k]`, symmetric in `j, k`, projected so that `sum_j D[j][j][k] = 0`.
fn random_divergence_free(rng: &mut ChaCha8Rng) -> Rank3 {
    let raw: Rank3 = tensor3(|_, _, _| rng.gen_range(-1.0..1.0));
    let mut d = tensor3(|l, j, k| 0.5 * (raw[l][j][k] + raw[l][k][j]));
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

/// A left-invariant metric with the frame derivatives of `P` and `h`.
#[derive(Debug, Clone)]
struct HomState {
    name: String,
    algebra: LieAlgebraData,
    q: Sym2,
    bundle: CurvatureBundle,
    grad_p: Rank3,
    hess_p: Rank4,
    grad_h: Rank3,
    hess_h: Rank4,
    gamma: Rank3,
    /// Time unit for temporal differences, `1 / max(1, max |sec|^2)`.
    tscale: f64,
}

impl HomState {
    fn new(name: String, algebra: LieAlgebraData, q: Sym2) -> Result<Self> {
        let bundle = curvature_homogeneous(&algebra, &q)?;
        let gamma = frame_connection(&algebra, &q)?;
        let k = bundle.sec.iter().fold(1.0f64, |a, s| a.max(s.abs()));
        Ok(Self {
            tscale: 1.0 / (k * k),
            name,
            grad_p: frame_grad_contravariant(&gamma, &bundle.p_up),
            hess_p: frame_hessian_contravariant(&gamma, &bundle.p_up),
            grad_h: frame_grad_covariant(&gamma, &bundle.h),
            hess_h: frame_hessian_covariant(&gamma, &bundle.h),
            algebra,
            q,
            bundle,
            gamma,
        })
    }

    fn positive_p(&self) -> bool {
        self.bundle.sec[0] > 0.0
    }

    /// Curvature after an RK4 step of `dg/dt = 2h` by `dt` (either sign).
    fn stepped(&self, dt: f64) -> Result<(Sym2, CurvatureBundle)> {
        let backend = Backend::Homogeneous(self.algebra);
        let q = rk4_metrics(&backend, &[self.q], 0.0, dt, 1.0, None)?[0];
        Ok((q, curvature_homogeneous(&self.algebra, &q)?))
    }

    fn decomposition(&self) -> Result<TDecomposition> {
        compute_t(&self.bundle.p_up, &self.grad_p, Some(&[0.0; 3]))
    }
}

fn hom_states(cfg: &SuiteConfig) -> Result<Vec<HomState>> {
    let named = [
        PresetId::HyperbolicSolvable { alpha: 1.0, beta: 1.0 },
        PresetId::HyperbolicSolvable { alpha: 1.0, beta: 2.0 },
        PresetId::HyperbolicSolvable { alpha: 0.5, beta: 3.0 },
        PresetId::Nil,
        PresetId::Su2Round,
        PresetId::Su2Berger { lambda: 0.8 },
        PresetId::Su2Berger { lambda: 1.1 },
        PresetId::Sol,
        PresetId::AbelianFlat,
    ];
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0001);
    for id in named {
        let (algebra, state) = build_preset(id)?;
        out.push(HomState::new(id.to_string(), algebra, state.q)?);
        if !matches!(
            id,
            PresetId::AbelianFlat | PresetId::Su2Round | PresetId::HyperbolicSolvable { alpha: 1.0, beta: 1.0 }
        ) {
            for r in 0..2 {
                let q = random_spd(&mut rng, Variance::Covariant, 0.3);
                out.push(HomState::new(alloc::format!("{id}/random{r}"), algebra, q)?);
            }
        }
    }
    Ok(out)
}

/// Per-node data at one evaluation node of a grid probe.
#[derive(Debug, Clone)]
struct EvalNode {
    bundle: CurvatureBundle,
    gamma: Rank3,
    /// Coordinate partials `d_a P^ij` as `[a][i][j]`.
    dp: Rank3,
    grad_p: Rank3,
    hess_p: Rank4,
    /// Coordinate partials of `h`.
    dh: [Sym2; 3],
    grad_h: Rank3,
    hess_h: Rank4,
    det_grad: Vec3,
    det_hess: Mat3,
    plus: Snapshot,
    minus: Snapshot,
}

#[derive(Debug, Clone, Copy)]
struct Snapshot {
    p_up: Sym2,
    riem: crate::tensor::Riem4,
    det_p: f64,
}

/// One resolution of the grid study: fields on the synthetic metric, kept
/// only at the nodes shared with the coarsest grid.
#[derive(Debug, Clone)]
struct GridProbe {
    spec: GridSpec,
    nodes: Vec<EvalNode>,
    /// `int d_i W^i dmu` and `int Gamma^i_im W^m dmu` for a synthetic field `W`.
    stokes: (f64, f64),
}

fn tensor_field(spec: GridSpec, values: impl Iterator<Item = Sym2>) -> Result<TensorGrid> {
    TensorGrid::from_sym2(spec, &values.collect::<Vec<_>>())
}

fn build_probe(cfg: &SuiteConfig, n: usize) -> Result<GridProbe> {
    let spec = GridSpec::new(n, cfg.stencil_order)?;
    let generator =
        SyntheticMetric { eps: cfg.eps, seed: cfg.seed, modes: cfg.modes, max_wavenumber: cfg.max_wavenumber };
    let metric = generator.generate(spec)?;
    let geom = GridGeometry::new(metric.clone())?;
    let curv = geom.curvature()?;
    let p_field = tensor_field(spec, curv.iter().map(|c| c.p_up))?;
    let h_field = tensor_field(spec, curv.iter().map(|c| c.h))?;
    let det_field = ScalarGrid::new(spec, curv.iter().map(|c| c.det_p).collect())?;
    let grad_p_field = covariant_derivative(&p_field, &geom)?;
    let grad_h_field = covariant_derivative(&h_field, &geom)?;

    let backend = Backend::Grid(spec);
    let step = |dt: f64| -> Result<GridGeometry> {
        GridGeometry::new(MetricGrid::new(spec, rk4_metrics(&backend, metric.metrics(), 0.0, dt, 1.0, None)?)?)
    };
    let geom_plus = step(cfg.grid_dt)?;
    let geom_minus = step(-cfg.grid_dt)?;

    let coarse = spec.coarse_nodes(cfg.grid_n[0])?;
    let nodes = try_map_indices(coarse.len(), |i| {
        let node = coarse[i];
        let snap = |g: &GridGeometry| -> Result<Snapshot> {
            let b = g.bundle_at(node)?;
            Ok(Snapshot { p_up: b.p_up, riem: b.riem, det_p: b.det_p })
        };
        let dh_flat = h_field.partials_at(node);
        Ok(EvalNode {
            bundle: geom.bundle_at(node)?,
            gamma: geom.gamma_at(node),
            dp: rank3_from_flat(&p_field.partials_at(node)),
            grad_p: rank3_from_flat(grad_p_field.at(node)),
            hess_p: rank4_from_flat(&geom.covariant_derivative_at(&grad_p_field, node)),
            dh: core::array::from_fn(|a| Sym2::from_fn(Variance::Covariant, |j, k| dh_flat[9 * a + 3 * j + k])),
            grad_h: rank3_from_flat(grad_h_field.at(node)),
            hess_h: rank4_from_flat(&geom.covariant_derivative_at(&grad_h_field, node)),
            det_grad: geom.scalar_gradient_at(&det_field, node),
            det_hess: geom.scalar_hessian_at(&det_field, node),
            plus: snap(&geom_plus)?,
            minus: snap(&geom_minus)?,
        })
    })?;

    let w =
        SyntheticVectorField { seed: cfg.seed.wrapping_add(1), modes: cfg.modes, max_wavenumber: cfg.max_wavenumber }
            .generate(spec)?;
    let dv = spec.cell_volume();
    let terms: Vec<(f64, f64)> = map_indices(spec.len(), |node| {
        let d = w.partials_at(node);
        let gamma = geom.gamma_at(node);
        let wn = w.at(node);
        let weight = geom.sqrt_det(node) * dv;
        let partial = (d[0] + d[4] + d[8]) * weight;
        let conn = sum2(|i, m| gamma[i][i][m] * wn[m]) * weight;
        (partial, conn)
    });
    let stokes = (compensated_sum(terms.iter().map(|t| t.0)), compensated_sum(terms.iter().map(|t| t.1)));
    Ok(GridProbe { spec, nodes, stokes })
}

/// Volume-form study at the coarsest grid: `sqrt(det g)` after `+-dt` for each step size.
#[derive(Debug, Clone)]
struct VolumeStudy {
    dts: Vec<f64>,
    h_trace: Vec<f64>,
    sqrt_det: Vec<f64>,
    plus_minus: Vec<(Vec<f64>, Vec<f64>)>,
}

fn build_volume_study(cfg: &SuiteConfig) -> Result<VolumeStudy> {
    let spec = GridSpec::new(cfg.grid_n[0], cfg.stencil_order)?;
    let generator =
        SyntheticMetric { eps: cfg.eps, seed: cfg.seed, modes: cfg.modes, max_wavenumber: cfg.max_wavenumber };
    let metric = generator.generate(spec)?;
    let backend = Backend::Grid(spec);
    let curv = backend.curvature(metric.metrics())?;
    let sqrt_of = |m: &[Sym2]| m.iter().map(|g| g.det().sqrt()).collect::<Vec<_>>();
    let dts = cfg.dts();
    let mut plus_minus = Vec::new();
    for &dt in &dts {
        let p = rk4_metrics(&backend, metric.metrics(), 0.0, dt, 1.0, None)?;
        let m = rk4_metrics(&backend, metric.metrics(), 0.0, -dt, 1.0, None)?;
        plus_minus.push((sqrt_of(&p), sqrt_of(&m)));
    }
    Ok(VolumeStudy {
        dts,
        h_trace: curv.iter().map(|c| c.h_trace).collect(),
        sqrt_det: sqrt_of(metric.metrics()),
        plus_minus,
    })
}

#[derive(Debug, Clone)]
struct GridStudy {
    probes: Vec<GridProbe>,
    /// Evaluation nodes kept by the `det P` mask, decided on the coarsest probe.
    mask: Vec<bool>,
    volume: VolumeStudy,
}

impl GridStudy {
    fn new(cfg: &SuiteConfig) -> Result<Self> {
        let probes = cfg.grid_n.iter().map(|&n| build_probe(cfg, n)).collect::<Result<Vec<_>>>()?;
        let coarse = &probes[0].nodes;
        let max_det = coarse.iter().map(|e| e.bundle.det_p.abs()).fold(0.0, f64::max);
        let mask =
            coarse.iter().map(|e| e.bundle.det_p.abs() >= cfg.mask_fraction * max_det && max_det > 0.0).collect();
        Ok(Self { probes, mask, volume: build_volume_study(cfg)? })
    }

    fn kept(&self) -> f64 {
        self.mask.iter().filter(|&&m| m).count() as f64 / self.mask.len().max(1) as f64
    }
}

/// Prepared states for a suite run. Building it does all the expensive grid work;
/// [`Suite::run`] only evaluates the checks.
#[derive(Debug, Clone)]
pub struct Suite {
    config: SuiteConfig,
    hom: Vec<HomState>,
    grid: Option<GridStudy>,
}

impl Suite {
    pub fn prepare(config: &SuiteConfig) -> Result<Self> {
        config.validate()?;
        let needs = |kind: Kind| CHECKS.iter().any(|c| config.selected(c) && c.kind == kind);
        let grid = if needs(Kind::Grid) {
            Some(GridStudy::new(config)?)
        } else if needs(Kind::Algebraic) {
            // Algebraic checks sample the coarsest probe only.
            Some(GridStudy::new(&SuiteConfig { grid_n: config.grid_n[..1].to_vec(), ..config.clone() })?)
        } else {
            None
        };
        Ok(Self { config: config.clone(), hom: hom_states(config)?, grid })
    }

    pub fn config(&self) -> &SuiteConfig {
        &self.config
    }

    /// Runs every selected check; with `mutate` each check uses its sign-flipped formula.
    pub fn run(&self, mutate: bool) -> VerificationReport {
        let s = if mutate { -1.0 } else { 1.0 };
        let checks = CHECKS
            .iter()
            .filter(|c| self.config.selected(c))
            .map(|c| self.run_one(c, s).unwrap_or_else(|e| CheckResult::failed(c, &e)))
            .collect();
        VerificationReport {
            checks,
            formulas: FORMULAS
                .iter()
                .map(|(f, t, m)| FormulaEntry {
                    family: (*f).to_string(),
                    formula: (*t).to_string(),
                    mutation: (*m).to_string(),
                })
                .collect(),
            fingerprint: alloc::vec![
                ("crate".to_string(), "xcf-core".to_string()),
                ("version".to_string(), env!("CARGO_PKG_VERSION").to_string()),
            ],
            config: self.config.clone(),
            mutated: mutate,
        }
    }

    fn grid(&self) -> Result<&GridStudy> {
        self.grid.as_ref().ok_or_else(|| Error::InvalidParameter("grid study was not prepared".into()))
    }

    fn run_one(&self, c: &CheckSpec, s: f64) -> Result<CheckResult> {
        match c.id {
            "check_h_equivalence" => self.h_equivalence(c, s),
            "check_P_mu" => self.p_mu(c, s),
            "check_mu_contraction" => self.mu_contraction(c, s),
            "check_detP_identity" => self.det_p_identity(c, s),
            "check_E_traces" => self.e_traces(c, s),
            "check_norm_identity" => self.norm_identity(c, s),
            "check_symbol" => self.symbol(c, s),
            "check_bianchi_homogeneous" => self.bianchi_hom(c, s),
            "check_bianchi_grid" => self.grid_convergence(c, |p, m| bianchi_grid(p, m, s), false),
            "check_dual_bianchi_homogeneous" => self.dual_bianchi_hom(c, s),
            "check_dual_bianchi_grid" => self.grid_convergence(c, |p, m| dual_bianchi_grid(p, m, s), true),
            "check_harmonicity_homogeneous" => self.harmonicity_hom(c, s),
            "check_harmonicity_grid" => self.grid_convergence(c, |p, m| harmonicity_grid(p, m, s), true),
            "check_evolution_P_homogeneous" => self.temporal(c, |st, dt| evolution_p_hom(st, dt, s), |_| true),
            "check_evolution_P_grid" => {
                let dt = self.config.grid_dt;
                self.grid_convergence(c, |p, m| evolution_p_grid(p, m, dt, s), false)
            }
            "check_evolution_Riem_homogeneous" => self.temporal(c, |st, dt| evolution_riem_hom(st, dt, s), |_| true),
            "check_evolution_Riem_grid" => {
                let dt = self.config.grid_dt;
                self.grid_convergence(c, |p, m| evolution_riem_grid(p, m, dt, s), false)
            }
            "check_volume_evolution_homogeneous" => self.temporal(c, |st, dt| volume_hom(st, dt, s), |_| true),
            "check_volume_evolution_grid" => self.volume_grid(c, s),
            "check_logdetP_homogeneous" => {
                self.temporal(c, |st, dt| logdetp_hom(st, dt, s), |st| st.bundle.det_p > 0.0)
            }
            "check_logdetP_grid" => {
                let dt = self.config.grid_dt;
                self.grid_convergence(c, |p, m| logdetp_grid(p, m, dt, s), true)
            }
            "check_stokes_grid" => self.stokes(c, s),
            "check_eta_rate_1/3" => self.eta_rate(c, 1.0 / 3.0, s),
            "check_eta_rate_1/2" => self.eta_rate(c, 0.5, s),
            "check_eta_rate_1" => self.eta_rate(c, 1.0, s),
            "check_eta_rate_2" => self.eta_rate(c, 2.0, s),
            "check_eta_half" => self.eta_half(c, s),
            "check_J_space_form" => self.j_space_form(c, s),
            "check_J_rhs_sign" => self.j_rhs_sign(c, s),
            "check_dP_integral" => {
                self.temporal(c, |st, dt| dp_integral_hom(st, dt, s), |st| st.algebra.is_unimodular())
            }
            other => Err(Error::InvalidParameter(alloc::format!("unregistered check {other}"))),
        }
    }

    /// Bundles for the pointwise algebraic checks: every homogeneous state plus
    /// every evaluation node of the coarsest grid probe.
    fn algebraic_bundles(&self) -> Result<Vec<&CurvatureBundle>> {
        let mut out: Vec<&CurvatureBundle> = self.hom.iter().map(|h| &h.bundle).collect();
        out.extend(self.grid()?.probes[0].nodes.iter().map(|n| &n.bundle));
        Ok(out)
    }

    fn algebraic(&self, c: &CheckSpec, acc: Acc, samples: usize, note: Option<String>) -> CheckResult {
        let mut meta = CheckMetadata::new(samples);
        meta.seed = Some(self.config.seed);
        meta.grid_n = alloc::vec![self.config.grid_n[0]];
        meta.note = note;
        CheckResult::finish(c, acc.residual(), None, None, meta)
    }

    fn h_equivalence(&self, c: &CheckSpec, s: f64) -> Result<CheckResult> {
        let bundles = self.algebraic_bundles()?;
        let mut acc = Acc::default();
        let mut kept = 0;
        for b in &bundles {
            let tau = 10.0 * b.p_up.singular_tolerance();
            let Some(v) = b.v else { continue };
            if b.det_p.abs() <= tau {
                continue;
            }
            kept += 1;
            acc.add_all(b.h.components(), v.scale(s * b.det_p).components());
        }
        let mut r = self.algebraic(c, acc, bundles.len(), None);
        r.metadata.mask_fraction = Some(kept as f64 / bundles.len() as f64);
        Ok(r)
    }

    fn p_mu(&self, c: &CheckSpec, s: f64) -> Result<CheckResult> {
        let bundles = self.algebraic_bundles()?;
        let mut acc = Acc::default();
        for b in &bundles {
            let via_mu = einstein_via_mu(&b.riem, &b.mu);
            acc.add_mat(&b.p_up.to_mat(), &tensor2(|i, j| s * via_mu[i][j]));
        }
        Ok(self.algebraic(c, acc, bundles.len(), None))
    }

    fn mu_contraction(&self, c: &CheckSpec, s: f64) -> Result<CheckResult> {
        let bundles = self.algebraic_bundles()?;
        let mut acc = Acc::default();
        for b in &bundles {
            let lhs = mu_contraction(&b.riem, &b.mu);
            let rhs = mu_contraction_rhs(&b.p_up);
            acc.add_all(flat4(&lhs), flat4(&rhs).map(|x| s * x));
        }
        Ok(self.algebraic(c, acc, bundles.len(), None))
    }

    fn det_p_identity(&self, c: &CheckSpec, s: f64) -> Result<CheckResult> {
        let bundles = self.algebraic_bundles()?;
        let mut acc = Acc::default();
        for b in &bundles {
            let term = det_p_identity_curvature_term(b);
            let lhs = tensor2(|m, n| term[m][n] + s * b.h_trace * b.p_up.get(m, n));
            acc.add_mat(&lhs, &b.g_inv.scale(b.det_p).to_mat());
        }
        Ok(self.algebraic(c, acc, bundles.len(), None))
    }

    /// `(P, nabla P)` pairs: random nondegenerate `P` with divergence-free gradients,
    /// then the homogeneous states with invertible `P`.
    fn decomposition_inputs(&self) -> Vec<(Sym2, Rank3)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ 0x5eed_0002);
        let mut out: Vec<(Sym2, Rank3)> = (0..self.config.samples)
            .map(|k| {
                let p = if k % 2 == 0 {
                    random_spd(&mut rng, Variance::Contravariant, 0.1)
                } else {
                    random_nondegenerate(&mut rng, Variance::Contravariant)
                };
                (p, random_divergence_free(&mut rng))
            })
            .collect();
        out.extend(self.hom.iter().filter(|h| h.bundle.v.is_some()).map(|h| (h.bundle.p_up, h.grad_p)));
        out
    }

    fn e_traces(&self, c: &CheckSpec, s: f64) -> Result<CheckResult> {
        let mut acc = Acc::default();
        let inputs = self.decomposition_inputs();
        for (p, d) in &inputs {
            let dec = compute_t(p, d, None)?;
            let tt = dec.t_trace;
            // Mutation flips the sign of the 1/10 term.
            let e = if s > 0.0 {
                dec.e
            } else {
                tensor3(|i, j, k| {
                    dec.t[i][j][k] - 0.1 * (p.get(i, j) * tt[k] + p.get(i, k) * tt[j]) - 0.4 * p.get(j, k) * tt[i]
                })
            };
            let scale = crate::tensor::max_abs(tt.iter().copied());
            for tr in e_traces(&e, &dec.v) {
                for x in tr {
                    acc.diff = acc.diff.max(x.abs());
                }
            }
            acc.mag = acc.mag.max(scale);
            acc.count += 1;
        }
        Ok(self.algebraic(c, acc, inputs.len(), None))
    }

    fn norm_identity(&self, c: &CheckSpec, s: f64) -> Result<CheckResult> {
        let mut acc = Acc::default();
        let inputs = self.decomposition_inputs();
        for (p, d) in &inputs {
            let n = compute_t(p, d, None)?.norms();
            acc.add(n.t_antisym, n.e_antisym + s * n.trace);
        }
        Ok(self.algebraic(c, acc, inputs.len(), None))
    }

    fn symbol(&self, c: &CheckSpec, s: f64) -> Result<CheckResult> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ 0x5eed_0003);
        let mut acc = Acc::default();
        let mut min_eig = f64::INFINITY;
        let mut max_imag: f64 = 0.0;
        let mut inputs: Vec<(Sym2, Covec3)> = alloc::vec![
            (Sym2::identity(Variance::Contravariant), [1.0, 0.0, 0.0]),
            (Sym2::identity(Variance::Contravariant), [0.0; 3]),
        ];
        for _ in 0..self.config.samples {
            let p = random_spd(&mut rng, Variance::Contravariant, 0.05);
            let zeta = core::array::from_fn(|_| rng.gen_range(-1.0..1.0));
            inputs.push((p, zeta));
        }
        for (p, zeta) in &inputs {
            let zpz = sum2(|i, j| p.get(i, j) * zeta[i] * zeta[j]);
            let (eig, imag) = symbol_eigenvalues(&symbol_matrix_signed(p, zeta, s));
            let oracle = [0.0, 0.0, 0.0, zpz, zpz, zpz];
            let norm = 1.0 + zpz;
            for (e, o) in eig.iter().zip(oracle) {
                acc.add(e / norm, o / norm);
            }
            min_eig = min_eig.min(eig[0] / norm);
            max_imag = max_imag.max(imag / norm);
        }
        // Negative eigenvalues and imaginary parts count against the check.
        acc.diff = acc.diff.max(-min_eig).max(max_imag);
        acc.mag = 0.0;
        let note = alloc::format!("min eigenvalue / (1 + zeta P zeta) = {min_eig:e}; max |imag| = {max_imag:e}");
        Ok(self.algebraic(c, acc, inputs.len(), Some(note)))
    }

    fn exact_hom(&self, c: &CheckSpec, acc: Acc, samples: usize) -> CheckResult {
        CheckResult::finish(c, acc.residual(), None, None, CheckMetadata::new(samples))
    }

    fn bianchi_hom(&self, c: &CheckSpec, s: f64) -> Result<CheckResult> {
        let mut acc = Acc::default();
        for st in &self.hom {
            let zero = [[[0.0; 3]; 3]; 3];
            acc.add_all(bianchi_divergence(&zero, &st.gamma, &st.bundle.p_up, s), [0.0; 3]);
        }
        Ok(self.exact_hom(c, acc, self.hom.len()))
    }

    fn dual_bianchi_hom(&self, c: &CheckSpec, s: f64) -> Result<CheckResult> {
        let mut acc = Acc::default();
        let mut n = 0;
        for st in self.hom.iter().filter(|st| st.bundle.det_p.abs() > 10.0 * st.bundle.p_up.singular_tolerance()) {
            let (a, b) = dual_bianchi_sides(&st.bundle.h, &st.bundle.g_inv, &st.grad_h, s)?;
            acc.add_all(a, b);
            n += 1;
        }
        Ok(self.exact_hom(c, acc, n))
    }

    fn harmonicity_hom(&self, c: &CheckSpec, s: f64) -> Result<CheckResult> {
        let mut acc = Acc::default();
        let mut n = 0;
        for st in &self.hom {
            let b = &st.bundle;
            // Ricci as a target metric when it is positive definite.
            if b.ric.is_positive_definite() {
                let gamma_ric = frame_connection(&st.algebra, &b.ric)?;
                let (a, bb) = tension_sides(&b.g_inv, &st.gamma, &gamma_ric, s);
                acc.add_all(a, bb);
                n += 1;
            }
            // h as a domain metric when the curvature sign is strict.
            if b.sec[0] > 0.0 || b.sec[2] < 0.0 {
                let gamma_h = frame_connection(&st.algebra, &b.h)?;
                let h_inv = invert_sym2(&b.h)?;
                let (a, bb) = tension_sides(&h_inv, &gamma_h, &st.gamma, s);
                acc.add_all(a, bb);
                n += 1;
            }
        }
        Ok(self.exact_hom(c, acc, n))
    }

    /// A temporal study over homogeneous states: residuals for each step size
    /// of [`SuiteConfig::dts`], maximized over states, and a fitted order.
    fn temporal(
        &self,
        c: &CheckSpec,
        f: impl Fn(&HomState, f64) -> Result<Acc>,
        filter: impl Fn(&HomState) -> bool,
    ) -> Result<CheckResult> {
        let states: Vec<&HomState> = self.hom.iter().filter(|st| filter(st)).collect();
        self.temporal_over(c, &states, f)
    }

    fn temporal_over(
        &self,
        c: &CheckSpec,
        states: &[&HomState],
        f: impl Fn(&HomState, f64) -> Result<Acc>,
    ) -> Result<CheckResult> {
        let dts = self.config.dts();
        let mut residuals = Vec::with_capacity(dts.len());
        for &dt in &dts {
            let mut acc = Acc::default();
            for st in states {
                acc.merge(&f(st, dt * st.tscale)?);
            }
            residuals.push(acc.residual());
        }
        let order = fit_order(&dts, &residuals);
        let mut meta = CheckMetadata::new(states.len());
        meta.dt = dts;
        meta.residuals = residuals.clone();
        let names: Vec<&str> = states.iter().map(|s| s.name.as_str()).collect();
        meta.note = Some(alloc::format!("states: {}", names.join(", ")));
        Ok(CheckResult::finish(c, *residuals.last().unwrap_or(&f64::INFINITY), order, Some(2.0), meta))
    }

    /// A convergence study over the grid probes.
    fn grid_convergence(
        &self,
        c: &CheckSpec,
        f: impl Fn(&GridProbe, &[bool]) -> Result<Acc>,
        masked: bool,
    ) -> Result<CheckResult> {
        let study = self.grid()?;
        let all = alloc::vec![true; study.mask.len()];
        let mask = if masked { &study.mask } else { &all };
        let residuals = study.probes.iter().map(|p| f(p, mask).map(|a| a.residual())).collect::<Result<Vec<_>>>()?;
        let h: Vec<f64> = study.probes.iter().map(|p| p.spec.spacing()).collect();
        let order = fit_order(&h, &residuals);
        let mut meta = CheckMetadata::new(mask.iter().filter(|&&m| m).count());
        meta.grid_n = self.config.grid_n.clone();
        meta.residuals = residuals.clone();
        meta.seed = Some(self.config.seed);
        if masked {
            meta.mask_fraction = Some(study.kept());
        }
        if c.id.contains("evolution") || c.id.contains("logdetP") {
            meta.dt = alloc::vec![self.config.grid_dt];
        }
        let declared = Some(self.config.stencil_order as f64);
        Ok(CheckResult::finish(c, *residuals.last().unwrap_or(&f64::INFINITY), order, declared, meta))
    }

    fn volume_grid(&self, c: &CheckSpec, s: f64) -> Result<CheckResult> {
        let v = &self.grid()?.volume;
        let mut residuals = Vec::new();
        for (k, &dt) in v.dts.iter().enumerate() {
            let (plus, minus) = &v.plus_minus[k];
            let mut acc = Acc::default();
            for n in 0..v.sqrt_det.len() {
                acc.add((plus[n] - minus[n]) / (2.0 * dt), s * v.h_trace[n] * v.sqrt_det[n]);
            }
            residuals.push(acc.residual());
        }
        let order = fit_order(&v.dts, &residuals);
        let mut meta = CheckMetadata::new(v.sqrt_det.len());
        meta.grid_n = alloc::vec![self.config.grid_n[0]];
        meta.dt = v.dts.clone();
        meta.residuals = residuals.clone();
        meta.seed = Some(self.config.seed);
        Ok(CheckResult::finish(c, *residuals.last().unwrap_or(&f64::INFINITY), order, Some(2.0), meta))
    }

    fn stokes(&self, c: &CheckSpec, s: f64) -> Result<CheckResult> {
        self.grid_convergence(
            c,
            |p, _| {
                let mut acc = Acc::default();
                acc.add(p.stokes.0, -s * p.stokes.1);
                Ok(acc)
            },
            false,
        )
    }

    fn eta_rate(&self, c: &CheckSpec, eta: f64, s: f64) -> Result<CheckResult> {
        // Nil: unimodular with det P = 3/64 > 0 for every inner product.
        let states: Vec<&HomState> = self.hom.iter().filter(|st| st.name.starts_with("nil")).collect();
        self.temporal_over(c, &states, |st, dt| {
            let (qp, bp) = st.stepped(dt)?;
            let (qm, bm) = st.stepped(-dt)?;
            let density = |q: &Sym2, b: &CurvatureBundle| -> Result<f64> {
                Ok(crate::functionals::det_p_power(b.det_p, eta)? * q.det().sqrt())
            };
            let lhs = (density(&qp, &bp)? - density(&qm, &bm)?) / (2.0 * dt);
            let norms = st.decomposition()?.norms();
            let b = &st.bundle;
            let w = crate::functionals::det_p_power(b.det_p, eta)?;
            // Mutation turns 1 - 2 eta into 1 + 2 eta.
            let h_coeff = if s > 0.0 { 1.0 - 2.0 * eta } else { 1.0 + 2.0 * eta };
            let rhs =
                (eta * (0.5 * norms.t_antisym - eta * norms.trace) * w + h_coeff * w * b.h_trace) * st.q.det().sqrt();
            let mut acc = Acc::default();
            acc.add(lhs, rhs);
            Ok(acc)
        })
    }

    /// Homogeneous `P > 0` states: the solvable presets with random inner
    /// products, plus states along a short flow of the `(1, 2)` preset.
    fn positive_states(&self) -> Result<Vec<HomState>> {
        let mut out: Vec<HomState> = self.hom.iter().filter(|h| h.positive_p()).cloned().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ 0x5eed_0004);
        for (alpha, beta) in [(1.0, 2.0), (0.3, 1.7), (2.0, 2.5)] {
            let (algebra, _) = build_preset(PresetId::HyperbolicSolvable { alpha, beta })?;
            for k in 0..8 {
                let q = random_spd(&mut rng, Variance::Covariant, 0.3);
                let st = HomState::new(alloc::format!("hyperbolic_solvable:{alpha},{beta}/random{k}"), algebra, q)?;
                if st.positive_p() {
                    out.push(st);
                }
            }
        }
        let (algebra, state) = build_preset(PresetId::HyperbolicSolvable { alpha: 1.0, beta: 2.0 })?;
        let backend = Backend::Homogeneous(algebra);
        let mut q = state.q;
        for k in 0..5 {
            q = rk4_metrics(&backend, &[q], 0.0, 0.05, 1.0, None)?[0];
            out.push(HomState::new(alloc::format!("hyperbolic_solvable:1,2/flow{k}"), algebra, q)?);
        }
        Ok(out)
    }

    fn eta_half(&self, c: &CheckSpec, s: f64) -> Result<CheckResult> {
        let states = self.positive_states()?;
        let mut acc = Acc::default();
        let mut min_value = f64::INFINITY;
        for st in &states {
            let norms = st.decomposition()?.norms();
            let b = &st.bundle;
            let rhs = eta_rhs_density(&norms, b.det_p, b.h_trace, 0.5)?;
            let via_e = s * eta_half_density(&norms, b.det_p)?;
            acc.add(rhs, via_e);
            min_value = min_value.min(rhs);
        }
        // The rate must also be non-negative.
        acc.diff = acc.diff.max(-min_value);
        let mut meta = CheckMetadata::new(states.len());
        meta.note = Some(alloc::format!("min eta = 1/2 density {min_value:e}"));
        Ok(CheckResult::finish(c, acc.residual(), None, None, meta))
    }

    fn j_space_form(&self, c: &CheckSpec, s: f64) -> Result<CheckResult> {
        let mut acc = Acc::default();
        let mut n = 0;
        for (alpha, scale) in [(1.0, 1.0), (0.7, 2.0), (1.5, 0.5)] {
            let (algebra, _) = build_preset(PresetId::HyperbolicSolvable { alpha, beta: alpha })?;
            let st = HomState::new(
                alloc::format!("space form {alpha}"),
                algebra,
                Sym2::identity(Variance::Covariant).scale(scale),
            )?;
            let b = &st.bundle;
            let norms = st.decomposition()?.norms();
            let det_h = b.h.det() / b.g.det();
            acc.add(j_signed(b.p_trace(), b.det_p, s)?, 0.0);
            acc.add(j_rhs_signed(&norms, b.det_p, b.h_trace, det_h, s)?, 0.0);
            // dJ/dt along the exact solution, by a centred difference.
            let dt = self.config.dt;
            let (qp, bp) = st.stepped(dt)?;
            let (qm, bm) = st.stepped(-dt)?;
            let jp = j_signed(bp.p_trace(), bp.det_p, s)? * qp.det().sqrt();
            let jm = j_signed(bm.p_trace(), bm.det_p, s)? * qm.det().sqrt();
            acc.add((jp - jm) / (2.0 * dt), 0.0);
            n += 1;
        }
        Ok(CheckResult::finish(c, acc.residual(), None, None, CheckMetadata::new(n)))
    }

    fn j_rhs_sign(&self, c: &CheckSpec, s: f64) -> Result<CheckResult> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ 0x5eed_0005);
        let mut acc = Acc::default();
        let mut max_value = f64::NEG_INFINITY;
        let mut n = 0;
        let mut check = |p: &Sym2, g: &Sym2, grad_p: &Rank3| -> Result<()> {
            let dec = compute_t(p, grad_p, None)?;
            let norms = dec.norms();
            let det_p = det_rel(p, g)?;
            let h = dec.v.scale(det_p).with_variance(Variance::Covariant);
            let g_inv = crate::tensor::metric_inverse(g)?;
            let h_trace = g_inv.contract(&h);
            let det_h = h.det() / g.det();
            let rate = j_rhs_signed(&norms, det_p, h_trace, det_h, s)?;
            // Same rate assembled from the eta = 1/3 density and the P-integral rate.
            let eta_third = eta_rhs_density(&norms, det_p, h_trace, 1.0 / 3.0)?;
            acc.add(rate, det_p - eta_third);
            let scale = 1.0 + h_trace.abs() + norms.t_antisym.abs();
            max_value = max_value.max(rate / scale);
            n += 1;
            Ok(())
        };
        for _ in 0..self.config.samples {
            let p = random_spd(&mut rng, Variance::Contravariant, 0.05);
            let g = random_spd(&mut rng, Variance::Covariant, 0.3);
            check(&p, &g, &random_divergence_free(&mut rng))?;
        }
        for st in self.positive_states()? {
            check(&st.bundle.p_up, &st.q, &st.grad_p)?;
        }
        acc.diff = acc.diff.max(max_value);
        let mut meta = CheckMetadata::new(n);
        meta.seed = Some(self.config.seed);
        meta.note = Some(alloc::format!("max normalized J rate {max_value:e}"));
        Ok(CheckResult::finish(c, acc.residual(), None, None, meta))
    }
}

/// The J rate with the sign of the `(H/3 - (det h)^(1/3))` bracket set by `s`.
fn j_rhs_signed(norms: &TNorms, det_p: f64, h_trace: f64, det_h: f64, s: f64) -> Result<f64> {
    let base = j_rhs_density(norms, det_p, h_trace, det_h)?;
    if s > 0.0 {
        return Ok(base);
    }
    let bracket = (h_trace / 3.0 - det_h.cbrt()) * det_p.cbrt();
    Ok(base + 2.0 * bracket)
}

/// `P/3 - s (det P)^(1/3)`.
fn j_signed(p_trace: f64, det_p: f64, s: f64) -> Result<f64> {
    let j = j_density(p_trace, det_p)?;
    Ok(if s > 0.0 { j } else { j + 2.0 * det_p.cbrt() })
}

/// `nabla_i P^ik` from coordinate partials `dp[a][i][j]`; `s` flips the
/// connection term acting on the free index.
fn bianchi_divergence(dp: &Rank3, gamma: &Rank3, p: &Sym2, s: f64) -> [f64; 3] {
    core::array::from_fn(|k| {
        sum1(|i| dp[i][i][k])
            + sum2(|i, m| gamma[i][i][m] * p.get(m, k))
            + s * sum2(|i, m| gamma[k][i][m] * p.get(i, m))
    })
}

/// `(h^ij nabla_i h_jk, (1/2) h^ij nabla_k h_ij)` with `grad_h[i][j][k] = nabla_i h_jk`.
/// The mutated form (`s < 0`) contracts with `g^ij` instead.
fn dual_bianchi_sides(h: &Sym2, g_inv: &Sym2, grad_h: &Rank3, s: f64) -> Result<(Vec3, Vec3)> {
    let hi = if s > 0.0 { invert_sym2(h)? } else { *g_inv };
    let a = core::array::from_fn(|k| sum2(|i, j| hi.get(i, j) * grad_h[i][j][k]));
    let b = core::array::from_fn(|k| 0.5 * sum2(|i, j| hi.get(i, j) * grad_h[k][i][j]));
    Ok((a, b))
}

/// `(d^ij Gamma(target)^k_ij, s d^ij Gamma(domain)^k_ij)`; their difference is the tension.
fn tension_sides(domain_inv: &Sym2, gamma_domain: &Rank3, gamma_target: &Rank3, s: f64) -> (Vec3, Vec3) {
    let a = core::array::from_fn(|k| sum2(|i, j| domain_inv.get(i, j) * gamma_target[k][i][j]));
    let b = core::array::from_fn(|k| s * sum2(|i, j| domain_inv.get(i, j) * gamma_domain[k][i][j]));
    (a, b)
}

fn bianchi_grid(p: &GridProbe, mask: &[bool], s: f64) -> Result<Acc> {
    let mut acc = Acc::default();
    for (e, _) in p.nodes.iter().zip(mask).filter(|(_, &m)| m) {
        acc.add_all(bianchi_divergence(&e.dp, &e.gamma, &e.bundle.p_up, s), [0.0; 3]);
    }
    Ok(acc)
}

fn dual_bianchi_grid(p: &GridProbe, mask: &[bool], s: f64) -> Result<Acc> {
    let mut acc = Acc::default();
    for (e, _) in p.nodes.iter().zip(mask).filter(|(_, &m)| m) {
        let (a, b) = dual_bianchi_sides(&e.bundle.h, &e.bundle.g_inv, &e.grad_h, s)?;
        acc.add_all(a, b);
    }
    Ok(acc)
}

fn harmonicity_grid(p: &GridProbe, mask: &[bool], s: f64) -> Result<Acc> {
    let mut acc = Acc::default();
    for (e, _) in p.nodes.iter().zip(mask).filter(|(_, &m)| m) {
        let h_inv = invert_sym2(&e.bundle.h)?;
        let gamma_h = christoffels(&h_inv, &e.dh);
        let (a, b) = tension_sides(&h_inv, &gamma_h, &e.gamma, s);
        acc.add_all(a, b);
    }
    Ok(acc)
}

fn point(b: &CurvatureBundle) -> PointCurvature {
    PointCurvature::from(b)
}

/// The `P` rate with the sign of the second-order term set by `s`.
fn dp_rate(terms: &DpDtTerms, s: f64) -> Mat3 {
    tensor2(|i, j| s * terms.second_order[i][j] + terms.det_term[i][j] + terms.h_term[i][j])
}

fn evolution_p_grid(p: &GridProbe, mask: &[bool], dt: f64, s: f64) -> Result<Acc> {
    let mut acc = Acc::default();
    for (e, _) in p.nodes.iter().zip(mask).filter(|(_, &m)| m) {
        let fd = tensor2(|i, j| (e.plus.p_up.get(i, j) - e.minus.p_up.get(i, j)) / (2.0 * dt));
        let rate = dp_rate(&analytic_dp_dt(&point(&e.bundle), &e.bundle.g_inv, &e.grad_p, &e.hess_p), s);
        acc.add_mat(&fd, &rate);
    }
    Ok(acc)
}

fn evolution_riem_grid(p: &GridProbe, mask: &[bool], dt: f64, s: f64) -> Result<Acc> {
    let mut acc = Acc::default();
    for (e, _) in p.nodes.iter().zip(mask).filter(|(_, &m)| m) {
        let fd = tensor4(|i, j, k, l| (e.plus.riem.0[i][j][k][l] - e.minus.riem.0[i][j][k][l]) / (2.0 * dt));
        let rate = analytic_driem_dt(&e.bundle.riem, &e.bundle.g_inv, &e.bundle.h, &e.hess_h).combine(s);
        acc.add_all(flat4(&fd), flat4(&rate));
    }
    Ok(acc)
}

/// `P^ij nabla_i nabla_j log f` from the gradient and Hessian of `f`.
fn box_log(p: &Sym2, f: f64, grad: &Vec3, hess: &Mat3) -> f64 {
    sum2(|i, j| p.get(i, j) * (hess[i][j] / f - grad[i] * grad[j] / (f * f)))
}

fn logdetp_grid(p: &GridProbe, mask: &[bool], dt: f64, s: f64) -> Result<Acc> {
    let mut acc = Acc::default();
    for (e, _) in p.nodes.iter().zip(mask).filter(|(_, &m)| m) {
        let b = &e.bundle;
        if b.det_p <= 0.0 {
            continue;
        }
        let log_grad: Vec3 = core::array::from_fn(|i| e.det_grad[i] / b.det_p);
        let norms = compute_t(&b.p_up, &e.grad_p, Some(&log_grad))?.norms();
        let rhs = box_log(&b.p_up, b.det_p, &e.det_grad, &e.det_hess) + 0.5 * norms.t_antisym - s * 2.0 * b.h_trace;
        let fd = (e.plus.det_p.ln() - e.minus.det_p.ln()) / (2.0 * dt);
        acc.add(fd, rhs);
    }
    Ok(acc)
}

fn evolution_p_hom(st: &HomState, dt: f64, s: f64) -> Result<Acc> {
    let (_, bp) = st.stepped(dt)?;
    let (_, bm) = st.stepped(-dt)?;
    let fd = tensor2(|i, j| (bp.p_up.get(i, j) - bm.p_up.get(i, j)) / (2.0 * dt));
    let rate = dp_rate(&analytic_dp_dt(&point(&st.bundle), &st.bundle.g_inv, &st.grad_p, &st.hess_p), s);
    let mut acc = Acc::default();
    acc.add_mat(&fd, &rate);
    Ok(acc)
}

fn evolution_riem_hom(st: &HomState, dt: f64, s: f64) -> Result<Acc> {
    let (_, bp) = st.stepped(dt)?;
    let (_, bm) = st.stepped(-dt)?;
    let fd = tensor4(|i, j, k, l| (bp.riem.0[i][j][k][l] - bm.riem.0[i][j][k][l]) / (2.0 * dt));
    let rate = analytic_driem_dt(&st.bundle.riem, &st.bundle.g_inv, &st.bundle.h, &st.hess_h).combine(s);
    let mut acc = Acc::default();
    acc.add_all(flat4(&fd), flat4(&rate));
    Ok(acc)
}

fn volume_hom(st: &HomState, dt: f64, s: f64) -> Result<Acc> {
    let (qp, _) = st.stepped(dt)?;
    let (qm, _) = st.stepped(-dt)?;
    let mut acc = Acc::default();
    acc.add((qp.det().sqrt() - qm.det().sqrt()) / (2.0 * dt), s * st.bundle.h_trace * st.q.det().sqrt());
    Ok(acc)
}

fn logdetp_hom(st: &HomState, dt: f64, s: f64) -> Result<Acc> {
    let (_, bp) = st.stepped(dt)?;
    let (_, bm) = st.stepped(-dt)?;
    let fd = (bp.det_p.ln() - bm.det_p.ln()) / (2.0 * dt);
    let norms = st.decomposition()?.norms();
    // det P is constant in space, so the box term vanishes.
    let rhs = 0.5 * norms.t_antisym - s * 2.0 * st.bundle.h_trace;
    let mut acc = Acc::default();
    acc.add(fd, rhs);
    Ok(acc)
}

fn dp_integral_hom(st: &HomState, dt: f64, s: f64) -> Result<Acc> {
    let (qp, bp) = st.stepped(dt)?;
    let (qm, bm) = st.stepped(-dt)?;
    let fd = (bp.p_trace() * qp.det().sqrt() - bm.p_trace() * qm.det().sqrt()) / (2.0 * dt);
    let mut acc = Acc::default();
    acc.add(fd, s * 3.0 * st.bundle.det_p * st.q.det().sqrt());
    Ok(acc)
}

/// Prepares and runs the suite once.
pub fn run_suite(config: &SuiteConfig, mutate: bool) -> Result<VerificationReport> {
    Ok(Suite::prepare(config)?.run(mutate))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn order_fit_recovers_power_laws() {
        let h = [0.4, 0.2, 0.1];
        let r: Vec<f64> = h.iter().map(|x: &f64| 3.0 * x.powi(4)).collect();
        assert!((fit_order(&h, &r).unwrap() - 4.0).abs() < 1e-12);
        assert_eq!(fit_order(&h, &[1e-3, 1e-9, 1e-15]), None);
        assert_eq!(fit_order(&[0.1], &[1.0]), None);
    }

    #[test]
    fn residual_is_scale_free() {
        let mut acc = Acc::default();
        acc.add(1e6, 1e6 + 1.0);
        assert!(acc.residual() < 1e-6);
        let mut nan = Acc::default();
        nan.add(f64::NAN, 0.0);
        assert!(nan.residual().is_infinite());
    }

    #[test]
    fn config_validation() {
        assert!(SuiteConfig::default().validate().is_ok());
        for bad in [
            SuiteConfig { grid_n: vec![], ..Default::default() },
            SuiteConfig { grid_n: vec![16, 24], ..Default::default() },
            SuiteConfig { grid_n: vec![8], ..Default::default() },
            SuiteConfig { samples: 0, ..Default::default() },
            SuiteConfig { only: vec!["check_nothing".into()], ..Default::default() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn every_family_has_a_formula() {
        for c in CHECKS {
            assert!(FORMULAS.iter().any(|f| f.0 == c.family), "{}", c.family);
        }
        let mut ids = check_ids();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), CHECKS.len());
    }

    #[test]
    fn homogeneous_subset_passes_and_mutates() {
        let only =
            ["check_bianchi_homogeneous", "check_harmonicity_homogeneous", "check_eta_rate", "check_J_space_form"];
        let config = SuiteConfig {
            grid_n: vec![16],
            only: only.iter().map(|s| s.to_string()).collect(),
            samples: 50,
            ..Default::default()
        };
        let suite = Suite::prepare(&config).unwrap();
        let report = suite.run(false);
        assert_eq!(report.checks.len(), 7);
        assert!(suite.grid.is_none());
        for c in &report.checks {
            assert!(c.pass, "{c:?}");
        }
        assert!(suite.run(true).checks.iter().all(|c| !c.pass));
    }

    #[test]
    fn random_divergence_free_inputs_have_zero_divergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let d = random_divergence_free(&mut rng);
            for k in 0..3 {
                assert!(sum1(|j| d[j][j][k]).abs() < 1e-15);
            }
        }
    }
}
