//! Time integration of `dg/dt = 2h` (negative branch) or `dg/dt = -2h`
//! (positive branch) with classical RK4, plus the analytic rates of change
//! of `P`, the Riemann tensor and the volume form along the flow.

use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::curvature::PointCurvature;
use crate::functionals::{functional_sample, FunctionalSample};
use crate::grid::{GridGeometry, GridSpec, MetricGrid};
use crate::lie::{curvature_homogeneous, LieAlgebraData};
use crate::tensor::{generalized_eigenvalues, sum1, tensor2, tensor4, Mat3, Rank3, Rank4, Riem4, Sym2, Variance};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "lowercase"))]
pub enum Branch {
    /// `dg/dt = 2h`, for negative sectional curvature.
    Negative,
    /// `dg/dt = -2h`, for positive sectional curvature.
    Positive,
    /// Chosen from the curvature sign of the initial data.
    Auto,
}

impl Branch {
    /// `+1` or `-1`; `None` for an unresolved [`Branch::Auto`].
    pub fn sign(self) -> Option<f64> {
        match self {
            Branch::Negative => Some(1.0),
            Branch::Positive => Some(-1.0),
            Branch::Auto => None,
        }
    }

    pub fn resolve(self, curv: &[PointCurvature]) -> Result<Branch> {
        match self {
            Branch::Auto => uniform_sign(curv).ok_or(Error::MixedCurvatureSign),
            b => Ok(b),
        }
    }
}

/// `Negative` when every node has `a, b, c > 0`, `Positive` when every node has
/// `a, b, c < 0`.
fn uniform_sign(curv: &[PointCurvature]) -> Option<Branch> {
    if curv.is_empty() {
        None
    } else if curv.iter().all(|c| c.sec[0] > 0.0) {
        Some(Branch::Negative)
    } else if curv.iter().all(|c| c.sec[2] < 0.0) {
        Some(Branch::Positive)
    } else {
        None
    }
}

/// Where the metric lives: a Lie algebra (one inner product) or a periodic grid.
#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum Backend {
    Homogeneous(LieAlgebraData),
    Grid(GridSpec),
}

impl Backend {
    pub fn curvature(&self, metrics: &[Sym2]) -> Result<Vec<PointCurvature>> {
        match self {
            Backend::Homogeneous(l) => {
                let [q] = metrics else {
                    return Err(Error::ShapeMismatch(alloc::format!(
                        "homogeneous state has one inner product, got {}",
                        metrics.len()
                    )));
                };
                Ok(alloc::vec![PointCurvature::from(&curvature_homogeneous(l, q)?)])
            }
            Backend::Grid(spec) => GridGeometry::new(MetricGrid::new(*spec, metrics.to_vec())?)?.curvature(),
        }
    }

    /// Quadrature weights; `sqrt(det q)` (unit reference volume) on the homogeneous backend.
    pub fn weights(&self, metrics: &[Sym2]) -> Vec<f64> {
        let dv = match self {
            Backend::Homogeneous(_) => 1.0,
            Backend::Grid(spec) => spec.cell_volume(),
        };
        metrics.iter().map(|g| g.det().sqrt() * dv).collect()
    }

    pub fn spacing(&self) -> Option<f64> {
        match self {
            Backend::Homogeneous(_) => None,
            Backend::Grid(spec) => Some(spec.spacing()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FlowState {
    /// One metric per node; a single inner product on the homogeneous backend.
    pub metrics: Vec<Sym2>,
    pub t: f64,
}

impl FlowState {
    pub fn homogeneous(q: Sym2) -> Self {
        Self { metrics: alloc::vec![q], t: 0.0 }
    }

    pub fn from_grid(m: MetricGrid) -> Self {
        Self { metrics: m.into_metrics(), t: 0.0 }
    }
}

/// `sign * 2h` at every node.
pub fn xcf_rhs(curv: &[PointCurvature], sign: f64) -> Vec<Sym2> {
    curv.iter().map(|c| c.h.scale(2.0 * sign)).collect()
}

fn invalid(t: f64, dt: f64) -> Error {
    Error::StepProducedInvalidMetric { t, dt }
}

fn shifted(metrics: &[Sym2], k: &[Sym2], a: f64) -> Vec<Sym2> {
    metrics.iter().zip(k).map(|(g, d)| g.axpy(a, d)).collect()
}

fn stage(backend: &Backend, metrics: &[Sym2], sign: f64, t: f64, dt: f64) -> Result<Vec<Sym2>> {
    if metrics.iter().any(|g| !g.is_finite() || !g.is_positive_definite()) {
        return Err(invalid(t, dt));
    }
    match backend.curvature(metrics) {
        Ok(c) => Ok(xcf_rhs(&c, sign)),
        Err(Error::NonPositiveMetric) => Err(invalid(t, dt)),
        Err(e) => Err(e),
    }
}

/// RK4 update of the metrics by `dt` (either sign), reusing `k1` when given.
pub(crate) fn rk4_metrics(
    backend: &Backend,
    metrics: &[Sym2],
    t: f64,
    dt: f64,
    sign: f64,
    k1: Option<Vec<Sym2>>,
) -> Result<Vec<Sym2>> {
    let k1 = match k1 {
        Some(k) => k,
        None => stage(backend, metrics, sign, t, dt)?,
    };
    let k2 = stage(backend, &shifted(metrics, &k1, 0.5 * dt), sign, t, dt)?;
    let k3 = stage(backend, &shifted(metrics, &k2, 0.5 * dt), sign, t, dt)?;
    let k4 = stage(backend, &shifted(metrics, &k3, dt), sign, t, dt)?;
    let next: Vec<Sym2> = (0..metrics.len())
        .map(|n| {
            let incr = k1[n].add(&k2[n].scale(2.0)).add(&k3[n].scale(2.0)).add(&k4[n]);
            metrics[n].axpy(dt / 6.0, &incr)
        })
        .collect();
    if next.iter().any(|g| !g.is_finite() || !g.is_positive_definite()) {
        return Err(invalid(t, dt));
    }
    Ok(next)
}

/// One classical RK4 step; curvature is recomputed at every stage.
pub fn step_rk4(backend: &Backend, state: &FlowState, dt: f64, sign: f64) -> Result<FlowState> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(alloc::format!("dt = {dt} must be positive")));
    }
    let metrics = rk4_metrics(backend, &state.metrics, state.t, dt, sign, None)?;
    Ok(FlowState { metrics, t: state.t + dt })
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(deny_unknown_fields, default))]
pub struct StepControl {
    pub safety: f64,
    pub max_growth: f64,
    pub dt_max: f64,
}

impl Default for StepControl {
    fn default() -> Self {
        Self { safety: 0.2, max_growth: 2.0, dt_max: 0.1 }
    }
}

/// Step size from the rate of `g` (`safety / max |eig(2h, g)|`), capped on the
/// grid by `safety * Delta^2 / (2 max |zeta P zeta|)` over unit covectors and
/// by `max_growth * dt_prev`.
pub fn adapt_dt(
    backend: &Backend,
    metrics: &[Sym2],
    curv: &[PointCurvature],
    dt_prev: Option<f64>,
    control: &StepControl,
) -> Result<f64> {
    let mut rate: f64 = 0.0;
    let mut symbol: f64 = 0.0;
    let id = Sym2::identity(Variance::Covariant);
    for (g, c) in metrics.iter().zip(curv) {
        let eig = generalized_eigenvalues(&c.h, g)?;
        rate = rate.max(2.0 * eig[0].abs().max(eig[2].abs()));
        if backend.spacing().is_some() {
            let p = generalized_eigenvalues(&c.p_up.with_variance(Variance::Covariant), &id)?;
            symbol = symbol.max(p[0].abs().max(p[2].abs()));
        }
    }
    let mut dt = if rate > 0.0 { control.safety / rate } else { control.dt_max };
    if let Some(delta) = backend.spacing() {
        if symbol > 0.0 {
            dt = dt.min(control.safety * delta * delta / (2.0 * symbol));
        }
    }
    dt = dt.min(control.dt_max);
    if let Some(prev) = dt_prev {
        dt = dt.min(control.max_growth * prev);
    }
    Ok(dt)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(deny_unknown_fields, default))]
pub struct StopConditions {
    /// Stop when `min |det P| < det_p_ratio * (initial min |det P|)`.
    pub det_p_ratio: f64,
    /// Stop when `max |H| > h_ratio * (initial max |H|)`.
    pub h_ratio: f64,
    /// Stop when a uniform initial curvature sign is lost.
    pub sign_change: bool,
}

impl Default for StopConditions {
    fn default() -> Self {
        Self { det_p_ratio: 1e-8, h_ratio: 1e6, sign_change: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(deny_unknown_fields, default))]
pub struct FlowConfig {
    pub branch: Branch,
    pub t_end: f64,
    pub dt_init: f64,
    pub adaptive: bool,
    pub control: StepControl,
    pub stop: StopConditions,
    /// Record a sample every this many accepted steps (the final state is always recorded).
    pub sample_every: usize,
    /// Exponents for the eta-functionals in each sample.
    pub etas: Vec<f64>,
    pub max_steps: usize,
    /// Step halvings allowed after an invalid metric before giving up.
    pub retry_budget: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            branch: Branch::Auto,
            t_end: 1.0,
            dt_init: 1e-3,
            adaptive: false,
            control: StepControl::default(),
            stop: StopConditions::default(),
            sample_every: 1,
            etas: alloc::vec![0.0, 1.0 / 3.0, 0.5, 1.0, 2.0],
            max_steps: 10_000_000,
            retry_budget: 30,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_end > 0.0) {
            return Err(Error::InvalidParameter(alloc::format!("t_end = {} must be positive", self.t_end)));
        }
        if !(self.dt_init > 0.0) {
            return Err(Error::InvalidParameter(alloc::format!("dt_init = {} must be positive", self.dt_init)));
        }
        if self.sample_every == 0 {
            return Err(Error::InvalidParameter("sample_every must be at least 1".into()));
        }
        let c = &self.control;
        if !(c.safety > 0.0 && c.max_growth >= 1.0 && c.dt_max > 0.0) {
            return Err(Error::InvalidParameter("step control needs safety > 0, max_growth >= 1, dt_max > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "snake_case"))]
pub enum BreakdownReason {
    DetPBelowThreshold,
    CurvatureSignChange,
    HExceeded,
    Nonfinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "snake_case"))]
pub enum Location {
    Homogeneous,
    Node(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BreakdownEvent {
    pub reason: BreakdownReason,
    pub t: f64,
    pub location: Location,
    /// `det P` and `H` at `location`.
    pub det_p: f64,
    pub h_trace: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FlowSample {
    pub t: f64,
    /// Step that produced this state (0 for the initial sample).
    pub dt: f64,
    pub a_min: f64,
    pub a_max: f64,
    pub b_min: f64,
    pub b_max: f64,
    pub c_min: f64,
    pub c_max: f64,
    pub det_p_min: f64,
    pub det_p_max: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub volume: f64,
    /// Largest per-node `max |sec| / min |sec|`; `None` unless every node has a strict uniform sign.
    pub pinching: Option<f64>,
    pub functionals: FunctionalSample,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FlowTrace {
    pub branch: Branch,
    pub samples: Vec<FlowSample>,
    pub breakdown: Option<BreakdownEvent>,
    pub steps: usize,
    pub final_state: FlowState,
}

fn min_max(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Per-node ratio `max |sec| / min |sec|` maximized over nodes.
pub fn pinching(curv: &[PointCurvature]) -> Option<f64> {
    let mut worst: f64 = 1.0;
    for c in curv {
        let [a, _, cc] = c.sec;
        if a > 0.0 {
            worst = worst.max(cc / a);
        } else if cc < 0.0 {
            worst = worst.max(a / cc);
        } else {
            return None;
        }
    }
    if curv.is_empty() {
        None
    } else {
        Some(worst)
    }
}

pub fn flow_sample(t: f64, dt: f64, curv: &[PointCurvature], weights: &[f64], etas: &[f64]) -> FlowSample {
    let (a_min, a_max) = min_max(curv.iter().map(|c| c.sec[0]));
    let (b_min, b_max) = min_max(curv.iter().map(|c| c.sec[1]));
    let (c_min, c_max) = min_max(curv.iter().map(|c| c.sec[2]));
    let (det_p_min, det_p_max) = min_max(curv.iter().map(|c| c.det_p));
    let (h_min, h_max) = min_max(curv.iter().map(|c| c.h_trace));
    FlowSample {
        t,
        dt,
        a_min,
        a_max,
        b_min,
        b_max,
        c_min,
        c_max,
        det_p_min,
        det_p_max,
        h_min,
        h_max,
        volume: crate::grid::compensated_sum(weights.iter().copied()),
        pinching: pinching(curv),
        functionals: functional_sample(t, curv, weights, etas),
    }
}

fn location(backend: &Backend, node: usize) -> Location {
    match backend {
        Backend::Homogeneous(_) => Location::Homogeneous,
        Backend::Grid(_) => Location::Node(node),
    }
}

struct Baseline {
    det_p_min: f64,
    h_max: f64,
    sign: Option<Branch>,
}

impl Baseline {
    fn new(curv: &[PointCurvature]) -> Self {
        Self {
            det_p_min: curv.iter().map(|c| c.det_p.abs()).fold(f64::INFINITY, f64::min),
            h_max: curv.iter().map(|c| c.h_trace.abs()).fold(0.0, f64::max),
            sign: uniform_sign(curv),
        }
    }

    fn check(
        &self,
        backend: &Backend,
        stop: &StopConditions,
        t: f64,
        curv: &[PointCurvature],
    ) -> Option<BreakdownEvent> {
        let event = |reason, n: usize| BreakdownEvent {
            reason,
            t,
            location: location(backend, n),
            det_p: curv[n].det_p,
            h_trace: curv[n].h_trace,
        };
        if let Some(n) = curv.iter().position(|c| !(c.det_p.is_finite() && c.h_trace.is_finite() && c.h.is_finite())) {
            return Some(event(BreakdownReason::Nonfinite, n));
        }
        let (n_det, det_min) = curv
            .iter()
            .enumerate()
            .map(|(n, c)| (n, c.det_p.abs()))
            .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
        if self.det_p_min > 0.0 && det_min < stop.det_p_ratio * self.det_p_min {
            return Some(event(BreakdownReason::DetPBelowThreshold, n_det));
        }
        let (n_h, h_max) = curv.iter().enumerate().map(|(n, c)| (n, c.h_trace.abs())).fold((0, 0.0), |acc, x| {
            if x.1 > acc.1 {
                x
            } else {
                acc
            }
        });
        if self.h_max > 0.0 && h_max > stop.h_ratio * self.h_max {
            return Some(event(BreakdownReason::HExceeded, n_h));
        }
        if stop.sign_change {
            let lost = match self.sign {
                Some(Branch::Negative) => curv.iter().position(|c| c.sec[0] <= 0.0),
                Some(Branch::Positive) => curv.iter().position(|c| c.sec[2] >= 0.0),
                _ => None,
            };
            if let Some(n) = lost {
                return Some(event(BreakdownReason::CurvatureSignChange, n));
            }
        }
        None
    }
}

/// Integrates to `config.t_end` or to the first breakdown.
pub fn run_flow(backend: &Backend, config: &FlowConfig, initial: FlowState) -> Result<FlowTrace> {
    config.validate()?;
    let mut state = initial;
    let mut curv = backend.curvature(&state.metrics)?;
    let branch = config.branch.resolve(&curv)?;
    let sign = branch.sign().unwrap_or(1.0);
    let baseline = Baseline::new(&curv);
    let mut samples = alloc::vec![flow_sample(state.t, 0.0, &curv, &backend.weights(&state.metrics), &config.etas)];
    let mut dt_prev: Option<f64> = None;
    let mut steps = 0usize;
    let mut breakdown = None;
    let eps_t = 1e-12 * config.t_end;

    while state.t < config.t_end - eps_t && steps < config.max_steps {
        let mut dt = if config.adaptive {
            let bound = adapt_dt(backend, &state.metrics, &curv, dt_prev, &config.control)?;
            if dt_prev.is_none() {
                bound.min(config.dt_init)
            } else {
                bound
            }
        } else {
            config.dt_init
        };
        dt = dt.min(config.t_end - state.t);
        let k1 = xcf_rhs(&curv, sign);

        let mut retries = 0;
        let next = loop {
            match rk4_metrics(backend, &state.metrics, state.t, dt, sign, Some(k1.clone())) {
                Ok(m) => break m,
                Err(Error::StepProducedInvalidMetric { .. }) if retries < config.retry_budget => {
                    retries += 1;
                    dt *= 0.5;
                }
                Err(e) => return Err(e),
            }
        };
        let t_next = if dt == config.t_end - state.t { config.t_end } else { state.t + dt };
        state = FlowState { metrics: next, t: t_next };
        steps += 1;
        dt_prev = Some(dt);
        curv = backend.curvature(&state.metrics)?;

        breakdown = baseline.check(backend, &config.stop, state.t, &curv);
        let last = breakdown.is_some() || state.t >= config.t_end - eps_t;
        if last || steps.is_multiple_of(config.sample_every) {
            samples.push(flow_sample(state.t, dt, &curv, &backend.weights(&state.metrics), &config.etas));
        }
        if breakdown.is_some() {
            break;
        }
    }
    Ok(FlowTrace { branch, samples, breakdown, steps, final_state: state })
}

/// The three groups of terms in the rate of `P^ij` under `dg/dt = 2h`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpDtTerms {
    /// `nabla_k nabla_l (P^kl P^ij - P^ik P^jl)`, expanded by the product rule.
    pub second_order: Mat3,
    /// `-det P g^ij`
    pub det_term: Mat3,
    /// `-H P^ij`
    pub h_term: Mat3,
}

impl DpDtTerms {
    pub fn combine(&self, det_sign: f64) -> Mat3 {
        tensor2(|i, j| self.second_order[i][j] + det_sign * self.det_term[i][j] + self.h_term[i][j])
    }

    pub fn total(&self) -> Mat3 {
        self.combine(1.0)
    }
}

/// Rate of `P^ij` from `grad_p[k][i][j] = nabla_k P^ij` and
/// `hess_p[k][l][i][j] = nabla_k nabla_l P^ij`.
pub fn analytic_dp_dt(c: &PointCurvature, g_inv: &Sym2, grad_p: &Rank3, hess_p: &Rank4) -> DpDtTerms {
    let p = &c.p_up;
    let second_order = tensor2(|i, j| {
        let mut acc = 0.0;
        for k in 0..3 {
            for l in 0..3 {
                acc += hess_p[k][l][k][l] * p.get(i, j)
                    + grad_p[l][k][l] * grad_p[k][i][j]
                    + grad_p[k][k][l] * grad_p[l][i][j]
                    + p.get(k, l) * hess_p[k][l][i][j];
                acc -= hess_p[k][l][i][k] * p.get(j, l)
                    + grad_p[l][i][k] * grad_p[k][j][l]
                    + grad_p[k][i][k] * grad_p[l][j][l]
                    + p.get(i, k) * hess_p[k][l][j][l];
            }
        }
        acc
    });
    DpDtTerms {
        second_order,
        det_term: tensor2(|i, j| -c.det_p * g_inv.get(i, j)),
        h_term: tensor2(|i, j| -c.h_trace * p.get(i, j)),
    }
}

/// The two groups of terms in the rate of `R_ijkl` under `dg/dt = 2h`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DRiemDtTerms {
    /// `nabla_i nabla_l h_jk + nabla_j nabla_k h_il - nabla_i nabla_k h_jl - nabla_j nabla_l h_ik`
    pub hessian_terms: Rank4,
    /// `g^pq (R_ijkp h_ql + R_ijpl h_qk)`
    pub curvature_terms: Rank4,
}

impl DRiemDtTerms {
    pub fn combine(&self, curvature_sign: f64) -> Rank4 {
        tensor4(|i, j, k, l| self.hessian_terms[i][j][k][l] + curvature_sign * self.curvature_terms[i][j][k][l])
    }

    pub fn total(&self) -> Rank4 {
        self.combine(1.0)
    }
}

/// Rate of `R_ijkl` from `hess_h[a][b][j][k] = nabla_a nabla_b h_jk`.
pub fn analytic_driem_dt(riem: &Riem4, g_inv: &Sym2, h: &Sym2, hess_h: &Rank4) -> DRiemDtTerms {
    let hh = hess_h;
    let r = &riem.0;
    // h^p_l = g^pq h_ql
    let h_mixed = tensor2(|p, l| sum1(|q| g_inv.get(p, q) * h.get(q, l)));
    DRiemDtTerms {
        hessian_terms: tensor4(|i, j, k, l| hh[i][l][j][k] + hh[j][k][i][l] - hh[i][k][j][l] - hh[j][l][i][k]),
        curvature_terms: tensor4(|i, j, k, l| sum1(|p| r[i][j][k][p] * h_mixed[p][l] + r[i][j][p][l] * h_mixed[p][k])),
    }
}

/// Rate of `sqrt(det g)` under `dg/dt = 2h`: `H sqrt(det g)`.
pub fn analytic_dmu_dt(h_trace: f64, sqrt_det_g: f64) -> f64 {
    h_trace * sqrt_det_g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Variance;
    use approx::assert_relative_eq;

    fn hyperbolic() -> Backend {
        Backend::Homogeneous(
            LieAlgebraData::from_brackets(&[((0, 1), [0.0, 1.0, 0.0]), ((0, 2), [0.0, 0.0, 1.0])]).unwrap(),
        )
    }

    fn round_sphere() -> Backend {
        Backend::Homogeneous(
            LieAlgebraData::from_brackets(&[
                ((0, 1), [0.0, 0.0, 2.0]),
                ((1, 2), [2.0, 0.0, 0.0]),
                ((0, 2), [0.0, -2.0, 0.0]),
            ])
            .unwrap(),
        )
    }

    fn id() -> Sym2 {
        Sym2::identity(Variance::Covariant)
    }

    #[test]
    fn space_form_rhs() {
        let c = hyperbolic().curvature(&[id()]).unwrap();
        assert!(xcf_rhs(&c, 1.0)[0].sub(&id().scale(2.0)).max_abs() < 1e-14);
        let c = round_sphere().curvature(&[id()]).unwrap();
        assert!(xcf_rhs(&c, -1.0)[0].sub(&id().scale(-2.0)).max_abs() < 1e-14);
        let flat = Backend::Homogeneous(LieAlgebraData::abelian());
        assert_eq!(xcf_rhs(&flat.curvature(&[id()]).unwrap(), 1.0)[0].max_abs(), 0.0);
    }

    #[test]
    fn one_step_matches_exact_law() {
        let next = step_rk4(&hyperbolic(), &FlowState::homogeneous(id()), 1e-3, 1.0).unwrap();
        let exact = (1.0f64 + 4e-3).sqrt();
        assert!((next.metrics[0].get(0, 0) - exact).abs() < 1e-14);
        let next = step_rk4(&round_sphere(), &FlowState::homogeneous(id()), 1e-3, -1.0).unwrap();
        let exact = (1.0f64 - 4e-3).sqrt();
        assert!((next.metrics[0].get(1, 1) - exact).abs() < 1e-14);
    }

    #[test]
    fn flat_state_is_stationary() {
        let q = Sym2::diag(Variance::Covariant, [1.0, 2.0, 3.0]);
        let next =
            step_rk4(&Backend::Homogeneous(LieAlgebraData::abelian()), &FlowState::homogeneous(q), 0.1, 1.0).unwrap();
        assert_eq!(next.metrics[0], q);
    }

    #[test]
    fn branch_resolution() {
        assert_eq!(Branch::Auto.resolve(&hyperbolic().curvature(&[id()]).unwrap()), Ok(Branch::Negative));
        assert_eq!(Branch::Auto.resolve(&round_sphere().curvature(&[id()]).unwrap()), Ok(Branch::Positive));
        let flat = Backend::Homogeneous(LieAlgebraData::abelian()).curvature(&[id()]).unwrap();
        assert_eq!(Branch::Auto.resolve(&flat), Err(Error::MixedCurvatureSign));
    }

    #[test]
    fn adapt_dt_scaling() {
        let control = StepControl { safety: 0.2, max_growth: 2.0, dt_max: 1.0 };
        let b = hyperbolic();
        let c = b.curvature(&[id()]).unwrap();
        let dt = adapt_dt(&b, &[id()], &c, None, &control).unwrap();
        assert_relative_eq!(dt, 0.1, epsilon = 1e-14);
        let mut doubled = c.clone();
        doubled[0].h = doubled[0].h.scale(2.0);
        assert_relative_eq!(adapt_dt(&b, &[id()], &doubled, None, &control).unwrap(), 0.05, epsilon = 1e-14);
        assert_relative_eq!(adapt_dt(&b, &[id()], &c, Some(0.01), &control).unwrap(), 0.02, epsilon = 1e-14);
        let flat = Backend::Homogeneous(LieAlgebraData::abelian());
        let cf = flat.curvature(&[id()]).unwrap();
        assert_eq!(adapt_dt(&flat, &[id()], &cf, None, &control).unwrap(), 1.0);
    }

    #[test]
    fn hyperbolic_run_reaches_sqrt5() {
        let config = FlowConfig { branch: Branch::Negative, t_end: 1.0, dt_init: 1e-3, ..Default::default() };
        let trace = run_flow(&hyperbolic(), &config, FlowState::homogeneous(id())).unwrap();
        assert!(trace.breakdown.is_none());
        assert_eq!(trace.final_state.t, 1.0);
        let g = trace.final_state.metrics[0];
        assert!((g.get(0, 0) / 5f64.sqrt() - 1.0).abs() < 1e-10);
        assert!(trace.samples.windows(2).all(|w| w[0].t < w[1].t && w[0].volume <= w[1].volume));
    }

    #[test]
    fn sphere_extinguishes_near_quarter() {
        let config =
            FlowConfig { branch: Branch::Positive, t_end: 1.0, adaptive: true, dt_init: 1e-2, ..Default::default() };
        let trace = run_flow(&round_sphere(), &config, FlowState::homogeneous(id())).unwrap();
        let event = trace.breakdown.unwrap();
        assert_eq!(event.reason, BreakdownReason::HExceeded);
        assert!((event.t - 0.25).abs() < 1e-4, "t = {}", event.t);
    }

    #[test]
    fn mixed_sign_auto_branch_fails() {
        let sol = LieAlgebraData::from_brackets(&[((0, 2), [-1.0, 0.0, 0.0]), ((1, 2), [0.0, 1.0, 0.0])]).unwrap();
        let r = run_flow(&Backend::Homogeneous(sol), &FlowConfig::default(), FlowState::homogeneous(id()));
        assert_eq!(r.unwrap_err(), Error::MixedCurvatureSign);
    }

    #[test]
    fn space_form_rates() {
        let b = hyperbolic();
        let c = b.curvature(&[id()]).unwrap()[0];
        let zero3 = [[[0.0; 3]; 3]; 3];
        let zero4 = [[[[0.0; 3]; 3]; 3]; 3];
        let dp = analytic_dp_dt(&c, &id(), &zero3, &zero4).total();
        for i in 0..3 {
            for j in 0..3 {
                assert_relative_eq!(dp[i][j], -4.0 * c.p_up.get(i, j), epsilon = 1e-13);
            }
        }
        assert_eq!(analytic_dmu_dt(3.0, 1.0), 3.0);
    }
}
