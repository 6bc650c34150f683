//! Periodic tensor fields on the coordinate 3-torus `[0, 2pi)^3`.
//!
//! Derivatives are central finite differences of order 2, 4 or 6 with periodic
//! wraparound. Nodes are stored row-major with `x` slowest:
//! `index = (i * N + j) * N + k`.

use alloc::vec::Vec;
use core::f64::consts::PI;

#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::curvature::{christoffels, riemann_from_connection, CurvatureBundle, MetricJet2, PointCurvature};
use crate::par::{map_indices, try_map_indices};
use crate::tensor::{
    connection_terms, metric_inverse, rank3_from_flat, rank4_from_flat, sum1, tensor2, Mat3, Rank3, Rank4, Sym2,
    Variance,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GridSpec {
    n: usize,
    order: usize,
}

impl GridSpec {
    /// `order` must be 2, 4 or 6 and `n >= 2 * order + 1`.
    pub fn new(n: usize, order: usize) -> Result<Self> {
        if !matches!(order, 2 | 4 | 6) {
            return Err(Error::InvalidParameter(alloc::format!("stencil order {order} (expected 2, 4 or 6)")));
        }
        if n < 2 * order + 1 {
            return Err(Error::InvalidParameter(alloc::format!("N = {n} is below 2 * order + 1 = {}", 2 * order + 1)));
        }
        Ok(Self { n, order })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn spacing(&self) -> f64 {
        2.0 * PI / self.n as f64
    }

    pub fn cell_volume(&self) -> f64 {
        let d = self.spacing();
        d * d * d
    }

    pub fn len(&self) -> usize {
        self.n * self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n + j) * self.n + k
    }

    pub fn coords(&self, idx: usize) -> [usize; 3] {
        [idx / (self.n * self.n), (idx / self.n) % self.n, idx % self.n]
    }

    pub fn position(&self, idx: usize) -> [f64; 3] {
        self.coords(idx).map(|c| c as f64 * self.spacing())
    }

    #[inline]
    fn shift(&self, idx: usize, axis: usize, offset: isize) -> usize {
        let mut c = self.coords(idx);
        let n = self.n as isize;
        c[axis] = (c[axis] as isize + offset).rem_euclid(n) as usize;
        self.index(c[0], c[1], c[2])
    }

    /// Nodes of this grid that coincide with the nodes of an `coarse_n`-grid.
    pub fn coarse_nodes(&self, coarse_n: usize) -> Result<Vec<usize>> {
        if coarse_n == 0 || !self.n.is_multiple_of(coarse_n) {
            return Err(Error::ShapeMismatch(alloc::format!("{} is not a multiple of {coarse_n}", self.n)));
        }
        let stride = self.n / coarse_n;
        let mut out = Vec::with_capacity(coarse_n * coarse_n * coarse_n);
        for i in 0..coarse_n {
            for j in 0..coarse_n {
                for k in 0..coarse_n {
                    out.push(self.index(i * stride, j * stride, k * stride));
                }
            }
        }
        Ok(out)
    }

    fn first_coefficients(&self) -> &'static [f64] {
        match self.order {
            2 => &[0.5],
            4 => &[2.0 / 3.0, -1.0 / 12.0],
            _ => &[0.75, -3.0 / 20.0, 1.0 / 60.0],
        }
    }

    fn second_coefficients(&self) -> (f64, &'static [f64]) {
        match self.order {
            2 => (-2.0, &[1.0]),
            4 => (-2.5, &[4.0 / 3.0, -1.0 / 12.0]),
            _ => (-49.0 / 18.0, &[1.5, -3.0 / 20.0, 1.0 / 90.0]),
        }
    }

    /// Central first derivative along `axis` of a field with `comps` values per node.
    pub fn partial(&self, data: &[f64], comps: usize, node: usize, axis: usize, out: &mut [f64]) {
        let inv = 1.0 / self.spacing();
        out[..comps].iter_mut().for_each(|v| *v = 0.0);
        for (m, &c) in self.first_coefficients().iter().enumerate() {
            let off = (m + 1) as isize;
            let (p, q) = (self.shift(node, axis, off) * comps, self.shift(node, axis, -off) * comps);
            for n in 0..comps {
                out[n] += c * (data[p + n] - data[q + n]);
            }
        }
        out[..comps].iter_mut().for_each(|v| *v *= inv);
    }

    /// Central pure second derivative along `axis`.
    pub fn partial2(&self, data: &[f64], comps: usize, node: usize, axis: usize, out: &mut [f64]) {
        let inv = 1.0 / (self.spacing() * self.spacing());
        // The centre weight is -2 * sum(cs), so constants give exactly zero.
        let (_, cs) = self.second_coefficients();
        let base = node * comps;
        out[..comps].iter_mut().for_each(|v| *v = 0.0);
        for (m, &c) in cs.iter().enumerate() {
            let off = (m + 1) as isize;
            let (p, q) = (self.shift(node, axis, off) * comps, self.shift(node, axis, -off) * comps);
            for n in 0..comps {
                let x = data[base + n];
                out[n] += c * ((data[p + n] - x) + (data[q + n] - x));
            }
        }
        out[..comps].iter_mut().for_each(|v| *v *= inv);
    }

    /// Second derivative `d_a d_b`: the pure stencil when `a == b`, nested first
    /// derivatives otherwise.
    pub fn second_partial(&self, data: &[f64], comps: usize, node: usize, a: usize, b: usize, out: &mut [f64]) {
        if a == b {
            return self.partial2(data, comps, node, a, out);
        }
        let inv = 1.0 / self.spacing();
        let mut tmp_p = alloc::vec![0.0; comps];
        let mut tmp_q = alloc::vec![0.0; comps];
        out[..comps].iter_mut().for_each(|v| *v = 0.0);
        for (m, &c) in self.first_coefficients().iter().enumerate() {
            let off = (m + 1) as isize;
            self.partial(data, comps, self.shift(node, a, off), b, &mut tmp_p);
            self.partial(data, comps, self.shift(node, a, -off), b, &mut tmp_q);
            for n in 0..comps {
                out[n] += c * (tmp_p[n] - tmp_q[n]);
            }
        }
        out[..comps].iter_mut().for_each(|v| *v *= inv);
    }
}

/// Neumaier-compensated sum in a fixed order.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarGrid {
    spec: GridSpec,
    data: Vec<f64>,
}

impl ScalarGrid {
    pub fn new(spec: GridSpec, data: Vec<f64>) -> Result<Self> {
        if data.len() != spec.len() {
            return Err(Error::ShapeMismatch(alloc::format!("{} values for {} nodes", data.len(), spec.len())));
        }
        Ok(Self { spec, data })
    }

    pub fn from_fn(spec: GridSpec, f: impl Fn([f64; 3]) -> f64) -> Self {
        let data = (0..spec.len()).map(|n| f(spec.position(n))).collect();
        Self { spec, data }
    }

    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }
}

/// Dense tensor field with `3^rank` components per node, row-major in the slots.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorGrid {
    spec: GridSpec,
    variances: Vec<Variance>,
    data: Vec<f64>,
}

impl TensorGrid {
    pub fn new(spec: GridSpec, variances: Vec<Variance>, data: Vec<f64>) -> Result<Self> {
        let comps = 3usize.pow(variances.len() as u32);
        if data.len() != comps * spec.len() {
            return Err(Error::ShapeMismatch(alloc::format!(
                "{} values for {} nodes x {comps} components",
                data.len(),
                spec.len()
            )));
        }
        Ok(Self { spec, variances, data })
    }

    pub fn from_sym2(spec: GridSpec, values: &[Sym2]) -> Result<Self> {
        let variance = values.first().map(|s| s.variance()).unwrap_or(Variance::Covariant);
        let data = values.iter().flat_map(|s| crate::tensor::flatten_mat(&s.to_mat())).collect();
        Self::new(spec, alloc::vec![variance; 2], data)
    }

    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    pub fn rank(&self) -> usize {
        self.variances.len()
    }

    pub fn variances(&self) -> &[Variance] {
        &self.variances
    }

    pub fn comps(&self) -> usize {
        3usize.pow(self.rank() as u32)
    }

    pub fn at(&self, node: usize) -> &[f64] {
        let c = self.comps();
        &self.data[node * c..(node + 1) * c]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Coordinate partial derivatives at one node, derivative index first.
    pub fn partials_at(&self, node: usize) -> Vec<f64> {
        let c = self.comps();
        let mut out = alloc::vec![0.0; 3 * c];
        for axis in 0..3 {
            self.spec.partial(&self.data, c, node, axis, &mut out[axis * c..(axis + 1) * c]);
        }
        out
    }
}

/// A metric sampled on the grid; positive definite at every node.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricGrid {
    spec: GridSpec,
    g: Vec<Sym2>,
}

impl MetricGrid {
    pub fn new(spec: GridSpec, g: Vec<Sym2>) -> Result<Self> {
        if g.len() != spec.len() {
            return Err(Error::ShapeMismatch(alloc::format!("{} metrics for {} nodes", g.len(), spec.len())));
        }
        if g.iter().any(|m| m.variance() != Variance::Covariant || !m.is_positive_definite()) {
            return Err(Error::NonPositiveMetric);
        }
        Ok(Self { spec, g })
    }

    pub fn from_fn(spec: GridSpec, f: impl Fn([f64; 3]) -> Sym2) -> Result<Self> {
        Self::new(spec, (0..spec.len()).map(|n| f(spec.position(n))).collect())
    }

    pub fn constant(spec: GridSpec, g: Sym2) -> Result<Self> {
        Self::new(spec, alloc::vec![g; spec.len()])
    }

    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    pub fn metrics(&self) -> &[Sym2] {
        &self.g
    }

    pub fn into_metrics(self) -> Vec<Sym2> {
        self.g
    }

    fn flat(&self) -> Vec<f64> {
        self.g.iter().flat_map(|s| s.components()).collect()
    }

    /// Cyclic shift of every node by `offset` grid steps.
    pub fn translated(&self, offset: [isize; 3]) -> Self {
        let spec = self.spec;
        let g = (0..spec.len())
            .map(|idx| {
                let mut src = idx;
                for (axis, off) in offset.iter().enumerate() {
                    src = spec.shift(src, axis, -off);
                }
                self.g[src]
            })
            .collect();
        Self { spec, g }
    }

    pub fn sqrt_det(&self) -> ScalarGrid {
        ScalarGrid { spec: self.spec, data: self.g.iter().map(|m| m.det().sqrt()).collect() }
    }
}

fn sym2_from_six(variance: Variance, v: &[f64]) -> Sym2 {
    Sym2::from_components(variance, [v[0], v[1], v[2], v[3], v[4], v[5]])
}

fn jet_from_flat(spec: &GridSpec, flat: &[f64], g: Sym2, node: usize) -> MetricJet2 {
    let mut buf = [0.0; 6];
    let dg = core::array::from_fn(|k| {
        spec.partial(flat, 6, node, k, &mut buf);
        sym2_from_six(Variance::Covariant, &buf)
    });
    let mut ddg = [[Sym2::zeros(Variance::Covariant); 3]; 3];
    for k in 0..3 {
        for l in k..3 {
            spec.second_partial(flat, 6, node, k, l, &mut buf);
            ddg[k][l] = sym2_from_six(Variance::Covariant, &buf);
            ddg[l][k] = ddg[k][l];
        }
    }
    MetricJet2 { g, dg, ddg }
}

/// Finite-difference 2-jets at every node.
pub fn jet_at_nodes(m: &MetricGrid) -> Vec<MetricJet2> {
    let flat = m.flat();
    let spec = m.spec;
    map_indices(spec.len(), |node| jet_from_flat(&spec, &flat, m.g[node], node))
}

impl MetricGrid {
    pub fn jet_at(&self, node: usize) -> MetricJet2 {
        jet_from_flat(&self.spec, &self.flat(), self.g[node], node)
    }
}

/// Metric, inverse, volume density and Christoffel field of a [`MetricGrid`].
#[derive(Debug, Clone)]
pub struct GridGeometry {
    metric: MetricGrid,
    g_inv: Vec<Sym2>,
    sqrt_det: Vec<f64>,
    /// `Gamma^k_ij` per node as `[k][i][j]`.
    gamma: TensorGrid,
}

impl GridGeometry {
    pub fn new(metric: MetricGrid) -> Result<Self> {
        let spec = metric.spec;
        let flat = metric.flat();
        let g_inv = try_map_indices(spec.len(), |n| metric_inverse(&metric.g[n]))?;
        let sqrt_det = metric.g.iter().map(|m| m.det().sqrt()).collect();
        let per_node: Vec<[f64; 27]> = map_indices(spec.len(), |node| {
            let mut buf = [0.0; 6];
            let dg = core::array::from_fn(|k| {
                spec.partial(&flat, 6, node, k, &mut buf);
                sym2_from_six(Variance::Covariant, &buf)
            });
            crate::tensor::flatten_rank3(&christoffels(&g_inv[node], &dg))
        });
        let data = per_node.into_iter().flatten().collect();
        let vars = alloc::vec![Variance::Contravariant, Variance::Covariant, Variance::Covariant];
        let gamma = TensorGrid::new(spec, vars, data)?;
        Ok(Self { metric, g_inv, sqrt_det, gamma })
    }

    pub fn spec(&self) -> GridSpec {
        self.metric.spec
    }

    pub fn metric(&self) -> &MetricGrid {
        &self.metric
    }

    pub fn g(&self, node: usize) -> &Sym2 {
        &self.metric.g[node]
    }

    pub fn g_inv(&self, node: usize) -> &Sym2 {
        &self.g_inv[node]
    }

    pub fn sqrt_det(&self, node: usize) -> f64 {
        self.sqrt_det[node]
    }

    /// Quadrature weights `sqrt(det g) dx^3`.
    pub fn weights(&self) -> Vec<f64> {
        let dv = self.spec().cell_volume();
        self.sqrt_det.iter().map(|s| s * dv).collect()
    }

    pub fn gamma_at(&self, node: usize) -> Rank3 {
        rank3_from_flat(self.gamma.at(node))
    }

    /// Finite-difference `d_m Gamma^k_ij` as `[m][k][i][j]`.
    pub fn dgamma_at(&self, node: usize) -> Rank4 {
        rank4_from_flat(&self.gamma.partials_at(node))
    }

    pub fn bundle_at(&self, node: usize) -> Result<CurvatureBundle> {
        let g = self.g(node);
        let riem = riemann_from_connection(g, &self.gamma_at(node), &self.dgamma_at(node));
        CurvatureBundle::from_riemann(g, riem)
    }

    pub fn curvature(&self) -> Result<Vec<PointCurvature>> {
        try_map_indices(self.spec().len(), |node| self.bundle_at(node).map(|b| PointCurvature::from(&b)))
    }

    /// `nabla_d T` at one node (derivative index first).
    pub fn covariant_derivative_at(&self, t: &TensorGrid, node: usize) -> Vec<f64> {
        let mut out = t.partials_at(node);
        let corr = connection_terms(&self.gamma_at(node), t.at(node), t.variances());
        out.iter_mut().zip(corr).for_each(|(o, c)| *o += c);
        out
    }

    /// Hessian `nabla_i nabla_j f = d_i d_j f - Gamma^k_ij d_k f` of a scalar field.
    pub fn scalar_hessian_at(&self, f: &ScalarGrid, node: usize) -> Mat3 {
        let spec = self.spec();
        let mut df = [0.0; 3];
        for (axis, d) in df.iter_mut().enumerate() {
            let mut v = [0.0];
            spec.partial(&f.data, 1, node, axis, &mut v);
            *d = v[0];
        }
        let gamma = self.gamma_at(node);
        tensor2(|i, j| {
            let mut v = [0.0];
            spec.second_partial(&f.data, 1, node, i, j, &mut v);
            v[0] - sum1(|k| gamma[k][i][j] * df[k])
        })
    }

    pub fn scalar_gradient_at(&self, f: &ScalarGrid, node: usize) -> [f64; 3] {
        core::array::from_fn(|axis| {
            let mut v = [0.0];
            self.spec().partial(&f.data, 1, node, axis, &mut v);
            v[0]
        })
    }
}

/// `nabla T` as a field of one higher rank with the derivative index first.
pub fn covariant_derivative(t: &TensorGrid, geom: &GridGeometry) -> Result<TensorGrid> {
    if t.spec != geom.spec() {
        return Err(Error::ShapeMismatch("tensor and metric grids differ".into()));
    }
    let per_node = map_indices(t.spec.len(), |node| geom.covariant_derivative_at(t, node));
    let mut variances = alloc::vec![Variance::Covariant];
    variances.extend_from_slice(&t.variances);
    TensorGrid::new(t.spec, variances, per_node.into_iter().flatten().collect())
}

/// `sum f sqrt(det g) dx^3` with compensated summation in node order.
pub fn integrate(f: &ScalarGrid, m: &MetricGrid) -> Result<f64> {
    if f.spec != m.spec {
        return Err(Error::ShapeMismatch("scalar and metric grids differ".into()));
    }
    let dv = m.spec.cell_volume();
    Ok(compensated_sum(f.data.iter().zip(&m.g).map(|(v, g)| v * g.det().sqrt() * dv)))
}

/// `|integral of nabla_i W^i dmu|` for a contravariant vector field.
pub fn divergence_residual(w: &TensorGrid, geom: &GridGeometry) -> Result<f64> {
    if w.rank() != 1 || w.variances[0] != Variance::Contravariant {
        return Err(Error::ShapeMismatch("expected a contravariant vector field".into()));
    }
    let grad = covariant_derivative(w, geom)?;
    let dv = geom.spec().cell_volume();
    let total = compensated_sum((0..geom.spec().len()).map(|n| {
        let d = grad.at(n);
        (d[0] + d[4] + d[8]) * geom.sqrt_det(n) * dv
    }));
    Ok(total.abs())
}

#[derive(Debug, Clone, Copy)]
struct Mode {
    k: [f64; 3],
    phase: f64,
    amp: [f64; 6],
}

fn draw_mode(rng: &mut ChaCha8Rng, max_wavenumber: i32) -> Mode {
    let k = loop {
        let k: [i32; 3] = core::array::from_fn(|_| rng.gen_range(-max_wavenumber..=max_wavenumber));
        if k != [0, 0, 0] {
            break k;
        }
    };
    Mode {
        k: k.map(|v| v as f64),
        phase: rng.gen_range(0.0..2.0 * PI),
        amp: core::array::from_fn(|_| rng.gen_range(-1.0..1.0)),
    }
}

fn mode_value(mode: &Mode, x: [f64; 3], use_sin: bool) -> f64 {
    let arg = sum1(|i| mode.k[i] * x[i]) + mode.phase;
    if use_sin {
        arg.sin()
    } else {
        arg.cos()
    }
}

/// Seeded smooth metric `g = delta + eps/sqrt(M) sum_m A_m cos(k_m . x + phi_m)`
/// with integer wave vectors `|k_i| <= max_wavenumber`.
///
/// The field is defined in the continuum, so grids of different resolution
/// sample the same metric. Draws whose perturbation bound reaches 1 are
/// rejected, which guarantees positive definiteness at every point.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SyntheticMetric {
    pub eps: f64,
    pub seed: u64,
    pub modes: usize,
    pub max_wavenumber: i32,
}

impl Default for SyntheticMetric {
    fn default() -> Self {
        Self { eps: 0.05, seed: 0, modes: 6, max_wavenumber: 1 }
    }
}

impl SyntheticMetric {
    fn draw(&self) -> Result<Vec<Mode>> {
        if self.modes == 0 || self.max_wavenumber < 1 || !(self.eps >= 0.0) {
            return Err(Error::InvalidParameter("synthetic metric needs modes >= 1, wavenumber >= 1, eps >= 0".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let scale = self.eps / (self.modes as f64).sqrt();
        for _ in 0..1000 {
            let modes: Vec<Mode> = (0..self.modes).map(|_| draw_mode(&mut rng, self.max_wavenumber)).collect();
            // Frobenius norm bounds the spectral norm of each symmetric amplitude.
            let bound: f64 = modes
                .iter()
                .map(|m| {
                    let a = m.amp;
                    (a[0] * a[0] + a[3] * a[3] + a[5] * a[5] + 2.0 * (a[1] * a[1] + a[2] * a[2] + a[4] * a[4])).sqrt()
                })
                .sum::<f64>()
                * scale;
            if bound < 0.9 {
                return Ok(modes);
            }
        }
        Err(Error::InvalidParameter("eps too large: no positive-definite draw".into()))
    }

    fn evaluate_with(&self, modes: &[Mode], x: [f64; 3]) -> Sym2 {
        let scale = self.eps / (self.modes as f64).sqrt();
        let mut c = [1.0, 0.0, 0.0, 1.0, 0.0, 1.0];
        for m in modes {
            let w = scale * mode_value(m, x, false);
            for (n, a) in m.amp.iter().enumerate() {
                c[n] += w * a;
            }
        }
        Sym2::from_components(Variance::Covariant, c)
    }

    pub fn evaluate(&self, x: [f64; 3]) -> Result<Sym2> {
        Ok(self.evaluate_with(&self.draw()?, x))
    }

    pub fn generate(&self, spec: GridSpec) -> Result<MetricGrid> {
        let modes = self.draw()?;
        MetricGrid::from_fn(spec, |x| self.evaluate_with(&modes, x))
    }
}

/// Seeded smooth contravariant vector field `W^i = sum_m a_m^i sin(k_m . x + phi_m)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticVectorField {
    pub seed: u64,
    pub modes: usize,
    pub max_wavenumber: i32,
}

impl SyntheticVectorField {
    pub fn generate(&self, spec: GridSpec) -> Result<TensorGrid> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let modes: Vec<Mode> = (0..self.modes).map(|_| draw_mode(&mut rng, self.max_wavenumber.max(1))).collect();
        let data = (0..spec.len())
            .flat_map(|n| {
                let x = spec.position(n);
                let mut w = [0.0; 3];
                for m in &modes {
                    let v = mode_value(m, x, true);
                    for (i, wi) in w.iter_mut().enumerate() {
                        *wi += m.amp[i] * v;
                    }
                }
                w
            })
            .collect();
        TensorGrid::new(spec, alloc::vec![Variance::Contravariant], data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn spec(n: usize) -> GridSpec {
        GridSpec::new(n, 4).unwrap()
    }

    #[test]
    fn spec_validation() {
        assert!(GridSpec::new(8, 4).is_err());
        assert!(GridSpec::new(9, 4).is_ok());
        assert!(GridSpec::new(16, 3).is_err());
    }

    #[test]
    fn constant_metric_has_zero_jet() {
        let g = Sym2::covariant(&[[2.0, 0.3, 0.1], [0.3, 1.5, -0.2], [0.1, -0.2, 0.8]]);
        let m = MetricGrid::constant(spec(10), g).unwrap();
        for jet in jet_at_nodes(&m) {
            assert!(jet.dg.iter().all(|d| d.max_abs() == 0.0));
            assert!(jet.ddg.iter().flatten().all(|d| d.max_abs() == 0.0));
        }
    }

    #[test]
    fn first_derivative_of_sine_mode() {
        let s = spec(32);
        let m =
            MetricGrid::from_fn(s, |x| Sym2::diag(Variance::Covariant, [1.0 + 0.1 * x[0].sin(), 1.0, 1.0])).unwrap();
        let jet = m.jet_at(0);
        let h = s.spacing();
        assert!((jet.dg[0].get(0, 0) - 0.1).abs() < 0.1 * h.powi(4));
    }

    #[test]
    fn jet_error_converges_at_stencil_order() {
        let err = |n: usize| {
            let s = spec(n);
            let m = MetricGrid::from_fn(s, |x| {
                Sym2::diag(Variance::Covariant, [1.0 + 0.1 * (x[0] + 2.0 * x[1]).sin(), 1.0, 1.0])
            })
            .unwrap();
            let jets = jet_at_nodes(&m);
            let mut worst: f64 = 0.0;
            for (node, jet) in jets.iter().enumerate() {
                let x = s.position(node);
                let c = 0.1 * (x[0] + 2.0 * x[1]).cos();
                let sn = -0.1 * (x[0] + 2.0 * x[1]).sin();
                worst = worst
                    .max((jet.dg[0].get(0, 0) - c).abs())
                    .max((jet.dg[1].get(0, 0) - 2.0 * c).abs())
                    .max((jet.ddg[0][1].get(0, 0) - 2.0 * sn).abs())
                    .max((jet.ddg[1][1].get(0, 0) - 4.0 * sn).abs());
            }
            worst
        };
        let ratio = err(16) / err(32);
        assert!(ratio > 14.0 && ratio < 18.0, "ratio {ratio}");
    }

    #[test]
    fn mixed_second_derivatives_commute() {
        let m = SyntheticMetric::default().generate(spec(12)).unwrap();
        for jet in jet_at_nodes(&m).iter().take(50) {
            for k in 0..3 {
                for l in 0..3 {
                    assert_eq!(jet.ddg[k][l], jet.ddg[l][k]);
                }
            }
        }
    }

    #[test]
    fn integrate_examples() {
        let s = spec(16);
        let flat = MetricGrid::constant(s, Sym2::identity(Variance::Covariant)).unwrap();
        let one = ScalarGrid::from_fn(s, |_| 1.0);
        assert_relative_eq!(integrate(&one, &flat).unwrap(), (2.0 * PI).powi(3), max_relative = 1e-14);

        let sin = ScalarGrid::from_fn(s, |x| x[0].sin());
        let g =
            MetricGrid::from_fn(s, |x| Sym2::diag(Variance::Covariant, [1.0 + 0.2 * x[1].cos(), 1.0, 1.0])).unwrap();
        assert!(integrate(&sin, &g).unwrap().abs() < 1e-12);

        let sin2 = ScalarGrid::from_fn(s, |x| x[0].sin().powi(2));
        assert_relative_eq!(integrate(&sin2, &flat).unwrap(), (2.0 * PI).powi(3) / 2.0, max_relative = 1e-14);
    }

    #[test]
    fn integrate_is_translation_invariant() {
        let s = spec(12);
        let m = SyntheticMetric { seed: 3, ..Default::default() }.generate(s).unwrap();
        let f = ScalarGrid::from_fn(s, |x| 1.0 + (x[0] - x[2]).cos() * x[1].sin());
        let shift = [3isize, -2, 5];
        let mt = m.translated(shift);
        let ft = ScalarGrid::from_fn(s, |x| {
            let d = s.spacing();
            let y = [x[0] - 3.0 * d, x[1] + 2.0 * d, x[2] - 5.0 * d];
            1.0 + (y[0] - y[2]).cos() * y[1].sin()
        });
        let a = integrate(&f, &m).unwrap();
        let b = integrate(&ft, &mt).unwrap();
        assert!(((a - b) / a).abs() < 1e-12);
    }

    #[test]
    fn divergence_of_single_mode_on_flat_metric_cancels() {
        let s = spec(16);
        let geom = GridGeometry::new(MetricGrid::constant(s, Sym2::identity(Variance::Covariant)).unwrap()).unwrap();
        let zero = TensorGrid::new(s, alloc::vec![Variance::Contravariant], alloc::vec![0.0; 3 * s.len()]).unwrap();
        assert_eq!(divergence_residual(&zero, &geom).unwrap(), 0.0);
        let w = SyntheticVectorField { seed: 1, modes: 1, max_wavenumber: 2 }.generate(s).unwrap();
        assert!(divergence_residual(&w, &geom).unwrap() < 1e-12);
    }

    #[test]
    fn metric_is_parallel_on_the_grid() {
        // Christoffels and the metric partials share a stencil, so nabla g cancels to rounding.
        let m = SyntheticMetric::default().generate(spec(16)).unwrap();
        let geom = GridGeometry::new(m.clone()).unwrap();
        let g = TensorGrid::from_sym2(m.spec(), m.metrics()).unwrap();
        let dg = covariant_derivative(&g, &geom).unwrap();
        assert!(crate::tensor::max_abs(dg.data().iter().copied()) < 1e-13);
    }

    #[test]
    fn vector_gradient_converges_at_stencil_order() {
        // Flat metric: nabla_d W^i = d_d W^i = cos(x_d) delta^i_d for W^i = sin(x_i).
        let err = |n: usize| {
            let s = spec(n);
            let geom =
                GridGeometry::new(MetricGrid::constant(s, Sym2::identity(Variance::Covariant)).unwrap()).unwrap();
            let data = (0..s.len()).flat_map(|n| s.position(n).map(f64::sin)).collect();
            let w = TensorGrid::new(s, alloc::vec![Variance::Contravariant], data).unwrap();
            let dw = covariant_derivative(&w, &geom).unwrap();
            let mut worst: f64 = 0.0;
            for node in 0..s.len() {
                let x = s.position(node);
                let d = dw.at(node);
                for a in 0..3 {
                    for i in 0..3 {
                        let exact = if a == i { x[a].cos() } else { 0.0 };
                        worst = worst.max((d[3 * a + i] - exact).abs());
                    }
                }
            }
            worst
        };
        let order = (err(16) / err(32)).log2();
        assert!(order > 3.8, "order {order}");
    }

    #[test]
    fn synthetic_metric_is_deterministic_and_resolution_independent() {
        let gen = SyntheticMetric { seed: 9, ..Default::default() };
        let a = gen.generate(spec(16)).unwrap();
        let b = gen.generate(spec(32)).unwrap();
        let fine = b.spec().coarse_nodes(16).unwrap();
        for (coarse, &f) in fine.iter().enumerate() {
            assert!(a.metrics()[coarse].sub(&b.metrics()[f]).max_abs() < 1e-15);
        }
        assert_eq!(gen.generate(spec(16)).unwrap(), a);
    }
}
