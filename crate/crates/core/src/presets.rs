//! Lie algebras and initial inner products for the homogeneous backend.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::flow::{run_flow, Backend, FlowConfig, FlowState, FlowTrace};
use crate::lie::{curvature_homogeneous, validate_jacobi, HomogeneousState, LieAlgebraData};
use crate::par::map_indices;
use crate::tensor::{Sym2, Variance};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "snake_case"))]
pub enum PresetId {
    /// `[e0, e1] = alpha e1`, `[e0, e2] = beta e2`; negative curvature for `alpha, beta > 0`.
    HyperbolicSolvable {
        alpha: f64,
        beta: f64,
    },
    /// Heisenberg: `[e0, e1] = e2`.
    Nil,
    /// `[e_i, e_j] = 2 eps_ijk e_k` with the unit round metric.
    Su2Round,
    /// Same algebra with `q = diag(lambda^2, 1/lambda, 1/lambda)` (unit volume).
    Su2Berger {
        lambda: f64,
    },
    /// `[e2, e0] = e0`, `[e2, e1] = -e1`.
    Sol,
    AbelianFlat,
}

impl PresetId {
    pub const NAMES: [&'static str; 6] =
        ["hyperbolic_solvable", "nil", "su2_round", "su2_berger", "sol", "abelian_flat"];

    pub fn name(&self) -> &'static str {
        match self {
            PresetId::HyperbolicSolvable { .. } => "hyperbolic_solvable",
            PresetId::Nil => "nil",
            PresetId::Su2Round => "su2_round",
            PresetId::Su2Berger { .. } => "su2_berger",
            PresetId::Sol => "sol",
            PresetId::AbelianFlat => "abelian_flat",
        }
    }

    /// Builds from a name and its numeric parameters (`alpha, beta` or `lambda`).
    pub fn from_parts(name: &str, params: &[f64]) -> Result<Self> {
        let arity = |n: usize| {
            if params.len() == n {
                Ok(())
            } else {
                Err(Error::InvalidParameter(alloc::format!("{name} takes {n} parameter(s), got {}", params.len())))
            }
        };
        let id = match name {
            "hyperbolic_solvable" => {
                arity(2)?;
                PresetId::HyperbolicSolvable { alpha: params[0], beta: params[1] }
            }
            "su2_berger" => {
                arity(1)?;
                PresetId::Su2Berger { lambda: params[0] }
            }
            "nil" => PresetId::Nil,
            "su2_round" => PresetId::Su2Round,
            "sol" => PresetId::Sol,
            "abelian_flat" | "abelian" => PresetId::AbelianFlat,
            _ => return Err(Error::InvalidParameter(alloc::format!("unknown preset {name:?}"))),
        };
        if !matches!(id, PresetId::HyperbolicSolvable { .. } | PresetId::Su2Berger { .. }) {
            arity(0)?;
        }
        id.validate()?;
        Ok(id)
    }

    pub fn params(&self) -> Vec<f64> {
        match *self {
            PresetId::HyperbolicSolvable { alpha, beta } => alloc::vec![alpha, beta],
            PresetId::Su2Berger { lambda } => alloc::vec![lambda],
            _ => Vec::new(),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            PresetId::HyperbolicSolvable { alpha, beta }
                if !(alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite()) =>
            {
                Err(Error::InvalidParameter(alloc::format!(
                    "hyperbolic_solvable needs alpha, beta > 0 (got {alpha}, {beta})"
                )))
            }
            PresetId::Su2Berger { lambda } if !(lambda > 0.0 && lambda.is_finite()) => {
                Err(Error::InvalidParameter(alloc::format!("su2_berger needs lambda > 0 (got {lambda})")))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for PresetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())?;
        let params = self.params();
        if !params.is_empty() {
            let joined: Vec<String> = params.iter().map(|p| p.to_string()).collect();
            write!(f, ":{}", joined.join(","))?;
        }
        Ok(())
    }
}

/// Parses `name` or `name:p1,p2`.
impl FromStr for PresetId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, rest) = match s.split_once(':') {
            Some((n, r)) => (n.trim(), Some(r)),
            None => (s.trim(), None),
        };
        let params = match rest {
            None => Vec::new(),
            Some(r) => r
                .split(',')
                .map(|p| {
                    p.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::InvalidParameter(alloc::format!("bad preset parameter {p:?} in {s:?}")))
                })
                .collect::<Result<Vec<_>>>()?,
        };
        Self::from_parts(name, &params)
    }
}

fn su2() -> Result<LieAlgebraData> {
    LieAlgebraData::from_brackets(&[((0, 1), [0.0, 0.0, 2.0]), ((1, 2), [2.0, 0.0, 0.0]), ((0, 2), [0.0, -2.0, 0.0])])
}

pub fn build_preset(id: PresetId) -> Result<(LieAlgebraData, HomogeneousState)> {
    id.validate()?;
    let identity = Sym2::identity(Variance::Covariant);
    let (algebra, q) = match id {
        PresetId::HyperbolicSolvable { alpha, beta } => {
            (LieAlgebraData::from_brackets(&[((0, 1), [0.0, alpha, 0.0]), ((0, 2), [0.0, 0.0, beta])])?, identity)
        }
        PresetId::Nil => (LieAlgebraData::from_brackets(&[((0, 1), [0.0, 0.0, 1.0])])?, identity),
        PresetId::Su2Round => (su2()?, identity),
        PresetId::Su2Berger { lambda } => {
            (su2()?, Sym2::diag(Variance::Covariant, [lambda * lambda, 1.0 / lambda, 1.0 / lambda]))
        }
        PresetId::Sol => {
            (LieAlgebraData::from_brackets(&[((0, 2), [-1.0, 0.0, 0.0]), ((1, 2), [0.0, 1.0, 0.0])])?, identity)
        }
        PresetId::AbelianFlat => (LieAlgebraData::abelian(), identity),
    };
    if !validate_jacobi(&algebra) {
        return Err(Error::JacobiViolation { defect: algebra.jacobi_defect() });
    }
    if let PresetId::HyperbolicSolvable { .. } = id {
        let b = curvature_homogeneous(&algebra, &q)?;
        if !(b.sec[0] > 0.0) {
            return Err(Error::InvalidParameter(alloc::format!("{id} is not negatively curved (sec = {:?})", b.sec)));
        }
    }
    Ok((algebra, HomogeneousState::new(q, 0.0)?))
}

/// One point of a parameter sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRun {
    pub id: PresetId,
    pub trace: Result<FlowTrace>,
}

impl SweepRun {
    pub fn final_pinching(&self) -> Option<f64> {
        self.trace.as_ref().ok()?.samples.last()?.pinching
    }

    pub fn breakdown_t(&self) -> Option<f64> {
        Some(self.trace.as_ref().ok()?.breakdown?.t)
    }
}

/// Runs the flow from every preset; a failing point is recorded and the sweep continues.
pub fn sweep_family(ids: &[PresetId], config: &FlowConfig) -> Vec<SweepRun> {
    map_indices(ids.len(), |n| {
        let id = ids[n];
        let trace = build_preset(id).and_then(|(algebra, state)| {
            run_flow(&Backend::Homogeneous(algebra), config, FlowState::homogeneous(state.q))
        });
        SweepRun { id, trace }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn bundle(id: PresetId) -> crate::curvature::CurvatureBundle {
        let (l, s) = build_preset(id).unwrap();
        curvature_homogeneous(&l, &s.q).unwrap()
    }

    #[test]
    fn parsing_round_trips() {
        for s in ["nil", "su2_round", "sol", "abelian_flat", "hyperbolic_solvable:1,2", "su2_berger:0.9"] {
            let id: PresetId = s.parse().unwrap();
            assert_eq!(id.to_string(), s);
        }
        assert!("hyperbolic_solvable:1".parse::<PresetId>().is_err());
        assert!("hyperbolic_solvable:1,-1".parse::<PresetId>().is_err());
        assert!("nil:3".parse::<PresetId>().is_err());
        assert!("torus".parse::<PresetId>().is_err());
    }

    #[test]
    fn unit_hyperbolic() {
        let b = bundle(PresetId::HyperbolicSolvable { alpha: 1.0, beta: 1.0 });
        for s in b.sec {
            assert_relative_eq!(s, 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn solvable_sectional_eigenvalues() {
        let b = bundle(PresetId::HyperbolicSolvable { alpha: 1.0, beta: 2.0 });
        let expected = [1.0, 2.0, 4.0];
        for (s, e) in b.sec.iter().zip(expected) {
            assert_relative_eq!(*s, e, epsilon = 1e-13);
        }
    }

    #[test]
    fn nil_and_flat() {
        let b = bundle(PresetId::Nil);
        assert_relative_eq!(b.sec[0], -0.25, epsilon = 1e-14);
        assert_relative_eq!(b.sec[2], 0.75, epsilon = 1e-14);
        assert_eq!(bundle(PresetId::AbelianFlat).riem.max_abs(), 0.0);
    }

    #[test]
    fn round_su2_is_unit_sphere() {
        let b = bundle(PresetId::Su2Round);
        for s in b.sec {
            assert_relative_eq!(s, -1.0, epsilon = 1e-14);
        }
        assert_relative_eq!(b.det_p, -1.0, epsilon = 1e-14);
        assert_relative_eq!(b.h_trace, 3.0, epsilon = 1e-14);
    }

    #[test]
    fn berger_has_unit_volume() {
        let (_, s) = build_preset(PresetId::Su2Berger { lambda: 0.8 }).unwrap();
        assert_relative_eq!(s.q.det(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn unimodular_flags() {
        let flags: Vec<bool> = [
            PresetId::Nil,
            PresetId::Su2Round,
            PresetId::Su2Berger { lambda: 1.3 },
            PresetId::Sol,
            PresetId::AbelianFlat,
            PresetId::HyperbolicSolvable { alpha: 1.0, beta: 2.0 },
        ]
        .iter()
        .map(|&id| build_preset(id).unwrap().0.is_unimodular())
        .collect();
        assert_eq!(flags, [true, true, true, true, true, false]);
    }

    #[test]
    fn diagonal_sweep_keeps_pinching_one() {
        let config = FlowConfig { t_end: 0.2, dt_init: 1e-2, ..Default::default() };
        let ids: Vec<PresetId> =
            [0.5, 1.0, 2.0].iter().map(|&a| PresetId::HyperbolicSolvable { alpha: a, beta: a }).collect();
        for run in sweep_family(&ids, &config) {
            let trace = run.trace.as_ref().unwrap();
            for s in &trace.samples {
                assert!((s.pinching.unwrap() - 1.0).abs() < 1e-12);
            }
        }
    }
}
