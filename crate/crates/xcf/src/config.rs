//! The JSON run configuration.
//!
//! One document with a section per concern. Every section has defaults, so
//! `{}` is a valid config; unknown keys anywhere are rejected.
//!
//! ```json
//! {
//!   "backend": "homogeneous",
//!   "preset": "hyperbolic_solvable:1,1",
//!   "grid": { "n": 16, "order": 4, "eps": 0.05, "seed": 0, "modes": 6, "max_wavenumber": 1 },
//!   "flow": { "t_end": 1.0, "dt_init": 0.001, "branch": "auto", "adaptive": false },
//!   "verify": { "grid_n": [16, 32, 64], "only": [] },
//!   "sweep": { "family": "hyperbolic_solvable", "axes": [[0.5, 1, 2], [0.5, 1, 2]], "points": [] },
//!   "output": { "dir": "xcf-out", "report_format": "json", "snapshot": true }
//! }
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use xcf_core::flow::FlowConfig;
use xcf_core::grid::{GridSpec, SyntheticMetric};
use xcf_core::presets::PresetId;
use xcf_core::verify::SuiteConfig;

use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Homogeneous,
    Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub n: usize,
    pub order: usize,
    pub eps: f64,
    pub seed: u64,
    pub modes: usize,
    pub max_wavenumber: i32,
    /// Start from a saved snapshot instead of the synthetic metric.
    pub snapshot: Option<PathBuf>,
}

impl Default for GridConfig {
    fn default() -> Self {
        let s = SyntheticMetric::default();
        Self {
            n: 16,
            order: 4,
            eps: s.eps,
            seed: s.seed,
            modes: s.modes,
            max_wavenumber: s.max_wavenumber,
            snapshot: None,
        }
    }
}

impl GridConfig {
    pub fn spec(&self) -> Result<GridSpec, Error> {
        GridSpec::new(self.n, self.order).map_err(|e| Error::Config(format!("grid: {e}")))
    }

    pub fn synthetic(&self) -> SyntheticMetric {
        SyntheticMetric { eps: self.eps, seed: self.seed, modes: self.modes, max_wavenumber: self.max_wavenumber }
    }
}

/// Presets of one family over a parameter grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub family: String,
    /// One list of values per preset parameter; the sweep runs their cartesian product.
    pub axes: Vec<Vec<f64>>,
    /// Explicit parameter tuples, used instead of `axes` when non-empty.
    pub points: Vec<Vec<f64>>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { family: "hyperbolic_solvable".into(), axes: Vec::new(), points: Vec::new() }
    }
}

impl SweepConfig {
    pub fn presets(&self) -> Result<Vec<PresetId>, Error> {
        if !self.points.is_empty() && !self.axes.is_empty() {
            return Err(Error::Config("sweep: give either axes or points, not both".into()));
        }
        let tuples = if self.points.is_empty() { cartesian(&self.axes) } else { self.points.clone() };
        if tuples.is_empty() {
            return Err(Error::Config("sweep: empty parameter grid".into()));
        }
        tuples
            .iter()
            .map(|p| PresetId::from_parts(&self.family, p).map_err(|e| Error::Config(format!("sweep: {e}"))))
            .collect()
    }
}

fn cartesian(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    if axes.is_empty() {
        return Vec::new();
    }
    axes.iter().fold(vec![Vec::new()], |acc, axis| {
        acc.iter()
            .flat_map(|prefix| {
                axis.iter().map(move |&v| {
                    let mut p = prefix.clone();
                    p.push(v);
                    p
                })
            })
            .collect()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Text,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub report_format: ReportFormat,
    /// Write the final grid metric as a binary and a CSV snapshot.
    pub snapshot: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("xcf-out"), report_format: ReportFormat::Json, snapshot: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub backend: BackendKind,
    pub preset: String,
    pub grid: GridConfig,
    pub flow: FlowConfig,
    pub verify: SuiteConfig,
    pub sweep: SweepConfig,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            backend: BackendKind::Homogeneous,
            preset: "hyperbolic_solvable:1,1".into(),
            grid: GridConfig::default(),
            flow: FlowConfig::default(),
            verify: SuiteConfig::default(),
            sweep: SweepConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parses a config document. A trace or report written by this program is
    /// also accepted: its embedded `header.config` is used.
    pub fn from_json(text: &str) -> Result<Self, Error> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        let value = match value.get("header").and_then(|h| h.get("config")) {
            Some(inner) => inner.clone(),
            None => value,
        };
        serde_json::from_value(value).map_err(|e| Error::Config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn preset_id(&self) -> Result<PresetId, Error> {
        self.preset.parse().map_err(|e| Error::Config(format!("preset: {e}")))
    }

    /// Checks everything that can be checked without running.
    pub fn validate(&self) -> Result<(), Error> {
        self.flow.validate().map_err(|e| Error::Config(format!("flow: {e}")))?;
        self.verify.validate().map_err(|e| Error::Config(format!("verify: {e}")))?;
        match self.backend {
            BackendKind::Homogeneous => {
                self.preset_id()?;
            }
            BackendKind::Grid => {
                self.grid.spec()?;
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding, as lowercase hex.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_default() {
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = RunConfig::from_json(r#"{"flow": {"t_ned": 1}}"#).unwrap_err();
        assert!(err.to_string().contains("t_ned"), "{err}");
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.flow.t_end = 2.0;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn sweep_grids() {
        let mut s = SweepConfig { axes: vec![vec![1.0, 2.0, 3.0], vec![0.5, 1.0, 1.5]], ..Default::default() };
        assert_eq!(s.presets().unwrap().len(), 9);
        s.axes = vec![vec![1.0], vec![]];
        assert!(s.presets().is_err());
        s.axes.clear();
        assert!(s.presets().is_err());
        s.points = vec![vec![1.0, 1.0], vec![2.0, 2.0]];
        assert_eq!(s.presets().unwrap()[1], PresetId::HyperbolicSolvable { alpha: 2.0, beta: 2.0 });
    }

    #[test]
    fn embedded_config_is_extracted() {
        let mut c = RunConfig::default();
        c.grid.seed = 11;
        let wrapped = serde_json::json!({ "header": { "version": "x", "config": c }, "samples": [] });
        assert_eq!(RunConfig::from_json(&wrapped.to_string()).unwrap(), c);
    }
}
