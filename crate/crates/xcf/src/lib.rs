//! Driver for `xcf-core`: JSON configs, trace/report/snapshot files and the
//! `run`, `verify` and `sweep` commands behind the `xcf` binary.

pub mod config;
pub mod io;

use std::path::{Path, PathBuf};

use xcf_core::flow::{run_flow, Backend, FlowState, FlowTrace};
use xcf_core::presets::{build_preset, sweep_family, SweepRun};
use xcf_core::verify::{run_suite, VerificationReport};

use config::{BackendKind, ReportFormat, RunConfig};
use io::Header;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Bad flags, config documents or parameters; nothing was run.
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] xcf_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Format(String),
}

impl Error {
    /// 2 for configuration errors, 1 for everything that failed while running.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Config(_) => 2,
            _ => 1,
        }
    }
}

pub struct RunOutput {
    pub trace: FlowTrace,
    pub files: Vec<PathBuf>,
}

fn initial_state(config: &RunConfig) -> Result<(Backend, FlowState), Error> {
    match config.backend {
        BackendKind::Homogeneous => {
            let (algebra, state) = build_preset(config.preset_id()?)?;
            Ok((Backend::Homogeneous(algebra), FlowState::homogeneous(state.q)))
        }
        BackendKind::Grid => {
            let (metric, t) = match &config.grid.snapshot {
                Some(path) => {
                    let snap = io::read_snapshot(path)?;
                    (snap.metric, snap.t)
                }
                None => (config.grid.synthetic().generate(config.grid.spec()?)?, 0.0),
            };
            let backend = Backend::Grid(metric.spec());
            let mut state = FlowState::from_grid(metric);
            state.t = t;
            Ok((backend, state))
        }
    }
}

fn write_trace(dir: &Path, stem: &str, header: &Header, trace: &FlowTrace) -> Result<Vec<PathBuf>, Error> {
    let csv = dir.join(format!("{stem}.csv"));
    let json = dir.join(format!("{stem}.json"));
    io::write_trace_csv(&csv, header, trace)?;
    io::write_trace_json(&json, header, trace)?;
    Ok(vec![csv, json])
}

/// Integrates one flow and writes `trace.csv`, `trace.json` and, for grid runs,
/// `final.xcfg` and `final.csv`.
pub fn cmd_run(config: &RunConfig) -> Result<RunOutput, Error> {
    config.validate()?;
    let (backend, state) = initial_state(config)?;
    // Time runs forward from a snapshot's time stamp.
    let mut flow = config.flow.clone();
    flow.t_end += state.t;
    let trace = run_flow(&backend, &flow, state)?;

    let header = Header::new(config, config.grid.seed);
    let dir = &config.output.dir;
    let mut files = write_trace(dir, "trace", &header, &trace)?;
    if let (Backend::Grid(spec), true) = (&backend, config.output.snapshot) {
        let metric = xcf_core::grid::MetricGrid::new(*spec, trace.final_state.metrics.clone())?;
        let bin = dir.join("final.xcfg");
        let csv = dir.join("final.csv");
        io::write_snapshot(&bin, &header, &metric, trace.final_state.t)?;
        io::write_snapshot_csv(&csv, &header, &metric, trace.final_state.t)?;
        files.extend([bin, csv]);
    }
    Ok(RunOutput { trace, files })
}

/// Runs the identity suite and writes `report.json` or `report.txt`. The report
/// is written whether or not the checks pass.
pub fn cmd_verify(config: &RunConfig, mutate: bool) -> Result<(VerificationReport, PathBuf), Error> {
    config.verify.validate().map_err(|e| Error::Config(format!("verify: {e}")))?;
    let report = run_suite(&config.verify, mutate)?;
    let header = Header::new(config, config.verify.seed);
    let path = match config.output.report_format {
        ReportFormat::Json => {
            let p = config.output.dir.join("report.json");
            io::write_report_json(&p, &header, &report)?;
            p
        }
        ReportFormat::Text => {
            let p = config.output.dir.join("report.txt");
            io::write_report_text(&p, &header, &report)?;
            p
        }
    };
    Ok((report, path))
}

/// Flows every preset of the sweep; writes `sweep/run_NNN.{csv,json}` per point
/// and `sweep_summary.csv`. Failed points are recorded in the summary.
pub fn cmd_sweep(config: &RunConfig) -> Result<(Vec<SweepRun>, PathBuf), Error> {
    config.flow.validate().map_err(|e| Error::Config(format!("flow: {e}")))?;
    let ids = config.sweep.presets()?;
    let runs = sweep_family(&ids, &config.flow);
    let header = Header::new(config, config.grid.seed);
    let dir = &config.output.dir;
    for (n, run) in runs.iter().enumerate() {
        if let Ok(trace) = &run.trace {
            write_trace(&dir.join("sweep"), &format!("run_{n:03}"), &header, trace)?;
        }
    }
    let summary = dir.join("sweep_summary.csv");
    io::write_sweep_summary(&summary, &header, &runs)?;
    Ok((runs, summary))
}
