//! Output files.
//!
//! Every file starts with the same provenance: program version, SHA-256 of the
//! effective config and the seed. CSV files carry it as `#` comment lines, JSON
//! files as a `header` object (which also embeds the config itself, so any JSON
//! output can be fed back with `--config`).
//!
//! Trace CSV columns, one row per sample:
//!
//! `t, dt, a_min, a_max, b_min, b_max, c_min, c_max, det_p_min, det_p_max,
//! h_min, h_max, volume, pinching, p_integral, det_p_integral, j, vol_p,
//! mask_fraction`, then `eta_<exponent>` for each configured exponent.
//! Undefined values are empty cells.
//!
//! Grid snapshots (`.xcfg`), all little-endian:
//!
//! | bytes | content |
//! |---|---|
//! | 8 | `N` as u64 |
//! | 8 | stencil order as u64 |
//! | 8 | time as f64 |
//! | `48 N^3` | per node, `g00 g01 g02 g11 g12 g22` as f64 |
//! | 4 | `XCFH` |
//! | 8 | header length as u64 |
//! | rest | header JSON |
//!
//! Nodes are row-major in `(i, j, k)` with `k` fastest. Readers of the bare
//! metric layout can stop after the node records.

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use xcf_core::flow::{Branch, BreakdownEvent, FlowSample, FlowTrace};
use xcf_core::grid::{GridSpec, MetricGrid};
use xcf_core::presets::SweepRun;
use xcf_core::tensor::{Sym2, Variance};
use xcf_core::verify::VerificationReport;

use crate::config::RunConfig;
use crate::Error;

const TRAILER_MAGIC: &[u8; 4] = b"XCFH";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub program: String,
    pub version: String,
    pub config_sha256: String,
    pub seed: u64,
    pub config: RunConfig,
}

impl Header {
    pub fn new(config: &RunConfig, seed: u64) -> Self {
        Self {
            program: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_sha256: config.hash(),
            seed,
            config: config.clone(),
        }
    }

    fn comment_lines(&self) -> String {
        format!("# {} {}\n# config_sha256 {}\n# seed {}\n", self.program, self.version, self.config_sha256, self.seed)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Error> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn cell(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn branch_name(b: Branch) -> &'static str {
    match b {
        Branch::Negative => "negative",
        Branch::Positive => "positive",
        Branch::Auto => "auto",
    }
}

fn describe_breakdown(b: &Option<BreakdownEvent>) -> String {
    match b {
        None => "none".into(),
        Some(e) => format!("{:?} t={} at {:?}", e.reason, e.t, e.location),
    }
}

pub fn trace_columns(etas: &[f64]) -> Vec<String> {
    let fixed = [
        "t",
        "dt",
        "a_min",
        "a_max",
        "b_min",
        "b_max",
        "c_min",
        "c_max",
        "det_p_min",
        "det_p_max",
        "h_min",
        "h_max",
        "volume",
        "pinching",
        "p_integral",
        "det_p_integral",
        "j",
        "vol_p",
        "mask_fraction",
    ];
    fixed.iter().map(|s| s.to_string()).chain(etas.iter().map(|e| format!("eta_{e}"))).collect()
}

fn sample_row(s: &FlowSample) -> Vec<String> {
    let f = &s.functionals;
    let mut row: Vec<String> = [
        s.t,
        s.dt,
        s.a_min,
        s.a_max,
        s.b_min,
        s.b_max,
        s.c_min,
        s.c_max,
        s.det_p_min,
        s.det_p_max,
        s.h_min,
        s.h_max,
        s.volume,
    ]
    .iter()
    .map(|x| x.to_string())
    .collect();
    row.push(cell(s.pinching));
    row.push(f.p_integral.to_string());
    row.push(f.det_p_integral.to_string());
    row.push(cell(f.j));
    row.push(cell(f.vol_p));
    row.push(f.mask_fraction.to_string());
    row.extend(f.eta.iter().map(|(_, v)| cell(*v)));
    row
}

pub fn write_trace_csv(path: &Path, header: &Header, trace: &FlowTrace) -> Result<(), Error> {
    let mut out = create(path)?;
    out.write_all(header.comment_lines().as_bytes())?;
    writeln!(out, "# branch {}", branch_name(trace.branch))?;
    writeln!(out, "# breakdown {}", describe_breakdown(&trace.breakdown))?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(trace_columns(&header.config.flow.etas))?;
    for s in &trace.samples {
        w.write_record(sample_row(s))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct TraceFile<'a> {
    header: &'a Header,
    branch: Branch,
    steps: usize,
    breakdown: &'a Option<BreakdownEvent>,
    samples: &'a [FlowSample],
    final_t: f64,
    /// The left-invariant metric at the end; grid runs write a snapshot instead.
    final_metric: Option<Sym2>,
}

pub fn write_trace_json(path: &Path, header: &Header, trace: &FlowTrace) -> Result<(), Error> {
    let state = &trace.final_state;
    let file = TraceFile {
        header,
        branch: trace.branch,
        steps: trace.steps,
        breakdown: &trace.breakdown,
        samples: &trace.samples,
        final_t: state.t,
        final_metric: if state.metrics.len() == 1 { Some(state.metrics[0]) } else { None },
    };
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, &file)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn write_snapshot(path: &Path, header: &Header, metric: &MetricGrid, t: f64) -> Result<(), Error> {
    let spec = metric.spec();
    let mut out = create(path)?;
    out.write_all(&(spec.n() as u64).to_le_bytes())?;
    out.write_all(&(spec.order() as u64).to_le_bytes())?;
    out.write_all(&t.to_le_bytes())?;
    for g in metric.metrics() {
        for c in g.components() {
            out.write_all(&c.to_le_bytes())?;
        }
    }
    let json = serde_json::to_vec(header)?;
    out.write_all(TRAILER_MAGIC)?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub metric: MetricGrid,
    pub t: f64,
    pub header: Option<Header>,
}

fn take<const K: usize>(bytes: &[u8], at: &mut usize) -> Result<[u8; K], Error> {
    let end = *at + K;
    let chunk = bytes.get(*at..end).ok_or_else(|| Error::Format("snapshot truncated".into()))?;
    *at = end;
    Ok(chunk.try_into().expect("length checked"))
}

pub fn read_snapshot(path: &Path) -> Result<Snapshot, Error> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let mut at = 0;
    let n = u64::from_le_bytes(take(&bytes, &mut at)?) as usize;
    let order = u64::from_le_bytes(take(&bytes, &mut at)?) as usize;
    let t = f64::from_le_bytes(take(&bytes, &mut at)?);
    let spec = GridSpec::new(n, order).map_err(|e| Error::Format(format!("snapshot header: {e}")))?;
    let mut metrics = Vec::with_capacity(spec.len());
    for _ in 0..spec.len() {
        let mut c = [0.0; 6];
        for x in &mut c {
            *x = f64::from_le_bytes(take(&bytes, &mut at)?);
        }
        metrics.push(Sym2::from_components(Variance::Covariant, c));
    }
    let header = if at == bytes.len() {
        None
    } else {
        if take::<4>(&bytes, &mut at)? != *TRAILER_MAGIC {
            return Err(Error::Format("snapshot trailer has no XCFH tag".into()));
        }
        let len = u64::from_le_bytes(take(&bytes, &mut at)?) as usize;
        let json = bytes.get(at..at + len).ok_or_else(|| Error::Format("snapshot header truncated".into()))?;
        Some(serde_json::from_slice(json)?)
    };
    let metric = MetricGrid::new(spec, metrics).map_err(|e| Error::Format(format!("snapshot metric: {e}")))?;
    Ok(Snapshot { metric, t, header })
}

/// The same content as [`write_snapshot`] as text, one node per row.
pub fn write_snapshot_csv(path: &Path, header: &Header, metric: &MetricGrid, t: f64) -> Result<(), Error> {
    let spec = metric.spec();
    let mut out = create(path)?;
    out.write_all(header.comment_lines().as_bytes())?;
    writeln!(out, "# n {} order {} t {}", spec.n(), spec.order(), t)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["i", "j", "k", "g00", "g01", "g02", "g11", "g12", "g22"])?;
    for (idx, g) in metric.metrics().iter().enumerate() {
        let [i, j, k] = spec.coords(idx);
        let mut row = vec![i.to_string(), j.to_string(), k.to_string()];
        row.extend(g.components().iter().map(|c| c.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct ReportFile<'a> {
    header: &'a Header,
    all_pass: bool,
    report: &'a VerificationReport,
}

pub fn write_report_json(path: &Path, header: &Header, report: &VerificationReport) -> Result<(), Error> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, &ReportFile { header, all_pass: report.all_pass(), report })?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

fn opt(x: Option<f64>, prec: usize) -> String {
    x.map(|v| format!("{v:.prec$}")).unwrap_or_else(|| "-".into())
}

pub fn report_table(report: &VerificationReport) -> String {
    let mut s = format!(
        "{:<34} {:<12} {:>10} {:>8} {:>6} {:>6}  {}\n",
        "check", "backend", "residual", "tol", "order", "need", "result"
    );
    for c in &report.checks {
        s += &format!(
            "{:<34} {:<12} {:>10.3e} {:>8.0e} {:>6} {:>6}  {}\n",
            c.id,
            c.backend,
            c.residual,
            c.tolerance,
            opt(c.order, 2),
            opt(c.declared_order.map(|d| d - xcf_core::verify::ORDER_SLACK), 1),
            if c.pass { "PASS" } else { "FAIL" }
        );
    }
    let passed = report.checks.iter().filter(|c| c.pass).count();
    s += &format!(
        "{passed}/{} passed{}\n",
        report.checks.len(),
        if report.mutated { " (mutated formulas)" } else { "" }
    );
    s
}

pub fn write_report_text(path: &Path, header: &Header, report: &VerificationReport) -> Result<(), Error> {
    let mut out = create(path)?;
    out.write_all(header.comment_lines().as_bytes())?;
    out.write_all(report_table(report).as_bytes())?;
    out.flush()?;
    Ok(())
}

pub fn write_sweep_summary(path: &Path, header: &Header, runs: &[SweepRun]) -> Result<(), Error> {
    let mut out = create(path)?;
    out.write_all(header.comment_lines().as_bytes())?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["index", "preset", "final_t", "final_pinching", "breakdown_t", "breakdown_reason", "error"])?;
    for (n, run) in runs.iter().enumerate() {
        let (final_t, reason, error) = match &run.trace {
            Ok(t) => (
                Some(t.final_state.t),
                t.breakdown.map(|b| format!("{:?}", b.reason)).unwrap_or_default(),
                String::new(),
            ),
            Err(e) => (None, String::new(), e.to_string()),
        };
        w.write_record([
            n.to_string(),
            run.id.to_string(),
            cell(final_t),
            cell(run.final_pinching()),
            cell(run.breakdown_t()),
            reason,
            error,
        ])?;
    }
    w.flush()?;
    Ok(())
}
