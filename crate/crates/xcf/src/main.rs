use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use xcf::config::{BackendKind, ReportFormat, RunConfig};
use xcf::{cmd_run, cmd_sweep, cmd_verify, io, Error};
use xcf_core::flow::Branch;

/// Cross curvature flow on 3-manifolds.
///
/// Flags override values from `--config`. Exit status: 0 on success (a flow
/// breakdown counts as success), 1 on runtime errors or failed checks, 2 on
/// configuration errors.
#[derive(Parser)]
#[command(name = "xcf", version)]
struct Cli {
    /// Worker threads for grid kernels and sweeps (0 = all cores).
    #[arg(long, env = "XCF_THREADS", global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one flow and write its trace.
    Run(RunArgs),
    /// Run the identity suite and write a report.
    Verify(VerifyArgs),
    /// Flow every preset of a parameter grid and summarize.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct Common {
    /// JSON config file (or a trace/report JSON to re-run its embedded config).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BranchArg {
    Negative,
    Positive,
    Auto,
}

#[derive(Args)]
struct FlowArgs {
    #[arg(long, value_enum)]
    branch: Option<BranchArg>,
    #[arg(long)]
    t_end: Option<f64>,
    /// Fixed step, or the first step when adaptive.
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    adaptive: Option<bool>,
    #[arg(long)]
    sample_every: Option<usize>,
    /// Exponents of the eta-functionals recorded per sample.
    #[arg(long, value_delimiter = ',')]
    eta: Option<Vec<f64>>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    flow: FlowArgs,
    /// `name` or `name:p1,p2`, e.g. `hyperbolic_solvable:1,2`; selects the homogeneous backend.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long, value_enum)]
    backend: Option<Backend>,
    /// Grid resolution; selects the grid backend.
    #[arg(long)]
    grid_n: Option<usize>,
    #[arg(long)]
    order: Option<usize>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Start from a grid snapshot; selects the grid backend.
    #[arg(long)]
    from_snapshot: Option<PathBuf>,
    /// Do not write the final grid snapshot.
    #[arg(long)]
    no_snapshot: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Backend {
    Homogeneous,
    Grid,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    common: Common,
    /// Grid resolutions, coarsest first.
    #[arg(long, value_delimiter = ',')]
    grid_n: Option<Vec<usize>>,
    /// Check ids or families to run.
    #[arg(long, value_delimiter = ',')]
    only: Option<Vec<String>>,
    /// Flip the documented sign in every formula; every check should then fail.
    #[arg(long)]
    mutate: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long, value_enum)]
    format: Option<ReportFormat>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    flow: FlowArgs,
    /// Preset family, e.g. `hyperbolic_solvable`.
    #[arg(long)]
    family: Option<String>,
    /// Values of one parameter, comma separated; repeat once per parameter.
    #[arg(long)]
    axis: Vec<String>,
    /// One explicit parameter tuple, comma separated; repeatable.
    #[arg(long)]
    point: Vec<String>,
}

fn base_config(common: &Common) -> Result<RunConfig, Error> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &common.out {
        config.output.dir = out.clone();
    }
    Ok(config)
}

fn apply_flow(config: &mut RunConfig, f: &FlowArgs) {
    let flow = &mut config.flow;
    if let Some(b) = f.branch {
        flow.branch = match b {
            BranchArg::Negative => Branch::Negative,
            BranchArg::Positive => Branch::Positive,
            BranchArg::Auto => Branch::Auto,
        };
    }
    if let Some(t) = f.t_end {
        flow.t_end = t;
    }
    if let Some(dt) = f.dt {
        flow.dt_init = dt;
    }
    if let Some(a) = f.adaptive {
        flow.adaptive = a;
    }
    if let Some(n) = f.sample_every {
        flow.sample_every = n;
    }
    if let Some(etas) = &f.eta {
        flow.etas = etas.clone();
    }
}

fn parse_list(s: &str, flag: &str) -> Result<Vec<f64>, Error> {
    s.split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|_| Error::Config(format!("--{flag}: bad number {x:?} in {s:?}"))))
        .collect()
}

fn run(args: RunArgs) -> Result<ExitCode, Error> {
    let mut config = base_config(&args.common)?;
    apply_flow(&mut config, &args.flow);
    if let Some(p) = args.preset {
        config.preset = p;
        config.backend = BackendKind::Homogeneous;
    }
    let grid = &mut config.grid;
    if let Some(n) = args.grid_n {
        grid.n = n;
        config.backend = BackendKind::Grid;
    }
    if let Some(path) = args.from_snapshot {
        grid.snapshot = Some(path);
        config.backend = BackendKind::Grid;
    }
    if let Some(o) = args.order {
        grid.order = o;
    }
    if let Some(e) = args.eps {
        grid.eps = e;
    }
    if let Some(s) = args.seed {
        grid.seed = s;
    }
    if let Some(b) = args.backend {
        config.backend = match b {
            Backend::Homogeneous => BackendKind::Homogeneous,
            Backend::Grid => BackendKind::Grid,
        };
    }
    if args.no_snapshot {
        config.output.snapshot = false;
    }

    let out = cmd_run(&config)?;
    let trace = &out.trace;
    println!("branch {:?}, {} steps, t = {}", trace.branch, trace.steps, trace.final_state.t);
    match &trace.breakdown {
        Some(b) => println!("breakdown: {:?} at t = {} ({:?})", b.reason, b.t, b.location),
        None => println!("reached t_end"),
    }
    for f in &out.files {
        println!("wrote {}", f.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn verify(args: VerifyArgs) -> Result<ExitCode, Error> {
    let mut config = base_config(&args.common)?;
    let v = &mut config.verify;
    if let Some(n) = args.grid_n {
        v.grid_n = n;
    }
    if let Some(only) = args.only {
        v.only = only;
    }
    if let Some(s) = args.seed {
        v.seed = s;
    }
    if let Some(s) = args.samples {
        v.samples = s;
    }
    if let Some(f) = args.format {
        config.output.report_format = f;
    }

    let (report, path) = cmd_verify(&config, args.mutate)?;
    print!("{}", io::report_table(&report));
    println!("wrote {}", path.display());
    Ok(if report.all_pass() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn sweep(args: SweepArgs) -> Result<ExitCode, Error> {
    let mut config = base_config(&args.common)?;
    apply_flow(&mut config, &args.flow);
    if let Some(f) = args.family {
        config.sweep.family = f;
    }
    if !args.axis.is_empty() {
        config.sweep.axes = args.axis.iter().map(|a| parse_list(a, "axis")).collect::<Result<_, _>>()?;
    }
    if !args.point.is_empty() {
        config.sweep.points = args.point.iter().map(|p| parse_list(p, "point")).collect::<Result<_, _>>()?;
    }

    let (runs, path) = cmd_sweep(&config)?;
    for run in &runs {
        match &run.trace {
            Ok(_) => println!(
                "{:<32} pinching {:>12} breakdown {}",
                run.id.to_string(),
                run.final_pinching().map(|p| format!("{p:.6}")).unwrap_or_else(|| "-".into()),
                run.breakdown_t().map(|t| format!("t = {t}")).unwrap_or_else(|| "none".into())
            ),
            Err(e) => println!("{:<32} error: {e}", run.id.to_string()),
        }
    }
    println!("wrote {}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads.filter(|&n| n > 0) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("xcf: cannot set up {n} threads: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Verify(a) => verify(a),
        Command::Sweep(a) => sweep(a),
    };
    result.unwrap_or_else(|e| {
        eprintln!("xcf: {e}");
        ExitCode::from(e.exit_code())
    })
}
