use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use pass_core::bench::{
    render, render_sweep, run_benchmark, scaling_sweep, trace_csv, ConstraintSource, Method, Report, ReportFormat,
    RunSpec, RunStatus, SweepSpec,
};
use pass_core::driver::{PassConfig, SolverKind};
use pass_core::Error;

#[derive(Parser, Debug)]
#[command(name = "pass", version, about = "Pairwise-constrained k-means benchmark runner")]
#[command(args_conflicts_with_subcommands = true)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Runtime scaling over synthetic Gaussian blobs.
    Sweep(SweepArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    PassCa,
    PassIg,
    Cop,
    QaoaRefine,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::PassCa => Method::PassCa,
            MethodArg::PassIg => Method::PassIg,
            MethodArg::Cop => Method::Cop,
            MethodArg::QaoaRefine => Method::QaoaRefine,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SolverArg {
    Exact,
    Local,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
    Table,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Json => ReportFormat::Json,
            FormatArg::Csv => ReportFormat::Csv,
            FormatArg::Table => ReportFormat::Table,
        }
    }
}

#[derive(Args, Debug, Clone)]
struct PassArgs {
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, value_enum, default_value_t = MethodArg::PassIg)]
    method: MethodArg,
    /// Percentile for the margin selector.
    #[arg(long = "selector-p", default_value_t = pass_core::selection::DEFAULT_PERCENTILE)]
    selector_p: f64,
    #[arg(long, default_value_t = pass_core::selection::DEFAULT_ALPHA)]
    alpha: f64,
    #[arg(long, default_value_t = pass_core::selection::DEFAULT_BETA)]
    beta: f64,
    /// Softmax temperature; defaults to the median nearest squared distance.
    #[arg(long)]
    temp: Option<f64>,
    #[arg(long = "cand-width", default_value_t = pass_core::restricted::DEFAULT_CANDIDATE_WIDTH)]
    cand_width: usize,
    #[arg(long = "max-iters", default_value_t = pass_core::driver::DEFAULT_MAX_ITERS)]
    max_iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = SolverArg::Exact)]
    solver: SolverArg,
    /// Seconds per restricted solve.
    #[arg(long = "time-limit", default_value_t = pass_core::restricted::DEFAULT_TIME_LIMIT.as_secs_f64())]
    time_limit: f64,
    #[arg(long, value_enum, default_value_t = FormatArg::Json)]
    report: FormatArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl PassArgs {
    fn config(&self) -> PassConfig {
        let mut c = PassConfig::new(self.k).with_seed(self.seed).with_solver(match self.solver {
            SolverArg::Exact => SolverKind::Exact,
            SolverArg::Local => SolverKind::LocalSearch,
        });
        c.percentile = self.selector_p;
        c.alpha = self.alpha;
        c.beta = self.beta;
        c.temperature = self.temp;
        c.cand_width = self.cand_width;
        c.max_iters = self.max_iters;
        c.time_limit_secs = self.time_limit;
        c
    }
}

#[derive(Args, Debug)]
struct RunArgs {
    /// CSV file with one point per row.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Skip the first line of the data file.
    #[arg(long)]
    header: bool,
    /// Ground-truth labels, one per line; required for sampling.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, conflicts_with_all = ["sample_ml", "sample_cl"])]
    constraints: Option<PathBuf>,
    #[arg(long = "sample-ml")]
    sample_ml: Option<usize>,
    #[arg(long = "sample-cl")]
    sample_cl: Option<usize>,
    #[command(flatten)]
    pass: PassArgs,
    /// Per-iteration trace output (CSV, or JSON for a .json path).
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Worker threads for repeated runs.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Runs with seeds seed, seed+1, ...
    #[arg(long, default_value_t = 1)]
    repeats: usize,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [1000usize, 4000, 16000])]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 2)]
    dim: usize,
    #[arg(long = "ml-ratio", default_value_t = 0.25)]
    ml_ratio: f64,
    #[arg(long = "cl-ratio", default_value_t = 0.25)]
    cl_ratio: f64,
    #[arg(long = "sweep-repeats", default_value_t = 3)]
    repeats: usize,
    #[command(flatten)]
    pass: PassArgs,
}

fn exit_code(e: &Error) -> u8 {
    if e.is_infeasible() {
        2
    } else if e.is_io_or_parse() {
        4
    } else {
        1
    }
}

fn emit(text: &str, out: Option<&PathBuf>) -> Result<(), Error> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::Io {
            path: p.clone(),
            source: e,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(args: &RunArgs) -> Result<u8, Error> {
    let Some(data) = &args.data else {
        return Err(Error::InvalidInput("--data is required".into()));
    };
    let mut spec = RunSpec::new(data, args.pass.k);
    spec.header = args.header;
    spec.truth = args.truth.clone();
    spec.method = args.pass.method.into();
    spec.pass = args.pass.config();
    spec.constraints = match (&args.constraints, args.sample_ml, args.sample_cl) {
        (Some(p), _, _) => ConstraintSource::File { path: p.clone() },
        (None, None, None) => ConstraintSource::None,
        (None, ml, cl) => ConstraintSource::Sampled {
            ml: ml.unwrap_or(0),
            cl: cl.unwrap_or(0),
            seed: args.pass.seed,
        },
    };
    spec.pass.validate()?;

    let specs: Vec<RunSpec> = (0..args.repeats.max(1) as u64)
        .map(|r| {
            let mut s = spec.clone();
            s.pass.seed = spec.pass.seed + r;
            if let ConstraintSource::Sampled { seed, .. } = &mut s.constraints {
                *seed = s.pass.seed;
            }
            s
        })
        .collect();
    let reports = run_all(&specs, args.jobs.max(1))?;

    if let Some(path) = &args.trace {
        let text = if path.extension().is_some_and(|e| e == "json") {
            let traces: Vec<_> = reports.iter().map(|r| &r.result.trace).collect();
            let v = if traces.len() == 1 {
                serde_json::to_string_pretty(traces[0])
            } else {
                serde_json::to_string_pretty(&traces)
            };
            v.map_err(|e| Error::InvalidInput(e.to_string()))?
        } else {
            reports.iter().map(|r| trace_csv(&r.result.trace)).collect::<Vec<_>>().join("\n")
        };
        emit(&text, Some(path))?;
    }
    emit(&render(&reports, args.pass.report.into())?, args.pass.out.as_ref())?;
    let none_found = reports.iter().any(|r| r.result.status == RunStatus::NoSolutionFound);
    Ok(if none_found { 3 } else { 0 })
}

fn run_all(specs: &[RunSpec], jobs: usize) -> Result<Vec<Report>, Error> {
    if jobs <= 1 || specs.len() <= 1 {
        return specs.iter().map(run_benchmark).collect();
    }
    let chunk = specs.len().div_ceil(jobs);
    std::thread::scope(|scope| {
        let handles: Vec<_> = specs
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(run_benchmark).collect::<Result<Vec<_>, _>>()))
            .collect();
        let mut out = Vec::with_capacity(specs.len());
        for h in handles {
            out.extend(h.join().expect("worker panicked")?);
        }
        Ok(out)
    })
}

fn sweep(args: &SweepArgs) -> Result<u8, Error> {
    let mut spec = SweepSpec::new(args.sizes.clone(), args.pass.k);
    spec.d = args.dim;
    spec.ml_ratio = args.ml_ratio;
    spec.cl_ratio = args.cl_ratio;
    spec.repeats = args.repeats;
    spec.method = args.pass.method.into();
    spec.pass = args.pass.config();
    spec.pass.validate()?;
    let report = scaling_sweep(&spec)?;
    emit(&render_sweep(&report, args.pass.report.into())?, args.pass.out.as_ref())?;
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 4 } else { 0 });
        }
    };
    let result = match &cli.command {
        Some(Command::Sweep(a)) => sweep(a),
        None => run(&cli.run),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
