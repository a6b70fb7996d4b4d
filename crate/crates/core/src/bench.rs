//! Benchmark harness: single runs, report rendering and scaling sweeps.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{load_constraints, load_dataset, load_labels, sample_constraints, ConstraintSet, Dataset};
use crate::driver::{run_pass, IterTrace, PassConfig, PhaseTimes, Selector};
use crate::error::{Error, Result};
use crate::kmeans::{cop_kmeans, CentroidModel, DEFAULT_COP_RESTARTS};
use crate::metrics::{evaluate, Metrics};
use crate::refine::{qaoa_refine, RefineConfig, RefineReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    PassCa,
    PassIg,
    Cop,
    QaoaRefine,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::PassCa => "pass-ca",
            Method::PassIg => "pass-ig",
            Method::Cop => "cop",
            Method::QaoaRefine => "qaoa-refine",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
    Table,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum ConstraintSource {
    None,
    File { path: PathBuf },
    Sampled { ml: usize, cl: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    None,
    Ml,
    Cl,
    Both,
}

impl Scenario {
    pub fn of(constraints: &ConstraintSet) -> Self {
        match (constraints.ml().is_empty(), constraints.cl().is_empty()) {
            (true, true) => Scenario::None,
            (false, true) => Scenario::Ml,
            (true, false) => Scenario::Cl,
            (false, false) => Scenario::Both,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scenario::None => "none",
            Scenario::Ml => "ML",
            Scenario::Cl => "CL",
            Scenario::Both => "Both",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub data: PathBuf,
    pub header: bool,
    pub truth: Option<PathBuf>,
    pub constraints: ConstraintSource,
    pub method: Method,
    pub pass: PassConfig,
    pub cop_restarts: usize,
    pub refine: RefineConfig,
}

impl RunSpec {
    pub fn new(data: impl Into<PathBuf>, k: usize) -> Self {
        Self {
            data: data.into(),
            header: false,
            truth: None,
            constraints: ConstraintSource::None,
            method: Method::PassIg,
            pass: PassConfig::new(k),
            cop_restarts: DEFAULT_COP_RESTARTS,
            refine: RefineConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Ok,
    NoSolutionFound,
}

/// Share of total wall time per phase.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseShares {
    pub selection: f64,
    pub ilp: f64,
    pub centroids: f64,
    pub other: f64,
}

impl PhaseShares {
    pub fn from_times(t: &PhaseTimes) -> Self {
        if !(t.total > 0.0) {
            return Self::default();
        }
        Self {
            selection: t.selection / t.total,
            ilp: t.ilp / t.total,
            centroids: t.centroids / t.total,
            other: (t.total - t.selection - t.ilp - t.centroids).max(0.0) / t.total,
        }
    }
}

/// One report row. Every method fills the same field set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub dataset: String,
    pub method: Method,
    pub scenario: Scenario,
    pub status: RunStatus,
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub n_ml: usize,
    pub n_cl: usize,
    pub sse: Option<f64>,
    pub violations: Option<usize>,
    pub ml_violations: Option<usize>,
    pub iterations: usize,
    pub stabilized_at: Option<usize>,
    pub max_binaries: usize,
    pub metrics: Option<Metrics>,
    pub labels: Option<Vec<usize>>,
    pub wall_time: f64,
    pub phase_times: PhaseTimes,
    pub phase_shares: PhaseShares,
    pub trace: Vec<IterTrace>,
    pub qaoa: Option<RefineReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Env {
    pub version: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub spec: RunSpec,
    pub result: RunResult,
    pub env: Env,
}

pub fn load_instance(spec: &RunSpec) -> Result<(Dataset, ConstraintSet, Option<Vec<usize>>)> {
    let data = load_dataset(&spec.data, spec.header)?;
    let truth = match &spec.truth {
        Some(p) => {
            let t = load_labels(p)?;
            if t.len() != data.n() {
                return Err(Error::DimensionMismatch {
                    expected: data.n(),
                    found: t.len(),
                });
            }
            Some(t)
        }
        None => None,
    };
    let constraints = match &spec.constraints {
        ConstraintSource::None => ConstraintSet::empty(),
        ConstraintSource::File { path } => load_constraints(path, Some(data.n()))?,
        ConstraintSource::Sampled { ml, cl, seed } => sample_constraints(data.n(), truth.as_deref(), *ml, *cl, *seed)?,
    };
    Ok((data, constraints, truth))
}

pub fn run_benchmark(spec: &RunSpec) -> Result<Report> {
    let (data, constraints, truth) = load_instance(spec)?;
    let name = spec
        .data
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let result = run_method(&name, &data, &constraints, truth.as_deref(), spec)?;
    Ok(Report {
        spec: spec.clone(),
        result,
        env: Env {
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: spec.pass.seed,
        },
    })
}

/// Runs `spec.method` on an already loaded instance.
pub fn run_method(
    name: &str,
    data: &Dataset,
    constraints: &ConstraintSet,
    truth: Option<&[usize]>,
    spec: &RunSpec,
) -> Result<RunResult> {
    let start = Instant::now();
    let k = spec.pass.k;
    let mut row = RunResult {
        dataset: name.to_string(),
        method: spec.method,
        scenario: Scenario::of(constraints),
        status: RunStatus::Ok,
        n: data.n(),
        d: data.d(),
        k,
        n_ml: constraints.ml().len(),
        n_cl: constraints.cl().len(),
        sse: None,
        violations: None,
        ml_violations: None,
        iterations: 0,
        stabilized_at: None,
        max_binaries: 0,
        metrics: None,
        labels: None,
        wall_time: 0.0,
        phase_times: PhaseTimes::default(),
        phase_shares: PhaseShares::default(),
        trace: Vec::new(),
        qaoa: None,
    };
    let (labels, centroids) = match spec.method {
        Method::Cop => match cop_kmeans(data, constraints, k, spec.cop_restarts, spec.pass.seed)? {
            Some(state) => (state.labels.into_labels(), state.model),
            None => {
                row.status = RunStatus::NoSolutionFound;
                row.wall_time = start.elapsed().as_secs_f64();
                return Ok(row);
            }
        },
        Method::PassCa | Method::PassIg | Method::QaoaRefine => {
            let mut config = spec.pass.clone();
            config.selector = if spec.method == Method::PassCa {
                Selector::Ca
            } else {
                Selector::Ig
            };
            let mut result = run_pass(data, constraints, &config)?;
            if spec.method == Method::QaoaRefine {
                let mut refine = spec.refine.clone();
                refine.seed = config.seed;
                let (refined, report) = qaoa_refine(data, constraints, &result, &refine)?;
                result = refined;
                row.qaoa = Some(report);
            }
            row.iterations = result.iterations;
            row.stabilized_at = result.stabilized_at;
            row.max_binaries = result.max_binaries;
            row.phase_times = result.phase_times.clone();
            row.trace = result.trace.clone();
            let model = CentroidModel::from_rows(&result.centroids)?;
            (result.labels, model)
        }
    };
    let assignment = crate::data::Assignment::new(labels, k)?;
    let metrics = evaluate(&assignment, data, constraints, &centroids, truth)?;
    row.sse = Some(metrics.sse);
    row.violations = Some(metrics.cl_violations);
    row.ml_violations = Some(metrics.ml_violations);
    row.metrics = Some(metrics);
    row.labels = Some(assignment.into_labels());
    row.wall_time = start.elapsed().as_secs_f64();
    if row.phase_times.total == 0.0 {
        row.phase_times.total = row.wall_time;
        row.phase_times.other = row.wall_time;
    }
    row.phase_shares = PhaseShares::from_times(&row.phase_times);
    Ok(row)
}

const CSV_HEADER: &str = "dataset,method,scenario,status,n,d,k,n_ml,n_cl,sse,violations,ml_violations,iterations,stabilized_at,max_binaries,wall_time,share_selection,share_ilp,share_centroids,share_other";

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(ToString::to_string).unwrap_or_default()
}

fn status_name(s: RunStatus) -> &'static str {
    match s {
        RunStatus::Ok => "ok",
        RunStatus::NoSolutionFound => "no solution found",
    }
}

pub fn csv_row(r: &RunResult) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{:.6},{:.4},{:.4},{:.4},{:.4}",
        r.dataset,
        r.method.name(),
        r.scenario.name(),
        status_name(r.status),
        r.n,
        r.d,
        r.k,
        r.n_ml,
        r.n_cl,
        opt(&r.sse),
        opt(&r.violations),
        opt(&r.ml_violations),
        r.iterations,
        opt(&r.stabilized_at),
        r.max_binaries,
        r.wall_time,
        r.phase_shares.selection,
        r.phase_shares.ilp,
        r.phase_shares.centroids,
        r.phase_shares.other,
    )
}

pub fn render(reports: &[Report], format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => {
            let text = if reports.len() == 1 {
                serde_json::to_string_pretty(&reports[0])
            } else {
                serde_json::to_string_pretty(reports)
            };
            text.map(|mut s| {
                s.push('\n');
                s
            })
            .map_err(|e| Error::InvalidInput(format!("cannot serialize report: {e}")))
        }
        ReportFormat::Csv => {
            let mut out = String::from(CSV_HEADER);
            out.push('\n');
            for r in reports {
                out.push_str(&csv_row(&r.result));
                out.push('\n');
            }
            Ok(out)
        }
        ReportFormat::Table => Ok(table(reports)),
    }
}

fn table(reports: &[Report]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<12} {:<12} {:<9} {:>14} {:>6} {:>6} {:>10} {:>7} {:>7} {:>7}",
        "dataset", "method", "scenario", "sse", "viol", "iters", "time[s]", "sel", "ilp", "cent"
    );
    for r in reports {
        let r = &r.result;
        let sse = match (r.status, r.sse) {
            (RunStatus::NoSolutionFound, _) => "no solution".to_string(),
            (_, Some(v)) => format!("{v:.4}"),
            _ => String::new(),
        };
        let _ = writeln!(
            out,
            "{:<12} {:<12} {:<9} {:>14} {:>6} {:>6} {:>10.4} {:>6.1}% {:>6.1}% {:>6.1}%",
            r.dataset,
            r.method.name(),
            r.scenario.name(),
            sse,
            opt(&r.violations),
            r.iterations,
            r.wall_time,
            100.0 * r.phase_shares.selection,
            100.0 * r.phase_shares.ilp,
            100.0 * r.phase_shares.centroids,
        );
    }
    out
}

pub fn trace_csv(trace: &[IterTrace]) -> String {
    let mut out = String::from("iteration,sse,rel_change,subset_size,violations,binaries,objective,status,retried,kept_warm_start,empty_clusters\n");
    for t in trace {
        let status = match t.status {
            Some(s) => serde_json::to_value(s)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default(),
            None => String::new(),
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            t.iteration,
            t.sse,
            t.rel_change,
            t.subset_size,
            t.violations,
            t.binaries,
            t.objective,
            status,
            t.retried,
            t.kept_warm_start,
            t.empty_clusters
        );
    }
    out
}

/// Isotropic Gaussian blobs with unit standard deviation around `k` centres
/// drawn uniformly from `[-10, 10]^d`. Returns the points and their blob labels.
pub fn gaussian_blobs(n: usize, k: usize, d: usize, seed: u64) -> Result<(Dataset, Vec<usize>)> {
    if n == 0 || k == 0 || d == 0 {
        return Err(Error::InvalidInput("blobs need n, k, d >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centres: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..d).map(|_| rng.random_range(-10.0..10.0)).collect())
        .collect();
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut points = Vec::with_capacity(n * d);
    let mut truth = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % k;
        points.extend(centres[c].iter().map(|&m| m + noise.sample(&mut rng)));
        truth.push(c);
    }
    Ok((Dataset::from_flat(points, vec![1.0; n], d)?, truth))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub sizes: Vec<usize>,
    pub k: usize,
    pub d: usize,
    /// Must-links per point; the sample size is `ml_ratio * n`.
    pub ml_ratio: f64,
    pub cl_ratio: f64,
    pub repeats: usize,
    pub method: Method,
    pub pass: PassConfig,
}

impl SweepSpec {
    pub fn new(sizes: Vec<usize>, k: usize) -> Self {
        Self {
            sizes,
            k,
            d: 2,
            ml_ratio: 0.25,
            cl_ratio: 0.25,
            repeats: 3,
            method: Method::PassIg,
            pass: PassConfig::new(k),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    /// Median wall time over the repeats.
    pub wall_time: f64,
    pub sse: f64,
    pub violations: usize,
    pub iterations: usize,
    pub max_binaries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub spec: SweepSpec,
    pub rows: Vec<SweepRow>,
    /// `None` with fewer than two distinct sizes.
    pub slope: Option<f64>,
    pub r2: Option<f64>,
}

pub fn scaling_sweep(spec: &SweepSpec) -> Result<SweepReport> {
    let mut rows = Vec::with_capacity(spec.sizes.len());
    for &n in &spec.sizes {
        let seed = spec.pass.seed;
        let (data, truth) = gaussian_blobs(n, spec.k, spec.d, seed)?;
        let n_ml = (spec.ml_ratio * n as f64).round() as usize;
        let n_cl = (spec.cl_ratio * n as f64).round() as usize;
        let constraints = sample_constraints(n, Some(&truth), n_ml, n_cl, seed)?;
        let mut run = RunSpec::new("blobs", spec.k);
        run.method = spec.method;
        run.pass = spec.pass.clone();
        run.pass.k = spec.k;
        let mut times = Vec::with_capacity(spec.repeats.max(1));
        let mut last = None;
        for _ in 0..spec.repeats.max(1) {
            let r = run_method("blobs", &data, &constraints, None, &run)?;
            times.push(r.wall_time);
            last = Some(r);
        }
        times.sort_by(f64::total_cmp);
        let r = last.expect("at least one repeat");
        rows.push(SweepRow {
            n,
            wall_time: times[times.len() / 2],
            sse: r.sse.unwrap_or(f64::NAN),
            violations: r.violations.unwrap_or(0),
            iterations: r.iterations,
            max_binaries: r.max_binaries,
        });
    }
    let xs: Vec<f64> = rows.iter().map(|r| (r.n as f64).ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.wall_time.max(1e-9).ln()).collect();
    let fit = log_log_fit(&xs, &ys);
    Ok(SweepReport {
        spec: spec.clone(),
        rows,
        slope: fit.map(|f| f.0),
        r2: fit.map(|f| f.1),
    })
}

/// Least-squares slope and coefficient of determination; `None` when the
/// abscissae do not vary.
pub fn log_log_fit(xs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let e = y - (intercept + slope * x);
            e * e
        })
        .sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Some((slope, r2))
}

pub fn render_sweep(report: &SweepReport, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => serde_json::to_string_pretty(report)
            .map(|mut s| {
                s.push('\n');
                s
            })
            .map_err(|e| Error::InvalidInput(format!("cannot serialize report: {e}"))),
        ReportFormat::Csv | ReportFormat::Table => {
            let mut out = String::from("n,wall_time,sse,violations,iterations,max_binaries\n");
            for r in &report.rows {
                let _ = writeln!(
                    out,
                    "{},{:.6},{},{},{},{}",
                    r.n, r.wall_time, r.sse, r.violations, r.iterations, r.max_binaries
                );
            }
            match (report.slope, report.r2) {
                (Some(s), Some(r2)) => {
                    let _ = writeln!(out, "# slope {s:.4} r2 {r2:.4}");
                }
                _ => out.push_str("# slope undefined\n"),
            }
            Ok(out)
        }
    }
}
