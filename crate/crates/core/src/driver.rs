//! The four-phase refinement loop: collapse, initialize, iterate subset
//! selection + restricted reassignment + centroid update, then repair and lift.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::collapse::{collapse, lift_assignment};
use crate::data::{Assignment, ConstraintSet, Dataset};
use crate::error::{Error, Result};
use crate::kmeans::{
    assign_nearest, default_batch, init_minibatch, update_centroids, weighted_sse, CentroidModel,
    DEFAULT_MINIBATCH_ITERS,
};
use crate::metrics::count_violations;
use crate::restricted::{
    build_model, extend, solve_exact, solve_local_search, RestrictedModel, RestrictedSolution, SolveStatus,
    DEFAULT_CANDIDATE_WIDTH, DEFAULT_MAX_SWEEPS, DEFAULT_TIME_LIMIT,
};
use crate::selection::{
    count_cl_violations, default_temperature, select_ca, select_ig, WorkingSubset, DEFAULT_ALPHA,
    DEFAULT_BETA, DEFAULT_PERCENTILE,
};

pub const DEFAULT_MAX_ITERS: usize = 30;
pub const DEFAULT_SSE_REL_TOL: f64 = 1e-3;
pub const DEFAULT_INIT_RESTARTS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Selector {
    /// Margin percentile.
    Ca,
    /// Fisher-Rao score with a size budget.
    Ig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    Exact,
    LocalSearch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassConfig {
    pub k: usize,
    pub selector: Selector,
    pub percentile: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Softmax temperature; `None` uses the median nearest squared distance.
    pub temperature: Option<f64>,
    pub cand_width: usize,
    pub max_iters: usize,
    pub sse_rel_tol: f64,
    pub seed: u64,
    pub solver: SolverKind,
    pub time_limit_secs: f64,
    pub minibatch_iters: usize,
    /// `None` uses `min(1024, n)`.
    pub batch_size: Option<usize>,
    pub init_restarts: usize,
}

impl PassConfig {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            selector: Selector::Ca,
            percentile: DEFAULT_PERCENTILE,
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            temperature: None,
            cand_width: DEFAULT_CANDIDATE_WIDTH,
            max_iters: DEFAULT_MAX_ITERS,
            sse_rel_tol: DEFAULT_SSE_REL_TOL,
            seed: 0,
            solver: SolverKind::Exact,
            time_limit_secs: DEFAULT_TIME_LIMIT.as_secs_f64(),
            minibatch_iters: DEFAULT_MINIBATCH_ITERS,
            batch_size: None,
            init_restarts: DEFAULT_INIT_RESTARTS,
        }
    }

    pub fn with_selector(mut self, selector: Selector) -> Self {
        self.selector = selector;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_solver(mut self, solver: SolverKind) -> Self {
        self.solver = solver;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        if self.k == 0 {
            return bad("k must be >= 1".into());
        }
        if self.max_iters == 0 {
            return bad("max_iters must be >= 1".into());
        }
        if !(self.sse_rel_tol > 0.0) {
            return bad(format!("sse_rel_tol must be positive, got {}", self.sse_rel_tol));
        }
        if !(self.percentile > 0.0 && self.percentile < 100.0) {
            return bad(format!("percentile must lie in (0, 100), got {}", self.percentile));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad(format!("alpha must lie in (0, 1], got {}", self.alpha));
        }
        if !(self.beta > 0.0) {
            return bad(format!("beta must be positive, got {}", self.beta));
        }
        if let Some(t) = self.temperature {
            if !(t > 0.0) || !t.is_finite() {
                return bad(format!("temperature must be positive, got {t}"));
            }
        }
        if self.cand_width == 0 {
            return bad("candidate width must be >= 1".into());
        }
        if !(self.time_limit_secs >= 0.0) || !self.time_limit_secs.is_finite() {
            return bad(format!("time limit must be non-negative, got {}", self.time_limit_secs));
        }
        Ok(())
    }

    fn time_limit(&self) -> Duration {
        Duration::from_secs_f64(self.time_limit_secs)
    }
}

/// Wall time per phase in seconds. `other` is what the named phases miss.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimes {
    pub collapse: f64,
    pub init: f64,
    pub selection: f64,
    pub ilp: f64,
    pub centroids: f64,
    pub post: f64,
    pub other: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterTrace {
    pub iteration: usize,
    /// SSE on the original points (offset included) after the centroid update.
    pub sse: f64,
    pub rel_change: f64,
    pub subset_size: usize,
    pub violations: usize,
    pub binaries: usize,
    pub objective: f64,
    pub status: Option<SolveStatus>,
    /// The subset was widened after an infeasible first attempt.
    pub retried: bool,
    /// No feasible reassignment was found; labels were left unchanged.
    pub kept_warm_start: bool,
    pub empty_clusters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassResult {
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub sse: f64,
    pub offset: f64,
    pub n_pseudo: usize,
    pub violations: usize,
    pub ml_violations: usize,
    pub repaired: usize,
    pub iterations: usize,
    pub stabilized_at: Option<usize>,
    pub max_binaries: usize,
    pub phase_times: PhaseTimes,
    pub trace: Vec<IterTrace>,
}

impl PassResult {
    pub fn assignment(&self) -> Assignment {
        Assignment::new_unchecked(self.labels.clone(), self.centroids.len())
    }
}

/// Runs the full pipeline. Only a contradiction between must-links and
/// cannot-links is reported as infeasible.
pub fn run_pass(data: &Dataset, constraints: &ConstraintSet, config: &PassConfig) -> Result<PassResult> {
    config.validate()?;
    let start = Instant::now();
    let mut times = PhaseTimes::default();

    let t = Instant::now();
    let (collapsed, cl) = collapse(data, constraints)?;
    times.collapse = t.elapsed().as_secs_f64();
    let pdata = &collapsed.data;
    let k = config.k;
    if k > pdata.n() {
        return Err(Error::TooManyClusters { k, n: pdata.n() });
    }

    let t = Instant::now();
    let mut model = initialize(pdata, config)?;
    let state = assign_nearest(pdata, &model)?;
    let mut labels = state.labels;
    let mut sse = state.sse;
    times.init = t.elapsed().as_secs_f64();

    let mut trace = Vec::new();
    let mut stabilized_at = None;
    if k == 1 {
        let t = Instant::now();
        let (next, _) = update_centroids(pdata, &labels, 1, Some(&model))?;
        model = next;
        sse = weighted_sse(pdata, &model, &labels);
        times.centroids += t.elapsed().as_secs_f64();
        let violations = count_cl_violations(labels.labels(), &cl);
        trace.push(IterTrace {
            iteration: 1,
            sse: sse + collapsed.offset,
            rel_change: 0.0,
            subset_size: 0,
            violations,
            binaries: 0,
            objective: 0.0,
            status: None,
            retried: false,
            kept_warm_start: false,
            empty_clusters: 0,
        });
        if violations == 0 {
            stabilized_at = Some(1);
        }
    } else {
        let temperature = match config.temperature {
            Some(t) => t,
            None => default_temperature(pdata, &model),
        };
        for iteration in 1..=config.max_iters {
            let step = iterate(pdata, &cl, &model, &labels, config, temperature, &mut times)
                .map_err(|e| Error::AtIteration {
                    iteration,
                    source: Box::new(e),
                })?;
            let rel_change = (sse - step.sse).abs() / sse.abs().max(f64::MIN_POSITIVE);
            let violations = count_cl_violations(step.labels.labels(), &cl);
            trace.push(IterTrace {
                iteration,
                sse: step.sse + collapsed.offset,
                rel_change,
                subset_size: step.subset_size,
                violations,
                binaries: step.binaries,
                objective: step.objective,
                status: step.status,
                retried: step.retried,
                kept_warm_start: step.kept_warm_start,
                empty_clusters: step.empty_clusters,
            });
            model = step.model;
            labels = step.labels;
            sse = step.sse;
            if violations == 0 && rel_change < config.sse_rel_tol {
                stabilized_at = Some(iteration);
                break;
            }
        }
    }

    let t = Instant::now();
    let (repaired_labels, repaired) = post_process(pdata, &model, &labels, &cl);
    let lifted = lift_assignment(&collapsed, &repaired_labels)?;
    let (centroids, _) = update_centroids(data, &lifted, k, Some(&model))?;
    let final_sse = weighted_sse(data, &centroids, &lifted);
    let (ml_violations, violations) = count_violations(lifted.labels(), constraints);
    times.post = t.elapsed().as_secs_f64();

    times.total = start.elapsed().as_secs_f64();
    times.other = (times.total
        - times.collapse
        - times.init
        - times.selection
        - times.ilp
        - times.centroids
        - times.post)
        .max(0.0);
    Ok(PassResult {
        labels: lifted.into_labels(),
        centroids: centroids.to_rows(),
        sse: final_sse,
        offset: collapsed.offset,
        n_pseudo: collapsed.n_pseudo(),
        violations,
        ml_violations,
        repaired,
        iterations: trace.len(),
        stabilized_at,
        max_binaries: trace.iter().map(|t| t.binaries).max().unwrap_or(0),
        phase_times: times,
        trace,
    })
}

fn initialize(data: &Dataset, config: &PassConfig) -> Result<CentroidModel> {
    let batch = config.batch_size.unwrap_or_else(|| default_batch(data.n()));
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best: Option<(f64, CentroidModel)> = None;
    for _ in 0..config.init_restarts.max(1) {
        let model = init_minibatch(data, config.k, batch, config.minibatch_iters, rng.random())?;
        let sse = assign_nearest(data, &model)?.sse;
        if best.as_ref().is_none_or(|(b, _)| sse < *b) {
            best = Some((sse, model));
        }
    }
    Ok(best.expect("at least one restart").1)
}

struct Step {
    model: CentroidModel,
    labels: Assignment,
    sse: f64,
    subset_size: usize,
    binaries: usize,
    objective: f64,
    status: Option<SolveStatus>,
    retried: bool,
    kept_warm_start: bool,
    empty_clusters: usize,
}

fn select(
    data: &Dataset,
    cl: &ConstraintSet,
    model: &CentroidModel,
    labels: &Assignment,
    config: &PassConfig,
    temperature: f64,
) -> Result<WorkingSubset> {
    match config.selector {
        Selector::Ca => select_ca(data, model, labels, cl, config.percentile),
        Selector::Ig => select_ig(data, model, labels, cl, temperature, config.alpha, config.beta),
    }
}

fn solve(model: &RestrictedModel, config: &PassConfig) -> RestrictedSolution {
    match config.solver {
        SolverKind::Exact => solve_exact(model, config.time_limit()),
        SolverKind::LocalSearch => solve_local_search(model, DEFAULT_MAX_SWEEPS).unwrap_or(RestrictedSolution {
            labels: model.warm_start().to_vec(),
            objective: model.objective(model.warm_start()),
            status: SolveStatus::Infeasible,
        }),
    }
}

fn iterate(
    data: &Dataset,
    cl: &ConstraintSet,
    model: &CentroidModel,
    labels: &Assignment,
    config: &PassConfig,
    temperature: f64,
    times: &mut PhaseTimes,
) -> Result<Step> {
    let k = config.k;
    let t = Instant::now();
    let subset = select(data, cl, model, labels, config, temperature)?;
    times.selection += t.elapsed().as_secs_f64();

    let t = Instant::now();
    let mut retried = false;
    let mut rm = build_model(data, model, labels, cl, &subset.indices, config.cand_width)?;
    let mut sol = solve(&rm, config);
    if sol.status == SolveStatus::Infeasible && !rm.is_empty() {
        let widened = widen(&subset, cl, data.n());
        if widened.len() > subset.indices.len() {
            retried = true;
            rm = build_model(data, model, labels, cl, &widened, config.cand_width)?;
            sol = solve(&rm, config);
        }
    }
    let kept_warm_start = sol.status == SolveStatus::Infeasible;
    let new_labels = if kept_warm_start {
        labels.clone()
    } else {
        Assignment::new_unchecked(extend(labels.labels(), &rm, &sol.labels), k)
    };
    times.ilp += t.elapsed().as_secs_f64();

    let t = Instant::now();
    let (next, _) = update_centroids(data, &new_labels, k, Some(model))?;
    let mut occupied = vec![false; k];
    new_labels.labels().iter().for_each(|&g| occupied[g] = true);
    let sse = weighted_sse(data, &next, &new_labels);
    times.centroids += t.elapsed().as_secs_f64();

    Ok(Step {
        model: next,
        labels: new_labels,
        sse,
        subset_size: rm.len(),
        binaries: rm.binaries(),
        objective: if kept_warm_start { 0.0 } else { sol.objective },
        status: (!rm.is_empty()).then_some(sol.status),
        retried,
        kept_warm_start,
        empty_clusters: occupied.iter().filter(|o| !**o).count(),
    })
}

/// The subset plus every cannot-link neighbour of a violator.
fn widen(subset: &WorkingSubset, cl: &ConstraintSet, n: usize) -> Vec<usize> {
    let adj = cl.cl_adjacency(n);
    let mut keep = vec![false; n];
    for &i in &subset.indices {
        keep[i] = true;
    }
    for &v in &subset.violations {
        for &u in &adj[v] {
            keep[u] = true;
        }
    }
    (0..n).filter(|&i| keep[i]).collect()
}

/// Greedy repair of residual cannot-link violations.
///
/// Violated pairs are visited in order; for each, every move of either
/// endpoint to a cluster unused by its cannot-link neighbours is costed by
/// its weighted SSE increase, and the cheapest is applied (ties by lower
/// point index, then lower cluster). Pairs with no such move stay violated.
/// Returns the repaired labels and the number of moves made.
pub fn post_process(
    data: &Dataset,
    model: &CentroidModel,
    labels: &Assignment,
    cl: &ConstraintSet,
) -> (Assignment, usize) {
    let n = data.n();
    let k = model.k();
    let adj = cl.cl_adjacency(n);
    let mut out = labels.labels().to_vec();
    let mut moves = 0;
    for p in cl.cl() {
        if out[p.lo()] != out[p.hi()] {
            continue;
        }
        let mut best: Option<(f64, usize, usize)> = None;
        for u in [p.lo(), p.hi()] {
            let dist = model.distances(data.point(u));
            let w = data.weight(u);
            for g in 0..k {
                if g == out[u] || adj[u].iter().any(|&j| out[j] == g) {
                    continue;
                }
                let cost = w * (dist[g] - dist[out[u]]);
                if best.is_none_or(|(b, _, _)| cost < b) {
                    best = Some((cost, u, g));
                }
            }
        }
        if let Some((_, u, g)) = best {
            out[u] = g;
            moves += 1;
        }
    }
    (Assignment::new_unchecked(out, k), moves)
}

/// Recomputes the final SSE of a result from scratch.
pub fn recompute_sse(data: &Dataset, result: &PassResult) -> f64 {
    (0..data.n())
        .map(|i| {
            let c = &result.centroids[result.labels[i]];
            data.weight(i) * crate::data::sq_dist(data.point(i), c)
        })
        .sum()
}
