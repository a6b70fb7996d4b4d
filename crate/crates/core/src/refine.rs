//! QAOA refinement of a finished run on a small ambiguous subset.

use serde::{Deserialize, Serialize};

use crate::collapse::{collapse, lift_assignment};
use crate::data::{Assignment, ConstraintSet, Dataset};
use crate::driver::PassResult;
use crate::error::Result;
use crate::kmeans::{update_centroids, weighted_sse, CentroidModel};
use crate::metrics::count_violations;
use crate::qaoa::{run_qaoa_p1, DEFAULT_SHOTS};
use crate::qubo::{build_qubo, ExtraEdges, PenaltyMode, MAX_DENSE_VARS};
use crate::restricted::{build_model, extend};
use crate::selection::{default_temperature, find_violations, fisher_rao_score, greedy_fill, soft_assignments};

pub const DEFAULT_REFINE_VARS: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineConfig {
    /// Upper bound on `|S| k`; at most the dense simulation limit.
    pub max_vars: usize,
    pub shots: usize,
    pub seed: u64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            max_vars: DEFAULT_REFINE_VARS,
            shots: DEFAULT_SHOTS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineReport {
    /// Pseudo-point indices that were re-optimized.
    pub subset: Vec<usize>,
    pub n_vars: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub beta: f64,
    pub expected_energy: f64,
    pub warm_energy: f64,
    pub best_energy: f64,
    pub accepted: bool,
    pub sse_before: f64,
    pub sse_after: f64,
}

/// Re-optimizes the `max_vars / k` most ambiguous pseudo-points (violators
/// first) with one QAOA layer and accepts the best sampled feasible string
/// if it lowers the restricted objective.
pub fn qaoa_refine(
    data: &Dataset,
    constraints: &ConstraintSet,
    pass: &PassResult,
    config: &RefineConfig,
) -> Result<(PassResult, RefineReport)> {
    let (collapsed, cl) = collapse(data, constraints)?;
    let pdata = &collapsed.data;
    let k = pass.centroids.len();
    let model = CentroidModel::from_rows(&pass.centroids)?;
    let labels = Assignment::new(
        collapsed.components.iter().map(|c| pass.labels[c[0]]).collect(),
        k,
    )?;
    let mut report = RefineReport {
        subset: Vec::new(),
        n_vars: 0,
        lambda: 0.0,
        gamma: 0.0,
        beta: 0.0,
        expected_energy: 0.0,
        warm_energy: 0.0,
        best_energy: 0.0,
        accepted: false,
        sse_before: pass.sse,
        sse_after: pass.sse,
    };
    let per_sample = config.max_vars.min(MAX_DENSE_VARS) / k.max(1);
    if k < 2 || per_sample == 0 {
        return Ok((pass.clone(), report));
    }

    let temperature = default_temperature(pdata, &model);
    let scores: Vec<f64> = soft_assignments(pdata, &model, temperature)?
        .iter()
        .map(|p| fisher_rao_score(p))
        .collect();
    let mut violations = find_violations(&labels, &cl);
    violations.truncate(per_sample);
    let subset = greedy_fill(&scores, &violations, per_sample.min(pdata.n()));
    let rm = build_model(pdata, &model, &labels, &cl, &subset, k)?;
    report.subset = subset;
    report.n_vars = rm.len() * k;
    if rm.is_empty() || !rm.is_feasible(rm.warm_start()) {
        return Ok((pass.clone(), report));
    }

    let qubo = build_qubo(&rm, &ExtraEdges::default(), PenaltyMode::Search)?;
    let run = run_qaoa_p1(&qubo, &qubo.encode(rm.warm_start()), config.shots, config.seed)?;
    report.lambda = qubo.lambda();
    report.gamma = run.gamma;
    report.beta = run.beta;
    report.expected_energy = run.expected_energy;
    report.warm_energy = run.warm_energy;
    report.best_energy = run.best_energy;

    let Some(local) = qubo.decode(&run.best) else {
        return Ok((pass.clone(), report));
    };
    if !rm.is_feasible(&local) || rm.objective(&local) >= 0.0 {
        return Ok((pass.clone(), report));
    }
    let pseudo = Assignment::new(extend(labels.labels(), &rm, &local), k)?;
    let (pmodel, _) = update_centroids(pdata, &pseudo, k, Some(&model))?;
    let lifted = lift_assignment(&collapsed, &pseudo)?;
    let (centroids, _) = update_centroids(data, &lifted, k, Some(&pmodel))?;
    let sse = weighted_sse(data, &centroids, &lifted);
    if sse > pass.sse {
        return Ok((pass.clone(), report));
    }
    let (ml_violations, violations) = count_violations(lifted.labels(), constraints);
    report.accepted = true;
    report.sse_after = sse;
    let mut out = pass.clone();
    out.labels = lifted.into_labels();
    out.centroids = centroids.to_rows();
    out.sse = sse;
    out.violations = violations;
    out.ml_violations = ml_violations;
    Ok((out, report))
}
