//! Working-subset selectors.
//!
//! Both selectors always contain the cannot-link violation set `V`, which is
//! what lets a restricted reassignment on the subset extend to a feasible
//! labeling of the whole instance.
//!
//! * Margin selector: signed margin `m(i) = d(i, current) - min_{g != current} d(i, g)`;
//!   points with `m(i) > -tau` are ambiguous, where `tau` is the `p`-th
//!   percentile of the margin magnitudes.
//! * Fisher-Rao selector: softmax posteriors over squared distances, an
//!   ambiguity score from the top-two probabilities, and a budget
//!   `m = min(alpha n, |V| + beta k ln n)` filled greedily by score.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use serde::{Deserialize, Serialize};

use crate::data::{Assignment, ConstraintSet, Dataset};
use crate::error::{Error, Result};
use crate::kmeans::CentroidModel;

pub const DEFAULT_PERCENTILE: f64 = 20.0;
pub const DEFAULT_ALPHA: f64 = 0.2;
pub const DEFAULT_BETA: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkingSubset {
    /// Selected indices, ascending.
    pub indices: Vec<usize>,
    /// Endpoints of violated cannot-links, ascending; always a subset of `indices`.
    pub violations: Vec<usize>,
    pub margins: Vec<f64>,
    /// Fisher-Rao scores (score selector only).
    pub scores: Option<Vec<f64>>,
    /// Margin threshold (margin selector only).
    pub tau: Option<f64>,
    /// Budget (score selector only).
    pub budget: Option<usize>,
}

impl WorkingSubset {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

fn check_inputs(data: &Dataset, model: &CentroidModel, labels: &Assignment) -> Result<()> {
    if model.k() < 2 {
        return Err(Error::InvalidInput("margins need k >= 2".into()));
    }
    if data.d() != model.d() {
        return Err(Error::DimensionMismatch {
            expected: data.d(),
            found: model.d(),
        });
    }
    if labels.len() != data.n() {
        return Err(Error::DimensionMismatch {
            expected: data.n(),
            found: labels.len(),
        });
    }
    if labels.k() > model.k() {
        return Err(Error::InvalidInput("labels reference missing centroids".into()));
    }
    Ok(())
}

/// Signed margins; positive means a strictly nearer cluster exists.
pub fn compute_margins(data: &Dataset, model: &CentroidModel, labels: &Assignment) -> Result<Vec<f64>> {
    check_inputs(data, model, labels)?;
    Ok(data
        .iter()
        .zip(labels.labels())
        .map(|(x, &cur)| {
            let dist = model.distances(x);
            let best_other = dist
                .iter()
                .enumerate()
                .filter(|&(g, _)| g != cur)
                .map(|(_, &v)| v)
                .fold(f64::INFINITY, f64::min);
            dist[cur] - best_other
        })
        .collect())
}

/// Endpoints of every cannot-link pair whose endpoints share a label, ascending.
pub fn find_violations(labels: &Assignment, cl: &ConstraintSet) -> Vec<usize> {
    let mut v: Vec<usize> = cl
        .cl()
        .iter()
        .filter(|p| labels.get(p.lo()) == labels.get(p.hi()))
        .flat_map(|p| [p.lo(), p.hi()])
        .collect();
    v.sort_unstable();
    v.dedup();
    v
}

/// Number of violated cannot-link pairs.
pub fn count_cl_violations(labels: &[usize], cl: &ConstraintSet) -> usize {
    cl.cl().iter().filter(|p| labels[p.lo()] == labels[p.hi()]).count()
}

/// `p`-th percentile with linear interpolation between order statistics.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = (p / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Margin-based selector: `S = V ∪ {i : m(i) > -tau}`.
pub fn select_ca(
    data: &Dataset,
    model: &CentroidModel,
    labels: &Assignment,
    cl: &ConstraintSet,
    p: f64,
) -> Result<WorkingSubset> {
    if !(p > 0.0 && p < 100.0) {
        return Err(Error::InvalidInput(format!("percentile must lie in (0, 100), got {p}")));
    }
    let margins = compute_margins(data, model, labels)?;
    let violations = find_violations(labels, cl);
    let magnitudes: Vec<f64> = margins.iter().map(|m| m.abs()).collect();
    let tau = percentile(&magnitudes, p);
    let mut selected = vec![false; data.n()];
    for &i in &violations {
        selected[i] = true;
    }
    for (i, &m) in margins.iter().enumerate() {
        if m > -tau {
            selected[i] = true;
        }
    }
    let indices = (0..data.n()).filter(|&i| selected[i]).collect();
    Ok(WorkingSubset {
        indices,
        violations,
        margins,
        scores: None,
        tau: Some(tau),
        budget: None,
    })
}

/// Softmax over `-||x_i - mu_g||^2 / T`, computed with a max shift.
pub fn soft_assignments(data: &Dataset, model: &CentroidModel, temperature: f64) -> Result<Vec<Vec<f64>>> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::InvalidInput(format!("temperature must be positive, got {temperature}")));
    }
    if data.d() != model.d() {
        return Err(Error::DimensionMismatch {
            expected: data.d(),
            found: model.d(),
        });
    }
    Ok(data.iter().map(|x| softmax_neg(&model.distances(x), temperature)).collect())
}

fn softmax_neg(dist: &[f64], temperature: f64) -> Vec<f64> {
    let min = dist.iter().copied().fold(f64::INFINITY, f64::min);
    let mut p: Vec<f64> = dist.iter().map(|d| (-(d - min) / temperature).exp()).collect();
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= z);
    p
}

/// Indices of the two largest entries in one pass; lowest index wins ties.
fn top_two(p: &[f64]) -> (usize, usize) {
    let (mut a, mut b) = (usize::MAX, usize::MAX);
    for (i, &v) in p.iter().enumerate() {
        if a == usize::MAX || v > p[a] {
            b = a;
            a = i;
        } else if b == usize::MAX || v > p[b] {
            b = i;
        }
    }
    (a, b)
}

/// Normalized Fisher-Rao closeness of `(q1, q2)` to `(1/2, 1/2)`.
///
/// `J = 1 - (2/pi) * 2 acos((sqrt(q1) + sqrt(q2)) / sqrt(2))`, in `[0, 1]`.
pub fn pair_ambiguity(q1: f64, q2: f64) -> f64 {
    let cos = ((q1.sqrt() + q2.sqrt()) * FRAC_1_SQRT_2).clamp(-1.0, 1.0);
    let d_fr = 2.0 * cos.acos();
    (1.0 - 2.0 / PI * d_fr).clamp(0.0, 1.0)
}

/// Fisher-Rao ambiguity score of a probability vector (length >= 2).
pub fn fisher_rao_score(p: &[f64]) -> f64 {
    assert!(p.len() >= 2, "score needs at least two clusters");
    let (a, b) = top_two(p);
    let s = p[a] + p[b];
    if !(s > 0.0) {
        return 1.0;
    }
    pair_ambiguity(p[a] / s, p[b] / s)
}

/// `m = max(|V|, min(ceil(alpha n), |V| + ceil(beta k ln n)))`, at most `n`.
pub fn budget(n: usize, k: usize, n_violations: usize, alpha: f64, beta: f64) -> usize {
    if n == 0 {
        return 0;
    }
    let cap = (alpha * n as f64).ceil() as usize;
    let extra = (beta * k as f64 * (n as f64).ln()).ceil().max(0.0) as usize;
    let m = cap.min(n_violations + extra).max(n_violations);
    m.min(n)
}

/// Data-driven default temperature: median nearest-centroid squared distance.
pub fn default_temperature(data: &Dataset, model: &CentroidModel) -> f64 {
    let nearest: Vec<f64> = data.iter().map(|x| model.nearest(x).1).collect();
    let med = percentile(&nearest, 50.0);
    if med > 0.0 && med.is_finite() {
        return med;
    }
    let mean = nearest.iter().sum::<f64>() / nearest.len() as f64;
    if mean > 0.0 && mean.is_finite() {
        mean
    } else {
        1.0
    }
}

/// Score selector: `V` plus the `m - |V|` highest-scoring other points.
pub fn select_ig(
    data: &Dataset,
    model: &CentroidModel,
    labels: &Assignment,
    cl: &ConstraintSet,
    temperature: f64,
    alpha: f64,
    beta: f64,
) -> Result<WorkingSubset> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidInput(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    if !(beta > 0.0) {
        return Err(Error::InvalidInput(format!("beta must be positive, got {beta}")));
    }
    let margins = compute_margins(data, model, labels)?;
    let violations = find_violations(labels, cl);
    let probs = soft_assignments(data, model, temperature)?;
    let scores: Vec<f64> = probs.iter().map(|p| fisher_rao_score(p)).collect();
    let m = budget(data.n(), model.k(), violations.len(), alpha, beta);
    let indices = greedy_fill(&scores, &violations, m);
    Ok(WorkingSubset {
        indices,
        violations,
        margins,
        scores: Some(scores),
        tau: None,
        budget: Some(m),
    })
}

/// `required` plus the `m - |required|` best-scoring remaining indices
/// (score descending, index ascending), returned ascending.
pub(crate) fn greedy_fill(scores: &[f64], required: &[usize], m: usize) -> Vec<usize> {
    let mut in_set = vec![false; scores.len()];
    for &i in required {
        in_set[i] = true;
    }
    let mut rest: Vec<usize> = (0..scores.len()).filter(|&i| !in_set[i]).collect();
    rest.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    for &i in rest.iter().take(m.saturating_sub(required.len())) {
        in_set[i] = true;
    }
    (0..scores.len()).filter(|&i| in_set[i]).collect()
}
