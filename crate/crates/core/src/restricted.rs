//! Restricted 0-1 reassignment on a working subset.
//!
//! Each selected point `i` picks one cluster from a candidate list `K_i` at
//! cost `Δ_{i,g} = w_i (||x_i - μ_g||^2 - ||x_i - μ_cur(i)||^2)`. Cannot-links
//! with both ends selected are enforced directly; cannot-links leaving the
//! subset become per-point forbidden clusters, so any feasible solution
//! extends to a feasible labeling of the whole instance.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::data::{Assignment, ConstraintSet, Dataset};
use crate::error::{Error, Result};
use crate::kmeans::CentroidModel;
use crate::selection::find_violations;

pub const DEFAULT_CANDIDATE_WIDTH: usize = 4;
pub const DEFAULT_TIME_LIMIT: Duration = Duration::from_secs(10);
pub const DEFAULT_MAX_SWEEPS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    FeasibleHeuristic,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RestrictedModel {
    subset: Vec<usize>,
    k: usize,
    candidates: Vec<Vec<usize>>,
    deltas: Vec<Vec<f64>>,
    forbidden: Vec<Vec<usize>>,
    internal_cl: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
    warm_start: Vec<usize>,
}

impl RestrictedModel {
    /// Assembles a model from local parts. Indices in `internal_cl`,
    /// `candidates` and `warm_start` are local (positions in `subset`).
    /// Forbidden clusters are stripped from the candidate lists.
    pub fn from_parts(
        subset: Vec<usize>,
        k: usize,
        mut candidates: Vec<Vec<usize>>,
        deltas: Vec<Vec<f64>>,
        forbidden: Vec<Vec<usize>>,
        internal_cl: Vec<(usize, usize)>,
        warm_start: Vec<usize>,
    ) -> Result<Self> {
        let m = subset.len();
        if k == 0 {
            return Err(Error::InvalidInput("k must be >= 1".into()));
        }
        for len in [candidates.len(), deltas.len(), forbidden.len(), warm_start.len()] {
            if len != m {
                return Err(Error::DimensionMismatch { expected: m, found: len });
            }
        }
        if let Some(row) = deltas.iter().find(|row| row.len() != k) {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: row.len(),
            });
        }
        if deltas.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("deltas must be finite".into()));
        }
        let out_of_range = |g: &usize| *g >= k;
        if candidates.iter().flatten().any(out_of_range)
            || forbidden.iter().flatten().any(out_of_range)
            || warm_start.iter().any(out_of_range)
        {
            return Err(Error::InvalidInput("cluster index out of range".into()));
        }
        let mut neighbors = vec![Vec::new(); m];
        let mut edges = Vec::with_capacity(internal_cl.len());
        for &(a, b) in &internal_cl {
            if a >= m || b >= m {
                return Err(Error::IndexOutOfRange { index: a.max(b), n: m });
            }
            if a == b {
                return Err(Error::SelfPair(a));
            }
            edges.push((a.min(b), a.max(b)));
        }
        edges.sort_unstable();
        edges.dedup();
        for &(a, b) in &edges {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        neighbors.iter_mut().for_each(|l| l.sort_unstable());
        for (cand, forb) in candidates.iter_mut().zip(&forbidden) {
            cand.sort_unstable();
            cand.dedup();
            cand.retain(|g| !forb.contains(g));
        }
        Ok(Self {
            subset,
            k,
            candidates,
            deltas,
            forbidden,
            internal_cl: edges,
            neighbors,
            warm_start,
        })
    }

    pub fn subset(&self) -> &[usize] {
        &self.subset
    }

    pub fn len(&self) -> usize {
        self.subset.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subset.is_empty()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn candidates(&self, i: usize) -> &[usize] {
        &self.candidates[i]
    }

    pub fn delta(&self, i: usize, g: usize) -> f64 {
        self.deltas[i][g]
    }

    pub fn deltas(&self, i: usize) -> &[f64] {
        &self.deltas[i]
    }

    pub fn forbidden(&self, i: usize) -> &[usize] {
        &self.forbidden[i]
    }

    pub fn internal_cl(&self) -> &[(usize, usize)] {
        &self.internal_cl
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn warm_start(&self) -> &[usize] {
        &self.warm_start
    }

    /// Number of 0-1 variables, `Σ |K_i|`.
    pub fn binaries(&self) -> usize {
        self.candidates.iter().map(Vec::len).sum()
    }

    pub fn objective(&self, labels: &[usize]) -> f64 {
        labels.iter().enumerate().map(|(i, &g)| self.deltas[i][g]).sum()
    }

    pub fn is_feasible(&self, labels: &[usize]) -> bool {
        labels.len() == self.len()
            && labels
                .iter()
                .enumerate()
                .all(|(i, g)| self.candidates[i].contains(g))
            && self.internal_cl.iter().all(|&(a, b)| labels[a] != labels[b])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestrictedSolution {
    /// One label per subset position.
    pub labels: Vec<usize>,
    pub objective: f64,
    pub status: SolveStatus,
}

/// Builds the restricted problem for `subset` (pseudo-point indices).
///
/// `K_i` holds the `width` nearest centroids, widened to all clusters for
/// violators and their cannot-link neighbours, plus the current label and the
/// current labels of cannot-link neighbours. Labels of cannot-link partners
/// outside the subset are forbidden; if that empties `K_i` it is reset to all
/// non-forbidden clusters.
pub fn build_model(
    data: &Dataset,
    model: &CentroidModel,
    labels: &Assignment,
    cl: &ConstraintSet,
    subset: &[usize],
    width: usize,
) -> Result<RestrictedModel> {
    let n = data.n();
    let k = model.k();
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: labels.len(),
        });
    }
    if data.d() != model.d() {
        return Err(Error::DimensionMismatch {
            expected: data.d(),
            found: model.d(),
        });
    }
    if let Some(&bad) = subset.iter().find(|&&i| i >= n) {
        return Err(Error::IndexOutOfRange { index: bad, n });
    }
    let adj = cl.cl_adjacency(n);
    let mut local = vec![usize::MAX; n];
    for (pos, &i) in subset.iter().enumerate() {
        local[i] = pos;
    }
    let mut near_violation = vec![false; n];
    for v in find_violations(labels, cl) {
        near_violation[v] = true;
        for &u in &adj[v] {
            near_violation[u] = true;
        }
    }

    let m = subset.len();
    let mut candidates = Vec::with_capacity(m);
    let mut deltas = Vec::with_capacity(m);
    let mut forbidden = Vec::with_capacity(m);
    let mut internal_cl = Vec::new();
    let mut warm = Vec::with_capacity(m);
    for (pos, &i) in subset.iter().enumerate() {
        let cur = labels.get(i);
        let dist = model.distances(data.point(i));
        let w = data.weight(i);
        deltas.push(dist.iter().map(|&d| w * (d - dist[cur])).collect::<Vec<f64>>());

        let mut cand: Vec<usize> = if near_violation[i] || width >= k {
            (0..k).collect()
        } else {
            let mut order: Vec<usize> = (0..k).collect();
            order.sort_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(a.cmp(&b)));
            order.truncate(width);
            order
        };
        cand.push(cur);
        let mut forb = Vec::new();
        for &j in &adj[i] {
            cand.push(labels.get(j));
            if local[j] == usize::MAX {
                forb.push(labels.get(j));
            } else if pos < local[j] {
                internal_cl.push((pos, local[j]));
            }
        }
        forb.sort_unstable();
        forb.dedup();
        cand.sort_unstable();
        cand.dedup();
        cand.retain(|g| !forb.contains(g));
        if cand.is_empty() {
            cand = (0..k).filter(|g| !forb.contains(g)).collect();
        }
        candidates.push(cand);
        forbidden.push(forb);
        warm.push(cur);
    }
    RestrictedModel::from_parts(subset.to_vec(), k, candidates, deltas, forbidden, internal_cl, warm)
}

/// Exact branch-and-bound over the restricted model.
///
/// The internal cannot-link graph is split into connected components, each
/// solved independently; isolated points take their cheapest candidate. The
/// incumbent is seeded from local search. If the time limit is hit, the best
/// labeling found so far is returned with status `FeasibleHeuristic`.
pub fn solve_exact(model: &RestrictedModel, time_limit: Duration) -> RestrictedSolution {
    let deadline = Instant::now() + time_limit;
    let m = model.len();
    if model.candidates.iter().any(Vec::is_empty) {
        return infeasible(model);
    }
    let seed = solve_local_search(model, DEFAULT_MAX_SWEEPS).ok().map(|s| s.labels);

    let mut labels = vec![usize::MAX; m];
    let mut timed_out = false;
    for comp in components(model) {
        if comp.len() == 1 {
            let i = comp[0];
            labels[i] = cheapest(model, i, |_| true).expect("nonempty candidates");
            continue;
        }
        let incumbent = seed.as_ref().map(|s| comp.iter().map(|&i| s[i]).collect::<Vec<_>>());
        let mut bb = BranchAndBound::new(model, &comp, incumbent, deadline);
        bb.search();
        timed_out |= bb.timed_out;
        match bb.best {
            Some(best) => {
                for (&i, g) in comp.iter().zip(best) {
                    labels[i] = g;
                }
            }
            None => return infeasible(model),
        }
    }
    let objective = model.objective(&labels);
    let status = if timed_out {
        SolveStatus::FeasibleHeuristic
    } else {
        SolveStatus::Optimal
    };
    RestrictedSolution {
        labels,
        objective,
        status,
    }
}

fn infeasible(model: &RestrictedModel) -> RestrictedSolution {
    RestrictedSolution {
        labels: model.warm_start.clone(),
        objective: model.objective(&model.warm_start),
        status: SolveStatus::Infeasible,
    }
}

/// Cheapest candidate of `i` accepted by `ok`; ties prefer the warm-start
/// label, then the lower cluster index.
fn cheapest(model: &RestrictedModel, i: usize, ok: impl Fn(usize) -> bool) -> Option<usize> {
    let cur = model.warm_start[i];
    model.candidates[i]
        .iter()
        .copied()
        .filter(|&g| ok(g))
        .min_by(|&a, &b| {
            model.deltas[i][a]
                .total_cmp(&model.deltas[i][b])
                .then((a != cur).cmp(&(b != cur)))
                .then(a.cmp(&b))
        })
}

/// Connected components of the internal cannot-link graph, each ascending,
/// ordered by smallest member.
fn components(model: &RestrictedModel) -> Vec<Vec<usize>> {
    let m = model.len();
    let mut seen = vec![false; m];
    let mut out = Vec::new();
    for start in 0..m {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut comp = vec![start];
        let mut head = 0;
        while head < comp.len() {
            let u = comp[head];
            head += 1;
            for &v in &model.neighbors[u] {
                if !seen[v] {
                    seen[v] = true;
                    comp.push(v);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

struct BranchAndBound<'a> {
    model: &'a RestrictedModel,
    comp: &'a [usize],
    /// Component-local neighbour lists.
    adj: Vec<Vec<usize>>,
    /// `blocked[p][g]` counts assigned neighbours of `p` using cluster `g`.
    blocked: Vec<Vec<u32>>,
    assigned: Vec<Option<usize>>,
    /// Candidates per position sorted by (Δ, warm-start first, index).
    order: Vec<Vec<usize>>,
    best: Option<Vec<usize>>,
    best_cost: f64,
    deadline: Instant,
    nodes: u64,
    timed_out: bool,
}

impl<'a> BranchAndBound<'a> {
    fn new(model: &'a RestrictedModel, comp: &'a [usize], incumbent: Option<Vec<usize>>, deadline: Instant) -> Self {
        let mut pos = std::collections::HashMap::with_capacity(comp.len());
        for (p, &i) in comp.iter().enumerate() {
            pos.insert(i, p);
        }
        let adj = comp
            .iter()
            .map(|&i| model.neighbors[i].iter().map(|j| pos[j]).collect())
            .collect();
        let order = comp
            .iter()
            .map(|&i| {
                let cur = model.warm_start[i];
                let mut c = model.candidates[i].clone();
                c.sort_by(|&a, &b| {
                    model.deltas[i][a]
                        .total_cmp(&model.deltas[i][b])
                        .then((a != cur).cmp(&(b != cur)))
                        .then(a.cmp(&b))
                });
                c
            })
            .collect();
        let (best, best_cost) = match incumbent {
            Some(labels) => {
                let cost = comp.iter().zip(&labels).map(|(&i, &g)| model.deltas[i][g]).sum();
                (Some(labels), cost)
            }
            None => (None, f64::INFINITY),
        };
        Self {
            model,
            comp,
            adj,
            blocked: vec![vec![0; model.k]; comp.len()],
            assigned: vec![None; comp.len()],
            order,
            best,
            best_cost,
            deadline,
            nodes: 0,
            timed_out: false,
        }
    }

    fn delta(&self, p: usize, g: usize) -> f64 {
        self.model.deltas[self.comp[p]][g]
    }

    fn available(&self, p: usize) -> impl Iterator<Item = usize> + '_ {
        self.order[p].iter().copied().filter(move |&g| self.blocked[p][g] == 0)
    }

    fn search(&mut self) {
        self.dfs(0.0);
    }

    fn dfs(&mut self, cost: f64) {
        if self.timed_out {
            return;
        }
        self.nodes += 1;
        if self.nodes % 1024 == 0 && Instant::now() >= self.deadline {
            self.timed_out = true;
            return;
        }
        // Minimum-remaining-values branching; the bound sums per-point minima.
        let mut branch: Option<(usize, usize)> = None;
        let mut bound = cost;
        for p in 0..self.comp.len() {
            if self.assigned[p].is_some() {
                continue;
            }
            let mut count = 0;
            let mut min = f64::INFINITY;
            for g in self.available(p) {
                if count == 0 {
                    min = self.delta(p, g);
                }
                count += 1;
            }
            if count == 0 {
                return;
            }
            bound += min;
            if branch.is_none_or(|(_, c)| count < c) {
                branch = Some((p, count));
            }
        }
        let Some((p, _)) = branch else {
            if cost < self.best_cost {
                self.best_cost = cost;
                self.best = Some(self.assigned.iter().map(|g| g.expect("complete")).collect());
            }
            return;
        };
        if bound >= self.best_cost {
            return;
        }
        let choices: Vec<usize> = self.available(p).collect();
        for g in choices {
            self.assigned[p] = Some(g);
            for q in 0..self.adj[p].len() {
                let nb = self.adj[p][q];
                self.blocked[nb][g] += 1;
            }
            self.dfs(cost + self.delta(p, g));
            for q in 0..self.adj[p].len() {
                let nb = self.adj[p][q];
                self.blocked[nb][g] -= 1;
            }
            self.assigned[p] = None;
            if self.timed_out {
                return;
            }
        }
    }
}

/// Deterministic feasible local search.
///
/// Infeasible warm-start points are first repaired in index order by moving
/// each to its cheapest candidate unused by its cannot-link neighbours. Each
/// sweep then moves every point to its cheapest conflict-free candidate and
/// tries joint moves on every internal cannot-link edge. The objective is
/// non-increasing and the result is always feasible.
pub fn solve_local_search(model: &RestrictedModel, max_sweeps: usize) -> Result<RestrictedSolution> {
    let m = model.len();
    let mut labels = model.warm_start.clone();
    for i in 0..m {
        let conflicted = !model.candidates[i].contains(&labels[i])
            || model.neighbors[i].iter().any(|&j| labels[j] == labels[i]);
        if conflicted {
            let lab = &labels;
            let g = cheapest(model, i, |g| model.neighbors[i].iter().all(|&j| lab[j] != g))
                .ok_or(Error::RepairFailed)?;
            labels[i] = g;
        }
    }
    debug_assert!(model.is_feasible(&labels));

    for _ in 0..max_sweeps {
        let mut improved = false;
        for i in 0..m {
            let lab = &labels;
            let g = cheapest(model, i, |g| model.neighbors[i].iter().all(|&j| lab[j] != g))
                .expect("current label is conflict-free");
            if model.deltas[i][g] < model.deltas[i][labels[i]] {
                labels[i] = g;
                improved = true;
            }
        }
        for &(u, v) in &model.internal_cl {
            if let Some((gu, gv)) = best_pair_move(model, &labels, u, v) {
                labels[u] = gu;
                labels[v] = gv;
                improved = true;
            }
        }
        if !improved {
            break;
        }
    }
    Ok(RestrictedSolution {
        objective: model.objective(&labels),
        labels,
        status: SolveStatus::FeasibleHeuristic,
    })
}

fn best_pair_move(model: &RestrictedModel, labels: &[usize], u: usize, v: usize) -> Option<(usize, usize)> {
    let free = |p: usize, other: usize, g: usize| {
        model.neighbors[p]
            .iter()
            .all(|&j| j == other || labels[j] != g)
    };
    let current = model.deltas[u][labels[u]] + model.deltas[v][labels[v]];
    let mut best: Option<(f64, usize, usize)> = None;
    for &gu in &model.candidates[u] {
        if !free(u, v, gu) {
            continue;
        }
        for &gv in &model.candidates[v] {
            if gv == gu || !free(v, u, gv) {
                continue;
            }
            let c = model.deltas[u][gu] + model.deltas[v][gv];
            if c < current && best.is_none_or(|(b, _, _)| c < b) {
                best = Some((c, gu, gv));
            }
        }
    }
    best.map(|(_, gu, gv)| (gu, gv))
}

/// Writes subset labels back into a full labeling.
pub fn extend(full: &[usize], model: &RestrictedModel, local: &[usize]) -> Vec<usize> {
    let mut out = full.to_vec();
    for (&i, &g) in model.subset.iter().zip(local) {
        out[i] = g;
    }
    out
}
