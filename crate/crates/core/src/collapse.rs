//! Must-link contraction.
//!
//! Every connected component of the must-link graph becomes one pseudo-point
//! placed at the component mean and weighted by the component size. The
//! within-component scatter is independent of the centroids, so it is carried
//! as a constant offset:
//!
//! ```text
//! sse(original, mu) = sum_j w_j * ||mu_ml_j - mu_{g(j)}||^2 + sum_j (t_j - 1) tr(Sigma_j)
//! ```
//!
//! Cannot-link pairs are rewritten over pseudo indices; a cannot-link inside
//! one component makes the instance infeasible.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::data::{sq_dist, Assignment, ConstraintSet, Dataset, Pair};
use crate::error::{Error, Result};

/// Disjoint-set forest with path compression and union by size.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        let mut cur = x;
        while self.parent[cur] != root {
            let next = self.parent[cur];
            self.parent[cur] = root;
            cur = next;
        }
        root
    }

    /// Returns true if `a` and `b` were in different sets.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        true
    }
}

/// The contracted instance together with the lifting map back to original indices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CollapsedInstance {
    pub data: Dataset,
    /// Sum of within-component scatter, `sum_j (t_j - 1) tr(Sigma_j)`.
    pub offset: f64,
    /// Original index -> pseudo index.
    pub lift: Vec<usize>,
    /// Original indices of each pseudo-point, ascending. Ordered by smallest member.
    pub components: Vec<Vec<usize>>,
    /// `tr(Sigma_j)` per pseudo-point with the `t - 1` denominator; 0 for singletons.
    pub traces: Vec<f64>,
}

impl CollapsedInstance {
    pub fn n_pseudo(&self) -> usize {
        self.data.n()
    }

    pub fn n_original(&self) -> usize {
        self.lift.len()
    }

    pub fn is_identity(&self) -> bool {
        self.components.len() == self.lift.len()
    }
}

/// Contracts must-link components and projects cannot-links onto pseudo indices.
///
/// The returned constraint set has no must-links and at most one cannot-link
/// per pseudo pair.
pub fn collapse(dataset: &Dataset, constraints: &ConstraintSet) -> Result<(CollapsedInstance, ConstraintSet)> {
    let n = dataset.n();
    if constraints.max_index_bound() > n {
        return Err(Error::IndexOutOfRange {
            index: constraints.max_index_bound() - 1,
            n,
        });
    }
    let mut uf = UnionFind::new(n);
    for p in constraints.ml() {
        uf.union(p.lo(), p.hi());
    }

    // Pseudo indices follow the first occurrence of each root in index order.
    let mut root_to_pseudo = vec![usize::MAX; n];
    let mut components: Vec<Vec<usize>> = Vec::new();
    let mut lift = vec![0; n];
    for i in 0..n {
        let r = uf.find(i);
        if root_to_pseudo[r] == usize::MAX {
            root_to_pseudo[r] = components.len();
            components.push(Vec::new());
        }
        let j = root_to_pseudo[r];
        components[j].push(i);
        lift[i] = j;
    }

    let d = dataset.d();
    let mut points = Vec::with_capacity(components.len() * d);
    let mut weights = Vec::with_capacity(components.len());
    let mut traces = Vec::with_capacity(components.len());
    let mut offset = 0.0;
    for comp in &components {
        let w: f64 = comp.iter().map(|&i| dataset.weight(i)).sum();
        let mut mean = vec![0.0; d];
        for &i in comp {
            let wi = dataset.weight(i);
            for (m, x) in mean.iter_mut().zip(dataset.point(i)) {
                *m += wi * x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= w);
        let scatter: f64 = comp
            .iter()
            .map(|&i| dataset.weight(i) * sq_dist(dataset.point(i), &mean))
            .sum();
        let t = comp.len();
        traces.push(if t > 1 { scatter / (t - 1) as f64 } else { 0.0 });
        offset += scatter;
        points.extend(mean);
        weights.push(w);
    }

    let mut cl = BTreeSet::new();
    for p in constraints.cl() {
        let (a, b) = (lift[p.lo()], lift[p.hi()]);
        if a == b {
            return Err(Error::Infeasible(p.lo(), p.hi()));
        }
        cl.insert(Pair::new(a, b)?);
    }
    let n_pseudo = components.len();
    let projected = ConstraintSet::new(
        std::iter::empty(),
        cl.into_iter().map(|p| (p.lo(), p.hi())),
        n_pseudo,
    )?;

    let data = Dataset::from_flat(points, weights, d)?;
    Ok((
        CollapsedInstance {
            data,
            offset,
            lift,
            components,
            traces,
        },
        projected,
    ))
}

/// Original-index labels; each point inherits its pseudo-point's label.
pub fn lift_assignment(collapsed: &CollapsedInstance, pseudo_labels: &Assignment) -> Result<Assignment> {
    if pseudo_labels.len() != collapsed.n_pseudo() {
        return Err(Error::DimensionMismatch {
            expected: collapsed.n_pseudo(),
            found: pseudo_labels.len(),
        });
    }
    let labels = collapsed.lift.iter().map(|&j| pseudo_labels.get(j)).collect();
    Ok(Assignment::new_unchecked(labels, pseudo_labels.k()))
}

/// Both sides of the collapse cost identity for the given centroids and pseudo labels:
/// `(full SSE on original points, weighted pseudo SSE + offset)`.
pub fn verify_cost_identity(
    dataset: &Dataset,
    collapsed: &CollapsedInstance,
    centroids: &[Vec<f64>],
    pseudo_labels: &Assignment,
) -> Result<(f64, f64)> {
    if pseudo_labels.len() != collapsed.n_pseudo() {
        return Err(Error::DimensionMismatch {
            expected: collapsed.n_pseudo(),
            found: pseudo_labels.len(),
        });
    }
    if collapsed.n_original() != dataset.n() {
        return Err(Error::DimensionMismatch {
            expected: dataset.n(),
            found: collapsed.n_original(),
        });
    }
    if let Some(c) = centroids.iter().find(|c| c.len() != dataset.d()) {
        return Err(Error::DimensionMismatch {
            expected: dataset.d(),
            found: c.len(),
        });
    }
    if let Some(&g) = pseudo_labels.labels().iter().find(|&&g| g >= centroids.len()) {
        return Err(Error::InvalidInput(format!("label {g} has no centroid")));
    }
    let full: f64 = (0..dataset.n())
        .map(|i| {
            let g = pseudo_labels.get(collapsed.lift[i]);
            dataset.weight(i) * sq_dist(dataset.point(i), &centroids[g])
        })
        .sum();
    let pseudo: f64 = (0..collapsed.n_pseudo())
        .map(|j| {
            let g = pseudo_labels.get(j);
            collapsed.data.weight(j) * sq_dist(collapsed.data.point(j), &centroids[g])
        })
        .sum();
    Ok((full, pseudo + collapsed.offset))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(rows: &[&[f64]]) -> Dataset {
        Dataset::new(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    #[test]
    fn two_point_component() {
        let data = ds(&[&[0.0, 0.0], &[2.0, 0.0]]);
        let cs = ConstraintSet::new([(0, 1)], [], 2).unwrap();
        let (c, cl) = collapse(&data, &cs).unwrap();
        assert_eq!(c.n_pseudo(), 1);
        assert_eq!(c.data.point(0), &[1.0, 0.0]);
        assert_eq!(c.data.weight(0), 2.0);
        assert!((c.traces[0] - 2.0).abs() < 1e-15);
        assert!((c.offset - 2.0).abs() < 1e-15);
        assert!(cl.is_empty());

        let labels = Assignment::new(vec![0], 1).unwrap();
        let (full, collapsed) = verify_cost_identity(&data, &c, &[vec![1.0, 0.0]], &labels).unwrap();
        assert!((full - 2.0).abs() < 1e-15);
        assert!((collapsed - 2.0).abs() < 1e-15);
    }

    #[test]
    fn no_must_links_is_identity() {
        let data = ds(&[&[0.0], &[1.0], &[5.0]]);
        let cs = ConstraintSet::new([], [(0, 2)], 3).unwrap();
        let (c, cl) = collapse(&data, &cs).unwrap();
        assert!(c.is_identity());
        assert_eq!(c.offset, 0.0);
        assert_eq!(c.lift, vec![0, 1, 2]);
        assert_eq!(c.data, data);
        assert_eq!(cl, cs);

        let labels = Assignment::new(vec![0, 0, 1], 2).unwrap();
        let cents = vec![vec![0.5], vec![5.0]];
        let (a, b) = verify_cost_identity(&data, &c, &cents, &labels).unwrap();
        assert_eq!(a, b);
        assert!((a - 0.5).abs() < 1e-15);
    }

    #[test]
    fn contradictory_cannot_link_is_infeasible() {
        let data = ds(&[&[0.0], &[1.0], &[2.0]]);
        // ML chain 0-1-2 with CL 0-2 is infeasible via transitivity.
        let cs = ConstraintSet::new([(0, 1), (1, 2)], [(0, 2)], 3).unwrap();
        assert!(matches!(collapse(&data, &cs), Err(Error::Infeasible(0, 2))));
    }

    #[test]
    fn same_pair_in_both_sets_is_rejected_upfront() {
        assert!(matches!(
            ConstraintSet::new([(0, 1)], [(0, 1)], 2),
            Err(Error::ContradictoryPair(0, 1))
        ));
    }

    #[test]
    fn cannot_links_are_projected_and_deduplicated() {
        let data = ds(&[&[0.0], &[1.0], &[5.0], &[6.0]]);
        let cs = ConstraintSet::new([(0, 1), (2, 3)], [(0, 2), (1, 3), (0, 3)], 4).unwrap();
        let (c, cl) = collapse(&data, &cs).unwrap();
        assert_eq!(c.components, vec![vec![0, 1], vec![2, 3]]);
        assert_eq!(cl.cl().len(), 1);
        assert!(cl.ml().is_empty());
        assert_eq!(c.n_pseudo(), 4 - 2);
    }

    #[test]
    fn lift_copies_component_label() {
        let data = ds(&[&[0.0], &[1.0], &[5.0]]);
        let cs = ConstraintSet::new([(0, 1)], [], 3).unwrap();
        let (c, _) = collapse(&data, &cs).unwrap();
        let lifted = lift_assignment(&c, &Assignment::new(vec![2, 0], 3).unwrap()).unwrap();
        assert_eq!(lifted.labels(), &[2, 2, 0]);
        assert!(lift_assignment(&c, &Assignment::new(vec![0], 3).unwrap()).is_err());
    }

    #[test]
    fn collapse_is_idempotent_on_its_output() {
        let data = ds(&[&[0.0, 1.0], &[1.0, 3.0], &[5.0, 5.0], &[7.0, 1.0]]);
        let cs = ConstraintSet::new([(0, 3), (1, 2)], [], 4).unwrap();
        let (c, cl) = collapse(&data, &cs).unwrap();
        let (again, cl2) = collapse(&c.data, &cl).unwrap();
        assert!(again.is_identity());
        assert_eq!(again.offset, 0.0);
        assert_eq!(again.data, c.data);
        assert_eq!(cl2, cl);
    }

    #[test]
    fn union_find_groups() {
        let mut uf = UnionFind::new(6);
        assert!(uf.union(0, 1));
        assert!(uf.union(4, 5));
        assert!(uf.union(1, 5));
        assert!(!uf.union(0, 4));
        assert_eq!(uf.find(0), uf.find(4));
        assert_ne!(uf.find(2), uf.find(3));
    }

    #[test]
    fn verify_rejects_dimension_mismatch() {
        let data = ds(&[&[0.0, 0.0], &[2.0, 0.0]]);
        let (c, _) = collapse(&data, &ConstraintSet::empty()).unwrap();
        let labels = Assignment::new(vec![0, 0], 1).unwrap();
        assert!(matches!(
            verify_cost_identity(&data, &c, &[vec![1.0]], &labels),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
