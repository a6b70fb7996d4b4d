//! Weighted k-means primitives and the COP-k-means baseline.
//!
//! Distances are squared Euclidean throughout. Ties between equally near
//! clusters always go to the lowest cluster index.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{sq_dist, Assignment, ConstraintSet, Dataset};
use crate::error::{Error, Result};

pub const DEFAULT_MINIBATCH_ITERS: usize = 50;
pub const DEFAULT_COP_RESTARTS: usize = 100;
const LLOYD_MAX_ITERS: usize = 100;

/// `k` centroids of dimension `d`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentroidModel {
    centroids: Vec<f64>,
    k: usize,
    d: usize,
}

impl CentroidModel {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.len();
        if k == 0 {
            return Err(Error::InvalidInput("at least one centroid is required".into()));
        }
        let d = rows[0].len();
        if d == 0 {
            return Err(Error::InvalidInput("centroids must have dimension >= 1".into()));
        }
        if let Some(r) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: r.len(),
            });
        }
        Ok(Self {
            centroids: rows.concat(),
            k,
            d,
        })
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn centroid(&self, g: usize) -> &[f64] {
        &self.centroids[g * self.d..(g + 1) * self.d]
    }

    fn centroid_mut(&mut self, g: usize) -> &mut [f64] {
        &mut self.centroids[g * self.d..(g + 1) * self.d]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.centroids.chunks_exact(self.d).map(<[f64]>::to_vec).collect()
    }

    /// Squared distances from `x` to every centroid.
    pub fn distances(&self, x: &[f64]) -> Vec<f64> {
        (0..self.k).map(|g| sq_dist(x, self.centroid(g))).collect()
    }

    /// Nearest centroid and its squared distance; lowest index wins ties.
    pub fn nearest(&self, x: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for g in 0..self.k {
            let dist = sq_dist(x, self.centroid(g));
            if dist < best.1 {
                best = (g, dist);
            }
        }
        best
    }
}

/// Centroids, labels and the cached weighted SSE of that pairing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringState {
    pub model: CentroidModel,
    pub labels: Assignment,
    pub sse: f64,
}

/// `sum_i w_i ||x_i - mu_{labels[i]}||^2`.
pub fn weighted_sse(data: &Dataset, model: &CentroidModel, labels: &Assignment) -> f64 {
    labels
        .labels()
        .iter()
        .enumerate()
        .map(|(i, &g)| data.weight(i) * sq_dist(data.point(i), model.centroid(g)))
        .sum()
}

fn check_dims(data: &Dataset, model: &CentroidModel) -> Result<()> {
    if data.d() != model.d() {
        return Err(Error::DimensionMismatch {
            expected: data.d(),
            found: model.d(),
        });
    }
    Ok(())
}

/// Labels every point with its nearest centroid.
pub fn assign_nearest(data: &Dataset, model: &CentroidModel) -> Result<ClusteringState> {
    check_dims(data, model)?;
    let mut sse = 0.0;
    let labels = data
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let (g, dist) = model.nearest(x);
            sse += data.weight(i) * dist;
            g
        })
        .collect();
    Ok(ClusteringState {
        model: model.clone(),
        labels: Assignment::new_unchecked(labels, model.k()),
        sse,
    })
}

/// Weighted centroid update.
///
/// An empty cluster keeps its centroid from `previous` when supplied;
/// otherwise it is re-seeded at the point with the largest weighted distance
/// to its own (updated) centroid. Returns the new model and the re-seeded
/// cluster indices.
pub fn update_centroids(
    data: &Dataset,
    labels: &Assignment,
    k: usize,
    previous: Option<&CentroidModel>,
) -> Result<(CentroidModel, Vec<usize>)> {
    if labels.len() != data.n() {
        return Err(Error::DimensionMismatch {
            expected: data.n(),
            found: labels.len(),
        });
    }
    if labels.k() > k || k == 0 {
        return Err(Error::InvalidInput(format!(
            "labels use k = {} but update requested k = {k}",
            labels.k()
        )));
    }
    if let Some(prev) = previous {
        check_dims(data, prev)?;
        if prev.k() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: prev.k(),
            });
        }
    }
    let d = data.d();
    let mut model = CentroidModel {
        centroids: vec![0.0; k * d],
        k,
        d,
    };
    let mut mass = vec![0.0; k];
    for (i, &g) in labels.labels().iter().enumerate() {
        let w = data.weight(i);
        mass[g] += w;
        for (c, x) in model.centroid_mut(g).iter_mut().zip(data.point(i)) {
            *c += w * x;
        }
    }
    let mut empty = Vec::new();
    for g in 0..k {
        if mass[g] > 0.0 {
            let m = mass[g];
            model.centroid_mut(g).iter_mut().for_each(|c| *c /= m);
        } else {
            empty.push(g);
        }
    }
    if empty.is_empty() {
        return Ok((model, empty));
    }
    if let Some(prev) = previous {
        for &g in &empty {
            model.centroid_mut(g).copy_from_slice(prev.centroid(g));
        }
        return Ok((model, Vec::new()));
    }
    // Worst-fit re-seeding; each empty cluster takes a different point.
    let mut cost: Vec<(f64, usize)> = labels
        .labels()
        .iter()
        .enumerate()
        .map(|(i, &g)| (data.weight(i) * sq_dist(data.point(i), model.centroid(g)), i))
        .collect();
    cost.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for (&g, &(_, i)) in empty.iter().zip(cost.iter().cycle()) {
        model.centroid_mut(g).copy_from_slice(data.point(i));
    }
    Ok((model, empty))
}

/// Weighted k-means++ seeding: first centre drawn proportional to weight,
/// subsequent ones proportional to `w_i * D(x_i)^2`.
pub fn kmeans_plus_plus<R: Rng>(data: &Dataset, k: usize, rng: &mut R) -> Result<CentroidModel> {
    let n = data.n();
    if k == 0 {
        return Err(Error::InvalidInput("k must be >= 1".into()));
    }
    if k > n {
        return Err(Error::TooManyClusters { k, n });
    }
    let draw = |scores: &[f64], rng: &mut R| -> Option<usize> {
        let total: f64 = scores.iter().sum();
        if !(total > 0.0) {
            return None;
        }
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut last = None;
        for (i, &s) in scores.iter().enumerate() {
            if s > 0.0 {
                acc += s;
                last = Some(i);
                if acc > target {
                    return Some(i);
                }
            }
        }
        last
    };
    let mut chosen = Vec::with_capacity(k);
    let first = draw(data.weights(), rng).unwrap_or(0);
    chosen.push(first);
    let mut d2: Vec<f64> = data.iter().map(|x| sq_dist(x, data.point(first))).collect();
    while chosen.len() < k {
        let scores: Vec<f64> = d2.iter().zip(data.weights()).map(|(d, w)| d * w).collect();
        let next = match draw(&scores, rng) {
            Some(i) => i,
            // Only duplicates of chosen points remain.
            None => (0..n).find(|i| !chosen.contains(i)).expect("k <= n"),
        };
        chosen.push(next);
        for (i, x) in data.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(x, data.point(next)));
        }
    }
    let rows: Vec<Vec<f64>> = chosen.iter().map(|&i| data.point(i).to_vec()).collect();
    CentroidModel::from_rows(&rows)
}

/// Default mini-batch size: `min(1024, n)`.
pub fn default_batch(n: usize) -> usize {
    n.min(1024)
}

/// Weighted k-means++ seeding followed by `iters` rounds of mini-batch
/// updates with per-centre learning rate `w_i / (accumulated weight)`.
pub fn init_minibatch(data: &Dataset, k: usize, batch: usize, iters: usize, seed: u64) -> Result<CentroidModel> {
    let n = data.n();
    if k > n {
        return Err(Error::TooManyClusters { k, n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = kmeans_plus_plus(data, k, &mut rng)?;
    let batch = batch.clamp(1, n);
    let mut mass = vec![0.0; k];
    let mut picked = Vec::with_capacity(batch);
    for _ in 0..iters {
        picked.clear();
        picked.extend((0..batch).map(|_| rng.random_range(0..n)));
        let owners: Vec<usize> = picked.iter().map(|&i| model.nearest(data.point(i)).0).collect();
        for (&i, &g) in picked.iter().zip(&owners) {
            let w = data.weight(i);
            mass[g] += w;
            let lr = w / mass[g];
            for (c, x) in model.centroid_mut(g).iter_mut().zip(data.point(i)) {
                *c += lr * (x - *c);
            }
        }
    }
    Ok(model)
}

/// Lloyd iterations from a given model until labels stop changing.
pub fn lloyd(data: &Dataset, init: CentroidModel, max_iter: usize) -> Result<ClusteringState> {
    let mut state = assign_nearest(data, &init)?;
    for _ in 0..max_iter {
        let (model, _) = update_centroids(data, &state.labels, init.k(), Some(&state.model))?;
        let next = assign_nearest(data, &model)?;
        let done = next.labels == state.labels;
        state = next;
        if done {
            break;
        }
    }
    let sse = weighted_sse(data, &state.model, &state.labels);
    state.sse = sse;
    Ok(state)
}

/// Unconstrained k-means with k-means++ restarts; the same routine as
/// [`cop_kmeans`] with an empty constraint set.
pub fn kmeans(data: &Dataset, k: usize, restarts: usize, seed: u64) -> Result<ClusteringState> {
    Ok(cop_kmeans(data, &ConstraintSet::empty(), k, restarts, seed)?
        .expect("unconstrained k-means always finds an assignment"))
}

/// COP-k-means: points are assigned in index order to the nearest cluster
/// that violates no constraint against already-assigned points. A dead end
/// abandons the restart. Returns the lowest-SSE feasible state, or `None`
/// when every restart dead-ends.
pub fn cop_kmeans(
    data: &Dataset,
    constraints: &ConstraintSet,
    k: usize,
    restarts: usize,
    seed: u64,
) -> Result<Option<ClusteringState>> {
    let n = data.n();
    if k == 0 {
        return Err(Error::InvalidInput("k must be >= 1".into()));
    }
    if k > n {
        return Err(Error::TooManyClusters { k, n });
    }
    if constraints.max_index_bound() > n {
        return Err(Error::IndexOutOfRange {
            index: constraints.max_index_bound() - 1,
            n,
        });
    }
    let ml = constraints.ml_adjacency(n);
    let cl = constraints.cl_adjacency(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<ClusteringState> = None;
    for _ in 0..restarts.max(1) {
        let init = kmeans_plus_plus(data, k, &mut rng)?;
        if let Some(state) = cop_single(data, &ml, &cl, init)? {
            if best.as_ref().is_none_or(|b| state.sse < b.sse) {
                best = Some(state);
            }
        }
    }
    Ok(best)
}

fn cop_single(
    data: &Dataset,
    ml: &[Vec<usize>],
    cl: &[Vec<usize>],
    init: CentroidModel,
) -> Result<Option<ClusteringState>> {
    let n = data.n();
    let k = init.k();
    let mut model = init;
    let mut prev: Option<Vec<usize>> = None;
    let mut order: Vec<usize> = Vec::with_capacity(k);
    for _ in 0..LLOYD_MAX_ITERS {
        let mut labels: Vec<Option<usize>> = vec![None; n];
        for i in 0..n {
            let dist = model.distances(data.point(i));
            order.clear();
            order.extend(0..k);
            order.sort_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(a.cmp(&b)));
            let violates = |g: usize| {
                ml[i].iter().any(|&j| labels[j].is_some_and(|h| h != g))
                    || cl[i].iter().any(|&j| labels[j] == Some(g))
            };
            match order.iter().copied().find(|&g| !violates(g)) {
                Some(g) => labels[i] = Some(g),
                None => return Ok(None),
            }
        }
        let labels: Vec<usize> = labels.into_iter().map(|g| g.expect("assigned")).collect();
        let assignment = Assignment::new_unchecked(labels.clone(), k);
        let (next, _) = update_centroids(data, &assignment, k, Some(&model))?;
        model = next;
        let done = prev.as_ref() == Some(&labels);
        prev = Some(labels);
        if done {
            break;
        }
    }
    let labels = Assignment::new_unchecked(prev.expect("at least one pass"), k);
    let sse = weighted_sse(data, &model, &labels);
    Ok(Some(ClusteringState { model, labels, sse }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(rows: &[&[f64]]) -> Dataset {
        Dataset::new(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    fn blobs(seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        for c in [[0.0, 0.0], [20.0, 20.0]] {
            for _ in 0..40 {
                rows.push(vec![c[0] + rng.random_range(-1.0..1.0), c[1] + rng.random_range(-1.0..1.0)]);
            }
        }
        Dataset::new(rows).unwrap()
    }

    #[test]
    fn equidistant_point_takes_lowest_cluster() {
        let data = ds(&[&[0.0, 0.0]]);
        let model = CentroidModel::from_rows(&[vec![1.0, 0.0], vec![0.0, 5.0], vec![-1.0, 0.0]]).unwrap();
        let st = assign_nearest(&data, &model).unwrap();
        assert_eq!(st.labels.labels(), &[0]);
    }

    #[test]
    fn single_centroid_gives_total_scatter() {
        let data = Dataset::with_weights(vec![vec![0.0], vec![2.0], vec![4.0]], vec![1.0, 2.0, 1.0]).unwrap();
        let model = CentroidModel::from_rows(&[vec![2.0]]).unwrap();
        let st = assign_nearest(&data, &model).unwrap();
        assert_eq!(st.labels.labels(), &[0, 0, 0]);
        assert!((st.sse - 8.0).abs() < 1e-15);
    }

    #[test]
    fn weighted_mean_update() {
        let data = Dataset::with_weights(vec![vec![0.0, 0.0], vec![3.0, 0.0]], vec![2.0, 1.0]).unwrap();
        let labels = Assignment::new(vec![0, 0], 1).unwrap();
        let (m, reseeded) = update_centroids(&data, &labels, 1, None).unwrap();
        assert!(reseeded.is_empty());
        assert_eq!(m.centroid(0), &[1.0, 0.0]);
    }

    #[test]
    fn singleton_clusters_sit_on_points() {
        let data = ds(&[&[0.0], &[3.0], &[7.0]]);
        let labels = Assignment::new(vec![0, 1, 2], 3).unwrap();
        let (m, _) = update_centroids(&data, &labels, 3, None).unwrap();
        assert_eq!(m.to_rows(), vec![vec![0.0], vec![3.0], vec![7.0]]);
    }

    #[test]
    fn empty_cluster_reseeds_to_worst_fit_point() {
        let data = ds(&[&[0.0], &[1.0], &[10.0]]);
        let labels = Assignment::new(vec![0, 0, 0], 2).unwrap();
        let (m, reseeded) = update_centroids(&data, &labels, 2, None).unwrap();
        assert_eq!(reseeded, vec![1]);
        assert_eq!(m.centroid(1), &[10.0]);

        let prev = CentroidModel::from_rows(&[vec![0.0], vec![-3.0]]).unwrap();
        let (m, reseeded) = update_centroids(&data, &labels, 2, Some(&prev)).unwrap();
        assert!(reseeded.is_empty());
        assert_eq!(m.centroid(1), &[-3.0]);
    }

    #[test]
    fn saturated_minibatch_reaches_zero_sse() {
        let data = ds(&[&[0.0, 0.0], &[5.0, 1.0], &[-3.0, 2.0], &[8.0, 8.0]]);
        let model = init_minibatch(&data, 4, 4, 50, 7).unwrap();
        let st = assign_nearest(&data, &model).unwrap();
        assert!(st.sse.abs() < 1e-12);
        let mut rows = model.to_rows();
        rows.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_eq!(rows.len(), 4);
    }

    #[test]
    fn minibatch_is_deterministic_and_rejects_large_k() {
        let data = blobs(1);
        let a = init_minibatch(&data, 2, 16, 50, 3).unwrap();
        let b = init_minibatch(&data, 2, 16, 50, 3).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            init_minibatch(&ds(&[&[0.0]]), 2, 1, 1, 0),
            Err(Error::TooManyClusters { k: 2, n: 1 })
        ));
    }

    #[test]
    fn minibatch_lands_near_blob_means() {
        let data = blobs(2);
        let model = init_minibatch(&data, 2, 32, 50, 11).unwrap();
        let full = lloyd(&data, model.clone(), 100).unwrap();
        for g in 0..2 {
            let (h, dist) = full.model.nearest(model.centroid(g));
            assert!(dist.sqrt() < 1.0, "centroid {g} is {dist} from Lloyd centroid {h}");
        }
    }

    #[test]
    fn cop_without_constraints_matches_kmeans() {
        let data = blobs(3);
        let a = cop_kmeans(&data, &ConstraintSet::empty(), 2, 5, 9).unwrap().unwrap();
        let b = kmeans(&data, 2, 5, 9).unwrap();
        assert_eq!(a, b);
        let reassigned = assign_nearest(&data, &a.model).unwrap();
        assert_eq!(reassigned.labels, a.labels);
    }

    #[test]
    fn cop_reports_pigeonhole_infeasibility() {
        let data = ds(&[&[0.0], &[1.0], &[2.0]]);
        let cs = ConstraintSet::new([], [(0, 1), (0, 2), (1, 2)], 3).unwrap();
        assert!(cop_kmeans(&data, &cs, 2, 20, 0).unwrap().is_none());
    }

    #[test]
    fn cop_solution_respects_constraints() {
        let data = blobs(4);
        let cs = ConstraintSet::new([(0, 45), (3, 50)], [(1, 2), (41, 42)], data.n()).unwrap();
        let st = cop_kmeans(&data, &cs, 2, 10, 1).unwrap().unwrap();
        let l = st.labels.labels();
        for p in cs.ml() {
            assert_eq!(l[p.lo()], l[p.hi()]);
        }
        for p in cs.cl() {
            assert_ne!(l[p.lo()], l[p.hi()]);
        }
        assert!((st.sse - weighted_sse(&data, &st.model, &st.labels)).abs() < 1e-9);
    }

    #[test]
    fn lloyd_sse_never_increases() {
        let data = blobs(5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = kmeans_plus_plus(&data, 3, &mut rng).unwrap();
        let mut last = f64::INFINITY;
        for _ in 0..10 {
            let st = assign_nearest(&data, &model).unwrap();
            assert!(st.sse <= last + 1e-9);
            let (next, _) = update_centroids(&data, &st.labels, 3, Some(&model)).unwrap();
            let after = weighted_sse(&data, &next, &st.labels);
            assert!(after <= st.sse + 1e-9);
            last = after;
            model = next;
        }
    }
}
