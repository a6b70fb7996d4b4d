//! Instance types, dataset/constraint ingestion and seeded constraint sampling.
//!
//! Points are stored row-major in one flat buffer. Constraint pairs are kept
//! unordered with canonical `(min, max)` ordering.

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Squared Euclidean distance.
#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// A weighted point cloud in `R^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    points: Vec<f64>,
    weights: Vec<f64>,
    n: usize,
    d: usize,
}

impl Dataset {
    /// Builds a unit-weight dataset from rows.
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        Self::with_weights(rows, vec![1.0; n])
    }

    pub fn with_weights(rows: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        let d = rows[0].len();
        if d == 0 {
            return Err(Error::InvalidInput("points must have dimension >= 1".into()));
        }
        let mut points = Vec::with_capacity(n * d);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != d {
                return Err(Error::RaggedRow {
                    row: i,
                    expected: d,
                    found: row.len(),
                });
            }
            points.extend(row);
        }
        Self::from_flat(points, weights, d)
    }

    /// Builds a dataset from a row-major buffer of `n * d` coordinates.
    pub fn from_flat(points: Vec<f64>, weights: Vec<f64>, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidInput("points must have dimension >= 1".into()));
        }
        if points.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if points.len() % d != 0 {
            return Err(Error::InvalidInput(format!(
                "buffer of {} values is not a multiple of d = {d}",
                points.len()
            )));
        }
        let n = points.len() / d;
        if weights.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: weights.len(),
            });
        }
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidInput(format!("weights must be positive, got {w}")));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("coordinates must be finite".into()));
        }
        Ok(Self {
            points,
            weights,
            n,
            d,
        })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.d..(i + 1) * self.d]
    }

    #[inline]
    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.points.chunks_exact(self.d)
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// An unordered index pair stored as `(min, max)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Pair(usize, usize);

impl Pair {
    pub fn new(a: usize, b: usize) -> Result<Self> {
        if a == b {
            return Err(Error::SelfPair(a));
        }
        Ok(Pair(a.min(b), a.max(b)))
    }

    #[inline]
    pub fn lo(self) -> usize {
        self.0
    }

    #[inline]
    pub fn hi(self) -> usize {
        self.1
    }
}

/// Must-link and cannot-link pairs over point indices.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintSet {
    ml: BTreeSet<Pair>,
    cl: BTreeSet<Pair>,
}

impl ConstraintSet {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Validates and canonicalizes raw pairs against a dataset of `n` points.
    pub fn new(
        ml: impl IntoIterator<Item = (usize, usize)>,
        cl: impl IntoIterator<Item = (usize, usize)>,
        n: usize,
    ) -> Result<Self> {
        let check = |(a, b): (usize, usize)| -> Result<Pair> {
            for index in [a, b] {
                if index >= n {
                    return Err(Error::IndexOutOfRange { index, n });
                }
            }
            Pair::new(a, b)
        };
        let ml = ml.into_iter().map(check).collect::<Result<BTreeSet<_>>>()?;
        let cl = cl.into_iter().map(check).collect::<Result<BTreeSet<_>>>()?;
        if let Some(p) = ml.intersection(&cl).next() {
            return Err(Error::ContradictoryPair(p.lo(), p.hi()));
        }
        Ok(Self { ml, cl })
    }

    pub fn ml(&self) -> &BTreeSet<Pair> {
        &self.ml
    }

    pub fn cl(&self) -> &BTreeSet<Pair> {
        &self.cl
    }

    pub fn is_empty(&self) -> bool {
        self.ml.is_empty() && self.cl.is_empty()
    }

    pub fn len(&self) -> usize {
        self.ml.len() + self.cl.len()
    }

    /// Largest referenced index plus one, or 0 when empty.
    pub fn max_index_bound(&self) -> usize {
        self.ml
            .iter()
            .chain(&self.cl)
            .map(|p| p.hi() + 1)
            .max()
            .unwrap_or(0)
    }

    /// Cannot-link adjacency lists over `n` points, neighbours ascending.
    pub fn cl_adjacency(&self, n: usize) -> Vec<Vec<usize>> {
        adjacency(&self.cl, n)
    }

    pub fn ml_adjacency(&self, n: usize) -> Vec<Vec<usize>> {
        adjacency(&self.ml, n)
    }

    /// Plain-text form: one `ML i j` / `CL i j` line per pair.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for p in &self.ml {
            let _ = writeln!(out, "ML {} {}", p.lo(), p.hi());
        }
        for p in &self.cl {
            let _ = writeln!(out, "CL {} {}", p.lo(), p.hi());
        }
        out
    }

    /// Parses the plain-text constraint format. `n`, when given, bounds indices.
    pub fn parse(text: &str, n: Option<usize>) -> Result<Self> {
        let mut ml = BTreeSet::new();
        let mut cl = BTreeSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                line: lineno + 1,
                message,
            };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(parse_err(format!("expected `ML i j` or `CL i j`, got {line:?}")));
            }
            let idx = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| parse_err(format!("invalid index {s:?}")))
            };
            let (a, b) = (idx(fields[1])?, idx(fields[2])?);
            if let Some(n) = n {
                for index in [a, b] {
                    if index >= n {
                        return Err(Error::IndexOutOfRange { index, n });
                    }
                }
            }
            let pair = Pair::new(a, b)?;
            match fields[0] {
                "ML" | "ml" => ml.insert(pair),
                "CL" | "cl" => cl.insert(pair),
                tag => return Err(parse_err(format!("unknown tag {tag:?}"))),
            };
        }
        if let Some(p) = ml.intersection(&cl).next() {
            return Err(Error::ContradictoryPair(p.lo(), p.hi()));
        }
        Ok(Self { ml, cl })
    }
}

fn adjacency(pairs: &BTreeSet<Pair>, n: usize) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); n];
    for p in pairs {
        adj[p.lo()].push(p.hi());
        adj[p.hi()].push(p.lo());
    }
    for list in &mut adj {
        list.sort_unstable();
    }
    adj
}

/// Per-point cluster labels in `0..k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    labels: Vec<usize>,
    k: usize,
}

impl Assignment {
    pub fn new(labels: Vec<usize>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidInput("k must be >= 1".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&g| g >= k) {
            return Err(Error::InvalidInput(format!("label {bad} not in [0, {k})")));
        }
        Ok(Self { labels, k })
    }

    pub(crate) fn new_unchecked(labels: Vec<usize>, k: usize) -> Self {
        debug_assert!(labels.iter().all(|&g| g < k));
        Self { labels, k }
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn into_labels(self) -> Vec<usize> {
        self.labels
    }
}

/// Parses comma-separated numeric rows; `header` skips the first non-empty line.
pub fn parse_dataset(text: &str, header: bool) -> Result<Dataset> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut skipped_header = !header;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if !skipped_header {
            skipped_header = true;
            continue;
        }
        let row = line
            .split(',')
            .enumerate()
            .map(|(col, cell)| {
                let cell = cell.trim();
                cell.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::NonNumeric {
                        row: lineno + 1,
                        column: col + 1,
                        value: cell.to_string(),
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::RaggedRow {
                    row: lineno + 1,
                    expected: first.len(),
                    found: row.len(),
                });
            }
        }
        rows.push(row);
    }
    Dataset::new(rows)
}

pub fn load_dataset(path: impl AsRef<Path>, header: bool) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, header)
}

pub fn load_constraints(path: impl AsRef<Path>, n: Option<usize>) -> Result<ConstraintSet> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ConstraintSet::parse(&text, n)
}

pub fn write_constraints(path: impl AsRef<Path>, constraints: &ConstraintSet) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, constraints.to_text()).map_err(|e| Error::io(path, e))
}

/// Reads one integer label per line.
pub fn load_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse::<usize>().map_err(|_| Error::Parse {
                line: i + 1,
                message: format!("invalid label {:?}", l.trim()),
            })
        })
        .collect()
}

/// Random-pair constraint sampling.
///
/// Pairs are drawn uniformly without replacement from the shared pair
/// universe. With `truth`, a drawn pair with equal labels fills the ML quota
/// and one with unequal labels fills the CL quota; pairs whose quota is
/// already full are discarded. Without `truth`, the first `n_ml` distinct
/// pairs become ML and the next `n_cl` become CL.
pub fn sample_constraints(
    n: usize,
    truth: Option<&[usize]>,
    n_ml: usize,
    n_cl: usize,
    seed: u64,
) -> Result<ConstraintSet> {
    let universe = n.saturating_mul(n.saturating_sub(1)) / 2;
    if n_ml + n_cl > universe {
        return Err(Error::UnsatisfiableQuotas(format!(
            "{} pairs requested but only {universe} exist",
            n_ml + n_cl
        )));
    }
    if let Some(truth) = truth {
        if truth.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: truth.len(),
            });
        }
        let mut counts = std::collections::HashMap::<usize, usize>::new();
        for &t in truth {
            *counts.entry(t).or_default() += 1;
        }
        let same: usize = counts.values().map(|c| c * (c - 1) / 2).sum();
        let diff = universe - same;
        if n_ml > same || n_cl > diff {
            return Err(Error::UnsatisfiableQuotas(format!(
                "requested {n_ml} ML / {n_cl} CL, truth labels admit {same} ML / {diff} CL pairs"
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen: HashSet<Pair> = HashSet::new();
    let mut ml = BTreeSet::new();
    let mut cl = BTreeSet::new();
    while ml.len() < n_ml || cl.len() < n_cl {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a == b {
            continue;
        }
        let pair = Pair(a.min(b), a.max(b));
        if !seen.insert(pair) {
            continue;
        }
        match truth {
            Some(t) if t[a] == t[b] => {
                if ml.len() < n_ml {
                    ml.insert(pair);
                }
            }
            Some(_) => {
                if cl.len() < n_cl {
                    cl.insert(pair);
                }
            }
            None => {
                if ml.len() < n_ml {
                    ml.insert(pair);
                } else {
                    cl.insert(pair);
                }
            }
        }
    }
    Ok(ConstraintSet { ml, cl })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_small_csv() {
        let ds = parse_dataset("0,0\n1,0\n0,1", false).unwrap();
        assert_eq!(ds.n(), 3);
        assert_eq!(ds.d(), 2);
        assert_eq!(ds.weights(), &[1.0, 1.0, 1.0]);
        assert_eq!(ds.point(2), &[0.0, 1.0]);
    }

    #[test]
    fn header_line_is_skipped() {
        let ds = parse_dataset("x,y\n0,0\n1,0", true).unwrap();
        assert_eq!(ds.n(), 2);
    }

    #[test]
    fn empty_file_is_rejected() {
        assert!(matches!(parse_dataset("", false), Err(Error::EmptyDataset)));
        assert!(matches!(parse_dataset("\n\n", false), Err(Error::EmptyDataset)));
    }

    #[test]
    fn ragged_row_is_named() {
        let err = parse_dataset("0,0\n1,0,3\n0,1", false).unwrap_err();
        match err {
            Error::RaggedRow { row, expected, found } => {
                assert_eq!((row, expected, found), (2, 2, 3));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(err_msg_contains(parse_dataset("0,0\n1,0,3", false), "row 2"));
    }

    #[test]
    fn non_numeric_cell_reports_location() {
        match parse_dataset("0,0\n1,abc", false).unwrap_err() {
            Error::NonNumeric { row, column, value } => {
                assert_eq!((row, column, value.as_str()), (2, 2, "abc"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn constraint_file_parses_and_dedups() {
        let cs = ConstraintSet::parse("ML 0 1\nCL 1 2", None).unwrap();
        assert_eq!(cs.ml().iter().copied().collect::<Vec<_>>(), vec![Pair(0, 1)]);
        assert_eq!(cs.cl().iter().copied().collect::<Vec<_>>(), vec![Pair(1, 2)]);

        let cs = ConstraintSet::parse("ML 0 1\nML 1 0\n# comment\n\nML 0 1 # again", None).unwrap();
        assert_eq!(cs.ml().len(), 1);
    }

    #[test]
    fn constraint_file_errors() {
        assert!(matches!(ConstraintSet::parse("ML 2 2", None), Err(Error::SelfPair(2))));
        assert!(matches!(ConstraintSet::parse("XX 0 1", None), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(
            ConstraintSet::parse("CL 0 5", Some(3)),
            Err(Error::IndexOutOfRange { index: 5, n: 3 })
        ));
        assert!(matches!(
            ConstraintSet::parse("ML 0 1\nCL 1 0", None),
            Err(Error::ContradictoryPair(0, 1))
        ));
    }

    #[test]
    fn constraint_file_round_trips_through_disk() {
        let cs = sample_constraints(30, None, 5, 7, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.txt");
        write_constraints(&path, &cs).unwrap();
        assert_eq!(load_constraints(&path, Some(30)).unwrap(), cs);
    }

    #[test]
    fn sampling_with_truth_fills_only_valid_pairs() {
        let truth = [0, 0, 1];
        for seed in 0..20 {
            let cs = sample_constraints(3, Some(&truth), 1, 1, seed).unwrap();
            assert_eq!(cs.ml().iter().copied().collect::<Vec<_>>(), vec![Pair(0, 1)]);
            let cl: Vec<_> = cs.cl().iter().copied().collect();
            assert_eq!(cl.len(), 1);
            assert!(cl[0] == Pair(0, 2) || cl[0] == Pair(1, 2));
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let truth: Vec<usize> = (0..40).map(|i| i % 3).collect();
        let a = sample_constraints(40, Some(&truth), 10, 10, 99).unwrap();
        let b = sample_constraints(40, Some(&truth), 10, 10, 99).unwrap();
        assert_eq!(a, b);
        let c = sample_constraints(40, Some(&truth), 10, 10, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn sampling_quota_errors() {
        let truth = [0, 0, 0, 0];
        assert!(matches!(
            sample_constraints(4, Some(&truth), 0, 1, 0),
            Err(Error::UnsatisfiableQuotas(_))
        ));
        assert!(matches!(
            sample_constraints(3, None, 2, 2, 0),
            Err(Error::UnsatisfiableQuotas(_))
        ));
    }

    #[test]
    fn iris_sized_both_scenario_has_distinct_pairs() {
        let truth: Vec<usize> = (0..150).map(|i| i / 50).collect();
        let cs = sample_constraints(150, Some(&truth), 37, 37, 1).unwrap();
        assert_eq!(cs.ml().len(), 37);
        assert_eq!(cs.cl().len(), 37);
        assert_eq!(cs.ml().intersection(cs.cl()).count(), 0);
        for p in cs.ml() {
            assert_eq!(truth[p.lo()], truth[p.hi()]);
        }
        for p in cs.cl() {
            assert_ne!(truth[p.lo()], truth[p.hi()]);
        }
    }

    #[test]
    fn dataset_invariants() {
        assert!(Dataset::with_weights(vec![vec![1.0]], vec![0.0]).is_err());
        assert!(Dataset::new(vec![vec![]]).is_err());
        assert!(matches!(Dataset::new(vec![]), Err(Error::EmptyDataset)));
    }

    fn err_msg_contains<T: std::fmt::Debug>(r: Result<T>, needle: &str) -> bool {
        r.unwrap_err().to_string().contains(needle)
    }
}
