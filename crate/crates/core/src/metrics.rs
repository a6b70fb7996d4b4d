//! Final-labeling evaluation: SSE, constraint violations and agreement with
//! reference labels.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::data::{Assignment, ConstraintSet, Dataset};
use crate::error::{Error, Result};
use crate::kmeans::{update_centroids, weighted_sse, CentroidModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub sse: f64,
    pub ml_violations: usize,
    pub cl_violations: usize,
    pub ari: Option<f64>,
    pub ami: Option<f64>,
    pub purity: Option<f64>,
}

/// Scores `labels` on the original data. Centroids are recomputed from the
/// labels; `model` only supplies positions for empty clusters.
pub fn evaluate(
    labels: &Assignment,
    data: &Dataset,
    constraints: &ConstraintSet,
    model: &CentroidModel,
    truth: Option<&[usize]>,
) -> Result<Metrics> {
    let (centroids, _) = update_centroids(data, labels, model.k(), Some(model))?;
    let sse = weighted_sse(data, &centroids, labels);
    let (ml_violations, cl_violations) = count_violations(labels.labels(), constraints);
    let (ari, ami, purity) = match truth {
        Some(t) => {
            if t.len() != labels.len() {
                return Err(Error::DimensionMismatch {
                    expected: labels.len(),
                    found: t.len(),
                });
            }
            let l = labels.labels();
            (
                Some(adjusted_rand_index(t, l)),
                Some(adjusted_mutual_info(t, l)),
                Some(purity(t, l)),
            )
        }
        None => (None, None, None),
    };
    Ok(Metrics {
        sse,
        ml_violations,
        cl_violations,
        ari,
        ami,
        purity,
    })
}

/// `(violated must-links, violated cannot-links)`.
pub fn count_violations(labels: &[usize], constraints: &ConstraintSet) -> (usize, usize) {
    let ml = constraints
        .ml()
        .iter()
        .filter(|p| labels[p.lo()] != labels[p.hi()])
        .count();
    let cl = constraints
        .cl()
        .iter()
        .filter(|p| labels[p.lo()] == labels[p.hi()])
        .count();
    (ml, cl)
}

struct Contingency {
    n: usize,
    cells: Vec<usize>,
    rows: Vec<usize>,
    cols: Vec<usize>,
}

fn contingency(a: &[usize], b: &[usize]) -> Contingency {
    let mut ra = HashMap::new();
    let mut rb = HashMap::new();
    for &x in a {
        let next = ra.len();
        ra.entry(x).or_insert(next);
    }
    for &x in b {
        let next = rb.len();
        rb.entry(x).or_insert(next);
    }
    let (r, c) = (ra.len(), rb.len());
    let mut cells = vec![0; r * c];
    let mut rows = vec![0; r];
    let mut cols = vec![0; c];
    for (x, y) in a.iter().zip(b) {
        let (i, j) = (ra[x], rb[y]);
        cells[i * c + j] += 1;
        rows[i] += 1;
        cols[j] += 1;
    }
    Contingency {
        n: a.len(),
        cells,
        rows,
        cols,
    }
}

fn comb2(x: usize) -> f64 {
    (x as f64) * (x as f64 - 1.0) / 2.0
}

pub fn adjusted_rand_index(truth: &[usize], pred: &[usize]) -> f64 {
    let t = contingency(truth, pred);
    if t.n < 2 {
        return 1.0;
    }
    let index: f64 = t.cells.iter().map(|&v| comb2(v)).sum();
    let sa: f64 = t.rows.iter().map(|&v| comb2(v)).sum();
    let sb: f64 = t.cols.iter().map(|&v| comb2(v)).sum();
    let expected = sa * sb / comb2(t.n);
    let max = 0.5 * (sa + sb);
    if (max - expected).abs() < f64::EPSILON * max.max(1.0) {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

fn entropy(counts: &[usize], n: usize) -> f64 {
    let n = n as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Adjusted mutual information with arithmetic-mean normalization.
pub fn adjusted_mutual_info(truth: &[usize], pred: &[usize]) -> f64 {
    let t = contingency(truth, pred);
    let (r, c) = (t.rows.len(), t.cols.len());
    if (r == 1 && c == 1) || (r == t.n && c == t.n) || t.n == 0 {
        return 1.0;
    }
    let n = t.n as f64;
    let mut mi = 0.0;
    for i in 0..r {
        for j in 0..c {
            let v = t.cells[i * c + j];
            if v > 0 {
                let v = v as f64;
                mi += v / n * (n * v / (t.rows[i] as f64 * t.cols[j] as f64)).ln();
            }
        }
    }
    let emi = expected_mutual_info(&t);
    let h = 0.5 * (entropy(&t.rows, t.n) + entropy(&t.cols, t.n));
    let denom = h - emi;
    let denom = if denom < 0.0 {
        denom.min(-f64::EPSILON)
    } else {
        denom.max(f64::EPSILON)
    };
    (mi - emi) / denom
}

/// Expected mutual information under the hypergeometric permutation model.
fn expected_mutual_info(t: &Contingency) -> f64 {
    let n = t.n;
    let mut ln_fact = vec![0.0; n + 1];
    for i in 1..=n {
        ln_fact[i] = ln_fact[i - 1] + (i as f64).ln();
    }
    let nf = n as f64;
    let mut emi = 0.0;
    for &a in &t.rows {
        for &b in &t.cols {
            let lo = (a + b).saturating_sub(n).max(1);
            let hi = a.min(b);
            let common = ln_fact[a] + ln_fact[b] + ln_fact[n - a] + ln_fact[n - b] - ln_fact[n];
            for nij in lo..=hi {
                let v = nij as f64;
                let term = v / nf * (nf * v / (a as f64 * b as f64)).ln();
                let ln_p = common
                    - ln_fact[nij]
                    - ln_fact[a - nij]
                    - ln_fact[b - nij]
                    - ln_fact[n + nij - a - b];
                emi += term * ln_p.exp();
            }
        }
    }
    emi
}

/// Fraction of points whose cluster's majority reference label matches theirs.
pub fn purity(truth: &[usize], pred: &[usize]) -> f64 {
    let t = contingency(pred, truth);
    if t.n == 0 {
        return 1.0;
    }
    let c = t.cols.len();
    let hits: usize = t.cells.chunks_exact(c).map(|row| *row.iter().max().unwrap_or(&0)).sum();
    hits as f64 / t.n as f64
}
