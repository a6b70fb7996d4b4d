//! Penalty QUBO for the restricted reassignment problem.
//!
//! Variable `k * i + g` is the indicator that subset position `i` takes
//! cluster `g`. The energy is
//!
//! ```text
//! H(d) = sum Δ_{i,g} d_{i,g}
//!      + λ sum_i (1 - sum_g d_{i,g})^2                 one-hot
//!      + λ sum_{(u,v) ML} sum_g (d_{u,g} - d_{v,g})^2  must-link inside S
//!      + λ sum_{(u,v) CL} sum_g d_{u,g} d_{v,g}        cannot-link inside S
//!      + cross-edge and candidate-set penalties        linear
//! ```
//!
//! so every feasible labeling has energy equal to its restricted objective.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::restricted::RestrictedModel;

/// Largest variable count accepted by exhaustive and statevector routines.
pub const MAX_DENSE_VARS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PenaltyMode {
    /// λ capped by the small-penalty limit used during variational search.
    Search,
    /// λ large enough that every infeasible string is above every feasible one.
    Evaluate,
}

/// Constraint edges the restricted model does not carry itself: must-links
/// with both ends in the subset, and must-links to fixed outside labels.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExtraEdges {
    /// Local index pairs.
    pub ml_internal: Vec<(usize, usize)>,
    /// `(local index, fixed label of the outside partner)`.
    pub ml_external: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuboModel {
    n_vars: usize,
    k: usize,
    n_samples: usize,
    linear: Vec<f64>,
    /// Row-major `n_vars x n_vars`; only entries with row < column are used.
    quad: Vec<f64>,
    constant: f64,
    lambda: f64,
    mode: PenaltyMode,
    allowed: Vec<bool>,
    cl_edges: Vec<(usize, usize)>,
    ml_edges: Vec<(usize, usize)>,
    ml_external: Vec<(usize, usize)>,
}

/// `max(0, -min_{g in K_i, g != current} Δ_{i,g})`, averaged over the subset.
pub fn average_margin(model: &RestrictedModel) -> f64 {
    if model.is_empty() {
        return 0.0;
    }
    let total: f64 = (0..model.len())
        .map(|i| {
            let cur = model.warm_start()[i];
            let best = model
                .candidates(i)
                .iter()
                .filter(|&&g| g != cur)
                .map(|&g| model.delta(i, g))
                .fold(f64::INFINITY, f64::min);
            if best.is_finite() {
                (-best).max(0.0)
            } else {
                0.0
            }
        })
        .sum();
    total / model.len() as f64
}

/// Evaluation penalty `Σ|Δ| + ε` with `ε = 1e-6 max(1, Σ|Δ|)`.
pub fn evaluate_lambda(model: &RestrictedModel) -> f64 {
    let sum: f64 = (0..model.len()).flat_map(|i| model.deltas(i).iter().map(|d| d.abs())).sum();
    sum + 1e-6 * sum.max(1.0)
}

/// Search-phase limit `η̄ |S| / (32 (k - 1) (|E_ML| + |E_CL|))`; `None` when
/// undefined or non-positive.
pub fn search_lambda_limit(model: &RestrictedModel, extra: &ExtraEdges) -> Option<f64> {
    let edges = model.internal_cl().len() + extra.ml_internal.len();
    let k = model.k();
    if edges == 0 || k < 2 {
        return None;
    }
    let limit = average_margin(model) * model.len() as f64 / (32.0 * (k - 1) as f64 * edges as f64);
    (limit > 0.0).then_some(limit)
}

pub fn build_qubo(model: &RestrictedModel, extra: &ExtraEdges, mode: PenaltyMode) -> Result<QuboModel> {
    let m = model.len();
    let k = model.k();
    for &(a, b) in &extra.ml_internal {
        if a >= m || b >= m {
            return Err(Error::IndexOutOfRange { index: a.max(b), n: m });
        }
        if a == b {
            return Err(Error::SelfPair(a));
        }
    }
    for &(i, g) in &extra.ml_external {
        if i >= m {
            return Err(Error::IndexOutOfRange { index: i, n: m });
        }
        if g >= k {
            return Err(Error::InvalidInput(format!("label {g} not in [0, {k})")));
        }
    }
    let eval = evaluate_lambda(model);
    let lambda = match mode {
        PenaltyMode::Evaluate => eval,
        PenaltyMode::Search => search_lambda_limit(model, extra).map_or(eval, |l| l.min(eval)),
    };

    let n = m * k;
    let var = |i: usize, g: usize| k * i + g;
    let mut q = QuboModel {
        n_vars: n,
        k,
        n_samples: m,
        linear: vec![0.0; n],
        quad: vec![0.0; n * n],
        constant: 0.0,
        lambda,
        mode,
        allowed: vec![false; n],
        cl_edges: model.internal_cl().to_vec(),
        ml_edges: extra.ml_internal.clone(),
        ml_external: extra.ml_external.clone(),
    };
    for i in 0..m {
        for g in 0..k {
            q.linear[var(i, g)] += model.delta(i, g);
        }
        for &g in model.candidates(i) {
            q.allowed[var(i, g)] = true;
        }
        q.constant += lambda;
        for g in 0..k {
            q.linear[var(i, g)] -= lambda;
            for h in g + 1..k {
                q.add_quad(var(i, g), var(i, h), 2.0 * lambda);
            }
        }
        // Outside cannot-link partners and non-candidate clusters.
        for g in 0..k {
            if !q.allowed[var(i, g)] {
                q.linear[var(i, g)] += lambda;
            }
        }
    }
    for &(u, v) in model.internal_cl() {
        for g in 0..k {
            q.add_quad(var(u, g), var(v, g), lambda);
        }
    }
    for &(u, v) in &extra.ml_internal {
        for g in 0..k {
            q.linear[var(u, g)] += lambda;
            q.linear[var(v, g)] += lambda;
            q.add_quad(var(u, g), var(v, g), -2.0 * lambda);
        }
    }
    for &(i, fixed) in &extra.ml_external {
        for g in 0..k {
            q.linear[var(i, g)] += lambda;
        }
        q.linear[var(i, fixed)] -= 2.0 * lambda;
        q.constant += lambda;
    }
    Ok(q)
}

impl QuboModel {
    fn add_quad(&mut self, a: usize, b: usize, v: f64) {
        let (a, b) = (a.min(b), a.max(b));
        self.quad[a * self.n_vars + b] += v;
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn mode(&self) -> PenaltyMode {
        self.mode
    }

    pub fn constant(&self) -> f64 {
        self.constant
    }

    pub fn linear(&self, v: usize) -> f64 {
        self.linear[v]
    }

    /// Coefficient of `d_a d_b` for `a != b`.
    pub fn quad(&self, a: usize, b: usize) -> f64 {
        let (a, b) = (a.min(b), a.max(b));
        self.quad[a * self.n_vars + b]
    }

    pub fn cl_edges(&self) -> &[(usize, usize)] {
        &self.cl_edges
    }

    pub fn energy(&self, bits: &[bool]) -> f64 {
        assert_eq!(bits.len(), self.n_vars, "bitstring length");
        let mut e = self.constant;
        for a in 0..self.n_vars {
            if !bits[a] {
                continue;
            }
            e += self.linear[a];
            for b in a + 1..self.n_vars {
                if bits[b] {
                    e += self.quad[a * self.n_vars + b];
                }
            }
        }
        e
    }

    pub fn energy_mask(&self, mask: u64) -> f64 {
        self.energy(&mask_to_bits(mask, self.n_vars))
    }

    /// Energies of all `2^n` strings, indexed by mask (bit `v` = variable `v`).
    pub fn energy_table(&self) -> Result<Vec<f64>> {
        self.check_dense()?;
        let n = self.n_vars;
        let size = 1usize << n;
        let mut table = vec![self.constant; size];
        for x in 1..size {
            let v = x.trailing_zeros() as usize;
            let rest = x & (x - 1);
            let mut e = table[rest] + self.linear[v];
            let mut r = rest;
            while r != 0 {
                let u = r.trailing_zeros() as usize;
                e += self.quad[v * n + u];
                r &= r - 1;
            }
            table[x] = e;
        }
        Ok(table)
    }

    pub(crate) fn check_dense(&self) -> Result<()> {
        if self.n_vars > MAX_DENSE_VARS {
            return Err(Error::TooManyVariables {
                n_vars: self.n_vars,
                max: MAX_DENSE_VARS,
            });
        }
        Ok(())
    }

    /// Labels of a one-hot string, or `None` if some sample is not one-hot.
    pub fn decode(&self, bits: &[bool]) -> Option<Vec<usize>> {
        (0..self.n_samples)
            .map(|i| {
                let row = &bits[i * self.k..(i + 1) * self.k];
                let mut on = row.iter().enumerate().filter(|(_, b)| **b).map(|(g, _)| g);
                match (on.next(), on.next()) {
                    (Some(g), None) => Some(g),
                    _ => None,
                }
            })
            .collect()
    }

    pub fn encode(&self, labels: &[usize]) -> Vec<bool> {
        let mut bits = vec![false; self.n_vars];
        for (i, &g) in labels.iter().enumerate() {
            bits[i * self.k + g] = true;
        }
        bits
    }

    /// One-hot, every active variable allowed, and all pair constraints met.
    pub fn is_feasible(&self, bits: &[bool]) -> bool {
        let Some(labels) = self.decode(bits) else {
            return false;
        };
        labels.iter().enumerate().all(|(i, &g)| self.allowed[i * self.k + g])
            && self.cl_edges.iter().all(|&(u, v)| labels[u] != labels[v])
            && self.ml_edges.iter().all(|&(u, v)| labels[u] == labels[v])
            && self.ml_external.iter().all(|&(i, g)| labels[i] == g)
    }

    /// Plain-text triplets: `i j value` per quadratic term, `i value` per
    /// linear term, then one `constant value` line.
    pub fn to_triplets(&self) -> String {
        let mut out = String::new();
        let n = self.n_vars;
        for a in 0..n {
            for b in a + 1..n {
                let v = self.quad[a * n + b];
                if v != 0.0 {
                    let _ = writeln!(out, "{a} {b} {v:?}");
                }
            }
        }
        for (a, &v) in self.linear.iter().enumerate() {
            if v != 0.0 {
                let _ = writeln!(out, "{a} {v:?}");
            }
        }
        let _ = writeln!(out, "constant {:?}", self.constant);
        out
    }

    pub fn write_triplets(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_triplets()).map_err(|e| Error::io(path, e))
    }
}

/// Coefficients read back from the triplet format.
#[derive(Debug, Clone, PartialEq)]
pub struct Triplets {
    pub quadratic: Vec<(usize, usize, f64)>,
    pub linear: Vec<(usize, f64)>,
    pub constant: f64,
}

pub fn parse_triplets(text: &str) -> Result<Triplets> {
    let mut t = Triplets {
        quadratic: Vec::new(),
        linear: Vec::new(),
        constant: 0.0,
    };
    for (lineno, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        let err = |message: String| Error::Parse {
            line: lineno + 1,
            message,
        };
        let num = |s: &str| s.parse::<f64>().map_err(|_| err(format!("invalid number {s:?}")));
        let idx = |s: &str| s.parse::<usize>().map_err(|_| err(format!("invalid index {s:?}")));
        match fields.as_slice() {
            [] => {}
            ["constant", v] => t.constant = num(v)?,
            [a, v] => t.linear.push((idx(a)?, num(v)?)),
            [a, b, v] => t.quadratic.push((idx(a)?, idx(b)?, num(v)?)),
            _ => return Err(err(format!("unexpected line {line:?}"))),
        }
    }
    Ok(t)
}

pub fn mask_to_bits(mask: u64, n: usize) -> Vec<bool> {
    (0..n).map(|v| mask >> v & 1 == 1).collect()
}

pub fn bits_to_mask(bits: &[bool]) -> u64 {
    bits.iter()
        .enumerate()
        .filter(|(_, b)| **b)
        .fold(0, |m, (v, _)| m | 1 << v)
}

/// Sort key under which the string whose first differing variable is 0 is smaller.
pub fn lex_key(mask: u64, n: usize) -> u64 {
    if n == 0 {
        0
    } else {
        mask.reverse_bits() >> (64 - n)
    }
}

/// Exhaustive minimum energy; ties go to the lexicographically smallest string.
pub fn brute_force_ground(qubo: &QuboModel) -> Result<(Vec<bool>, f64)> {
    let table = qubo.energy_table()?;
    let n = qubo.n_vars;
    let (mut best, mut best_e) = (0u64, table[0]);
    for (x, &e) in table.iter().enumerate().skip(1) {
        let x = x as u64;
        if e < best_e || (e == best_e && lex_key(x, n) < lex_key(best, n)) {
            best = x;
            best_e = e;
        }
    }
    Ok((mask_to_bits(best, n), best_e))
}
