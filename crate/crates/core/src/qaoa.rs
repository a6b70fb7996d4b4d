//! Depth-one QAOA on a dense statevector with the one-hot preserving XY mixer.
//!
//! Qubit `v` is bit `v` of the basis index. For subset position `i` the mixer
//! applies `exp(-iβ (X_a X_b + Y_a Y_b))` to every variable pair
//! `a = k i + g`, `b = k i + h` with `g < h`. On the pair subspace this is
//! the identity on `|00>` and `|11>` and a rotation by `2β` mixing `|01>` and `|10>`:
//!
//! ```text
//! |10> -> cos 2β |10> - i sin 2β |01>
//! ```

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qubo::{bits_to_mask, lex_key, mask_to_bits, QuboModel};

pub const DEFAULT_SHOTS: usize = 2048;
pub const GRID_POINTS: usize = 32;
const NM_MAX_ITERS: usize = 200;
const NM_TOL: f64 = 1e-10;

/// Applies the full mixer in place: positions ascending, then `(g, h)` lexicographic.
pub fn apply_xy_mixer(state: &mut [Complex64], beta: f64, k: usize, n_samples: usize) -> Result<()> {
    let n_vars = k * n_samples;
    if n_vars >= usize::BITS as usize || state.len() != 1usize << n_vars {
        return Err(Error::DimensionMismatch {
            expected: 1usize.checked_shl(n_vars as u32).unwrap_or(0),
            found: state.len(),
        });
    }
    let (s, c) = (2.0 * beta).sin_cos();
    let mis = Complex64::new(0.0, -s);
    for i in 0..n_samples {
        for g in 0..k {
            for h in g + 1..k {
                apply_pair(state, k * i + g, k * i + h, c, mis);
            }
        }
    }
    Ok(())
}

fn apply_pair(state: &mut [Complex64], a: usize, b: usize, c: f64, mis: Complex64) {
    let (ba, bb) = (1usize << a, 1usize << b);
    for x in 0..state.len() {
        // Visit each |10>, |01> pair once, from the member with bit a set.
        if x & ba != 0 && x & bb == 0 {
            let y = x ^ ba ^ bb;
            let (ax, ay) = (state[x], state[y]);
            state[x] = ax * c + ay * mis;
            state[y] = ay * c + ax * mis;
        }
    }
}

/// Blocks and layers of the mixer: `samples k(k-1)/2` blocks, and `k - 1`
/// layers for even `k` (`k` for odd) per the round-robin schedule.
pub fn mixer_gate_count(k: usize, samples: usize) -> (usize, usize) {
    if k < 2 {
        return (0, 0);
    }
    let blocks = samples * k * (k - 1) / 2;
    (blocks, mixer_schedule(k).len())
}

/// Round-robin edge colouring of `K_k`: each layer is a set of disjoint pairs.
pub fn mixer_schedule(k: usize) -> Vec<Vec<(usize, usize)>> {
    if k < 2 {
        return Vec::new();
    }
    let m = if k % 2 == 0 { k } else { k + 1 };
    let mut layers = Vec::with_capacity(m - 1);
    for r in 0..m - 1 {
        let mut layer = Vec::new();
        let pair = |a: usize, b: usize| (a.min(b), a.max(b));
        let (a, b) = (m - 1, r);
        if a < k && b < k {
            layer.push(pair(a, b));
        }
        for j in 1..m / 2 {
            let a = (r + j) % (m - 1);
            let b = (r + m - 1 - j) % (m - 1);
            if a < k && b < k {
                layer.push(pair(a, b));
            }
        }
        layer.sort_unstable();
        layers.push(layer);
    }
    layers
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaoaRun {
    pub gamma: f64,
    pub beta: f64,
    pub depth: usize,
    pub expected_energy: f64,
    pub warm_energy: f64,
    pub shots: usize,
    /// `(mask, count)` pairs, ascending by mask.
    pub samples: Vec<(u64, usize)>,
    pub best: Vec<bool>,
    pub best_energy: f64,
    /// False when no sampled string was feasible and `best` is the warm start.
    pub best_sampled: bool,
    #[serde(skip)]
    pub statevector: Vec<Complex64>,
}

/// Prepares `|d0>`, applies `exp(-iγH)` and the mixer.
pub fn prepare_state(energies: &[f64], warm: u64, gamma: f64, beta: f64, k: usize, n_samples: usize) -> Result<Vec<Complex64>> {
    let mut state = vec![Complex64::new(0.0, 0.0); energies.len()];
    state[warm as usize] = Complex64::new(1.0, 0.0);
    for (amp, &e) in state.iter_mut().zip(energies) {
        if amp.norm_sqr() > 0.0 {
            *amp *= Complex64::from_polar(1.0, -gamma * e);
        }
    }
    apply_xy_mixer(&mut state, beta, k, n_samples)?;
    Ok(state)
}

pub fn expectation(state: &[Complex64], energies: &[f64]) -> f64 {
    state.iter().zip(energies).map(|(a, e)| a.norm_sqr() * e).sum()
}

/// Grid search over `γ = π a / 32` and `β = (π/4)(b + 1)/32`, one Nelder-Mead
/// refinement from the best grid point, then `shots` samples of `|ψ|^2`.
pub fn run_qaoa_p1(qubo: &QuboModel, warm_start: &[bool], shots: usize, seed: u64) -> Result<QaoaRun> {
    qubo.check_dense()?;
    if warm_start.len() != qubo.n_vars() || !qubo.is_feasible(warm_start) {
        return Err(Error::InfeasibleWarmStart);
    }
    let energies = qubo.energy_table()?;
    let warm = bits_to_mask(warm_start);
    let (k, m) = (qubo.k(), qubo.n_samples());
    let eval = |gamma: f64, beta: f64| -> Result<f64> {
        Ok(expectation(&prepare_state(&energies, warm, gamma, beta, k, m)?, &energies))
    };

    let mut best = (0.0, PI / 4.0 / GRID_POINTS as f64, f64::INFINITY);
    for a in 0..GRID_POINTS {
        let gamma = PI * a as f64 / GRID_POINTS as f64;
        for b in 0..GRID_POINTS {
            let beta = PI / 4.0 * (b + 1) as f64 / GRID_POINTS as f64;
            let e = eval(gamma, beta)?;
            if e < best.2 {
                best = (gamma, beta, e);
            }
        }
    }
    let step = (PI / GRID_POINTS as f64, PI / 4.0 / GRID_POINTS as f64);
    let mut err = None;
    let refined = nelder_mead(
        |p| match eval(p[0], p[1]) {
            Ok(v) => v,
            Err(e) => {
                err = Some(e);
                f64::INFINITY
            }
        },
        [best.0, best.1],
        [step.0 / 2.0, step.1 / 2.0],
    );
    if let Some(e) = err {
        return Err(e);
    }
    let (gamma, beta) = if refined.1 < best.2 {
        (refined.0[0], refined.0[1])
    } else {
        (best.0, best.1)
    };
    let state = prepare_state(&energies, warm, gamma, beta, k, m)?;
    let expected_energy = expectation(&state, &energies);

    let samples = sample(&state, shots, seed);
    let n = qubo.n_vars();
    let mut chosen: Option<(u64, f64)> = None;
    for &(mask, _) in &samples {
        let bits = mask_to_bits(mask, n);
        if !qubo.is_feasible(&bits) {
            continue;
        }
        let e = energies[mask as usize];
        let better = match chosen {
            None => true,
            Some((bm, be)) => e < be || (e == be && lex_key(mask, n) < lex_key(bm, n)),
        };
        if better {
            chosen = Some((mask, e));
        }
    }
    let warm_energy = energies[warm as usize];
    let (best_mask, best_energy, best_sampled) = match chosen {
        Some((mask, e)) => (mask, e, true),
        None => (warm, warm_energy, false),
    };
    Ok(QaoaRun {
        gamma,
        beta,
        depth: 1,
        expected_energy,
        warm_energy,
        shots,
        samples,
        best: mask_to_bits(best_mask, n),
        best_energy,
        best_sampled,
        statevector: state,
    })
}

/// Draws `shots` basis states from `|ψ|^2` with a seeded generator.
pub fn sample(state: &[Complex64], shots: usize, seed: u64) -> Vec<(u64, usize)> {
    let mut cdf = Vec::with_capacity(state.len());
    let mut acc = 0.0;
    for a in state {
        acc += a.norm_sqr();
        cdf.push(acc);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = BTreeMap::new();
    for _ in 0..shots {
        let u = rng.random::<f64>() * acc;
        let idx = cdf.partition_point(|&c| c <= u).min(state.len() - 1);
        *counts.entry(idx as u64).or_insert(0) += 1;
    }
    counts.into_iter().collect()
}

/// Minimal two-parameter Nelder-Mead with standard coefficients.
fn nelder_mead(mut f: impl FnMut([f64; 2]) -> f64, x0: [f64; 2], step: [f64; 2]) -> ([f64; 2], f64) {
    let mut simplex = [x0, [x0[0] + step[0], x0[1]], [x0[0], x0[1] + step[1]]];
    let mut values = simplex.map(&mut f);
    let lerp = |a: [f64; 2], b: [f64; 2], t: f64| [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
    for _ in 0..NM_MAX_ITERS {
        let mut idx = [0, 1, 2];
        idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = idx.map(|i| simplex[i]);
        values = idx.map(|i| values[i]);
        if (values[2] - values[0]).abs() <= NM_TOL * (1.0 + values[0].abs()) {
            break;
        }
        let centroid = lerp(simplex[0], simplex[1], 0.5);
        let reflected = lerp(centroid, simplex[2], -1.0);
        let fr = f(reflected);
        if fr < values[0] {
            let expanded = lerp(centroid, simplex[2], -2.0);
            let fe = f(expanded);
            if fe < fr {
                simplex[2] = expanded;
                values[2] = fe;
            } else {
                simplex[2] = reflected;
                values[2] = fr;
            }
        } else if fr < values[1] {
            simplex[2] = reflected;
            values[2] = fr;
        } else {
            let contracted = if fr < values[2] {
                lerp(centroid, reflected, 0.5)
            } else {
                lerp(centroid, simplex[2], 0.5)
            };
            let fc = f(contracted);
            if fc < values[2].min(fr) {
                simplex[2] = contracted;
                values[2] = fc;
            } else {
                for i in 1..3 {
                    simplex[i] = lerp(simplex[0], simplex[i], 0.5);
                    values[i] = f(simplex[i]);
                }
            }
        }
    }
    let best = (0..3).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap_or(0);
    (simplex[best], values[best])
}
