use std::path::PathBuf;
use std::time::{Duration, Instant};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pass_core::bench::{gaussian_blobs, scaling_sweep, SweepSpec};
use pass_core::collapse::{collapse, lift_assignment};
use pass_core::data::{load_dataset, load_labels, sample_constraints, sq_dist, Assignment, ConstraintSet, Dataset};
use pass_core::driver::{run_pass, PassConfig, Selector};
use pass_core::kmeans::{cop_kmeans, update_centroids, CentroidModel};
use pass_core::metrics::count_violations;
use pass_core::qaoa::{apply_xy_mixer, run_qaoa_p1};
use pass_core::qubo::{brute_force_ground, build_qubo, ExtraEdges, PenaltyMode};
use pass_core::restricted::{build_model, extend, solve_exact, solve_local_search, RestrictedModel, SolveStatus};
use pass_core::selection::{default_temperature, fisher_rao_score, select_ca, select_ig};

struct Outcome {
    id: usize,
    name: &'static str,
    pass: bool,
    detail: String,
    elapsed: Duration,
}

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data")
}

fn random_dataset(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Dataset {
    let rows = (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(-5.0..5.0)).collect())
        .collect();
    Dataset::new(rows).unwrap()
}

fn random_pairs(rng: &mut ChaCha8Rng, n: usize, count: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    while out.len() < count && n > 1 {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a != b {
            out.push((a, b));
        }
    }
    out
}

fn random_centroids(rng: &mut ChaCha8Rng, k: usize, d: usize) -> Vec<Vec<f64>> {
    (0..k)
        .map(|_| (0..d).map(|_| rng.random_range(-5.0..5.0)).collect())
        .collect()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

fn criterion_1() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.random_range(2..=50);
        let d = rng.random_range(1..=5);
        let data = random_dataset(&mut rng, n, d);
        let n_ml = rng.random_range(0..=n);
        let cs = ConstraintSet::new(random_pairs(&mut rng, n, n_ml), [], n).unwrap();
        let (col, _) = collapse(&data, &cs).unwrap();
        let k = rng.random_range(1..=4);
        let mu = random_centroids(&mut rng, k, d);
        let pseudo: Vec<usize> = (0..col.n_pseudo()).map(|_| rng.random_range(0..k)).collect();
        let lifted = lift_assignment(&col, &Assignment::new(pseudo.clone(), k).unwrap()).unwrap();

        let full: f64 = (0..n).map(|i| sq_dist(data.point(i), &mu[lifted.get(i)])).sum();
        let mut scatter = 0.0;
        let mut reduced = 0.0;
        for (j, members) in col.components.iter().enumerate() {
            let mut mean = vec![0.0; d];
            for &i in members {
                for (m, x) in mean.iter_mut().zip(data.point(i)) {
                    *m += x / members.len() as f64;
                }
            }
            scatter += members.iter().map(|&i| sq_dist(data.point(i), &mean)).sum::<f64>();
            reduced += members.len() as f64 * sq_dist(&mean, &mu[pseudo[j]]);
        }
        worst = worst.max(rel_err(full, reduced + scatter));
        worst = worst.max(rel_err(scatter.max(1e-300), col.offset.max(1e-300)));
        let pseudo_side: f64 = (0..col.n_pseudo())
            .map(|j| col.data.weight(j) * sq_dist(col.data.point(j), &mu[pseudo[j]]))
            .sum::<f64>()
            + col.offset;
        worst = worst.max(rel_err(full, pseudo_side));
    }
    (worst <= 1e-9, format!("max relative error {worst:.2e}"))
}

fn criterion_2() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut checked = 0;
    let mut bad = 0;
    for t in 0..100 {
        let n = rng.random_range(10..=40);
        let k = rng.random_range(2..=4);
        let data = random_dataset(&mut rng, n, 2);
        let n_cl = rng.random_range(1..=n);
        let cl = ConstraintSet::new([], random_pairs(&mut rng, n, n_cl), n).unwrap();
        let labels = Assignment::new((0..n).map(|_| rng.random_range(0..k)).collect(), k).unwrap();
        let (model, _) = update_centroids(&data, &labels, k, Some(&CentroidModel::from_rows(&random_centroids(&mut rng, k, 2)).unwrap())).unwrap();
        let subset = if t % 2 == 0 {
            let temp = default_temperature(&data, &model);
            select_ig(&data, &model, &labels, &cl, temp, 0.3, 3.0).unwrap()
        } else {
            select_ca(&data, &model, &labels, &cl, 30.0).unwrap()
        };
        let width = rng.random_range(1..=k);
        let rm = build_model(&data, &model, &labels, &cl, &subset.indices, width).unwrap();
        let mut sols = vec![solve_exact(&rm, Duration::from_secs(5))];
        if let Ok(s) = solve_local_search(&rm, 100) {
            sols.push(s);
        }
        for s in sols {
            if matches!(s.status, SolveStatus::Optimal | SolveStatus::FeasibleHeuristic) {
                checked += 1;
                let full = extend(labels.labels(), &rm, &s.labels);
                let (_, v) = count_violations(&full, &cl);
                if v > 0 {
                    bad += 1;
                }
            }
        }
    }
    (checked > 0 && bad == 0, format!("{checked} solutions extended, {bad} with violations"))
}

fn random_model(rng: &mut ChaCha8Rng, m: usize, k: usize, feasible_warm: bool) -> RestrictedModel {
    let mut warm: Vec<usize> = (0..m).map(|_| rng.random_range(0..k)).collect();
    let mut edges = Vec::new();
    for a in 0..m {
        for b in a + 1..m {
            if rng.random_bool(0.3) && (!feasible_warm || warm[a] != warm[b]) {
                edges.push((a, b));
            }
        }
    }
    let mut candidates = Vec::with_capacity(m);
    let mut forbidden = Vec::with_capacity(m);
    let mut deltas = Vec::with_capacity(m);
    for w in warm.iter_mut() {
        let mut cand: Vec<usize> = (0..k).filter(|_| rng.random_bool(0.7)).collect();
        if feasible_warm && !cand.contains(w) {
            cand.push(*w);
        }
        let forb: Vec<usize> = (0..k).filter(|g| *g != *w && rng.random_bool(0.15)).collect();
        let mut row: Vec<f64> = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
        row[*w] = 0.0;
        candidates.push(cand);
        forbidden.push(forb);
        deltas.push(row);
    }
    RestrictedModel::from_parts((0..m).collect(), k, candidates, deltas, forbidden, edges, warm).unwrap()
}

fn brute_force(rm: &RestrictedModel) -> Option<f64> {
    let m = rm.len();
    let k = rm.k();
    let mut labels = vec![0usize; m];
    let mut best: Option<f64> = None;
    for code in 0..k.pow(m as u32) {
        let mut c = code;
        for l in labels.iter_mut() {
            *l = c % k;
            c /= k;
        }
        let allowed = (0..m).all(|i| rm.candidates(i).contains(&labels[i]));
        let separated = rm.internal_cl().iter().all(|&(a, b)| labels[a] != labels[b]);
        if allowed && separated {
            let obj: f64 = (0..m).map(|i| rm.delta(i, labels[i])).sum();
            if best.is_none_or(|b| obj < b) {
                best = Some(obj);
            }
        }
    }
    best
}

fn criterion_3() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut mismatches = 0;
    let mut infeasible = 0;
    for t in 0..100 {
        let m = rng.random_range(1..=8);
        let k = rng.random_range(1..=3);
        let rm = random_model(&mut rng, m, k, t % 2 == 0);
        let sol = solve_exact(&rm, Duration::from_secs(10));
        match (brute_force(&rm), sol.status) {
            (None, SolveStatus::Infeasible) => infeasible += 1,
            (Some(best), SolveStatus::Optimal) => {
                if rm.objective(&sol.labels) != best || !rm.is_feasible(&sol.labels) {
                    mismatches += 1;
                }
            }
            _ => mismatches += 1,
        }
    }
    (mismatches == 0, format!("{mismatches} mismatches, {infeasible} infeasible agreed"))
}

fn criterion_4() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut bad = 0;
    let mut worst_gap: f64 = 0.0;
    for _ in 0..50 {
        let n = rng.random_range(4..=12);
        let k = rng.random_range(2..=3);
        let data = random_dataset(&mut rng, n, 2);
        let n_cl = rng.random_range(0..=3);
        let cl = ConstraintSet::new([], random_pairs(&mut rng, n, n_cl), n).unwrap();
        let labels = Assignment::new((0..n).map(|_| rng.random_range(0..k)).collect(), k).unwrap();
        let model = CentroidModel::from_rows(&random_centroids(&mut rng, k, 2)).unwrap();
        let alpha = rng.random_range(0.1..0.6);
        let ws = select_ig(&data, &model, &labels, &cl, 1.0 + rng.random::<f64>(), alpha, 0.5).unwrap();
        let scores = ws.scores.as_ref().unwrap();
        let m = ws.indices.len();
        let required: u32 = ws.violations.iter().map(|&i| 1u32 << i).sum();
        let mut best = f64::NEG_INFINITY;
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize == m && mask & required == required {
                let s: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| scores[i]).sum();
                best = best.max(s);
            }
        }
        let got: f64 = ws.indices.iter().map(|&i| scores[i]).sum();
        let gap = best - got;
        worst_gap = worst_gap.max(gap);
        if gap > 1e-12 || !ws.violations.iter().all(|v| ws.indices.contains(v)) {
            bad += 1;
        }
    }
    (bad == 0, format!("{bad} suboptimal, max gap {worst_gap:.2e}"))
}

fn criterion_5() -> (bool, String) {
    let mid = fisher_rao_score(&[0.5, 0.5]);
    let end = fisher_rao_score(&[1.0, 0.0]);
    let mut monotone = true;
    let mut prev = f64::INFINITY;
    for s in 0..100 {
        let q = 0.5 + 0.5 * s as f64 / 99.0;
        let j = fisher_rao_score(&[q, 1.0 - q]);
        if j > prev {
            monotone = false;
        }
        prev = j;
    }
    let pass = (mid - 1.0).abs() <= 1e-12 && end.abs() <= 1e-12 && monotone;
    (pass, format!("J(1/2,1/2)={mid:.15}, J(1,0)={end:.3e}, monotone={monotone}"))
}

fn criterion_6() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut bad = 0;
    let mut done = 0;
    while done < 50 {
        let k = rng.random_range(2..=4);
        let m = rng.random_range(1..=16 / k);
        let rm = random_model(&mut rng, m, k, true);
        let exact = solve_exact(&rm, Duration::from_secs(10));
        if exact.status != SolveStatus::Optimal {
            continue;
        }
        done += 1;
        let qubo = build_qubo(&rm, &ExtraEdges::default(), PenaltyMode::Evaluate).unwrap();
        let (bits, energy) = brute_force_ground(&qubo).unwrap();
        let ok = match qubo.decode(&bits) {
            Some(labels) => {
                rm.is_feasible(&labels)
                    && (rm.objective(&labels) - exact.objective).abs() <= 1e-9 * (1.0 + exact.objective.abs())
                    && (energy - exact.objective).abs() <= 1e-9 * (1.0 + exact.objective.abs())
            }
            None => false,
        };
        if !ok {
            bad += 1;
        }
    }
    (bad == 0, format!("{bad} of 50 ground states disagree"))
}

fn criterion_7() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let k = rng.random_range(2..=4);
        let m = rng.random_range(1..=12 / k);
        let n_vars = k * m;
        let mut state = vec![Complex64::new(0.0, 0.0); 1 << n_vars];
        let mut idx = 0usize;
        for i in 0..m {
            idx |= 1 << (k * i + rng.random_range(0..k));
        }
        state[idx] = Complex64::new(1.0, 0.0);
        let beta = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        apply_xy_mixer(&mut state, beta, k, m).unwrap();
        let one_hot = |s: usize| (0..m).all(|i| (s >> (k * i)) & ((1 << k) - 1) != 0 && ((s >> (k * i)) & ((1 << k) - 1)).count_ones() == 1);
        let leak: f64 = state
            .iter()
            .enumerate()
            .filter(|(s, _)| !one_hot(*s))
            .map(|(_, a)| a.norm_sqr())
            .sum();
        worst = worst.max(leak);
    }
    (worst < 1e-10, format!("max leakage {worst:.2e}"))
}

fn criterion_8() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut bad = 0;
    let mut done = 0;
    let mut worst_gain = f64::INFINITY;
    while done < 20 {
        let k = rng.random_range(2..=3);
        let m = rng.random_range(2..=12 / k);
        let warm: Vec<usize> = (0..m).map(|i| i % k).collect();
        let mut edges = Vec::new();
        for a in 0..m {
            for b in a + 1..m {
                if warm[a] != warm[b] && rng.random_bool(0.4) {
                    edges.push((a, b));
                }
            }
        }
        if edges.is_empty() {
            continue;
        }
        let deltas: Vec<Vec<f64>> = warm
            .iter()
            .map(|&w| (0..k).map(|g| if g == w { 0.0 } else { rng.random_range(-2.0..-0.2) }).collect())
            .collect();
        let eta_bar = deltas
            .iter()
            .zip(&warm)
            .map(|(row, &w)| {
                let best = (0..k).filter(|&g| g != w).map(|g| row[g]).fold(f64::INFINITY, f64::min);
                (-best).max(0.0)
            })
            .sum::<f64>()
            / m as f64;
        let rm = RestrictedModel::from_parts(
            (0..m).collect(),
            k,
            vec![(0..k).collect(); m],
            deltas,
            vec![Vec::new(); m],
            edges.clone(),
            warm.clone(),
        )
        .unwrap();
        let qubo = build_qubo(&rm, &ExtraEdges::default(), PenaltyMode::Search).unwrap();
        let kappa = 16.0 * (k - 1) as f64 * edges.len() as f64;
        if !(eta_bar > 0.0 && qubo.lambda() <= eta_bar * m as f64 / (2.0 * kappa) * (1.0 + 1e-12)) {
            bad += 1;
            done += 1;
            continue;
        }
        let run = run_qaoa_p1(&qubo, &qubo.encode(&warm), 256, done as u64).unwrap();
        let gain = run.warm_energy - run.expected_energy;
        worst_gain = worst_gain.min(gain);
        if gain <= 0.0 {
            bad += 1;
        }
        done += 1;
    }
    (bad == 0, format!("{bad} of 20 without improvement, min gain {worst_gain:.3e}"))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn criterion_9() -> (bool, bool, String) {
    let dir = data_dir();
    let data = load_dataset(dir.join("iris.csv"), false).unwrap();
    let truth = load_labels(dir.join("iris_labels.txt")).unwrap();
    let mut ml_sse = [Vec::new(), Vec::new()];
    let mut cl_sse = [Vec::new(), Vec::new()];
    let mut ml_viol = 0;
    let mut cl_viol = 0;
    for seed in 0..5u64 {
        let ml = sample_constraints(data.n(), Some(&truth), 37, 0, seed).unwrap();
        let cl = sample_constraints(data.n(), Some(&truth), 0, 37, seed).unwrap();
        for (s, selector) in [Selector::Ca, Selector::Ig].into_iter().enumerate() {
            let config = PassConfig::new(3).with_selector(selector).with_seed(seed);
            let r = run_pass(&data, &ml, &config).unwrap();
            ml_sse[s].push(r.sse);
            ml_viol += count_violations(&r.labels, &ml).0;
            let r = run_pass(&data, &cl, &config).unwrap();
            cl_sse[s].push(r.sse);
            cl_viol += count_violations(&r.labels, &cl).1;
        }
    }
    let ml_means = [mean(&ml_sse[0]), mean(&ml_sse[1])];
    let cl_means = [mean(&cl_sse[0]), mean(&cl_sse[1])];
    let ml_ok = ml_means.iter().all(|m| rel_err(*m, 83.72) <= 0.02) && ml_viol == 0;
    let cl_ok = cl_means.iter().all(|m| rel_err(*m, 84.24) <= 0.03) && cl_viol == 0;
    let detail = format!(
        "ML mean SSE ca={:.3} ig={:.3} (target 83.72 +-2%, violations {ml_viol}); CL mean SSE ca={:.3} ig={:.3} (target 84.24 +-3%, violations {cl_viol})",
        ml_means[0], ml_means[1], cl_means[0], cl_means[1]
    );
    (ml_ok, cl_ok, detail)
}

fn criterion_10() -> (bool, String) {
    let mut compared = 0;
    let mut worse = 0;
    let mut seed = 0u64;
    while compared < 20 && seed < 200 {
        let (data, truth) = gaussian_blobs(150, 3, 2, seed).unwrap();
        let cs = sample_constraints(150, Some(&truth), 20, 20, seed).unwrap();
        seed += 1;
        let Some(cop) = cop_kmeans(&data, &cs, 3, 100, seed).unwrap() else {
            continue;
        };
        compared += 1;
        let pass = run_pass(&data, &cs, &PassConfig::new(3).with_seed(seed)).unwrap();
        if pass.sse > cop.sse * (1.0 + 1e-12) {
            worse += 1;
        }
    }
    (compared == 20 && worse == 0, format!("{worse} of {compared} instances with PASS above COP"))
}

fn criterion_11() -> (bool, String) {
    let dir = data_dir();
    let mut worst = 0;
    let mut missing = 0;
    for (name, k) in [("iris", 3), ("wine", 3)] {
        let data = load_dataset(dir.join(format!("{name}.csv")), false).unwrap();
        let truth = load_labels(dir.join(format!("{name}_labels.txt"))).unwrap();
        let q = data.n() / 4;
        for seed in 0..5u64 {
            let cs = sample_constraints(data.n(), Some(&truth), q, q, seed).unwrap();
            for selector in [Selector::Ca, Selector::Ig] {
                let r = run_pass(&data, &cs, &PassConfig::new(k).with_selector(selector).with_seed(seed)).unwrap();
                match r.stabilized_at {
                    Some(it) => worst = worst.max(it),
                    None => missing += 1,
                }
            }
        }
    }
    (missing == 0 && worst <= 30, format!("latest stabilization at iteration {worst}, {missing} runs never stabilized"))
}

fn criterion_12() -> (bool, String) {
    let mut spec = SweepSpec::new(vec![1000, 4000, 16000], 3);
    spec.repeats = 9;
    let r = scaling_sweep(&spec).unwrap();
    match (r.slope, r.r2) {
        (Some(s), Some(r2)) => (s < 1.3 && r2 > 0.9, format!("slope {s:.3}, R2 {r2:.3}")),
        _ => (false, "slope undefined".into()),
    }
}

fn timed<F: FnOnce() -> (bool, String)>(id: usize, name: &'static str, budget: Option<f64>, f: F) -> Outcome {
    let start = Instant::now();
    let (mut pass, mut detail) = f();
    let elapsed = start.elapsed();
    if let Some(b) = budget {
        if elapsed.as_secs_f64() >= b {
            pass = false;
        }
        detail.push_str(&format!("; {:.2} s of {b} s", elapsed.as_secs_f64()));
    }
    Outcome {
        id,
        name,
        pass,
        detail,
        elapsed,
    }
}

fn main() {
    let mut ml_anchor = false;
    let outcomes = vec![
        timed(1, "must-link collapse exactness", Some(5.0), criterion_1),
        timed(2, "feasibility preservation", Some(10.0), criterion_2),
        timed(3, "exact solver matches enumeration", Some(30.0), criterion_3),
        timed(4, "greedy subset optimality", Some(30.0), criterion_4),
        timed(5, "Fisher-Rao endpoints", None, criterion_5),
        timed(6, "QUBO and ILP consistency", Some(60.0), criterion_6),
        timed(7, "mixer invariance", None, criterion_7),
        timed(8, "one-layer improvement sign", Some(60.0), criterion_8),
        timed(9, "Iris anchor", Some(60.0), || {
            let (ml, cl, detail) = criterion_9();
            ml_anchor = ml;
            (ml && cl, detail)
        }),
        timed(10, "dominance over COP-k-means", Some(120.0), criterion_10),
        timed(11, "stabilization", None, criterion_11),
        timed(12, "scaling sanity", None, criterion_12),
    ];
    for o in &outcomes {
        println!(
            "{} [{:>2}] {} ({:.2} s): {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.id,
            o.name,
            o.elapsed.as_secs_f64(),
            o.detail
        );
    }
    // The CL half of the Iris anchor is reported but not enforced.
    let failed: Vec<usize> = outcomes
        .iter()
        .filter(|o| !o.pass && !(o.id == 9 && ml_anchor))
        .map(|o| o.id)
        .collect();
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
