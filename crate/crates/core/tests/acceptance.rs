//! Acceptance criteria. Each test prints one `PASS`/`FAIL` line before
//! asserting, so `cargo test --test acceptance -- --nocapture` doubles as a
//! report.

use std::io::Write;
use std::sync::OnceLock;
use std::time::Instant;

use dcso::admm::{self, aux_update, Agent, AdmmSettings};
use dcso::bilevel::{bigm_audit, bigm_linearize, build_kkt_for};
use dcso::evaluate::{saa_scenarios, Method};
use dcso::experiment::{prepare, run_experiment, run_sensitivity, Coordination, ExperimentConfig, ExperimentResult, Sweep, TopologyConfig};
use dcso::model::{BalanceMode, LoadProfile, Prices, ProsumerParams};
use dcso::program::Scenario;
use dcso::scenarios::{Dataset, Outcome, Provenance, Sample};
use dcso::solver::{solve_miqp, solve_qp, MipProblem, QpProblem, SolveStatus, SparseRow};
use dcso::weights::{cknn_weights, knn_neighbors, knn_weights};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Written to the raw stderr handle so the verdicts show up even when the
// harness captures the output of passing tests.
fn report(n: u32, name: &str, ok: bool, detail: &str) {
    let line = format!("criterion {n:>2} {name}: {} ({detail})\n", if ok { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
}

struct DefaultRun {
    result: ExperimentResult,
    secs: f64,
}

/// The default experiment, shared by the criteria that read it.
fn default_run() -> &'static DefaultRun {
    static RUN: OnceLock<DefaultRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let start = Instant::now();
        let result = run_experiment(&ExperimentConfig::default_config()).expect("default experiment");
        DefaultRun { result, secs: start.elapsed().as_secs_f64() }
    })
}

#[test]
fn c01_method_ordering() {
    let run = default_run();
    let r = &run.result;
    let mean = |m| r.method(m).map(|x| x.mean_cost).unwrap_or(f64::NAN);
    let chain = [Method::WsaaCknn, Method::WsaaKnn, Method::Saa, Method::Po];
    let costs: Vec<f64> = chain.iter().map(|&m| mean(m)).collect();
    let gaps: Vec<f64> = costs.windows(2).map(|w| (w[1] - w[0]) / w[1]).collect();
    let ok = r.failures.is_empty() && gaps.iter().all(|&g| g >= 0.01) && run.secs <= 600.0;
    let detail = format!(
        "CKNN {:.1} < KNN {:.1} < SAA {:.1} < PO {:.1} ¢; gaps {:.2}% {:.2}% {:.2}%; {} trials in {:.0} s",
        costs[0],
        costs[1],
        costs[2],
        costs[3],
        100.0 * gaps[0],
        100.0 * gaps[1],
        100.0 * gaps[2],
        r.config.trials,
        run.secs
    );
    report(1, "method ordering", ok, &detail);
    assert!(ok, "{detail}; failures {:?}", r.failures);
}

#[test]
fn c02_peak_reduction() {
    let r = &default_run().result;
    let red = r.reduction(Method::WsaaCknn).unwrap_or(f64::NAN);
    let ok = red >= 0.10;
    let detail = format!(
        "DCSO peak {:.1} kW vs baseline {:.1} kW, reduction {:.1}%",
        r.method(Method::WsaaCknn).map_or(f64::NAN, |m| m.peak),
        r.baseline_peak,
        100.0 * red
    );
    report(2, "peak-load reduction", ok, &detail);
    assert!(ok, "{detail}");
}

#[test]
fn c03_admm_matches_centralized() {
    let start = Instant::now();
    let settings = AdmmSettings { rho: 0.5, eps: 1e-4, ..AdmmSettings::default() };
    let mut worst_rel = 0.0_f64;
    let mut worst_gap = 0.0_f64;
    let mut instances = 0;
    for seed in 0..12u64 {
        let cfg = ExperimentConfig {
            seed,
            prosumers: 2 + (seed as usize % 3),
            horizon: 4 + (seed as usize % 3),
            samples: 6,
            trials: 1,
            topology: if seed % 2 == 0 { TopologyConfig::Complete } else { TopologyConfig::Ring { per_side: 1 } },
            training: dcso::experiment::TrainingConfig { po_k: 3, ..Default::default() },
            ..ExperimentConfig::default_config()
        };
        let prep = prepare(&cfg).unwrap();
        let mut agents: Vec<Agent> = prep
            .params
            .iter()
            .zip(&prep.train)
            .map(|(p, d)| Agent { params: p.clone(), scenarios: saa_scenarios(p, d) })
            .collect();
        admm::symmetrize_p2p_prices(&prep.topology, &mut agents).unwrap();
        let dist = admm::run(&prep.topology, &agents, &settings).unwrap();
        let central = admm::centralized(&prep.topology, &agents).unwrap();
        let rel = (dist.objective - central.objective).abs() / central.objective.abs().max(1.0);
        worst_rel = worst_rel.max(rel);
        worst_gap = worst_gap.max(dist.reciprocity_gap(&prep.topology));
        instances += 1;
        assert!(dist.converged, "seed {seed} did not converge");
    }
    let ok = worst_rel <= 1e-3 && worst_gap <= 10.0 * settings.eps;
    let detail = format!(
        "{instances} instances, worst relative gap {worst_rel:.2e}, worst |p_nm + p_mn| {worst_gap:.2e}, {:.1} s",
        start.elapsed().as_secs_f64()
    );
    report(3, "ADMM vs centralized", ok, &detail);
    assert!(ok, "{detail}");
}

#[test]
fn c04_residual_traces_converge() {
    let r = &default_run().result;
    let eps = r.config.admm.eps;
    let mut bad = Vec::new();
    let mut worst_iters = 0;
    let mut runs = 0;
    for t in r.trials.iter().filter(|t| !t.trace.is_empty()) {
        runs += 1;
        worst_iters = worst_iters.max(t.iterations);
        let m: Vec<f64> = t.trace.iter().map(|x| x.primal.max(x.dual)).collect();
        let last = *m.last().unwrap();
        let half = m.len() / 2;
        let first_half = m[..half.max(1)].iter().copied().fold(0.0, f64::max);
        let second_half = m[half..].iter().copied().fold(0.0, f64::max);
        let peak = m.iter().copied().fold(0.0, f64::max);
        // converged, and the tail never rises above the head
        let ok = t.converged && t.iterations <= 500 && last <= eps && second_half <= first_half && peak <= 10.0 * m[0];
        if !ok {
            bad.push(format!("trial {} {}", t.trial, t.method));
        }
    }
    let ok = runs > 0 && bad.is_empty();
    let detail = format!("{runs} ADMM runs, at most {worst_iters} iterations, {} non-conforming", bad.len());
    report(4, "ADMM residual traces", ok, &detail);
    assert!(ok, "{detail}: {bad:?}");
}

fn small_params(h: usize, neighbors: usize, mode: BalanceMode, rng: &mut ChaCha8Rng) -> ProsumerParams {
    let mut p = ProsumerParams::table_one(0);
    p.horizon = h;
    p.c_s = rng.random_range(5.0..30.0);
    p.p_s_ref = vec![p.c_s / h as f64; h];
    p.c_p_mt = (0..h).map(|_| rng.random_range(3.0..9.0)).collect();
    p.p_g = vec![2.0; h];
    p.p_l = vec![5.0; h];
    p.neighbors = (1..=neighbors).collect();
    p.balance = mode;
    p.q_mt_bounds = if mode == BalanceMode::Equality { (-60.0, 60.0) } else { (0.0, 60.0) };
    p
}

fn random_scenarios(p: &ProsumerParams, n: usize, rng: &mut ChaCha8Rng) -> Vec<Scenario> {
    let h = p.horizon;
    (0..n)
        .map(|_| Scenario {
            weight: rng.random_range(0.1..1.0),
            prices: Prices {
                c_q: (0..h).map(|_| rng.random_range(3.0..9.0)).collect(),
                c_nm: (0..p.n_neighbors()).map(|_| (0..h).map(|_| rng.random_range(3.0..9.0)).collect()).collect(),
            },
            loads: LoadProfile {
                p_g: (0..h).map(|_| rng.random_range(0.0..8.0)).collect(),
                p_l: (0..h).map(|_| rng.random_range(2.0..9.0)).collect(),
            },
        })
        .collect()
}

#[test]
fn c05_kkt_bigm_fidelity() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0_f64;
    let mut flagged = 0;
    let mut failed = 0;
    for i in 0..50 {
        let mode = if i % 2 == 0 { BalanceMode::Surplus } else { BalanceMode::Equality };
        let p = small_params(2, rng.random_range(0..2), mode, &mut rng);
        let sc = random_scenarios(&p, rng.random_range(1..3), &mut rng);
        let (kkt, prog) = build_kkt_for(&p, &sc).unwrap();
        let direct = solve_qp(&prog.qp).unwrap();
        let s = solve_miqp(&bigm_linearize(&kkt).unwrap()).unwrap();
        if !(direct.is_optimal() && s.is_optimal()) {
            failed += 1;
            continue;
        }
        worst = worst.max((s.objective - direct.objective).abs() / direct.objective.abs().max(1.0));
        flagged += usize::from(!bigm_audit(&kkt, &s.x).is_empty());
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = failed == 0 && worst <= 1e-4 && flagged == 0 && secs <= 120.0;
    let detail = format!("50 instances, worst relative gap {worst:.2e}, {flagged} near-M, {failed} unsolved, {secs:.1} s");
    report(5, "KKT/big-M fidelity", ok, &detail);
    assert!(ok, "{detail}");
}

/// Minimizes the auxiliary objective numerically: eliminate ẑ_mn = −ẑ_nm
/// and bisect on a central-difference slope, coordinate by coordinate.
fn aux_numeric(z_nm: &[f64], z_mn: &[f64], l_nm: &[f64], l_mn: &[f64], rho: f64) -> Vec<f64> {
    (0..z_nm.len())
        .map(|h| {
            let f = |a: f64| {
                -l_nm[h] * a + l_mn[h] * a + 0.5 * rho * (a - z_nm[h]).powi(2) + 0.5 * rho * (-a - z_mn[h]).powi(2)
            };
            let slope = |a: f64| {
                let d = 1e-3 * (1.0 + a.abs());
                (f(a + d) - f(a - d)) / (2.0 * d)
            };
            let (mut lo, mut hi) = (-1e6, 1e6);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if slope(mid) > 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            0.5 * (lo + hi)
        })
        .collect()
}

#[test]
fn c06_auxiliary_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0_f64;
    for _ in 0..1000 {
        let h = rng.random_range(1..25);
        let mut v = || (0..h).map(|_| rng.random_range(-50.0..50.0)).collect::<Vec<f64>>();
        let (z_nm, z_mn, l_nm, l_mn) = (v(), v(), v(), v());
        let rho = rng.random_range(0.05..5.0);
        let (a, b) = aux_update(&z_nm, &z_mn, &l_nm, &l_mn, rho);
        let num = aux_numeric(&z_nm, &z_mn, &l_nm, &l_mn, rho);
        for t in 0..h {
            worst = worst.max((a[t] - num[t]).abs()).max((b[t] + num[t]).abs());
        }
    }
    let ok = worst <= 1e-8;
    let detail = format!("1000 random inputs, worst deviation {worst:.2e}");
    report(6, "auxiliary closed form", ok, &detail);
    assert!(ok, "{detail}");
}

fn dataset(xs: Vec<Vec<f64>>) -> Dataset {
    let d = xs[0].len();
    let samples = xs
        .into_iter()
        .map(|x| Sample { x, y: Outcome { c_q: vec![1.0], c_nm: vec![], p_g: None, p_l: None } })
        .collect();
    Dataset::new((0..d).map(|f| format!("f{f}")).collect(), samples, Provenance::InMemory).unwrap()
}

#[test]
fn c07_weight_functions() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut simplex_fail = 0;
    let mut oracle_fail = 0;
    let mut reduction_fail = 0;
    for _ in 0..100 {
        let s = rng.random_range(2..200);
        let d = rng.random_range(1..9);
        let xs: Vec<Vec<f64>> = (0..s).map(|_| (0..d).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
        let ds = dataset(xs.clone());
        let q: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
        let nb: Vec<Vec<f64>> =
            (0..rng.random_range(0..5)).map(|_| (0..d).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
        let k = rng.random_range(1..=s);
        let gamma = rng.random_range(0.0..=1.0);

        let w = cknn_weights(&q, &nb, &ds, k, gamma).unwrap();
        if w.w.iter().any(|&v| v < 0.0) || (w.w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            simplex_fail += 1;
        }

        let mut order: Vec<usize> = (0..s).collect();
        let dist = |i: usize| xs[i].iter().zip(&q).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        order.sort_by(|&a, &b| dist(a).total_cmp(&dist(b)).then(a.cmp(&b)));
        if knn_neighbors(&q, &ds, k, None).unwrap() != order[..k] {
            oracle_fail += 1;
        }

        let own = cknn_weights(&q, &nb, &ds, k, 1.0).unwrap();
        let uni = cknn_weights(&q, &nb, &ds, s, 1.0).unwrap();
        if own.w != knn_weights(&q, &ds, k).unwrap().w || uni.w.iter().any(|&v| v != 1.0 / s as f64) {
            reduction_fail += 1;
        }
    }
    let ok = simplex_fail == 0 && oracle_fail == 0 && reduction_fail == 0;
    let detail = format!(
        "100 instances: {simplex_fail} simplex, {oracle_fail} brute-force, {reduction_fail} reduction failures"
    );
    report(7, "weight functions", ok, &detail);
    assert!(ok, "{detail}");
}

/// Convex objective over continuous x and binaries b, with `x_i ≤ u·b_i`
/// switching rows and a coupling budget.
fn random_mip(rng: &mut ChaCha8Rng) -> MipProblem {
    let n_bin = rng.random_range(1..=8);
    let n_cont = rng.random_range(1..=4);
    let n = n_cont + n_bin;
    let mut qp = QpProblem::new(n);
    for j in 0..n_cont {
        qp.quad.push((j, j, rng.random_range(0.5..3.0)));
        if j + 1 < n_cont {
            qp.quad.push((j, j + 1, rng.random_range(-0.2..0.2)));
        }
        qp.linear[j] = rng.random_range(-6.0..2.0);
        qp.lower[j] = 0.0;
        qp.upper[j] = 5.0;
    }
    for b in n_cont..n {
        qp.linear[b] = rng.random_range(-1.0..3.0);
        qp.lower[b] = 0.0;
        qp.upper[b] = 1.0;
        let j = rng.random_range(0..n_cont);
        qp.ineq.push(SparseRow::new(vec![(j, 1.0), (b, -rng.random_range(1.0..5.0))], 0.0));
    }
    qp.ineq.push(SparseRow::new((n_cont..n).map(|b| (b, 1.0)).collect(), rng.random_range(1.0..n_bin as f64 + 0.5)));
    if rng.random_bool(0.5) {
        qp.eq.push(SparseRow::new((0..n_cont).map(|j| (j, 1.0)).collect(), rng.random_range(0.0..3.0)));
    }
    MipProblem { qp, binary_indices: (n_cont..n).collect(), big_m: 5.0 }
}

fn enumerate_binaries(p: &MipProblem) -> Option<f64> {
    let nb = p.binary_indices.len();
    let mut best: Option<f64> = None;
    for mask in 0..(1u32 << nb) {
        let mut qp = p.qp.clone();
        for (i, &b) in p.binary_indices.iter().enumerate() {
            let v = f64::from((mask >> i) & 1);
            qp.lower[b] = v;
            qp.upper[b] = v;
        }
        let s = solve_qp(&qp).unwrap();
        if s.status == SolveStatus::Optimal {
            best = Some(best.map_or(s.objective, |b: f64| b.min(s.objective)));
        }
    }
    best
}

#[test]
fn c08_solver_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut mismatches = 0;
    let mut worst_stat = 0.0_f64;
    let mut worst_gap = 0.0_f64;
    for _ in 0..100 {
        let p = random_mip(&mut rng);
        let s = solve_miqp(&p).unwrap();
        match enumerate_binaries(&p) {
            Some(best) => {
                let gap = (s.objective - best).abs() / best.abs().max(1.0);
                worst_gap = worst_gap.max(gap);
                if !s.is_optimal() || gap > 1e-6 {
                    mismatches += 1;
                }
            }
            None => mismatches += usize::from(s.status != SolveStatus::Infeasible),
        }
        // duals of the continuous relaxation
        let relaxed = solve_qp(&p.qp).unwrap();
        if relaxed.is_optimal() {
            worst_stat = worst_stat.max(p.qp.stationarity(&relaxed).iter().fold(0.0, |a, v| a.max(v.abs())));
        }
    }
    let ok = mismatches == 0 && worst_stat <= 1e-6;
    let detail = format!("100 instances, {mismatches} mismatches (worst gap {worst_gap:.1e}), worst stationarity {worst_stat:.1e}");
    report(8, "solver oracle", ok, &detail);
    assert!(ok, "{detail}");
}

#[test]
fn c09_conservation() {
    let r = &default_run().result;
    let p = ProsumerParams::table_one(0);
    let energy = r.trials.iter().map(|t| t.energy_residual).fold(0.0, f64::max);
    let soc = r.trials.iter().map(|t| t.soc_violation).fold(0.0, f64::max);
    // SoC bounds are the Table I values for every prosumer
    let table = r.trials.iter().flat_map(|t| &t.decisions).flat_map(|z| &z.e).all(|&e| e >= p.e_min - 1e-6 && e <= p.e_max + 1e-6);
    let n = r.trials.iter().map(|t| t.decisions.len()).sum::<usize>();
    let ok = energy <= 1e-6 && soc <= 1e-6 && table && n > 0;
    let detail = format!("{n} decisions, worst |Σp_s·dt − C_s| {energy:.1e}, worst SoC excursion {soc:.1e}");
    report(9, "conservation", ok, &detail);
    assert!(ok, "{detail}");
}

#[test]
fn c10_sensitivity_to_sample_size() {
    let start = Instant::now();
    let mut base = ExperimentConfig::default_config();
    base.methods = vec![Method::WsaaCknn];
    // the pooled program reaches the same optimum as ADMM (criterion 3) in
    // a fraction of the time
    base.coordination = Coordination::Centralized;
    let rows = run_sensitivity(&base, &Sweep::Samples(vec![20, 50, 100]), &[1, 2, 3]).unwrap();
    let med: Vec<f64> = rows.iter().map(|r| r.median).collect();
    let ok = rows.len() == 3 && med.windows(2).all(|w| w[1] <= w[0]);
    let detail = format!(
        "DCSO median cost S=20 {:.1}, S=50 {:.1}, S=100 {:.1} ¢ over {} trials each, {:.0} s",
        med[0],
        med[1],
        med[2],
        rows[0].count,
        start.elapsed().as_secs_f64()
    );
    report(10, "sensitivity to sample size", ok, &detail);
    assert!(ok, "{detail}");
}
