//! Baseline methods and metrics: predict-then-optimize, SAA, ex-post
//! realized cost with re-optimized recourse, and grid-import peaks.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::{cost_total, DecisionVector, LoadProfile, ModelError, Prices, ProsumerParams};
use crate::program::{build_wsaa, recourse_response, Formulation, ProgramError, Scenario, WsaaProgram};
use crate::scenarios::{Dataset, Outcome};
use crate::solver::{solve_qp_with, Backend, SolveStatus};
use crate::weights::{knn_neighbors, WeightError};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Program(#[from] ProgramError),
    #[error(transparent)]
    Weight(#[from] WeightError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "PO")]
    Po,
    #[serde(rename = "SAA")]
    Saa,
    #[serde(rename = "WSAA_KNN")]
    WsaaKnn,
    #[serde(rename = "WSAA_CKNN")]
    WsaaCknn,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Po, Method::Saa, Method::WsaaKnn, Method::WsaaCknn];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Po => "PO",
            Method::Saa => "SAA",
            Method::WsaaKnn => "WSAA_KNN",
            Method::WsaaCknn => "WSAA_CKNN",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.as_str().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Point forecast: the mean outcome of the `k` nearest samples, as a single
/// unit-weight scenario.
pub fn po_scenario(p: &ProsumerParams, x_new: &[f64], ds: &Dataset, k: usize) -> Result<Scenario, EvalError> {
    let idx = knn_neighbors(x_new, ds, k, None)?;
    let h = p.horizon;
    let inv = 1.0 / idx.len() as f64;
    let mut prices = Prices { c_q: vec![0.0; h], c_nm: vec![vec![0.0; h]; p.n_neighbors()] };
    let mut loads = LoadProfile { p_g: vec![0.0; h], p_l: vec![0.0; h] };
    for &i in &idx {
        let y = &ds.samples[i].y;
        let l = y.loads(p);
        if y.c_q.len() != h || y.c_nm.len() != p.n_neighbors() {
            return Err(EvalError::Invalid(format!("sample {i} does not match prosumer {}", p.id)));
        }
        for t in 0..h {
            prices.c_q[t] += inv * y.c_q[t];
            loads.p_g[t] += inv * l.p_g[t];
            loads.p_l[t] += inv * l.p_l[t];
            for (acc, row) in prices.c_nm.iter_mut().zip(&y.c_nm) {
                acc[t] += inv * row[t];
            }
        }
    }
    Ok(Scenario { weight: 1.0, prices, loads })
}

/// Uniform weights over every sample.
pub fn saa_scenarios(p: &ProsumerParams, ds: &Dataset) -> Vec<Scenario> {
    let w = vec![1.0 / ds.len() as f64; ds.len()];
    Scenario::from_weights(p, ds, &w)
}

fn solve_local(p: &ProsumerParams, scenarios: &[Scenario]) -> Result<DecisionVector, EvalError> {
    Ok(crate::program::solve_wsaa(p, scenarios, None, Formulation::Reduced)?.decision)
}

/// Predict-then-optimize: deterministic solve on the kNN-mean forecast.
pub fn solve_po(p: &ProsumerParams, x_new: &[f64], ds: &Dataset, k: usize) -> Result<DecisionVector, EvalError> {
    solve_local(p, &[po_scenario(p, x_new, ds, k)?])
}

pub fn solve_saa(p: &ProsumerParams, ds: &Dataset) -> Result<DecisionVector, EvalError> {
    if ds.is_empty() {
        return Err(EvalError::Invalid("SAA needs at least one sample".into()));
    }
    solve_local(p, &saa_scenarios(p, ds))
}

/// Real-time trades re-optimized for the realized outcome.
pub fn realized_recourse(p: &ProsumerParams, z: &DecisionVector, y: &Outcome) -> Result<Vec<f64>, EvalError> {
    Ok(recourse_response(p, z, &y.loads(p), &y.c_q)?)
}

/// Realized cost (¢): flexibility plus trading at the realized prices with
/// the recourse re-optimized for that realization.
pub fn evaluate_expost(p: &ProsumerParams, z: &DecisionVector, y: &Outcome) -> Result<f64, EvalError> {
    let q = realized_recourse(p, z, y)?;
    Ok(cost_total(p, z, &q, &y.prices())?)
}

/// Per-step grid import `max(p_mt + q, 0)` at the realized outcome.
pub fn grid_import(p: &ProsumerParams, z: &DecisionVector, y: &Outcome) -> Result<Vec<f64>, EvalError> {
    let q = realized_recourse(p, z, y)?;
    Ok(z.p_mt.iter().zip(&q).map(|(a, b)| (a + b).max(0.0)).collect())
}

/// Uncoordinated reference: no battery use, shiftable load on its preferred
/// profile, no peer trades; only the grid purchase split is optimized.
pub fn baseline_decision(p: &ProsumerParams, scenarios: &[Scenario]) -> Result<DecisionVector, EvalError> {
    let energy: f64 = p.p_s_ref.iter().sum::<f64>() * p.dt;
    if (energy - p.c_s).abs() > 1e-6 * (1.0 + p.c_s.abs()) {
        return Err(EvalError::Invalid(format!(
            "preferred shiftable profile delivers {energy} kWh but {} kWh are required",
            p.c_s
        )));
    }
    let mut solo = p.clone();
    solo.neighbors.clear();
    solo.p_b_max = 0.0;
    let stripped: Vec<Scenario> = scenarios
        .iter()
        .map(|s| Scenario { weight: s.weight, prices: Prices { c_q: s.prices.c_q.clone(), c_nm: vec![] }, loads: s.loads.clone() })
        .collect();
    let mut prog: WsaaProgram = build_wsaa(&solo, &stripped, None, Formulation::Reduced)?;
    for h in 0..p.horizon {
        let j = prog.layout.p_s(h);
        prog.qp.lower[j] = p.p_s_ref[h];
        prog.qp.upper[j] = p.p_s_ref[h];
    }
    let sol = solve_qp_with(&prog.qp, Backend::Auto).map_err(ProgramError::from)?;
    if sol.status != SolveStatus::Optimal {
        return Err(ProgramError::Status(sol.status).into());
    }
    let mut z = prog.decision(&solo, &sol.x)?;
    z.p_nm = vec![vec![0.0; p.horizon]; p.n_neighbors()];
    Ok(z)
}

/// Community import per step, its peak, and the reduction against a
/// baseline peak.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeakMetrics {
    pub total: Vec<f64>,
    pub peak: f64,
    pub reduction: Option<f64>,
}

/// `imports[n][h]` is prosumer n's non-negative grid import at step h.
pub fn peak_metrics(imports: &[Vec<f64>], baseline_peak: Option<f64>) -> PeakMetrics {
    let h = imports.iter().map(Vec::len).max().unwrap_or(0);
    let mut total = vec![0.0; h];
    for row in imports {
        for (t, v) in row.iter().enumerate() {
            total[t] += v.max(0.0);
        }
    }
    let peak = total.iter().copied().fold(0.0_f64, f64::max);
    let reduction = baseline_peak.filter(|b| *b > 0.0).map(|b| 1.0 - peak / b);
    PeakMetrics { total, peak, reduction }
}

/// Aggregated outcome of one method over all trials.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: Method,
    /// Community cost of each trial (¢).
    pub costs: Vec<f64>,
    pub mean_cost: f64,
    /// Community import per step, averaged over trials (kW).
    pub import_profile: Vec<f64>,
    /// Largest entry of `import_profile`.
    pub peak: f64,
}

impl MethodResult {
    /// `profiles[t]` is the community import of trial t.
    pub fn new(method: Method, costs: Vec<f64>, profiles: &[Vec<f64>]) -> Result<Self, EvalError> {
        if costs.is_empty() || profiles.len() != costs.len() {
            return Err(EvalError::Invalid("a method result needs one cost and one profile per trial".into()));
        }
        let mean_cost = costs.iter().sum::<f64>() / costs.len() as f64;
        let h = profiles[0].len();
        let mut import_profile = vec![0.0; h];
        for row in profiles {
            for (acc, v) in import_profile.iter_mut().zip(row) {
                *acc += v / profiles.len() as f64;
            }
        }
        let peak = import_profile.iter().copied().fold(0.0_f64, f64::max);
        Ok(Self { method, costs, mean_cost, import_profile, peak })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_decision_with, BalanceMode};
    use crate::program::tests::{random_scenarios, small_params};
    use crate::scenarios::{Provenance, Sample};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dataset_from(p: &ProsumerParams, sc: &[Scenario], xs: &[f64]) -> Dataset {
        let samples = sc
            .iter()
            .zip(xs)
            .map(|(s, &x)| Sample {
                x: vec![x],
                y: Outcome {
                    c_q: s.prices.c_q.clone(),
                    c_nm: s.prices.c_nm.clone(),
                    p_g: Some(s.loads.p_g.clone()),
                    p_l: Some(s.loads.p_l.clone()),
                },
            })
            .collect();
        let _ = p;
        Dataset::new(vec!["x".into()], samples, Provenance::InMemory).unwrap()
    }

    #[test]
    fn zero_decision_zero_prices_costs_nothing() {
        let mut p = small_params(3, 1, BalanceMode::Surplus);
        p.c_p_mt = vec![0.0; 3];
        let mut z = DecisionVector::zeros(3, 1, 0);
        z.e = vec![p.e_init; 4];
        let y = Outcome { c_q: vec![0.0; 3], c_nm: vec![vec![0.0; 3]], p_g: Some(vec![1.0; 3]), p_l: Some(vec![1.0; 3]) };
        assert_eq!(evaluate_expost(&p, &z, &y).unwrap(), 0.0);
    }

    #[test]
    fn one_step_hand_arithmetic() {
        // H=1, dt=1: buy 2 day-ahead at 3; load 5, PV 1 → 2 more in real time
        // at 9; sell 1 to the neighbor at 6; battery and SL idle.
        let mut p = small_params(1, 1, BalanceMode::Surplus);
        p.c_p_mt = vec![3.0];
        p.c_s = 0.0;
        p.p_s_ref = vec![0.0];
        let mut z = DecisionVector::zeros(1, 1, 0);
        z.e = vec![p.e_init; 2];
        z.p_mt = vec![2.0];
        z.p_nm = vec![vec![-1.0]];
        let y = Outcome { c_q: vec![9.0], c_nm: vec![vec![6.0]], p_g: Some(vec![1.0]), p_l: Some(vec![5.0]) };
        assert_eq!(realized_recourse(&p, &z, &y).unwrap(), vec![3.0]);
        assert_relative_eq!(evaluate_expost(&p, &z, &y).unwrap(), 6.0 + 27.0 - 6.0);
    }

    #[test]
    fn reoptimized_recourse_never_worse_than_a_stored_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = small_params(4, 1, BalanceMode::Surplus);
        let sc = random_scenarios(&p, 5, &mut rng);
        let sol = crate::program::solve_wsaa(&p, &sc, None, Formulation::Explicit).unwrap();
        let realized = &sc[2];
        let y = Outcome {
            c_q: realized.prices.c_q.clone(),
            c_nm: realized.prices.c_nm.clone(),
            p_g: Some(realized.loads.p_g.clone()),
            p_l: Some(realized.loads.p_l.clone()),
        };
        let best = evaluate_expost(&p, &sol.decision, &y).unwrap();
        for (k, row) in sol.decision.q_mt.iter().enumerate() {
            // a stored row is only admissible if it covers the realized need
            let need: Vec<f64> = crate::program::net_position(&sol.decision)
                .iter()
                .enumerate()
                .map(|(h, u)| y.p_l.as_ref().unwrap()[h] - y.p_g.as_ref().unwrap()[h] + u)
                .collect();
            if row.iter().zip(&need).all(|(q, n)| *q >= n - 1e-9) {
                let c = cost_total(&p, &sol.decision, row, &y.prices()).unwrap();
                assert!(best <= c + 1e-9, "row {k}: {best} > {c}");
            }
        }
    }

    #[test]
    fn saa_is_uniform_wsaa_and_po_matches_on_constant_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = small_params(4, 1, BalanceMode::Surplus);
        let mut sc = random_scenarios(&p, 4, &mut rng);
        let ds = dataset_from(&p, &sc, &[0.0, 1.0, 2.0, 3.0]);
        let a = solve_saa(&p, &ds).unwrap();
        for s in &mut sc {
            s.weight = 1.0;
        }
        let b = crate::program::solve_wsaa(&p, &sc, None, Formulation::Reduced).unwrap().decision;
        assert_eq!(a, b);
        let po = solve_po(&p, &[1.2], &ds, 2).unwrap();
        let forecast = po_scenario(&p, &[1.2], &ds, 2).unwrap();
        assert!(validate_decision_with(&p, &po, &[forecast.loads], 1e-6).unwrap().is_empty());

        // identical samples: every method sees the same single distribution
        let same = vec![sc[0].clone(); 4];
        let ds = dataset_from(&p, &same, &[0.0, 1.0, 2.0, 3.0]);
        let po = solve_po(&p, &[0.3], &ds, 2).unwrap();
        let saa = solve_saa(&p, &ds).unwrap();
        assert_relative_eq!(
            evaluate_expost(&p, &po, &ds.samples[0].y).unwrap(),
            evaluate_expost(&p, &saa, &ds.samples[0].y).unwrap(),
            max_relative = 1e-7
        );
    }

    #[test]
    fn po_forecast_is_sample_mean_at_k_equal_s() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = small_params(2, 0, BalanceMode::Surplus);
        let sc = random_scenarios(&p, 3, &mut rng);
        let ds = dataset_from(&p, &sc, &[0.0, 5.0, 9.0]);
        let f = po_scenario(&p, &[4.0], &ds, 3).unwrap();
        for h in 0..2 {
            let mean = sc.iter().map(|s| s.prices.c_q[h]).sum::<f64>() / 3.0;
            assert_relative_eq!(f.prices.c_q[h], mean, max_relative = 1e-12);
        }
    }

    #[test]
    fn peaks() {
        let m = peak_metrics(&[vec![1.0, 2.0], vec![3.0, 1.0]], None);
        assert_eq!(m.total, vec![4.0, 3.0]);
        assert_eq!(m.peak, 4.0);
        assert_eq!(peak_metrics(&[vec![0.0, 0.0]], Some(3.0)).peak, 0.0);
        assert_eq!(peak_metrics(&[vec![1.0, 2.0]], Some(2.0)).reduction, Some(0.0));
    }

    #[test]
    fn baseline_keeps_battery_idle_and_profile_preferred() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = small_params(4, 2, BalanceMode::Surplus);
        let sc = random_scenarios(&p, 3, &mut rng);
        let z = baseline_decision(&p, &sc).unwrap();
        assert!(z.p_b.iter().all(|v| v.abs() < 1e-9));
        assert!(z.p_nm.iter().flatten().all(|v| *v == 0.0));
        for (a, b) in z.p_s.iter().zip(&p.p_s_ref) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(Method::parse(m.as_str()), Some(m));
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.as_str()));
        }
        let r = MethodResult::new(Method::Saa, vec![1.0, 3.0], &[vec![1.0, 4.0], vec![3.0, 0.0]]).unwrap();
        assert_eq!((r.mean_cost, r.peak), (2.0, 2.0));
    }
}
