//! Weighted sample-average programs for one prosumer.
//!
//! First-stage decisions (battery, shiftable load, day-ahead and P2P
//! trades) are shared by all scenarios; the real-time grid trade is a
//! recourse chosen after a scenario is realized. Two equivalent
//! formulations are provided:
//!
//! * [`Formulation::Explicit`] keeps one recourse copy per scenario, row for
//!   row the constraint system of [`crate::model`].
//! * [`Formulation::Reduced`] eliminates the recourse. For fixed first stage
//!   the best real-time trade has a closed form, so the expected recourse
//!   cost is a convex piecewise-linear function of the net first-stage
//!   position `u_h = p_b + p_s − p_mt − Σ p_nm`, written with one epigraph
//!   variable per step.

use serde::{Deserialize, Serialize};

use crate::model::{
    build_constraints_with, BalanceMode, ConstraintSystem, DecisionVector, Label, Layout, LoadProfile,
    ModelError, Prices, ProsumerParams,
};
use crate::scenarios::Dataset;
use crate::solver::{solve_qp, solve_qp_with, Backend, QpProblem, Solution, SolveStatus, SolverError, SparseRow};

#[derive(Debug, thiserror::Error)]
pub enum ProgramError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("scenario weights sum to zero")]
    NoWeight,
    #[error("infeasible: constraint families {labels:?} conflict")]
    Infeasible { labels: Vec<Label> },
    #[error("real-time trade {needed} needed at step {time} exceeds bounds [{lo}, {hi}]")]
    RecourseInfeasible { time: usize, needed: f64, lo: f64, hi: f64 },
    #[error("solver stopped with status {0:?}")]
    Status(SolveStatus),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// One weighted scenario of the uncertain prices, PV and load.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub weight: f64,
    pub prices: Prices,
    pub loads: LoadProfile,
}

impl Scenario {
    /// One scenario per sample carrying weight `w[i]`; zero weights are
    /// skipped.
    pub fn from_weights(p: &ProsumerParams, ds: &Dataset, w: &[f64]) -> Vec<Scenario> {
        ds.samples
            .iter()
            .zip(w)
            .filter(|(_, &wi)| wi > 0.0)
            .map(|(s, &weight)| Scenario { weight, prices: s.y.prices(), loads: s.y.loads(p) })
            .collect()
    }
}

/// Augmented-Lagrangian terms on the P2P trades:
/// `Σ_m λ_mᵀ(p_nm − ẑ_m) + (ρ/2)‖p_nm − ẑ_m‖²`.
#[derive(Clone, Debug, PartialEq)]
pub struct Proximal {
    pub lambda: Vec<Vec<f64>>,
    pub z_hat: Vec<Vec<f64>>,
    pub rho: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Formulation {
    Explicit,
    #[default]
    Reduced,
}

/// An assembled program plus the bookkeeping needed to read decisions back.
#[derive(Clone, Debug)]
pub struct WsaaProgram {
    pub qp: QpProblem,
    pub formulation: Formulation,
    /// Layout of the first stage plus, for the explicit form, the kept
    /// scenarios' recourse.
    pub layout: Layout,
    /// Indices (into the input) of scenarios with positive weight.
    pub kept: Vec<usize>,
    /// Normalized weights of the kept scenarios.
    pub weights: Vec<f64>,
    /// Explicit form only: the labeled rows the QP was built from.
    pub system: Option<ConstraintSystem>,
    loads: Vec<LoadProfile>,
    prices: Vec<Prices>,
}

#[derive(Clone, Debug)]
pub struct WsaaSolution {
    /// Recourse rows correspond to `kept` scenarios.
    pub decision: DecisionVector,
    pub kept: Vec<usize>,
    pub objective: f64,
    pub solution: Solution,
}

/// Net first-stage position per step: demand placed on the real-time trade
/// by first-stage decisions, before PV and load.
pub fn net_position(z: &DecisionVector) -> Vec<f64> {
    (0..z.p_b.len())
        .map(|h| z.p_b[h] + z.p_s[h] - z.p_mt[h] - z.p_nm.iter().map(|r| r[h]).sum::<f64>())
        .collect()
}

/// Cheapest real-time trade for a fixed first stage in one realization.
pub fn recourse_response(
    p: &ProsumerParams,
    z: &DecisionVector,
    loads: &LoadProfile,
    c_q: &[f64],
) -> Result<Vec<f64>, ProgramError> {
    let h_n = p.horizon;
    if z.p_b.len() != h_n || loads.p_g.len() != h_n || loads.p_l.len() != h_n || c_q.len() != h_n {
        return Err(ProgramError::Dimension("recourse inputs do not match horizon".into()));
    }
    let (lo, hi) = p.q_mt_bounds;
    let tol = 1e-9 * (1.0 + lo.abs().max(hi.abs()));
    net_position(z)
        .iter()
        .enumerate()
        .map(|(h, u)| {
            let needed = loads.p_l[h] - loads.p_g[h] + u;
            let q = match p.balance {
                BalanceMode::Equality => needed,
                BalanceMode::Surplus if c_q[h] >= 0.0 => needed.max(lo),
                BalanceMode::Surplus => hi,
            };
            if q < lo - tol || q > hi + tol || (p.balance == BalanceMode::Surplus && q < needed - tol) {
                return Err(ProgramError::RecourseInfeasible { time: h, needed, lo, hi });
            }
            Ok(q.clamp(lo, hi))
        })
        .collect()
}

fn normalize(scenarios: &[Scenario]) -> Result<(Vec<usize>, Vec<f64>), ProgramError> {
    if scenarios.iter().any(|s| !(s.weight >= 0.0) || !s.weight.is_finite()) {
        return Err(ProgramError::Dimension("scenario weights must be finite and non-negative".into()));
    }
    let total: f64 = scenarios.iter().map(|s| s.weight).sum();
    if !(total > 0.0) {
        return Err(ProgramError::NoWeight);
    }
    let kept: Vec<usize> = (0..scenarios.len()).filter(|&i| scenarios[i].weight > 0.0).collect();
    let weights = kept.iter().map(|&i| scenarios[i].weight / total).collect();
    Ok((kept, weights))
}

fn check_scenarios(p: &ProsumerParams, scenarios: &[Scenario]) -> Result<(), ProgramError> {
    let h = p.horizon;
    let m = p.n_neighbors();
    for (k, s) in scenarios.iter().enumerate() {
        let ok = s.prices.c_q.len() == h
            && s.prices.c_nm.len() == m
            && s.prices.c_nm.iter().all(|r| r.len() == h)
            && s.loads.p_g.len() == h
            && s.loads.p_l.len() == h;
        if !ok {
            return Err(ProgramError::Dimension(format!("scenario {k} does not match horizon {h} with {m} neighbors")));
        }
    }
    Ok(())
}

fn qp_from_system(sys: &ConstraintSystem, n_vars: usize) -> QpProblem {
    let mut qp = QpProblem::new(n_vars);
    qp.eq = sys.eq.clone();
    qp.ineq = sys.ineq.clone();
    qp.lower[..sys.lower.len()].copy_from_slice(&sys.lower);
    qp.upper[..sys.upper.len()].copy_from_slice(&sys.upper);
    qp
}

/// Flexibility, expected P2P and day-ahead cost, linear terms, plus the
/// optional proximal terms; everything but the recourse.
fn first_stage_objective(
    p: &ProsumerParams,
    lay: &Layout,
    qp: &mut QpProblem,
    prices: &[Prices],
    weights: &[f64],
    prox: Option<&Proximal>,
) -> Result<(), ProgramError> {
    let h_n = p.horizon;
    let dt = p.dt;
    for h in 0..h_n {
        if p.alpha_b != 0.0 {
            qp.quad.push((lay.p_b(h), lay.p_b(h), 2.0 * p.alpha_b));
        }
        qp.linear[lay.p_mt(h)] += dt * p.c_p_mt[h];
        for m in 0..lay.n_neighbors {
            let c: f64 = prices.iter().zip(weights).map(|(pr, w)| w * pr.c_nm[m][h]).sum();
            qp.linear[lay.p_nm(m, h)] += dt * c;
            if p.trade_penalty != 0.0 {
                qp.quad.push((lay.p_nm(m, h), lay.p_nm(m, h), 2.0 * dt * p.trade_penalty));
            }
        }
    }
    if p.alpha_s != 0.0 {
        for h in 0..=h_n {
            qp.quad.push((lay.s(h), lay.s(h), 2.0 * p.alpha_s));
        }
    }
    // β·|v| through epigraph variables a ≥ ±v
    let abs_epigraph = |qp: &mut QpProblem, beta: f64, idx: Vec<usize>| {
        if beta == 0.0 {
            return;
        }
        for j in idx {
            let a = qp.add_var(0.0, f64::INFINITY);
            qp.linear[a] = beta;
            qp.ineq.push(SparseRow::new(vec![(j, 1.0), (a, -1.0)], 0.0));
            qp.ineq.push(SparseRow::new(vec![(j, -1.0), (a, -1.0)], 0.0));
        }
    };
    abs_epigraph(qp, p.beta_b, (0..h_n).map(|h| lay.p_b(h)).collect());
    abs_epigraph(qp, p.beta_s, (0..=h_n).map(|h| lay.s(h)).collect());

    if let Some(px) = prox {
        if px.lambda.len() != lay.n_neighbors || px.z_hat.len() != lay.n_neighbors || !(px.rho > 0.0) {
            return Err(ProgramError::Dimension("proximal terms must cover every neighbor with rho > 0".into()));
        }
        for m in 0..lay.n_neighbors {
            if px.lambda[m].len() != h_n || px.z_hat[m].len() != h_n {
                return Err(ProgramError::Dimension("proximal vectors must have horizon length".into()));
            }
            for h in 0..h_n {
                let (l, zh) = (px.lambda[m][h], px.z_hat[m][h]);
                let j = lay.p_nm(m, h);
                qp.quad.push((j, j, px.rho));
                qp.linear[j] += l - px.rho * zh;
                qp.offset += -l * zh + 0.5 * px.rho * zh * zh;
            }
        }
    }
    Ok(())
}

/// Assembles the weighted SAA program. Zero-weight scenarios are dropped
/// and the remaining weights normalized.
pub fn build_wsaa(
    p: &ProsumerParams,
    scenarios: &[Scenario],
    prox: Option<&Proximal>,
    formulation: Formulation,
) -> Result<WsaaProgram, ProgramError> {
    p.validate()?;
    check_scenarios(p, scenarios)?;
    let (kept, weights) = normalize(scenarios)?;
    let loads: Vec<LoadProfile> = kept.iter().map(|&i| scenarios[i].loads.clone()).collect();
    let prices: Vec<Prices> = kept.iter().map(|&i| scenarios[i].prices.clone()).collect();
    let h_n = p.horizon;
    let dt = p.dt;

    match formulation {
        Formulation::Explicit => {
            let sys = build_constraints_with(p, &loads)?;
            let lay = sys.layout;
            let mut qp = qp_from_system(&sys, lay.n_vars());
            for (k, (pr, w)) in prices.iter().zip(&weights).enumerate() {
                for h in 0..h_n {
                    qp.linear[lay.q(k, h)] += w * dt * pr.c_q[h];
                }
            }
            first_stage_objective(p, &lay, &mut qp, &prices, &weights, prox)?;
            Ok(WsaaProgram { qp, formulation, layout: lay, kept, weights, system: Some(sys), loads, prices })
        }
        Formulation::Reduced => {
            let sys = build_constraints_with(p, &loads[..1])?;
            let lay = Layout::new(h_n, p.n_neighbors(), 0);
            let n_first = lay.n_first_stage();
            let mut qp = QpProblem::new(n_first);
            qp.lower.copy_from_slice(&sys.lower[..n_first]);
            qp.upper.copy_from_slice(&sys.upper[..n_first]);
            for (row, tag) in sys.eq.iter().zip(&sys.eq_tags) {
                if tag.label != Label::Balance {
                    qp.eq.push(row.clone());
                }
            }
            for (row, tag) in sys.ineq.iter().zip(&sys.ineq_tags) {
                if tag.label != Label::Balance {
                    qp.ineq.push(row.clone());
                }
            }
            let (q_lo, q_hi) = p.q_mt_bounds;
            for h in 0..h_n {
                let d: Vec<f64> = loads.iter().map(|l| l.p_l[h] - l.p_g[h]).collect();
                let d_max = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let d_min = d.iter().copied().fold(f64::INFINITY, f64::min);
                // Net shortfall u = p_b + p_s − p_mt − Σp_nm as its own
                // variable keeps the hinge rows two terms wide. Its box keeps
                // the recourse feasible for every kept scenario.
                let u_lo = match p.balance {
                    BalanceMode::Equality => q_lo - d_min,
                    BalanceMode::Surplus => f64::NEG_INFINITY,
                };
                let u = qp.add_var(u_lo, q_hi - d_max);
                let mut link = vec![(u, 1.0), (lay.p_b(h), -1.0), (lay.p_s(h), -1.0), (lay.p_mt(h), 1.0)];
                link.extend((0..lay.n_neighbors).map(|m| (lay.p_nm(m, h), 1.0)));
                qp.eq.push(SparseRow::new(link, 0.0));
                let t = qp.add_var(0.0, f64::INFINITY);
                match p.balance {
                    BalanceMode::Equality => {
                        // q = d + u exactly: linear in u
                        qp.upper[t] = 0.0;
                        for ((pr, w), dk) in prices.iter().zip(&weights).zip(&d) {
                            let kappa = w * dt * pr.c_q[h];
                            qp.offset += kappa * dk;
                            qp.linear[u] += kappa;
                        }
                    }
                    BalanceMode::Surplus => {
                        qp.linear[t] = 1.0;
                        let mut hinges: Vec<(f64, f64)> = Vec::new();
                        for ((pr, w), dk) in prices.iter().zip(&weights).zip(&d) {
                            let kappa = w * dt * pr.c_q[h];
                            if kappa >= 0.0 {
                                if !q_lo.is_finite() {
                                    return Err(ProgramError::Dimension(
                                        "surplus balance needs a finite lower real-time bound".into(),
                                    ));
                                }
                                qp.offset += kappa * q_lo;
                                hinges.push((q_lo - dk, kappa));
                            } else {
                                qp.offset += kappa * q_hi;
                            }
                        }
                        hinges.sort_by(|a, b| a.0.total_cmp(&b.0));
                        // Σ κ_i max(0, u − β_i) = max over sorted prefixes
                        let (mut slope, mut icpt) = (0.0, 0.0);
                        let mut i = 0;
                        while i < hinges.len() {
                            let beta = hinges[i].0;
                            while i < hinges.len() && hinges[i].0 == beta {
                                slope += hinges[i].1;
                                icpt += hinges[i].1 * beta;
                                i += 1;
                            }
                            qp.ineq.push(SparseRow::new(vec![(u, slope), (t, -1.0)], icpt));
                        }
                    }
                }
            }
            first_stage_objective(p, &lay, &mut qp, &prices, &weights, prox)?;
            Ok(WsaaProgram { qp, formulation, layout: lay, kept, weights, system: None, loads, prices })
        }
    }
}

impl WsaaProgram {
    /// Reads the decision back, filling recourse rows in closed form for
    /// the reduced formulation.
    pub fn decision(&self, p: &ProsumerParams, x: &[f64]) -> Result<DecisionVector, ProgramError> {
        let first = Layout::new(self.layout.horizon, self.layout.n_neighbors, 0);
        let mut z = DecisionVector::from_flat(&first, &x[..first.n_first_stage()]);
        z.q_mt = match self.formulation {
            Formulation::Explicit => {
                (0..self.kept.len()).map(|k| x[self.layout.q(k, 0)..self.layout.q(k, 0) + p.horizon].to_vec()).collect()
            }
            Formulation::Reduced => self
                .loads
                .iter()
                .zip(&self.prices)
                .map(|(l, pr)| recourse_response(p, &z, l, &pr.c_q))
                .collect::<Result<_, _>>()?,
        };
        Ok(z)
    }

    pub fn loads(&self) -> &[LoadProfile] {
        &self.loads
    }
}

/// Builds and solves; an infeasible program is diagnosed by relaxing one
/// constraint family at a time.
pub fn solve_wsaa(
    p: &ProsumerParams,
    scenarios: &[Scenario],
    prox: Option<&Proximal>,
    formulation: Formulation,
) -> Result<WsaaSolution, ProgramError> {
    let prog = build_wsaa(p, scenarios, prox, formulation)?;
    let sol = solve_qp_with(&prog.qp, Backend::Auto)?;
    match sol.status {
        SolveStatus::Optimal => {}
        SolveStatus::Infeasible => {
            let labels = diagnose(p, prog.loads())?;
            return Err(ProgramError::Infeasible { labels });
        }
        s => return Err(ProgramError::Status(s)),
    }
    let decision = prog.decision(p, &sol.x)?;
    Ok(WsaaSolution { decision, kept: prog.kept.clone(), objective: sol.objective, solution: sol })
}

/// Labels whose removal alone makes the explicit feasible set non-empty.
/// If no single family explains it, every family is listed.
pub fn diagnose(p: &ProsumerParams, loads: &[LoadProfile]) -> Result<Vec<Label>, ProgramError> {
    let sys = build_constraints_with(p, loads)?;
    let n = sys.n_vars();
    let mut culprits = Vec::new();
    for label in Label::ALL {
        let mut qp = QpProblem::new(n);
        for (row, tag) in sys.eq.iter().zip(&sys.eq_tags) {
            if tag.label != label {
                qp.eq.push(row.clone());
            }
        }
        for (row, tag) in sys.ineq.iter().zip(&sys.ineq_tags) {
            if tag.label != label {
                qp.ineq.push(row.clone());
            }
        }
        for j in 0..n {
            if sys.bound_tags[j].label != label {
                qp.lower[j] = sys.lower[j];
                qp.upper[j] = sys.upper[j];
            }
        }
        if solve_qp(&qp)?.status == SolveStatus::Optimal {
            culprits.push(label);
        }
    }
    if culprits.is_empty() {
        culprits = Label::ALL.to_vec();
    }
    Ok(culprits)
}
