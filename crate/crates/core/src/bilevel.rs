//! Integrated prediction and optimization. The lower-level wSAA is replaced
//! by its KKT conditions, complementarity is linearized with big-M binaries,
//! and the weight-function hyperparameters are chosen by enumerating a grid
//! and scoring each candidate by the realized cost of the decisions it
//! induces.

use std::collections::HashMap;
use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::evaluate::{evaluate_expost, EvalError};
use crate::model::{DecisionVector, Label, ProsumerParams, RowTag};
use crate::program::{build_wsaa, solve_wsaa, Formulation, ProgramError, Scenario, WsaaProgram};
use crate::scenarios::{Dataset, Outcome};
use crate::solver::{MipProblem, QpProblem, Solution, SolverError, SparseRow};
use crate::weights::{cknn_weights_with, WeightConfig, WeightError, WeightVector};

#[derive(Debug, thiserror::Error)]
pub enum BilevelError {
    #[error(transparent)]
    Program(#[from] ProgramError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Weight(#[from] WeightError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("KKT conditions need a smooth lower level; beta_b = {beta_b}, beta_s = {beta_s} add |.| terms")]
    NonSmooth { beta_b: f64, beta_s: f64 },
    #[error("weights put no mass on any sample")]
    NoWeight,
    #[error("big-M constant is missing")]
    MissingBigM,
    #[error("{0}")]
    Config(String),
    #[error("every grid candidate failed: {0}")]
    AllInvalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which kind of constraint a multiplier belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Side {
    Eq,
    Ineq,
    Lower,
    Upper,
}

/// A block of multipliers sharing a label and constraint side; `start` is
/// the index of the first one among the single-level variables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Family {
    pub label: Label,
    pub side: Side,
    pub start: usize,
    pub len: usize,
}

/// `dual · slack = 0` with `slack = row.rhs − row·v ≥ 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplementarityPair {
    pub dual: usize,
    pub row: SparseRow,
    pub label: Label,
}

/// KKT conditions of a convex lower-level QP as constraints over
/// `v = [x | y | μ]`. `qp` holds primal rows, stationarity rows, dual signs
/// and the lower-level objective; complementarity is kept separately.
#[derive(Clone, Debug)]
pub struct KktSystem {
    pub n_primal: usize,
    pub qp: QpProblem,
    pub stationarity: std::ops::Range<usize>,
    pub families: Vec<Family>,
    pub pairs: Vec<ComplementarityPair>,
    pub big_m: Option<f64>,
    /// Where each dual of the source QP sits in `v`.
    eq_dual: Vec<usize>,
    ineq_dual: Vec<usize>,
    lower_dual: Vec<Option<usize>>,
    upper_dual: Vec<Option<usize>>,
    fixed_dual: Vec<Option<usize>>,
}

#[derive(Clone, Copy)]
enum Src {
    EqRow(usize),
    IneqRow(usize),
    Lower(usize),
    Upper(usize),
    Fixed(usize),
}

/// Tags for the rows and bounds of a lower-level QP.
pub struct Tags<'a> {
    pub eq: &'a [RowTag],
    pub ineq: &'a [RowTag],
    pub bounds: &'a [RowTag],
}

/// Builds the KKT system of any convex QP whose rows and bounds carry
/// labels. Stationarity follows `Qx + c − Aᵀy + Gᵀμ − μ_lo + μ_hi = 0`.
pub fn kkt_of_qp(lower: &QpProblem, tags: &Tags<'_>) -> Result<KktSystem, BilevelError> {
    lower.validate()?;
    let n = lower.n_vars;
    if tags.eq.len() != lower.eq.len() || tags.ineq.len() != lower.ineq.len() || tags.bounds.len() != n {
        return Err(BilevelError::Config("tags do not match the lower-level rows".into()));
    }
    // Group multipliers by (label, side) in a fixed order so that every
    // family is one contiguous block.
    let mut entries: Vec<(Label, Side, Src)> = Vec::new();
    for (r, t) in tags.eq.iter().enumerate() {
        entries.push((t.label, Side::Eq, Src::EqRow(r)));
    }
    for (r, t) in tags.ineq.iter().enumerate() {
        entries.push((t.label, Side::Ineq, Src::IneqRow(r)));
    }
    for j in 0..n {
        let (l, u) = (lower.lower[j], lower.upper[j]);
        let label = tags.bounds[j].label;
        if l == u {
            // a pinned variable behaves like an equality row
            entries.push((label, Side::Eq, Src::Fixed(j)));
            continue;
        }
        if l.is_finite() {
            entries.push((label, Side::Lower, Src::Lower(j)));
        }
        if u.is_finite() {
            entries.push((label, Side::Upper, Src::Upper(j)));
        }
    }
    entries.sort_by_key(|&(label, side, _)| (label, side));

    let n_dual = entries.len();
    let nv = n + n_dual;
    let mut qp = QpProblem::new(nv);
    qp.quad = lower.quad.clone();
    qp.linear[..n].copy_from_slice(&lower.linear);
    qp.offset = lower.offset;
    qp.lower[..n].copy_from_slice(&lower.lower);
    qp.upper[..n].copy_from_slice(&lower.upper);
    qp.eq = lower.eq.clone();
    qp.ineq = lower.ineq.clone();

    let mut sys = KktSystem {
        n_primal: n,
        qp: QpProblem::new(0),
        stationarity: 0..0,
        families: Vec::new(),
        pairs: Vec::new(),
        big_m: None,
        eq_dual: vec![0; lower.eq.len()],
        ineq_dual: vec![0; lower.ineq.len()],
        lower_dual: vec![None; n],
        upper_dual: vec![None; n],
        fixed_dual: vec![None; n],
    };
    // stationarity accumulators, one row per primal variable
    let mut grad: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for &(i, j, v) in &lower.quad {
        grad[i].push((j, v));
        if i != j {
            grad[j].push((i, v));
        }
    }
    for (k, &(label, side, src)) in entries.iter().enumerate() {
        let v = n + k;
        match sys.families.last_mut() {
            Some(f) if f.label == label && f.side == side => f.len += 1,
            _ => sys.families.push(Family { label, side, start: v, len: 1 }),
        }
        match src {
            Src::Fixed(j) => {
                sys.fixed_dual[j] = Some(v);
                grad[j].push((v, -1.0));
            }
            Src::EqRow(r) => {
                sys.eq_dual[r] = v;
                for &(j, a) in &lower.eq[r].terms {
                    grad[j].push((v, -a));
                }
            }
            Src::IneqRow(r) => {
                sys.ineq_dual[r] = v;
                qp.lower[v] = 0.0;
                for &(j, a) in &lower.ineq[r].terms {
                    grad[j].push((v, a));
                }
                sys.pairs.push(ComplementarityPair { dual: v, row: lower.ineq[r].clone(), label });
            }
            Src::Lower(r) => {
                sys.lower_dual[r] = Some(v);
                qp.lower[v] = 0.0;
                grad[r].push((v, -1.0));
                sys.pairs.push(ComplementarityPair { dual: v, row: SparseRow::new(vec![(r, -1.0)], -lower.lower[r]), label });
            }
            Src::Upper(r) => {
                sys.upper_dual[r] = Some(v);
                qp.lower[v] = 0.0;
                grad[r].push((v, 1.0));
                sys.pairs.push(ComplementarityPair { dual: v, row: SparseRow::new(vec![(r, 1.0)], lower.upper[r]), label });
            }
        }
    }
    // Reciprocity couples prosumers and lives at the network level, so its
    // family is present but empty.
    if !sys.families.iter().any(|f| f.label == Label::ReciprocityPlaceholder) {
        sys.families.push(Family { label: Label::ReciprocityPlaceholder, side: Side::Eq, start: nv, len: 0 });
    }
    let first = qp.eq.len();
    for (j, terms) in grad.into_iter().enumerate() {
        qp.eq.push(SparseRow::new(terms, -lower.linear[j]));
    }
    sys.stationarity = first..qp.eq.len();
    sys.qp = qp;
    Ok(sys)
}

/// Default M: ten times the largest finite bound magnitude or the largest
/// price exposure over the horizon, whichever is larger.
pub fn default_big_m(p: &ProsumerParams, scenarios: &[Scenario]) -> f64 {
    let bounds = [
        p.e_max.abs(),
        p.e_min.abs(),
        p.p_b_max,
        p.p_s_max,
        p.p_e_max,
        p.p_mt_bounds.0.abs(),
        p.p_mt_bounds.1.abs(),
        p.q_mt_bounds.0.abs(),
        p.q_mt_bounds.1.abs(),
    ];
    let price = scenarios
        .iter()
        .flat_map(|s| s.prices.c_q.iter().chain(s.prices.c_nm.iter().flatten()))
        .chain(&p.c_p_mt)
        .fold(0.0_f64, |m, v| m.max(v.abs()));
    let exposure = price * p.horizon as f64 * p.dt;
    10.0 * bounds.into_iter().filter(|v| v.is_finite()).fold(exposure, f64::max)
}

/// KKT system of the explicit two-stage wSAA for a prosumer.
pub fn build_lower_kkt(
    p: &ProsumerParams,
    weights: &WeightVector,
    samples: &Dataset,
) -> Result<(KktSystem, WsaaProgram), BilevelError> {
    if weights.w.len() != samples.len() {
        return Err(BilevelError::Config(format!(
            "{} weights for {} samples",
            weights.w.len(),
            samples.len()
        )));
    }
    let scenarios = Scenario::from_weights(p, samples, &weights.w);
    build_kkt_for(p, &scenarios)
}

pub fn build_kkt_for(p: &ProsumerParams, scenarios: &[Scenario]) -> Result<(KktSystem, WsaaProgram), BilevelError> {
    if p.beta_b != 0.0 || p.beta_s != 0.0 {
        return Err(BilevelError::NonSmooth { beta_b: p.beta_b, beta_s: p.beta_s });
    }
    if scenarios.iter().all(|s| s.weight <= 0.0) {
        return Err(BilevelError::NoWeight);
    }
    let prog = build_wsaa(p, scenarios, None, Formulation::Explicit)?;
    let sys = prog.system.as_ref().expect("explicit formulation keeps its constraint system");
    let tags = Tags { eq: &sys.eq_tags, ineq: &sys.ineq_tags, bounds: &sys.bound_tags };
    let mut kkt = kkt_of_qp(&prog.qp, &tags)?;
    kkt.big_m = Some(default_big_m(p, scenarios));
    Ok((kkt, prog))
}

impl KktSystem {
    pub fn n_vars(&self) -> usize {
        self.qp.n_vars
    }

    pub fn family(&self, label: Label, side: Side) -> Option<&Family> {
        self.families.iter().find(|f| f.label == label && f.side == side)
    }

    /// Lifts a primal-dual solution of the lower-level QP into `v`.
    pub fn point(&self, sol: &Solution) -> Vec<f64> {
        let mut v = vec![0.0; self.n_vars()];
        v[..self.n_primal].copy_from_slice(&sol.x);
        for (r, &k) in self.eq_dual.iter().enumerate() {
            v[k] = sol.eq_duals[r];
        }
        for (r, &k) in self.ineq_dual.iter().enumerate() {
            v[k] = sol.ineq_duals[r];
        }
        for j in 0..self.n_primal {
            if let Some(k) = self.lower_dual[j] {
                v[k] = sol.lower_duals[j];
            }
            if let Some(k) = self.upper_dual[j] {
                v[k] = sol.upper_duals[j];
            }
            if let Some(k) = self.fixed_dual[j] {
                v[k] = sol.lower_duals[j] - sol.upper_duals[j];
            }
        }
        v
    }

    /// Largest violation of any KKT row, sign condition or complementarity
    /// product at `v`.
    pub fn residual(&self, v: &[f64]) -> f64 {
        let comp = self
            .pairs
            .iter()
            .map(|pair| (v[pair.dual] * (pair.row.rhs - pair.row.eval(v))).abs())
            .fold(0.0_f64, f64::max);
        self.qp.primal_violation(v).max(comp)
    }
}

/// `μ ≤ M·b` and `slack ≤ M·(1 − b)` per complementarity pair, `b` binary.
pub fn bigm_linearize(k: &KktSystem) -> Result<MipProblem, BilevelError> {
    let m = k.big_m.ok_or(BilevelError::MissingBigM)?;
    let mut qp = k.qp.clone();
    let mut binaries = Vec::with_capacity(k.pairs.len());
    for pair in &k.pairs {
        let b = qp.add_var(0.0, 1.0);
        binaries.push(b);
        qp.ineq.push(SparseRow::new(vec![(pair.dual, 1.0), (b, -m)], 0.0));
        // rhs − a·v ≤ M(1 − b)  ⇔  −a·v + M b ≤ M − rhs
        let mut terms: Vec<(usize, f64)> = pair.row.terms.iter().map(|&(j, a)| (j, -a)).collect();
        terms.push((b, m));
        qp.ineq.push(SparseRow::new(terms, m - pair.row.rhs));
    }
    Ok(MipProblem { qp, binary_indices: binaries, big_m: m })
}

/// Pairs whose multiplier or slack reaches 99% of M at `v`; a non-empty
/// result means M may be cutting off the true optimum.
pub fn bigm_audit(k: &KktSystem, v: &[f64]) -> Vec<usize> {
    let Some(m) = k.big_m else {
        return Vec::new();
    };
    k.pairs
        .iter()
        .enumerate()
        .filter(|(_, pair)| v[pair.dual] >= 0.99 * m || pair.row.rhs - pair.row.eval(v) >= 0.99 * m)
        .map(|(i, _)| i)
        .collect()
}

/// One point at which a candidate weight function is scored.
#[derive(Clone, Debug)]
pub struct Query {
    pub x_own: Vec<f64>,
    /// Covariates received from neighbors for the same day.
    pub x_neighbors: Vec<Vec<f64>>,
    pub outcome: Outcome,
    /// Training sample to leave out, when the query is itself a sample.
    pub exclude: Option<usize>,
}

/// Candidate grid. Values of k above the available sample count are
/// clamped and duplicates removed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub k: Vec<usize>,
    pub gamma: Vec<f64>,
}

impl Grid {
    /// `k ∈ {1, 3, 5, 10, ⌈S/2⌉, S}`, `γ ∈ {0, 0.25, 0.5, 0.75, 1}`.
    pub fn default_for(s: usize) -> Self {
        Self { k: vec![1, 3, 5, 10, s.div_ceil(2), s], gamma: vec![0.0, 0.25, 0.5, 0.75, 1.0] }
    }

    /// Own-covariate kNN: the same k values with `γ = 1` only.
    pub fn knn_only(s: usize) -> Self {
        Self { gamma: vec![1.0], ..Self::default_for(s) }
    }

    fn candidates(&self, available: usize) -> Vec<(usize, f64)> {
        let mut ks: Vec<usize> = self.k.iter().map(|&k| k.clamp(1, available.max(1))).collect();
        ks.sort_unstable();
        ks.dedup();
        let mut gs = self.gamma.clone();
        gs.sort_by(f64::total_cmp);
        gs.dedup();
        ks.iter().flat_map(|&k| gs.iter().map(move |&g| (k, g))).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub k: usize,
    pub gamma: f64,
    /// Mean realized cost over the queries; `None` if some solve failed.
    pub cost: Option<f64>,
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedPolicy {
    pub k: usize,
    pub gamma: f64,
    pub validation_cost: f64,
    pub table: Vec<Candidate>,
}

impl TrainedPolicy {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("policy serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, BilevelError> {
        serde_json::from_str(s).map_err(|e| BilevelError::Config(e.to_string()))
    }

    /// `k,gamma,cost,note` per candidate; failed candidates have an empty
    /// cost.
    pub fn write_table_csv(&self, path: &Path) -> Result<(), BilevelError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "k,gamma,cost,note")?;
        for c in &self.table {
            let cost = c.cost.map(|v| v.to_string()).unwrap_or_default();
            let note = c.note.as_deref().unwrap_or("").replace([',', '\n'], ";");
            writeln!(f, "{},{},{},{}", c.k, c.gamma, cost, note)?;
        }
        Ok(())
    }
}

/// Cache key: the exact weight vector.
fn key(w: &[f64]) -> Vec<u64> {
    w.iter().map(|v| v.to_bits()).collect()
}

/// Scores every grid candidate by the mean realized cost of its decisions
/// over `queries`, and picks the cheapest; ties go to the smaller k, then
/// the larger γ. Identical weight vectors share one solve.
pub fn train(
    p: &ProsumerParams,
    train: &Dataset,
    queries: &[Query],
    grid: &Grid,
) -> Result<TrainedPolicy, BilevelError> {
    if queries.is_empty() {
        return Err(BilevelError::Config("training needs at least one query".into()));
    }
    if grid.k.is_empty() || grid.gamma.is_empty() {
        return Err(BilevelError::Config("candidate grid is empty".into()));
    }
    let available = train.len() - usize::from(queries.iter().any(|q| q.exclude.is_some()));
    let cands = grid.candidates(available);

    // weights for every (candidate, query), then the distinct vectors
    let mut weights: Vec<Vec<Result<Vec<f64>, String>>> = Vec::with_capacity(cands.len());
    for &(k, gamma) in &cands {
        let cfg = WeightConfig { k, gamma, leave_one_out: true };
        weights.push(
            queries
                .iter()
                .map(|q| {
                    cknn_weights_with(&q.x_own, &q.x_neighbors, train, &cfg, q.exclude)
                        .map(|w| w.w)
                        .map_err(|e| e.to_string())
                })
                .collect(),
        );
    }
    let mut index: HashMap<(usize, Vec<u64>), usize> = HashMap::new();
    let mut jobs: Vec<(usize, &Vec<f64>)> = Vec::new();
    for row in &weights {
        for (qi, w) in row.iter().enumerate() {
            if let Ok(w) = w {
                index.entry((qi, key(w))).or_insert_with(|| {
                    jobs.push((qi, w));
                    jobs.len() - 1
                });
            }
        }
    }
    let costs: Vec<Result<f64, String>> = jobs
        .par_iter()
        .map(|&(qi, w)| {
            let sc = Scenario::from_weights(p, train, w);
            let z = solve_wsaa(p, &sc, None, Formulation::Reduced).map_err(|e| e.to_string())?.decision;
            evaluate_expost(p, &z, &queries[qi].outcome).map_err(|e| e.to_string())
        })
        .collect();

    let mut table = Vec::with_capacity(cands.len());
    for (&(k, gamma), row) in cands.iter().zip(&weights) {
        let mut total = 0.0;
        let mut note = None;
        for (qi, w) in row.iter().enumerate() {
            let c = match w {
                Ok(w) => costs[index[&(qi, key(w))]].clone(),
                Err(e) => Err(e.clone()),
            };
            match c {
                Ok(c) => total += c,
                Err(e) => {
                    note = Some(format!("query {qi}: {e}"));
                    break;
                }
            }
        }
        let cost = note.is_none().then(|| total / queries.len() as f64);
        table.push(Candidate { k, gamma, cost, note });
    }

    let mut best: Option<&Candidate> = None;
    for c in &table {
        let Some(cost) = c.cost else { continue };
        let better = match best {
            None => true,
            Some(b) => {
                let bc = b.cost.unwrap_or(f64::INFINITY);
                let tie = (cost - bc).abs() <= 1e-12 * bc.abs().max(1.0);
                if tie {
                    c.k < b.k || (c.k == b.k && c.gamma > b.gamma)
                } else {
                    cost < bc
                }
            }
        };
        if better {
            best = Some(c);
        }
    }
    let Some(best) = best else {
        let why = table.iter().filter_map(|c| c.note.clone()).next().unwrap_or_default();
        return Err(BilevelError::AllInvalid(why));
    };
    Ok(TrainedPolicy { k: best.k, gamma: best.gamma, validation_cost: best.cost.unwrap_or(f64::NAN), table: table.clone() })
}

/// Leave-one-out queries over the training set itself: sample i is scored
/// with its own covariate, its neighbors' covariates of the same day, and
/// is excluded from its own weights.
pub fn loo_queries(train: &Dataset, neighbor_covariates: &[Vec<Vec<f64>>]) -> Vec<Query> {
    train
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| Query {
            x_own: s.x.clone(),
            x_neighbors: neighbor_covariates.get(i).cloned().unwrap_or_default(),
            outcome: s.y.clone(),
            exclude: Some(i),
        })
        .collect()
}

/// CkNN weights of the trained policy at a new covariate.
pub fn policy_weights(
    policy: &TrainedPolicy,
    x_new: &[f64],
    x_neighbors: &[Vec<f64>],
    train: &Dataset,
) -> Result<WeightVector, BilevelError> {
    let cfg = WeightConfig { k: policy.k.min(train.len()), gamma: policy.gamma, leave_one_out: false };
    Ok(cknn_weights_with(x_new, x_neighbors, train, &cfg, None)?)
}

/// Two-stage wSAA decision under the trained weights.
pub fn prescribe(
    x_new: &[f64],
    x_neighbors: &[Vec<f64>],
    policy: &TrainedPolicy,
    train: &Dataset,
    p: &ProsumerParams,
) -> Result<DecisionVector, BilevelError> {
    let w = policy_weights(policy, x_new, x_neighbors, train)?;
    let sc = Scenario::from_weights(p, train, &w.w);
    Ok(solve_wsaa(p, &sc, None, Formulation::Reduced)?.decision)
}
