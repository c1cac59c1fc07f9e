//! Consensus ADMM over the P2P trades. Each agent owns its local program;
//! only proposed trades and auxiliary values cross edges. Phases are
//! separated by barriers, so results do not depend on message order.

use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{DecisionVector, ProsumerParams};
use crate::program::{build_wsaa, solve_wsaa, Formulation, ProgramError, Proximal, Scenario};
use crate::solver::{solve_qp_with, Backend, QpProblem, SolveStatus, SparseRow};

/// Momentum is kept while the combined residual shrinks by this factor.
pub const RESTART: f64 = 0.999;

#[derive(Debug, thiserror::Error)]
pub enum AdmmError {
    #[error("prosumer {agent}: {source}")]
    Local {
        agent: usize,
        #[source]
        source: ProgramError,
    },
    #[error("invalid topology: {0}")]
    Topology(String),
    #[error("invalid message: {0}")]
    Message(String),
    #[error("invalid settings: {0}")]
    Settings(String),
    #[error("centralized solve: {0}")]
    Central(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Symmetric neighbor lists without self-loops, each sorted.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    adj: Vec<Vec<usize>>,
}

impl Topology {
    pub fn new(mut adj: Vec<Vec<usize>>) -> Result<Self, AdmmError> {
        let n = adj.len();
        for nb in &mut adj {
            nb.sort_unstable();
        }
        for (a, nb) in adj.iter().enumerate() {
            if nb.windows(2).any(|w| w[0] == w[1]) {
                return Err(AdmmError::Topology(format!("prosumer {a} lists a neighbor twice")));
            }
            for &b in nb {
                if b == a {
                    return Err(AdmmError::Topology(format!("self-edge at {a}")));
                }
                if b >= n {
                    return Err(AdmmError::Topology(format!("prosumer {a} lists unknown neighbor {b}")));
                }
                if adj[b].binary_search(&a).is_err() {
                    return Err(AdmmError::Topology(format!("edge {a}-{b} is not symmetric")));
                }
            }
        }
        Ok(Self { adj })
    }

    /// Every pair connected.
    pub fn complete(n: usize) -> Self {
        Self { adj: (0..n).map(|a| (0..n).filter(|&b| b != a).collect()).collect() }
    }

    pub fn empty(n: usize) -> Self {
        Self { adj: vec![Vec::new(); n] }
    }

    pub fn from_params(params: &[ProsumerParams]) -> Result<Self, AdmmError> {
        Self::new(params.iter().map(|p| p.neighbors.clone()).collect())
    }

    pub fn len(&self) -> usize {
        self.adj.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adj.is_empty()
    }

    pub fn neighbors(&self, n: usize) -> &[usize] {
        &self.adj[n]
    }

    /// Position of `m` in the neighbor list of `n`.
    pub fn slot(&self, n: usize, m: usize) -> Option<usize> {
        self.adj[n].binary_search(&m).ok()
    }

    /// Unordered edges `(n, m)` with `n < m`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.adj
            .iter()
            .enumerate()
            .flat_map(|(a, nb)| nb.iter().filter(move |&&b| b > a).map(move |&b| (a, b)))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MessageKind {
    CovariateShare,
    TradeProposal,
}

/// What crosses an edge. Covariate shares carry `x_n`; trade proposals
/// carry `z_nm` over the horizon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub kind: MessageKind,
    pub sender: usize,
    pub receiver: usize,
    pub iteration: usize,
    pub payload: Vec<f64>,
}

impl Message {
    pub fn validate(&self, topo: &Topology, d_x: usize, horizon: usize) -> Result<(), AdmmError> {
        if self.sender >= topo.len() || topo.slot(self.sender, self.receiver).is_none() {
            return Err(AdmmError::Message(format!("{} is not a neighbor of {}", self.receiver, self.sender)));
        }
        let want = match self.kind {
            MessageKind::CovariateShare => d_x,
            MessageKind::TradeProposal => horizon,
        };
        if self.payload.len() != want {
            return Err(AdmmError::Message(format!("{:?} payload has {} entries, expected {want}", self.kind, self.payload.len())));
        }
        Ok(())
    }
}

/// The covariate-share round: every agent sends its covariate to each
/// neighbor.
pub fn share_covariates(topo: &Topology, x: &[Vec<f64>]) -> Vec<Message> {
    (0..topo.len())
        .flat_map(|n| {
            topo.neighbors(n).iter().map(move |&m| Message {
                kind: MessageKind::CovariateShare,
                sender: n,
                receiver: m,
                iteration: 0,
                payload: x[n].clone(),
            })
        })
        .collect()
}

/// Received covariates per agent, ordered like its neighbor list.
pub fn received_covariates(topo: &Topology, messages: &[Message]) -> Result<Vec<Vec<Vec<f64>>>, AdmmError> {
    let mut inbox: Vec<Vec<Option<Vec<f64>>>> = (0..topo.len()).map(|n| vec![None; topo.neighbors(n).len()]).collect();
    for msg in messages.iter().filter(|m| m.kind == MessageKind::CovariateShare) {
        let slot = topo
            .slot(msg.receiver, msg.sender)
            .ok_or_else(|| AdmmError::Message(format!("{} is not a neighbor of {}", msg.sender, msg.receiver)))?;
        inbox[msg.receiver][slot] = Some(msg.payload.clone());
    }
    inbox
        .into_iter()
        .enumerate()
        .map(|(n, row)| {
            row.into_iter()
                .enumerate()
                .map(|(k, x)| x.ok_or_else(|| AdmmError::Message(format!("agent {n} missing covariate from slot {k}"))))
                .collect()
        })
        .collect()
}

/// One prosumer: parameters (neighbors in topology order) and weighted
/// scenarios whose P2P prices follow the same order.
#[derive(Clone, Debug)]
pub struct Agent {
    pub params: ProsumerParams,
    pub scenarios: Vec<Scenario>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdmmSettings {
    pub rho: f64,
    pub eps: f64,
    pub max_iter: usize,
    pub accelerate: bool,
    pub log_messages: bool,
}

impl Default for AdmmSettings {
    fn default() -> Self {
        Self { rho: 0.5, eps: 1e-4, max_iter: 500, accelerate: true, log_messages: false }
    }
}

/// Per directed edge `n → m`, held by agent `n`. The barred vectors carry
/// momentum and are what the next local and auxiliary steps see.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeState {
    pub lambda: Vec<f64>,
    pub lambda_bar: Vec<f64>,
    pub z_hat: Vec<f64>,
    pub z_hat_bar: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct AdmmState {
    pub iteration: usize,
    pub rho: f64,
    pub eps: f64,
    /// `edges[n][k]` is the edge to `topology.neighbors(n)[k]`.
    pub edges: Vec<Vec<EdgeState>>,
    /// Acceleration scalar per unordered edge, in `Topology::edges` order.
    pub a: Vec<f64>,
    combined: Vec<f64>,
    pub history: Vec<Residual>,
}

impl AdmmState {
    pub fn new(topo: &Topology, horizon: usize, rho: f64, eps: f64) -> Self {
        let zero = EdgeState {
            lambda: vec![0.0; horizon],
            lambda_bar: vec![0.0; horizon],
            z_hat: vec![0.0; horizon],
            z_hat_bar: vec![0.0; horizon],
        };
        let n_edges = topo.edges().len();
        Self {
            iteration: 0,
            rho,
            eps,
            edges: (0..topo.len()).map(|n| vec![zero.clone(); topo.neighbors(n).len()]).collect(),
            a: vec![1.0; n_edges],
            combined: vec![f64::INFINITY; n_edges],
            history: Vec::new(),
        }
    }

    fn proximal(&self, n: usize) -> Proximal {
        Proximal {
            lambda: self.edges[n].iter().map(|e| e.lambda_bar.clone()).collect(),
            z_hat: self.edges[n].iter().map(|e| e.z_hat_bar.clone()).collect(),
            rho: self.rho,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub iteration: usize,
    pub primal: f64,
    pub dual: f64,
}

/// Local step: the agent's weighted two-stage program plus
/// `Σ_m λ̄ᵀ(z_nm − ẑ_nm) + (ρ/2)‖z_nm − ẑ_nm‖²`.
pub fn local_update(agent: &Agent, prox: &Proximal) -> Result<(DecisionVector, f64), ProgramError> {
    let sol = solve_wsaa(&agent.params, &agent.scenarios, Some(prox), Formulation::Reduced)?;
    let z = &sol.decision.p_nm;
    let mut penalty = 0.0;
    for (m, row) in z.iter().enumerate() {
        for (h, v) in row.iter().enumerate() {
            let d = v - prox.z_hat[m][h];
            penalty += prox.lambda[m][h] * d + 0.5 * prox.rho * d * d;
        }
    }
    Ok((sol.decision, sol.objective - penalty))
}

/// Closed-form minimizer of
/// `−λ_nmᵀẑ_nm − λ_mnᵀẑ_mn + (ρ/2)‖ẑ_nm − z_nm‖² + (ρ/2)‖ẑ_mn − z_mn‖²`
/// subject to `ẑ_nm + ẑ_mn = 0`.
pub fn aux_update(z_nm: &[f64], z_mn: &[f64], l_nm: &[f64], l_mn: &[f64], rho: f64) -> (Vec<f64>, Vec<f64>) {
    let a: Vec<f64> = (0..z_nm.len())
        .map(|h| 0.5 * (z_nm[h] - z_mn[h]) + (l_nm[h] - l_mn[h]) / (2.0 * rho))
        .collect();
    let b = a.iter().map(|v| -v).collect();
    (a, b)
}

pub fn dual_update(lambda: &[f64], z: &[f64], z_hat: &[f64], rho: f64) -> Vec<f64> {
    lambda.iter().zip(z).zip(z_hat).map(|((l, z), zh)| l + rho * (z - zh)).collect()
}

/// Next momentum scalar, `(1 + √(1 + 4a²)) / 2`.
pub fn next_momentum(a: f64) -> f64 {
    0.5 * (1.0 + (1.0 + 4.0 * a * a).sqrt())
}

/// Momentum step on a dual or auxiliary vector. Returns `(a', v̄')`; with
/// `restart` the momentum is dropped and `v̄' = v'`.
pub fn accelerate(a: f64, lambda_new: &[f64], lambda_old: &[f64], restart: bool) -> (f64, Vec<f64>) {
    if restart {
        return (1.0, lambda_new.to_vec());
    }
    let a_next = next_momentum(a);
    let beta = (a - 1.0) / a_next;
    let bar = lambda_new.iter().zip(lambda_old).map(|(n, o)| n + beta * (n - o)).collect();
    (a_next, bar)
}

fn inf_norm<'a>(v: impl Iterator<Item = (&'a f64, &'a f64)>) -> f64 {
    v.map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

/// `r = max ‖z_nm − ẑ_nm‖∞`, `s = ρ · max ‖ẑ_nm − ẑ_nm_prev‖∞`.
/// `z[n][k]` and `z_hat[n][k]` follow the neighbor order of `n`.
pub fn residuals(z: &[Vec<Vec<f64>>], z_hat: &[Vec<Vec<f64>>], z_hat_prev: &[Vec<Vec<f64>>], rho: f64) -> (f64, f64) {
    let mut r = 0.0_f64;
    let mut s = 0.0_f64;
    for n in 0..z.len() {
        for k in 0..z[n].len() {
            r = r.max(inf_norm(z[n][k].iter().zip(&z_hat[n][k])));
            s = s.max(rho * inf_norm(z_hat[n][k].iter().zip(&z_hat_prev[n][k])));
        }
    }
    (r, s)
}

#[derive(Clone, Debug)]
pub struct AdmmResult {
    pub decisions: Vec<DecisionVector>,
    /// Sum of the agents' weighted objectives without the penalty terms.
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
    pub trace: Vec<Residual>,
    pub messages: Vec<Message>,
}

impl AdmmResult {
    /// Largest `|p_nm + p_mn|` over edges and steps.
    pub fn reciprocity_gap(&self, topo: &Topology) -> f64 {
        topo.edges()
            .into_iter()
            .map(|(n, m)| {
                let a = &self.decisions[n].p_nm[topo.slot(n, m).unwrap()];
                let b = &self.decisions[m].p_nm[topo.slot(m, n).unwrap()];
                a.iter().zip(b).map(|(x, y)| (x + y).abs()).fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }

    pub fn write_trace_csv(&self, path: &Path) -> Result<(), AdmmError> {
        write_trace_csv(&self.trace, path)
    }

    /// Newline-delimited JSON, one message per line.
    pub fn write_message_log(&self, path: &Path) -> Result<(), AdmmError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for m in &self.messages {
            writeln!(f, "{}", serde_json::to_string(m).expect("message serializes"))?;
        }
        Ok(())
    }
}

pub fn write_trace_csv(trace: &[Residual], path: &Path) -> Result<(), AdmmError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "iteration,r,s")?;
    for t in trace {
        writeln!(f, "{},{:e},{:e}", t.iteration, t.primal, t.dual)?;
    }
    Ok(())
}

fn check_agents(topo: &Topology, agents: &[Agent]) -> Result<usize, AdmmError> {
    if agents.len() != topo.len() {
        return Err(AdmmError::Topology(format!("{} agents for {} nodes", agents.len(), topo.len())));
    }
    let horizon = agents.first().map_or(0, |a| a.params.horizon);
    for (n, a) in agents.iter().enumerate() {
        if a.params.neighbors != topo.neighbors(n) {
            return Err(AdmmError::Topology(format!("agent {n} neighbor list differs from the topology")));
        }
        if a.params.horizon != horizon {
            return Err(AdmmError::Topology("agents disagree on the horizon".into()));
        }
    }
    Ok(horizon)
}

/// Replaces each side's P2P price on an edge by the mean of both sides'
/// weighted expectations, so trades net to zero cost across the pair.
pub fn symmetrize_p2p_prices(topo: &Topology, agents: &mut [Agent]) -> Result<(), AdmmError> {
    let horizon = check_agents(topo, agents)?;
    let expected = |a: &Agent, k: usize| -> Vec<f64> {
        let total: f64 = a.scenarios.iter().map(|s| s.weight).sum();
        (0..horizon)
            .map(|h| a.scenarios.iter().map(|s| s.weight * s.prices.c_nm[k][h]).sum::<f64>() / total)
            .collect()
    };
    for (n, m) in topo.edges() {
        let (kn, km) = (topo.slot(n, m).unwrap(), topo.slot(m, n).unwrap());
        let (a, b) = (expected(&agents[n], kn), expected(&agents[m], km));
        let mean: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
        for s in &mut agents[n].scenarios {
            s.prices.c_nm[kn] = mean.clone();
        }
        for s in &mut agents[m].scenarios {
            s.prices.c_nm[km] = mean.clone();
        }
    }
    Ok(())
}

/// Runs until `max(r, s) ≤ ε` or `max_iter`. Without convergence the
/// iterate with the smallest `max(r, s)` is returned.
pub fn run(topo: &Topology, agents: &[Agent], settings: &AdmmSettings) -> Result<AdmmResult, AdmmError> {
    let horizon = check_agents(topo, agents)?;
    if !(settings.rho > 0.0) || !(settings.eps > 0.0) || settings.max_iter == 0 {
        return Err(AdmmError::Settings(format!(
            "need rho > 0, eps > 0 and max_iter ≥ 1, got {}, {}, {}",
            settings.rho, settings.eps, settings.max_iter
        )));
    }
    let rho = settings.rho;
    let edges = topo.edges();
    let mut st = AdmmState::new(topo, horizon, rho, settings.eps);
    let mut messages = Vec::new();
    let mut best: Option<(f64, Vec<DecisionVector>, f64)> = None;

    loop {
        st.iteration += 1;
        let nu = st.iteration;

        // primal phase
        let local: Vec<(DecisionVector, f64)> = agents
            .par_iter()
            .enumerate()
            .map(|(n, a)| local_update(a, &st.proximal(n)).map_err(|source| AdmmError::Local { agent: n, source }))
            .collect::<Result<_, _>>()?;
        let objective: f64 = local.iter().map(|(_, o)| o).sum();
        let z: Vec<Vec<Vec<f64>>> = local.iter().map(|(d, _)| d.p_nm.clone()).collect();
        if settings.log_messages {
            for (n, row) in z.iter().enumerate() {
                for (k, &m) in topo.neighbors(n).iter().enumerate() {
                    messages.push(Message {
                        kind: MessageKind::TradeProposal,
                        sender: n,
                        receiver: m,
                        iteration: nu,
                        payload: row[k].clone(),
                    });
                }
            }
        }

        if edges.is_empty() {
            st.history.push(Residual { iteration: nu, primal: 0.0, dual: 0.0 });
            return Ok(AdmmResult {
                decisions: local.into_iter().map(|(d, _)| d).collect(),
                objective,
                converged: true,
                iterations: nu,
                trace: st.history,
                messages,
            });
        }

        // auxiliary phase, against the accelerated duals
        let z_hat_prev: Vec<Vec<Vec<f64>>> =
            st.edges.iter().map(|row| row.iter().map(|e| e.z_hat.clone()).collect()).collect();
        for &(n, m) in &edges {
            let (kn, km) = (topo.slot(n, m).unwrap(), topo.slot(m, n).unwrap());
            let (a, b) = aux_update(&z[n][kn], &z[m][km], &st.edges[n][kn].lambda_bar, &st.edges[m][km].lambda_bar, rho);
            st.edges[n][kn].z_hat = a;
            st.edges[m][km].z_hat = b;
        }
        let z_hat: Vec<Vec<Vec<f64>>> = st.edges.iter().map(|row| row.iter().map(|e| e.z_hat.clone()).collect()).collect();

        // dual phase, from the accelerated duals
        let lambda_new: Vec<Vec<Vec<f64>>> = (0..topo.len())
            .map(|n| {
                st.edges[n]
                    .iter()
                    .enumerate()
                    .map(|(k, e)| dual_update(&e.lambda_bar, &z[n][k], &e.z_hat, rho))
                    .collect()
            })
            .collect();

        // momentum on duals and auxiliaries, decided per unordered edge
        for (i, &(n, m)) in edges.iter().enumerate() {
            let (kn, km) = (topo.slot(n, m).unwrap(), topo.slot(m, n).unwrap());
            let mut c = 0.0;
            for (a, k) in [(n, kn), (m, km)] {
                let e = &st.edges[a][k];
                for h in 0..horizon {
                    c += (lambda_new[a][k][h] - e.lambda_bar[h]).powi(2) / rho + rho * (e.z_hat[h] - e.z_hat_bar[h]).powi(2);
                }
            }
            let keep = settings.accelerate && c < RESTART * st.combined[i];
            let a_prev = st.a[i];
            for (a, k) in [(n, kn), (m, km)] {
                let e = &mut st.edges[a][k];
                let old = std::mem::replace(&mut e.lambda, lambda_new[a][k].clone());
                if keep {
                    let (a_next, bar) = accelerate(a_prev, &e.lambda, &old, false);
                    let (_, zbar) = accelerate(a_prev, &e.z_hat, &z_hat_prev[a][k], false);
                    e.lambda_bar = bar;
                    e.z_hat_bar = zbar;
                    st.a[i] = a_next;
                } else {
                    e.lambda_bar = e.lambda.clone();
                    e.z_hat_bar = e.z_hat.clone();
                    st.a[i] = 1.0;
                }
            }
            st.combined[i] = if keep || !settings.accelerate || !st.combined[i].is_finite() { c } else { st.combined[i] / RESTART };
        }

        let (r, s) = residuals(&z, &z_hat, &z_hat_prev, rho);
        debug_assert!(edges.iter().all(|&(n, m)| {
            let (kn, km) = (topo.slot(n, m).unwrap(), topo.slot(m, n).unwrap());
            z_hat[n][kn].iter().zip(&z_hat[m][km]).all(|(a, b)| a + b == 0.0)
        }));
        st.history.push(Residual { iteration: nu, primal: r, dual: s });
        let score = r.max(s);
        let decisions = || local.iter().map(|(d, _)| d.clone()).collect::<Vec<_>>();
        if score <= settings.eps {
            return Ok(AdmmResult {
                decisions: decisions(),
                objective,
                converged: true,
                iterations: nu,
                trace: st.history,
                messages,
            });
        }
        if best.as_ref().is_none_or(|b| score < b.0) {
            best = Some((score, decisions(), objective));
        }
        if nu >= settings.max_iter {
            let (_, decisions, objective) = best.expect("at least one iteration ran");
            return Ok(AdmmResult { decisions, objective, converged: false, iterations: nu, trace: st.history, messages });
        }
    }
}

#[derive(Clone, Debug)]
pub struct CentralResult {
    pub decisions: Vec<DecisionVector>,
    pub objective: f64,
}

/// The pooled program: every agent's problem side by side plus
/// `p_nm + p_mn = 0` on every edge and step.
pub fn centralized(topo: &Topology, agents: &[Agent]) -> Result<CentralResult, AdmmError> {
    let horizon = check_agents(topo, agents)?;
    let progs = agents
        .iter()
        .enumerate()
        .map(|(n, a)| {
            build_wsaa(&a.params, &a.scenarios, None, Formulation::Reduced).map_err(|source| AdmmError::Local { agent: n, source })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut offsets = Vec::with_capacity(progs.len());
    let mut total = 0;
    for p in &progs {
        offsets.push(total);
        total += p.qp.n_vars;
    }
    let mut qp = QpProblem::new(total);
    for (p, &o) in progs.iter().zip(&offsets) {
        let shift = |r: &SparseRow| SparseRow::new(r.terms.iter().map(|&(j, a)| (j + o, a)).collect(), r.rhs);
        qp.quad.extend(p.qp.quad.iter().map(|&(i, j, v)| (i + o, j + o, v)));
        qp.linear[o..o + p.qp.n_vars].copy_from_slice(&p.qp.linear);
        qp.offset += p.qp.offset;
        qp.lower[o..o + p.qp.n_vars].copy_from_slice(&p.qp.lower);
        qp.upper[o..o + p.qp.n_vars].copy_from_slice(&p.qp.upper);
        qp.eq.extend(p.qp.eq.iter().map(shift));
        qp.ineq.extend(p.qp.ineq.iter().map(shift));
    }
    for (n, m) in topo.edges() {
        let (kn, km) = (topo.slot(n, m).unwrap(), topo.slot(m, n).unwrap());
        for h in 0..horizon {
            let a = offsets[n] + progs[n].layout.p_nm(kn, h);
            let b = offsets[m] + progs[m].layout.p_nm(km, h);
            qp.eq.push(SparseRow::new(vec![(a, 1.0), (b, 1.0)], 0.0));
        }
    }
    let sol = solve_qp_with(&qp, Backend::Auto).map_err(|e| AdmmError::Central(e.to_string()))?;
    if sol.status != SolveStatus::Optimal {
        return Err(AdmmError::Central(format!("status {:?}", sol.status)));
    }
    let decisions = progs
        .iter()
        .zip(&offsets)
        .zip(agents)
        .enumerate()
        .map(|(n, ((p, &o), a))| {
            p.decision(&a.params, &sol.x[o..o + p.qp.n_vars]).map_err(|source| AdmmError::Local { agent: n, source })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CentralResult { decisions, objective: sol.objective })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BalanceMode, LoadProfile, Prices};
    use crate::program::tests::small_params;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Agents on a given topology with random prices, PV and loads.
    pub(crate) fn random_agents(topo: &Topology, h: usize, scenarios: usize, rng: &mut ChaCha8Rng) -> Vec<Agent> {
        (0..topo.len())
            .map(|n| {
                let mut p = small_params(h, 0, BalanceMode::Surplus);
                p.id = n;
                p.neighbors = topo.neighbors(n).to_vec();
                p.c_p_mt = (0..h).map(|_| rng.random_range(4.0..8.0)).collect();
                let scen = (0..scenarios)
                    .map(|_| {
                        let c_q: Vec<f64> = (0..h).map(|_| rng.random_range(3.0..10.0)).collect();
                        let c_nm = (0..p.neighbors.len()).map(|_| (0..h).map(|_| rng.random_range(3.0..7.0)).collect()).collect();
                        let mut loads = LoadProfile::nominal(&p);
                        for v in loads.p_g.iter_mut() {
                            *v = rng.random_range(0.0..30.0);
                        }
                        for v in loads.p_l.iter_mut() {
                            *v = rng.random_range(0.0..30.0);
                        }
                        Scenario { weight: rng.random_range(0.5..1.5), prices: Prices { c_q, c_nm }, loads }
                    })
                    .collect();
                Agent { params: p, scenarios: scen }
            })
            .collect()
    }

    #[test]
    fn topology_validation() {
        assert!(Topology::new(vec![vec![1], vec![0]]).is_ok());
        assert!(Topology::new(vec![vec![1], vec![]]).is_err());
        assert!(Topology::new(vec![vec![0]]).is_err());
        assert!(Topology::new(vec![vec![1, 1], vec![0]]).is_err());
        assert!(Topology::new(vec![vec![2], vec![0]]).is_err());
        assert_eq!(Topology::complete(3).edges(), vec![(0, 1), (0, 2), (1, 2)]);
    }

    #[test]
    fn one_dimensional_local_step() {
        // min z + 0·(z−0) + 0.25 z² on [−5, 5] → z = −2
        let mut grid_best = (f64::INFINITY, 0.0);
        for i in 0..=100_000 {
            let z = -5.0 + 10.0 * i as f64 / 100_000.0;
            let f = z + 0.25 * z * z;
            if f < grid_best.0 {
                grid_best = (f, z);
            }
        }
        let closed = (0.0 - (1.0 + 0.0) / 0.5_f64).clamp(-5.0, 5.0);
        assert!((closed - grid_best.1).abs() < 1e-3);
        assert_eq!(closed, -2.0);
    }

    #[test]
    fn aux_examples() {
        let (a, b) = aux_update(&[2.0], &[-2.0], &[0.0], &[0.0], 0.5);
        assert_eq!((a[0], b[0]), (2.0, -2.0));
        let (a, _) = aux_update(&[3.0], &[-1.0], &[0.0], &[0.0], 0.5);
        assert_eq!(a[0], 2.0);
        let (a, _) = aux_update(&[3.0], &[-1.0], &[1.0], &[0.0], 0.5);
        assert_eq!(a[0], 3.0);
    }

    #[test]
    fn dual_and_momentum_examples() {
        assert_eq!(dual_update(&[1.0], &[0.75], &[0.25], 0.5), vec![1.25]);
        assert_eq!(dual_update(&[1.0, 2.0], &[0.0, 1.0], &[0.0, 1.0], 0.5), vec![1.0, 2.0]);
        assert!((next_momentum(1.0) - 1.618034).abs() < 1e-6);
        let (a, bar) = accelerate(2.0, &[1.0, 2.0], &[1.0, 2.0], false);
        assert!(a > 2.0);
        assert_eq!(bar, vec![1.0, 2.0]);
        let (a, bar) = accelerate(5.0, &[3.0], &[1.0], true);
        assert_eq!((a, bar), (1.0, vec![3.0]));
    }

    #[test]
    fn residual_hand_example() {
        let z = vec![vec![vec![1.0, 2.0]], vec![vec![-1.5, -2.0]]];
        let zh = vec![vec![vec![1.25, 2.0]], vec![vec![-1.25, -2.0]]];
        let prev = vec![vec![vec![1.0, 1.0]], vec![vec![-1.0, -1.0]]];
        let (r, s) = residuals(&z, &zh, &prev, 0.5);
        assert_eq!(r, 0.25);
        assert_eq!(s, 0.5);
        assert_eq!(residuals(&zh, &zh, &zh, 0.5), (0.0, 0.0));
    }

    #[test]
    fn messages_validate_against_topology() {
        let t = Topology::new(vec![vec![1], vec![0], vec![]]).unwrap();
        let msgs = share_covariates(&t, &[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]);
        assert_eq!(msgs.len(), 2);
        for m in &msgs {
            m.validate(&t, 2, 4).unwrap();
        }
        let got = received_covariates(&t, &msgs).unwrap();
        assert_eq!(got[0], vec![vec![3.0, 4.0]]);
        assert!(got[2].is_empty());
        let bad = Message { kind: MessageKind::TradeProposal, sender: 0, receiver: 2, iteration: 1, payload: vec![0.0; 4] };
        assert!(bad.validate(&t, 2, 4).is_err());
        let short = Message { receiver: 1, payload: vec![0.0; 3], ..bad };
        assert!(short.validate(&t, 2, 4).is_err());
    }

    #[test]
    fn empty_topology_is_one_round() {
        let t = Topology::empty(3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let agents = random_agents(&t, 4, 2, &mut rng);
        let res = run(&t, &agents, &AdmmSettings::default()).unwrap();
        assert!(res.converged);
        assert_eq!(res.iterations, 1);
        let c = centralized(&t, &agents).unwrap();
        assert!((c.objective - res.objective).abs() < 1e-6 * c.objective.abs().max(1.0));
    }

    #[test]
    fn large_rho_pins_trades_to_auxiliary() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = Topology::complete(2);
        let agents = random_agents(&t, 3, 2, &mut rng);
        let z_hat = vec![vec![0.7, -0.3, 1.1]];
        let prox = Proximal { lambda: vec![vec![0.0; 3]], z_hat: z_hat.clone(), rho: 1e6 };
        let (z, _) = local_update(&agents[0], &prox).unwrap();
        for h in 0..3 {
            assert!((z.p_nm[0][h] - z_hat[0][h]).abs() < 1e-3);
        }
    }

    #[test]
    fn no_price_no_dual_means_no_trade() {
        let t = Topology::complete(2);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut agents = random_agents(&t, 3, 1, &mut rng);
        for a in &mut agents {
            for s in &mut a.scenarios {
                s.prices.c_q = vec![0.0; 3];
                s.prices.c_nm = vec![vec![0.0; 3]];
            }
            a.params.c_p_mt = vec![0.0; 3];
        }
        let prox = Proximal { lambda: vec![vec![0.0; 3]], z_hat: vec![vec![0.0; 3]], rho: 0.5 };
        let (z, _) = local_update(&agents[0], &prox).unwrap();
        assert!(z.p_nm[0].iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn matches_centralized_on_small_networks() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (n, h) in [(2, 3), (3, 4), (4, 6)] {
            let t = Topology::complete(n);
            let mut agents = random_agents(&t, h, 2, &mut rng);
            symmetrize_p2p_prices(&t, &mut agents).unwrap();
            let res = run(&t, &agents, &AdmmSettings::default()).unwrap();
            let c = centralized(&t, &agents).unwrap();
            assert!(res.converged, "n={n}: {} iterations", res.iterations);
            let rel = (res.objective - c.objective).abs() / c.objective.abs().max(1.0);
            assert!(rel <= 1e-3, "n={n}: {} vs {}", res.objective, c.objective);
            assert!(res.reciprocity_gap(&t) <= 1e-3);
        }
    }

    #[test]
    fn runs_are_deterministic_and_logged() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let t = Topology::complete(3);
        let agents = random_agents(&t, 3, 2, &mut rng);
        let s = AdmmSettings { log_messages: true, ..AdmmSettings::default() };
        let a = run(&t, &agents, &s).unwrap();
        let b = run(&t, &agents, &s).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.messages.len(), 6 * a.iterations);
        let dir = tempfile::tempdir().unwrap();
        a.write_trace_csv(&dir.path().join("r.csv")).unwrap();
        a.write_message_log(&dir.path().join("m.ndjson")).unwrap();
        let text = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
        assert_eq!(text.lines().count(), a.trace.len() + 1);
        let log = std::fs::read_to_string(dir.path().join("m.ndjson")).unwrap();
        let first: Message = serde_json::from_str(log.lines().next().unwrap()).unwrap();
        assert_eq!(first.kind, MessageKind::TradeProposal);
    }

    #[test]
    fn max_iter_returns_best_flagged() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let t = Topology::complete(3);
        let agents = random_agents(&t, 4, 2, &mut rng);
        let res = run(&t, &agents, &AdmmSettings { max_iter: 2, eps: 1e-12, ..AdmmSettings::default() }).unwrap();
        assert!(!res.converged);
        assert_eq!(res.trace.len(), 2);
    }
}
