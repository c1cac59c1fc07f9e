//! End-to-end experiments: generate a community, train the weight
//! functions, prescribe and coordinate decisions for every test day, and
//! score them at the realized outcomes.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::admm::{self, Agent, AdmmError, AdmmSettings, Residual, Topology};
use crate::bilevel::{self, BilevelError, Grid, Query, TrainedPolicy};
use crate::evaluate::{
    baseline_decision, evaluate_expost, grid_import, po_scenario, saa_scenarios, EvalError, Method, MethodResult,
};
use crate::model::{DecisionVector, ProsumerParams};
use crate::program::Scenario;

use crate::scenarios::{generate_community, standardize, DataError, Dataset, GeneratorConfig, Sample};

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Bilevel(#[from] BilevelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Admm(#[from] AdmmError),
    #[error("{context}: {message}")]
    Stage { context: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn stage(context: impl Into<String>) -> impl FnOnce(ExperimentError) -> ExperimentError {
    let context = context.into();
    move |e| ExperimentError::Stage { context, message: e.to_string() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum TopologyConfig {
    /// Each prosumer linked to the `per_side` nearest on either side of a
    /// ring.
    Ring { per_side: usize },
    Complete,
    None,
    Explicit { adjacency: Vec<Vec<usize>> },
}

impl Default for TopologyConfig {
    fn default() -> Self {
        TopologyConfig::Ring { per_side: 2 }
    }
}

impl TopologyConfig {
    pub fn build(&self, n: usize) -> Result<Topology, ExperimentError> {
        let topo = match self {
            TopologyConfig::Ring { per_side } => {
                let adj = (0..n)
                    .map(|a| {
                        let mut nb: Vec<usize> = (1..=*per_side)
                            .flat_map(|j| [(a + j) % n, (a + n - j % n) % n])
                            .filter(|&b| b != a)
                            .collect();
                        nb.sort_unstable();
                        nb.dedup();
                        nb
                    })
                    .collect();
                Topology::new(adj)?
            }
            TopologyConfig::Complete => Topology::complete(n),
            TopologyConfig::None => Topology::empty(n),
            TopologyConfig::Explicit { adjacency } => {
                if adjacency.len() != n {
                    return Err(ExperimentError::Config(format!(
                        "topology.adjacency has {} rows for {n} prosumers",
                        adjacency.len()
                    )));
                }
                Topology::new(adjacency.clone())?
            }
        };
        Ok(topo)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coordination {
    #[default]
    Admm,
    /// Pooled program with explicit reciprocity; same optimum, no messages.
    Centralized,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    /// Candidate k values; `None` means `{1, 3, 5, 10, ⌈S/2⌉, S}`.
    pub k: Option<Vec<usize>>,
    pub gamma: Vec<f64>,
    /// Neighbors averaged by the point forecast.
    pub po_k: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self { k: None, gamma: vec![0.0, 0.25, 0.5, 0.75, 1.0], po_k: 5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdmmConfig {
    pub rho: f64,
    pub eps: f64,
    pub max_iter: usize,
    pub accelerate: bool,
    pub symmetric_p2p_prices: bool,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        let s = AdmmSettings::default();
        Self { rho: s.rho, eps: s.eps, max_iter: s.max_iter, accelerate: s.accelerate, symmetric_p2p_prices: true }
    }
}

impl AdmmConfig {
    pub fn settings(&self) -> AdmmSettings {
        AdmmSettings { rho: self.rho, eps: self.eps, max_iter: self.max_iter, accelerate: self.accelerate, log_messages: false }
    }
}

fn all_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

/// One experiment. The first five keys are required; every section has
/// defaults. `generator` holds overrides of the synthetic data settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub prosumers: usize,
    pub horizon: usize,
    /// Training days per prosumer.
    pub samples: usize,
    /// Test days, one trial each.
    pub trials: usize,
    /// Days generated before the test block; training uses the last
    /// `samples` of them. Defaults to `samples`.
    #[serde(default)]
    pub history: Option<usize>,
    #[serde(default)]
    pub topology: TopologyConfig,
    #[serde(default = "all_methods")]
    pub methods: Vec<Method>,
    #[serde(default)]
    pub coordination: Coordination,
    #[serde(default)]
    pub generator: Map<String, Value>,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub admm: AdmmConfig,
}

impl ExperimentConfig {
    /// Ten prosumers, 24 steps, 50 samples, 50 trials.
    pub fn default_config() -> Self {
        Self {
            seed: 2024,
            prosumers: 10,
            horizon: 24,
            samples: 50,
            trials: 50,
            history: None,
            topology: TopologyConfig::default(),
            methods: all_methods(),
            coordination: Coordination::Admm,
            generator: Map::new(),
            training: TrainingConfig::default(),
            admm: AdmmConfig::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ExperimentError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn sha256(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }

    pub fn history_days(&self) -> usize {
        self.history.unwrap_or(self.samples)
    }

    /// Synthetic data settings for the whole generated block.
    pub fn generator_config(&self) -> Result<GeneratorConfig, ExperimentError> {
        let base = GeneratorConfig::with_horizon(self.history_days() + self.trials, self.horizon);
        let mut v = serde_json::to_value(&base).expect("generator config serializes");
        let obj = v.as_object_mut().expect("generator config is an object");
        for (k, val) in &self.generator {
            if k == "samples" || k == "horizon" {
                return Err(ExperimentError::Config(format!(
                    "generator.{k} is derived from the top-level settings and cannot be overridden"
                )));
            }
            obj.insert(k.clone(), val.clone());
        }
        let cfg: GeneratorConfig =
            serde_json::from_value(v).map_err(|e| ExperimentError::Config(format!("generator: {e}")))?;
        cfg.validate().map_err(|e| ExperimentError::Config(format!("generator: {e}")))?;
        Ok(cfg)
    }

    pub fn grid(&self) -> Grid {
        let mut g = Grid::default_for(self.samples);
        if let Some(k) = &self.training.k {
            g.k = k.clone();
        }
        g.gamma = self.training.gamma.clone();
        g
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        if self.prosumers == 0 {
            return bad("prosumers must be at least 1".into());
        }
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        if self.samples < 2 {
            return bad(format!("samples must be at least 2 for leave-one-out training, got {}", self.samples));
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.history_days() < self.samples {
            return bad(format!("history {} is shorter than samples {}", self.history_days(), self.samples));
        }
        if self.methods.is_empty() {
            return bad("methods must list at least one method".into());
        }
        let mut m = self.methods.clone();
        m.sort();
        m.dedup();
        if m.len() != self.methods.len() {
            return bad("methods contains duplicates".into());
        }
        if self.training.gamma.is_empty() || self.training.gamma.iter().any(|g| !(0.0..=1.0).contains(g)) {
            return bad("training.gamma must be a non-empty list within [0, 1]".into());
        }
        if self.training.k.as_ref().is_some_and(|k| k.is_empty() || k.contains(&0)) {
            return bad("training.k must be a non-empty list of positive values".into());
        }
        if self.training.po_k == 0 || self.training.po_k > self.samples {
            return bad(format!("training.po_k must lie in [1, {}], got {}", self.samples, self.training.po_k));
        }
        let a = &self.admm;
        if !(a.rho > 0.0) || !(a.eps > 0.0) || a.max_iter == 0 {
            return bad("admm needs rho > 0, eps > 0 and max_iter ≥ 1".into());
        }
        self.generator_config()?;
        self.topology.build(self.prosumers)?;
        Ok(())
    }
}

/// Generated community split into standardized training sets and test
/// days.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub params: Vec<ProsumerParams>,
    pub topology: Topology,
    pub train: Vec<Dataset>,
    /// `test[n][t]` is prosumer n's sample on test day t.
    pub test: Vec<Vec<Sample>>,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared, ExperimentError> {
    cfg.validate()?;
    let topology = cfg.topology.build(cfg.prosumers)?;
    let adj: Vec<Vec<usize>> = (0..cfg.prosumers).map(|n| topology.neighbors(n).to_vec()).collect();
    let gen = cfg.generator_config()?;
    let com = generate_community(cfg.seed, &gen, &adj)?;
    let history = cfg.history_days();
    let train_idx: Vec<usize> = (history - cfg.samples..history).collect();
    let mut train = Vec::with_capacity(cfg.prosumers);
    let mut test = Vec::with_capacity(cfg.prosumers);
    for ds in &com.datasets {
        train.push(standardize(&ds.subset(&train_idx), &(0..cfg.samples).collect::<Vec<_>>())?);
        test.push(ds.samples[history..history + cfg.trials].to_vec());
    }
    Ok(Prepared { params: com.params, topology, train, test })
}

/// Trained weight functions of one prosumer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProsumerPolicies {
    pub knn: Option<TrainedPolicy>,
    pub cknn: Option<TrainedPolicy>,
}

/// Leave-one-out training over each prosumer's own history, with the
/// neighbors' covariates of the same day.
pub fn train_policies(cfg: &ExperimentConfig, prep: &Prepared) -> Result<Vec<ProsumerPolicies>, ExperimentError> {
    let need_knn = cfg.methods.contains(&Method::WsaaKnn);
    let need_cknn = cfg.methods.contains(&Method::WsaaCknn);
    let grid = cfg.grid();
    let knn_grid = Grid { gamma: vec![1.0], ..grid.clone() };
    (0..cfg.prosumers)
        .map(|n| {
            let train = &prep.train[n];
            let nb = prep.topology.neighbors(n);
            let shared: Vec<Vec<Vec<f64>>> =
                (0..train.len()).map(|i| nb.iter().map(|&m| prep.train[m].samples[i].x.clone()).collect()).collect();
            let p = &prep.params[n];
            let run = |g: &Grid, with_neighbors: bool| -> Result<TrainedPolicy, ExperimentError> {
                let queries: Vec<Query> = if with_neighbors {
                    bilevel::loo_queries(train, &shared)
                } else {
                    bilevel::loo_queries(train, &[])
                };
                bilevel::train(p, train, &queries, g).map_err(|e| stage(format!("training prosumer {n}"))(e.into()))
            };
            Ok(ProsumerPolicies {
                knn: if need_knn { Some(run(&knn_grid, false)?) } else { None },
                cknn: if need_cknn { Some(run(&grid, true)?) } else { None },
            })
        })
        .collect()
}

/// One method on one test day.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub method: Method,
    pub cost: f64,
    pub prosumer_costs: Vec<f64>,
    /// Community grid import per step.
    pub import: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<Residual>,
    /// Largest `|Σ p_s·dt − C_s|` over prosumers.
    pub energy_residual: f64,
    /// Largest SoC bound violation over prosumers and steps.
    pub soc_violation: f64,
    pub reciprocity_gap: f64,
    pub decisions: Vec<DecisionVector>,
}

fn method_scenarios(
    method: Method,
    cfg: &ExperimentConfig,
    prep: &Prepared,
    policies: &[ProsumerPolicies],
    shared: &[Vec<Vec<f64>>],
    t: usize,
) -> Result<Vec<Vec<Scenario>>, ExperimentError> {
    (0..cfg.prosumers)
        .map(|n| {
            let p = &prep.params[n];
            let train = &prep.train[n];
            let x = &prep.test[n][t].x;
            let missing = || ExperimentError::Config(format!("{method} needs a trained policy"));
            let from_policy = |pol: &TrainedPolicy, nb: &[Vec<f64>]| -> Result<Vec<Scenario>, ExperimentError> {
                let w = bilevel::policy_weights(pol, x, nb, train)?;
                Ok(Scenario::from_weights(p, train, &w.w))
            };
            match method {
                Method::Po => Ok(vec![po_scenario(p, x, train, cfg.training.po_k)?]),
                Method::Saa => Ok(saa_scenarios(p, train)),
                Method::WsaaKnn => from_policy(policies[n].knn.as_ref().ok_or_else(missing)?, &[]),
                Method::WsaaCknn => from_policy(policies[n].cknn.as_ref().ok_or_else(missing)?, &shared[n]),
            }
        })
        .collect()
}

fn run_trial(
    method: Method,
    cfg: &ExperimentConfig,
    prep: &Prepared,
    policies: &[ProsumerPolicies],
    t: usize,
) -> Result<TrialRecord, ExperimentError> {
    let xs: Vec<Vec<f64>> = (0..cfg.prosumers).map(|n| prep.test[n][t].x.clone()).collect();
    let shared = admm::received_covariates(&prep.topology, &admm::share_covariates(&prep.topology, &xs))?;
    let scenarios = method_scenarios(method, cfg, prep, policies, &shared, t)?;
    let mut agents: Vec<Agent> =
        prep.params.iter().zip(scenarios).map(|(p, s)| Agent { params: p.clone(), scenarios: s }).collect();
    if cfg.admm.symmetric_p2p_prices {
        admm::symmetrize_p2p_prices(&prep.topology, &mut agents)?;
    }
    let (decisions, iterations, converged, trace) = match cfg.coordination {
        Coordination::Admm => {
            let r = admm::run(&prep.topology, &agents, &cfg.admm.settings())?;
            (r.decisions, r.iterations, r.converged, r.trace)
        }
        Coordination::Centralized => (admm::centralized(&prep.topology, &agents)?.decisions, 0, true, Vec::new()),
    };
    let mut prosumer_costs = Vec::with_capacity(cfg.prosumers);
    let mut import = vec![0.0; cfg.horizon];
    let mut energy_residual = 0.0_f64;
    let mut soc_violation = 0.0_f64;
    for (n, z) in decisions.iter().enumerate() {
        let p = &prep.params[n];
        let y = &prep.test[n][t].y;
        prosumer_costs.push(evaluate_expost(p, z, y)?);
        for (acc, v) in import.iter_mut().zip(grid_import(p, z, y)?) {
            *acc += v;
        }
        energy_residual = energy_residual.max((z.p_s.iter().sum::<f64>() * p.dt - p.c_s).abs());
        for &e in &z.e {
            soc_violation = soc_violation.max(p.e_min - e).max(e - p.e_max);
        }
    }
    let reciprocity_gap = prep
        .topology
        .edges()
        .into_iter()
        .map(|(n, m)| {
            let a = &decisions[n].p_nm[prep.topology.slot(n, m).expect("edge")];
            let b = &decisions[m].p_nm[prep.topology.slot(m, n).expect("edge")];
            a.iter().zip(b).map(|(x, y)| (x + y).abs()).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max);
    Ok(TrialRecord {
        trial: t,
        method,
        cost: prosumer_costs.iter().sum(),
        prosumer_costs,
        import,
        iterations,
        converged,
        trace,
        energy_residual,
        soc_violation: soc_violation.max(0.0),
        reciprocity_gap,
        decisions,
    })
}

/// Community import without coordination: no P2P, idle battery, shiftable
/// load on its preferred profile, and day-ahead purchases chosen against
/// the uniform empirical distribution.
fn baseline_import(prep: &Prepared, t: usize) -> Result<Vec<f64>, ExperimentError> {
    let h = prep.params.first().map_or(0, |p| p.horizon);
    let mut import = vec![0.0; h];
    for (n, p) in prep.params.iter().enumerate() {
        let z = baseline_decision(p, &saa_scenarios(p, &prep.train[n]))?;
        for (acc, v) in import.iter_mut().zip(grid_import(p, &z, &prep.test[n][t].y)?) {
            *acc += v;
        }
    }
    Ok(import)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeakRow {
    pub series: String,
    pub peak: f64,
    /// `1 − peak / baseline peak`; `None` for the baseline itself.
    pub reduction: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub policies: Vec<ProsumerPolicies>,
    pub methods: Vec<MethodResult>,
    pub baseline_profile: Vec<f64>,
    pub baseline_peak: f64,
    pub peaks: Vec<PeakRow>,
    pub trials: Vec<TrialRecord>,
    /// Stage failures; trials that did finish are kept.
    pub failures: Vec<String>,
    pub runtime_secs: f64,
}

impl ExperimentResult {
    pub fn method(&self, m: Method) -> Option<&MethodResult> {
        self.methods.iter().find(|r| r.method == m)
    }

    pub fn reduction(&self, m: Method) -> Option<f64> {
        self.peaks.iter().find(|r| r.series == m.as_str()).and_then(|r| r.reduction)
    }

    pub fn records(&self, m: Method) -> impl Iterator<Item = &TrialRecord> {
        self.trials.iter().filter(move |r| r.method == m)
    }

    pub fn failed(&self) -> bool {
        !self.failures.is_empty()
    }
}

fn mean_profile(rows: &[&Vec<f64>]) -> Vec<f64> {
    let h = rows.first().map_or(0, |r| r.len());
    let mut out = vec![0.0; h];
    for r in rows {
        for (a, v) in out.iter_mut().zip(r.iter()) {
            *a += v / rows.len() as f64;
        }
    }
    out
}

/// Runs every configured method on every test day. Failures after
/// training are collected rather than raised, so finished trials survive.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult, ExperimentError> {
    let start = Instant::now();
    let prep = prepare(cfg).map_err(stage("data generation"))?;
    let policies = train_policies(cfg, &prep)?;

    let jobs: Vec<(usize, Method)> =
        (0..cfg.trials).flat_map(|t| cfg.methods.iter().map(move |&m| (t, m))).collect();
    let outcomes: Vec<Result<TrialRecord, String>> = jobs
        .par_iter()
        .map(|&(t, m)| run_trial(m, cfg, &prep, &policies, t).map_err(|e| format!("trial {t} {m}: {e}")))
        .collect();
    let baselines: Vec<Result<Vec<f64>, String>> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| baseline_import(&prep, t).map_err(|e| format!("trial {t} baseline: {e}")))
        .collect();

    let mut failures = Vec::new();
    let mut trials = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        match o {
            Ok(r) => trials.push(r),
            Err(e) => failures.push(e),
        }
    }
    let mut base_rows = Vec::new();
    for b in &baselines {
        match b {
            Ok(r) => base_rows.push(r),
            Err(e) => failures.push(e.clone()),
        }
    }
    let baseline_profile = mean_profile(&base_rows);
    let baseline_peak = baseline_profile.iter().copied().fold(0.0, f64::max);

    let mut methods = Vec::new();
    let mut peaks = vec![PeakRow { series: "BASELINE".into(), peak: baseline_peak, reduction: None }];
    for &m in &cfg.methods {
        let recs: Vec<&TrialRecord> = trials.iter().filter(|r| r.method == m).collect();
        if recs.is_empty() {
            continue;
        }
        let profiles: Vec<Vec<f64>> = recs.iter().map(|r| r.import.clone()).collect();
        let res = MethodResult::new(m, recs.iter().map(|r| r.cost).collect(), &profiles)?;
        let reduction = (baseline_peak > 0.0).then(|| 1.0 - res.peak / baseline_peak);
        peaks.push(PeakRow { series: m.as_str().into(), peak: res.peak, reduction });
        methods.push(res);
    }
    Ok(ExperimentResult {
        config: cfg.clone(),
        policies,
        methods,
        baseline_profile,
        baseline_peak,
        peaks,
        trials,
        failures,
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sweep {
    Prosumers(Vec<usize>),
    Samples(Vec<usize>),
}

impl Sweep {
    pub fn name(&self) -> &'static str {
        match self {
            Sweep::Prosumers(_) => "prosumers",
            Sweep::Samples(_) => "samples",
        }
    }

    pub fn values(&self) -> &[usize] {
        match self {
            Sweep::Prosumers(v) | Sweep::Samples(v) => v,
        }
    }
}

/// Distribution of the community cost across trials (pooled over seeds)
/// at one sweep point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub sweep: String,
    pub value: usize,
    pub method: Method,
    pub count: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub mean: f64,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Runs the experiment at every sweep point and seed. For a sample sweep
/// the test days are held fixed: history is the largest sample size and
/// each point trains on the most recent days.
pub fn run_sensitivity(
    base: &ExperimentConfig,
    sweep: &Sweep,
    seeds: &[u64],
) -> Result<Vec<SensitivityRow>, ExperimentError> {
    if sweep.values().is_empty() || seeds.is_empty() {
        return Err(ExperimentError::Config("sensitivity needs at least one sweep value and one seed".into()));
    }
    let max_s = match sweep {
        Sweep::Samples(v) => v.iter().copied().max().unwrap_or(base.samples),
        Sweep::Prosumers(_) => base.samples,
    };
    let mut rows = Vec::new();
    for &value in sweep.values() {
        let mut pooled: Vec<Vec<f64>> = vec![Vec::new(); base.methods.len()];
        for &seed in seeds {
            let mut cfg = base.clone();
            cfg.seed = seed;
            match sweep {
                Sweep::Prosumers(_) => cfg.prosumers = value,
                Sweep::Samples(_) => {
                    cfg.samples = value;
                    cfg.history = Some(max_s.max(base.history_days()));
                    cfg.training.po_k = cfg.training.po_k.min(value);
                }
            }
            let res = run_experiment(&cfg).map_err(stage(format!("{} = {value}, seed {seed}", sweep.name())))?;
            if let Some(f) = res.failures.first() {
                return Err(ExperimentError::Stage { context: format!("{} = {value}, seed {seed}", sweep.name()), message: f.clone() });
            }
            for (slot, &m) in pooled.iter_mut().zip(&base.methods) {
                slot.extend(res.records(m).map(|r| r.cost));
            }
        }
        for (mut costs, &m) in pooled.into_iter().zip(&base.methods) {
            costs.sort_by(f64::total_cmp);
            rows.push(SensitivityRow {
                sweep: sweep.name().into(),
                value,
                method: m,
                count: costs.len(),
                median: quantile(&costs, 0.5),
                q1: quantile(&costs, 0.25),
                q3: quantile(&costs, 0.75),
                mean: costs.iter().sum::<f64>() / costs.len() as f64,
            });
        }
    }
    Ok(rows)
}

pub fn write_sensitivity_csv(rows: &[SensitivityRow], path: &Path) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["sweep", "value", "method", "count", "median", "q1", "q3", "mean"]).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.sweep.clone(),
            r.value.to_string(),
            r.method.to_string(),
            r.count.to_string(),
            r.median.to_string(),
            r.q1.to_string(),
            r.q3.to_string(),
            r.mean.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> ExperimentError {
    ExperimentError::Io(std::io::Error::other(e))
}

/// Header plus string rows of a CSV written by this crate.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Numeric column by name.
    pub fn floats(&self, name: &str) -> Option<Vec<f64>> {
        let c = self.column(name)?;
        self.rows.iter().map(|r| r.get(c).and_then(|v| v.parse().ok())).collect()
    }
}

pub fn read_table(path: &Path) -> Result<Table, ExperimentError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|rec| rec.iter().map(str::to_string).collect()))
        .collect::<Result<_, _>>()
        .map_err(csv_err)?;
    Ok(Table { header, rows })
}

fn write_rows(path: &Path, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(&r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Plain-text report: mean cost per method and the peak reduction.
pub fn summary_text(res: &ExperimentResult) -> String {
    let c = &res.config;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "prosumers {}  horizon {}  samples {}  trials {}  seed {}  coordination {:?}",
        c.prosumers, c.horizon, c.samples, c.trials, c.seed, c.coordination
    );
    let _ = writeln!(s, "\nmethod       mean cost (¢)   std (¢)      peak (kW)   peak reduction");
    for m in &res.methods {
        let n = m.costs.len() as f64;
        let var = m.costs.iter().map(|x| (x - m.mean_cost).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        let red = res.reduction(m.method).map(|r| format!("{:.1}%", 100.0 * r)).unwrap_or_else(|| "-".into());
        let _ = writeln!(s, "{:<12} {:>13.1} {:>10.1} {:>14.2}   {}", m.method.as_str(), m.mean_cost, var.sqrt(), m.peak, red);
    }
    let _ = writeln!(s, "{:<12} {:>13} {:>10} {:>14.2}", "BASELINE", "-", "-", res.baseline_peak);
    if let Some(r) = res.reduction(Method::WsaaCknn) {
        let _ = writeln!(s, "\npeak reduction of DCSO against the uncoordinated baseline: {:.1}%", 100.0 * r);
    }
    let admm: Vec<&TrialRecord> = res.trials.iter().filter(|t| !t.trace.is_empty()).collect();
    if !admm.is_empty() {
        let conv = admm.iter().filter(|t| t.converged).count();
        let max_it = admm.iter().map(|t| t.iterations).max().unwrap_or(0);
        let _ = writeln!(s, "ADMM: {conv}/{} runs converged, at most {max_it} iterations", admm.len());
    }
    let _ = writeln!(s, "runtime {:.1} s", res.runtime_secs);
    for f in &res.failures {
        let _ = writeln!(s, "FAILED: {f}");
    }
    s
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub seed: u64,
    pub config_sha256: String,
    pub created_unix: u64,
    pub files: Vec<String>,
}

pub fn write_manifest(dir: &Path, seed: u64, config_sha256: &str, files: &[&str]) -> Result<(), ExperimentError> {
    let m = Manifest {
        version: env!("CARGO_PKG_VERSION").into(),
        seed,
        config_sha256: config_sha256.into(),
        created_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        files: files.iter().map(|f| f.to_string()).collect(),
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&m).expect("manifest serializes"))?;
    Ok(())
}

/// Writes every result file into `dir`, and a `FAILED` marker when any
/// stage failed.
pub fn write_outputs(res: &ExperimentResult, dir: &Path) -> Result<(), ExperimentError> {
    std::fs::create_dir_all(dir)?;
    let methods: Vec<Method> = res.methods.iter().map(|m| m.method).collect();
    let trials = res.config.trials;

    let mut header = vec!["trial".to_string()];
    header.extend(methods.iter().map(|m| m.to_string()));
    write_rows(
        &dir.join("costs.csv"),
        &header,
        (0..trials).map(|t| {
            let mut row = vec![t.to_string()];
            for &m in &methods {
                row.push(fmt_opt(res.trials.iter().find(|r| r.trial == t && r.method == m).map(|r| r.cost)));
            }
            row
        }),
    )?;

    write_rows(
        &dir.join("peaks.csv"),
        &["series".into(), "mean_cost".into(), "peak_kw".into(), "reduction".into()],
        res.peaks.iter().map(|p| {
            let mean = Method::parse(&p.series).and_then(|m| res.method(m)).map(|m| m.mean_cost);
            vec![p.series.clone(), fmt_opt(mean), p.peak.to_string(), fmt_opt(p.reduction)]
        }),
    )?;

    let mut header = vec!["step".to_string(), "BASELINE".to_string()];
    header.extend(methods.iter().map(|m| m.to_string()));
    write_rows(
        &dir.join("profiles.csv"),
        &header,
        (0..res.baseline_profile.len()).map(|h| {
            let mut row = vec![h.to_string(), res.baseline_profile[h].to_string()];
            row.extend(res.methods.iter().map(|m| m.import_profile[h].to_string()));
            row
        }),
    )?;

    write_rows(
        &dir.join("residuals.csv"),
        &["trial".into(), "method".into(), "iteration".into(), "r".into(), "s".into()],
        res.trials.iter().flat_map(|t| {
            t.trace.iter().map(move |r| {
                vec![t.trial.to_string(), t.method.to_string(), r.iteration.to_string(), r.primal.to_string(), r.dual.to_string()]
            })
        }),
    )?;

    // first-trial schedules of every prosumer under each method
    let mut rows = Vec::new();
    for rec in res.trials.iter().filter(|r| r.trial == 0) {
        for (n, z) in rec.decisions.iter().enumerate() {
            for h in 0..z.p_b.len() {
                let p2p: f64 = z.p_nm.iter().map(|r| r[h]).sum();
                rows.push(vec![
                    rec.method.to_string(),
                    n.to_string(),
                    h.to_string(),
                    z.p_b[h].to_string(),
                    z.e[h + 1].to_string(),
                    z.p_s[h].to_string(),
                    z.s[h + 1].to_string(),
                    z.p_mt[h].to_string(),
                    p2p.to_string(),
                ]);
            }
        }
    }
    write_rows(
        &dir.join("schedules.csv"),
        &["method", "prosumer", "step", "p_b", "e", "p_s", "s", "p_mt", "p2p_net"].map(String::from),
        rows,
    )?;

    let mut rows = Vec::new();
    for (n, pol) in res.policies.iter().enumerate() {
        for (name, p) in [("WSAA_KNN", &pol.knn), ("WSAA_CKNN", &pol.cknn)] {
            let Some(p) = p else { continue };
            for c in &p.table {
                let chosen = c.k == p.k && c.gamma == p.gamma;
                rows.push(vec![
                    n.to_string(),
                    name.into(),
                    c.k.to_string(),
                    c.gamma.to_string(),
                    fmt_opt(c.cost),
                    u8::from(chosen).to_string(),
                ]);
            }
        }
    }
    write_rows(&dir.join("training.csv"), &["prosumer", "method", "k", "gamma", "cost", "selected"].map(String::from), rows)?;

    std::fs::write(dir.join("policies.json"), serde_json::to_string_pretty(&res.policies).expect("policies serialize"))?;
    std::fs::write(dir.join("config.json"), res.config.to_json())?;
    std::fs::write(dir.join("summary.txt"), summary_text(res))?;
    let files = [
        "costs.csv",
        "peaks.csv",
        "profiles.csv",
        "residuals.csv",
        "schedules.csv",
        "training.csv",
        "policies.json",
        "config.json",
        "summary.txt",
    ];
    write_manifest(dir, res.config.seed, &res.config.sha256(), &files)?;
    if res.failed() {
        let mut f = std::fs::File::create(dir.join("FAILED"))?;
        for e in &res.failures {
            writeln!(f, "{e}")?;
        }
    }
    Ok(())
}
