//! Prosumer physics and economics: parameters, the flattened decision
//! layout, the labeled constraint system and the cost functions.
//!
//! Decision variables are flattened in the order
//! `[p_b (H)][e (H+1)][p_s (H)][s (H+1)][p_mt (H)][p_nm (M×H)][q (S×H)]`
//! where `M` is the neighbor count and `S` the scenario count.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::solver::SparseRow;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid prosumer parameters: {0}")]
    InvalidParams(String),
    #[error("infeasible static bounds ({label}): {detail}")]
    Infeasible { label: Label, detail: String },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// How the per-scenario power balance is enforced.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BalanceMode {
    /// Supply equals demand exactly.
    #[default]
    Equality,
    /// Supply covers demand; surplus PV is curtailed at no cost.
    Surplus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProsumerParams {
    pub id: usize,
    pub horizon: usize,
    pub dt: f64,
    pub eta: f64,
    pub e_min: f64,
    pub e_max: f64,
    pub e_init: f64,
    pub p_b_max: f64,
    pub p_s_max: f64,
    /// Total shiftable-load energy over the horizon (kWh).
    pub c_s: f64,
    pub p_s_ref: Vec<f64>,
    pub p_e_max: f64,
    pub p_mt_bounds: (f64, f64),
    pub q_mt_bounds: (f64, f64),
    pub alpha_b: f64,
    pub alpha_s: f64,
    /// Quadratic P2P wheeling cost `κ·p_nm²` per step; zero disables it.
    #[serde(default)]
    pub trade_penalty: f64,
    #[serde(default)]
    pub beta_b: f64,
    #[serde(default)]
    pub beta_s: f64,
    pub c_p_mt: Vec<f64>,
    pub p_g: Vec<f64>,
    pub p_l: Vec<f64>,
    #[serde(default)]
    pub neighbors: Vec<usize>,
    #[serde(default)]
    pub balance: BalanceMode,
}

impl ProsumerParams {
    /// Table I values for a 24-hour day with flat nominal profiles.
    pub fn table_one(id: usize) -> Self {
        let h = 24;
        Self {
            id,
            horizon: h,
            dt: 1.0,
            eta: 0.9,
            e_min: 10.0,
            e_max: 200.0,
            e_init: 10.0,
            p_b_max: 20.0,
            p_s_max: 20.0,
            c_s: 150.0,
            p_s_ref: vec![150.0 / h as f64; h],
            p_e_max: 5.0,
            p_mt_bounds: (-50.0, 50.0),
            q_mt_bounds: (-50.0, 50.0),
            alpha_b: 0.1,
            alpha_s: 0.1,
            trade_penalty: 0.0,
            beta_b: 0.0,
            beta_s: 0.0,
            c_p_mt: vec![6.0; h],
            p_g: vec![0.0; h],
            p_l: vec![0.0; h],
            neighbors: Vec::new(),
            balance: BalanceMode::Equality,
        }
    }

    pub fn n_neighbors(&self) -> usize {
        self.neighbors.len()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidParams(m));
        let h = self.horizon;
        if h == 0 {
            return bad("horizon must be at least 1".into());
        }
        for (name, v) in [
            ("p_s_ref", &self.p_s_ref),
            ("c_p_mt", &self.c_p_mt),
            ("p_g", &self.p_g),
            ("p_l", &self.p_l),
        ] {
            if v.len() != h {
                return bad(format!("{name} has length {}, expected {h}", v.len()));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return bad(format!("{name} contains non-finite values"));
            }
        }
        let scalars = [
            ("dt", self.dt),
            ("eta", self.eta),
            ("e_min", self.e_min),
            ("e_max", self.e_max),
            ("e_init", self.e_init),
            ("p_b_max", self.p_b_max),
            ("p_s_max", self.p_s_max),
            ("c_s", self.c_s),
            ("p_e_max", self.p_e_max),
            ("alpha_b", self.alpha_b),
            ("alpha_s", self.alpha_s),
            ("trade_penalty", self.trade_penalty),
            ("beta_b", self.beta_b),
            ("beta_s", self.beta_s),
        ];
        if let Some((name, _)) = scalars.iter().find(|(_, v)| !v.is_finite()) {
            return bad(format!("{name} is not finite"));
        }
        if !(self.dt > 0.0) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return bad(format!("eta must lie in (0, 1], got {}", self.eta));
        }
        for (name, v) in [
            ("p_b_max", self.p_b_max),
            ("p_s_max", self.p_s_max),
            ("p_e_max", self.p_e_max),
            ("alpha_b", self.alpha_b),
            ("alpha_s", self.alpha_s),
            ("trade_penalty", self.trade_penalty),
            ("beta_b", self.beta_b),
            ("beta_s", self.beta_s),
        ] {
            if v < 0.0 {
                return bad(format!("{name} must be non-negative, got {v}"));
            }
        }
        for (name, (lo, hi)) in [("p_mt_bounds", self.p_mt_bounds), ("q_mt_bounds", self.q_mt_bounds)] {
            if lo.is_nan() || hi.is_nan() || lo > hi {
                return bad(format!("{name} = ({lo}, {hi}) is not an interval"));
            }
        }
        let mut seen = self.neighbors.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.neighbors.len() || self.neighbors.contains(&self.id) {
            return bad("neighbor list must be distinct and exclude the prosumer itself".into());
        }

        if !(self.e_min <= self.e_init && self.e_init <= self.e_max) {
            return Err(ModelError::Infeasible {
                label: Label::BessSoc,
                detail: format!(
                    "e_init {} outside [{}, {}]",
                    self.e_init, self.e_min, self.e_max
                ),
            });
        }
        if let Some(h) = self.p_s_ref.iter().position(|p| p.abs() > self.p_s_max) {
            return Err(ModelError::Infeasible {
                label: Label::SlPow,
                detail: format!("p_s_ref[{h}] exceeds p_s_max {}", self.p_s_max),
            });
        }
        let reach = h as f64 * self.p_s_max * self.dt;
        if self.c_s.abs() > reach * (1.0 + 1e-12) {
            return Err(ModelError::Infeasible {
                label: Label::SlEnergy,
                detail: format!("C_s {} unreachable with H·p_s_max·dt = {reach}", self.c_s),
            });
        }
        Ok(())
    }
}

/// Stable constraint labels used in diagnostics and tests.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Label {
    Balance,
    ReciprocityPlaceholder,
    BessDyn,
    BessSoc,
    BessPow,
    SlDyn,
    SlEnergy,
    SlPow,
    TradeBound,
    GridBound,
}

impl Label {
    pub const ALL: [Label; 10] = [
        Label::Balance,
        Label::ReciprocityPlaceholder,
        Label::BessDyn,
        Label::BessSoc,
        Label::BessPow,
        Label::SlDyn,
        Label::SlEnergy,
        Label::SlPow,
        Label::TradeBound,
        Label::GridBound,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Balance => "balance",
            Label::ReciprocityPlaceholder => "reciprocity-placeholder",
            Label::BessDyn => "bess-dyn",
            Label::BessSoc => "bess-soc",
            Label::BessPow => "bess-pow",
            Label::SlDyn => "sl-dyn",
            Label::SlEnergy => "sl-energy",
            Label::SlPow => "sl-pow",
            Label::TradeBound => "trade-bound",
            Label::GridBound => "grid-bound",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Where a row or bound sits: its label plus time and scenario indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowTag {
    pub label: Label,
    pub time: Option<usize>,
    pub scenario: Option<usize>,
}

impl RowTag {
    fn at(label: Label, time: usize) -> Self {
        Self { label, time: Some(time), scenario: None }
    }
}

/// Offsets of each variable block in the flattened decision vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    pub horizon: usize,
    pub n_neighbors: usize,
    pub n_scenarios: usize,
}

impl Layout {
    pub fn new(horizon: usize, n_neighbors: usize, n_scenarios: usize) -> Self {
        Self { horizon, n_neighbors, n_scenarios }
    }

    pub fn p_b(&self, h: usize) -> usize {
        h
    }
    pub fn e(&self, h: usize) -> usize {
        self.horizon + h
    }
    pub fn p_s(&self, h: usize) -> usize {
        2 * self.horizon + 1 + h
    }
    pub fn s(&self, h: usize) -> usize {
        3 * self.horizon + 1 + h
    }
    pub fn p_mt(&self, h: usize) -> usize {
        4 * self.horizon + 2 + h
    }
    pub fn p_nm(&self, m: usize, h: usize) -> usize {
        5 * self.horizon + 2 + m * self.horizon + h
    }
    pub fn q(&self, scenario: usize, h: usize) -> usize {
        (5 + self.n_neighbors) * self.horizon + 2 + scenario * self.horizon + h
    }
    /// Variables shared by every scenario.
    pub fn n_first_stage(&self) -> usize {
        (5 + self.n_neighbors) * self.horizon + 2
    }
    pub fn n_vars(&self) -> usize {
        self.n_first_stage() + self.n_scenarios * self.horizon
    }
}

/// One prosumer's decision over the horizon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionVector {
    pub p_b: Vec<f64>,
    pub e: Vec<f64>,
    pub p_s: Vec<f64>,
    pub s: Vec<f64>,
    pub p_mt: Vec<f64>,
    /// One row per scenario.
    pub q_mt: Vec<Vec<f64>>,
    /// One row per neighbor, in the order of `ProsumerParams::neighbors`.
    pub p_nm: Vec<Vec<f64>>,
}

impl DecisionVector {
    pub fn zeros(horizon: usize, n_neighbors: usize, n_scenarios: usize) -> Self {
        Self {
            p_b: vec![0.0; horizon],
            e: vec![0.0; horizon + 1],
            p_s: vec![0.0; horizon],
            s: vec![0.0; horizon + 1],
            p_mt: vec![0.0; horizon],
            q_mt: vec![vec![0.0; horizon]; n_scenarios],
            p_nm: vec![vec![0.0; horizon]; n_neighbors],
        }
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self.p_b.len(), self.p_nm.len(), self.q_mt.len())
    }

    pub fn from_flat(layout: &Layout, x: &[f64]) -> Self {
        let h = layout.horizon;
        let seg = |start: usize, len: usize| x[start..start + len].to_vec();
        Self {
            p_b: seg(layout.p_b(0), h),
            e: seg(layout.e(0), h + 1),
            p_s: seg(layout.p_s(0), h),
            s: seg(layout.s(0), h + 1),
            p_mt: seg(layout.p_mt(0), h),
            q_mt: (0..layout.n_scenarios).map(|k| seg(layout.q(k, 0), h)).collect(),
            p_nm: (0..layout.n_neighbors).map(|m| seg(layout.p_nm(m, 0), h)).collect(),
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.layout().n_vars());
        x.extend_from_slice(&self.p_b);
        x.extend_from_slice(&self.e);
        x.extend_from_slice(&self.p_s);
        x.extend_from_slice(&self.s);
        x.extend_from_slice(&self.p_mt);
        self.p_nm.iter().for_each(|r| x.extend_from_slice(r));
        self.q_mt.iter().for_each(|r| x.extend_from_slice(r));
        x
    }

    fn check_dims(&self, p: &ProsumerParams) -> Result<(), ModelError> {
        let h = p.horizon;
        let ok = self.p_b.len() == h
            && self.e.len() == h + 1
            && self.p_s.len() == h
            && self.s.len() == h + 1
            && self.p_mt.len() == h
            && self.p_nm.len() == p.n_neighbors()
            && self.q_mt.iter().chain(&self.p_nm).all(|r| r.len() == h);
        if ok {
            Ok(())
        } else {
            Err(ModelError::Dimension(format!(
                "decision does not match horizon {h} with {} neighbors",
                p.n_neighbors()
            )))
        }
    }
}

/// PV and must-run load seen by one scenario's balance rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadProfile {
    pub p_g: Vec<f64>,
    pub p_l: Vec<f64>,
}

impl LoadProfile {
    pub fn nominal(p: &ProsumerParams) -> Self {
        Self { p_g: p.p_g.clone(), p_l: p.p_l.clone() }
    }
}

/// Linear constraint system over the flattened decision variables.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintSystem {
    pub layout: Layout,
    pub eq: Vec<SparseRow>,
    pub eq_tags: Vec<RowTag>,
    pub ineq: Vec<SparseRow>,
    pub ineq_tags: Vec<RowTag>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub bound_tags: Vec<RowTag>,
}

impl ConstraintSystem {
    pub fn n_vars(&self) -> usize {
        self.layout.n_vars()
    }

    pub fn count(&self, label: Label) -> usize {
        self.eq_tags
            .iter()
            .chain(&self.ineq_tags)
            .filter(|t| t.label == label)
            .count()
    }
}

pub fn build_constraints(p: &ProsumerParams, num_scenarios: usize) -> Result<ConstraintSystem, ModelError> {
    let loads = vec![LoadProfile::nominal(p); num_scenarios];
    build_constraints_with(p, &loads)
}

/// Builds the feasible set with scenario-specific PV and load on each
/// scenario's balance rows. Reciprocity is left to the network level.
pub fn build_constraints_with(p: &ProsumerParams, loads: &[LoadProfile]) -> Result<ConstraintSystem, ModelError> {
    p.validate()?;
    if loads.is_empty() {
        return Err(ModelError::InvalidParams("at least one scenario is required".into()));
    }
    let h_n = p.horizon;
    if let Some(k) = loads.iter().position(|l| l.p_g.len() != h_n || l.p_l.len() != h_n) {
        return Err(ModelError::Dimension(format!("scenario {k} load profile length differs from horizon {h_n}")));
    }
    let lay = Layout::new(h_n, p.n_neighbors(), loads.len());
    let n = lay.n_vars();
    let mut sys = ConstraintSystem {
        layout: lay,
        eq: Vec::new(),
        eq_tags: Vec::new(),
        ineq: Vec::new(),
        ineq_tags: Vec::new(),
        lower: vec![f64::NEG_INFINITY; n],
        upper: vec![f64::INFINITY; n],
        bound_tags: vec![RowTag { label: Label::GridBound, time: None, scenario: None }; n],
    };
    let dt = p.dt;

    for (k, load) in loads.iter().enumerate() {
        for h in 0..h_n {
            // supply − demand: p_mt + q + Σp_nm − p_b − p_s  vs  p_l − p_g
            let mut terms = vec![(lay.p_mt(h), 1.0), (lay.q(k, h), 1.0)];
            terms.extend((0..lay.n_neighbors).map(|m| (lay.p_nm(m, h), 1.0)));
            terms.push((lay.p_b(h), -1.0));
            terms.push((lay.p_s(h), -1.0));
            let net = load.p_l[h] - load.p_g[h];
            let tag = RowTag { label: Label::Balance, time: Some(h), scenario: Some(k) };
            match p.balance {
                BalanceMode::Equality => {
                    sys.eq.push(SparseRow::new(terms, net));
                    sys.eq_tags.push(tag);
                }
                BalanceMode::Surplus => {
                    let neg = terms.into_iter().map(|(j, a)| (j, -a)).collect();
                    sys.ineq.push(SparseRow::new(neg, -net));
                    sys.ineq_tags.push(tag);
                }
            }
        }
    }
    for h in 0..h_n {
        sys.eq.push(SparseRow::new(
            vec![(lay.e(h + 1), 1.0), (lay.e(h), -1.0), (lay.p_b(h), -p.eta * dt)],
            0.0,
        ));
        sys.eq_tags.push(RowTag::at(Label::BessDyn, h));
    }
    for h in 0..h_n {
        sys.eq.push(SparseRow::new(
            vec![(lay.s(h + 1), 1.0), (lay.s(h), -1.0), (lay.p_s(h), -dt)],
            -p.p_s_ref[h] * dt,
        ));
        sys.eq_tags.push(RowTag::at(Label::SlDyn, h));
    }
    sys.eq.push(SparseRow::new((0..h_n).map(|h| (lay.p_s(h), dt)).collect(), p.c_s));
    sys.eq_tags.push(RowTag { label: Label::SlEnergy, time: None, scenario: None });

    let mut bound = |j: usize, lo: f64, hi: f64, tag: RowTag| {
        sys.lower[j] = lo;
        sys.upper[j] = hi;
        sys.bound_tags[j] = tag;
    };
    for h in 0..h_n {
        bound(lay.p_b(h), -p.p_b_max, p.p_b_max, RowTag::at(Label::BessPow, h));
        bound(lay.p_s(h), -p.p_s_max, p.p_s_max, RowTag::at(Label::SlPow, h));
        bound(lay.p_mt(h), p.p_mt_bounds.0, p.p_mt_bounds.1, RowTag::at(Label::GridBound, h));
        for m in 0..lay.n_neighbors {
            bound(lay.p_nm(m, h), -p.p_e_max, p.p_e_max, RowTag::at(Label::TradeBound, h));
        }
        for k in 0..lay.n_scenarios {
            let tag = RowTag { label: Label::GridBound, time: Some(h), scenario: Some(k) };
            bound(lay.q(k, h), p.q_mt_bounds.0, p.q_mt_bounds.1, tag);
        }
    }
    bound(lay.e(0), p.e_init, p.e_init, RowTag::at(Label::BessSoc, 0));
    for h in 1..=h_n {
        bound(lay.e(h), p.e_min, p.e_max, RowTag::at(Label::BessSoc, h));
    }
    bound(lay.s(0), 0.0, 0.0, RowTag::at(Label::SlDyn, 0));
    for h in 1..=h_n {
        bound(lay.s(h), f64::NEG_INFINITY, f64::INFINITY, RowTag::at(Label::SlDyn, h));
    }
    Ok(sys)
}

/// Battery degradation plus shiftable-load discomfort (¢).
pub fn cost_flexibility(p: &ProsumerParams, p_b: &[f64], s: &[f64]) -> Result<f64, ModelError> {
    if p_b.len() != p.horizon || s.len() != p.horizon + 1 {
        return Err(ModelError::Dimension(format!(
            "p_b has {} entries and s has {}, expected {} and {}",
            p_b.len(),
            s.len(),
            p.horizon,
            p.horizon + 1
        )));
    }
    let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
    let abs = |v: &[f64]| v.iter().map(|x| x.abs()).sum::<f64>();
    let mut c = p.alpha_b * sq(p_b) + p.alpha_s * sq(s);
    if p.beta_b != 0.0 {
        c += p.beta_b * abs(p_b);
    }
    if p.beta_s != 0.0 {
        c += p.beta_s * abs(s);
    }
    Ok(c)
}

/// Prices faced in one scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prices {
    pub c_q: Vec<f64>,
    pub c_nm: Vec<Vec<f64>>,
}

/// Grid and peer-to-peer purchase cost (¢).
pub fn cost_trading(
    p: &ProsumerParams,
    p_mt: &[f64],
    q_row: &[f64],
    p_nm: &[Vec<f64>],
    prices: &Prices,
) -> Result<f64, ModelError> {
    let h = p.horizon;
    let ok = p_mt.len() == h
        && q_row.len() == h
        && prices.c_q.len() == h
        && p_nm.len() == prices.c_nm.len()
        && p_nm.iter().chain(&prices.c_nm).all(|r| r.len() == h);
    if !ok {
        return Err(ModelError::Dimension("trade or price vectors do not match the horizon".into()));
    }
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let p2p: f64 = p_nm
        .iter()
        .zip(&prices.c_nm)
        .map(|(z, c)| dot(c, z) + p.trade_penalty * dot(z, z))
        .sum();
    Ok(p.dt * (dot(&p.c_p_mt, p_mt) + dot(&prices.c_q, q_row) + p2p))
}

/// Flexibility plus trading cost with real-time trades taken from `q_row`.
pub fn cost_total(
    p: &ProsumerParams,
    z: &DecisionVector,
    q_row: &[f64],
    prices: &Prices,
) -> Result<f64, ModelError> {
    Ok(cost_flexibility(p, &z.p_b, &z.s)? + cost_trading(p, &z.p_mt, q_row, &z.p_nm, prices)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub label: Label,
    pub time: Option<usize>,
    pub scenario: Option<usize>,
    pub residual: f64,
}

pub fn validate_decision(p: &ProsumerParams, z: &DecisionVector, tol: f64) -> Result<Vec<Violation>, ModelError> {
    let loads = vec![LoadProfile::nominal(p); z.q_mt.len().max(1)];
    validate_decision_with(p, z, &loads, tol)
}

/// Lists every row or bound of the constraint system that `z` violates by
/// more than `tol`.
pub fn validate_decision_with(
    p: &ProsumerParams,
    z: &DecisionVector,
    loads: &[LoadProfile],
    tol: f64,
) -> Result<Vec<Violation>, ModelError> {
    z.check_dims(p)?;
    if z.q_mt.len() != loads.len() {
        return Err(ModelError::Dimension(format!(
            "{} recourse rows but {} scenario profiles",
            z.q_mt.len(),
            loads.len()
        )));
    }
    let sys = build_constraints_with(p, loads)?;
    let x = z.to_flat();
    let mut out = Vec::new();
    let mut push = |tag: &RowTag, residual: f64| {
        if !(residual <= tol) {
            out.push(Violation { label: tag.label, time: tag.time, scenario: tag.scenario, residual });
        }
    };
    for (row, tag) in sys.eq.iter().zip(&sys.eq_tags) {
        push(tag, (row.eval(&x) - row.rhs).abs());
    }
    for (row, tag) in sys.ineq.iter().zip(&sys.ineq_tags) {
        push(tag, (row.eval(&x) - row.rhs).max(0.0));
    }
    for (j, tag) in sys.bound_tags.iter().enumerate() {
        push(tag, (sys.lower[j] - x[j]).max(x[j] - sys.upper[j]).max(0.0));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn tiny(h: usize) -> ProsumerParams {
        let mut p = ProsumerParams::table_one(0);
        p.horizon = h;
        p.p_s_ref = vec![0.0; h];
        p.c_s = 0.0;
        p.c_p_mt = vec![5.0; h];
        p.p_g = vec![0.0; h];
        p.p_l = vec![0.0; h];
        p
    }

    #[test]
    fn table_one_row_counts() {
        let p = ProsumerParams::table_one(0);
        let sys = build_constraints(&p, 3).unwrap();
        assert_eq!(sys.count(Label::Balance), 72);
        assert_eq!(sys.count(Label::BessDyn), 24);
        assert_eq!(sys.count(Label::SlEnergy), 1);
        assert_eq!(sys.count(Label::ReciprocityPlaceholder), 0);
    }

    #[test]
    fn scenario_copies_differ_only_in_recourse_column() {
        let mut p = ProsumerParams::table_one(0);
        p.neighbors = vec![1, 2];
        let sys = build_constraints(&p, 2).unwrap();
        let lay = sys.layout;
        let rows: Vec<_> = sys.eq.iter().zip(&sys.eq_tags).filter(|(_, t)| t.label == Label::Balance).collect();
        for h in 0..p.horizon {
            let a = rows[h].0;
            let b = rows[p.horizon + h].0;
            let strip = |r: &SparseRow, k: usize| -> Vec<(usize, f64)> {
                r.terms.iter().copied().filter(|&(j, _)| j != lay.q(k, h)).collect()
            };
            assert_eq!(strip(a, 0), strip(b, 1));
            assert_eq!(a.rhs, b.rhs);
        }
    }

    #[test]
    fn degenerate_box_pins_everything_to_zero() {
        let mut p = tiny(1);
        p.p_b_max = 0.0;
        p.p_s_max = 0.0;
        p.p_e_max = 0.0;
        p.p_mt_bounds = (0.0, 0.0);
        p.q_mt_bounds = (0.0, 0.0);
        p.e_min = 0.0;
        p.e_max = 0.0;
        p.e_init = 0.0;
        let sys = build_constraints(&p, 1).unwrap();
        for j in 0..sys.n_vars() {
            let s_free = j == sys.layout.s(1);
            if !s_free {
                assert_eq!((sys.lower[j], sys.upper[j]), (0.0, 0.0), "var {j}");
            }
        }
        // s[1] is pinned by the shift recursion with p_s = p_s_ref = 0
        let z = DecisionVector::zeros(1, 0, 1);
        assert!(validate_decision(&p, &z, 1e-12).unwrap().is_empty());
        let mut moved = z.clone();
        moved.s[1] = 0.5;
        assert!(!validate_decision(&p, &moved, 1e-12).unwrap().is_empty());
    }

    #[test]
    fn soc_recursion_arithmetic() {
        let mut p = tiny(2);
        p.e_init = 10.0;
        let mut z = DecisionVector::zeros(2, 0, 1);
        z.p_b = vec![5.0, -5.0];
        z.e = vec![10.0, 14.5, 10.0];
        z.p_mt = vec![5.0, -5.0];
        let v = validate_decision(&p, &z, 1e-12).unwrap();
        assert!(v.is_empty(), "{v:?}");
        z.e[2] = 10.5;
        let v = validate_decision(&p, &z, 1e-12).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].label, Label::BessDyn);
    }

    #[test]
    fn unreachable_shift_energy_is_named() {
        let mut p = ProsumerParams::table_one(0);
        p.c_s = 24.0 * 20.0 + 1.0;
        match build_constraints(&p, 1) {
            Err(ModelError::Infeasible { label, .. }) => assert_eq!(label, Label::SlEnergy),
            other => panic!("expected infeasibility, got {other:?}"),
        }
    }

    #[test]
    fn flexibility_costs() {
        let mut p = tiny(2);
        p.alpha_b = 0.1;
        p.alpha_s = 0.0;
        assert_abs_diff_eq!(cost_flexibility(&p, &[3.0, -4.0], &[0.0; 3]).unwrap(), 2.5, epsilon = 1e-12);
        assert_eq!(cost_flexibility(&p, &[0.0; 2], &[0.0; 3]).unwrap(), 0.0);
        let t = ProsumerParams::table_one(0);
        assert_abs_diff_eq!(cost_flexibility(&t, &[20.0; 24], &[0.0; 25]).unwrap(), 960.0, epsilon = 1e-9);
        assert!(cost_flexibility(&t, &[0.0; 3], &[0.0; 25]).is_err());
    }

    #[test]
    fn linear_terms_only_when_configured() {
        let mut p = tiny(1);
        p.alpha_b = 0.0;
        p.alpha_s = 0.0;
        assert_eq!(cost_flexibility(&p, &[-2.0], &[0.0, 1.0]).unwrap(), 0.0);
        p.beta_b = 1.0;
        p.beta_s = 0.5;
        assert_abs_diff_eq!(cost_flexibility(&p, &[-2.0], &[0.0, 1.0]).unwrap(), 2.5);
    }

    #[test]
    fn trading_costs() {
        let mut p = tiny(1);
        let none = Prices { c_q: vec![0.0], c_nm: vec![] };
        assert_eq!(cost_trading(&p, &[0.0], &[0.0], &[], &none).unwrap(), 0.0);
        assert_eq!(cost_trading(&p, &[1.0], &[0.0], &[], &none).unwrap(), 5.0);
        p.c_p_mt = vec![3.0];
        let pr = Prices { c_q: vec![9.0], c_nm: vec![vec![6.0]] };
        assert_eq!(cost_trading(&p, &[2.0], &[1.0], &[vec![-1.0]], &pr).unwrap(), 9.0);
        assert!(cost_trading(&p, &[2.0, 1.0], &[1.0], &[], &none).is_err());
    }

    #[test]
    fn soc_and_energy_violations_are_labeled() {
        let mut p = ProsumerParams::table_one(0);
        p.p_l = vec![6.25; 24];
        p.e_init = 195.0;
        let mut z = DecisionVector::zeros(24, 0, 1);
        z.e = vec![p.e_init; 25];
        z.p_s = p.p_s_ref.clone();
        z.p_mt = vec![12.5; 24];
        assert!(validate_decision(&p, &z, 1e-9).unwrap().is_empty());

        // lift e[5] above e_max by charging at h=4 and discharging at h=5
        let mut hi = z.clone();
        let lift = p.e_max + 1.0 - p.e_init;
        hi.p_b[4] = lift / p.eta;
        hi.p_b[5] = -lift / p.eta;
        hi.p_mt[4] += hi.p_b[4];
        hi.p_mt[5] += hi.p_b[5];
        hi.e[5] = p.e_max + 1.0;
        let v = validate_decision(&p, &hi, 1e-9).unwrap();
        assert_eq!(v.len(), 1, "{v:?}");
        assert_eq!((v[0].label, v[0].time), (Label::BessSoc, Some(5)));
        assert_abs_diff_eq!(v[0].residual, 1.0, epsilon = 1e-9);

        let mut short = z.clone();
        short.p_s[0] -= 2.0;
        short.p_mt[0] -= 2.0;
        short.s = vec![-2.0; 25];
        short.s[0] = 0.0;
        let v = validate_decision(&p, &short, 1e-9).unwrap();
        assert_eq!(v.len(), 1, "{v:?}");
        assert_eq!(v[0].label, Label::SlEnergy);
        assert_abs_diff_eq!(v[0].residual, 2.0, epsilon = 1e-9);
    }

    #[test]
    fn surplus_mode_allows_curtailment() {
        let mut p = tiny(1);
        p.balance = BalanceMode::Surplus;
        p.p_g = vec![3.0];
        let mut z = DecisionVector::zeros(1, 0, 1);
        z.e = vec![p.e_init; 2];
        assert!(validate_decision(&p, &z, 1e-12).unwrap().is_empty());
        p.balance = BalanceMode::Equality;
        let v = validate_decision(&p, &z, 1e-12).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].label, Label::Balance);
    }

    #[test]
    fn params_round_trip_through_json() {
        let mut p = ProsumerParams::table_one(3);
        p.neighbors = vec![1, 4];
        let text = serde_json::to_string(&p).unwrap();
        let back: ProsumerParams = serde_json::from_str(&text).unwrap();
        assert_eq!(p, back);
        assert!(serde_json::from_str::<ProsumerParams>(&text.replace("\"eta\"", "\"etta\"")).is_err());
    }

    #[test]
    fn flat_round_trip() {
        let lay = Layout::new(3, 2, 2);
        let x: Vec<f64> = (0..lay.n_vars()).map(|i| i as f64).collect();
        let z = DecisionVector::from_flat(&lay, &x);
        assert_eq!(z.to_flat(), x);
        assert_eq!(z.p_nm[1][2] as usize, lay.p_nm(1, 2));
        assert_eq!(z.q_mt[1][0] as usize, lay.q(1, 0));
    }
}
