//! Convex quadratic programs and the interior-point backend.
//!
//! Problems are stated as
//!
//! ```text
//!   minimize    ½ xᵀQx + cᵀx + offset
//!   subject to  A_eq x  = b_eq        (duals y, free)
//!               A_in x ≤ b_in         (duals μ ≥ 0)
//!               l ≤ x ≤ u             (duals z_lo, z_hi ≥ 0)
//! ```
//!
//! Equality duals follow the shadow-price convention, so the stationarity
//! condition reads `Qx + c − A_eqᵀy + A_inᵀμ − z_lo + z_hi = 0` and `y`
//! equals the derivative of the optimal value with respect to `b_eq`.

use std::collections::BTreeMap;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSolver, IPSolver, NonnegativeConeT, SolverStatus, SupportedConeT,
    ZeroConeT,
};
use serde::{Deserialize, Serialize};

use super::SolverError;

/// Feasibility, stationarity and complementarity tolerance for certified optima.
pub const KKT_TOL: f64 = 1e-6;

/// One sparse linear row `Σ coeff·x[var] (= or ≤) rhs`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseRow {
    pub terms: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl SparseRow {
    pub fn new(terms: Vec<(usize, f64)>, rhs: f64) -> Self {
        Self { terms, rhs }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(j, a)| a * x[j]).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QpProblem {
    pub n_vars: usize,
    /// Entries of the symmetric matrix Q given once per unordered pair
    /// (`i <= j`); repeated pairs are summed.
    pub quad: Vec<(usize, usize, f64)>,
    pub linear: Vec<f64>,
    pub offset: f64,
    pub eq: Vec<SparseRow>,
    pub ineq: Vec<SparseRow>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolveStats {
    pub iterations: usize,
    pub nodes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub eq_duals: Vec<f64>,
    pub ineq_duals: Vec<f64>,
    pub lower_duals: Vec<f64>,
    pub upper_duals: Vec<f64>,
    pub stats: SolveStats,
}

impl Solution {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    pub(super) fn empty(status: SolveStatus, p: &QpProblem) -> Self {
        Self {
            status,
            x: vec![0.0; p.n_vars],
            objective: f64::NAN,
            eq_duals: vec![0.0; p.eq.len()],
            ineq_duals: vec![0.0; p.ineq.len()],
            lower_duals: vec![0.0; p.n_vars],
            upper_duals: vec![0.0; p.n_vars],
            stats: SolveStats::default(),
        }
    }
}

/// Largest violations of the KKT conditions at a primal-dual point.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct KktResiduals {
    pub primal: f64,
    pub stationarity: f64,
    pub complementarity: f64,
    pub dual_sign: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.primal
            .max(self.stationarity)
            .max(self.complementarity)
            .max(self.dual_sign)
    }
}

impl QpProblem {
    /// An unconstrained problem with zero objective over `n` free variables.
    pub fn new(n: usize) -> Self {
        Self {
            n_vars: n,
            quad: Vec::new(),
            linear: vec![0.0; n],
            offset: 0.0,
            eq: Vec::new(),
            ineq: Vec::new(),
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    /// Appends a free variable and returns its index.
    pub fn add_var(&mut self, lower: f64, upper: f64) -> usize {
        self.n_vars += 1;
        self.linear.push(0.0);
        self.lower.push(lower);
        self.upper.push(upper);
        self.n_vars - 1
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        let n = self.n_vars;
        if self.linear.len() != n || self.lower.len() != n || self.upper.len() != n {
            return Err(SolverError::Dimension(format!(
                "n_vars={n} but linear={}, lower={}, upper={}",
                self.linear.len(),
                self.lower.len(),
                self.upper.len()
            )));
        }
        for &(i, j, v) in &self.quad {
            if i >= n || j >= n || i > j {
                return Err(SolverError::Dimension(format!(
                    "quadratic entry ({i},{j}) must satisfy i <= j < {n}"
                )));
            }
            if !v.is_finite() {
                return Err(SolverError::NonFinite("quadratic term".into()));
            }
        }
        for (kind, rows) in [("equality", &self.eq), ("inequality", &self.ineq)] {
            for (r, row) in rows.iter().enumerate() {
                if !row.rhs.is_finite() {
                    return Err(SolverError::NonFinite(format!("{kind} row {r} rhs")));
                }
                for &(j, a) in &row.terms {
                    if j >= n {
                        return Err(SolverError::Dimension(format!(
                            "{kind} row {r} references variable {j} >= {n}"
                        )));
                    }
                    if !a.is_finite() {
                        return Err(SolverError::NonFinite(format!("{kind} row {r}")));
                    }
                }
            }
        }
        if self.linear.iter().any(|v| !v.is_finite()) || !self.offset.is_finite() {
            return Err(SolverError::NonFinite("linear term".into()));
        }
        if self.lower.iter().any(|v| v.is_nan() || *v == f64::INFINITY)
            || self.upper.iter().any(|v| v.is_nan() || *v == f64::NEG_INFINITY)
        {
            return Err(SolverError::NonFinite("variable bounds".into()));
        }
        self.check_psd()
    }

    fn quad_map(&self) -> BTreeMap<(usize, usize), f64> {
        let mut m = BTreeMap::new();
        for &(i, j, v) in &self.quad {
            *m.entry((i, j)).or_insert(0.0) += v;
        }
        m
    }

    fn check_psd(&self) -> Result<(), SolverError> {
        let q = self.quad_map();
        let tol = 1e-9 * q.values().fold(1.0_f64, |a, v| a.max(v.abs()));
        if q.keys().all(|(i, j)| i == j) {
            if let Some(((i, _), v)) = q.iter().find(|(_, v)| **v < -tol) {
                return Err(SolverError::NotConvex(format!(
                    "diagonal entry {i} is {v}"
                )));
            }
            return Ok(());
        }
        // Only the variables touched by Q matter for the eigenvalue test.
        let mut touched: Vec<usize> = q.keys().flat_map(|&(i, j)| [i, j]).collect();
        touched.sort_unstable();
        touched.dedup();
        let pos: BTreeMap<usize, usize> =
            touched.iter().enumerate().map(|(k, &v)| (v, k)).collect();
        let k = touched.len();
        let mut dense = nalgebra::DMatrix::<f64>::zeros(k, k);
        for (&(i, j), &v) in &q {
            let (a, b) = (pos[&i], pos[&j]);
            dense[(a, b)] = v;
            dense[(b, a)] = v;
        }
        let min_eig = dense
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .fold(f64::INFINITY, |a, &v| a.min(v));
        if min_eig < -tol {
            return Err(SolverError::NotConvex(format!(
                "smallest eigenvalue of Q is {min_eig}"
            )));
        }
        Ok(())
    }

    /// `Qx` as a dense vector.
    pub fn quad_times(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_vars];
        for &(i, j, v) in &self.quad {
            out[i] += v * x[j];
            if i != j {
                out[j] += v * x[i];
            }
        }
        out
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let qx = self.quad_times(x);
        let quad: f64 = qx.iter().zip(x).map(|(a, b)| a * b).sum();
        let lin: f64 = self.linear.iter().zip(x).map(|(a, b)| a * b).sum();
        0.5 * quad + lin + self.offset
    }

    /// Largest violation of any constraint or bound.
    pub fn primal_violation(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0_f64;
        for row in &self.eq {
            worst = worst.max((row.eval(x) - row.rhs).abs());
        }
        for row in &self.ineq {
            worst = worst.max(row.eval(x) - row.rhs);
        }
        for j in 0..self.n_vars {
            worst = worst.max(self.lower[j] - x[j]).max(x[j] - self.upper[j]);
        }
        worst
    }

    /// Stationarity vector `Qx + c − A_eqᵀy + A_inᵀμ − z_lo + z_hi`.
    pub fn stationarity(&self, s: &Solution) -> Vec<f64> {
        let mut g = self.quad_times(&s.x);
        for (gj, cj) in g.iter_mut().zip(&self.linear) {
            *gj += cj;
        }
        for (row, &y) in self.eq.iter().zip(&s.eq_duals) {
            for &(j, a) in &row.terms {
                g[j] -= a * y;
            }
        }
        for (row, &mu) in self.ineq.iter().zip(&s.ineq_duals) {
            for &(j, a) in &row.terms {
                g[j] += a * mu;
            }
        }
        for j in 0..self.n_vars {
            g[j] += s.upper_duals[j] - s.lower_duals[j];
        }
        g
    }

    pub fn kkt_residuals(&self, s: &Solution) -> KktResiduals {
        let stationarity = self
            .stationarity(s)
            .iter()
            .fold(0.0_f64, |a, v| a.max(v.abs()));
        let mut complementarity = 0.0_f64;
        let mut dual_sign = 0.0_f64;
        for (row, &mu) in self.ineq.iter().zip(&s.ineq_duals) {
            complementarity = complementarity.max((mu * (row.rhs - row.eval(&s.x))).abs());
            dual_sign = dual_sign.max(-mu);
        }
        for j in 0..self.n_vars {
            let (zl, zu) = (s.lower_duals[j], s.upper_duals[j]);
            if self.lower[j].is_finite() {
                complementarity = complementarity.max((zl * (s.x[j] - self.lower[j])).abs());
            } else {
                dual_sign = dual_sign.max(zl.abs());
            }
            if self.upper[j].is_finite() {
                complementarity = complementarity.max((zu * (self.upper[j] - s.x[j])).abs());
            } else {
                dual_sign = dual_sign.max(zu.abs());
            }
            dual_sign = dual_sign.max(-zl).max(-zu);
        }
        KktResiduals {
            primal: self.primal_violation(&s.x),
            stationarity,
            complementarity,
            dual_sign,
        }
    }
}

fn settings() -> DefaultSettings<f64> {
    DefaultSettings {
        verbose: false,
        max_iter: 200,
        tol_gap_abs: 1e-10,
        tol_gap_rel: 1e-10,
        tol_feas: 1e-10,
        tol_ktratio: 1e-8,
        presolve_enable: false,
        ..DefaultSettings::default()
    }
}

enum RowKind {
    Eq(usize),
    Fixed(usize),
    Ineq(usize),
    Upper(usize),
    Lower(usize),
}

/// Solves a convex QP and returns a KKT-certified primal-dual pair.
pub fn solve_qp(p: &QpProblem) -> Result<Solution, SolverError> {
    p.validate()?;
    let n = p.n_vars;
    if (0..n).any(|j| p.lower[j] > p.upper[j]) {
        return Ok(Solution::empty(SolveStatus::Infeasible, p));
    }

    // Upper triangle of Q in CSC form.
    let qmap = p.quad_map();
    let (mut pi, mut pj, mut pv) = (Vec::new(), Vec::new(), Vec::new());
    for (&(i, j), &v) in &qmap {
        if v != 0.0 {
            pi.push(i);
            pj.push(j);
            pv.push(v);
        }
    }
    let pmat = CscMatrix::new_from_triplets(n, n, pi, pj, pv);

    let (mut ai, mut aj, mut av, mut b) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut kinds = Vec::new();
    let n_zero = p.eq.len() + (0..n).filter(|&j| p.lower[j] == p.upper[j]).count();
    let mut push_row = |terms: &[(usize, f64)], rhs: f64, kind: RowKind| {
        let r = b.len();
        for &(j, a) in terms {
            if a != 0.0 {
                ai.push(r);
                aj.push(j);
                av.push(a);
            }
        }
        b.push(rhs);
        kinds.push(kind);
    };
    for (r, row) in p.eq.iter().enumerate() {
        push_row(&row.terms, row.rhs, RowKind::Eq(r));
    }
    for j in 0..n {
        if p.lower[j] == p.upper[j] {
            push_row(&[(j, 1.0)], p.lower[j], RowKind::Fixed(j));
        }
    }
    for (r, row) in p.ineq.iter().enumerate() {
        push_row(&row.terms, row.rhs, RowKind::Ineq(r));
    }
    for j in 0..n {
        if p.lower[j] == p.upper[j] {
            continue;
        }
        if p.upper[j].is_finite() {
            push_row(&[(j, 1.0)], p.upper[j], RowKind::Upper(j));
        }
        if p.lower[j].is_finite() {
            push_row(&[(j, -1.0)], -p.lower[j], RowKind::Lower(j));
        }
    }
    let m = b.len();
    let amat = CscMatrix::new_from_triplets(m, n, ai, aj, av);
    let mut cones: Vec<SupportedConeT<f64>> = Vec::new();
    if n_zero > 0 {
        cones.push(ZeroConeT(n_zero));
    }
    if m > n_zero {
        cones.push(NonnegativeConeT(m - n_zero));
    }

    let mut solver = DefaultSolver::new(&pmat, &p.linear, &amat, &b, &cones, settings())
        .map_err(|e| SolverError::Backend(e.to_string()))?;
    solver.solve();
    let raw = &solver.solution;
    let iterations = raw.iterations as usize;

    let status = match raw.status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => SolveStatus::Optimal,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            SolveStatus::Infeasible
        }
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
            SolveStatus::Unbounded
        }
        _ => SolveStatus::IterationLimit,
    };
    if status != SolveStatus::Optimal {
        let mut s = Solution::empty(status, p);
        s.stats.iterations = iterations;
        if status == SolveStatus::IterationLimit {
            s.x.clone_from(&raw.x);
            s.objective = p.objective(&s.x);
        }
        return Ok(s);
    }

    let mut sol = Solution::empty(SolveStatus::Optimal, p);
    sol.x.clone_from(&raw.x);
    sol.stats.iterations = iterations;
    for (kind, &z) in kinds.iter().zip(&raw.z) {
        match *kind {
            RowKind::Eq(r) => sol.eq_duals[r] = -z,
            RowKind::Fixed(j) => {
                if z >= 0.0 {
                    sol.upper_duals[j] = z;
                } else {
                    sol.lower_duals[j] = -z;
                }
            }
            RowKind::Ineq(r) => sol.ineq_duals[r] = z.max(0.0),
            RowKind::Upper(j) => sol.upper_duals[j] = z.max(0.0),
            RowKind::Lower(j) => sol.lower_duals[j] = z.max(0.0),
        }
    }
    Ok(certify(p, sol))
}

/// Clips interior iterates to the bounds, polishes small problems on their active set, and
/// downgrades the status if the KKT conditions do not hold to tolerance.
pub(super) fn certify(p: &QpProblem, mut sol: Solution) -> Solution {
    let n = p.n_vars;
    for j in 0..n {
        sol.x[j] = sol.x[j].clamp(p.lower[j], p.upper[j]);
    }
    sol.objective = p.objective(&sol.x);
    if n + p.eq.len() <= POLISH_MAX_DIM {
        if let Some(polished) = polish(p, &sol) {
            sol = polished;
        }
    }

    let res = p.kkt_residuals(&sol);
    let scale = 1.0
        + p.linear.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
        + sol.x.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let finite = sol
        .x
        .iter()
        .chain(&sol.eq_duals)
        .chain(&sol.ineq_duals)
        .chain(&sol.lower_duals)
        .chain(&sol.upper_duals)
        .all(|v| v.is_finite())
        && sol.objective.is_finite();
    if !finite || !(res.max() <= KKT_TOL * scale) {
        sol.status = SolveStatus::IterationLimit;
    }
    sol
}

/// Problems up to this many variables plus equality rows get an
/// active-set polish after the interior-point solve.
const POLISH_MAX_DIM: usize = 200;

enum Active {
    Eq(usize),
    Ineq(usize),
    Upper(usize),
    Lower(usize),
}

/// Re-solves the KKT system on the active set guessed from the interior
/// point, returning an exact vertex-quality solution when the guess checks
/// out.
fn polish(p: &QpProblem, ipm: &Solution) -> Option<Solution> {
    use nalgebra::{DMatrix, DVector};

    let n = p.n_vars;
    let x = &ipm.x;
    let mut active = Vec::new();
    for r in 0..p.eq.len() {
        active.push(Active::Eq(r));
    }
    for (r, row) in p.ineq.iter().enumerate() {
        if ipm.ineq_duals[r] > row.rhs - row.eval(x) {
            active.push(Active::Ineq(r));
        }
    }
    for j in 0..n {
        if p.lower[j] == p.upper[j] {
            active.push(Active::Upper(j));
            continue;
        }
        if p.upper[j].is_finite() && ipm.upper_duals[j] > p.upper[j] - x[j] {
            active.push(Active::Upper(j));
        }
        if p.lower[j].is_finite() && ipm.lower_duals[j] > x[j] - p.lower[j] {
            active.push(Active::Lower(j));
        }
    }
    let m = active.len();
    if n + m > 2 * POLISH_MAX_DIM {
        return None;
    }

    // [Q  Aᵀ] [x]   [-c]
    // [A  0 ] [ν] = [ b]   with rows written as a·x ≤/= b
    let dim = n + m;
    let mut k = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = DVector::<f64>::zeros(dim);
    for &(i, j, v) in &p.quad {
        k[(i, j)] += v;
        if i != j {
            k[(j, i)] += v;
        }
    }
    for j in 0..n {
        rhs[j] = -p.linear[j];
    }
    for (a, act) in active.iter().enumerate() {
        let r = n + a;
        let (terms, b): (Vec<(usize, f64)>, f64) = match *act {
            Active::Eq(i) => (p.eq[i].terms.clone(), p.eq[i].rhs),
            Active::Ineq(i) => (p.ineq[i].terms.clone(), p.ineq[i].rhs),
            Active::Upper(j) => (vec![(j, 1.0)], p.upper[j]),
            Active::Lower(j) => (vec![(j, -1.0)], -p.lower[j]),
        };
        for (j, c) in terms {
            k[(r, j)] += c;
            k[(j, r)] += c;
        }
        rhs[r] = b;
    }
    let sol = k.lu().solve(&rhs)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }

    let mut out = ipm.clone();
    out.x = sol.rows(0, n).iter().copied().collect();
    out.eq_duals.iter_mut().for_each(|v| *v = 0.0);
    out.ineq_duals.iter_mut().for_each(|v| *v = 0.0);
    out.lower_duals.iter_mut().for_each(|v| *v = 0.0);
    out.upper_duals.iter_mut().for_each(|v| *v = 0.0);
    let dual_scale = 1.0 + ipm.x.iter().chain(&p.linear).fold(0.0_f64, |a, v| a.max(v.abs()));
    for (a, act) in active.iter().enumerate() {
        let nu = sol[n + a];
        match *act {
            Active::Eq(i) => out.eq_duals[i] = -nu,
            Active::Upper(j) if p.lower[j] == p.upper[j] => {
                if nu >= 0.0 {
                    out.upper_duals[j] = nu;
                } else {
                    out.lower_duals[j] = -nu;
                }
            }
            _ if nu < -1e-9 * dual_scale => return None,
            Active::Ineq(i) => out.ineq_duals[i] = nu.max(0.0),
            Active::Upper(j) => out.upper_duals[j] = nu.max(0.0),
            Active::Lower(j) => out.lower_duals[j] = nu.max(0.0),
        }
    }
    if p.primal_violation(&out.x) > 1e-9 * dual_scale {
        return None;
    }
    for j in 0..n {
        out.x[j] = out.x[j].clamp(p.lower[j], p.upper[j]);
    }
    out.objective = p.objective(&out.x);
    // never trade a certified point for a worse one
    if p.kkt_residuals(&out).max() > p.kkt_residuals(ipm).max().max(1e-9) {
        return None;
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn one_var(q: f64, c: f64, lo: f64, hi: f64) -> QpProblem {
        let mut p = QpProblem::new(1);
        p.quad.push((0, 0, q));
        p.linear[0] = c;
        p.lower[0] = lo;
        p.upper[0] = hi;
        p
    }

    #[test]
    fn square_above_one() {
        // min z² s.t. z ≥ 1, written as an explicit inequality row
        let mut p = one_var(2.0, 0.0, f64::NEG_INFINITY, f64::INFINITY);
        p.ineq.push(SparseRow::new(vec![(0, -1.0)], -1.0));
        let s = solve_qp(&p).unwrap();
        assert!(s.is_optimal());
        assert_abs_diff_eq!(s.x[0], 1.0, epsilon = 1e-7);
        assert_abs_diff_eq!(s.ineq_duals[0], 2.0, epsilon = 1e-6);

        // same problem with the bound on the variable instead
        let p = one_var(2.0, 0.0, 1.0, f64::INFINITY);
        let s = solve_qp(&p).unwrap();
        assert_abs_diff_eq!(s.x[0], 1.0, epsilon = 1e-7);
        assert_abs_diff_eq!(s.lower_duals[0], 2.0, epsilon = 1e-6);
    }

    #[test]
    fn clamped_minimum() {
        // (z−2)² = z² − 4z + 4
        let mut p = one_var(2.0, -4.0, 0.0, 1.0);
        p.offset = 4.0;
        let s = solve_qp(&p).unwrap();
        assert_abs_diff_eq!(s.x[0], 1.0, epsilon = 1e-7);
        assert_abs_diff_eq!(s.objective, 1.0, epsilon = 1e-7);
        assert_abs_diff_eq!(s.upper_duals[0], 2.0, epsilon = 1e-6);
    }

    #[test]
    fn degenerate_face_lp() {
        let mut p = QpProblem::new(2);
        p.linear = vec![1.0, 1.0];
        p.lower = vec![0.0, 0.0];
        p.eq.push(SparseRow::new(vec![(0, 1.0), (1, 1.0)], 1.0));
        let s = solve_qp(&p).unwrap();
        assert!(s.is_optimal());
        assert_abs_diff_eq!(s.objective, 1.0, epsilon = 1e-7);
        assert_abs_diff_eq!(s.eq_duals[0], 1.0, epsilon = 1e-6);
        assert!(p.kkt_residuals(&s).max() <= KKT_TOL);
    }

    #[test]
    fn fixed_variable_dual_sign() {
        // min (x−3)² with x fixed at 1: gradient −4 pushes against the upper side
        let mut p = one_var(2.0, -6.0, 1.0, 1.0);
        p.offset = 9.0;
        let s = solve_qp(&p).unwrap();
        assert_abs_diff_eq!(s.x[0], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(s.upper_duals[0], 4.0, epsilon = 1e-6);
        assert_eq!(s.lower_duals[0], 0.0);
    }

    #[test]
    fn infeasible_and_unbounded_reported() {
        let mut p = one_var(0.0, 1.0, 0.0, 5.0);
        p.ineq.push(SparseRow::new(vec![(0, 1.0)], -1.0));
        assert_eq!(solve_qp(&p).unwrap().status, SolveStatus::Infeasible);

        let p = one_var(0.0, 1.0, f64::NEG_INFINITY, 0.0);
        assert_eq!(solve_qp(&p).unwrap().status, SolveStatus::Unbounded);

        let p = one_var(0.0, 1.0, 2.0, 1.0);
        assert_eq!(solve_qp(&p).unwrap().status, SolveStatus::Infeasible);
    }

    #[test]
    fn rejects_nonconvex_and_bad_dimensions() {
        let p = one_var(-1.0, 0.0, 0.0, 1.0);
        assert!(matches!(solve_qp(&p), Err(SolverError::NotConvex(_))));

        let mut p = QpProblem::new(2);
        p.quad = vec![(0, 0, 1.0), (0, 1, 2.0), (1, 1, 1.0)];
        assert!(matches!(solve_qp(&p), Err(SolverError::NotConvex(_))));

        let mut p = QpProblem::new(1);
        p.eq.push(SparseRow::new(vec![(3, 1.0)], 0.0));
        assert!(matches!(solve_qp(&p), Err(SolverError::Dimension(_))));
    }

    #[test]
    fn dense_psd_coupling_accepted() {
        // min x² + xy + y² − x, optimum at (2/3, −1/3)
        let mut p = QpProblem::new(2);
        p.quad = vec![(0, 0, 2.0), (0, 1, 1.0), (1, 1, 2.0)];
        p.linear = vec![-1.0, 0.0];
        let s = solve_qp(&p).unwrap();
        assert_abs_diff_eq!(s.x[0], 2.0 / 3.0, epsilon = 1e-7);
        assert_abs_diff_eq!(s.x[1], -1.0 / 3.0, epsilon = 1e-7);
    }
}
