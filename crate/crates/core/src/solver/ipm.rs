//! Native primal-dual interior point for sparse convex QPs.
//!
//! Mehrotra predictor-corrector on the reduced Newton system
//! `[Q + GᵀWG, −Aᵀ; −A, 0]`, factored as a quasi-definite envelope LDLᵀ
//! under a reverse Cuthill-McKee ordering. Bounds and inequality rows are
//! folded into one block `Gx + σ = h`; fixed variables become equality rows.
//! The symbolic analysis is cheap and redone per call, so it suits the many
//! small structured programs of the decision layer. Results go through the
//! same certification as the reference backend, and callers fall back to it
//! whenever the native path does not certify.

use std::collections::VecDeque;

use super::qp::{certify, solve_qp, QpProblem, Solution, SolveStatus};
use super::SolverError;

const MAX_ITER: usize = 80;
const FEAS_TOL: f64 = 1e-10;
const GAP_TOL: f64 = 1e-11;
const REG_PRIMAL: f64 = 1e-10;
const REG_DUAL: f64 = 1e-10;
const PIVOT_FLOOR: f64 = 1e-13;
const STEP_FRACTION: f64 = 0.99;
const REFINE_STEPS: usize = 3;

/// Which backend [`solve_qp_with`] uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Backend {
    /// Clarabel only.
    Reference,
    /// The native solver; no fallback.
    Native,
    /// Native first, reference when the native result does not certify.
    #[default]
    Auto,
}

pub fn solve_qp_with(p: &QpProblem, backend: Backend) -> Result<Solution, SolverError> {
    match backend {
        Backend::Reference => solve_qp(p),
        Backend::Native => solve_qp_native(p),
        Backend::Auto => {
            let sol = solve_qp_native(p)?;
            if sol.is_optimal() {
                Ok(sol)
            } else {
                solve_qp(p)
            }
        }
    }
}

/// Origin of a row in the equality block.
#[derive(Clone, Copy)]
enum EqOrigin {
    Row(usize),
    Fixed(usize),
}

/// Origin of a row in the inequality block.
#[derive(Clone, Copy)]
enum GOrigin {
    Row(usize),
    Upper(usize),
    Lower(usize),
}

struct Rows {
    start: Vec<usize>,
    idx: Vec<usize>,
    val: Vec<f64>,
    rhs: Vec<f64>,
}

impl Rows {
    fn new() -> Self {
        Self { start: vec![0], idx: Vec::new(), val: Vec::new(), rhs: Vec::new() }
    }

    fn push(&mut self, terms: impl IntoIterator<Item = (usize, f64)>, rhs: f64) {
        for (j, a) in terms {
            self.idx.push(j);
            self.val.push(a);
        }
        self.start.push(self.idx.len());
        self.rhs.push(rhs);
    }

    fn len(&self) -> usize {
        self.rhs.len()
    }

    fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.start[r], self.start[r + 1]);
        (&self.idx[a..b], &self.val[a..b])
    }

    fn times(&self, x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            let (idx, val) = self.row(r);
            *o = idx.iter().zip(val).map(|(&j, a)| a * x[j]).sum();
        }
    }

    /// `out += s·Rᵀv`.
    fn add_transpose(&self, v: &[f64], out: &mut [f64], s: f64) {
        for (r, &vr) in v.iter().enumerate() {
            if vr == 0.0 {
                continue;
            }
            let vr = s * vr;
            let (idx, val) = self.row(r);
            for (&j, a) in idx.iter().zip(val) {
                out[j] += a * vr;
            }
        }
    }
}

/// Envelope (variable-band) storage of a symmetric matrix's lower triangle
/// in permuted order, factored in place.
struct Envelope {
    first: Vec<usize>,
    start: Vec<usize>,
    vals: Vec<f64>,
    diag: Vec<f64>,
}

impl Envelope {
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(j < i && j >= self.first[i]);
        self.start[i] + j - self.first[i]
    }

    /// In-place LDLᵀ. Pivots of primal nodes are kept positive and of dual
    /// nodes negative, which is what quasi-definiteness guarantees up to
    /// rounding.
    fn factor(&mut self, positive: &[bool]) {
        let n = self.diag.len();
        let mut w = vec![0.0; n];
        for i in 0..n {
            let fi = self.first[i];
            let si = self.start[i];
            for j in fi..i {
                let fj = self.first[j];
                let sj = self.start[j];
                let k0 = fi.max(fj);
                let mut s = self.vals[si + j - fi];
                let wi = &w[k0..j];
                let lj = &self.vals[sj + k0 - fj..sj + j - fj];
                for (a, b) in wi.iter().zip(lj) {
                    s -= a * b;
                }
                w[j] = s;
            }
            let mut d = self.diag[i];
            for j in fi..i {
                let l = w[j] / self.diag[j];
                self.vals[si + j - fi] = l;
                d -= w[j] * l;
            }
            if positive[i] {
                if d < PIVOT_FLOOR {
                    d = PIVOT_FLOOR.max(d.abs());
                }
            } else if d > -PIVOT_FLOOR {
                d = -PIVOT_FLOOR.max(d.abs());
            }
            self.diag[i] = d;
        }
    }

    fn solve(&self, b: &mut [f64]) {
        let n = self.diag.len();
        for i in 0..n {
            let fi = self.first[i];
            let si = self.start[i];
            let row = &self.vals[si..si + i - fi];
            let s: f64 = row.iter().zip(&b[fi..i]).map(|(l, y)| l * y).sum();
            b[i] -= s;
        }
        for i in 0..n {
            b[i] /= self.diag[i];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let si = self.start[i];
            let xi = b[i];
            if xi == 0.0 {
                continue;
            }
            let row = &self.vals[si..si + i - fi];
            for (l, y) in row.iter().zip(&mut b[fi..i]) {
                *y -= l * xi;
            }
        }
    }
}

/// Reverse Cuthill-McKee order of a graph given as adjacency lists.
/// Returns `order[new] = old`.
fn rcm(adj: &[Vec<usize>], deferred: &[bool]) -> Vec<usize> {
    let n = adj.len();
    let deg: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut order = Vec::with_capacity(n);
    let mut seen = deferred.to_vec();
    let bfs_levels = |root: usize, seen: &[bool]| -> (usize, usize) {
        // Returns (last node of the deepest level with least degree, depth).
        let mut dist = vec![usize::MAX; n];
        let mut q = VecDeque::from([root]);
        dist[root] = 0;
        let mut last = root;
        while let Some(u) = q.pop_front() {
            for &v in &adj[u] {
                if !seen[v] && dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    q.push_back(v);
                    if dist[v] > dist[last] || (dist[v] == dist[last] && deg[v] < deg[last]) {
                        last = v;
                    }
                }
            }
        }
        (last, dist[last])
    };
    loop {
        let Some(mut root) = (0..n).filter(|&v| !seen[v]).min_by_key(|&v| deg[v]) else {
            break;
        };
        // Pseudo-peripheral start node.
        let mut depth = 0;
        for _ in 0..4 {
            let (far, d) = bfs_levels(root, &seen);
            if d <= depth {
                break;
            }
            depth = d;
            root = far;
        }
        let begin = order.len();
        seen[root] = true;
        order.push(root);
        let mut head = begin;
        while head < order.len() {
            let u = order[head];
            head += 1;
            let mut nb: Vec<usize> = adj[u].iter().copied().filter(|&v| !seen[v]).collect();
            nb.sort_by_key(|&v| (deg[v], v));
            for v in nb {
                if !seen[v] {
                    seen[v] = true;
                    order.push(v);
                }
            }
        }
    }
    order.reverse();
    order.extend((0..n).filter(|&v| deferred[v]));
    order
}

fn envelope_for(adj: &[Vec<usize>], order: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let n = adj.len();
    let mut pos = vec![0; n];
    for (k, &v) in order.iter().enumerate() {
        pos[v] = k;
    }
    let mut first: Vec<usize> = (0..n).collect();
    for u in 0..n {
        for &v in &adj[u] {
            let (i, j) = (pos[u].max(pos[v]), pos[u].min(pos[v]));
            first[i] = first[i].min(j);
        }
    }
    (pos, first)
}

fn profile(first: &[usize]) -> usize {
    first.iter().enumerate().map(|(i, f)| i - f).sum()
}

/// Symbolic structure of the Newton matrix: permutation, envelope and the
/// storage slots touched by every assembly term.
struct Symbolic {
    pos: Vec<usize>,
    env: Envelope,
    positive: Vec<bool>,
    /// Slots of the Q entries, in input order.
    q_slots: Vec<Slot>,
    /// Per G row, the slots of its coefficient outer product.
    g_start: Vec<usize>,
    g_slots: Vec<(Slot, f64)>,
    /// Per equality-row term, the slot of `−a`.
    e_slots: Vec<Slot>,
}

#[derive(Clone, Copy)]
enum Slot {
    Diag(usize),
    Off(usize),
}

impl Symbolic {
    fn new(n: usize, quad: &[(usize, usize, f64)], g: &Rows, e: &Rows) -> Self {
        let nk = n + e.len();
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); nk];
        let link = |a: usize, b: usize, adj: &mut Vec<Vec<usize>>| {
            if a != b {
                adj[a].push(b);
                adj[b].push(a);
            }
        };
        for &(i, j, _) in quad {
            link(i, j, &mut adj);
        }
        for r in 0..g.len() {
            let (idx, _) = g.row(r);
            for (a, &i) in idx.iter().enumerate() {
                for &j in &idx[..a] {
                    link(i, j, &mut adj);
                }
            }
        }
        for r in 0..e.len() {
            for &j in e.row(r).0 {
                link(n + r, j, &mut adj);
            }
        }
        for a in &mut adj {
            a.sort_unstable();
            a.dedup();
        }

        // Plain RCM, and RCM with high-degree nodes moved last; keep the
        // smaller envelope.
        let plain = rcm(&adj, &vec![false; nk]);
        let (mut pos, mut first) = envelope_for(&adj, &plain);
        let mut degs: Vec<usize> = adj.iter().map(Vec::len).collect();
        degs.sort_unstable();
        let median = degs.get(nk / 2).copied().unwrap_or(0);
        let cut = (3 * median).max(8);
        let deferred: Vec<bool> = adj.iter().map(|a| a.len() > cut).collect();
        if deferred.iter().any(|&d| d) {
            let alt = rcm(&adj, &deferred);
            let (p2, f2) = envelope_for(&adj, &alt);
            if profile(&f2) < profile(&first) {
                pos = p2;
                first = f2;
            }
        }

        let mut start = Vec::with_capacity(nk + 1);
        let mut acc = 0;
        for (i, f) in first.iter().enumerate() {
            start.push(acc);
            acc += i - f;
        }
        let env = Envelope { first, start, vals: vec![0.0; acc], diag: vec![0.0; nk] };
        let mut positive = vec![false; nk];
        for j in 0..n {
            positive[pos[j]] = true;
        }
        let slot = |a: usize, b: usize, env: &Envelope| -> Slot {
            let (i, j) = (pos[a].max(pos[b]), pos[a].min(pos[b]));
            if i == j {
                Slot::Diag(i)
            } else {
                Slot::Off(env.slot(i, j))
            }
        };
        let q_slots = quad.iter().map(|&(i, j, _)| slot(i, j, &env)).collect();
        let mut g_start = vec![0];
        let mut g_slots = Vec::new();
        for r in 0..g.len() {
            let (idx, val) = g.row(r);
            for a in 0..idx.len() {
                for b in 0..=a {
                    // Off-diagonal pairs are stored once with the full
                    // symmetric contribution; duplicate columns in one row
                    // are handled by the same rule.
                    let coef = match (a == b, idx[a] == idx[b]) {
                        (true, _) => val[a] * val[a],
                        (false, true) => 2.0 * val[a] * val[b],
                        (false, false) => val[a] * val[b],
                    };
                    g_slots.push((slot(idx[a], idx[b], &env), coef));
                }
            }
            g_start.push(g_slots.len());
        }
        let mut e_slots = Vec::new();
        for r in 0..e.len() {
            for &j in e.row(r).0 {
                e_slots.push(slot(n + r, j, &env));
            }
        }
        Self { pos, env, positive, q_slots, g_start, g_slots, e_slots }
    }

    fn factor(&mut self) {
        self.env.factor(&self.positive);
    }

    fn add(&mut self, s: Slot, v: f64) {
        match s {
            Slot::Diag(i) => self.env.diag[i] += v,
            Slot::Off(k) => self.env.vals[k] += v,
        }
    }

    fn assemble(&mut self, n: usize, quad: &[(usize, usize, f64)], e: &Rows, w: &[f64]) {
        self.env.vals.iter_mut().for_each(|v| *v = 0.0);
        self.env.diag.iter_mut().for_each(|v| *v = 0.0);
        for (k, &(_, _, v)) in quad.iter().enumerate() {
            self.add(self.q_slots[k], v);
        }
        for (r, &wr) in w.iter().enumerate() {
            for k in self.g_start[r]..self.g_start[r + 1] {
                let (s, c) = self.g_slots[k];
                self.add(s, wr * c);
            }
        }
        for (k, &a) in e.val.iter().enumerate() {
            self.add(self.e_slots[k], -a);
        }
        for j in 0..n {
            self.env.diag[self.pos[j]] += REG_PRIMAL;
        }
        for r in 0..e.len() {
            self.env.diag[self.pos[n + r]] -= REG_DUAL;
        }
    }
}

/// Scratch vectors reused by every linear solve.
struct Scratch {
    perm: Vec<f64>,
    ax: Vec<f64>,
    res: Vec<f64>,
    d: Vec<f64>,
    gv: Vec<f64>,
}

/// Newton direction in all four blocks.
struct Step {
    x: Vec<f64>,
    y: Vec<f64>,
    s: Vec<f64>,
    l: Vec<f64>,
}

impl Step {
    fn new(n: usize, me: usize, mg: usize) -> Self {
        Self { x: vec![0.0; n], y: vec![0.0; me], s: vec![0.0; mg], l: vec![0.0; mg] }
    }
}

struct Kkt<'a> {
    n: usize,
    quad: &'a [(usize, usize, f64)],
    g: &'a Rows,
    e: &'a Rows,
    sym: Symbolic,
    w: Vec<f64>,
    scratch: Scratch,
    rhs: Vec<f64>,
    sol: Vec<f64>,
    t: Vec<f64>,
}

impl Kkt<'_> {
    /// Unregularized product with `[Q + GᵀWG, −Aᵀ; −A, 0]`.
    fn apply(&mut self, v: &[f64]) {
        let n = self.n;
        let (vx, vy) = v.split_at(n);
        let (ox, oy) = self.scratch.ax.split_at_mut(n);
        ox.fill(0.0);
        for &(i, j, q) in self.quad {
            ox[i] += q * vx[j];
            if i != j {
                ox[j] += q * vx[i];
            }
        }
        let gv = &mut self.scratch.gv;
        self.g.times(vx, gv);
        for (a, b) in gv.iter_mut().zip(&self.w) {
            *a *= b;
        }
        self.g.add_transpose(gv, ox, 1.0);
        self.e.add_transpose(vy, ox, -1.0);
        self.e.times(vx, oy);
        oy.iter_mut().for_each(|o| *o = -*o);
    }

    /// `out = K⁻¹ r` through the factored permuted matrix.
    fn back_solve(&mut self, from_res: bool) {
        let pos = &self.sym.pos;
        let src = if from_res { &self.scratch.res } else { &self.rhs };
        let b = &mut self.scratch.perm;
        for (k, &v) in src.iter().enumerate() {
            b[pos[k]] = v;
        }
        self.sym.env.solve(b);
        let dst = if from_res { &mut self.scratch.d } else { &mut self.sol };
        for (k, o) in dst.iter_mut().enumerate() {
            *o = b[pos[k]];
        }
    }

    /// Solves for `self.rhs` into `self.sol`, refining only while the
    /// residual against the unregularized matrix is not negligible.
    fn solve(&mut self) {
        self.back_solve(false);
        let bn = inf_norm(&self.rhs).max(1.0);
        for _ in 0..REFINE_STEPS {
            let x = std::mem::take(&mut self.sol);
            self.apply(&x);
            self.sol = x;
            let mut rn = 0.0_f64;
            for ((r, b), a) in self.scratch.res.iter_mut().zip(&self.rhs).zip(&self.scratch.ax) {
                *r = b - a;
                rn = rn.max(r.abs());
            }
            if rn <= 1e-10 * bn {
                break;
            }
            self.back_solve(true);
            for (a, d) in self.sol.iter_mut().zip(&self.scratch.d) {
                *a += d;
            }
        }
    }

    /// Direction for complementarity residual `r_c`:
    ///   QΔx − AᵀΔy + GᵀΔλ = −r_d,  AΔx = −r_e,
    ///   GΔx + Δσ = −r_g,           ΛΔσ + ΣΔλ = −r_c.
    #[allow(clippy::too_many_arguments)]
    fn direction(&mut self, it: &Iterate, r_d: &[f64], r_e: &[f64], r_g: &[f64], r_c: &[f64], out: &mut Step) {
        let n = self.n;
        let mg = self.t.len();
        for i in 0..mg {
            self.t[i] = (it.lam[i] * r_g[i] - r_c[i]) / it.sig[i];
        }
        let (rx, ry) = self.rhs.split_at_mut(n);
        for (a, b) in rx.iter_mut().zip(r_d) {
            *a = -b;
        }
        self.g.add_transpose(&self.t, rx, -1.0);
        ry.copy_from_slice(r_e);
        self.solve();
        out.x.copy_from_slice(&self.sol[..n]);
        out.y.copy_from_slice(&self.sol[n..]);
        let gdx = &mut self.scratch.gv;
        self.g.times(&out.x, gdx);
        for i in 0..mg {
            out.l[i] = self.t[i] + self.w[i] * gdx[i];
            out.s[i] = -r_g[i] - gdx[i];
        }
    }
}

struct Iterate {
    x: Vec<f64>,
    y: Vec<f64>,
    sig: Vec<f64>,
    lam: Vec<f64>,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Largest `α ≤ 1` keeping `v + α·dv ≥ 0`.
fn max_step(v: &[f64], dv: &[f64]) -> f64 {
    v.iter()
        .zip(dv)
        .filter(|(_, d)| **d < 0.0)
        .fold(1.0_f64, |a, (x, d)| a.min(-x / d))
}

/// Solves with the native interior point only. The status is `Optimal` only
/// when the result passes KKT certification.
pub fn solve_qp_native(p: &QpProblem) -> Result<Solution, SolverError> {
    p.validate()?;
    let n = p.n_vars;
    if (0..n).any(|j| p.lower[j] > p.upper[j]) {
        return Ok(Solution::empty(SolveStatus::Infeasible, p));
    }

    let mut e = Rows::new();
    let mut e_origin = Vec::new();
    for (r, row) in p.eq.iter().enumerate() {
        e.push(row.terms.iter().copied(), row.rhs);
        e_origin.push(EqOrigin::Row(r));
    }
    let mut g = Rows::new();
    let mut g_origin = Vec::new();
    for (r, row) in p.ineq.iter().enumerate() {
        g.push(row.terms.iter().copied(), row.rhs);
        g_origin.push(GOrigin::Row(r));
    }
    for j in 0..n {
        let (l, u) = (p.lower[j], p.upper[j]);
        if l == u {
            e.push([(j, 1.0)], l);
            e_origin.push(EqOrigin::Fixed(j));
            continue;
        }
        if u.is_finite() {
            g.push([(j, 1.0)], u);
            g_origin.push(GOrigin::Upper(j));
        }
        if l.is_finite() {
            g.push([(j, -1.0)], -l);
            g_origin.push(GOrigin::Lower(j));
        }
    }
    let (me, mg) = (e.len(), g.len());
    let nk = n + me;
    let sym = Symbolic::new(n, &p.quad, &g, &e);
    let mut kkt = Kkt {
        n,
        quad: &p.quad,
        g: &g,
        e: &e,
        sym,
        w: vec![0.0; mg],
        scratch: Scratch {
            perm: vec![0.0; nk],
            ax: vec![0.0; nk],
            res: vec![0.0; nk],
            d: vec![0.0; nk],
            gv: vec![0.0; mg],
        },
        rhs: vec![0.0; nk],
        sol: vec![0.0; nk],
        t: vec![0.0; mg],
    };

    let x: Vec<f64> = (0..n)
        .map(|j| {
            let (l, u) = (p.lower[j], p.upper[j]);
            match (l.is_finite(), u.is_finite()) {
                _ if l == u => l,
                (true, true) => 0.5 * (l + u),
                (true, false) => l.max(0.0) + 1.0,
                (false, true) => u.min(0.0) - 1.0,
                (false, false) => 0.0,
            }
        })
        .collect();
    let mut gx = vec![0.0; mg];
    g.times(&x, &mut gx);
    let sig: Vec<f64> = (0..mg).map(|i| (g.rhs[i] - gx[i]).max(1.0)).collect();
    let mut it = Iterate { x, y: vec![0.0; me], sig, lam: vec![1.0; mg] };

    let c_norm = inf_norm(&p.linear);
    let b_norm = inf_norm(&e.rhs);
    let h_norm = inf_norm(&g.rhs);
    let mut iterations = 0;
    let mut converged = false;
    let mut r_d = vec![0.0; n];
    let mut r_e = vec![0.0; me];
    let mut r_g = vec![0.0; mg];
    let mut r_c = vec![0.0; mg];
    let mut aff = Step::new(n, me, mg);
    let mut step = Step::new(n, me, mg);

    for k in 0..=MAX_ITER {
        r_d.copy_from_slice(&p.linear);
        for &(i, j, q) in &p.quad {
            r_d[i] += q * it.x[j];
            if i != j {
                r_d[j] += q * it.x[i];
            }
        }
        e.add_transpose(&it.y, &mut r_d, -1.0);
        g.add_transpose(&it.lam, &mut r_d, 1.0);
        e.times(&it.x, &mut r_e);
        for (r, b) in r_e.iter_mut().zip(&e.rhs) {
            *r -= b;
        }
        g.times(&it.x, &mut gx);
        for i in 0..mg {
            r_g[i] = gx[i] + it.sig[i] - g.rhs[i];
        }
        let mu = if mg > 0 { it.sig.iter().zip(&it.lam).map(|(s, l)| s * l).sum::<f64>() / mg as f64 } else { 0.0 };
        let x_norm = inf_norm(&it.x);
        let obj_scale = 1.0 + c_norm + x_norm;
        if inf_norm(&r_d) <= FEAS_TOL * obj_scale
            && inf_norm(&r_e) <= FEAS_TOL * (1.0 + b_norm + x_norm)
            && inf_norm(&r_g) <= FEAS_TOL * (1.0 + h_norm + x_norm)
            && mu <= GAP_TOL * obj_scale
        {
            converged = true;
            iterations = k;
            break;
        }
        if k == MAX_ITER || !mu.is_finite() || it.x.iter().chain(&it.y).any(|v| !v.is_finite()) {
            iterations = k;
            break;
        }

        for i in 0..mg {
            kkt.w[i] = it.lam[i] / it.sig[i];
        }
        kkt.sym.assemble(n, &p.quad, &e, &kkt.w);
        kkt.sym.factor();

        // Predictor.
        for i in 0..mg {
            r_c[i] = it.sig[i] * it.lam[i];
        }
        kkt.direction(&it, &r_d, &r_e, &r_g, &r_c, &mut aff);
        let alpha_aff = max_step(&it.sig, &aff.s).min(max_step(&it.lam, &aff.l));
        let mu_aff = if mg > 0 {
            (0..mg)
                .map(|i| (it.sig[i] + alpha_aff * aff.s[i]) * (it.lam[i] + alpha_aff * aff.l[i]))
                .sum::<f64>()
                / mg as f64
        } else {
            0.0
        };
        let centering = if mu > 0.0 { (mu_aff / mu).powi(3).min(1.0) } else { 0.0 };

        // Corrector.
        for i in 0..mg {
            r_c[i] = it.sig[i] * it.lam[i] + aff.s[i] * aff.l[i] - centering * mu;
        }
        kkt.direction(&it, &r_d, &r_e, &r_g, &r_c, &mut step);
        let alpha = (STEP_FRACTION * max_step(&it.sig, &step.s).min(max_step(&it.lam, &step.l))).min(1.0);
        for (a, d) in it.x.iter_mut().zip(&step.x) {
            *a += alpha * d;
        }
        for (a, d) in it.y.iter_mut().zip(&step.y) {
            *a += alpha * d;
        }
        for i in 0..mg {
            it.sig[i] = (it.sig[i] + alpha * step.s[i]).max(1e-300);
            it.lam[i] = (it.lam[i] + alpha * step.l[i]).max(1e-300);
        }
    }

    let mut sol = Solution::empty(SolveStatus::Optimal, p);
    sol.stats.iterations = iterations;
    for (k, o) in e_origin.iter().enumerate() {
        match *o {
            EqOrigin::Row(r) => sol.eq_duals[r] = it.y[k],
            EqOrigin::Fixed(j) => {
                if it.y[k] <= 0.0 {
                    sol.upper_duals[j] = -it.y[k];
                } else {
                    sol.lower_duals[j] = it.y[k];
                }
            }
        }
    }
    for (k, o) in g_origin.iter().enumerate() {
        match *o {
            GOrigin::Row(r) => sol.ineq_duals[r] = it.lam[k],
            GOrigin::Upper(j) => sol.upper_duals[j] = it.lam[k],
            GOrigin::Lower(j) => sol.lower_duals[j] = it.lam[k],
        }
    }
    sol.x = it.x;
    if !converged {
        sol.status = SolveStatus::IterationLimit;
        sol.objective = p.objective(&sol.x);
        return Ok(sol);
    }
    Ok(certify(p, sol))
}
