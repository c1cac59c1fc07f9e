//! Branch-and-bound over binary variables with convex QP relaxations.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use super::qp::{solve_qp, QpProblem, Solution, SolveStatus};
use super::SolverError;

pub const INTEGRALITY_TOL: f64 = 1e-6;
pub const RELATIVE_GAP: f64 = 1e-8;
pub const DEFAULT_NODE_LIMIT: usize = 200_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MipProblem {
    pub qp: QpProblem,
    pub binary_indices: Vec<usize>,
    /// Constant used by the constraint builders that produced this problem.
    pub big_m: f64,
}

impl MipProblem {
    pub fn validate(&self) -> Result<(), SolverError> {
        self.qp.validate()?;
        if !(self.big_m > 0.0) || !self.big_m.is_finite() {
            return Err(SolverError::Dimension(format!(
                "big_M must be positive and finite, got {}",
                self.big_m
            )));
        }
        let mut seen = vec![false; self.qp.n_vars];
        for &b in &self.binary_indices {
            if b >= self.qp.n_vars {
                return Err(SolverError::Dimension(format!(
                    "binary index {b} out of range ({} variables)",
                    self.qp.n_vars
                )));
            }
            if std::mem::replace(&mut seen[b], true) {
                return Err(SolverError::Dimension(format!("binary index {b} repeated")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct MipOptions {
    pub node_limit: usize,
}

impl Default for MipOptions {
    fn default() -> Self {
        Self {
            node_limit: DEFAULT_NODE_LIMIT,
        }
    }
}

struct Node {
    bound: f64,
    depth: usize,
    seq: usize,
    /// `fix[k]` pins `binary_indices[k]` to 0 or 1.
    fix: Vec<Option<bool>>,
}

// Best-first: smallest bound, then deepest, then oldest.
impl Ord for Node {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then(self.depth.cmp(&other.depth))
            .then(other.seq.cmp(&self.seq))
    }
}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}

fn relaxation(p: &MipProblem, fix: &[Option<bool>]) -> QpProblem {
    let mut qp = p.qp.clone();
    for (k, &b) in p.binary_indices.iter().enumerate() {
        let (lo, hi) = match fix[k] {
            Some(false) => (0.0, 0.0),
            Some(true) => (1.0, 1.0),
            None => (0.0, 1.0),
        };
        qp.lower[b] = qp.lower[b].max(lo);
        qp.upper[b] = qp.upper[b].min(hi);
    }
    qp
}

fn prunable(bound: f64, incumbent: Option<&Solution>) -> bool {
    match incumbent {
        Some(inc) => bound >= inc.objective - RELATIVE_GAP * inc.objective.abs().max(1.0),
        None => false,
    }
}

pub fn solve_miqp(p: &MipProblem) -> Result<Solution, SolverError> {
    solve_miqp_with(p, MipOptions::default())
}

/// Best-first branch-and-bound, branching on the most fractional binary.
pub fn solve_miqp_with(p: &MipProblem, opts: MipOptions) -> Result<Solution, SolverError> {
    p.validate()?;
    let nb = p.binary_indices.len();
    let mut heap = BinaryHeap::new();
    heap.push(Node {
        bound: f64::NEG_INFINITY,
        depth: 0,
        seq: 0,
        fix: vec![None; nb],
    });
    let mut seq = 1;
    let mut nodes = 0;
    let mut iterations = 0;
    let mut incumbent: Option<Solution> = None;
    let mut hit_limit = false;

    while let Some(node) = heap.pop() {
        if prunable(node.bound, incumbent.as_ref()) {
            continue;
        }
        if nodes >= opts.node_limit {
            hit_limit = true;
            break;
        }
        nodes += 1;
        let relaxed = solve_qp(&relaxation(p, &node.fix))?;
        iterations += relaxed.stats.iterations;
        match relaxed.status {
            SolveStatus::Optimal => {}
            SolveStatus::Infeasible => continue,
            SolveStatus::Unbounded => {
                let mut s = relaxed;
                s.stats = super::SolveStats { iterations, nodes };
                return Ok(s);
            }
            SolveStatus::IterationLimit => {
                return Err(SolverError::Backend(format!(
                    "relaxation at node {nodes} did not converge"
                )))
            }
        }
        if prunable(relaxed.objective, incumbent.as_ref()) {
            continue;
        }

        // most fractional free binary; ties go to the lowest position
        let mut branch: Option<(usize, f64)> = None;
        for (k, &b) in p.binary_indices.iter().enumerate() {
            if node.fix[k].is_some() {
                continue;
            }
            let v = relaxed.x[b];
            let frac = (v - v.round()).abs();
            if frac > INTEGRALITY_TOL && branch.is_none_or(|(_, f)| frac > f) {
                branch = Some((k, frac));
            }
        }

        match branch {
            None => {
                // integral: re-solve with binaries pinned for a clean point
                let fix: Vec<Option<bool>> = p
                    .binary_indices
                    .iter()
                    .enumerate()
                    .map(|(k, &b)| node.fix[k].or(Some(relaxed.x[b] > 0.5)))
                    .collect();
                let pinned = solve_qp(&relaxation(p, &fix))?;
                iterations += pinned.stats.iterations;
                let cand = if pinned.is_optimal() { pinned } else { relaxed };
                if incumbent
                    .as_ref()
                    .is_none_or(|inc| cand.objective < inc.objective)
                {
                    incumbent = Some(cand);
                }
            }
            Some((k, _)) => {
                let up_first = relaxed.x[p.binary_indices[k]] >= 0.5;
                for val in [up_first, !up_first] {
                    let mut fix = node.fix.clone();
                    fix[k] = Some(val);
                    heap.push(Node {
                        bound: relaxed.objective,
                        depth: node.depth + 1,
                        seq,
                        fix,
                    });
                    seq += 1;
                }
            }
        }
    }

    let stats = super::SolveStats { iterations, nodes };
    Ok(match incumbent {
        Some(mut s) => {
            if hit_limit {
                s.status = SolveStatus::IterationLimit;
            }
            s.stats = stats;
            s
        }
        None => {
            let status = if hit_limit {
                SolveStatus::IterationLimit
            } else {
                SolveStatus::Infeasible
            };
            Solution {
                status,
                x: vec![0.0; p.qp.n_vars],
                objective: f64::NAN,
                eq_duals: vec![0.0; p.qp.eq.len()],
                ineq_duals: vec![0.0; p.qp.ineq.len()],
                lower_duals: vec![0.0; p.qp.n_vars],
                upper_duals: vec![0.0; p.qp.n_vars],
                stats,
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::SparseRow;
    use approx::assert_abs_diff_eq;

    #[test]
    fn switch_on_when_worth_it() {
        // z ∈ [0,1], b ∈ {0,1}, z ≤ b, min (z−1)² + 0.3 b
        // b=0 → z=0, cost 1; b=1 → z=1, cost 0.3
        let mut qp = QpProblem::new(2);
        qp.quad.push((0, 0, 2.0));
        qp.linear = vec![-2.0, 0.3];
        qp.offset = 1.0;
        qp.lower = vec![0.0, 0.0];
        qp.upper = vec![1.0, 1.0];
        qp.ineq.push(SparseRow::new(vec![(0, 1.0), (1, -1.0)], 0.0));
        let p = MipProblem {
            qp,
            binary_indices: vec![1],
            big_m: 10.0,
        };
        let s = solve_miqp(&p).unwrap();
        assert!(s.is_optimal());
        assert_abs_diff_eq!(s.x[0], 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(s.x[1], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(s.objective, 0.3, epsilon = 1e-6);
    }

    #[test]
    fn no_binaries_matches_qp() {
        let mut qp = QpProblem::new(1);
        qp.quad.push((0, 0, 2.0));
        qp.linear[0] = -4.0;
        qp.lower[0] = 0.0;
        qp.upper[0] = 1.0;
        let direct = solve_qp(&qp).unwrap();
        let p = MipProblem {
            qp,
            binary_indices: vec![],
            big_m: 1.0,
        };
        let s = solve_miqp(&p).unwrap();
        assert_eq!(s.status, direct.status);
        assert_abs_diff_eq!(s.objective, direct.objective, epsilon = 1e-12);
        assert_eq!(s.stats.nodes, 1);
    }

    #[test]
    fn infeasible_binary_combinations() {
        // b1 + b2 = 1.5 has no binary solution
        let mut qp = QpProblem::new(2);
        qp.lower = vec![0.0, 0.0];
        qp.upper = vec![1.0, 1.0];
        qp.eq.push(SparseRow::new(vec![(0, 1.0), (1, 1.0)], 1.5));
        let p = MipProblem {
            qp,
            binary_indices: vec![0, 1],
            big_m: 1.0,
        };
        assert_eq!(solve_miqp(&p).unwrap().status, SolveStatus::Infeasible);
    }

    #[test]
    fn node_limit_reports_incumbent() {
        let mut qp = QpProblem::new(3);
        qp.lower = vec![0.0; 3];
        qp.upper = vec![1.0; 3];
        qp.linear = vec![-1.0, -1.0, -1.0];
        qp.ineq
            .push(SparseRow::new(vec![(0, 1.0), (1, 1.0), (2, 1.0)], 1.5));
        let p = MipProblem {
            qp,
            binary_indices: vec![0, 1, 2],
            big_m: 1.0,
        };
        let s = solve_miqp_with(&p, MipOptions { node_limit: 1 }).unwrap();
        assert_eq!(s.status, SolveStatus::IterationLimit);
        let s = solve_miqp(&p).unwrap();
        assert!(s.is_optimal());
        assert_abs_diff_eq!(s.objective, -1.0, epsilon = 1e-6);
    }

    #[test]
    fn rejects_bad_binary_index() {
        let p = MipProblem {
            qp: QpProblem::new(1),
            binary_indices: vec![4],
            big_m: 1.0,
        };
        assert!(solve_miqp(&p).is_err());
        let p = MipProblem {
            qp: QpProblem::new(1),
            binary_indices: vec![],
            big_m: 0.0,
        };
        assert!(solve_miqp(&p).is_err());
    }
}
