//! Embedded mathematical-programming backend: convex QPs with certified
//! duals, mixed-binary QPs by branch-and-bound, and LP-file export.

mod ipm;
mod lp_format;
mod mip;
mod qp;

pub use ipm::{solve_qp_native, solve_qp_with, Backend};
pub use lp_format::{canonical, export_lp, parse_lp};
pub use mip::{
    solve_miqp, solve_miqp_with, MipOptions, MipProblem, DEFAULT_NODE_LIMIT, INTEGRALITY_TOL,
    RELATIVE_GAP,
};
pub use qp::{
    solve_qp, KktResiduals, QpProblem, Solution, SolveStats, SolveStatus, SparseRow, KKT_TOL,
};

#[derive(Debug, thiserror::Error)]
pub enum SolverError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite data in {0}")]
    NonFinite(String),
    #[error("objective is not convex: {0}")]
    NotConvex(String),
    #[error("backend failure: {0}")]
    Backend(String),
    #[error("LP parse error at line {line}: {message}")]
    LpParse { line: usize, message: String },
}
