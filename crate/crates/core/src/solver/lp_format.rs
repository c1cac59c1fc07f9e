//! CPLEX-style LP text for cross-checking problems with external solvers.
//!
//! The dialect written here:
//!
//! ```text
//! \ comment lines start with a backslash
//! Minimize
//!  obj: 2 x0 - 4 x1 + [ 2 x0 ^ 2 + 2 x0 * x1 ] / 2 + 4
//! Subject To
//!  e0: x0 + x1 = 1
//!  i0: x0 - x1 <= 3
//! Bounds
//!  0 <= x0 <= 1
//!  x1 free
//! Binary
//!  x0
//! End
//! ```
//!
//! Variables are named `x<j>`, equality rows `e<r>` and inequality rows
//! `i<r>`. Numbers use Rust's shortest round-trip decimal formatting, so a
//! parse of the exported text reproduces every coefficient bit for bit.

use std::collections::BTreeMap;
use std::fmt::Write;

use super::mip::MipProblem;
use super::qp::{QpProblem, SparseRow};
use super::SolverError;

fn push_term(out: &mut String, first: &mut bool, coef: f64, body: &str) {
    if *first {
        if coef < 0.0 {
            let _ = write!(out, " - {} {body}", -coef);
        } else {
            let _ = write!(out, " {coef} {body}");
        }
        *first = false;
    } else if coef < 0.0 {
        let _ = write!(out, " - {} {body}", -coef);
    } else {
        let _ = write!(out, " + {coef} {body}");
    }
}

fn canonical_row(row: &SparseRow) -> SparseRow {
    let mut m: BTreeMap<usize, f64> = BTreeMap::new();
    for &(j, a) in &row.terms {
        *m.entry(j).or_insert(0.0) += a;
    }
    SparseRow::new(m.into_iter().filter(|(_, a)| *a != 0.0).collect(), row.rhs)
}

/// The normal form used by the LP writer: summed duplicate entries, sorted
/// terms, no explicit zeros.
pub fn canonical(p: &QpProblem) -> QpProblem {
    let mut q: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for &(i, j, v) in &p.quad {
        *q.entry((i, j)).or_insert(0.0) += v;
    }
    QpProblem {
        n_vars: p.n_vars,
        quad: q
            .into_iter()
            .filter(|(_, v)| *v != 0.0)
            .map(|((i, j), v)| (i, j, v))
            .collect(),
        linear: p.linear.clone(),
        offset: p.offset,
        eq: p.eq.iter().map(canonical_row).collect(),
        ineq: p.ineq.iter().map(canonical_row).collect(),
        lower: p.lower.clone(),
        upper: p.upper.clone(),
    }
}

fn write_row(out: &mut String, name: &str, row: &SparseRow, sense: &str) {
    let _ = write!(out, " {name}:");
    let mut first = true;
    for &(j, a) in &row.terms {
        push_term(out, &mut first, a, &format!("x{j}"));
    }
    if first {
        out.push_str(" 0 x0");
    }
    let _ = writeln!(out, " {sense} {}", row.rhs);
}

pub fn export_lp(p: &QpProblem, binaries: &[usize]) -> String {
    let p = canonical(p);
    let mut out = String::new();
    out.push_str("\\ exported by dcso\n");
    out.push_str("Minimize\n obj:");
    let mut first = true;
    for (j, &c) in p.linear.iter().enumerate() {
        if c != 0.0 {
            push_term(&mut out, &mut first, c, &format!("x{j}"));
        }
    }
    if !p.quad.is_empty() {
        out.push_str(if first { " [" } else { " + [" });
        let mut qfirst = true;
        for &(i, j, v) in &p.quad {
            if i == j {
                push_term(&mut out, &mut qfirst, v, &format!("x{i} ^ 2"));
            } else {
                push_term(&mut out, &mut qfirst, 2.0 * v, &format!("x{i} * x{j}"));
            }
        }
        out.push_str(" ] / 2");
        first = false;
    }
    if p.offset != 0.0 {
        if first {
            let _ = write!(out, " {}", p.offset);
        } else if p.offset < 0.0 {
            let _ = write!(out, " - {}", -p.offset);
        } else {
            let _ = write!(out, " + {}", p.offset);
        }
        first = false;
    }
    if first {
        out.push_str(" 0");
    }
    out.push_str("\nSubject To\n");
    for (r, row) in p.eq.iter().enumerate() {
        write_row(&mut out, &format!("e{r}"), row, "=");
    }
    for (r, row) in p.ineq.iter().enumerate() {
        write_row(&mut out, &format!("i{r}"), row, "<=");
    }
    out.push_str("Bounds\n");
    for j in 0..p.n_vars {
        let (lo, hi) = (p.lower[j], p.upper[j]);
        let _ = match (lo.is_finite(), hi.is_finite()) {
            (false, false) => writeln!(out, " x{j} free"),
            (true, false) => writeln!(out, " x{j} >= {lo}"),
            (false, true) => writeln!(out, " -inf <= x{j} <= {hi}"),
            (true, true) => writeln!(out, " {lo} <= x{j} <= {hi}"),
        };
    }
    if !binaries.is_empty() {
        out.push_str("Binary\n");
        for &b in binaries {
            let _ = writeln!(out, " x{b}");
        }
    }
    out.push_str("End\n");
    out
}

impl MipProblem {
    pub fn to_lp(&self) -> String {
        export_lp(&self.qp, &self.binary_indices)
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    None,
    Objective,
    Constraints,
    Bounds,
    Binary,
    End,
}

fn parse_err(line: usize, msg: impl Into<String>) -> SolverError {
    SolverError::LpParse {
        line,
        message: msg.into(),
    }
}

fn parse_num(tok: &str, line: usize) -> Result<f64, SolverError> {
    match tok {
        "inf" | "+inf" | "infinity" => Ok(f64::INFINITY),
        "-inf" | "-infinity" => Ok(f64::NEG_INFINITY),
        _ => tok
            .parse::<f64>()
            .map_err(|_| parse_err(line, format!("expected number, found `{tok}`"))),
    }
}

fn var_index(tok: &str, line: usize) -> Result<usize, SolverError> {
    tok.strip_prefix('x')
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| parse_err(line, format!("unknown variable `{tok}`")))
}

#[derive(Default)]
struct Expr {
    linear: Vec<(usize, f64)>,
    quad: Vec<(usize, usize, f64)>,
    constant: f64,
}

/// Parses `[sign] [coef] term` sequences, including a bracketed `[ … ] / 2`
/// quadratic block.
fn parse_expr(tokens: &[&str], line: usize) -> Result<Expr, SolverError> {
    let mut e = Expr::default();
    let mut i = 0;
    let mut in_quad = false;
    while i < tokens.len() {
        let mut sign = 1.0;
        while i < tokens.len() && (tokens[i] == "+" || tokens[i] == "-") {
            if tokens[i] == "-" {
                sign = -sign;
            }
            i += 1;
        }
        if i >= tokens.len() {
            return Err(parse_err(line, "dangling sign"));
        }
        if tokens[i] == "[" {
            in_quad = true;
            i += 1;
            continue;
        }
        if tokens[i] == "]" {
            if !in_quad || tokens.get(i + 1) != Some(&"/") || tokens.get(i + 2) != Some(&"2") {
                return Err(parse_err(line, "quadratic block must close with `] / 2`"));
            }
            in_quad = false;
            i += 3;
            continue;
        }
        let mut coef = 1.0;
        if let Ok(v) = tokens[i].parse::<f64>() {
            coef = v;
            i += 1;
            if i >= tokens.len() || !tokens[i].starts_with('x') {
                if in_quad {
                    return Err(parse_err(line, "constant inside quadratic block"));
                }
                e.constant += sign * coef;
                continue;
            }
        }
        let a = var_index(tokens[i], line)?;
        i += 1;
        if in_quad {
            match tokens.get(i) {
                Some(&"^") => {
                    if tokens.get(i + 1) != Some(&"2") {
                        return Err(parse_err(line, "only squares are supported"));
                    }
                    i += 2;
                    e.quad.push((a, a, sign * coef));
                }
                Some(&"*") => {
                    let b = var_index(tokens.get(i + 1).copied().unwrap_or(""), line)?;
                    i += 2;
                    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                    e.quad.push((lo, hi, sign * coef / 2.0));
                }
                _ => return Err(parse_err(line, "expected `^ 2` or `* var` in quadratic block")),
            }
        } else {
            e.linear.push((a, sign * coef));
        }
    }
    if in_quad {
        return Err(parse_err(line, "unterminated quadratic block"));
    }
    Ok(e)
}

/// Reads back the dialect produced by [`export_lp`]. Returns the problem and
/// its binary variables.
pub fn parse_lp(text: &str) -> Result<(QpProblem, Vec<usize>), SolverError> {
    let mut section = Section::None;
    let mut objective = Expr::default();
    let mut eq: Vec<(usize, SparseRow)> = Vec::new();
    let mut ineq: Vec<(usize, SparseRow)> = Vec::new();
    let mut bounds: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
    let mut binaries = Vec::new();
    let mut max_var: Option<usize> = None;
    let mut note = |j: usize| max_var = Some(max_var.map_or(j, |m: usize| m.max(j)));

    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('\\') {
            continue;
        }
        match trimmed.to_ascii_lowercase().as_str() {
            "minimize" => {
                section = Section::Objective;
                continue;
            }
            "subject to" => {
                section = Section::Constraints;
                continue;
            }
            "bounds" => {
                section = Section::Bounds;
                continue;
            }
            "binary" => {
                section = Section::Binary;
                continue;
            }
            "end" => {
                section = Section::End;
                continue;
            }
            _ => {}
        }
        let tokens: Vec<&str> = trimmed.split_whitespace().collect();
        match section {
            Section::Objective => {
                let body = match tokens.first() {
                    Some(t) if t.ends_with(':') => &tokens[1..],
                    _ => &tokens[..],
                };
                let e = parse_expr(body, line)?;
                e.linear.iter().for_each(|&(j, _)| note(j));
                e.quad.iter().for_each(|&(_, j, _)| note(j));
                objective.linear.extend(e.linear);
                objective.quad.extend(e.quad);
                objective.constant += e.constant;
            }
            Section::Constraints => {
                let name = tokens
                    .first()
                    .and_then(|t| t.strip_suffix(':'))
                    .ok_or_else(|| parse_err(line, "constraint rows need a name"))?;
                let sense_at = tokens
                    .iter()
                    .position(|t| *t == "=" || *t == "<=")
                    .ok_or_else(|| parse_err(line, "missing `=` or `<=`"))?;
                let rhs = parse_num(
                    tokens
                        .get(sense_at + 1)
                        .ok_or_else(|| parse_err(line, "missing right-hand side"))?,
                    line,
                )?;
                let e = parse_expr(&tokens[1..sense_at], line)?;
                if !e.quad.is_empty() {
                    return Err(parse_err(line, "quadratic constraints are not supported"));
                }
                e.linear.iter().for_each(|&(j, _)| note(j));
                let terms: Vec<(usize, f64)> =
                    e.linear.into_iter().filter(|(_, a)| *a != 0.0).collect();
                let row = SparseRow::new(terms, rhs - e.constant);
                let idx: usize = name[1..]
                    .parse()
                    .map_err(|_| parse_err(line, format!("bad row name `{name}`")))?;
                match (tokens[sense_at], name.chars().next()) {
                    ("=", Some('e')) => eq.push((idx, row)),
                    ("<=", Some('i')) => ineq.push((idx, row)),
                    _ => return Err(parse_err(line, format!("row `{name}` has unexpected sense"))),
                }
            }
            Section::Bounds => {
                let (j, lo, hi) = match tokens.as_slice() {
                    [v, "free"] => (var_index(v, line)?, f64::NEG_INFINITY, f64::INFINITY),
                    [v, ">=", lo] => (var_index(v, line)?, parse_num(lo, line)?, f64::INFINITY),
                    [v, "<=", hi] => (var_index(v, line)?, 0.0, parse_num(hi, line)?),
                    [lo, "<=", v, "<=", hi] => {
                        (var_index(v, line)?, parse_num(lo, line)?, parse_num(hi, line)?)
                    }
                    _ => return Err(parse_err(line, "unrecognized bound")),
                };
                note(j);
                bounds.insert(j, (lo, hi));
            }
            Section::Binary => {
                for t in tokens {
                    let j = var_index(t, line)?;
                    note(j);
                    binaries.push(j);
                }
            }
            Section::None | Section::End => {
                return Err(parse_err(line, "content outside of a section"));
            }
        }
    }
    if section != Section::End {
        return Err(parse_err(text.lines().count(), "missing `End`"));
    }
    eq.sort_by_key(|(i, _)| *i);
    ineq.sort_by_key(|(i, _)| *i);
    for (k, (i, _)) in eq.iter().enumerate().chain(ineq.iter().enumerate()) {
        if k != *i {
            return Err(parse_err(0, "row names are not contiguous"));
        }
    }

    let n = max_var.map_or(0, |m| m + 1);
    let mut p = QpProblem::new(n);
    // LP files default to x ≥ 0 when a variable has no bound line.
    p.lower = vec![0.0; n];
    for (j, (lo, hi)) in bounds {
        p.lower[j] = lo;
        p.upper[j] = hi;
    }
    for (j, c) in objective.linear {
        p.linear[j] += c;
    }
    p.quad = objective.quad;
    p.offset = objective.constant;
    p.eq = eq.into_iter().map(|(_, r)| r).collect();
    p.ineq = ineq.into_iter().map(|(_, r)| r).collect();
    Ok((canonical(&p), binaries))
}
