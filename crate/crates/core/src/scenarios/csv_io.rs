//! CSV schema: a covariate file with one column per feature, and an outcome
//! file with columns `c_q_h{h}`, `c_nm_m{j}_h{h}` and optionally
//! `p_g_h{h}`, `p_l_h{h}`. Both files hold one row per sample in the same
//! order. Values are written in shortest round-trip decimal form.

use std::fs::File;
use std::path::Path;

use super::{DataError, Dataset, Outcome, Provenance, Sample};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Schema {
    pub horizon: usize,
    pub n_neighbors: usize,
    pub with_pv: bool,
    pub with_load: bool,
}

impl Schema {
    pub fn of(ds: &Dataset) -> Self {
        let first = ds.samples.first();
        Self {
            horizon: ds.horizon(),
            n_neighbors: ds.n_neighbors(),
            with_pv: first.is_some_and(|s| s.y.p_g.is_some()),
            with_load: first.is_some_and(|s| s.y.p_l.is_some()),
        }
    }

    pub fn outcome_header(&self) -> Vec<String> {
        let h = self.horizon;
        let mut cols: Vec<String> = (0..h).map(|t| format!("c_q_h{t}")).collect();
        for m in 0..self.n_neighbors {
            cols.extend((0..h).map(|t| format!("c_nm_m{m}_h{t}")));
        }
        if self.with_pv {
            cols.extend((0..h).map(|t| format!("p_g_h{t}")));
        }
        if self.with_load {
            cols.extend((0..h).map(|t| format!("p_l_h{t}")));
        }
        cols
    }

    /// Recovers the schema from an outcome header.
    pub fn infer(header: &[String]) -> Result<Self, DataError> {
        let count = |prefix: &str| header.iter().filter(|c| c.starts_with(prefix)).count();
        let horizon = count("c_q_h");
        if horizon == 0 {
            return Err(DataError::Schema("outcome header has no c_q_h columns".into()));
        }
        let nm = count("c_nm_m");
        if nm % horizon != 0 {
            return Err(DataError::Schema(format!(
                "{nm} c_nm columns is not a multiple of horizon {horizon}"
            )));
        }
        let schema = Self {
            horizon,
            n_neighbors: nm / horizon,
            with_pv: count("p_g_h") > 0,
            with_load: count("p_l_h") > 0,
        };
        if schema.outcome_header() != header {
            return Err(DataError::Schema(
                "outcome header does not follow the c_q / c_nm / p_g / p_l column layout".into(),
            ));
        }
        Ok(schema)
    }
}

fn read_rows(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>), DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(File::open(path)?);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| DataError::Parse { row: 0, message: e.to_string() })?
        .iter()
        .map(str::to_owned)
        .collect();
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| DataError::Parse { row, message: e.to_string() })?;
        if rec.len() != header.len() {
            return Err(DataError::Schema(format!(
                "{}: row {row} has {} cells, header has {}",
                path.display(),
                rec.len(),
                header.len()
            )));
        }
        let mut vals = Vec::with_capacity(rec.len());
        for (cell, name) in rec.iter().zip(&header) {
            let v: f64 = cell.trim().parse().map_err(|_| DataError::Parse {
                row,
                message: format!("column {name}: cannot parse {cell:?}"),
            })?;
            if !v.is_finite() {
                return Err(DataError::Parse { row, message: format!("column {name}: non-finite value {cell:?}") });
            }
            vals.push(v);
        }
        rows.push(vals);
    }
    Ok((header, rows))
}

/// Reads a covariate/outcome file pair. With `schema = None` the layout is
/// inferred from the outcome header; otherwise the header must match it.
pub fn load_csv(covariates: &Path, outcomes: &Path, schema: Option<&Schema>) -> Result<Dataset, DataError> {
    let (features, xs) = read_rows(covariates)?;
    let (out_header, ys) = read_rows(outcomes)?;
    let inferred = Schema::infer(&out_header)?;
    if let Some(s) = schema {
        if *s != inferred {
            return Err(DataError::Schema(format!("expected {s:?}, file has {inferred:?}")));
        }
    }
    if xs.len() != ys.len() {
        return Err(DataError::Schema(format!(
            "{} covariate rows but {} outcome rows",
            xs.len(),
            ys.len()
        )));
    }
    let h = inferred.horizon;
    let samples = xs
        .into_iter()
        .zip(ys)
        .map(|(x, y)| {
            let mut chunks = y.chunks(h).map(<[f64]>::to_vec);
            let c_q = chunks.next().unwrap_or_default();
            let c_nm = (0..inferred.n_neighbors).map(|_| chunks.next().unwrap_or_default()).collect();
            let p_g = if inferred.with_pv { chunks.next() } else { None };
            let p_l = if inferred.with_load { chunks.next() } else { None };
            Sample { x, y: Outcome { c_q, c_nm, p_g, p_l } }
        })
        .collect();
    Dataset::new(
        features,
        samples,
        Provenance::Csv { covariates: covariates.to_path_buf(), outcomes: outcomes.to_path_buf() },
    )
}

pub fn write_csv(ds: &Dataset, covariates: &Path, outcomes: &Path) -> Result<(), DataError> {
    let csv_err = |e: csv::Error| DataError::Io(std::io::Error::other(e));
    let fmt = |v: &f64| format!("{v}");

    let mut w = csv::Writer::from_path(covariates).map_err(csv_err)?;
    w.write_record(&ds.feature_names).map_err(csv_err)?;
    for s in &ds.samples {
        w.write_record(s.x.iter().map(fmt)).map_err(csv_err)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(outcomes).map_err(csv_err)?;
    w.write_record(Schema::of(ds).outcome_header()).map_err(csv_err)?;
    for s in &ds.samples {
        w.write_record(s.y.values().map(fmt)).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
