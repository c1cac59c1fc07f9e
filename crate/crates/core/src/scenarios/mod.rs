//! Historical (covariate, outcome) samples: representation, CSV files,
//! standardization, splitting and a seeded synthetic generator.

mod csv_io;
mod generator;

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{LoadProfile, Prices, ProsumerParams};

pub use csv_io::{load_csv, write_csv, Schema};
pub use generator::{generate_community, generate_synthetic, Community, GeneratorConfig, FEATURES};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("invalid generator config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Realized uncertain quantities of one day.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub c_q: Vec<f64>,
    /// One price row per neighbor.
    pub c_nm: Vec<Vec<f64>>,
    pub p_g: Option<Vec<f64>>,
    pub p_l: Option<Vec<f64>>,
}

impl Outcome {
    pub fn prices(&self) -> Prices {
        Prices { c_q: self.c_q.clone(), c_nm: self.c_nm.clone() }
    }

    /// Scenario PV and load, falling back to the nominal profiles.
    pub fn loads(&self, p: &ProsumerParams) -> LoadProfile {
        LoadProfile {
            p_g: self.p_g.clone().unwrap_or_else(|| p.p_g.clone()),
            p_l: self.p_l.clone().unwrap_or_else(|| p.p_l.clone()),
        }
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.c_q
            .iter()
            .chain(self.c_nm.iter().flatten())
            .chain(self.p_g.iter().flatten())
            .chain(self.p_l.iter().flatten())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: Outcome,
}

/// Per-feature location and scale used for distances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardization {
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Provenance {
    Csv { covariates: PathBuf, outcomes: PathBuf },
    Generator { seed: u64, config_sha256: String },
    InMemory,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub samples: Vec<Sample>,
    pub standardization: Option<Standardization>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(
        feature_names: Vec<String>,
        samples: Vec<Sample>,
        provenance: Provenance,
    ) -> Result<Self, DataError> {
        let ds = Self { feature_names, samples, standardization: None, provenance };
        ds.check()?;
        Ok(ds)
    }

    fn check(&self) -> Result<(), DataError> {
        let d = self.feature_names.len();
        let Some(first) = self.samples.first() else {
            return Ok(());
        };
        let h = first.y.c_q.len();
        let nb = first.y.c_nm.len();
        let (has_g, has_l) = (first.y.p_g.is_some(), first.y.p_l.is_some());
        for (i, s) in self.samples.iter().enumerate() {
            let bad = |m: &str| Err(DataError::Invalid(format!("sample {i}: {m}")));
            if s.x.len() != d {
                return bad(&format!("{} covariates, expected {d}", s.x.len()));
            }
            if s.y.c_q.len() != h || s.y.c_nm.len() != nb {
                return bad("horizon or neighbor count differs from sample 0");
            }
            if s.y.c_nm.iter().any(|r| r.len() != h)
                || s.y.p_g.as_ref().is_some_and(|v| v.len() != h)
                || s.y.p_l.as_ref().is_some_and(|v| v.len() != h)
            {
                return bad("outcome row length differs from horizon");
            }
            if s.y.p_g.is_some() != has_g || s.y.p_l.is_some() != has_l {
                return bad("optional PV/load fields must be present for all samples or none");
            }
            if s.x.iter().chain(s.y.values()).any(|v| !v.is_finite()) {
                return bad("non-finite value");
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn d_x(&self) -> usize {
        self.feature_names.len()
    }

    pub fn horizon(&self) -> usize {
        self.samples.first().map_or(0, |s| s.y.c_q.len())
    }

    pub fn n_neighbors(&self) -> usize {
        self.samples.first().map_or(0, |s| s.y.c_nm.len())
    }

    pub fn has_loads(&self) -> bool {
        self.samples.first().is_some_and(|s| s.y.p_g.is_some() || s.y.p_l.is_some())
    }

    /// Covariate in distance space: z-scored if statistics are set.
    pub fn scaled(&self, x: &[f64]) -> Vec<f64> {
        match &self.standardization {
            Some(st) => st.apply(x),
            None => x.to_vec(),
        }
    }

    /// Samples at `indices`, keeping standardization and provenance.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            feature_names: self.feature_names.clone(),
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            standardization: self.standardization.clone(),
            provenance: self.provenance.clone(),
        }
    }
}

/// Fits per-feature mean and population standard deviation on
/// `fit_indices`. Zero-variance features get a standard deviation of 1.
pub fn standardize(ds: &Dataset, fit_indices: &[usize]) -> Result<Dataset, DataError> {
    if fit_indices.is_empty() {
        return Err(DataError::Invalid("standardization needs at least one sample".into()));
    }
    if let Some(&i) = fit_indices.iter().find(|&&i| i >= ds.len()) {
        return Err(DataError::Invalid(format!("fit index {i} out of range")));
    }
    let d = ds.d_x();
    let n = fit_indices.len() as f64;
    let mut mean = vec![0.0; d];
    for &i in fit_indices {
        for (m, v) in mean.iter_mut().zip(&ds.samples[i].x) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for &i in fit_indices {
        for f in 0..d {
            let dv = ds.samples[i].x[f] - mean[f];
            var[f] += dv * dv;
        }
    }
    let std = var
        .iter()
        .map(|v| {
            let s = (v / n).sqrt();
            if s > 1e-12 { s } else { 1.0 }
        })
        .collect();
    let mut out = ds.clone();
    out.standardization = Some(Standardization { mean, std });
    Ok(out)
}

/// Train, validation and test index sets from one seeded permutation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn split_indices(n: usize, fractions: (f64, f64, f64), seed: u64) -> Result<SplitIndices, DataError> {
    let (a, b, c) = fractions;
    if [a, b, c].iter().any(|f| !(0.0..=1.0).contains(f)) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(DataError::Invalid(format!(
            "split fractions ({a}, {b}, {c}) must be in [0, 1] and sum to 1"
        )));
    }
    let n_train = ((a * n as f64).round() as usize).min(n);
    let n_val = ((b * n as f64).round() as usize).min(n - n_train);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = idx.split_off(n_train + n_val);
    let validation = idx.split_off(n_train);
    Ok(SplitIndices { train: idx, validation, test })
}

pub fn split(
    ds: &Dataset,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset), DataError> {
    let s = split_indices(ds.len(), fractions, seed)?;
    Ok((ds.subset(&s.train), ds.subset(&s.validation), ds.subset(&s.test)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    pub(crate) fn toy(xs: &[&[f64]]) -> Dataset {
        let samples = xs
            .iter()
            .map(|x| Sample {
                x: x.to_vec(),
                y: Outcome { c_q: vec![1.0], c_nm: vec![], p_g: None, p_l: None },
            })
            .collect();
        let names = (0..xs[0].len()).map(|f| format!("f{f}")).collect();
        Dataset::new(names, samples, Provenance::InMemory).unwrap()
    }

    #[test]
    fn population_std_convention() {
        let ds = standardize(&toy(&[&[1.0, 5.0], &[3.0, 5.0]]), &[0, 1]).unwrap();
        let st = ds.standardization.as_ref().unwrap();
        assert_eq!(st.mean, vec![2.0, 5.0]);
        assert_eq!(st.std, vec![1.0, 1.0]);
        assert_eq!(ds.scaled(&[3.0, 5.0]), vec![1.0, 0.0]);
    }

    #[test]
    fn test_rows_use_training_statistics() {
        let ds = toy(&[&[0.0], &[2.0], &[100.0]]);
        let ds = standardize(&ds, &[0, 1]).unwrap();
        let st = ds.standardization.as_ref().unwrap();
        assert_eq!((st.mean[0], st.std[0]), (1.0, 1.0));
        assert_abs_diff_eq!(ds.scaled(&ds.samples[2].x)[0], 99.0);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let s = split_indices(10, (0.6, 0.2, 0.2), 7).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (6, 2, 2));
        assert_eq!(s, split_indices(10, (0.6, 0.2, 0.2), 7).unwrap());
        let mut all: Vec<usize> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert!(split_indices(10, (0.6, 0.2, 0.3), 7).is_err());
    }

    #[test]
    fn rejects_mixed_optional_fields_and_nan() {
        let mut a = toy(&[&[0.0], &[1.0]]);
        a.samples[0].y.p_g = Some(vec![1.0]);
        assert!(a.check().is_err());
        let mut b = toy(&[&[0.0]]);
        b.samples[0].x[0] = f64::NAN;
        assert!(b.check().is_err());
    }
}
