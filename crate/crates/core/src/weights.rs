//! Sample weights for weighted SAA: k-nearest-neighbor weights and the
//! consensus variant that mixes in covariates shared by neighbors.
//!
//! Distances are Euclidean on the dataset's standardized features. Queries
//! from neighbors are answered against the receiving prosumer's own
//! dataset. Ties in distance go to the lower sample index.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::scenarios::Dataset;

#[derive(Debug, thiserror::Error)]
pub enum WeightError {
    #[error("k = {k} outside 1..={available}")]
    BadK { k: usize, available: usize },
    #[error("gamma = {0} outside [0, 1]")]
    BadGamma(f64),
    #[error("covariate has {got} features, dataset has {expected}")]
    Dimension { got: usize, expected: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightConfig {
    pub k: usize,
    pub gamma: f64,
    pub leave_one_out: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightMeta {
    pub k: usize,
    pub gamma: f64,
    /// Covariates that contributed: the prosumer's own plus those received.
    pub sources: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub w: Vec<f64>,
    pub meta: WeightMeta,
}

impl WeightVector {
    pub fn uniform(s: usize) -> Self {
        Self { w: vec![1.0 / s as f64; s], meta: WeightMeta { k: s, gamma: 1.0, sources: 0 } }
    }

    pub fn indicator(s: usize, i: usize) -> Self {
        let mut w = vec![0.0; s];
        w[i] = 1.0;
        Self { w, meta: WeightMeta { k: 1, gamma: 1.0, sources: 0 } }
    }

    /// Simplex check: non-negative entries summing to one within `tol`.
    pub fn is_simplex(&self, tol: f64) -> bool {
        self.w.iter().all(|&v| v >= 0.0) && (self.w.iter().sum::<f64>() - 1.0).abs() <= tol
    }
}

/// Indices of the `k` nearest samples to `x`, nearest first.
pub fn knn_neighbors(x: &[f64], ds: &Dataset, k: usize, exclude: Option<usize>) -> Result<Vec<usize>, WeightError> {
    if x.len() != ds.d_x() {
        return Err(WeightError::Dimension { got: x.len(), expected: ds.d_x() });
    }
    let available = ds.len() - usize::from(exclude.is_some_and(|e| e < ds.len()));
    if k == 0 || k > available {
        return Err(WeightError::BadK { k, available });
    }
    let q = ds.scaled(x);
    let mut dist: Vec<(f64, usize)> = ds
        .samples
        .iter()
        .enumerate()
        .filter(|&(i, _)| Some(i) != exclude)
        .map(|(i, s)| {
            let d = ds.scaled(&s.x).iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            (d, i)
        })
        .collect();
    dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(dist.into_iter().take(k).map(|(_, i)| i).collect())
}

fn indicator_mass(ds: &Dataset, x: &[f64], k: usize, exclude: Option<usize>) -> Result<Vec<f64>, WeightError> {
    let mut w = vec![0.0; ds.len()];
    for i in knn_neighbors(x, ds, k, exclude)? {
        w[i] = 1.0 / k as f64;
    }
    Ok(w)
}

pub fn knn_weights(x: &[f64], ds: &Dataset, k: usize) -> Result<WeightVector, WeightError> {
    cknn_weights_with(x, &[], ds, &WeightConfig { k, gamma: 1.0, leave_one_out: false }, None)
}

pub fn cknn_weights(
    x_own: &[f64],
    x_neighbors: &[Vec<f64>],
    ds: &Dataset,
    k: usize,
    gamma: f64,
) -> Result<WeightVector, WeightError> {
    cknn_weights_with(x_own, x_neighbors, ds, &WeightConfig { k, gamma, leave_one_out: false }, None)
}

/// `w = γ·kNN(x_own) + (1−γ)·mean_m kNN(x̂_m)`. Each neighbor term carries
/// mass `1/(|N|·k)` per selected sample so the result stays on the simplex.
/// With no neighbor covariates the own term gets full weight. When
/// `cfg.leave_one_out` is set, sample `exclude` is never selected.
pub fn cknn_weights_with(
    x_own: &[f64],
    x_neighbors: &[Vec<f64>],
    ds: &Dataset,
    cfg: &WeightConfig,
    exclude: Option<usize>,
) -> Result<WeightVector, WeightError> {
    if !(0.0..=1.0).contains(&cfg.gamma) {
        return Err(WeightError::BadGamma(cfg.gamma));
    }
    let exclude = if cfg.leave_one_out { exclude } else { None };
    let own = indicator_mass(ds, x_own, cfg.k, exclude)?;
    if x_neighbors.is_empty() {
        return Ok(WeightVector { w: own, meta: WeightMeta { k: cfg.k, gamma: cfg.gamma, sources: 1 } });
    }
    let mut shared = vec![0.0; ds.len()];
    let share = 1.0 / x_neighbors.len() as f64;
    for xm in x_neighbors {
        for (acc, v) in shared.iter_mut().zip(indicator_mass(ds, xm, cfg.k, exclude)?) {
            *acc += share * v;
        }
    }
    let g = cfg.gamma;
    let w = own.iter().zip(&shared).map(|(a, b)| g * a + (1.0 - g) * b).collect();
    Ok(WeightVector { w, meta: WeightMeta { k: cfg.k, gamma: g, sources: 1 + x_neighbors.len() } })
}

/// Debug dump: one `sample,weight` row per sample.
pub fn write_weights_csv(w: &WeightVector, path: &Path) -> Result<(), WeightError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "sample,weight")?;
    for (i, v) in w.w.iter().enumerate() {
        writeln!(f, "{i},{v}")?;
    }
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios::{Outcome, Provenance, Sample};

    fn line(xs: &[f64]) -> Dataset {
        let samples = xs
            .iter()
            .map(|&x| Sample { x: vec![x], y: Outcome { c_q: vec![0.0], c_nm: vec![], p_g: None, p_l: None } })
            .collect();
        Dataset::new(vec!["x".into()], samples, Provenance::InMemory).unwrap()
    }

    #[test]
    fn nearest_two_on_a_line() {
        let ds = line(&[0.0, 1.0, 2.0]);
        assert_eq!(knn_neighbors(&[0.9], &ds, 2, None).unwrap(), vec![1, 0]);
        assert_eq!(knn_weights(&[0.9], &ds, 2).unwrap().w, vec![0.5, 0.5, 0.0]);
        assert_eq!(knn_neighbors(&[0.9], &ds, 3, None).unwrap().len(), 3);
        assert_eq!(knn_weights(&[2.0], &ds, 1).unwrap().w, vec![0.0, 0.0, 1.0]);
        assert!(knn_neighbors(&[0.9], &ds, 4, None).is_err());
        assert!(knn_neighbors(&[0.9], &ds, 3, Some(0)).is_err());
    }

    #[test]
    fn uniform_when_k_is_s() {
        let ds = line(&[0.0, 1.0, 2.0, 5.0]);
        assert!(knn_weights(&[7.0], &ds, 4).unwrap().w.iter().all(|&v| v == 0.25));
    }

    #[test]
    fn consensus_mixture() {
        let ds = line(&[0.0, 1.0, 2.0]);
        let w = cknn_weights(&[0.9], &[vec![1.9]], &ds, 1, 0.5).unwrap();
        assert_eq!(w.w, vec![0.0, 0.5, 0.5]);
        assert_eq!(cknn_weights(&[0.9], &[vec![1.9]], &ds, 2, 1.0).unwrap().w, knn_weights(&[0.9], &ds, 2).unwrap().w);
        let two = cknn_weights(&[0.0], &[vec![1.9], vec![1.9]], &ds, 2, 0.0).unwrap();
        assert_eq!(two.w, knn_weights(&[1.9], &ds, 2).unwrap().w);
        assert!(cknn_weights(&[0.0], &[], &ds, 1, 1.5).is_err());
    }

    #[test]
    fn ties_go_to_lower_index() {
        let ds = line(&[1.0, 0.0, 1.0, 2.0]);
        assert_eq!(knn_neighbors(&[1.0], &ds, 2, None).unwrap(), vec![0, 2]);
        assert_eq!(knn_neighbors(&[0.5], &ds, 1, None).unwrap(), vec![0]);
    }

    #[test]
    fn leave_one_out_skips_the_query_sample() {
        let ds = line(&[0.0, 1.0, 2.0]);
        let cfg = WeightConfig { k: 1, gamma: 1.0, leave_one_out: true };
        let w = cknn_weights_with(&[1.0], &[], &ds, &cfg, Some(1)).unwrap();
        assert_eq!(w.w, vec![1.0, 0.0, 0.0]);
    }
}
