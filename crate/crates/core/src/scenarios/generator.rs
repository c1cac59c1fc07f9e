//! Seeded synthetic community data.
//!
//! Every day has one latent weather/calendar state shared by the whole
//! community. Each prosumer observes it through its own noisy sensors, so
//! neighbors' covariates carry extra information about the common state.
//! Real-time prices are community-wide:
//! `c_q[h] = clamp(price_base[h] + premium + θᵀx̃ + N(0, noise_std), c_min, c_max)`,
//! where `x̃` is the latent covariate mapped through fixed reference
//! centers and scales (see [`REFERENCE`]).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DataError, Dataset, Outcome, Provenance, Sample};
use crate::model::{BalanceMode, ProsumerParams};

pub const FEATURES: [&str; 5] = ["tod", "dow", "temperature", "cloud", "irradiance"];

/// (center, scale) per feature; `θ` acts on `(x − center) / scale`.
pub const REFERENCE: [(f64, f64); 5] = [(0.0, 1.0), (3.0, 2.0), (25.0, 5.0), (50.0, 30.0), (600.0, 250.0)];

const TEMP_MEAN: f64 = 25.0;
const TEMP_SD: f64 = 4.0;
const TEMP_AR: f64 = 0.7;
const COOLING_THRESHOLD: f64 = 22.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub samples: usize,
    pub horizon: usize,
    pub price_base: Vec<f64>,
    /// Weights on the normalized covariates, one per entry of [`FEATURES`].
    pub price_sensitivity: Vec<f64>,
    pub noise_std: f64,
    /// Mean markup of real-time over day-ahead prices (¢/kWh).
    #[serde(default)]
    pub realtime_premium: f64,
    pub c_min: f64,
    pub c_max: f64,
    /// P2P price as a blend `mix·c_q + (1−mix)·c_p` of real-time and
    /// day-ahead prices.
    pub p2p_mix: f64,
    /// Quadratic wheeling cost on P2P trades; keeps the trade allocation
    /// unique when neighbors face the same marginal price.
    pub trade_penalty: f64,
    /// Per-feature sensor noise in normalized units, one per entry of
    /// [`FEATURES`].
    pub covariate_noise: Vec<f64>,
    /// Emit PV and load trajectories as uncertain outcomes.
    pub include_loads: bool,
    /// Range of peak PV capacities across prosumers (kW).
    pub pv_capacity: (f64, f64),
    /// Relative day-level PV noise not explained by covariates.
    pub pv_noise: f64,
    /// Must-run load shape over the day; rescaled to the energy implied by
    /// `shiftable_fraction`.
    pub load_profile: Vec<f64>,
    /// Relative mid-day load increase per °C above 22 °C.
    pub cooling_amplitude: f64,
    pub load_noise: f64,
    /// Share of total consumption that is shiftable, in [0.1, 0.5].
    pub shiftable_fraction: f64,
    /// Shiftable energy per day (kWh).
    pub shiftable_energy: f64,
}

fn hour_of(h: usize, horizon: usize) -> f64 {
    (h as f64 + 0.5) * 24.0 / horizon as f64
}

fn pv_shape(hour: f64) -> f64 {
    if (6.0..18.0).contains(&hour) {
        (std::f64::consts::PI * (hour - 6.0) / 12.0).sin()
    } else {
        0.0
    }
}

fn cooling_shape(hour: f64) -> f64 {
    (-((hour - 15.0) / 3.0).powi(2)).exp()
}

impl GeneratorConfig {
    /// Default 24-hour-style profiles sampled at `horizon` steps.
    pub fn with_horizon(samples: usize, horizon: usize) -> Self {
        let hours: Vec<f64> = (0..horizon).map(|h| hour_of(h, horizon)).collect();
        let price_base = hours
            .iter()
            .map(|&t| {
                let evening = 3.2 * (-((t - 19.5) / 2.5).powi(2)).exp();
                let morning = 1.2 * (-((t - 8.0) / 2.0).powi(2)).exp();
                let night = if !(6.0..22.0).contains(&t) { -0.8 } else { 0.0 };
                5.2 + evening + morning + night
            })
            .collect();
        let load_profile = hours
            .iter()
            .map(|&t| 0.6 + 0.5 * (-((t - 8.0) / 2.0).powi(2)).exp() + 0.9 * (-((t - 19.5) / 2.5).powi(2)).exp())
            .collect();
        Self {
            samples,
            horizon,
            price_base,
            price_sensitivity: vec![0.0, -0.5, 2.5, 0.8, -1.0],
            noise_std: 0.4,
            realtime_premium: 0.5,
            c_min: 3.0,
            c_max: 9.0,
            p2p_mix: 0.5,
            trade_penalty: 0.05,
            covariate_noise: vec![0.0, 0.0, 1.2, 1.2, 1.2],
            include_loads: true,
            pv_capacity: (10.0, 60.0),
            pv_noise: 0.5,
            load_profile,
            cooling_amplitude: 0.05,
            load_noise: 0.2,
            shiftable_fraction: 0.3,
            shiftable_energy: 150.0,
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::Config(m));
        if self.samples == 0 || self.horizon == 0 {
            return bad("samples and horizon must be positive".into());
        }
        if !(self.c_min < self.c_max) {
            return bad(format!("c_min {} must be below c_max {}", self.c_min, self.c_max));
        }
        if self.price_base.len() != self.horizon || self.load_profile.len() != self.horizon {
            return bad(format!("price_base and load_profile need {} entries", self.horizon));
        }
        if self.price_sensitivity.len() != FEATURES.len() || self.covariate_noise.len() != FEATURES.len() {
            return bad(format!("price_sensitivity and covariate_noise need {} entries", FEATURES.len()));
        }
        if self.covariate_noise.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("covariate_noise must be finite and non-negative".into());
        }
        if !(0.1..=0.5).contains(&self.shiftable_fraction) {
            return bad(format!("shiftable_fraction {} outside [0.1, 0.5]", self.shiftable_fraction));
        }
        if !(self.trade_penalty >= 0.0 && self.trade_penalty.is_finite()) {
            return bad(format!("trade_penalty must be a non-negative number, got {}", self.trade_penalty));
        }
        if !(0.0..=1.0).contains(&self.p2p_mix) {
            return bad(format!("p2p_mix {} outside [0, 1]", self.p2p_mix));
        }
        let nonneg = [
            ("noise_std", self.noise_std),
            ("realtime_premium", self.realtime_premium),
            ("pv_noise", self.pv_noise),
            ("cooling_amplitude", self.cooling_amplitude),
            ("load_noise", self.load_noise),
            ("shiftable_energy", self.shiftable_energy),
            ("pv_capacity.0", self.pv_capacity.0),
        ];
        if let Some((name, v)) = nonneg.iter().find(|(_, v)| !(v.is_finite() && *v >= 0.0)) {
            return bad(format!("{name} must be finite and non-negative, got {v}"));
        }
        if !(self.pv_capacity.0 <= self.pv_capacity.1) {
            return bad("pv_capacity range is reversed".into());
        }
        if self.load_profile.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || self.load_profile.iter().sum::<f64>() <= 0.0 {
            return bad("load_profile must be non-negative with positive total".into());
        }
        Ok(())
    }

    pub fn sha256(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }

    fn day_ahead_prices(&self) -> Vec<f64> {
        self.price_base.iter().map(|c| c.clamp(self.c_min, self.c_max)).collect()
    }
}

/// Parameters and time-aligned datasets of a whole community. Sample `i`
/// of every dataset is the same day.
#[derive(Clone, Debug)]
pub struct Community {
    pub params: Vec<ProsumerParams>,
    pub datasets: Vec<Dataset>,
    /// Latent covariate of each day.
    pub latent: Vec<Vec<f64>>,
}

struct Prosumer {
    pv_cap: f64,
    load_scale: f64,
}

/// Generates `cfg.samples` days for a community with the given symmetric
/// neighbor lists.
pub fn generate_community(seed: u64, cfg: &GeneratorConfig, neighbors: &[Vec<usize>]) -> Result<Community, DataError> {
    cfg.validate()?;
    let n = neighbors.len();
    if n == 0 {
        return Err(DataError::Config("community needs at least one prosumer".into()));
    }
    for (a, nb) in neighbors.iter().enumerate() {
        if nb.iter().any(|&b| b >= n || b == a || !neighbors[b].contains(&a)) {
            return Err(DataError::Config(format!("neighbor list of prosumer {a} is not a symmetric simple graph")));
        }
    }
    let h_n = cfg.horizon;
    let dt = 24.0 / h_n as f64;
    let hours: Vec<f64> = (0..h_n).map(|h| hour_of(h, h_n)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let gauss = |rng: &mut ChaCha8Rng| -> f64 { std_normal.sample(rng) };

    let shape_energy: f64 = cfg.load_profile.iter().sum::<f64>() * dt;
    let must_run = cfg.shiftable_energy * (1.0 - cfg.shiftable_fraction) / cfg.shiftable_fraction;
    let people: Vec<Prosumer> = (0..n)
        .map(|_| Prosumer {
            pv_cap: rng.random_range(cfg.pv_capacity.0..=cfg.pv_capacity.1),
            load_scale: must_run / shape_energy * rng.random_range(0.8..=1.2),
        })
        .collect();

    let c_p = cfg.day_ahead_prices();
    let d0 = rng.random_range(0..7usize);
    let mut temp = TEMP_MEAN + TEMP_SD * gauss(&mut rng);
    let innovation = TEMP_SD * (1.0 - TEMP_AR * TEMP_AR).sqrt();
    let mut latent = Vec::with_capacity(cfg.samples);
    let mut samples: Vec<Vec<Sample>> = vec![Vec::with_capacity(cfg.samples); n];

    for day in 0..cfg.samples {
        if day > 0 {
            temp = TEMP_MEAN + TEMP_AR * (temp - TEMP_MEAN) + innovation * gauss(&mut rng);
        }
        let issue_hour = rng.random_range(0..24usize) as f64;
        let tod = (2.0 * std::f64::consts::PI * issue_hour / 24.0).sin();
        let dow = ((d0 + day) % 7) as f64;
        let cloud: f64 = rng.random_range(0.0..100.0);
        let irradiance = (950.0 * (1.0 - 0.7 * cloud / 100.0) + 40.0 * gauss(&mut rng)).clamp(50.0, 1100.0);
        let truth = vec![tod, dow, temp, cloud, irradiance];

        let signal: f64 = truth
            .iter()
            .zip(REFERENCE)
            .zip(&cfg.price_sensitivity)
            .map(|((x, (c, s)), th)| th * (x - c) / s)
            .sum();
        let c_q: Vec<f64> = cfg
            .price_base
            .iter()
            .map(|b| (b + cfg.realtime_premium + signal + cfg.noise_std * gauss(&mut rng)).clamp(cfg.c_min, cfg.c_max))
            .collect();
        let c_nm_row: Vec<f64> = c_q
            .iter()
            .zip(&c_p)
            .map(|(q, p)| cfg.p2p_mix * q + (1.0 - cfg.p2p_mix) * p)
            .collect();

        for (a, who) in people.iter().enumerate() {
            let mut x = truth.clone();
            for f in 0..FEATURES.len() {
                if cfg.covariate_noise[f] > 0.0 {
                    x[f] += cfg.covariate_noise[f] * REFERENCE[f].1 * gauss(&mut rng);
                }
            }
            let pv_day = (1.0 + cfg.pv_noise * gauss(&mut rng)).max(0.0);
            let p_g: Vec<f64> = hours
                .iter()
                .map(|&t| {
                    let hourly = (1.0 + 0.5 * cfg.pv_noise * gauss(&mut rng)).max(0.0);
                    who.pv_cap * irradiance / 1000.0 * pv_shape(t) * pv_day * hourly
                })
                .collect();
            let load_day = 1.0 + cfg.load_noise * gauss(&mut rng);
            let heat = (temp - COOLING_THRESHOLD).max(0.0);
            let p_l: Vec<f64> = hours
                .iter()
                .zip(&cfg.load_profile)
                .map(|(&t, base)| {
                    let hourly = 1.0 + 0.5 * cfg.load_noise * gauss(&mut rng);
                    (who.load_scale * base * (1.0 + cfg.cooling_amplitude * heat * cooling_shape(t)) * load_day * hourly).max(0.0)
                })
                .collect();
            let (p_g, p_l) = if cfg.include_loads { (Some(p_g), Some(p_l)) } else { (None, None) };
            samples[a].push(Sample {
                x,
                y: Outcome { c_q: c_q.clone(), c_nm: vec![c_nm_row.clone(); neighbors[a].len()], p_g, p_l },
            });
        }
        latent.push(truth);
    }

    let provenance = Provenance::Generator { seed, config_sha256: cfg.sha256() };
    let names: Vec<String> = FEATURES.iter().map(|s| s.to_string()).collect();
    let datasets = samples
        .into_iter()
        .map(|s| Dataset::new(names.clone(), s, provenance.clone()))
        .collect::<Result<Vec<_>, _>>()?;

    // nominal profiles at the climatological center
    let nominal_heat = TEMP_MEAN - COOLING_THRESHOLD;
    let pref_total: f64 = cfg.load_profile.iter().sum::<f64>() * dt;
    let params = people
        .iter()
        .enumerate()
        .map(|(a, who)| {
            let mut p = ProsumerParams::table_one(a);
            p.horizon = h_n;
            p.dt = dt;
            p.c_s = cfg.shiftable_energy;
            p.p_s_ref = cfg.load_profile.iter().map(|b| cfg.shiftable_energy * b / pref_total).collect();
            p.c_p_mt = c_p.clone();
            p.p_g = hours.iter().map(|&t| who.pv_cap * REFERENCE[4].0 / 1000.0 * pv_shape(t)).collect();
            p.p_l = hours
                .iter()
                .zip(&cfg.load_profile)
                .map(|(&t, b)| who.load_scale * b * (1.0 + cfg.cooling_amplitude * nominal_heat * cooling_shape(t)))
                .collect();
            p.neighbors = neighbors[a].clone();
            p.trade_penalty = cfg.trade_penalty;
            // purchases only; surplus is curtailed. The real-time cap is
            // loose enough that any first stage stays recoverable.
            p.q_mt_bounds = (0.0, 200.0);
            p.p_mt_bounds = (0.0, 100.0);
            p.balance = BalanceMode::Surplus;
            p
        })
        .collect();
    Ok(Community { params, datasets, latent })
}

/// One prosumer's dataset, generated as the hub of a star with
/// `n_neighbors` peers.
pub fn generate_synthetic(seed: u64, cfg: &GeneratorConfig, n_neighbors: usize) -> Result<Dataset, DataError> {
    let mut nb = vec![(1..=n_neighbors).collect::<Vec<_>>()];
    nb.extend((1..=n_neighbors).map(|_| vec![0]));
    Ok(generate_community(seed, cfg, &nb)?.datasets.swap_remove(0))
}
