//! Seeded synthetic weather and water-temperature series.
//!
//! Air temperature follows a slow seasonal cycle plus a daily cycle plus
//! Gaussian noise; rainfall is zero most hours and uniform otherwise. Water
//! temperature is a noisy linear response to current air temperature, air
//! temperature `lag` hours earlier and log-rainfall:
//!
//! `WT = 0.8 TM + 0.15 TM[t - lag] - 0.3 ln(1 + RF) + 5 + N(0, sd)`

use chrono::Duration;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::ann::{Dataset, Sample};
use crate::types::{DataPoint, Timestamp};

#[derive(Debug, Clone)]
pub struct WeatherConfig {
    pub hours: usize,
    pub seed: u64,
    pub start: Timestamp,
    pub tm_base: f64,
    pub seasonal_amplitude: f64,
    pub seasonal_period_hours: f64,
    pub diurnal_amplitude: f64,
    pub tm_noise_sd: f64,
    pub rain_probability: f64,
    pub rain_max: f64,
}

impl WeatherConfig {
    pub fn new(hours: usize, seed: u64, start: Timestamp) -> Self {
        Self {
            hours,
            seed,
            start,
            tm_base: 17.0,
            seasonal_amplitude: 8.0,
            seasonal_period_hours: 960.0,
            diurnal_amplitude: 4.0,
            tm_noise_sd: 1.5,
            rain_probability: 0.15,
            rain_max: 20.0,
        }
    }
}

/// Hourly air temperature (°C) and rainfall (mm) starting at `start`.
#[derive(Debug, Clone, PartialEq)]
pub struct Weather {
    pub start: Timestamp,
    pub tm: Vec<f64>,
    pub rf: Vec<f64>,
}

impl Weather {
    pub fn generate(cfg: &WeatherConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let noise = Normal::new(0.0, cfg.tm_noise_sd).expect("finite sd");
        let tau = std::f64::consts::TAU;
        let mut tm = Vec::with_capacity(cfg.hours);
        let mut rf = Vec::with_capacity(cfg.hours);
        for t in 0..cfg.hours {
            let t = t as f64;
            tm.push(
                cfg.tm_base
                    + cfg.seasonal_amplitude * (tau * t / cfg.seasonal_period_hours).sin()
                    + cfg.diurnal_amplitude * (tau * t / 24.0).sin()
                    + noise.sample(&mut rng),
            );
            let wet = rng.random_bool(cfg.rain_probability);
            let amount = rng.random_range(0.0..cfg.rain_max);
            rf.push(if wet { amount } else { 0.0 });
        }
        Self {
            start: cfg.start,
            tm,
            rf,
        }
    }

    pub fn len(&self) -> usize {
        self.tm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tm.is_empty()
    }

    pub fn timestamp(&self, i: usize) -> Timestamp {
        self.start + Duration::hours(i as i64)
    }

    pub fn tm_points(&self, stream: &str) -> Vec<DataPoint> {
        self.tm
            .iter()
            .enumerate()
            .map(|(i, &v)| DataPoint::new(stream, self.timestamp(i), v))
            .collect()
    }

    pub fn rf_points(&self, stream: &str) -> Vec<DataPoint> {
        self.rf
            .iter()
            .enumerate()
            .map(|(i, &v)| DataPoint::new(stream, self.timestamp(i), v))
            .collect()
    }
}

/// Noise-free part of the water-temperature response.
pub fn wt_response(tm: f64, tm_lag: f64, rf: f64) -> f64 {
    0.8 * tm + 0.15 * tm_lag - 0.3 * (1.0 + rf).ln() + 5.0
}

/// One training row: the three model inputs and the water temperature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WtRow {
    pub tm: f64,
    pub tm_lag: f64,
    pub rf: f64,
    pub wt: f64,
}

impl WtRow {
    /// Inputs in model slot order: air temperature, rainfall, lagged air
    /// temperature.
    pub fn inputs(&self) -> Vec<f64> {
        vec![self.tm, self.rf, self.tm_lag]
    }
}

/// Rows for hours `lag..weather.len()`, with WT noise drawn from `seed`.
pub fn wt_rows(weather: &Weather, lag: usize, noise_sd: f64, seed: u64) -> Vec<WtRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_sd).expect("finite sd");
    (lag..weather.len())
        .map(|t| {
            let (tm, tm_lag, rf) = (weather.tm[t], weather.tm[t - lag], weather.rf[t]);
            WtRow {
                tm,
                tm_lag,
                rf,
                wt: wt_response(tm, tm_lag, rf) + noise.sample(&mut rng),
            }
        })
        .collect()
}

/// The reference dataset: `rows` hourly records with a 17-hour lag,
/// split `train_len` / rest in time order.
pub fn wt_dataset(rows: usize, train_len: usize, seed: u64) -> Dataset {
    let start = crate::types::parse_ts("2012-01-01T00:00:00Z").expect("valid literal");
    let weather = Weather::generate(&WeatherConfig::new(rows + 17, seed, start));
    let samples: Vec<Sample> = wt_rows(&weather, 17, 0.5, seed ^ 0x5eed)
        .into_iter()
        .map(|r| Sample::new(r.inputs(), r.wt))
        .collect();
    Dataset::new(samples)
        .expect("generated rows are finite and uniform")
        .with_split(train_len)
}

/// `y(t) = x(t - lag) + N(0, noise_sd)` with `x` a smooth random signal
/// (AR(1) plus daily cycle). Returns `(y, x)`, both of length `n`.
pub fn lagged_pair(n: usize, lag: usize, noise_sd: f64, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shock = Normal::new(0.0, 1.0).expect("unit normal");
    let noise = Normal::new(0.0, noise_sd).expect("finite sd");
    let total = n + lag;
    let mut ar = 0.0;
    let base: Vec<f64> = (0..total)
        .map(|t| {
            ar = 0.7 * ar + shock.sample(&mut rng);
            ar + 2.0 * (std::f64::consts::TAU * t as f64 / 24.0).sin()
        })
        .collect();
    let x = base[lag..].to_vec();
    let y = (0..n).map(|t| base[t] + noise.sample(&mut rng)).collect();
    (y, x)
}
