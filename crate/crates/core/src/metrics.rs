//! Goodness-of-fit statistics and lagged cross-correlation.
//!
//! All standard deviations use the population convention (divide by N), so a
//! series correlated with itself at zero lag gives exactly 1.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("series is empty")]
    EmptySeries,
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("observed series is constant")]
    ConstantObserved,
    #[error("correlation is undefined: nash = {0} < 0")]
    Undefined(f64),
    #[error("index of agreement denominator is zero")]
    DegenerateDenominator,
    #[error("lag {lag} is not smaller than series length {n}")]
    LagTooLarge { lag: i64, n: usize },
    #[error("series has zero standard deviation")]
    ConstantSeries,
    #[error("need at least {0} points")]
    TooShort(usize),
}

/// A non-empty series of finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct Series(Vec<f64>);

impl Series {
    pub fn new(values: Vec<f64>) -> Result<Self, MetricsError> {
        if values.is_empty() {
            return Err(MetricsError::EmptySeries);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(MetricsError::NonFinite(i));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.0.iter().sum::<f64>() / self.0.len() as f64
    }

    /// Population standard deviation.
    pub fn std(&self) -> f64 {
        let m = self.mean();
        (self.0.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / self.0.len() as f64).sqrt()
    }
}

impl TryFrom<Vec<f64>> for Series {
    type Error = MetricsError;
    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Series::new(v)
    }
}

impl TryFrom<&[f64]> for Series {
    type Error = MetricsError;
    fn try_from(v: &[f64]) -> Result<Self, Self::Error> {
        Series::new(v.to_vec())
    }
}

fn paired<'a>(obs: &'a Series, pred: &'a Series) -> Result<(&'a [f64], &'a [f64]), MetricsError> {
    if obs.len() != pred.len() {
        return Err(MetricsError::LengthMismatch(obs.len(), pred.len()));
    }
    Ok((obs.values(), pred.values()))
}

fn sse(o: &[f64], p: &[f64]) -> f64 {
    o.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum()
}

fn sst(o: &[f64], mean: f64) -> f64 {
    o.iter().map(|a| (a - mean) * (a - mean)).sum()
}

pub fn rmse(obs: &Series, pred: &Series) -> Result<f64, MetricsError> {
    let (o, p) = paired(obs, pred)?;
    Ok((sse(o, p) / o.len() as f64).sqrt())
}

/// Nash-Sutcliffe efficiency: `1 - SSE / SST`.
pub fn nash(obs: &Series, pred: &Series) -> Result<f64, MetricsError> {
    let (o, p) = paired(obs, pred)?;
    let denom = sst(o, obs.mean());
    if denom == 0.0 {
        return Err(MetricsError::ConstantObserved);
    }
    Ok(1.0 - sse(o, p) / denom)
}

/// `sqrt((SST - SSE) / SST)`; undefined when the radicand is negative.
pub fn r_coef(obs: &Series, pred: &Series) -> Result<f64, MetricsError> {
    let ns = nash(obs, pred)?;
    if ns < 0.0 {
        return Err(MetricsError::Undefined(ns));
    }
    Ok(ns.sqrt())
}

/// Willmott's index of agreement.
pub fn ia(obs: &Series, pred: &Series) -> Result<f64, MetricsError> {
    let (o, p) = paired(obs, pred)?;
    let mean = obs.mean();
    let denom: f64 = o
        .iter()
        .zip(p)
        .map(|(a, b)| {
            let s = (b - mean).abs() + (a - mean).abs();
            s * s
        })
        .sum();
    if denom == 0.0 {
        return Err(MetricsError::DegenerateDenominator);
    }
    // |p - o| <= |p - mean| + |o - mean| termwise, so the ratio is at most 1;
    // rounding can overshoot when every pair straddles the mean.
    Ok((1.0 - sse(o, p) / denom).max(0.0))
}

/// Pearson-style cross-correlation between `y` and `x` at lag `k`.
///
/// For `k >= 0` the products pair `y[t]` with `x[t + k]`; for `k < 0` they
/// pair `y[t]` with `x[t + k]` for `t >= -k`. Both branches divide by the
/// full length N and use means/stds over the whole series.
pub fn cross_correlation(y: &Series, x: &Series, k: i64) -> Result<f64, MetricsError> {
    let (yv, xv) = (y.values(), x.values());
    if yv.len() != xv.len() {
        return Err(MetricsError::LengthMismatch(yv.len(), xv.len()));
    }
    let n = yv.len();
    if k.unsigned_abs() >= n as u64 {
        return Err(MetricsError::LagTooLarge { lag: k, n });
    }
    let (sy, sx) = (y.std(), x.std());
    if sy == 0.0 || sx == 0.0 {
        return Err(MetricsError::ConstantSeries);
    }
    let (my, mx) = (y.mean(), x.mean());
    let shift = k.unsigned_abs() as usize;
    let acc: f64 = if k >= 0 {
        yv[..n - shift]
            .iter()
            .zip(&xv[shift..])
            .map(|(a, b)| (a - my) * (b - mx))
            .sum()
    } else {
        yv[shift..]
            .iter()
            .zip(&xv[..n - shift])
            .map(|(a, b)| (a - my) * (b - mx))
            .sum()
    };
    Ok(acc / n as f64 / (sy * sx))
}

/// Correlation between `y[t]` and `x[t - k]`: how strongly `y` follows `x`
/// with a delay of `k` samples.
pub fn delayed_correlation(y: &Series, x: &Series, k: usize) -> Result<f64, MetricsError> {
    cross_correlation(y, x, -(k as i64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagScan {
    /// `correlations[k]` is the correlation of `y[t]` with `x[t - k]`.
    pub correlations: Vec<f64>,
    pub chosen_lag: usize,
}

/// Scans delays `0..=k_max` and picks the one with the largest (signed)
/// correlation, preferring the smaller delay on ties.
pub fn select_lag(y: &Series, x: &Series, k_max: usize) -> Result<LagScan, MetricsError> {
    if k_max >= y.len() {
        return Err(MetricsError::LagTooLarge {
            lag: k_max as i64,
            n: y.len(),
        });
    }
    let correlations = (0..=k_max)
        .map(|k| delayed_correlation(y, x, k))
        .collect::<Result<Vec<_>, _>>()?;
    let mut chosen_lag = 0;
    for (k, c) in correlations.iter().enumerate() {
        if *c > correlations[chosen_lag] {
            chosen_lag = k;
        }
    }
    Ok(LagScan {
        correlations,
        chosen_lag,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub mean_obs: f64,
    pub std_obs: f64,
    pub mean_pred: f64,
    pub std_pred: f64,
    pub rmse: f64,
    pub nash: f64,
    pub ia: f64,
    /// `None` when the correlation is undefined (nash < 0).
    pub r: Option<f64>,
    pub r_undefined: bool,
}

pub fn evaluate(obs: &Series, pred: &Series) -> Result<MetricsReport, MetricsError> {
    paired(obs, pred)?;
    if obs.len() < 2 {
        return Err(MetricsError::TooShort(2));
    }
    let r = match r_coef(obs, pred) {
        Ok(r) => Some(r),
        Err(MetricsError::Undefined(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(MetricsReport {
        n: obs.len(),
        mean_obs: obs.mean(),
        std_obs: obs.std(),
        mean_pred: pred.mean(),
        std_pred: pred.std(),
        rmse: rmse(obs, pred)?,
        nash: nash(obs, pred)?,
        ia: ia(obs, pred)?,
        r_undefined: r.is_none(),
        r,
    })
}
