//! Regression design: intercept, linear trend, daily/weekly Fourier terms,
//! and lagged response columns.
//!
//! Missing observations are marked with `NaN` and handled by listwise row
//! deletion: a row is kept only if its response and every lagged value are
//! present. The time index is absolute (hours since the series origin) so
//! that Fourier phase and trend are comparable across training windows.

use crate::error::{Error, Result};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

pub const DAILY_PERIOD: f64 = 24.0;
pub const WEEKLY_PERIOD: f64 = 168.0;

/// Configuration of the regression design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignConfig {
    /// Number of daily Fourier harmonics (period 24 h).
    pub daily_order: usize,
    /// Number of weekly Fourier harmonics (period 168 h).
    pub weekly_order: usize,
    /// Lagged-response offsets in hours; sorted, distinct, >= 1.
    pub lags: Vec<usize>,
    pub include_trend: bool,
    pub include_intercept: bool,
}

impl Default for DesignConfig {
    fn default() -> Self {
        Self {
            daily_order: 3,
            weekly_order: 2,
            lags: vec![1, 24],
            include_trend: true,
            include_intercept: true,
        }
    }
}

impl DesignConfig {
    /// Number of regressor columns.
    pub fn width(&self) -> usize {
        usize::from(self.include_intercept)
            + usize::from(self.include_trend)
            + 2 * self.daily_order
            + 2 * self.weekly_order
            + self.lags.len()
    }

    pub fn max_lag(&self) -> usize {
        self.lags.iter().copied().max().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        for pair in self.lags.windows(2) {
            if pair[0] >= pair[1] {
                return Err(Error::InvalidInput(
                    "lags must be sorted and distinct".into(),
                ));
            }
        }
        if self.lags.first().is_some_and(|&l| l == 0) {
            return Err(Error::InvalidInput("lags must be >= 1".into()));
        }
        Ok(())
    }

    pub fn column_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.width());
        if self.include_intercept {
            names.push("intercept".into());
        }
        if self.include_trend {
            names.push("trend".into());
        }
        for k in 1..=self.daily_order {
            names.push(format!("sin24_{k}"));
        }
        for k in 1..=self.daily_order {
            names.push(format!("cos24_{k}"));
        }
        for k in 1..=self.weekly_order {
            names.push(format!("sin168_{k}"));
        }
        for k in 1..=self.weekly_order {
            names.push(format!("cos168_{k}"));
        }
        for lag in &self.lags {
            names.push(format!("lag_{lag}"));
        }
        names
    }
}

/// A fully materialized design with its aligned response.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    pub values: DMatrix<f64>,
    pub column_names: Vec<String>,
    pub response: Vec<f64>,
    /// Absolute time index of each retained row.
    pub time_offsets: Vec<i64>,
}

impl DesignMatrix {
    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn width(&self) -> usize {
        self.values.ncols()
    }
}

/// Writes the deterministic (non-lag) regressors for absolute time `t`.
fn fill_deterministic(row: &mut [f64], t: i64, cfg: &DesignConfig) {
    let tf = t as f64;
    let mut c = 0;
    if cfg.include_intercept {
        row[c] = 1.0;
        c += 1;
    }
    if cfg.include_trend {
        row[c] = tf;
        c += 1;
    }
    for k in 1..=cfg.daily_order {
        row[c] = (TAU * k as f64 * tf / DAILY_PERIOD).sin();
        c += 1;
    }
    for k in 1..=cfg.daily_order {
        row[c] = (TAU * k as f64 * tf / DAILY_PERIOD).cos();
        c += 1;
    }
    for k in 1..=cfg.weekly_order {
        row[c] = (TAU * k as f64 * tf / WEEKLY_PERIOD).sin();
        c += 1;
    }
    for k in 1..=cfg.weekly_order {
        row[c] = (TAU * k as f64 * tf / WEEKLY_PERIOD).cos();
        c += 1;
    }
    debug_assert_eq!(c + cfg.lags.len(), cfg.width());
}

/// Builds the design matrix for series `y` whose first element sits at
/// absolute time `t0`. Rows with a missing response or any missing lag are
/// dropped entirely.
pub fn build_design(y: &[f64], t0: i64, cfg: &DesignConfig) -> Result<DesignMatrix> {
    cfg.validate()?;
    let p = cfg.width();
    let max_lag = cfg.max_lag();
    let lag_cols = p - cfg.lags.len();

    let mut kept = Vec::new();
    for idx in max_lag..y.len() {
        let complete =
            y[idx].is_finite() && cfg.lags.iter().all(|&lag| y[idx - lag].is_finite());
        if complete {
            kept.push(idx);
        }
    }
    if kept.len() < p + 1 {
        return Err(Error::TooFewRows {
            rows: kept.len(),
            needed: p + 1,
        });
    }

    let mut values = DMatrix::zeros(kept.len(), p);
    let mut response = Vec::with_capacity(kept.len());
    let mut time_offsets = Vec::with_capacity(kept.len());
    let mut row_buf = vec![0.0; p];
    for (r, &idx) in kept.iter().enumerate() {
        let t = t0 + idx as i64;
        fill_deterministic(&mut row_buf, t, cfg);
        for (c, &lag) in cfg.lags.iter().enumerate() {
            row_buf[lag_cols + c] = y[idx - lag];
        }
        for (c, &v) in row_buf.iter().enumerate() {
            values[(r, c)] = v;
        }
        response.push(y[idx]);
        time_offsets.push(t);
    }

    Ok(DesignMatrix {
        values,
        column_names: cfg.column_names(),
        response,
        time_offsets,
    })
}

/// Builds the regressor row for absolute time `t`, reading lagged values
/// from `history` (whose first element sits at `history_t0`).
///
/// During recursive multi-step forecasting `history` carries observed values
/// followed by previously forecast ones; both are read the same way.
pub fn build_forecast_row(
    history: &[f64],
    history_t0: i64,
    t: i64,
    cfg: &DesignConfig,
) -> Result<Vec<f64>> {
    let mut row = vec![0.0; cfg.width()];
    fill_forecast_row(&mut row, history, history_t0, t, cfg)?;
    Ok(row)
}

/// In-place variant of [`build_forecast_row`] for hot loops.
pub fn fill_forecast_row(
    row: &mut [f64],
    history: &[f64],
    history_t0: i64,
    t: i64,
    cfg: &DesignConfig,
) -> Result<()> {
    let p = cfg.width();
    debug_assert_eq!(row.len(), p);
    fill_deterministic(row, t, cfg);
    let lag_cols = p - cfg.lags.len();
    for (c, &lag) in cfg.lags.iter().enumerate() {
        let idx = t - lag as i64 - history_t0;
        let value = usize::try_from(idx)
            .ok()
            .and_then(|i| history.get(i))
            .copied()
            .filter(|v| v.is_finite())
            .ok_or(Error::InsufficientHistory { lag, t })?;
        row[lag_cols + c] = value;
    }
    Ok(())
}

/// Sample autocorrelation function up to `max_lag`, indexed by lag
/// (`acf[0] == 1`).
pub fn acf(y: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    if y.len() < max_lag + 2 {
        return Err(Error::SeriesTooShort {
            len: y.len(),
            needed: max_lag + 2,
        });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let denom: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if denom == 0.0 {
        return Err(Error::ConstantSeries);
    }
    let mut out = Vec::with_capacity(max_lag + 1);
    for lag in 0..=max_lag {
        let num: f64 = (lag..y.len())
            .map(|t| (y[t] - mean) * (y[t - lag] - mean))
            .sum();
        out.push(num / denom);
    }
    Ok(out)
}

/// Sample partial autocorrelation function via the Durbin-Levinson
/// recursion, indexed by lag (`pacf[0] == 1`).
pub fn pacf(y: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let r = acf(y, max_lag)?;
    let mut out = vec![1.0];
    let mut phi_prev: Vec<f64> = Vec::new();
    for k in 1..=max_lag {
        let num = r[k]
            - phi_prev
                .iter()
                .enumerate()
                .map(|(j, &p)| p * r[k - 1 - j])
                .sum::<f64>();
        let den = 1.0
            - phi_prev
                .iter()
                .enumerate()
                .map(|(j, &p)| p * r[j + 1])
                .sum::<f64>();
        if den.abs() < 1e-12 {
            return Err(Error::ConstantSeries);
        }
        let phi_kk = num / den;
        let mut phi = Vec::with_capacity(k);
        for j in 0..k - 1 {
            phi.push(phi_prev[j] - phi_kk * phi_prev[k - 2 - j]);
        }
        phi.push(phi_kk);
        out.push(phi_kk);
        phi_prev = phi;
    }
    Ok(out)
}
