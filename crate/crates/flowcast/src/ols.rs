//! Per-series least squares fitting and recursive multi-step prediction.
//!
//! The solver goes through a singular value decomposition rather than the
//! textbook normal equations: rank-deficient designs (short windows can make
//! lag and trend columns collinear) get the minimum-norm solution with the
//! effective rank reported, and fitting keeps going instead of aborting a
//! cross-validation sweep.

use crate::design::{fill_forecast_row, DesignConfig, DesignMatrix};
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Fitted model state for one series.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub coefficients: Vec<f64>,
    /// Row-aligned residuals, response minus fitted.
    pub residuals: Vec<f64>,
    /// Row-aligned hat-matrix diagonal entries, each in [0, 1].
    pub leverages: Vec<f64>,
    /// Effective rank of the design.
    pub rank: usize,
    /// Residual variance estimate, sum of squares over (rows - rank).
    pub sigma2: f64,
    /// Absolute time index of each retained design row.
    pub time_offsets: Vec<i64>,
}

impl FitResult {
    pub fn is_rank_deficient(&self, width: usize) -> bool {
        self.rank < width
    }
}

/// Fits the design by minimum-norm least squares.
pub fn fit(dm: &DesignMatrix) -> Result<FitResult> {
    let rows = dm.rows();
    let p = dm.width();
    if rows == 0 || p == 0 {
        return Err(Error::DegenerateFit(format!("{rows}x{p} design")));
    }
    if dm.values.iter().any(|v| !v.is_finite())
        || dm.response.iter().any(|v| !v.is_finite())
    {
        return Err(Error::NonFiniteInput);
    }

    let y = DVector::from_column_slice(&dm.response);
    let svd = dm.values.clone().svd(true, true);
    let sigma_max = svd.singular_values.max();
    let eps = f64::EPSILON * rows.max(p) as f64 * sigma_max.max(1.0);
    let rank = svd.singular_values.iter().filter(|&&s| s > eps).count();
    if rank == 0 {
        return Err(Error::DegenerateFit("design has rank zero".into()));
    }
    if rank < p {
        log::warn!("rank-deficient design ({rank} < {p}); using minimum-norm solution");
    }

    let beta = svd
        .solve(&y, eps)
        .map_err(|e| Error::DegenerateFit(e.to_string()))?;

    let fitted = &dm.values * &beta;
    let residuals: Vec<f64> = dm
        .response
        .iter()
        .zip(fitted.iter())
        .map(|(y, f)| y - f)
        .collect();

    // Leverages are squared row norms of the rank-retained orthogonal factor.
    let u = svd.u.as_ref().expect("svd computed with u");
    let mut leverages = vec![0.0; rows];
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > eps {
            for j in 0..rows {
                leverages[j] += u[(j, k)] * u[(j, k)];
            }
        }
    }
    for h in &mut leverages {
        *h = h.clamp(0.0, 1.0);
    }

    let ss: f64 = residuals.iter().map(|e| e * e).sum();
    let sigma2 = if rows > rank {
        ss / (rows - rank) as f64
    } else {
        0.0
    };

    Ok(FitResult {
        coefficients: beta.as_slice().to_vec(),
        residuals,
        leverages,
        rank,
        sigma2,
        time_offsets: dm.time_offsets.clone(),
    })
}

/// Forecasts `h` steps past the end of `history`, feeding each forecast back
/// into the lagged regressors of later steps.
pub fn predict_recursive(
    fit: &FitResult,
    history: &[f64],
    history_t0: i64,
    cfg: &DesignConfig,
    h: usize,
) -> Result<Vec<f64>> {
    if h == 0 {
        return Err(Error::InvalidInput("forecast horizon must be >= 1".into()));
    }
    if fit.coefficients.len() != cfg.width() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} coefficients", cfg.width()),
            actual: format!("{}", fit.coefficients.len()),
        });
    }
    let mut buf = history.to_vec();
    let mut row = vec![0.0; cfg.width()];
    let mut out = Vec::with_capacity(h);
    for _ in 0..h {
        let t = history_t0 + buf.len() as i64;
        fill_forecast_row(&mut row, &buf, history_t0, t, cfg)?;
        let value: f64 = row
            .iter()
            .zip(&fit.coefficients)
            .map(|(x, b)| x * b)
            .sum();
        buf.push(value);
        out.push(value);
    }
    Ok(out)
}
