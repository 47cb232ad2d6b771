//! Residual-bootstrap sample paths and percentile prediction intervals.
//!
//! Residuals are variance-equalized through the leverage adjustment
//! `s_j = e_j / sqrt(1 - h_j)` and centered; sample paths then add one
//! resampled residual per forecast step, feeding the noisy value back into
//! the lagged regressors so dispersion grows with the horizon. Intervals are
//! pointwise empirical percentiles of the reconciled paths.
//!
//! Randomness is split deterministically per (node, path): parallel and
//! sequential runs produce identical output.

use crate::design::{fill_forecast_row, DesignConfig};
use crate::error::{Error, Result};
use crate::ols::FitResult;
use crate::par;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Leverage close enough to one that the adjustment is singular; such rows
/// carry an identically-zero residual and are excluded.
const LEVERAGE_CUTOFF: f64 = 1.0 - 1e-10;

/// Centered, leverage-adjusted residuals of one fitted series.
#[derive(Debug, Clone)]
pub struct ModifiedResidualPool {
    /// Centered values `s_j - mean(s)`.
    pub values: Vec<f64>,
    /// Rows excluded because their leverage was (numerically) one.
    pub excluded: usize,
}

impl ModifiedResidualPool {
    /// A pool holding a single zero residual: paths collapse onto the point
    /// forecast. Used as a stand-in when a series cannot provide residuals.
    pub fn degenerate() -> Self {
        Self {
            values: vec![0.0],
            excluded: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Computes the centered modified residuals `s_j = e_j / sqrt(1 - h_j)`.
pub fn modified_residuals(fit: &FitResult) -> Result<ModifiedResidualPool> {
    let mut values = Vec::with_capacity(fit.residuals.len());
    let mut excluded = 0usize;
    for (e, h) in fit.residuals.iter().zip(&fit.leverages) {
        if *h >= LEVERAGE_CUTOFF {
            excluded += 1;
            continue;
        }
        values.push(e / (1.0 - h).sqrt());
    }
    if values.is_empty() {
        return Err(Error::EmptyResidualPool);
    }
    if excluded > 0 {
        log::warn!("excluded {excluded} rows with leverage 1 from the residual pool");
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    for v in &mut values {
        *v -= mean;
    }
    Ok(ModifiedResidualPool { values, excluded })
}

/// Splits a seed deterministically (splitmix64 round over the pair).
pub fn split_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9e3779b97f4a7c15);
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Per-node recursion state shared by point forecasts and sample paths: the
/// deterministic regressor contribution per step plus the lag coefficients.
pub(crate) struct PathEngine {
    det: Vec<f64>,
    lag_terms: Vec<(usize, f64)>,
    tail: Vec<f64>,
}

impl PathEngine {
    pub(crate) fn new(
        fit: &FitResult,
        history: &[f64],
        history_t0: i64,
        cfg: &DesignConfig,
        horizon: usize,
    ) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidInput("horizon must be >= 1".into()));
        }
        if fit.coefficients.len() != cfg.width() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} coefficients", cfg.width()),
                actual: format!("{}", fit.coefficients.len()),
            });
        }
        let max_lag = cfg.max_lag();
        let lag_cols = cfg.width() - cfg.lags.len();
        // Deterministic part: full forecast row with lag entries zeroed.
        let zeros = vec![0.0; max_lag.max(1)];
        let mut row = vec![0.0; cfg.width()];
        let t_end = history_t0 + history.len() as i64;
        let mut det = Vec::with_capacity(horizon);
        for j in 0..horizon {
            fill_forecast_row(&mut row, &zeros, t_end + j as i64 - zeros.len() as i64, t_end + j as i64, cfg)?;
            det.push(
                row[..lag_cols]
                    .iter()
                    .zip(&fit.coefficients[..lag_cols])
                    .map(|(x, b)| x * b)
                    .sum(),
            );
        }
        let lag_terms: Vec<(usize, f64)> = cfg
            .lags
            .iter()
            .zip(&fit.coefficients[lag_cols..])
            .map(|(&l, &b)| (l, b))
            .collect();
        // Lag reads reaching before the forecast origin come from this tail.
        if history.len() < max_lag {
            return Err(Error::InsufficientHistory {
                lag: max_lag,
                t: t_end,
            });
        }
        let tail = history[history.len() - max_lag..].to_vec();
        for (offset, v) in tail.iter().enumerate() {
            if !v.is_finite() && lag_reachable(&cfg.lags, max_lag - offset, horizon) {
                return Err(Error::InsufficientHistory {
                    lag: max_lag - offset,
                    t: t_end,
                });
            }
        }
        Ok(Self {
            det,
            lag_terms,
            tail,
        })
    }

    #[inline]
    fn lagged(&self, buf: &[f64], j: usize, lag: usize) -> f64 {
        if j >= lag {
            buf[j - lag]
        } else {
            self.tail[self.tail.len() - (lag - j)]
        }
    }

    /// One sample path into `out` (length = horizon), drawing one residual
    /// per step from `pool`.
    pub(crate) fn generate(&self, pool: &[f64], rng: &mut ChaCha8Rng, out: &mut [f64]) {
        for j in 0..self.det.len() {
            let mut v = self.det[j];
            for &(lag, coef) in &self.lag_terms {
                v += coef * self.lagged(out, j, lag);
            }
            v += pool[rng.random_range(0..pool.len())];
            out[j] = v;
        }
    }

    /// The noise-free recursion: the point forecast.
    pub(crate) fn point_forecast(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.det.len()];
        for j in 0..self.det.len() {
            let mut v = self.det[j];
            for &(lag, coef) in &self.lag_terms {
                v += coef * self.lagged(&out, j, lag);
            }
            out[j] = v;
        }
        out
    }
}

fn lag_reachable(lags: &[usize], back: usize, horizon: usize) -> bool {
    // Is the history element `back` positions before the origin ever read?
    lags.iter().any(|&l| l >= back && back + horizon > l)
}

/// Generates `k` sample paths of length `horizon` for one node.
///
/// Path `i` draws its residuals from an rng seeded by `(seed, i)`, so any
/// subset of paths can be regenerated independently.
pub fn sample_paths(
    fit: &FitResult,
    history: &[f64],
    history_t0: i64,
    cfg: &DesignConfig,
    pool: &ModifiedResidualPool,
    horizon: usize,
    k: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    if k == 0 {
        return Err(Error::InvalidInput("need at least one path".into()));
    }
    if pool.is_empty() {
        return Err(Error::EmptyResidualPool);
    }
    let engine = PathEngine::new(fit, history, history_t0, cfg, horizon)?;
    let mut out = DMatrix::zeros(k, horizon);
    let mut buf = vec![0.0; horizon];
    for path in 0..k {
        let mut rng = ChaCha8Rng::seed_from_u64(split_seed(seed, path as u64));
        engine.generate(&pool.values, &mut rng, &mut buf);
        for (j, &v) in buf.iter().enumerate() {
            out[(path, j)] = v;
        }
    }
    Ok(out)
}

/// A dense block of sample paths over all nodes: `k` paths by `n` nodes by
/// `horizon` steps, stored path-major so path ranges are contiguous.
#[derive(Debug, Clone)]
pub struct SamplePaths {
    n_nodes: usize,
    n_paths: usize,
    horizon: usize,
    values: Vec<f64>,
}

impl SamplePaths {
    pub fn zeros(n_nodes: usize, n_paths: usize, horizon: usize) -> Self {
        Self {
            n_nodes,
            n_paths,
            horizon,
            values: vec![0.0; n_nodes * n_paths * horizon],
        }
    }

    /// Wraps the paths of a single node (rows of `paths` are paths).
    pub fn from_node_matrix(paths: &DMatrix<f64>) -> Self {
        let (k, h) = (paths.nrows(), paths.ncols());
        let mut out = Self::zeros(1, k, h);
        for path in 0..k {
            for j in 0..h {
                out.set(0, path, j, paths[(path, j)]);
            }
        }
        out
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    #[inline]
    fn offset(&self, node: usize, path: usize, step: usize) -> usize {
        (path * self.n_nodes + node) * self.horizon + step
    }

    #[inline]
    pub fn get(&self, node: usize, path: usize, step: usize) -> f64 {
        self.values[self.offset(node, path, step)]
    }

    #[inline]
    pub fn set(&mut self, node: usize, path: usize, step: usize, value: f64) {
        let o = self.offset(node, path, step);
        self.values[o] = value;
    }

    /// Contiguous storage for a range of whole paths.
    pub fn paths_slice(&self, paths: std::ops::Range<usize>) -> &[f64] {
        let w = self.n_nodes * self.horizon;
        &self.values[paths.start * w..paths.end * w]
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Gathers one (node, step) cell across all paths.
    pub fn cell(&self, node: usize, step: usize, out: &mut Vec<f64>) {
        out.clear();
        out.reserve(self.n_paths);
        let w = self.n_nodes * self.horizon;
        let base = node * self.horizon + step;
        for path in 0..self.n_paths {
            out.push(self.values[base + path * w]);
        }
    }
}

/// Prediction intervals per node and horizon step at one or more levels.
#[derive(Debug, Clone)]
pub struct IntervalSet {
    /// Interval levels alpha (0.05 means a 95% interval), as configured.
    pub levels: Vec<f64>,
    /// Point forecast per node and step.
    pub point: DMatrix<f64>,
    /// Lower bounds per level, aligned with `levels`.
    pub lower: Vec<DMatrix<f64>>,
    /// Upper bounds per level, aligned with `levels`.
    pub upper: Vec<DMatrix<f64>>,
    /// Number of sample paths the percentiles were computed from.
    pub k_used: usize,
}

impl IntervalSet {
    /// Bounds at the given level, matched with a small tolerance.
    pub fn bounds(&self, level: f64) -> Result<(&DMatrix<f64>, &DMatrix<f64>)> {
        self.levels
            .iter()
            .position(|&l| (l - level).abs() < 1e-9)
            .map(|i| (&self.lower[i], &self.upper[i]))
            .ok_or(Error::UnknownLevel(level))
    }

    /// Clamps interval bounds at zero (counts cannot be negative); the point
    /// forecast is left untouched.
    pub fn clamp_nonnegative(&mut self) {
        for m in self.lower.iter_mut().chain(self.upper.iter_mut()) {
            for v in m.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
    }
}

/// Linear-interpolation (type 7) quantile of an ascending-sorted slice.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    if lo + 1 >= n {
        sorted[n - 1]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    }
}

/// Pointwise empirical percentile intervals of reconciled sample paths.
///
/// Level alpha yields the alpha/2 and 1-alpha/2 percentiles. `point` is the
/// reconciled point forecast carried alongside the bounds.
pub fn percentile_intervals(
    paths: &SamplePaths,
    levels: &[f64],
    point: DMatrix<f64>,
) -> Result<IntervalSet> {
    let k = paths.n_paths();
    for &alpha in levels {
        if !(0.0..1.0).contains(&alpha) || alpha <= 0.0 {
            return Err(Error::UnknownLevel(alpha));
        }
        if (k as f64) < 2.0 / alpha {
            return Err(Error::TooFewPaths { k, level: alpha });
        }
    }
    let (n, h) = (paths.n_nodes(), paths.horizon());
    if point.nrows() != n || point.ncols() != h {
        return Err(Error::DimensionMismatch {
            expected: format!("{n}x{h} point forecast"),
            actual: format!("{}x{}", point.nrows(), point.ncols()),
        });
    }

    // Per node: gather each cell, sort once, read all requested percentiles.
    let per_node: Vec<Vec<(f64, f64)>> = par::map_indices(n, |i| {
        let mut cell = Vec::new();
        let mut out = Vec::with_capacity(h * levels.len());
        for j in 0..h {
            paths.cell(i, j, &mut cell);
            cell.sort_unstable_by(f64::total_cmp);
            for &alpha in levels {
                out.push((
                    quantile_sorted(&cell, alpha / 2.0),
                    quantile_sorted(&cell, 1.0 - alpha / 2.0),
                ));
            }
        }
        out
    });

    let mut lower = vec![DMatrix::zeros(n, h); levels.len()];
    let mut upper = vec![DMatrix::zeros(n, h); levels.len()];
    for (i, rows) in per_node.iter().enumerate() {
        for j in 0..h {
            for (l, _) in levels.iter().enumerate() {
                let (lo, hi) = rows[j * levels.len() + l];
                lower[l][(i, j)] = lo;
                upper[l][(i, j)] = hi;
            }
        }
    }

    Ok(IntervalSet {
        levels: levels.to_vec(),
        point,
        lower,
        upper,
        k_used: k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{build_design, DesignConfig};
    use crate::ols::{fit, predict_recursive};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn dummy_fit(residuals: Vec<f64>, leverages: Vec<f64>) -> FitResult {
        FitResult {
            coefficients: vec![],
            residuals,
            leverages,
            rank: 0,
            sigma2: 0.0,
            time_offsets: vec![],
        }
    }

    #[test]
    fn leverage_adjustment_spot_values() {
        let f = dummy_fit(vec![1.0, 1.0, -2.0], vec![0.0, 0.75, 0.0]);
        let pool = modified_residuals(&f).unwrap();
        // Before centering: 1, 2, -2; centered by mean 1/3.
        let mean = 1.0 / 3.0;
        assert!((pool.values[0] - (1.0 - mean)).abs() < 1e-12);
        assert!((pool.values[1] - (2.0 - mean)).abs() < 1e-12);
        assert!((pool.values[2] - (-2.0 - mean)).abs() < 1e-12);
    }

    #[test]
    fn pool_mean_is_zero() {
        let f = dummy_fit(
            (0..100).map(|i| (i as f64) * 0.7 - 20.0).collect(),
            (0..100).map(|i| (i as f64) / 150.0).collect(),
        );
        let pool = modified_residuals(&f).unwrap();
        let mean: f64 = pool.values.iter().sum::<f64>() / pool.len() as f64;
        assert!(mean.abs() < 1e-9);
    }

    #[test]
    fn unit_leverage_rows_are_excluded() {
        let f = dummy_fit(vec![0.0, 1.0, 2.0], vec![1.0, 0.0, 0.0]);
        let pool = modified_residuals(&f).unwrap();
        assert_eq!(pool.excluded, 1);
        assert_eq!(pool.len(), 2);
        let all_unit = dummy_fit(vec![0.0], vec![1.0]);
        assert!(matches!(
            modified_residuals(&all_unit),
            Err(Error::EmptyResidualPool)
        ));
    }

    fn ar_series(seed: u64, len: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut y = vec![50.0f64; 25];
        for t in 25..len {
            let e: f64 = rng.sample(StandardNormal);
            y.push(20.0 + 0.4 * y[t - 1] + 0.2 * y[t - 24] + 2.0 * e);
        }
        y
    }

    #[test]
    fn zero_pool_collapses_paths_onto_point_forecast() {
        let y = ar_series(2, 400);
        let cfg = DesignConfig::default();
        let f = fit(&build_design(&y, 0, &cfg).unwrap()).unwrap();
        let pool = ModifiedResidualPool::degenerate();
        let paths = sample_paths(&f, &y, 0, &cfg, &pool, 24, 5, 9).unwrap();
        let point = predict_recursive(&f, &y, 0, &cfg, 24).unwrap();
        for k in 0..5 {
            for j in 0..24 {
                assert!(
                    (paths[(k, j)] - point[j]).abs() < 1e-10,
                    "path {k} step {j}: {} vs {}",
                    paths[(k, j)],
                    point[j]
                );
            }
        }
    }

    #[test]
    fn same_seed_reproduces_paths_exactly() {
        let y = ar_series(3, 400);
        let cfg = DesignConfig::default();
        let f = fit(&build_design(&y, 0, &cfg).unwrap()).unwrap();
        let pool = modified_residuals(&f).unwrap();
        let a = sample_paths(&f, &y, 0, &cfg, &pool, 24, 50, 7).unwrap();
        let b = sample_paths(&f, &y, 0, &cfg, &pool, 24, 50, 7).unwrap();
        assert_eq!(a, b);
        let c = sample_paths(&f, &y, 0, &cfg, &pool, 24, 50, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn path_dispersion_matches_pool_for_memoryless_model() {
        // Intercept-only model with a standard normal pool: each step is
        // point + one draw, so the per-step standard deviation must be ~1.
        let cfg = DesignConfig {
            daily_order: 0,
            weekly_order: 0,
            lags: vec![],
            include_trend: false,
            include_intercept: true,
        };
        let y = vec![5.0; 60];
        let f = fit(&build_design(&y, 0, &cfg).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let noise: Vec<f64> = (0..4000).map(|_| rng.sample(StandardNormal)).collect();
        let pool = ModifiedResidualPool {
            values: noise,
            excluded: 0,
        };
        let paths = sample_paths(&f, &y, 0, &cfg, &pool, 4, 2000, 11).unwrap();
        for j in 0..4 {
            let col: Vec<f64> = (0..2000).map(|k| paths[(k, j)]).collect();
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
                / (col.len() - 1) as f64)
                .sqrt();
            assert!((sd - 1.0).abs() < 0.1, "step {j} sd = {sd}");
        }
    }

    #[test]
    fn paths_match_naive_forecast_row_route() {
        // Replays the same draws through build_forecast_row to confirm the
        // engine's split of deterministic and lag terms.
        let y = ar_series(6, 420);
        let cfg = DesignConfig::default();
        let f = fit(&build_design(&y, 0, &cfg).unwrap()).unwrap();
        let pool = modified_residuals(&f).unwrap();
        let paths = sample_paths(&f, &y, 0, &cfg, &pool, 24, 3, 21).unwrap();
        for k in 0..3 {
            let mut rng = ChaCha8Rng::seed_from_u64(split_seed(21, k as u64));
            let mut buf = y.clone();
            for j in 0..24 {
                let t = buf.len() as i64;
                let row = crate::design::build_forecast_row(&buf, 0, t, &cfg).unwrap();
                let det: f64 = row.iter().zip(&f.coefficients).map(|(x, b)| x * b).sum();
                let v = det + pool.values[rng.random_range(0..pool.values.len())];
                assert!((v - paths[(k, j)]).abs() < 1e-10);
                buf.push(v);
            }
        }
    }

    #[test]
    fn degenerate_paths_have_zero_width_intervals() {
        let mut m = DMatrix::zeros(50, 3);
        for k in 0..50 {
            for j in 0..3 {
                m[(k, j)] = 7.0 + j as f64;
            }
        }
        let paths = SamplePaths::from_node_matrix(&m);
        let point = DMatrix::from_element(1, 3, 7.0);
        let set = percentile_intervals(&paths, &[0.05], point).unwrap();
        for j in 0..3 {
            assert_eq!(set.lower[0][(0, j)], set.upper[0][(0, j)]);
        }
    }

    #[test]
    fn normal_sample_percentile_bounds() {
        // Monte Carlo order-statistic check: the empirical 97.5th percentile
        // of 2000 standard normal draws lands in [1.85, 2.07].
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let mut m = DMatrix::zeros(2000, 2);
        for k in 0..2000 {
            for j in 0..2 {
                m[(k, j)] = rng.sample::<f64, _>(StandardNormal);
            }
        }
        let paths = SamplePaths::from_node_matrix(&m);
        let set = percentile_intervals(&paths, &[0.05], DMatrix::zeros(1, 2)).unwrap();
        for j in 0..2 {
            let hi = set.upper[0][(0, j)];
            assert!((1.85..=2.07).contains(&hi), "97.5th percentile {hi}");
        }
    }

    #[test]
    fn intervals_nest_across_levels() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut m = DMatrix::zeros(500, 4);
        for v in m.iter_mut() {
            *v = rng.sample::<f64, _>(StandardNormal) * 3.0;
        }
        let paths = SamplePaths::from_node_matrix(&m);
        let set = percentile_intervals(&paths, &[0.10, 0.05], DMatrix::zeros(1, 4)).unwrap();
        let (lo90, hi90) = set.bounds(0.10).unwrap();
        let (lo95, hi95) = set.bounds(0.05).unwrap();
        for j in 0..4 {
            assert!(lo95[(0, j)] <= lo90[(0, j)]);
            assert!(hi90[(0, j)] <= hi95[(0, j)]);
        }
    }

    #[test]
    fn too_few_paths_for_level_is_rejected() {
        let paths = SamplePaths::zeros(1, 20, 2);
        assert!(matches!(
            percentile_intervals(&paths, &[0.05], DMatrix::zeros(1, 2)),
            Err(Error::TooFewPaths { .. })
        ));
    }

    #[test]
    fn percentiles_invariant_under_path_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let k = 200;
        let vals: Vec<f64> = (0..k).map(|_| rng.sample(StandardNormal)).collect();
        let mut fwd = SamplePaths::zeros(1, k, 1);
        let mut rev = SamplePaths::zeros(1, k, 1);
        for (i, &v) in vals.iter().enumerate() {
            fwd.set(0, i, 0, v);
            rev.set(0, k - 1 - i, 0, v);
        }
        let a = percentile_intervals(&fwd, &[0.10], DMatrix::zeros(1, 1)).unwrap();
        let b = percentile_intervals(&rev, &[0.10], DMatrix::zeros(1, 1)).unwrap();
        assert_eq!(a.lower[0], b.lower[0]);
        assert_eq!(a.upper[0], b.upper[0]);
    }

    #[test]
    fn clamping_truncates_negative_bounds_only() {
        let mut m = DMatrix::zeros(40, 1);
        for k in 0..40 {
            m[(k, 0)] = k as f64 - 30.0;
        }
        let paths = SamplePaths::from_node_matrix(&m);
        let mut set =
            percentile_intervals(&paths, &[0.10], DMatrix::from_element(1, 1, -2.0)).unwrap();
        assert!(set.lower[0][(0, 0)] < 0.0);
        set.clamp_nonnegative();
        assert_eq!(set.lower[0][(0, 0)], 0.0);
        assert_eq!(set.point[(0, 0)], -2.0);
    }
}
