//! Blocked cross-validation, the end-to-end forecasting pipeline, and
//! accuracy/runtime reporting.
//!
//! The harness slides a fixed-size training window forward by the test
//! length, so every point after the first window gets exactly one
//! out-of-sample forecast. Per split it fits every node, estimates the
//! error covariance from in-sample one-step errors, reconciles points and
//! bootstrap sample paths, and computes percentile intervals. Wall-clock is
//! accounted in three stages: base forecast, reconciling forecasts,
//! reconciling sample paths.

use crate::bootstrap::{
    modified_residuals, percentile_intervals, split_seed, IntervalSet, ModifiedResidualPool,
    PathEngine, SamplePaths,
};
use crate::design::DesignConfig;
use crate::error::{Error, Result};
use crate::hierarchy::SummingMatrix;
use crate::ingest::SeriesCollection;
use crate::ols::{fit, predict_recursive, FitResult};
use crate::par;
use crate::reconcile::{
    build_map, estimate_shrinkage_with_lambda, reconcile_paths, reconcile_points,
    ReconcileMethod, ReconciliationMap, ShrinkageCovariance, Weighting,
};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashSet;
use std::ops::Range;
use std::time::Instant;

/// One train/test pair of contiguous index ranges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CvSplit {
    pub train: Range<usize>,
    pub test: Range<usize>,
}

/// A blocked cross-validation plan.
#[derive(Debug, Clone)]
pub struct CvPlan {
    pub t_train: usize,
    pub t_test: usize,
    pub splits: Vec<CvSplit>,
}

/// Plans a fixed-window blocked cross-validation: split `s` trains on
/// `[s*t_test, s*t_test + t_train)` and tests on the following `t_test`
/// points.
pub fn plan_blocked_cv(t: usize, t_train: usize, t_test: usize) -> Result<CvPlan> {
    if t_train == 0 || t_test == 0 {
        return Err(Error::InvalidInput("window sizes must be positive".into()));
    }
    if t < t_train + t_test {
        return Err(Error::SeriesTooShort {
            len: t,
            needed: t_train + t_test,
        });
    }
    let count = (t - t_train) / t_test;
    let splits = (0..count)
        .map(|s| {
            let start = s * t_test;
            CvSplit {
                train: start..start + t_train,
                test: start + t_train..start + t_train + t_test,
            }
        })
        .collect();
    Ok(CvPlan {
        t_train,
        t_test,
        splits,
    })
}

/// Root mean square error between two equal-length vectors.
pub fn rmse(actual: &[f64], forecast: &[f64]) -> Result<f64> {
    if actual.len() != forecast.len() || actual.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: format!("two equal nonempty lengths, left {}", actual.len()),
            actual: format!("{}", forecast.len()),
        });
    }
    let ss: f64 = actual
        .iter()
        .zip(forecast)
        .map(|(a, f)| (a - f) * (a - f))
        .sum();
    Ok((ss / actual.len() as f64).sqrt())
}

/// Seasonal-naive baseline: step `j` repeats the value one period back
/// (cyclically for horizons past one period).
pub fn seasonal_naive(history: &[f64], period: usize, h: usize) -> Result<Vec<f64>> {
    if period == 0 || h == 0 {
        return Err(Error::InvalidInput("period and horizon must be >= 1".into()));
    }
    if history.len() < period {
        return Err(Error::SeriesTooShort {
            len: history.len(),
            needed: period,
        });
    }
    let base = history.len() - period;
    Ok((0..h).map(|j| history[base + j % period]).collect())
}

/// Pipeline configuration (defaults follow the reference protocol:
/// trace-minimizing reconciliation, 2000 paths, 90%/95% intervals).
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub design: DesignConfig,
    pub method: ReconcileMethod,
    /// Number of bootstrap sample paths (K).
    pub n_paths: usize,
    /// Interval levels alpha; 0.05 is a 95% interval.
    pub levels: Vec<f64>,
    pub seed: u64,
    /// Clamp interval bounds at zero (counts cannot be negative).
    pub clamp_nonnegative: bool,
    /// Force the shrinkage intensity instead of estimating it.
    pub forced_lambda: Option<f64>,
    /// Estimate one covariance from residuals pooled over all splits
    /// instead of per training window. Note: pooling looks across split
    /// boundaries, so it is off by default.
    pub pool_errors: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            design: DesignConfig::default(),
            method: ReconcileMethod::MintShrink,
            n_paths: 2000,
            levels: vec![0.10, 0.05],
            seed: 1,
            clamp_nonnegative: false,
            forced_lambda: None,
            pool_errors: false,
        }
    }
}

/// A node that could not be fitted or forecast in one split.
#[derive(Debug, Clone)]
pub struct NodeFailure {
    pub node: usize,
    pub message: String,
}

/// Everything produced for one cross-validation split.
#[derive(Debug, Clone)]
pub struct SplitOutput {
    pub split: usize,
    /// Absolute hour index of the first test point.
    pub test_start: usize,
    /// Base (unreconciled) forecasts, n x h.
    pub base: DMatrix<f64>,
    /// Reconciled forecasts, n x h.
    pub reconciled: DMatrix<f64>,
    pub intervals: IntervalSet,
    /// Observed test values, n x h (NaN where missing).
    pub actual: DMatrix<f64>,
    /// Shrinkage intensity used, when the method estimates one.
    pub lambda: Option<f64>,
    pub failures: Vec<NodeFailure>,
    pub rank_deficient: usize,
}

/// Wall-clock seconds per pipeline stage, summed over splits.
#[derive(Debug, Clone, Copy, Default)]
pub struct StageTimings {
    pub base_forecast: f64,
    pub reconcile_forecasts: f64,
    pub reconcile_paths: f64,
}

impl StageTimings {
    /// The three stages as named report rows.
    pub fn rows(&self) -> [(&'static str, f64); 3] {
        [
            ("base forecast", self.base_forecast),
            ("reconciling forecasts", self.reconcile_forecasts),
            ("reconciling sample paths", self.reconcile_paths),
        ]
    }
}

/// Output of [`run_pipeline`].
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub splits: Vec<SplitOutput>,
    pub timings: StageTimings,
    pub horizon: usize,
    pub method: ReconcileMethod,
}

enum PathGen {
    Model(PathEngine, ModifiedResidualPool),
    /// Paths equal the base forecast (failed or perfectly-fitting nodes).
    Constant,
}

struct NodeState {
    base: Vec<f64>,
    gen: PathGen,
    /// In-sample one-step errors with their absolute times; None when the
    /// node cannot contribute to covariance estimation.
    resid: Option<(Vec<i64>, Vec<f64>)>,
    failure: Option<String>,
    rank_deficient: bool,
}

fn fallback_forecast(train: &[f64], h: usize) -> Vec<f64> {
    if train.len() >= 168 {
        if let Ok(fc) = seasonal_naive(train, 168, h) {
            if fc.iter().all(|v| v.is_finite()) {
                return fc;
            }
        }
    }
    let last = train
        .iter()
        .rev()
        .copied()
        .find(|v| v.is_finite())
        .unwrap_or(0.0);
    vec![last; h]
}

fn fit_node(
    series: &[f64],
    split: &CvSplit,
    cfg: &PipelineConfig,
    h: usize,
) -> NodeState {
    let train = &series[split.train.clone()];
    let t0 = split.train.start as i64;
    let attempt = (|| -> Result<NodeState> {
        let dm = crate::design::build_design(train, t0, &cfg.design)?;
        let fitted: FitResult = fit(&dm)?;
        let base = predict_recursive(&fitted, train, t0, &cfg.design, h)?;
        let rank_deficient = fitted.is_rank_deficient(dm.width());
        let var: f64 = fitted.residuals.iter().map(|e| e * e).sum();
        let resid = if var > 0.0 {
            Some((fitted.time_offsets.clone(), fitted.residuals.clone()))
        } else {
            None
        };
        let gen = match modified_residuals(&fitted) {
            Ok(pool) => {
                let engine = PathEngine::new(&fitted, train, t0, &cfg.design, h)?;
                PathGen::Model(engine, pool)
            }
            Err(_) => PathGen::Constant,
        };
        Ok(NodeState {
            base,
            gen,
            resid,
            failure: None,
            rank_deficient,
        })
    })();
    match attempt {
        Ok(state) => state,
        Err(e) => NodeState {
            base: fallback_forecast(train, h),
            gen: PathGen::Constant,
            resid: None,
            failure: Some(e.to_string()),
            rank_deficient: false,
        },
    }
}

/// Builds the T_eff x k error matrix over the time points shared by every
/// contributing node. Returns the matrix and the contributing node indices.
fn error_matrix(states: &[NodeState]) -> (DMatrix<f64>, Vec<usize>) {
    let contributors: Vec<usize> = states
        .iter()
        .enumerate()
        .filter(|(_, s)| s.resid.is_some())
        .map(|(i, _)| i)
        .collect();
    if contributors.is_empty() {
        return (DMatrix::zeros(0, 0), contributors);
    }
    // Intersect the (sorted) offset lists.
    let mut common: Vec<i64> = states[contributors[0]].resid.as_ref().unwrap().0.clone();
    for &i in &contributors[1..] {
        let offsets = &states[i].resid.as_ref().unwrap().0;
        let set: HashSet<i64> = offsets.iter().copied().collect();
        common.retain(|t| set.contains(t));
    }
    let mut e = DMatrix::zeros(common.len(), contributors.len());
    for (col, &i) in contributors.iter().enumerate() {
        let (offsets, resid) = states[i].resid.as_ref().unwrap();
        let mut pos = 0usize;
        for (row, &t) in common.iter().enumerate() {
            while offsets[pos] != t {
                pos += 1;
            }
            e[(row, col)] = resid[pos];
        }
    }
    (e, contributors)
}

/// Expands a covariance over contributing nodes to the full node set:
/// non-contributors get the median variance and zero correlations.
fn expand_covariance(
    cov: ShrinkageCovariance,
    contributors: &[usize],
    n: usize,
) -> ShrinkageCovariance {
    if contributors.len() == n {
        return cov;
    }
    let mut sorted = cov.diagonal.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2].max(f64::MIN_POSITIVE);
    let mut diagonal = vec![median; n];
    let mut full = DMatrix::zeros(n, n);
    let mut shrunk = DMatrix::zeros(n, n);
    for i in 0..n {
        full[(i, i)] = median;
        shrunk[(i, i)] = median;
    }
    for (a, &i) in contributors.iter().enumerate() {
        diagonal[i] = cov.diagonal[a];
        for (b, &j) in contributors.iter().enumerate() {
            full[(i, j)] = cov.full_sample[(a, b)];
            shrunk[(i, j)] = cov.shrunk[(a, b)];
        }
    }
    ShrinkageCovariance {
        diagonal,
        lambda: cov.lambda,
        full_sample: full,
        shrunk,
    }
}

fn covariance_from_states(
    states: &[NodeState],
    summing: &SummingMatrix,
    cfg: &PipelineConfig,
) -> Result<Option<ShrinkageCovariance>> {
    match cfg.method {
        ReconcileMethod::OlsIdentity | ReconcileMethod::BottomUp => Ok(None),
        ReconcileMethod::WlsDiagonal | ReconcileMethod::MintShrink => {
            let (e, contributors) = error_matrix(states);
            if e.nrows() < 2 || contributors.is_empty() {
                return Err(Error::InvalidInput(
                    "not enough shared residual rows to estimate the error covariance".into(),
                ));
            }
            let labels: Vec<String> = contributors
                .iter()
                .map(|&i| summing.node_labels()[i].clone())
                .collect();
            let cov = estimate_shrinkage_with_lambda(&e, &labels, cfg.forced_lambda)?;
            Ok(Some(expand_covariance(cov, &contributors, summing.n())))
        }
    }
}

fn map_for(
    summing: &SummingMatrix,
    cov: Option<&ShrinkageCovariance>,
    method: ReconcileMethod,
) -> Result<ReconciliationMap> {
    match method {
        ReconcileMethod::BottomUp => build_map(summing, Weighting::BottomUp),
        ReconcileMethod::OlsIdentity => build_map(summing, Weighting::Identity),
        ReconcileMethod::WlsDiagonal => {
            let cov = cov.expect("covariance prepared for wls");
            build_map(summing, Weighting::Diagonal(&cov.diagonal))
        }
        ReconcileMethod::MintShrink => {
            let cov = cov.expect("covariance prepared for mint");
            build_map(summing, Weighting::Shrinkage(cov))
        }
    }
}

/// Runs the full pipeline over every split of the plan.
///
/// Per-node failures never abort a split: the failed node keeps a fallback
/// forecast, is excluded from covariance estimation, and is reported in the
/// split's failure list. Identical inputs and seed produce identical output.
pub fn run_pipeline(
    data: &SeriesCollection,
    cfg: &PipelineConfig,
    plan: &CvPlan,
) -> Result<PipelineRun> {
    let n = data.n_nodes();
    let h = plan.t_test;
    if plan
        .splits
        .last()
        .is_some_and(|s| s.test.end > data.hours())
    {
        return Err(Error::SeriesTooShort {
            len: data.hours(),
            needed: plan.splits.last().unwrap().test.end,
        });
    }
    if plan.splits.is_empty() {
        return Err(Error::InvalidInput("plan has no splits".into()));
    }

    let mut timings = StageTimings::default();

    // Stage 1 (base forecasts) for every split.
    let clock = Instant::now();
    let per_split_states: Vec<Vec<NodeState>> = plan
        .splits
        .iter()
        .map(|split| par::map_indices(n, |i| fit_node(data.node_series(i), split, cfg, h)))
        .collect();
    timings.base_forecast = clock.elapsed().as_secs_f64();

    // Covariance shared across splits when pooling is on; only splits where
    // every node contributes residuals can be stacked.
    let pooled: Option<(Option<ShrinkageCovariance>, ReconciliationMap)> = if cfg.pool_errors {
        let clock = Instant::now();
        let mut stacked_rows = 0usize;
        let mut per_split_mats = Vec::new();
        for states in &per_split_states {
            let (e, contributors) = error_matrix(states);
            if contributors.len() == n && e.nrows() >= 1 {
                stacked_rows += e.nrows();
                per_split_mats.push(e);
            }
        }
        let cov = if stacked_rows >= 2 && !per_split_mats.is_empty() {
            let mut stacked = DMatrix::zeros(stacked_rows, n);
            let mut row0 = 0usize;
            for e in &per_split_mats {
                for r in 0..e.nrows() {
                    for c in 0..n {
                        stacked[(row0 + r, c)] = e[(r, c)];
                    }
                }
                row0 += e.nrows();
            }
            match cfg.method {
                ReconcileMethod::OlsIdentity | ReconcileMethod::BottomUp => None,
                _ => Some(estimate_shrinkage_with_lambda(
                    &stacked,
                    data.summing.node_labels(),
                    cfg.forced_lambda,
                )?),
            }
        } else {
            covariance_from_states(&per_split_states[0], &data.summing, cfg)?
        };
        let map = map_for(&data.summing, cov.as_ref(), cfg.method)?;
        timings.reconcile_forecasts += clock.elapsed().as_secs_f64();
        Some((cov, map))
    } else {
        None
    };

    let mut outputs = Vec::with_capacity(plan.splits.len());
    for (split_idx, (split, states)) in plan.splits.iter().zip(&per_split_states).enumerate() {
        // Stage 2: covariance, map, reconciled points.
        let clock = Instant::now();
        let mut base = DMatrix::zeros(n, h);
        for (i, state) in states.iter().enumerate() {
            for j in 0..h {
                base[(i, j)] = state.base[j];
            }
        }
        let (lambda, reconciled, map) = match &pooled {
            Some((cov, map)) => {
                let rec = reconcile_points(map, &data.summing, &base)?;
                (cov.as_ref().map(|c| c.lambda), rec, map.clone())
            }
            None => {
                let cov = covariance_from_states(states, &data.summing, cfg)?;
                let map = map_for(&data.summing, cov.as_ref(), cfg.method)?;
                let rec = reconcile_points(&map, &data.summing, &base)?;
                (cov.map(|c| c.lambda), rec, map)
            }
        };
        timings.reconcile_forecasts += clock.elapsed().as_secs_f64();

        // Stage 3: sample paths, reconciliation, percentile intervals.
        let clock = Instant::now();
        let split_seed_value = split_seed(cfg.seed, 0x5eed + split_idx as u64);
        let k = cfg.n_paths;
        let mut paths = SamplePaths::zeros(n, k, h);
        let block_paths = (1024 / h.max(1)).clamp(1, k.max(1));
        par::for_each_chunk_mut(paths.values_mut(), block_paths * n * h, |offset, block| {
            let k0 = offset / (n * h);
            let paths_here = block.len() / (n * h);
            for kk in 0..paths_here {
                let path = k0 + kk;
                for (i, state) in states.iter().enumerate() {
                    let run = &mut block[(kk * n + i) * h..(kk * n + i + 1) * h];
                    match &state.gen {
                        PathGen::Model(engine, pool) => {
                            let node_seed = split_seed(split_seed_value, i as u64);
                            let mut rng = ChaCha8Rng::seed_from_u64(split_seed(
                                node_seed,
                                path as u64,
                            ));
                            engine.generate(&pool.values, &mut rng, run);
                        }
                        PathGen::Constant => {
                            run.copy_from_slice(&state.base);
                        }
                    }
                }
            }
        });
        let rec_paths = reconcile_paths(&map, &data.summing, &paths)?;
        drop(paths);
        let mut intervals = percentile_intervals(&rec_paths, &cfg.levels, reconciled.clone())?;
        drop(rec_paths);
        if cfg.clamp_nonnegative {
            intervals.clamp_nonnegative();
        }
        timings.reconcile_paths += clock.elapsed().as_secs_f64();

        let mut actual = DMatrix::zeros(n, h);
        for i in 0..n {
            let series = data.node_series(i);
            for (j, t) in split.test.clone().enumerate() {
                actual[(i, j)] = series[t];
            }
        }

        outputs.push(SplitOutput {
            split: split_idx,
            test_start: split.test.start,
            base,
            reconciled,
            intervals,
            actual,
            lambda,
            failures: states
                .iter()
                .enumerate()
                .filter_map(|(i, s)| {
                    s.failure.as_ref().map(|m| NodeFailure {
                        node: i,
                        message: m.clone(),
                    })
                })
                .collect(),
            rank_deficient: states.iter().filter(|s| s.rank_deficient).count(),
        });
    }

    Ok(PipelineRun {
        splits: outputs,
        timings,
        horizon: h,
        method: cfg.method,
    })
}

/// One per-(split, node) accuracy measurement.
#[derive(Debug, Clone)]
pub struct RmseCell {
    pub split: usize,
    pub node: usize,
    pub rmse: f64,
}

/// Mean and standard error of RMSE over all (series, split) cells of one
/// aggregation level.
#[derive(Debug, Clone)]
pub struct LevelSummary {
    pub level: String,
    pub mean: f64,
    pub se: f64,
    pub cells: usize,
}

/// Accuracy and runtime report for a pipeline run plus the seasonal-naive
/// baseline. Standard errors pool across series x split cells.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub method: ReconcileMethod,
    pub levels: Vec<LevelSummary>,
    pub baseline_levels: Vec<LevelSummary>,
    pub cells: Vec<RmseCell>,
    pub baseline_cells: Vec<RmseCell>,
    pub timings: StageTimings,
    pub splits: usize,
    pub failures: usize,
    pub rank_deficient: usize,
    /// How the standard errors pool measurements.
    pub pooling: &'static str,
}

fn summarize(
    cells: &[RmseCell],
    summing: &SummingMatrix,
) -> Vec<LevelSummary> {
    let mut out = Vec::new();
    for (name, range) in summing.blocks() {
        let values: Vec<f64> = cells
            .iter()
            .filter(|c| range.contains(&c.node))
            .map(|c| c.rmse)
            .collect();
        if values.is_empty() {
            continue;
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let se = if values.len() > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
                / (values.len() - 1) as f64;
            (var / values.len() as f64).sqrt()
        } else {
            0.0
        };
        out.push(LevelSummary {
            level: name.clone(),
            mean,
            se,
            cells: values.len(),
        });
    }
    out
}

fn cell_rmse(actual_row: &[f64], forecast_row: &[f64]) -> Option<f64> {
    let mut a = Vec::with_capacity(actual_row.len());
    let mut f = Vec::with_capacity(actual_row.len());
    for (x, y) in actual_row.iter().zip(forecast_row) {
        if x.is_finite() && y.is_finite() {
            a.push(*x);
            f.push(*y);
        }
    }
    if a.is_empty() {
        return None;
    }
    rmse(&a, &f).ok()
}

/// Scores a pipeline run against observed values and the seasonal-naive
/// baseline, per aggregation level.
pub fn evaluate_run(data: &SeriesCollection, run: &PipelineRun, plan: &CvPlan) -> EvalReport {
    let n = data.n_nodes();
    let h = run.horizon;
    let mut cells = Vec::new();
    let mut baseline_cells = Vec::new();
    let mut failures = 0usize;
    let mut rank_deficient = 0usize;

    for out in &run.splits {
        let failed: HashSet<usize> = out.failures.iter().map(|f| f.node).collect();
        failures += failed.len();
        rank_deficient += out.rank_deficient;
        let split = &plan.splits[out.split];
        for i in 0..n {
            let actual_row: Vec<f64> = (0..h).map(|j| out.actual[(i, j)]).collect();
            if !failed.contains(&i) {
                let rec_row: Vec<f64> = (0..h).map(|j| out.reconciled[(i, j)]).collect();
                if let Some(v) = cell_rmse(&actual_row, &rec_row) {
                    cells.push(RmseCell {
                        split: out.split,
                        node: i,
                        rmse: v,
                    });
                }
            }
            let train = &data.node_series(i)[split.train.clone()];
            if let Ok(naive) = seasonal_naive(train, 168, h) {
                if let Some(v) = cell_rmse(&actual_row, &naive) {
                    baseline_cells.push(RmseCell {
                        split: out.split,
                        node: i,
                        rmse: v,
                    });
                }
            }
        }
    }

    EvalReport {
        method: run.method,
        levels: summarize(&cells, &data.summing),
        baseline_levels: summarize(&baseline_cells, &data.summing),
        cells,
        baseline_cells,
        timings: run.timings,
        splits: run.splits.len(),
        failures,
        rank_deficient,
        pooling: "mean and SE pooled across series x split cells",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{demo_structure, generate_synthetic};
    use chrono::NaiveDate;

    #[test]
    fn four_month_series_yields_106_splits() {
        let plan = plan_blocked_cv(2880, 336, 24).unwrap();
        assert_eq!(plan.splits.len(), 106);
    }

    #[test]
    fn minimal_and_short_series() {
        let plan = plan_blocked_cv(360, 336, 24).unwrap();
        assert_eq!(plan.splits.len(), 1);
        assert_eq!(plan.splits[0].train, 0..336);
        assert_eq!(plan.splits[0].test, 336..360);
        assert!(matches!(
            plan_blocked_cv(359, 336, 24),
            Err(Error::SeriesTooShort { .. })
        ));
    }

    #[test]
    fn test_ranges_tile_the_tail() {
        let plan = plan_blocked_cv(1000, 336, 24).unwrap();
        let mut expect = 336usize;
        for s in &plan.splits {
            assert_eq!(s.train.len(), 336);
            assert_eq!(s.test.len(), 24);
            assert_eq!(s.test.start, expect);
            assert_eq!(s.train.end, s.test.start);
            expect = s.test.end;
        }
        assert!(expect <= 1000);
        assert!(1000 - expect < 24);
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        let v = rmse(&[3.0, 4.0], &[0.0, 0.0]).unwrap();
        assert!((v - 3.5355339059327378).abs() < 1e-12);
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
        assert!(rmse(&[], &[]).is_err());
    }

    #[test]
    fn seasonal_naive_is_exact_on_periodic_series() {
        let history: Vec<f64> = (0..168 * 3).map(|t| ((t % 168) as f64).sin()).collect();
        let fc = seasonal_naive(&history, 168, 24).unwrap();
        for (j, v) in fc.iter().enumerate() {
            let truth = (((168 * 3 + j) % 168) as f64).sin();
            assert_eq!(*v, truth);
        }
        // One step ahead repeats the value a full period back.
        let fc1 = seasonal_naive(&history, 168, 1).unwrap();
        assert_eq!(fc1[0], history[history.len() - 168]);
        assert!(seasonal_naive(&history[..100], 168, 1).is_err());
    }

    fn small_run(seed: u64) -> (SeriesCollection, PipelineRun, CvPlan) {
        let (spec, keys) = demo_structure(2);
        let start = NaiveDate::from_ymd_opt(2021, 3, 1).unwrap();
        let (data, _) = generate_synthetic(&spec, &keys, 16, start, seed, &[]).unwrap();
        let plan = plan_blocked_cv(data.hours(), 336, 24).unwrap();
        let cfg = PipelineConfig {
            n_paths: 200,
            seed,
            ..PipelineConfig::default()
        };
        let run = run_pipeline(&data, &cfg, &plan).unwrap();
        (data, run, plan)
    }

    #[test]
    fn pipeline_outputs_are_coherent_and_nested() {
        let (data, run, _) = small_run(5);
        assert_eq!(run.splits.len(), 1);
        let out = &run.splits[0];
        assert!(out.failures.is_empty());
        let n = data.n_nodes();
        let mut y = vec![0.0; n];
        for j in 0..run.horizon {
            for (i, slot) in y.iter_mut().enumerate() {
                *slot = out.reconciled[(i, j)];
            }
            let scale = y.iter().fold(1.0f64, |a, v| a.max(v.abs()));
            assert!(data.summing.coherence_residual(&y).unwrap() / scale <= 1e-8);
        }
        let (lo90, hi90) = out.intervals.bounds(0.10).unwrap();
        let (lo95, hi95) = out.intervals.bounds(0.05).unwrap();
        for i in 0..n {
            for j in 0..run.horizon {
                assert!(lo95[(i, j)] <= lo90[(i, j)]);
                assert!(hi90[(i, j)] <= hi95[(i, j)]);
                assert!(lo90[(i, j)] <= hi90[(i, j)]);
            }
        }
        assert!(out.lambda.is_some());
    }

    #[test]
    fn pipeline_is_deterministic() {
        let (_, a, _) = small_run(9);
        let (_, b, _) = small_run(9);
        assert_eq!(a.splits[0].reconciled, b.splits[0].reconciled);
        assert_eq!(
            a.splits[0].intervals.upper[1],
            b.splits[0].intervals.upper[1]
        );
    }

    #[test]
    fn report_summaries_recompute_from_cells() {
        let (data, run, plan) = small_run(12);
        let report = evaluate_run(&data, &run, &plan);
        assert!(!report.levels.is_empty());
        for summary in &report.levels {
            let block = data
                .summing
                .blocks()
                .iter()
                .find(|(n, _)| *n == summary.level)
                .unwrap()
                .1
                .clone();
            let values: Vec<f64> = report
                .cells
                .iter()
                .filter(|c| block.contains(&c.node))
                .map(|c| c.rmse)
                .collect();
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            assert!((mean - summary.mean).abs() < 1e-12);
            assert_eq!(values.len(), summary.cells);
        }
        // Timing rows carry the three stage names.
        let rows = report.timings.rows();
        assert_eq!(rows[0].0, "base forecast");
        assert_eq!(rows[1].0, "reconciling forecasts");
        assert_eq!(rows[2].0, "reconciling sample paths");
        assert!(rows.iter().all(|(_, secs)| *secs >= 0.0));
    }
}
