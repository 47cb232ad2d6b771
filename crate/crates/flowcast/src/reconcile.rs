//! Forecast reconciliation: shrinkage covariance estimation and the
//! trace-minimizing combination matrix.
//!
//! Base forecasts `y_hat` for all nodes are mapped onto the coherent
//! subspace by `y_tilde = S G y_hat` with
//! `G = (S' W^-1 S)^-1 S' W^-1`. `W` is the covariance of in-sample
//! one-step base-forecast errors, estimated by shrinking the sample
//! covariance toward its diagonal. The scalar multiple of `W` the theory
//! carries cancels inside `G`, so it is never formed.
//!
//! Everything is computed through factorizations and solves; no explicit
//! matrix inverse is formed anywhere.

use crate::bootstrap::SamplePaths;
use crate::error::{Error, Result};
use crate::hierarchy::SummingMatrix;
use crate::par;
use nalgebra::{Cholesky, DMatrix};
use serde::{Deserialize, Serialize};

/// Shrinkage estimate of the base-forecast error covariance.
#[derive(Debug, Clone)]
pub struct ShrinkageCovariance {
    /// Residual variance per node (the diagonal of the sample covariance).
    pub diagonal: Vec<f64>,
    /// Shrinkage intensity toward the diagonal, in [0, 1].
    pub lambda: f64,
    /// Sample covariance of the error matrix, kept for audit.
    pub full_sample: DMatrix<f64>,
    /// `lambda * diag + (1 - lambda) * full_sample`.
    pub shrunk: DMatrix<f64>,
}

/// How the reconciliation map weights base-forecast errors.
#[derive(Debug, Clone, Copy)]
pub enum Weighting<'a> {
    /// Unweighted projection (identity covariance).
    Identity,
    /// Diagonal covariance (weighted least squares).
    Diagonal(&'a [f64]),
    /// Full shrinkage covariance.
    Shrinkage(&'a ShrinkageCovariance),
    /// No projection: aggregate the bottom-level base forecasts.
    BottomUp,
}

/// Reconciliation method tag carried through reports and output files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReconcileMethod {
    MintShrink,
    WlsDiagonal,
    OlsIdentity,
    BottomUp,
}

impl std::fmt::Display for ReconcileMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ReconcileMethod::MintShrink => "mint-shrink",
            ReconcileMethod::WlsDiagonal => "wls-diagonal",
            ReconcileMethod::OlsIdentity => "ols-identity",
            ReconcileMethod::BottomUp => "bottom-up",
        };
        f.write_str(s)
    }
}

/// The combination matrix `G` with `y_tilde = S G y_hat`.
#[derive(Debug, Clone)]
pub struct ReconciliationMap {
    /// m x n combination matrix.
    pub g: DMatrix<f64>,
    pub method: ReconcileMethod,
}

/// Estimates the shrinkage covariance from a T x n matrix of in-sample
/// one-step base-forecast errors (rows are time points, columns follow the
/// node order). `node_labels` is used in diagnostics and may be empty.
pub fn estimate_shrinkage(
    errors: &DMatrix<f64>,
    node_labels: &[String],
) -> Result<ShrinkageCovariance> {
    estimate_shrinkage_with_lambda(errors, node_labels, None)
}

/// Like [`estimate_shrinkage`] but with the intensity forced to `lambda`
/// instead of estimated.
pub fn estimate_shrinkage_with_lambda(
    errors: &DMatrix<f64>,
    node_labels: &[String],
    lambda: Option<f64>,
) -> Result<ShrinkageCovariance> {
    let t = errors.nrows();
    let n = errors.ncols();
    if t < 2 {
        return Err(Error::SeriesTooShort { len: t, needed: 2 });
    }
    if errors.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }

    let full_sample = errors.tr_mul(errors) / t as f64;
    let mut diagonal = Vec::with_capacity(n);
    for i in 0..n {
        let d = full_sample[(i, i)];
        if d <= 0.0 {
            let label = node_labels.get(i).cloned().unwrap_or_else(|| format!("#{i}"));
            return Err(Error::DegenerateNode { index: i, label });
        }
        diagonal.push(d);
    }

    let lambda = match lambda {
        Some(l) => {
            if !(0.0..=1.0).contains(&l) {
                return Err(Error::InvalidInput(format!(
                    "shrinkage intensity {l} outside [0, 1]"
                )));
            }
            l
        }
        None => estimate_lambda(errors, &full_sample, &diagonal),
    };

    let mut shrunk = full_sample.clone();
    let keep = 1.0 - lambda;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                shrunk[(i, j)] *= keep;
            }
        }
    }

    Ok(ShrinkageCovariance {
        diagonal,
        lambda,
        full_sample,
        shrunk,
    })
}

/// Intensity `sum_{i != j} Var(r_ij) / sum_{i != j} r_ij^2`, clamped to
/// [0, 1]; an all-diagonal correlation matrix yields 1 by convention.
///
/// `Var(r_ij)` is the sample variance of the per-time cross-products of
/// standardized errors, divided by T. Both sums are accumulated from
/// row-wise power sums of the standardized matrix, never materializing the
/// n x n cross-product variance matrix.
fn estimate_lambda(errors: &DMatrix<f64>, full: &DMatrix<f64>, diag: &[f64]) -> f64 {
    let t = errors.nrows();
    let n = errors.ncols();
    let tf = t as f64;

    let mut sum_r2 = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let r = full[(i, j)] / (diag[i] * diag[j]).sqrt();
                sum_r2 += r * r;
            }
        }
    }
    if sum_r2 == 0.0 {
        return 1.0;
    }

    // sum_{i != j} sum_t w_tij^2 with w_tij = x_ti * x_tj:
    // sum_t (sum_i x_ti^2)^2 - sum_{t,i} x_ti^4.
    let mut sq_rowsums = 0.0;
    let mut fourth = 0.0;
    for trow in 0..t {
        let mut s = 0.0;
        for i in 0..n {
            let x = errors[(trow, i)] / diag[i].sqrt();
            let x2 = x * x;
            s += x2;
            fourth += x2 * x2;
        }
        sq_rowsums += s * s;
    }
    let centered = sq_rowsums - fourth - tf * sum_r2;
    let sum_var = centered / (tf * (tf - 1.0));

    (sum_var / sum_r2).clamp(0.0, 1.0)
}

/// Builds the combination matrix for the given weighting.
///
/// The full covariance route factors `W`, solves `W Z = S`, then solves
/// `(S' Z) G = Z'`. A shrunk covariance that fails to factor falls back to
/// its diagonal (intensity one) with a warning.
pub fn build_map(s: &SummingMatrix, weighting: Weighting<'_>) -> Result<ReconciliationMap> {
    let n = s.n();
    let m = s.m();
    match weighting {
        Weighting::BottomUp => {
            let mut g = DMatrix::zeros(m, n);
            for j in 0..m {
                g[(j, n - m + j)] = 1.0;
            }
            Ok(ReconciliationMap {
                g,
                method: ReconcileMethod::BottomUp,
            })
        }
        Weighting::Identity => {
            let s_dense = s.to_dense();
            let g = projection_from(&s_dense, s_dense.clone())?;
            Ok(ReconciliationMap {
                g,
                method: ReconcileMethod::OlsIdentity,
            })
        }
        Weighting::Diagonal(d) => {
            let g = diagonal_map(s, d)?;
            Ok(ReconciliationMap {
                g,
                method: ReconcileMethod::WlsDiagonal,
            })
        }
        Weighting::Shrinkage(cov) => {
            if cov.shrunk.nrows() != n {
                return Err(Error::DimensionMismatch {
                    expected: format!("{n}x{n} covariance"),
                    actual: format!("{}x{}", cov.shrunk.nrows(), cov.shrunk.ncols()),
                });
            }
            let s_dense = s.to_dense();
            match Cholesky::new(cov.shrunk.clone()) {
                Some(chol) => {
                    let z = chol.solve(&s_dense);
                    let g = projection_from(&s_dense, z)?;
                    Ok(ReconciliationMap {
                        g,
                        method: ReconcileMethod::MintShrink,
                    })
                }
                None => {
                    log::warn!(
                        "shrunk covariance failed to factor; falling back to its diagonal"
                    );
                    let g = diagonal_map(s, &cov.diagonal)?;
                    Ok(ReconciliationMap {
                        g,
                        method: ReconcileMethod::MintShrink,
                    })
                }
            }
        }
    }
}

fn diagonal_map(s: &SummingMatrix, d: &[f64]) -> Result<DMatrix<f64>> {
    let n = s.n();
    if d.len() != n {
        return Err(Error::DimensionMismatch {
            expected: format!("{n} diagonal entries"),
            actual: format!("{}", d.len()),
        });
    }
    if d.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::FactorizationFailed);
    }
    let s_dense = s.to_dense();
    let mut z = s_dense.clone();
    for i in 0..n {
        let inv = 1.0 / d[i];
        for j in 0..z.ncols() {
            z[(i, j)] *= inv;
        }
    }
    projection_from(&s_dense, z)
}

/// Finishes `G = (S' Z)^-1 Z'` given `Z = W^-1 S`.
fn projection_from(s_dense: &DMatrix<f64>, z: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut a = s_dense.tr_mul(&z);
    // Symmetrize before factoring; the solve route leaves roundoff skew.
    let at = a.transpose();
    a += at;
    a *= 0.5;
    let chol = Cholesky::new(a).ok_or(Error::FactorizationFailed)?;
    Ok(chol.solve(&z.transpose()))
}

/// Reconciles an n x h matrix of base forecasts column by column.
pub fn reconcile_points(
    map: &ReconciliationMap,
    s: &SummingMatrix,
    base: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    if base.nrows() != s.n() || map.g.ncols() != s.n() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} rows", s.n()),
            actual: format!("{}", base.nrows()),
        });
    }
    let bottom = &map.g * base;
    Ok(apply_summing(s, &bottom))
}

/// `S * bottom` for a dense m x h bottom block.
fn apply_summing(s: &SummingMatrix, bottom: &DMatrix<f64>) -> DMatrix<f64> {
    let h = bottom.ncols();
    let n_agg = s.n_aggregate();
    let mut out = DMatrix::zeros(s.n(), h);
    for col in 0..h {
        for row in 0..n_agg {
            out[(row, col)] = s
                .children(row)
                .iter()
                .map(|&c| bottom[(c as usize, col)])
                .sum();
        }
        for c in 0..s.m() {
            out[(n_agg + c, col)] = bottom[(c, col)];
        }
    }
    out
}

/// Reconciles every step of every sample path, in parallel over path blocks.
pub fn reconcile_paths(
    map: &ReconciliationMap,
    s: &SummingMatrix,
    paths: &SamplePaths,
) -> Result<SamplePaths> {
    let n = paths.n_nodes();
    let h = paths.horizon();
    let k = paths.n_paths();
    if n != s.n() || map.g.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: format!("{} nodes", s.n()),
            actual: format!("{n}"),
        });
    }
    let m = s.m();
    let n_agg = s.n_aggregate();
    // Keep roughly a thousand columns per matrix product.
    let paths_per_block = (1024 / h).clamp(1, k.max(1));
    let block_len = paths_per_block * n * h;

    let mut out = SamplePaths::zeros(n, k, h);
    par::for_each_chunk_mut(out.values_mut(), block_len, |offset, out_block| {
        let k0 = offset / (n * h);
        let block_paths = out_block.len() / (n * h);
        let src = paths.paths_slice(k0..k0 + block_paths);
        let cols = block_paths * h;
        let mut gathered = DMatrix::zeros(n, cols);
        for kk in 0..block_paths {
            for i in 0..n {
                let run = &src[(kk * n + i) * h..(kk * n + i + 1) * h];
                for (j, &v) in run.iter().enumerate() {
                    gathered[(i, kk * h + j)] = v;
                }
            }
        }
        let bottom = &map.g * &gathered;
        for kk in 0..block_paths {
            for j in 0..h {
                let col = kk * h + j;
                for row in 0..n_agg {
                    out_block[(kk * n + row) * h + j] = s
                        .children(row)
                        .iter()
                        .map(|&c| bottom[(c as usize, col)])
                        .sum();
                }
                for c in 0..m {
                    out_block[(kk * n + n_agg + c) * h + j] = bottom[(c, col)];
                }
            }
        }
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::{build_summing_matrix, BottomKey, LevelSpec, StructureSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;
    use std::collections::BTreeMap;

    fn two_leaf() -> SummingMatrix {
        // S = [[1,1],[1,0],[0,1]]
        let spec = StructureSpec::default();
        let keys = vec![BottomKey::new(["a"]), BottomKey::new(["b"])];
        build_summing_matrix(&spec, &keys).unwrap()
    }

    fn two_branch() -> SummingMatrix {
        let parents: BTreeMap<String, String> =
            [("AA", "A"), ("AB", "A"), ("BA", "B"), ("BB", "B")]
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect();
        let spec = StructureSpec {
            levels: vec![LevelSpec::mapped("branch", parents)],
            attributes: vec![],
            crossings: vec![],
        };
        let keys = ["AA", "AB", "BA", "BB"]
            .iter()
            .map(|k| BottomKey::new([*k]))
            .collect::<Vec<_>>();
        build_summing_matrix(&spec, &keys).unwrap()
    }

    #[test]
    fn identity_weighting_matches_hand_oracle() {
        // Hand normal equations for S = [[1,1],[1,0],[0,1]], y = (4,1,2):
        // G = (S'S)^-1 S' gives reconciled (11/3, 4/3, 7/3).
        let s = two_leaf();
        let map = build_map(&s, Weighting::Identity).unwrap();
        let base = DMatrix::from_column_slice(3, 1, &[4.0, 1.0, 2.0]);
        let rec = reconcile_points(&map, &s, &base).unwrap();
        assert!((rec[(0, 0)] - 11.0 / 3.0).abs() < 1e-12);
        assert!((rec[(1, 0)] - 4.0 / 3.0).abs() < 1e-12);
        assert!((rec[(2, 0)] - 7.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn coherent_input_is_a_fixed_point() {
        let s = two_branch();
        let b = [3.0, 1.0, 4.0, 1.5];
        let y = s.aggregate(&b).unwrap();
        let base = DMatrix::from_column_slice(s.n(), 1, &y);
        for weighting in [Weighting::Identity, Weighting::BottomUp] {
            let map = build_map(&s, weighting).unwrap();
            let rec = reconcile_points(&map, &s, &base).unwrap();
            for i in 0..s.n() {
                assert!((rec[(i, 0)] - y[i]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn bottom_up_selects_bottom_rows() {
        let s = two_branch();
        let map = build_map(&s, Weighting::BottomUp).unwrap();
        let mut base = DMatrix::zeros(s.n(), 1);
        for i in 0..s.n() {
            base[(i, 0)] = i as f64 * 10.0 + 1.0;
        }
        let rec = reconcile_points(&map, &s, &base).unwrap();
        let n_agg = s.n_aggregate();
        for c in 0..s.m() {
            assert_eq!(rec[(n_agg + c, 0)], base[(n_agg + c, 0)]);
        }
        // Total equals the sum of base bottom values.
        let expect: f64 = (0..s.m()).map(|c| base[(n_agg + c, 0)]).sum();
        assert!((rec[(0, 0)] - expect).abs() < 1e-12);
    }

    #[test]
    fn zero_base_reconciles_to_zero() {
        let s = two_branch();
        let map = build_map(&s, Weighting::Identity).unwrap();
        let rec = reconcile_points(&map, &s, &DMatrix::zeros(s.n(), 3)).unwrap();
        assert!(rec.iter().all(|&v| v.abs() < 1e-15));
    }

    fn random_errors(seed: u64, t: usize, n: usize) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(t, n, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    #[test]
    fn orthogonal_centered_columns_force_full_shrinkage() {
        // Exactly orthogonal columns: off-diagonal correlations are zero,
        // the convention sets lambda to one, and the result is diagonal.
        let e = DMatrix::from_column_slice(4, 2, &[1.0, 1.0, -1.0, -1.0, 1.0, -1.0, 1.0, -1.0]);
        let cov = estimate_shrinkage(&e, &[]).unwrap();
        assert_eq!(cov.lambda, 1.0);
        assert_eq!(cov.shrunk[(0, 1)], 0.0);
        assert_eq!(cov.shrunk[(1, 0)], 0.0);
        assert_eq!(cov.shrunk[(0, 0)], cov.full_sample[(0, 0)]);
    }

    #[test]
    fn hand_sized_input_matches_direct_formula_evaluation() {
        // Independent oracle: evaluate the shrinkage definitions by direct
        // double loops over (i, j) pairs.
        let e = DMatrix::from_column_slice(
            4,
            2,
            &[1.0, 2.0, -1.5, 0.5, 0.8, -0.4, 1.1, -0.9],
        );
        let t = 4.0;
        let n = 2;
        let mut w1 = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for trow in 0..4 {
                    acc += e[(trow, i)] * e[(trow, j)];
                }
                w1[i][j] = acc / t;
            }
        }
        let mut sum_var = 0.0;
        let mut sum_r2 = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let r = w1[i][j] / (w1[i][i] * w1[j][j]).sqrt();
                sum_r2 += r * r;
                let w: Vec<f64> = (0..4)
                    .map(|trow| {
                        (e[(trow, i)] / w1[i][i].sqrt()) * (e[(trow, j)] / w1[j][j].sqrt())
                    })
                    .collect();
                let mean = w.iter().sum::<f64>() / t;
                let var =
                    w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (t - 1.0);
                sum_var += var / t;
            }
        }
        let lambda_oracle = (sum_var / sum_r2).clamp(0.0, 1.0);

        let cov = estimate_shrinkage(&e, &[]).unwrap();
        assert!(
            (cov.lambda - lambda_oracle).abs() < 1e-10,
            "{} vs {}",
            cov.lambda,
            lambda_oracle
        );
        for i in 0..n {
            for j in 0..n {
                let expect = if i == j {
                    w1[i][i]
                } else {
                    (1.0 - lambda_oracle) * w1[i][j]
                };
                assert!((cov.shrunk[(i, j)] - expect).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn forced_lambda_zero_returns_sample_covariance() {
        let e = random_errors(1, 30, 4);
        let cov = estimate_shrinkage_with_lambda(&e, &[], Some(0.0)).unwrap();
        assert_eq!(cov.shrunk, cov.full_sample);
        let full = estimate_shrinkage(&e, &[]).unwrap();
        assert!((0.0..=1.0).contains(&full.lambda));
    }

    #[test]
    fn zero_variance_column_names_the_node() {
        let mut e = random_errors(2, 20, 3);
        for trow in 0..20 {
            e[(trow, 1)] = 0.0;
        }
        let labels: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        match estimate_shrinkage(&e, &labels) {
            Err(Error::DegenerateNode { index, label }) => {
                assert_eq!(index, 1);
                assert_eq!(label, "b");
            }
            other => panic!("expected DegenerateNode, got {other:?}"),
        }
    }

    #[test]
    fn projection_identities_hold() {
        let s = two_branch();
        let e = random_errors(3, 60, s.n());
        let cov = estimate_shrinkage(&e, &[]).unwrap();
        for weighting in [
            Weighting::Identity,
            Weighting::Diagonal(&cov.diagonal),
            Weighting::Shrinkage(&cov),
        ] {
            let map = build_map(&s, weighting).unwrap();
            let gs = &map.g * s.to_dense();
            for i in 0..s.m() {
                for j in 0..s.m() {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((gs[(i, j)] - expect).abs() < 1e-8);
                }
            }
            let sg = s.to_dense() * &map.g;
            let sg2 = &sg * &sg;
            for (a, b) in sg2.iter().zip(sg.iter()) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn covariance_scale_cancels_in_the_map() {
        let s = two_branch();
        let e = random_errors(5, 80, s.n());
        let cov = estimate_shrinkage(&e, &[]).unwrap();
        let map = build_map(&s, Weighting::Shrinkage(&cov)).unwrap();
        for c in [0.25, 7.0, 3e4] {
            let scaled = ShrinkageCovariance {
                diagonal: cov.diagonal.iter().map(|d| d * c).collect(),
                lambda: cov.lambda,
                full_sample: &cov.full_sample * c,
                shrunk: &cov.shrunk * c,
            };
            let scaled_map = build_map(&s, Weighting::Shrinkage(&scaled)).unwrap();
            for (a, b) in map.g.iter().zip(scaled_map.g.iter()) {
                assert!((a - b).abs() < 1e-9, "scale {c}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn single_path_reconciliation_reduces_to_points() {
        let s = two_branch();
        let map = build_map(&s, Weighting::Identity).unwrap();
        let mut paths = SamplePaths::zeros(s.n(), 1, 3);
        let mut base = DMatrix::zeros(s.n(), 3);
        let mut state = 1234u64;
        for i in 0..s.n() {
            for j in 0..3 {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(7);
                let v = ((state >> 33) % 100) as f64;
                paths.set(i, 0, j, v);
                base[(i, j)] = v;
            }
        }
        let rec_paths = reconcile_paths(&map, &s, &paths).unwrap();
        let rec_points = reconcile_points(&map, &s, &base).unwrap();
        for i in 0..s.n() {
            for j in 0..3 {
                assert!((rec_paths.get(i, 0, j) - rec_points[(i, j)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identical_paths_stay_identical_and_means_commute() {
        let s = two_branch();
        let e = random_errors(8, 50, s.n());
        let cov = estimate_shrinkage(&e, &[]).unwrap();
        let map = build_map(&s, Weighting::Shrinkage(&cov)).unwrap();

        let k = 40;
        let h = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut paths = SamplePaths::zeros(s.n(), k, h);
        for path in 0..k {
            for i in 0..s.n() {
                for j in 0..h {
                    paths.set(i, path, j, rng.sample::<f64, _>(StandardNormal) * 10.0);
                }
            }
        }
        let rec = reconcile_paths(&map, &s, &paths).unwrap();

        // Mean of reconciled paths equals reconciliation of the mean path.
        let mut mean = DMatrix::zeros(s.n(), h);
        for i in 0..s.n() {
            for j in 0..h {
                let avg: f64 =
                    (0..k).map(|p| paths.get(i, p, j)).sum::<f64>() / k as f64;
                mean[(i, j)] = avg;
            }
        }
        let rec_mean = reconcile_points(&map, &s, &mean).unwrap();
        for i in 0..s.n() {
            for j in 0..h {
                let avg: f64 = (0..k).map(|p| rec.get(i, p, j)).sum::<f64>() / k as f64;
                assert!((avg - rec_mean[(i, j)]).abs() < 1e-9);
            }
        }

        // Duplicated paths reconcile identically.
        let mut dup = SamplePaths::zeros(s.n(), 2, h);
        for i in 0..s.n() {
            for j in 0..h {
                let v = paths.get(i, 0, j);
                dup.set(i, 0, j, v);
                dup.set(i, 1, j, v);
            }
        }
        let rec_dup = reconcile_paths(&map, &s, &dup).unwrap();
        for i in 0..s.n() {
            for j in 0..h {
                assert_eq!(rec_dup.get(i, 0, j), rec_dup.get(i, 1, j));
            }
        }
    }

    #[test]
    fn reconciled_paths_are_coherent() {
        let s = two_branch();
        let map = build_map(&s, Weighting::Identity).unwrap();
        let mut paths = SamplePaths::zeros(s.n(), 7, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for path in 0..7 {
            for i in 0..s.n() {
                for j in 0..5 {
                    paths.set(i, path, j, rng.sample::<f64, _>(StandardNormal) * 4.0);
                }
            }
        }
        let rec = reconcile_paths(&map, &s, &paths).unwrap();
        let mut y = vec![0.0; s.n()];
        for path in 0..7 {
            for j in 0..5 {
                for (i, slot) in y.iter_mut().enumerate() {
                    *slot = rec.get(i, path, j);
                }
                let scale = y.iter().fold(1.0f64, |a, v| a.max(v.abs()));
                assert!(s.coherence_residual(&y).unwrap() / scale < 1e-10);
            }
        }
    }
}
