//! Law of large numbers, central limit and functional CLT diagnostics for
//! ensembles of walk positions.
//!
//! All tests compare p-values against a per-test level (default 0.01) without
//! family-wise correction. Reports note the number of tests run so a reader can
//! judge the multiplicity.

pub mod htest;

use std::collections::BTreeMap;
use std::io::{self, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{BarwError, Result};
use crate::output::format_float;
use crate::point::{Point, MAX_DIM};
use htest::{correlation_test, ks_normal, linear_fit, mean_square, mean_var, variance_ratio_test, z_test_zero_mean, TestResult};

pub const DEFAULT_ALPHA: f64 = 0.01;
pub const MIN_CLT_SAMPLES: usize = 500;

type Vector = [f64; MAX_DIM];

/// Displacements `X_k - X_0` of many independent walks at fixed checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub dim: usize,
    /// Strictly increasing step counts.
    pub checkpoints: Vec<usize>,
    /// `positions[i][c]` is the displacement of walk `i` at `checkpoints[c]`.
    pub positions: Vec<Vec<Vector>>,
    pub seeds: Vec<u64>,
}

impl Ensemble {
    pub fn new(dim: usize, checkpoints: Vec<usize>) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(BarwError::UnsupportedDimension(dim));
        }
        if checkpoints.is_empty() || checkpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(BarwError::Invalid("checkpoints must be non-empty and strictly increasing".into()));
        }
        Ok(Self { dim, checkpoints, positions: Vec::new(), seeds: Vec::new() })
    }

    /// Adds a lattice path given as `X_0, X_1, ...`; it must reach the last checkpoint.
    pub fn push_path(&mut self, path: &[Point]) -> Result<()> {
        let last = *self.checkpoints.last().expect("non-empty");
        if path.len() <= last {
            return Err(BarwError::InsufficientSamples { needed: last + 1, got: path.len() });
        }
        let origin = path[0];
        let row = self
            .checkpoints
            .iter()
            .map(|&k| {
                let d = path[k] - origin;
                [d.0[0] as f64, d.0[1] as f64, d.0[2] as f64]
            })
            .collect();
        self.positions.push(row);
        Ok(())
    }

    /// Adds displacements already sampled at the checkpoints.
    pub fn push_row(&mut self, row: Vec<Vector>) -> Result<()> {
        if row.len() != self.checkpoints.len() {
            return Err(BarwError::Invalid("row length differs from checkpoint count".into()));
        }
        self.positions.push(row);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Component `axis` of every walk at checkpoint index `c`.
    pub fn component(&self, c: usize, axis: usize) -> Vec<f64> {
        self.positions.iter().map(|row| row[c][axis]).collect()
    }

    /// Gaussian walks with independent `N(0, variance)` increments per step and axis,
    /// sampled exactly at the checkpoints.
    pub fn gaussian(dim: usize, paths: usize, checkpoints: Vec<usize>, variance: f64, seed: u64) -> Result<Self> {
        let mut e = Self::new(dim, checkpoints)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).expect("standard normal");
        for _ in 0..paths {
            let mut cur = [0.0; MAX_DIM];
            let mut prev_k = 0;
            let mut row = Vec::with_capacity(e.checkpoints.len());
            for &k in &e.checkpoints {
                let sd = (variance * (k - prev_k) as f64).sqrt();
                for c in cur.iter_mut().take(dim) {
                    *c += sd * normal.sample(&mut rng);
                }
                prev_k = k;
                row.push(cur);
            }
            e.positions.push(row);
        }
        e.seeds.push(seed);
        Ok(e)
    }
}

/// Moments of an ensemble at each checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub dim: usize,
    pub checkpoints: Vec<usize>,
    pub count: usize,
    pub means: Vec<Vector>,
    /// Unbiased sample covariance matrices.
    pub covariances: Vec<[[f64; MAX_DIM]; MAX_DIM]>,
    /// `normalized[c][i] = X_k / sqrt(k)` for walk `i` (zero when `k = 0`).
    pub normalized: Vec<Vec<Vector>>,
    pub seeds: Vec<u64>,
}

impl EnsembleSummary {
    pub fn from_ensemble(e: &Ensemble) -> Result<Self> {
        let n = e.len();
        if n < 2 {
            return Err(BarwError::InsufficientSamples { needed: 2, got: n });
        }
        let d = e.dim;
        let mut means = Vec::with_capacity(e.checkpoints.len());
        let mut covariances = Vec::with_capacity(e.checkpoints.len());
        let mut normalized = Vec::with_capacity(e.checkpoints.len());
        for (c, &k) in e.checkpoints.iter().enumerate() {
            let mut m = [0.0; MAX_DIM];
            for row in &e.positions {
                for a in 0..d {
                    m[a] += row[c][a];
                }
            }
            m.iter_mut().for_each(|v| *v /= n as f64);
            let mut cov = [[0.0; MAX_DIM]; MAX_DIM];
            for row in &e.positions {
                for a in 0..d {
                    for b in 0..d {
                        cov[a][b] += (row[c][a] - m[a]) * (row[c][b] - m[b]);
                    }
                }
            }
            for a in 0..d {
                for b in 0..d {
                    cov[a][b] /= (n - 1) as f64;
                }
            }
            let scale = if k == 0 { 0.0 } else { 1.0 / (k as f64).sqrt() };
            normalized.push(e.positions.iter().map(|row| row[c].map(|v| v * scale)).collect());
            means.push(m);
            covariances.push(cov);
        }
        Ok(Self {
            dim: d,
            checkpoints: e.checkpoints.clone(),
            count: n,
            means,
            covariances,
            normalized,
            seeds: e.seeds.clone(),
        })
    }

    /// CSV with columns `k, mean_1.., var_1..`.
    pub fn write_moments_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let d = self.dim;
        let mut header = vec!["k".to_string()];
        header.extend((1..=d).map(|a| format!("mean_{a}")));
        header.extend((1..=d).map(|a| format!("var_{a}")));
        writeln!(w, "{}", header.join(","))?;
        for (c, k) in self.checkpoints.iter().enumerate() {
            let mut cols = vec![k.to_string()];
            cols.extend((0..d).map(|a| format_float(self.means[c][a])));
            cols.extend((0..d).map(|a| format_float(self.covariances[c][a][a])));
            writeln!(w, "{}", cols.join(","))?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LlnRow {
    pub k: usize,
    /// Euclidean norm of the mean displacement, divided by `k`.
    pub mean_norm_over_k: f64,
    /// Mean Euclidean norm of the displacement, divided by `k`.
    pub mean_abs_over_k: f64,
    /// Standard error of `mean_abs_over_k`.
    pub standard_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LlnReport {
    pub rows: Vec<LlnRow>,
    pub threshold: f64,
    /// Per axis: is the mean at the last checkpoint within 3 standard errors of zero.
    pub mean_within_3se: Vec<bool>,
    pub below_threshold: bool,
    pub decreasing_tail: bool,
    pub pass: bool,
}

/// Speed diagnostics over all checkpoints with `k > 0`.
///
/// Passes when `mean |X_k| / k` at the last checkpoint is below `threshold`,
/// the sequence does not increase over the last half of checkpoints beyond
/// 3-standard-error bands, and the last mean lies within 3 standard errors of 0.
pub fn lln_diagnostic(summary: &EnsembleSummary, threshold: f64) -> Result<LlnReport> {
    let idx: Vec<usize> = (0..summary.checkpoints.len()).filter(|&c| summary.checkpoints[c] > 0).collect();
    if idx.len() < 2 {
        return Err(BarwError::InsufficientSamples { needed: 2, got: idx.len() });
    }
    let d = summary.dim;
    let n = summary.count as f64;
    let rows: Vec<LlnRow> = idx
        .iter()
        .map(|&c| {
            let k = summary.checkpoints[c] as f64;
            let scale = k.sqrt();
            // normalized holds X_k / sqrt(k); |X_k| / k = |normalized| / sqrt(k)
            let norms: Vec<f64> = summary.normalized[c]
                .iter()
                .map(|v| v[..d].iter().map(|x| x * x).sum::<f64>().sqrt() / scale)
                .collect();
            let (m, var) = mean_var(&norms);
            let mean_norm = summary.means[c][..d].iter().map(|x| x * x).sum::<f64>().sqrt() / k;
            LlnRow { k: summary.checkpoints[c], mean_norm_over_k: mean_norm, mean_abs_over_k: m, standard_error: (var / n).sqrt() }
        })
        .collect();
    let last = *idx.last().expect("non-empty");
    let mean_within_3se: Vec<bool> =
        (0..d).map(|a| summary.means[last][a].abs() <= 3.0 * (summary.covariances[last][a][a] / n).sqrt()).collect();
    let below_threshold = rows.last().expect("non-empty").mean_abs_over_k < threshold;
    let half = rows.len() / 2;
    let decreasing_tail = rows[half..]
        .windows(2)
        .all(|w| w[1].mean_abs_over_k <= w[0].mean_abs_over_k + 3.0 * (w[0].standard_error + w[1].standard_error));
    let pass = below_threshold && decreasing_tail && mean_within_3se.iter().all(|b| *b);
    Ok(LlnReport { rows, threshold, mean_within_3se, below_threshold, decreasing_tail, pass })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CltReport {
    pub k: usize,
    pub samples: usize,
    /// Per-axis variance of `X_k / sqrt(k)` about zero.
    pub sigma2_hat: Vec<f64>,
    pub alpha: f64,
    pub tests: Vec<TestResult>,
    pub pass: bool,
}

fn axis_name(a: usize) -> String {
    format!("x{}", a + 1)
}

/// Normality, centring and isotropy of `X_k / sqrt(k)` at checkpoint index `c`.
///
/// Runs per-axis KS tests against `N(0, sigma2_hat)` with
/// `sigma2_hat = mean(X^2)`, per-axis zero-mean z-tests, and for `d >= 2`
/// pairwise zero-correlation and equal-variance tests.
pub fn clt_diagnostic(summary: &EnsembleSummary, c: usize, alpha: f64) -> Result<CltReport> {
    if summary.count < MIN_CLT_SAMPLES {
        return Err(BarwError::InsufficientSamples { needed: MIN_CLT_SAMPLES, got: summary.count });
    }
    let k = *summary
        .checkpoints
        .get(c)
        .ok_or_else(|| BarwError::Invalid(format!("checkpoint index {c} out of range")))?;
    if k == 0 {
        return Err(BarwError::Invalid("CLT diagnostic needs k > 0".into()));
    }
    let d = summary.dim;
    let cols: Vec<Vec<f64>> = (0..d).map(|a| summary.normalized[c].iter().map(|v| v[a]).collect()).collect();
    let sigma2_hat: Vec<f64> = cols.iter().map(|x| mean_square(x)).collect();
    let mut tests = Vec::new();
    for a in 0..d {
        let (stat, p) = ks_normal(&cols[a], sigma2_hat[a])?;
        tests.push(TestResult::new(format!("ks_normal[{}]", axis_name(a)), stat, p, alpha));
        let (z, p) = z_test_zero_mean(&cols[a])?;
        tests.push(TestResult::new(format!("zero_mean[{}]", axis_name(a)), z, p, alpha));
    }
    for a in 0..d {
        for b in a + 1..d {
            let (r, p) = correlation_test(&cols[a], &cols[b])?;
            tests.push(TestResult::new(format!("correlation[{},{}]", axis_name(a), axis_name(b)), r, p, alpha));
            let (f, p) = variance_ratio_test(&cols[a], &cols[b], true)?;
            tests.push(TestResult::new(format!("equal_variance[{},{}]", axis_name(a), axis_name(b)), f, p, alpha));
        }
    }
    let pass = tests.iter().all(|t| t.pass);
    Ok(CltReport { k, samples: summary.count, sigma2_hat, alpha, tests, pass })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// `|intercept| / (slope * k_max)`.
    pub intercept_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FcltReport {
    /// Per-axis variance averaged over axes, one entry per checkpoint with `k > 0`.
    pub variances: Vec<(usize, f64)>,
    pub variance_fit: VarianceFit,
    pub min_r_squared: f64,
    pub max_intercept_ratio: f64,
    pub alpha: f64,
    pub tests: Vec<TestResult>,
    pub pass: bool,
}

pub const DEFAULT_MIN_R_SQUARED: f64 = 0.99;
pub const DEFAULT_MAX_INTERCEPT_RATIO: f64 = 0.1;

/// Brownian-scaling checks across checkpoints.
///
/// Fits `Var(X_k)` against `k`, tests that each increment between consecutive
/// checkpoints is uncorrelated with the position at the earlier one, and runs
/// a KS test on each normalised increment against a fitted centred normal.
pub fn fclt_diagnostic(e: &Ensemble, alpha: f64) -> Result<FcltReport> {
    if e.len() < MIN_CLT_SAMPLES {
        return Err(BarwError::InsufficientSamples { needed: MIN_CLT_SAMPLES, got: e.len() });
    }
    let idx: Vec<usize> = (0..e.checkpoints.len()).filter(|&c| e.checkpoints[c] > 0).collect();
    if idx.len() < 3 {
        return Err(BarwError::InsufficientSamples { needed: 3, got: idx.len() });
    }
    let d = e.dim;
    let variances: Vec<(usize, f64)> = idx
        .iter()
        .map(|&c| {
            let v = (0..d).map(|a| mean_var(&e.component(c, a)).1).sum::<f64>() / d as f64;
            (e.checkpoints[c], v)
        })
        .collect();
    let xs: Vec<f64> = variances.iter().map(|(k, _)| *k as f64).collect();
    let ys: Vec<f64> = variances.iter().map(|(_, v)| *v).collect();
    let (slope, intercept, r_squared) = linear_fit(&xs, &ys);
    let k_max = *xs.last().expect("non-empty");
    let intercept_ratio = if slope > 0.0 { intercept.abs() / (slope * k_max) } else { f64::INFINITY };
    let variance_fit = VarianceFit { slope, intercept, r_squared, intercept_ratio };

    let mut tests = Vec::new();
    for w in idx.windows(2) {
        let (j, k) = (w[0], w[1]);
        let (kj, kk) = (e.checkpoints[j], e.checkpoints[k]);
        let scale = 1.0 / ((kk - kj) as f64).sqrt();
        for a in 0..d {
            let before = e.component(j, a);
            let incr: Vec<f64> = e.positions.iter().map(|row| (row[k][a] - row[j][a]) * scale).collect();
            let (r, p) = correlation_test(&incr, &before)?;
            tests.push(TestResult::new(format!("increment_correlation[{},{}..{}]", axis_name(a), kj, kk), r, p, alpha));
            let (stat, p) = ks_normal(&incr, mean_square(&incr))?;
            tests.push(TestResult::new(format!("increment_ks[{},{}..{}]", axis_name(a), kj, kk), stat, p, alpha));
        }
    }
    let pass = r_squared > DEFAULT_MIN_R_SQUARED
        && intercept_ratio <= DEFAULT_MAX_INTERCEPT_RATIO
        && tests.iter().all(|t| t.pass);
    Ok(FcltReport {
        variances,
        variance_fit,
        min_r_squared: DEFAULT_MIN_R_SQUARED,
        max_intercept_ratio: DEFAULT_MAX_INTERCEPT_RATIO,
        alpha,
        tests,
        pass,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NullCalibration {
    pub replicas: usize,
    pub samples: usize,
    pub alpha: f64,
    /// Rejection count per test name.
    pub rejections: BTreeMap<String, usize>,
    pub max_rate: f64,
    pub max_allowed_rate: f64,
    pub pass: bool,
}

pub const NULL_MAX_REJECTION_RATE: f64 = 0.04;

/// Runs [`clt_diagnostic`] on `replicas` synthetic centred Gaussian ensembles
/// and counts rejections per test.
pub fn null_calibration(dim: usize, replicas: usize, samples: usize, alpha: f64, seed: u64) -> Result<NullCalibration> {
    let reports: Vec<CltReport> = (0..replicas)
        .into_par_iter()
        .map(|i| {
            let seed_i = seed.wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(i as u64 + 1));
            let e = Ensemble::gaussian(dim, samples, vec![64], 1.0, seed_i)?;
            clt_diagnostic(&EnsembleSummary::from_ensemble(&e)?, 0, alpha)
        })
        .collect::<Result<_>>()?;
    let mut rejections = BTreeMap::new();
    for r in &reports {
        for t in &r.tests {
            *rejections.entry(t.test.clone()).or_insert(0) += usize::from(!t.pass);
        }
    }
    let max_rate = rejections.values().map(|&c| c as f64 / replicas.max(1) as f64).fold(0.0, f64::max);
    Ok(NullCalibration {
        replicas,
        samples,
        alpha,
        rejections,
        max_rate,
        max_allowed_rate: NULL_MAX_REJECTION_RATE,
        pass: max_rate <= NULL_MAX_REJECTION_RATE,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_paths_pass_lln() {
        let mut e = Ensemble::new(2, vec![1, 10, 100]).unwrap();
        for _ in 0..10 {
            e.push_path(&vec![Point::ORIGIN; 101]).unwrap();
        }
        let s = EnsembleSummary::from_ensemble(&e).unwrap();
        let r = lln_diagnostic(&s, 0.01).unwrap();
        assert!(r.pass);
        assert!(r.rows.iter().all(|row| row.mean_abs_over_k == 0.0 && row.mean_norm_over_k == 0.0));
    }

    #[test]
    fn gaussian_ensemble_passes_clt_with_variance_recovered() {
        let e = Ensemble::gaussian(2, 4000, vec![16, 64, 256], 2.5, 3).unwrap();
        let s = EnsembleSummary::from_ensemble(&e).unwrap();
        let r = clt_diagnostic(&s, 2, DEFAULT_ALPHA).unwrap();
        assert!(r.pass, "{:?}", r.tests);
        for v in r.sigma2_hat {
            assert!((v / 2.5 - 1.0).abs() < 0.05, "{v}");
        }
        let cov = s.covariances[1];
        assert_eq!(cov[0][1], cov[1][0]);
        assert!(cov[0][0] * cov[1][1] >= cov[0][1] * cov[0][1]);
    }

    #[test]
    fn clt_needs_enough_samples() {
        let e = Ensemble::gaussian(1, 100, vec![4], 1.0, 1).unwrap();
        let s = EnsembleSummary::from_ensemble(&e).unwrap();
        assert_eq!(clt_diagnostic(&s, 0, 0.01).unwrap_err(), BarwError::InsufficientSamples { needed: 500, got: 100 });
    }

    #[test]
    fn clt_rejects_skewed_and_anisotropic() {
        let mut e = Ensemble::new(2, vec![1]).unwrap();
        let g = Ensemble::gaussian(2, 2000, vec![1], 1.0, 17).unwrap();
        for row in &g.positions {
            let v = row[0];
            e.push_row(vec![[v[0].abs() - 0.8, 3.0 * v[1], 0.0]]).unwrap();
        }
        let r = clt_diagnostic(&EnsembleSummary::from_ensemble(&e).unwrap(), 0, 0.01).unwrap();
        assert!(!r.pass);
        let failed: Vec<&str> = r.tests.iter().filter(|t| !t.pass).map(|t| t.test.as_str()).collect();
        assert!(failed.contains(&"ks_normal[x1]"));
        assert!(failed.contains(&"equal_variance[x1,x2]"));
    }

    #[test]
    fn brownian_ensemble_passes_fclt() {
        let e = Ensemble::gaussian(1, 2000, vec![100, 200, 400, 800], 1.0, 8).unwrap();
        let r = fclt_diagnostic(&e, DEFAULT_ALPHA).unwrap();
        assert!(r.pass, "{r:?}");
        assert!((r.variance_fit.slope - 1.0).abs() < 0.1);
    }

    #[test]
    fn moments_csv_layout() {
        let e = Ensemble::gaussian(2, 10, vec![1, 2], 1.0, 1).unwrap();
        let s = EnsembleSummary::from_ensemble(&e).unwrap();
        let mut buf = Vec::new();
        s.write_moments_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "k,mean_1,mean_2,var_1,var_2");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("1,"));
    }

    #[test]
    fn checkpoints_validated() {
        assert!(Ensemble::new(1, vec![]).is_err());
        assert!(Ensemble::new(1, vec![3, 3]).is_err());
        assert!(Ensemble::new(4, vec![1]).is_err());
        let mut e = Ensemble::new(1, vec![5]).unwrap();
        assert!(e.push_path(&[Point::ORIGIN; 3]).is_err());
    }
}
