//! Classical hypothesis tests with asymptotic p-values.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, FisherSnedecor, Normal, StudentsT};

use crate::error::{BarwError, Result};

/// One line of a test report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub test: String,
    pub statistic: f64,
    pub p_value: f64,
    pub pass: bool,
}

impl TestResult {
    pub fn new(test: impl Into<String>, statistic: f64, p_value: f64, alpha: f64) -> Self {
        Self { test: test.into(), statistic, p_value, pass: p_value > alpha }
    }
}

/// Statistic, degrees of freedom and upper-tail p-value of a chi-square test.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChiSquare {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

fn chi2_sf(x: f64, dof: usize) -> f64 {
    ChiSquared::new(dof as f64).expect("positive dof").sf(x)
}

/// Minimum expected count per cell after pooling.
pub const MIN_EXPECTED: f64 = 5.0;

/// Pearson goodness-of-fit of `observed` counts against cell probabilities.
///
/// Cells with expected count below [`MIN_EXPECTED`] are pooled into one cell;
/// if that cell is still too small it absorbs the smallest remaining cell.
pub fn chi_square_gof(observed: &[u64], probs: &[f64]) -> Result<ChiSquare> {
    if observed.len() != probs.len() {
        return Err(BarwError::Invalid("observed and probability vectors differ in length".into()));
    }
    let n: u64 = observed.iter().sum();
    let total_p: f64 = probs.iter().sum();
    if n == 0 || !(total_p > 0.0) {
        return Err(BarwError::InsufficientSamples { needed: 1, got: n as usize });
    }
    let mut cells: Vec<(f64, f64)> =
        observed.iter().zip(probs).map(|(&o, &p)| (o as f64, n as f64 * p / total_p)).collect();
    cells.sort_by(|a, b| a.1.total_cmp(&b.1));
    let mut pooled = (0.0, 0.0);
    let mut kept = Vec::with_capacity(cells.len());
    for c in cells {
        if c.1 < MIN_EXPECTED {
            pooled.0 += c.0;
            pooled.1 += c.1;
        } else {
            kept.push(c);
        }
    }
    if pooled.1 > 0.0 || pooled.0 > 0.0 {
        if pooled.1 < MIN_EXPECTED && !kept.is_empty() {
            let c = kept.remove(0);
            pooled.0 += c.0;
            pooled.1 += c.1;
        }
        kept.push(pooled);
    }
    if kept.len() < 2 {
        return Err(BarwError::InsufficientSamples { needed: 2, got: kept.len() });
    }
    let statistic: f64 = kept
        .iter()
        .map(|(o, e)| if *e > 0.0 { (o - e).powi(2) / e } else if *o > 0.0 { f64::INFINITY } else { 0.0 })
        .sum();
    let dof = kept.len() - 1;
    let p_value = if statistic.is_finite() { chi2_sf(statistic, dof) } else { 0.0 };
    Ok(ChiSquare { statistic, dof, p_value })
}

/// Two-sample chi-square test of homogeneity on a shared set of categories.
///
/// Categories whose pooled expected count is below [`MIN_EXPECTED`] in either
/// sample are merged into a single category.
pub fn chi_square_two_sample(a: &[u64], b: &[u64]) -> Result<ChiSquare> {
    if a.len() != b.len() {
        return Err(BarwError::Invalid("histograms differ in length".into()));
    }
    let na: u64 = a.iter().sum();
    let nb: u64 = b.iter().sum();
    if na == 0 || nb == 0 {
        return Err(BarwError::InsufficientSamples { needed: 1, got: na.min(nb) as usize });
    }
    let n = (na + nb) as f64;
    let (fa, fb) = (na as f64 / n, nb as f64 / n);
    let mut kept: Vec<(f64, f64)> = Vec::new();
    let mut small = (0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let tot = (x + y) as f64;
        if tot == 0.0 {
            continue;
        }
        if tot * fa.min(fb) < MIN_EXPECTED {
            small.0 += x as f64;
            small.1 += y as f64;
        } else {
            kept.push((x as f64, y as f64));
        }
    }
    if small.0 + small.1 > 0.0 {
        kept.push(small);
    }
    if kept.len() < 2 {
        return Err(BarwError::InsufficientSamples { needed: 2, got: kept.len() });
    }
    let statistic: f64 = kept
        .iter()
        .map(|(x, y)| {
            let tot = x + y;
            let (ea, eb) = (tot * fa, tot * fb);
            (x - ea).powi(2) / ea + (y - eb).powi(2) / eb
        })
        .sum();
    let dof = kept.len() - 1;
    Ok(ChiSquare { statistic, dof, p_value: chi2_sf(statistic, dof) })
}

/// Survival function of the Kolmogorov distribution, `P(K > t)`.
pub fn kolmogorov_sf(t: f64) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    if t < 1.0 {
        // small-t form converges faster
        let c = (2.0 * std::f64::consts::PI).sqrt() / t;
        let q = (-std::f64::consts::PI.powi(2) / (8.0 * t * t)).exp();
        let mut s = 0.0;
        let mut k = 1i32;
        loop {
            let term = q.powi(k * k);
            s += term;
            if term < 1e-17 || k > 100 {
                break;
            }
            k += 2;
        }
        return (1.0 - c * s).clamp(0.0, 1.0);
    }
    let mut s = 0.0;
    for k in 1..=100i32 {
        let term = (-2.0 * (k * k) as f64 * t * t).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// One-sample Kolmogorov-Smirnov test against `N(0, variance)`.
///
/// The p-value uses the Stephens finite-sample correction of the Kolmogorov
/// limit. With a fitted variance the test is conservative.
pub fn ks_normal(samples: &[f64], variance: f64) -> Result<(f64, f64)> {
    let n = samples.len();
    if n < 2 {
        return Err(BarwError::InsufficientSamples { needed: 2, got: n });
    }
    if !(variance > 0.0) {
        return Err(BarwError::Domain { what: "variance", expected: "variance > 0", value: variance });
    }
    let normal = Normal::new(0.0, variance.sqrt()).expect("valid normal");
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let nf = n as f64;
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal.cdf(x);
            (f - i as f64 / nf).max((i + 1) as f64 / nf - f)
        })
        .fold(0.0f64, f64::max);
    let sn = nf.sqrt();
    Ok((d, kolmogorov_sf((sn + 0.12 + 0.11 / sn) * d)))
}

/// Two-sided z-test of zero mean with the sample standard deviation.
pub fn z_test_zero_mean(samples: &[f64]) -> Result<(f64, f64)> {
    let n = samples.len();
    if n < 2 {
        return Err(BarwError::InsufficientSamples { needed: 2, got: n });
    }
    let (mean, var) = mean_var(samples);
    if var == 0.0 {
        return Ok(if mean == 0.0 { (0.0, 1.0) } else { (f64::INFINITY, 0.0) });
    }
    let z = mean / (var / n as f64).sqrt();
    Ok((z, 2.0 * normal_sf(z.abs())))
}

pub fn normal_sf(z: f64) -> f64 {
    Normal::standard().sf(z)
}

/// t-test of zero Pearson correlation, returning `(r, p)`.
pub fn correlation_test(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    let n = x.len();
    if n != y.len() {
        return Err(BarwError::Invalid("samples differ in length".into()));
    }
    if n < 4 {
        return Err(BarwError::InsufficientSamples { needed: 4, got: n });
    }
    let r = pearson(x, y);
    if !r.is_finite() {
        return Ok((0.0, 1.0));
    }
    if r.abs() >= 1.0 {
        return Ok((r, 0.0));
    }
    let df = (n - 2) as f64;
    let t = r * (df / (1.0 - r * r)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("valid t");
    Ok((r, 2.0 * dist.sf(t.abs())))
}

/// Two-sided F-test of equal variances, returning `(F, p)`.
///
/// Variances are taken about zero when `centred` is true.
pub fn variance_ratio_test(x: &[f64], y: &[f64], centred: bool) -> Result<(f64, f64)> {
    let (nx, ny) = (x.len(), y.len());
    if nx < 3 || ny < 3 {
        return Err(BarwError::InsufficientSamples { needed: 3, got: nx.min(ny) });
    }
    let (vx, dx) = if centred { (mean_square(x), nx as f64) } else { (mean_var(x).1, (nx - 1) as f64) };
    let (vy, dy) = if centred { (mean_square(y), ny as f64) } else { (mean_var(y).1, (ny - 1) as f64) };
    if vx == 0.0 && vy == 0.0 {
        return Ok((1.0, 1.0));
    }
    let f = vx / vy;
    let dist = FisherSnedecor::new(dx, dy).expect("valid F");
    let tail = dist.cdf(f).min(dist.sf(f));
    Ok((f, (2.0 * tail).min(1.0)))
}

/// Sample mean and unbiased variance.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var)
}

pub fn mean_square(xs: &[f64]) -> f64 {
    xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let (mx, _) = mean_var(x);
    let (my, _) = mean_var(y);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

/// Ordinary least squares `y = intercept + slope x`, returning `(slope, intercept, r_squared)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let (mx, _) = mean_var(x);
    let (my, _) = mean_var(y);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, intercept, r2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kolmogorov_sf_reference_values() {
        // tabulated: P(K > 1.36) ~ 0.049, P(K > 1.63) ~ 0.0098
        assert!((kolmogorov_sf(1.3581) - 0.05).abs() < 5e-4);
        assert!((kolmogorov_sf(1.6276) - 0.01).abs() < 2e-4);
        // the small-t series agrees with the alternating series at the switch
        let lo = {
            let t: f64 = 1.0;
            let c = (2.0 * std::f64::consts::PI).sqrt() / t;
            let q = (-std::f64::consts::PI.powi(2) / (8.0 * t * t)).exp();
            1.0 - c * (q + q.powi(9) + q.powi(25))
        };
        assert!((lo - kolmogorov_sf(1.0)).abs() < 1e-6);
        assert_eq!(kolmogorov_sf(0.0), 1.0);
    }

    #[test]
    fn gof_exact_fit_has_unit_p() {
        let obs = [250u64, 250, 250, 250];
        let r = chi_square_gof(&obs, &[0.25; 4]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.dof, 3);
        assert!((r.p_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gof_pools_small_cells() {
        let obs = [500u64, 497, 2, 1];
        let probs = [0.5, 0.497, 0.002, 0.001];
        let r = chi_square_gof(&obs, &probs).unwrap();
        // pooled tiny cells absorb the smallest big cell: 2 cells remain
        assert_eq!(r.dof, 1);
    }

    #[test]
    fn gof_detects_bias() {
        let obs = [600u64, 400];
        let r = chi_square_gof(&obs, &[0.5, 0.5]).unwrap();
        assert!((r.statistic - 40.0).abs() < 1e-9);
        assert!(r.p_value < 1e-9);
    }

    #[test]
    fn two_sample_identical_histograms() {
        let a = [10u64, 20, 30, 40];
        let r = chi_square_two_sample(&a, &a).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.dof, 3);
    }

    #[test]
    fn two_sample_matches_hand_computation() {
        // 2x2 table [[30, 70], [50, 50]]: chi2 = 8.3333
        let r = chi_square_two_sample(&[30, 70], &[50, 50]).unwrap();
        assert!((r.statistic - 8.333_333_333).abs() < 1e-6);
        assert!((r.p_value - 0.003_892_417).abs() < 1e-6);
    }

    #[test]
    fn correlation_and_fit() {
        let x: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 + 2.0 * v).collect();
        let (s, i, r2) = linear_fit(&x, &y);
        assert!((s - 2.0).abs() < 1e-12 && (i - 3.0).abs() < 1e-10 && (r2 - 1.0).abs() < 1e-12);
        let (r, p) = correlation_test(&x, &y).unwrap();
        assert!((r - 1.0).abs() < 1e-12 && p == 0.0);
    }

    #[test]
    fn f_test_symmetry() {
        let x = [1.0, -2.0, 0.5, 3.0, -1.0];
        let y = [0.5, -1.0, 0.25, 1.5, -0.5];
        let (f1, p1) = variance_ratio_test(&x, &y, true).unwrap();
        let (f2, p2) = variance_ratio_test(&y, &x, true).unwrap();
        assert!((f1 - 4.0).abs() < 1e-12 && (f1 * f2 - 1.0).abs() < 1e-12);
        assert!((p1 - p2).abs() < 1e-12);
    }
}
