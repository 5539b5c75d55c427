//! Comparison density profiles.
//!
//! A pair of families `zeta_k^-(x) <= zeta_k^+(x)` brackets local densities at
//! step `k`. Near the origin the bracket is the tight interval
//! `[alpha_m0, beta_m0]` around the fixpoint; it widens along a staircase of
//! step length `r` and ends in a linear front of width `ceil(w r)` that falls
//! to `eps0`. Each step of `k` pushes everything outward by `ceil(s r)`.
//!
//! [`certify_cdp`] checks numerically that one step of the dynamics maps the
//! bracket at `k` into the bracket at `k + 1` with relative margin `delta`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{interval_argextrema, interval_extrema, phi, MU_MAX};
use crate::error::{BarwError, Result};
use crate::lattice::ball_volume;
use crate::noise::{DrivingNoise, NoiseSlice};
use crate::point::{Point, MAX_DIM};

pub const DEFAULT_SLACK: f64 = 0.1;

/// Nested intervals `[alpha_m, beta_m]` shrinking to the fixpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaBetaSeq {
    pub mu: f64,
    pub slack: f64,
    /// `alpha[m - 1]` is `alpha_m`.
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl AlphaBetaSeq {
    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    /// `alpha_m` for `m >= 1`.
    pub fn alpha(&self, m: usize) -> f64 {
        self.alpha[m - 1]
    }

    pub fn beta(&self, m: usize) -> f64 {
        self.beta[m - 1]
    }
}

pub fn build_alpha_beta(mu: f64, alpha1: f64, beta1: f64, m_max: usize) -> Result<AlphaBetaSeq> {
    build_alpha_beta_with_slack(mu, alpha1, beta1, m_max, DEFAULT_SLACK)
}

/// Iterates `alpha_{m+1} = lo - slack (lo - alpha_m)` and
/// `beta_{m+1} = hi + slack (beta_m - hi)`, where `[lo, hi]` is the image of
/// `[alpha_m, beta_m]` under `phi_mu`. Each new endpoint lies strictly between
/// the previous one and the image, so the image sits strictly inside the next
/// interval.
///
/// In double precision the endpoints reach the fixpoint after a few dozen
/// steps, after which strict nesting fails; keep `m_max` moderate.
pub fn build_alpha_beta_with_slack(mu: f64, alpha1: f64, beta1: f64, m_max: usize, slack: f64) -> Result<AlphaBetaSeq> {
    if !(mu > 1.0 && mu < MU_MAX) {
        return Err(BarwError::Domain { what: "mu", expected: "1 < mu < e^2", value: mu });
    }
    let theta = mu.ln() / mu;
    if !(alpha1 > 0.0 && alpha1 < theta) {
        return Err(BarwError::Domain { what: "alpha1", expected: "0 < alpha1 < theta_mu", value: alpha1 });
    }
    if !(beta1 > (-1.0f64).exp()) {
        return Err(BarwError::Domain { what: "beta1", expected: "beta1 > 1/e", value: beta1 });
    }
    if !(slack > 0.0 && slack < 1.0) {
        return Err(BarwError::Domain { what: "slack", expected: "0 < slack < 1", value: slack });
    }
    if m_max == 0 {
        return Err(BarwError::Invalid("m_max must be at least 1".into()));
    }
    let mut alpha = vec![alpha1];
    let mut beta = vec![beta1];
    for m in 1..m_max {
        let (a, b) = (alpha[m - 1], beta[m - 1]);
        let (lo, hi) = interval_extrema(mu, a, b);
        if lo <= a {
            return Err(BarwError::NestingFailure {
                index: m,
                detail: format!("inf of phi over [alpha_{m}, beta_{m}] is {lo}, not above alpha_{m} = {a}"),
            });
        }
        if hi >= b {
            return Err(BarwError::NestingFailure {
                index: m,
                detail: format!("sup of phi over [alpha_{m}, beta_{m}] is {hi}, not below beta_{m} = {b}"),
            });
        }
        alpha.push(lo - slack * (lo - a));
        beta.push(hi + slack * (b - hi));
    }
    Ok(AlphaBetaSeq { mu, slack, alpha, beta })
}

/// Least `m` with `alpha_m` and `beta_m` both within `eps_fp` of the fixpoint.
pub fn m0(seq: &AlphaBetaSeq, eps_fp: f64) -> Result<usize> {
    let theta = seq.mu.ln() / seq.mu;
    (0..seq.len())
        .find(|&i| (seq.alpha[i] - theta).abs() <= eps_fp && (seq.beta[i] - theta).abs() <= eps_fp)
        .map(|i| i + 1)
        .ok_or(BarwError::M0NotFound { m_max: seq.len(), eps_fp })
}

/// Lower and upper density bounds indexed by step and site.
pub trait DensityProfile: Sync {
    fn dim(&self) -> usize;
    /// Averaging radius `r`.
    fn radius(&self) -> usize;
    fn lower(&self, k: usize, x: &Point) -> f64;
    fn upper(&self, k: usize, x: &Point) -> f64;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Lower,
    Upper,
}

/// Geometry of a profile pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileShape {
    /// Averaging radius `r`.
    pub r: usize,
    /// Radius of the tight plateau at `k = 0`.
    pub r_max: usize,
    /// Front speed in units of `r`.
    pub s: f64,
    /// Front width in units of `r`.
    pub w: f64,
    /// Value at the outer edge of the front.
    pub eps0: f64,
    /// Last step index covered.
    pub k0: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfilePair {
    pub dim: usize,
    pub shape: ProfileShape,
    pub m0: usize,
    /// `alpha_1..alpha_m0`.
    pub alpha: Vec<f64>,
    /// `beta_1..beta_m0`.
    pub beta: Vec<f64>,
}

impl ProfilePair {
    pub fn new(seq: &AlphaBetaSeq, m0: usize, shape: ProfileShape, dim: usize) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(BarwError::UnsupportedDimension(dim));
        }
        if m0 == 0 || m0 > seq.len() {
            return Err(BarwError::Invalid(format!("m0 = {m0} outside 1..={}", seq.len())));
        }
        if shape.r == 0 {
            return Err(BarwError::Domain { what: "r", expected: "r >= 1", value: 0.0 });
        }
        if !(shape.s > 0.0 && shape.s < 1.0) {
            return Err(BarwError::Domain { what: "s", expected: "0 < s < 1", value: shape.s });
        }
        if !(shape.w >= 2.0) {
            return Err(BarwError::Domain { what: "w", expected: "w >= 2", value: shape.w });
        }
        if !(shape.eps0 > 0.0 && shape.eps0 < seq.alpha(1)) {
            return Err(BarwError::Domain { what: "eps0", expected: "0 < eps0 < alpha_1", value: shape.eps0 });
        }
        Ok(Self { dim, shape, m0, alpha: seq.alpha[..m0].to_vec(), beta: seq.beta[..m0].to_vec() })
    }

    /// `ceil(s r)`, the outward shift per step.
    pub fn speed(&self) -> i64 {
        (self.shape.s * self.shape.r as f64).ceil() as i64
    }

    /// `ceil(w r)`.
    pub fn front_width(&self) -> i64 {
        (self.shape.w * self.shape.r as f64).ceil() as i64
    }

    /// Radius of the tight plateau at step `k`.
    pub fn plateau_radius(&self, k: usize) -> i64 {
        self.shape.r_max as i64 + k as i64 * self.speed()
    }

    /// Radius where the staircase ends and the front begins.
    pub fn staircase_end(&self, k: usize) -> i64 {
        self.plateau_radius(k) + (self.m0 * self.shape.r) as i64
    }

    /// Radius of the support of the lower profile.
    pub fn support_radius(&self, k: usize) -> i64 {
        self.staircase_end(k) + self.front_width()
    }

    /// The front function: `alpha_1` inside the staircase end, then a product of
    /// per-axis linear ramps reaching `eps0` at the support boundary on each axis.
    pub fn chi(&self, k: usize, x: &Point) -> f64 {
        let a1 = self.alpha[0];
        let inner = self.staircase_end(k);
        if x.sup_norm(self.dim) <= inner {
            return a1;
        }
        let outer = (inner + self.front_width()) as f64;
        let width = self.front_width() as f64;
        let floor = (self.shape.eps0 / a1).powf(1.0 / self.dim as f64);
        let mut v = a1;
        for &c in x.coords(self.dim) {
            let c = c.abs() as f64;
            let f = if outer >= c { (floor + (outer - c) / width).min(1.0) } else { 0.0 };
            v *= f;
        }
        v
    }

    /// Staircase level at sup-norm `n`: 0 on the plateau, `j` on step `j`, or
    /// `None` past the staircase. Boundaries go to the inner case.
    fn stair(&self, k: usize, n: i64) -> Option<usize> {
        let base = self.plateau_radius(k);
        if n <= base {
            return Some(0);
        }
        let r = self.shape.r as i64;
        let j = ((n - base) + r - 1) / r;
        (j as usize <= self.m0).then_some(j as usize)
    }

    pub fn zeta(&self, k: usize, x: &Point, side: Side) -> f64 {
        let n = x.sup_norm(self.dim);
        let seq = match side {
            Side::Lower => &self.alpha,
            Side::Upper => &self.beta,
        };
        match self.stair(k, n) {
            Some(0) => seq[self.m0 - 1],
            Some(j) => seq[self.m0 - j],
            None => match side {
                Side::Lower => self.chi(k, x),
                Side::Upper => self.beta[0].max(1.0),
            },
        }
    }

    pub fn zeta_minus(&self, k: usize, x: &Point) -> f64 {
        self.zeta(k, x, Side::Lower)
    }

    pub fn zeta_plus(&self, k: usize, x: &Point) -> f64 {
        self.zeta(k, x, Side::Upper)
    }
}

impl DensityProfile for ProfilePair {
    fn dim(&self) -> usize {
        self.dim
    }

    fn radius(&self) -> usize {
        self.shape.r
    }

    fn lower(&self, k: usize, x: &Point) -> f64 {
        self.zeta_minus(k, x)
    }

    fn upper(&self, k: usize, x: &Point) -> f64 {
        self.zeta_plus(k, x)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    /// Lower profile above the upper one.
    Ordering,
    /// Lower profile below `eps` on its support.
    Floor,
    /// Worst-case image sum below `(1 + delta)` times the next lower profile.
    Lower,
    /// Worst-case image sum above `(1 - delta)` times the next upper profile.
    Upper,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub k: usize,
    pub x: Vec<i64>,
    pub condition: Condition,
    pub margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMargins {
    pub k: usize,
    /// Minimum over sites of `lower_sum - (1 + delta) zeta_{k+1}^-`.
    pub lower: f64,
    /// Minimum over sites of `(1 - delta) zeta_{k+1}^+ - upper_sum`.
    pub upper: f64,
    pub sites: usize,
}

pub const MAX_LISTED_VIOLATIONS: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CdpReport {
    pub mu: f64,
    pub eps: f64,
    pub delta: f64,
    pub profile: ProfilePair,
    pub steps: Vec<StepMargins>,
    pub min_margin: f64,
    pub violation_count: usize,
    /// The first [`MAX_LISTED_VIOLATIONS`] violations in `(k, x)` order.
    pub violations: Vec<Violation>,
    pub pass: bool,
}

/// Points `x` of `[0, extent]^dim` with `x_1 <= x_2 <= ... <= x_dim`.
fn fundamental_domain(dim: usize, extent: i64) -> Vec<Point> {
    let mut out = Vec::new();
    let mut c = [0i64; MAX_DIM];
    fn rec(dim: usize, axis: usize, lo: i64, extent: i64, c: &mut [i64; MAX_DIM], out: &mut Vec<Point>) {
        if axis == dim {
            out.push(Point(*c));
            return;
        }
        for v in lo..=extent {
            c[axis] = v;
            rec(dim, axis + 1, v, extent, c, out);
        }
        c[axis] = 0;
    }
    rec(dim, 0, 0, extent, &mut c, &mut out);
    out
}

/// Sums `values` (a cube of side `n` in `dim` dimensions) over windows of
/// half-width `r` along every axis, keeping only fully covered windows.
fn box_sums(values: Vec<f64>, dim: usize, n: usize, r: usize) -> (Vec<f64>, usize) {
    let mut data = values;
    let mut shape = vec![n; dim];
    for axis in 0..dim {
        let len = shape[axis];
        let out_len = len - 2 * r;
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let mut next = vec![0.0; outer * out_len * inner];
        let mut prefix = vec![0.0; len + 1];
        for o in 0..outer {
            for i in 0..inner {
                for t in 0..len {
                    prefix[t + 1] = prefix[t] + data[(o * len + t) * inner + i];
                }
                for t in 0..out_len {
                    next[(o * out_len + t) * inner + i] = prefix[t + 2 * r + 1] - prefix[t];
                }
            }
        }
        data = next;
        shape[axis] = out_len;
    }
    (data, n - 2 * r)
}

fn cube_index(x: &Point, dim: usize, side: usize) -> usize {
    x.coords(dim).iter().fold(0, |i, &c| i * side + c as usize)
}

fn certify_step(p: &ProfilePair, mu: f64, eps: f64, delta: f64, k: usize) -> (StepMargins, Vec<Violation>) {
    let d = p.dim;
    let r = p.shape.r as i64;
    let extent = p.support_radius(k);
    // grid covers [-r, extent + r]^d
    let n = (extent + 2 * r + 1) as usize;
    let total = n.pow(d as u32);
    let mut lo = vec![0.0; total];
    let mut hi = vec![0.0; total];
    for idx in 0..total {
        let mut rem = idx;
        let mut c = [0i64; MAX_DIM];
        for a in (0..d).rev() {
            c[a] = (rem % n) as i64 - r;
            rem /= n;
        }
        let y = Point(c);
        let (a, b) = (p.zeta_minus(k, &y), p.zeta_plus(k, &y));
        let (l, h) = interval_extrema(mu, a.min(b), a.max(b));
        lo[idx] = l;
        hi[idx] = h;
    }
    let (lo_sum, side) = box_sums(lo, d, n, r as usize);
    let (hi_sum, _) = box_sums(hi, d, n, r as usize);
    let vol = ball_volume(d, p.shape.r) as f64;
    let mut m = StepMargins { k, lower: f64::INFINITY, upper: f64::INFINITY, sites: 0 };
    let mut violations = Vec::new();
    for x in fundamental_domain(d, extent) {
        let (zm, zp) = (p.zeta_minus(k, &x), p.zeta_plus(k, &x));
        if zm <= 0.0 {
            continue;
        }
        m.sites += 1;
        let coords = x.coords(d).to_vec();
        if zm > zp {
            violations.push(Violation { k, x: coords.clone(), condition: Condition::Ordering, margin: zp - zm });
        }
        if zm < eps {
            violations.push(Violation { k, x: coords.clone(), condition: Condition::Floor, margin: zm - eps });
        }
        let i = cube_index(&x, d, side);
        let lower = lo_sum[i] / vol - (1.0 + delta) * p.zeta_minus(k + 1, &x);
        let upper = (1.0 - delta) * p.zeta_plus(k + 1, &x) - hi_sum[i] / vol;
        m.lower = m.lower.min(lower);
        m.upper = m.upper.min(upper);
        if lower < 0.0 {
            violations.push(Violation { k, x: coords.clone(), condition: Condition::Lower, margin: lower });
        }
        if upper < 0.0 {
            violations.push(Violation { k, x: coords, condition: Condition::Upper, margin: upper });
        }
    }
    (m, violations)
}

/// Checks ordering, the `eps` floor and the one-step propagation inequalities
/// with margin `delta` for every `k < k0` and every site of the lower
/// profile's support, reduced by coordinate permutation and reflection.
///
/// Ordering and floor are checked at `k0` as well.
pub fn certify_cdp(profile: &ProfilePair, mu: f64, eps: f64, delta: f64) -> CdpReport {
    let k0 = profile.shape.k0;
    let results: Vec<(StepMargins, Vec<Violation>)> =
        (0..k0).into_par_iter().map(|k| certify_step(profile, mu, eps, delta, k)).collect();
    let mut steps = Vec::with_capacity(k0);
    let mut all = Vec::new();
    for (m, v) in results {
        steps.push(m);
        all.extend(v);
    }
    for x in fundamental_domain(profile.dim, profile.support_radius(k0)) {
        let (zm, zp) = (profile.zeta_minus(k0, &x), profile.zeta_plus(k0, &x));
        if zm <= 0.0 {
            continue;
        }
        if zm > zp {
            all.push(Violation { k: k0, x: x.coords(profile.dim).to_vec(), condition: Condition::Ordering, margin: zp - zm });
        }
        if zm < eps {
            all.push(Violation { k: k0, x: x.coords(profile.dim).to_vec(), condition: Condition::Floor, margin: zm - eps });
        }
    }
    let min_margin = steps.iter().map(|s| s.lower.min(s.upper)).fold(f64::INFINITY, f64::min);
    let violation_count = all.len();
    all.truncate(MAX_LISTED_VIOLATIONS);
    CdpReport {
        mu,
        eps,
        delta,
        profile: profile.clone(),
        steps,
        min_margin,
        violation_count,
        violations: all,
        pass: violation_count == 0 && min_margin > 0.0,
    }
}

/// Inputs of [`find_cdp_params`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CdpSearch {
    pub mu: f64,
    pub dim: usize,
    /// Averaging radii that must all certify with one parameter tuple.
    pub radii: Vec<usize>,
    /// Dispersal radius; `r_max >= 2 R` is required.
    pub big_r: usize,
    pub r_max: usize,
    pub k0: usize,
    pub alpha1: f64,
    pub beta1: f64,
    pub slack: f64,
    /// Margin passed to [`crate::dynamics::eps_fp`].
    pub contraction_margin: f64,
    pub m_max: usize,
    pub s_grid: Vec<f64>,
    pub w_grid: Vec<f64>,
    /// Multiples of `alpha1` tried for `eps0`.
    pub eps0_fractions: Vec<f64>,
    pub delta_grid: Vec<f64>,
}

impl CdpSearch {
    pub fn new(mu: f64, dim: usize, radii: Vec<usize>, big_r: usize, r_max: usize) -> Self {
        Self {
            mu,
            dim,
            radii,
            big_r,
            r_max,
            k0: 16,
            alpha1: 0.05,
            beta1: 0.4,
            slack: DEFAULT_SLACK,
            contraction_margin: 0.1,
            m_max: 30,
            s_grid: vec![0.1, 0.2, 0.3, 0.4, 0.5],
            w_grid: vec![2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0],
            eps0_fractions: vec![0.5, 0.2, 0.1, 0.05, 0.02, 0.01],
            delta_grid: vec![0.1, 0.05, 0.02, 0.01, 0.005, 0.002, 0.001],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CdpParams {
    pub s: f64,
    pub w: f64,
    pub eps0: f64,
    pub delta0: f64,
    pub m0: usize,
    pub eps_fp: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CdpSearchOutcome {
    pub found: Option<CdpParams>,
    pub tried: usize,
}

/// The sequence and `m0` used by a search.
pub fn search_sequence(search: &CdpSearch) -> Result<(AlphaBetaSeq, usize, f64)> {
    let seq = build_alpha_beta_with_slack(search.mu, search.alpha1, search.beta1, search.m_max, search.slack)?;
    let eps_fp = crate::dynamics::eps_fp(search.mu, search.contraction_margin)?;
    let m0 = m0(&seq, eps_fp)?;
    Ok((seq, m0, eps_fp))
}

/// Builds the profile for one radius of a search.
pub fn search_profile(search: &CdpSearch, seq: &AlphaBetaSeq, m0: usize, r: usize, s: f64, w: f64, eps0: f64) -> Result<ProfilePair> {
    ProfilePair::new(seq, m0, ProfileShape { r, r_max: search.r_max, s, w, eps0, k0: search.k0 }, search.dim)
}

/// Grid search in the order `s`, `w`, `eps0`, `delta` (each as listed) for the
/// first tuple whose profiles certify at every radius with `eps = eps0`.
pub fn find_cdp_params(search: &CdpSearch) -> Result<CdpSearchOutcome> {
    if search.r_max < 2 * search.big_r {
        return Err(BarwError::Invalid(format!("R_max = {} must be at least 2 R = {}", search.r_max, 2 * search.big_r)));
    }
    let (seq, m0, eps_fp) = search_sequence(search)?;
    let mut tried = 0;
    for &s in &search.s_grid {
        for &w in &search.w_grid {
            for &frac in &search.eps0_fractions {
                let eps0 = frac * search.alpha1;
                let profiles: Vec<ProfilePair> = search
                    .radii
                    .iter()
                    .map(|&r| search_profile(search, &seq, m0, r, s, w, eps0))
                    .collect::<Result<_>>()?;
                for &delta0 in &search.delta_grid {
                    tried += 1;
                    if profiles.iter().all(|p| certify_cdp(p, search.mu, eps0, delta0).pass) {
                        return Ok(CdpSearchOutcome { found: Some(CdpParams { s, w, eps0, delta0, m0, eps_fp }), tried });
                    }
                }
            }
        }
    }
    Ok(CdpSearchOutcome { found: None, tried })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BernsteinBound {
    pub eps: f64,
    pub delta: f64,
    pub r: usize,
    pub dim: usize,
    /// Rate constant in the exponent.
    pub c: f64,
    /// `2 exp(-c V_r^d)`.
    pub value: f64,
    /// True when the bound is at least 1 and says nothing.
    pub vacuous: bool,
    /// Ball volume above which the bound drops below 1: `ln 2 / c`.
    pub informative_volume: f64,
}

pub fn bernstein_rate(eps: f64, delta: f64) -> f64 {
    let de = delta * eps;
    de / (1.0 / (2.0 * de) + 2.0 / 3.0)
}

/// Probability bound for one site to leave the bracket in one step.
pub fn bernstein_bound(eps: f64, delta: f64, r: usize, dim: usize) -> Result<BernsteinBound> {
    if !(eps > 0.0) || !(delta > 0.0) {
        return Err(BarwError::Domain { what: "eps, delta", expected: "both > 0", value: eps.min(delta) });
    }
    let c = bernstein_rate(eps, delta);
    let vol = ball_volume(dim, r) as f64;
    let value = 2.0 * (-c * vol).exp();
    Ok(BernsteinBound { eps, delta, r, dim, c, value, vacuous: value >= 1.0, informative_volume: 2f64.ln() / c })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UkEstimate {
    pub trials: usize,
    pub hits: usize,
    pub estimate: f64,
    /// Three binomial standard deviations.
    pub band: f64,
}

/// Monte Carlo estimate of the probability that a fresh uniform block on
/// `B_r(x)` keeps the `r`-density at `x` inside the bracket at `k + 1` for every
/// configuration bracketed at `k`.
///
/// The worst case over configurations is bounded by setting each site's
/// density to the arg-inf (for the lower test) or arg-sup (for the upper test)
/// of `phi_mu` over its bracket. Trial `t` uses the noise slice at time `t`.
pub fn estimate_uk_probability<P: DensityProfile, N: DrivingNoise>(
    profile: &P,
    mu: f64,
    k: usize,
    x: &Point,
    trials: usize,
    noise: &N,
) -> Result<UkEstimate> {
    if trials == 0 {
        return Err(BarwError::InsufficientSamples { needed: 1, got: 0 });
    }
    let d = profile.dim();
    let r = profile.radius() as i64;
    let sites: Vec<Point> = Point::ball(d, r).into_iter().map(|o| *x + o).collect();
    let (p_low, p_high): (Vec<f64>, Vec<f64>) = sites
        .iter()
        .map(|y| {
            let (a, b) = (profile.lower(k, y), profile.upper(k, y));
            let (l, h) = interval_argextrema(mu, a.min(b), a.max(b));
            (phi(mu, l), phi(mu, h))
        })
        .unzip();
    let vol = sites.len() as f64;
    let (target_lo, target_hi) = (profile.lower(k + 1, x), profile.upper(k + 1, x));
    let hits = (0..trials)
        .into_par_iter()
        .filter(|&t| {
            let slice = noise.at_time(t as i64);
            let (mut lo, mut hi) = (0usize, 0usize);
            for (i, y) in sites.iter().enumerate() {
                let u = slice.uniform(y);
                lo += usize::from(u <= p_low[i]);
                hi += usize::from(u <= p_high[i]);
            }
            lo as f64 / vol >= target_lo && hi as f64 / vol <= target_hi
        })
        .count();
    let estimate = hits as f64 / trials as f64;
    let band = 3.0 * (estimate * (1.0 - estimate) / trials as f64).sqrt();
    Ok(UkEstimate { trials, hits, estimate, band })
}
