//! The branching annihilating random walk as a probabilistic cellular automaton.
//!
//! Given `eta_n`, each site is occupied at time `n + 1` independently with
//! probability `phi_mu(delta_R(x; eta_n))`, where `phi_mu(w) = mu w exp(-mu w)`
//! is the chance that a Poisson(`mu w`) variable equals one. [`step`] realises
//! this through the driving noise (`eta_{n+1}(x) = 1{U(x, n+1) <= phi}`), which
//! makes the update a deterministic flow once the noise is fixed.
//! [`step_agents`] runs the original branch / disperse / annihilate procedure
//! and records parents; it serves as an independent oracle for the kernel.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{BarwError, Result};
use crate::lattice::{ball_volume, bernoulli_product_init, count_field, torus_index, torus_point, Config};
use crate::noise::{DrivingNoise, NoiseField, NoiseSlice};
use crate::point::{Point, MAX_DIM};

/// `e^2`, the upper end of the regime with an attractive non-trivial fixpoint.
pub const MU_MAX: f64 = 7.389_056_098_930_65;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub mu: f64,
    /// Dispersal radius `R`.
    pub radius: usize,
    pub dim: usize,
}

impl ModelParams {
    pub fn new(mu: f64, radius: usize, dim: usize) -> Result<Self> {
        if !(mu > 1.0) || !mu.is_finite() {
            return Err(BarwError::Domain { what: "mu", expected: "mu > 1", value: mu });
        }
        if radius == 0 {
            return Err(BarwError::Domain { what: "R", expected: "R >= 1", value: 0.0 });
        }
        if dim == 0 || dim > MAX_DIM {
            return Err(BarwError::UnsupportedDimension(dim));
        }
        Ok(Self { mu, radius, dim })
    }

    /// Additionally requires `mu < e^2`, where the profile machinery applies.
    pub fn new_supported(mu: f64, radius: usize, dim: usize) -> Result<Self> {
        let p = Self::new(mu, radius, dim)?;
        p.require_supported()?;
        Ok(p)
    }

    pub fn require_supported(&self) -> Result<()> {
        if self.mu >= MU_MAX {
            return Err(BarwError::Domain { what: "mu", expected: "1 < mu < e^2", value: self.mu });
        }
        Ok(())
    }

    pub fn theta(&self) -> f64 {
        self.mu.ln() / self.mu
    }

    pub fn ball_volume(&self) -> usize {
        ball_volume(self.dim, self.radius)
    }

    /// `phi_mu(c / V_R^d)` for every possible ball count `c`.
    pub fn phi_table(&self) -> Vec<f64> {
        let vol = self.ball_volume();
        (0..=vol).map(|c| phi(self.mu, c as f64 / vol as f64)).collect()
    }
}

/// `mu w exp(-mu w)` without domain checks.
#[inline]
pub fn phi(mu: f64, w: f64) -> f64 {
    mu * w * (-mu * w).exp()
}

/// `phi_mu'(w) = mu exp(-mu w) (1 - mu w)`.
#[inline]
pub fn phi_derivative(mu: f64, w: f64) -> f64 {
    mu * (-mu * w).exp() * (1.0 - mu * w)
}

pub fn varphi(mu: f64, w: f64) -> Result<f64> {
    if !(w >= 0.0) {
        return Err(BarwError::Domain { what: "w", expected: "w >= 0", value: w });
    }
    Ok(phi(mu, w))
}

/// The non-trivial fixpoint `log(mu) / mu`.
pub fn theta(mu: f64) -> Result<f64> {
    if !(mu > 1.0) {
        return Err(BarwError::Domain { what: "mu", expected: "mu > 1", value: mu });
    }
    Ok(mu.ln() / mu)
}

/// Infimum and supremum of `phi_mu` over `[a, b]`, as `(inf, sup)`.
///
/// `phi_mu` increases up to `1/mu` and decreases after it, so the infimum sits
/// at an endpoint and the supremum at an endpoint or at `1/mu`.
pub fn interval_extrema(mu: f64, a: f64, b: f64) -> (f64, f64) {
    debug_assert!(0.0 <= a && a <= b);
    let (pa, pb) = (phi(mu, a), phi(mu, b));
    let peak = 1.0 / mu;
    let sup = if a <= peak && peak <= b { phi(mu, peak) } else { pa.max(pb) };
    (pa.min(pb), sup)
}

/// Arg-inf and arg-sup of `phi_mu` over `[a, b]`, as `(lambda_low, lambda_high)`.
pub fn interval_argextrema(mu: f64, a: f64, b: f64) -> (f64, f64) {
    let (pa, pb) = (phi(mu, a), phi(mu, b));
    let low = if pa <= pb { a } else { b };
    let peak = 1.0 / mu;
    let high = if a <= peak && peak <= b {
        peak
    } else if pa >= pb {
        a
    } else {
        b
    };
    (low, high)
}

fn check_regime(mu: f64) -> Result<()> {
    if !(mu > 1.0 && mu < MU_MAX) {
        return Err(BarwError::Domain { what: "mu", expected: "1 < mu < e^2", value: mu });
    }
    Ok(())
}

/// Lipschitz constant of `phi_mu` on `[theta - eps, theta + eps]`.
///
/// The supremum of `|phi'|` is attained at an endpoint or at `2/mu`, the
/// critical point of `phi'`. Values `>= 1` mean the interval is too wide for a
/// contraction; see [`require_contraction`].
pub fn contraction_constant(mu: f64, eps: f64) -> Result<f64> {
    check_regime(mu)?;
    let th = mu.ln() / mu;
    if !(eps > 0.0) || th - eps <= 0.0 {
        return Err(BarwError::Domain { what: "eps", expected: "0 < eps < theta_mu", value: eps });
    }
    let (a, b) = (th - eps, th + eps);
    let mut kappa = phi_derivative(mu, a).abs().max(phi_derivative(mu, b).abs());
    let crit = 2.0 / mu;
    if a <= crit && crit <= b {
        kappa = kappa.max(phi_derivative(mu, crit).abs());
    }
    Ok(kappa)
}

pub fn require_contraction(mu: f64, eps: f64, limit: f64) -> Result<f64> {
    let kappa = contraction_constant(mu, eps)?;
    if kappa >= limit {
        return Err(BarwError::NotContraction { kappa, limit, eps });
    }
    Ok(kappa)
}

/// Largest `eps` (to within 1e-9) with `contraction_constant(mu, eps) <= 1 - margin`.
pub fn eps_fp(mu: f64, margin: f64) -> Result<f64> {
    check_regime(mu)?;
    if !(margin > 0.0 && margin < 1.0) {
        return Err(BarwError::Domain { what: "margin", expected: "0 < margin < 1", value: margin });
    }
    let target = 1.0 - margin;
    let at_theta = (1.0 - mu.ln()).abs();
    if at_theta > target {
        return Err(BarwError::NotContraction { kappa: at_theta, limit: target, eps: 0.0 });
    }
    let th = mu.ln() / mu;
    let ok = |e: f64| contraction_constant(mu, e).map(|k| k <= target).unwrap_or(false);
    let mut hi = th * (1.0 - 1e-12);
    if ok(hi) {
        return Ok(hi);
    }
    let mut lo = 0.0;
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

const STEP_CHUNK_WORDS: usize = 64;

/// One PCA update from time `n` to `n + 1` driven by `U(., n + 1)`.
pub fn step<N: DrivingNoise>(cfg: &Config, params: &ModelParams, noise: &N, n: i64) -> Result<Config> {
    check_shape(cfg, params)?;
    let counts = count_field(cfg, params.radius)?.counts;
    let table = params.phi_table();
    let slice = noise.at_time(n + 1);
    let (dim, side, len) = (cfg.dim(), cfg.side(), cfg.len());
    let mut words = vec![0u64; cfg.words().len()];
    let fill = |(chunk_idx, chunk): (usize, &mut [u64])| {
        let start = chunk_idx * STEP_CHUNK_WORDS * 64;
        let mut site = SiteCursor::new(dim, side, start);
        for (w, word) in chunk.iter_mut().enumerate() {
            let lo = start + 64 * w;
            let hi = (lo + 64).min(len);
            let mut bits = 0u64;
            for (b, &c) in counts[lo..hi].iter().enumerate() {
                let p = table[c as usize];
                bits |= u64::from(slice.uniform(&site.point) <= p) << b;
                site.advance();
            }
            *word = bits;
        }
    };
    if words.len() > 4 * STEP_CHUNK_WORDS {
        words.par_chunks_mut(STEP_CHUNK_WORDS).enumerate().for_each(fill);
    } else {
        words.chunks_mut(STEP_CHUNK_WORDS).enumerate().for_each(fill);
    }
    Ok(Config::from_words(dim, side, words))
}

fn check_shape(cfg: &Config, params: &ModelParams) -> Result<()> {
    if cfg.dim() != params.dim {
        return Err(BarwError::Invalid(format!(
            "configuration has dimension {}, model has {}",
            cfg.dim(),
            params.dim
        )));
    }
    if 2 * params.radius + 1 > cfg.side() {
        return Err(BarwError::BallTooLarge { radius: params.radius, side: cfg.side() });
    }
    Ok(())
}

/// Row-major coordinate counter.
pub(crate) struct SiteCursor {
    pub point: Point,
    dim: usize,
    side: i64,
}

impl SiteCursor {
    pub fn new(dim: usize, side: usize, index: usize) -> Self {
        let mut c = [0i64; MAX_DIM];
        let mut i = index;
        for a in (0..dim).rev() {
            c[a] = (i % side) as i64;
            i /= side;
        }
        Self { point: Point(c), dim, side: side as i64 }
    }

    #[inline(always)]
    pub fn advance(&mut self) {
        let mut a = self.dim - 1;
        loop {
            self.point.0[a] += 1;
            if self.point.0[a] < self.side || a == 0 {
                return;
            }
            self.point.0[a] = 0;
            a -= 1;
        }
    }
}

/// The flow map `Phi_{m,n}`: iterates [`step`] from time `m` to time `n`.
pub fn flow<N: DrivingNoise>(cfg: &Config, params: &ModelParams, noise: &N, m: i64, n: i64) -> Result<Config> {
    evolve(cfg, params, noise, m, n, |_, _| {})
}

/// Like [`flow`], calling `observe(t, eta_t)` for every `t` in `m+1..=n`.
pub fn evolve<N: DrivingNoise>(
    cfg: &Config,
    params: &ModelParams,
    noise: &N,
    m: i64,
    n: i64,
    mut observe: impl FnMut(i64, &Config),
) -> Result<Config> {
    if m >= n {
        return Err(BarwError::Invalid(format!("flow needs m < n, got m = {m}, n = {n}")));
    }
    let mut cur = step(cfg, params, noise, m)?;
    observe(m + 1, &cur);
    for t in m + 1..n {
        cur = step(&cur, params, noise, t)?;
        observe(t + 1, &cur);
    }
    Ok(cur)
}

const NO_PARENT: u32 = u32::MAX;

/// Parent of every occupied site of a child generation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParentMap {
    dim: usize,
    side: usize,
    parent: Vec<u32>,
}

impl ParentMap {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn parent_index(&self, child: usize) -> Option<usize> {
        match self.parent[child] {
            NO_PARENT => None,
            p => Some(p as usize),
        }
    }

    /// Parent position in torus coordinates.
    pub fn parent_of(&self, child: &Point) -> Option<Point> {
        self.parent_index(torus_index(self.dim, self.side, child))
            .map(|p| torus_point(self.dim, self.side, p))
    }

    /// `(child, parent)` index pairs in increasing child order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.parent
            .iter()
            .enumerate()
            .filter(|(_, p)| **p != NO_PARENT)
            .map(|(c, p)| (c, *p as usize))
    }

    pub fn len(&self) -> usize {
        self.parent.iter().filter(|p| **p != NO_PARENT).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One generation of the agent-based procedure: every particle dies and leaves
/// Poisson(`mu`) offspring, each offspring jumps to a uniform site of
/// `B_R(parent)`, and sites receiving two or more offspring are emptied.
pub fn step_agents<G: Rng + ?Sized>(cfg: &Config, params: &ModelParams, rng: &mut G) -> Result<(Config, ParentMap)> {
    check_shape(cfg, params)?;
    let len = cfg.len();
    if len >= NO_PARENT as usize {
        return Err(BarwError::Invalid("torus too large for parent tracking".into()));
    }
    let poisson = Poisson::new(params.mu).map_err(|e| BarwError::Invalid(e.to_string()))?;
    let r = params.radius as i64;
    let mut hits = vec![0u8; len];
    let mut parent = vec![NO_PARENT; len];
    for pi in cfg.occupied_indices() {
        let origin = cfg.point_of(pi);
        let k = poisson.sample(rng) as u64;
        for _ in 0..k {
            let mut target = origin;
            for a in 0..params.dim {
                target.0[a] += rng.random_range(-r..=r);
            }
            let ti = cfg.index_of(&target);
            hits[ti] = hits[ti].saturating_add(1);
            parent[ti] = pi as u32;
        }
    }
    let mut child = Config::empty(cfg.dim(), cfg.side())?;
    for (i, h) in hits.iter().enumerate() {
        if *h == 1 {
            child.set_index(i, true);
        } else {
            parent[i] = NO_PARENT;
        }
    }
    Ok((child, ParentMap { dim: cfg.dim(), side: cfg.side(), parent }))
}

/// Result of a burn-in run.
#[derive(Clone, Debug)]
pub struct BurnIn {
    pub config: Config,
    /// Time index of `config`.
    pub time: i64,
    pub extinct: bool,
    /// The noise field that produced `config`.
    pub noise: NoiseField,
    /// Number of attempts used, including the successful one.
    pub attempts: usize,
}

/// Starts from i.i.d. Bernoulli(`theta_mu`) at time 0 and applies `steps` updates.
pub fn burn_in_stationary(params: &ModelParams, side: usize, noise: &NoiseField, steps: usize) -> Result<BurnIn> {
    if steps == 0 {
        return Err(BarwError::Invalid("burn-in needs at least one step".into()));
    }
    let mut cur = bernoulli_product_init(params.dim, side, noise, 0, params.theta())?;
    let mut time = 0i64;
    for _ in 0..steps {
        cur = step(&cur, params, noise, time)?;
        time += 1;
        if cur.is_empty() {
            break;
        }
    }
    let extinct = cur.is_empty();
    Ok(BurnIn { config: cur, time, extinct, noise: *noise, attempts: 1 })
}

/// The stream used by retry `attempt` (attempt 0 is the field itself).
pub fn retry_stream(noise: &NoiseField, attempt: usize) -> NoiseField {
    if attempt == 0 {
        *noise
    } else {
        noise.with_stream(crate::noise::mix64(noise.stream_id ^ (attempt as u64).wrapping_mul(0xa076_1d64_78bd_642f)))
    }
}

/// [`burn_in_stationary`] with fresh streams after extinction, up to `max_attempts`.
pub fn burn_in_with_retries(
    params: &ModelParams,
    side: usize,
    noise: &NoiseField,
    steps: usize,
    max_attempts: usize,
) -> Result<BurnIn> {
    let mut last = None;
    for attempt in 0..max_attempts.max(1) {
        let mut b = burn_in_stationary(params, side, &retry_stream(noise, attempt), steps)?;
        b.attempts = attempt + 1;
        if !b.extinct {
            return Ok(b);
        }
        last = Some(b);
    }
    Ok(last.expect("at least one attempt"))
}
