//! Coarse-graining scales, good configurations and block coupling experiments.
//!
//! A block based at coarse label `(x, n)` starts at time `n L_t` around the
//! site `L_s x`. It is good when the bottom configuration is bracketed by the
//! `R`- and `r0`-profiles (`G_conf`), the density control spreads through the
//! block (`A^spread`), and after `T_spread` the process couples with a
//! reference configuration on `B_{3 L_s}` within `T_couple` more steps
//! (`A^couple`). The events quantify over all configurations; experiments
//! evaluate them on sampled ones.

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{burn_in_with_retries, contraction_constant, eps_fp, step, ModelParams};
use crate::error::{BarwError, Result};
use crate::lattice::{count_field, CountField, Config};
use crate::noise::{DrivingNoise, NoiseField};
use crate::point::{Point, MAX_DIM};
use crate::profiles::{build_alpha_beta_with_slack, m0, ProfilePair, ProfileShape};

/// Coarse-graining scales.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scales {
    pub big_r: usize,
    pub dim: usize,
    pub kappa: f64,
    pub c_time: usize,
    pub c_dens: usize,
    /// `ceil(R ln R)`.
    pub r_log_r: usize,
    pub r_max: usize,
    pub l_s: usize,
    pub t_spread: usize,
    pub t_couple: usize,
    pub l_t: usize,
    pub s: f64,
    /// `M = R / r0`.
    pub m: usize,
    pub r0: usize,
    /// True when any of `L_s`, `T_spread`, `T_couple` or `M` was set by hand.
    pub overridden: bool,
}

/// Hand-set replacements for the formula scales.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScaleOverrides {
    pub l_s: Option<usize>,
    pub t_spread: Option<usize>,
    pub t_couple: Option<usize>,
    pub m: Option<usize>,
}

impl ScaleOverrides {
    pub fn is_empty(&self) -> bool {
        *self == Self::default()
    }
}

fn ceil_div(a: usize, b: usize) -> usize {
    a.div_ceil(b)
}

/// `c_time = ceil((d + 1) / (-ln kappa))`, `c_dens = 1 + 2 c_time`,
/// `L_s = R_max = c_dens ceil(R ln R)`, `T_spread = ceil(3 L_s / ceil(s R))`,
/// `T_couple = c_time ceil(ln R)`, `L_t = T_spread + T_couple`, `r0 = R / M`.
pub fn compute_scales(params: &ModelParams, kappa: f64, s: f64, m: usize) -> Result<Scales> {
    if !(kappa > 0.0 && kappa < 1.0) {
        return Err(BarwError::Domain { what: "kappa", expected: "0 < kappa < 1", value: kappa });
    }
    if !(s > 0.0 && s < 1.0) {
        return Err(BarwError::Domain { what: "s", expected: "0 < s < 1", value: s });
    }
    let big_r = params.radius;
    if big_r < 2 {
        return Err(BarwError::Domain { what: "R", expected: "R >= 2", value: big_r as f64 });
    }
    if m == 0 || big_r % m != 0 {
        return Err(BarwError::NotDivisible { divisor: m, value: big_r });
    }
    let d = params.dim;
    let rf = big_r as f64;
    let c_time = ((d + 1) as f64 / -kappa.ln()).ceil() as usize;
    let c_dens = 1 + 2 * c_time;
    let r_log_r = (rf * rf.ln()).ceil() as usize;
    let r_max = c_dens * r_log_r;
    let speed = (s * rf).ceil() as usize;
    let t_spread = ceil_div(3 * c_dens * r_log_r, speed);
    let t_couple = c_time * rf.ln().ceil() as usize;
    Ok(Scales {
        big_r,
        dim: d,
        kappa,
        c_time,
        c_dens,
        r_log_r,
        r_max,
        l_s: r_max,
        t_spread,
        t_couple,
        l_t: t_spread + t_couple,
        s,
        m,
        r0: big_r / m,
        overridden: false,
    })
}

impl Scales {
    /// Applies overrides. When `L_s` is set and `T_spread` is not, `T_spread`
    /// is recomputed as `ceil(3 L_s / ceil(s R))`.
    pub fn with_overrides(mut self, o: &ScaleOverrides) -> Result<Self> {
        if let Some(m) = o.m {
            if m == 0 || self.big_r % m != 0 {
                return Err(BarwError::NotDivisible { divisor: m, value: self.big_r });
            }
            self.m = m;
            self.r0 = self.big_r / m;
        }
        if let Some(l_s) = o.l_s {
            if l_s == 0 {
                return Err(BarwError::Invalid("L_s override must be positive".into()));
            }
            self.l_s = l_s;
            self.r_max = l_s;
            self.t_spread = ceil_div(3 * l_s, self.speed());
        }
        if let Some(t) = o.t_spread {
            self.t_spread = t;
        }
        if let Some(t) = o.t_couple {
            self.t_couple = t;
        }
        if self.t_spread == 0 || self.t_couple == 0 {
            return Err(BarwError::Invalid("T_spread and T_couple must be positive".into()));
        }
        self.l_t = self.t_spread + self.t_couple;
        self.overridden |= !o.is_empty();
        Ok(self)
    }

    /// `ceil(s R)`.
    pub fn speed(&self) -> usize {
        (self.s * self.big_r as f64).ceil() as usize
    }

    /// Smallest torus side allowed for block experiments: `2 (4 L_s + R L_t)`.
    pub fn min_side(&self) -> usize {
        2 * (4 * self.l_s + self.big_r * self.l_t)
    }

    pub fn checks(&self, big_profile: &ProfilePair) -> ScaleChecks {
        let psi_lhs = self.t_couple * self.speed() + self.t_couple * self.big_r;
        let psi_rhs = 2 * self.c_dens * self.r_log_r;
        let drift_limit = self.l_s as f64 / (8.0 * self.l_t as f64);
        let support_radius = big_profile.support_radius(0);
        ScaleChecks {
            psi_lhs,
            psi_rhs,
            psi_feasible: psi_lhs <= psi_rhs,
            drift_limit,
            drift_feasible: ((2 * self.r0) as f64) < drift_limit,
            support_radius,
            support_in_2ls: support_radius <= 2 * self.l_s as i64,
        }
    }
}

/// Numeric feasibility conditions on the scales.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleChecks {
    /// `T_couple ceil(s R) + T_couple R`.
    pub psi_lhs: usize,
    /// `2 c_dens ceil(R ln R)`.
    pub psi_rhs: usize,
    pub psi_feasible: bool,
    /// `L_s / (8 L_t)`.
    pub drift_limit: f64,
    /// `2 r0 < L_s / (8 L_t)`.
    pub drift_feasible: bool,
    pub support_radius: i64,
    pub support_in_2ls: bool,
}

/// Space-time box `{(y, k) : |y - L_s x| <= m L_s, n L_t < k <= (n + 1) L_t}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockRegion {
    pub m: usize,
    pub x: Point,
    pub n: i64,
}

impl BlockRegion {
    pub fn center(&self, scales: &Scales) -> Point {
        self.x.scale(scales.dim, scales.l_s as i64)
    }

    pub fn bottom(&self, scales: &Scales) -> i64 {
        self.n * scales.l_t as i64
    }

    /// Membership in `Z^d x Z` (no torus wrapping).
    pub fn contains(&self, scales: &Scales, y: &Point, k: i64) -> bool {
        let c = self.center(scales);
        (*y - c).sup_norm(scales.dim) <= (self.m * scales.l_s) as i64
            && self.bottom(scales) < k
            && k <= self.bottom(scales) + scales.l_t as i64
    }
}

/// How the profile bracket of a block experiment is built.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BracketChoice {
    pub alpha1: f64,
    pub beta1: f64,
    pub slack: f64,
    pub w: f64,
    pub eps0: f64,
    /// Margin below 1 for the contraction constant defining `eps_fp`.
    pub contraction_margin: f64,
}

impl Default for BracketChoice {
    fn default() -> Self {
        Self { alpha1: 0.18, beta1: 0.5, slack: 0.1, w: 2.0, eps0: 0.02, contraction_margin: 0.1 }
    }
}

/// Everything a block experiment needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockSetup {
    pub params: ModelParams,
    pub scales: Scales,
    pub bracket: BracketChoice,
    pub eps_fp: f64,
    /// Profiles with averaging radius `R`.
    pub big: ProfilePair,
    /// Profiles with averaging radius `r0`.
    pub small: ProfilePair,
}

impl BlockSetup {
    /// Builds both profile pairs with plateau radius `L_s`, front speed `s` and
    /// horizon `L_t`.
    pub fn new(params: ModelParams, scales: Scales, bracket: BracketChoice) -> Result<Self> {
        params.require_supported()?;
        let eps_fp = eps_fp(params.mu, bracket.contraction_margin)?;
        let seq = build_alpha_beta_with_slack(params.mu, bracket.alpha1, bracket.beta1, 30, bracket.slack)?;
        let m0 = m0(&seq, eps_fp)?;
        let shape = |r| ProfileShape { r, r_max: scales.l_s, s: scales.s, w: bracket.w, eps0: bracket.eps0, k0: scales.l_t };
        let big = ProfilePair::new(&seq, m0, shape(scales.big_r), params.dim)?;
        let small = ProfilePair::new(&seq, m0, shape(scales.r0), params.dim)?;
        Ok(Self { params, scales, bracket, eps_fp, big, small })
    }

    /// Scales with `kappa = contraction_constant(mu, eps_fp)`.
    pub fn from_formulas(params: ModelParams, s: f64, m: usize, overrides: &ScaleOverrides, bracket: BracketChoice) -> Result<Self> {
        let eps = eps_fp(params.mu, bracket.contraction_margin)?;
        let kappa = contraction_constant(params.mu, eps)?;
        let scales = compute_scales(&params, kappa, s, m)?.with_overrides(overrides)?;
        Self::new(params, scales, bracket)
    }

    pub fn plateau(&self) -> (f64, f64) {
        (self.big.alpha[self.big.m0 - 1], self.big.beta[self.big.m0 - 1])
    }

    pub fn theta(&self) -> f64 {
        self.params.theta()
    }
}

/// Where and why a check failed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub event: String,
    /// Copy index (1 or 2), 0 for the reference.
    pub copy: u8,
    /// Absolute time.
    pub time: i64,
    /// Torus coordinates.
    pub site: Vec<i64>,
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
}

#[inline]
fn density_at(counts: &CountField, cfg: &Config, site: &Point) -> f64 {
    counts.counts[cfg.index_of(site)] as f64 / counts.volume() as f64
}

/// First offset `o` in `B_limit` (row-major) where the density at `center + o`
/// leaves `[lower(o), upper(o)]`.
fn first_out_of_band(
    cfg: &Config,
    counts: &CountField,
    center: &Point,
    limit: i64,
    bounds: impl Fn(&Point) -> (f64, f64),
) -> Option<(Point, f64, f64, f64)> {
    for o in Point::ball(cfg.dim(), limit) {
        let (lo, hi) = bounds(&o);
        if lo <= 0.0 && hi >= 1.0 {
            continue;
        }
        let site = cfg.wrap(&(*center + o));
        let v = density_at(counts, cfg, &site);
        if v < lo || v > hi {
            return Some((site, v, lo, hi));
        }
    }
    None
}

fn check_side(cfg: &Config, setup: &BlockSetup) -> Result<()> {
    let need = 2 * setup.big.support_radius(0).max(setup.small.support_radius(0)) as usize + 1;
    if cfg.side() < need {
        return Err(BarwError::TorusTooSmall { side: cfg.side(), needed: need });
    }
    Ok(())
}

/// First violation of the `G_conf` brackets around `center`, if any.
pub fn gconf_failure(cfg: &Config, center: &Point, big: &ProfilePair, small: &ProfilePair) -> Result<Option<Failure>> {
    let counts = [count_field(cfg, big.shape.r)?, count_field(cfg, small.shape.r)?];
    Ok(gconf_failure_counts(cfg, &counts, center, big, small))
}

fn gconf_failure_counts(cfg: &Config, counts: &[CountField; 2], center: &Point, big: &ProfilePair, small: &ProfilePair) -> Option<Failure> {
    for ((p, name), c) in [(big, "gconf_big"), (small, "gconf_small")].into_iter().zip(counts) {
        if let Some((site, v, lo, hi)) =
            first_out_of_band(cfg, c, center, p.support_radius(0), |o| (p.zeta_minus(0, o), p.zeta_plus(0, o)))
        {
            return Some(Failure {
                event: name.into(),
                copy: 0,
                time: 0,
                site: site.coords(cfg.dim()).to_vec(),
                value: v,
                lower: lo,
                upper: hi,
            });
        }
    }
    None
}

/// Both density brackets hold on the supports of the step-0 lower profiles,
/// centred at `center`.
pub fn in_gconf(cfg: &Config, center: &Point, big: &ProfilePair, small: &ProfilePair) -> Result<bool> {
    Ok(gconf_failure(cfg, center, big, small)?.is_none())
}

/// `|delta_R - theta| < eps_fp` at every site of `B_radius(center)`.
pub fn in_cref(cfg: &Config, center: &Point, radius: usize, params: &ModelParams, eps_fp: f64) -> Result<bool> {
    let counts = count_field(cfg, params.radius)?;
    let theta = params.theta();
    let vol = counts.volume() as f64;
    let r = radius.min(cfg.side() / 2) as i64;
    Ok(Point::ball(cfg.dim(), r).iter().all(|o| {
        let site = *center + *o;
        ((counts.counts[cfg.index_of(&site)] as f64 / vol) - theta).abs() < eps_fp
    }))
}

/// Periodic comb with `q` particles per line: site `x` is occupied when
/// `j = (x_1 + ... + x_d) mod side` starts a new unit of `j q / side`.
///
/// Every line parallel to an axis is a cyclic shift of the same balanced
/// binary word, so each radius-`r` density lies within `1 / (2r + 1)` of
/// `q / side`.
pub fn comb_config(dim: usize, side: usize, q: usize) -> Result<Config> {
    if q > side {
        return Err(BarwError::Invalid(format!("comb with {q} particles on a line of {side} sites")));
    }
    let (q, side_u) = (q as u64, side as u64);
    Config::from_fn(dim, side, |x| {
        let j = x.coords(dim).iter().map(|&c| c as u64).sum::<u64>() % side_u;
        ((j + 1) * q) / side_u - (j * q) / side_u == 1
    })
}

/// Comb whose line density is the closest to `theta_mu`.
pub fn comb_for_theta(params: &ModelParams, side: usize) -> Result<Config> {
    comb_config(params.dim, side, (params.theta() * side as f64).round() as usize)
}

/// A reference configuration and how it was obtained.
#[derive(Clone, Debug)]
pub struct Reference {
    pub config: Config,
    /// True when sampling failed and the comb was used.
    pub fallback: bool,
    pub checks: usize,
}

pub const REFERENCE_RETRY_CAP: usize = 100;

/// Samples a member of `C_ref` on `B_radius(center)`: burn-in, then up to
/// [`REFERENCE_RETRY_CAP`] further steps until the `C_ref` test passes;
/// otherwise the comb.
pub fn sample_reference(
    setup: &BlockSetup,
    side: usize,
    noise: &NoiseField,
    burn_in: usize,
    center: &Point,
    radius: usize,
) -> Result<Reference> {
    let b = burn_in_with_retries(&setup.params, side, noise, burn_in.max(1), 5)?;
    let mut cfg = b.config;
    let mut t = b.time;
    if !b.extinct {
        for checks in 1..=REFERENCE_RETRY_CAP {
            if in_cref(&cfg, center, radius, &setup.params, setup.eps_fp)? {
                return Ok(Reference { config: cfg, fallback: false, checks });
            }
            cfg = step(&cfg, &setup.params, &b.noise, t)?;
            t += 1;
        }
    }
    Ok(Reference { config: comb_for_theta(&setup.params, side)?, fallback: true, checks: REFERENCE_RETRY_CAP })
}

/// Outcome of one block experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingReport {
    pub block_x: Vec<i64>,
    pub block_n: i64,
    pub bottoms_in_gconf: [bool; 2],
    pub a_spread: bool,
    pub a_couple: bool,
    pub gamma: bool,
    /// Item (i): the copies agree on `B_{3 L_s}` at the block top.
    pub agree_3ls: bool,
    /// Item (ii): both tops are in `G_conf` around `L_s (x + e)`, per `e` in `B_1(0)`.
    pub gconf_neighbors: Vec<(Vec<i64>, bool)>,
    /// When the bottoms agree on `B_{2 L_s}`: agreement on `B_{L_s}` at every step.
    pub center_agreement_all_times: Option<bool>,
    pub reference_in_cref: bool,
    pub reference_fallback: bool,
    /// Smallest distance of `delta_R` from the plateau bracket on
    /// `B_{4 L_s}` at `T_spread`, over both copies (negative when violated).
    pub plateau_margin: f64,
    /// Agreement never shrinks faster than the range `R` per step.
    pub upward_closure: bool,
    /// Largest `rho <= 4 L_s` with agreement on `B_rho` at the top, `-1` if none.
    pub agreement_radius: i64,
    pub reference_agreement_radius: i64,
    pub first_failure: Option<Failure>,
}

fn agreement_radius(a: &Config, b: &Config, center: &Point, max: i64) -> i64 {
    match a.first_disagreement(b, center, max as usize) {
        None => max,
        Some(p) => a.torus_delta(center, &p).sup_norm(a.dim()) - 1,
    }
}

struct Spread {
    ok: bool,
    margin: f64,
    failure: Option<Failure>,
}

/// A trajectory `traj[k] = eta_{t0 + k}`, `k = 0..=L_t`, with the density
/// counts that `A^spread` reads.
struct Traj {
    configs: Vec<Config>,
    big_at_spread: CountField,
    small: Vec<CountField>,
}

impl Traj {
    fn run<N: DrivingNoise>(cfg: &Config, setup: &BlockSetup, noise: &N, t0: i64) -> Result<Self> {
        let sc = &setup.scales;
        let configs = trajectory(cfg, &setup.params, noise, t0, sc.l_t)?;
        let big_at_spread = count_field(&configs[sc.t_spread], sc.big_r)?;
        let small = configs.iter().map(|c| count_field(c, sc.r0)).collect::<Result<_>>()?;
        Ok(Self { configs, big_at_spread, small })
    }
}

/// Checks `A^spread` around `center`, scanning times in order.
fn check_spread(traj: &Traj, setup: &BlockSetup, center: &Point, t0: i64, copy: u8) -> Spread {
    let sc = &setup.scales;
    let reach = 4 * sc.l_s as i64;
    let (a, b) = setup.plateau();
    let fail = |event: &str, k: usize, site: Point, value, lower, upper| Failure {
        event: event.into(),
        copy,
        time: t0 + k as i64,
        site: site.coords(sc.dim).to_vec(),
        value,
        lower,
        upper,
    };
    let mut margin = f64::INFINITY;
    let mut failure = None;
    for (k, (cfg, counts)) in traj.configs.iter().zip(&traj.small).enumerate() {
        if k == sc.t_spread {
            for o in Point::ball(sc.dim, reach) {
                let site = cfg.wrap(&(*center + o));
                let v = density_at(&traj.big_at_spread, cfg, &site);
                let m = (v - a).min(b - v);
                if m < margin {
                    margin = m;
                    if m < 0.0 && failure.is_none() {
                        failure = Some(fail("spread_plateau", k, site, v, a, b));
                    }
                }
            }
        }
        if failure.is_some() {
            break;
        }
        let limit = reach.min(setup.small.support_radius(k));
        let p = &setup.small;
        if let Some((site, v, lo, hi)) =
            first_out_of_band(cfg, counts, center, limit, |o| (p.zeta_minus(k, o), p.zeta_plus(k, o)))
        {
            failure = Some(fail("spread_small", k, site, v, lo, hi));
            break;
        }
    }
    Spread { ok: failure.is_none(), margin, failure }
}

/// Sites whose `R`-ball agrees at time `k` must agree at time `k + 1`.
fn upward_closure(traj1: &[Config], traj2: &[Config], radius: usize) -> Result<bool> {
    for k in 0..traj1.len() - 1 {
        let diff = traj1[k].xor(&traj2[k]);
        if diff.is_empty() {
            if traj1[k + 1] != traj2[k + 1] {
                return Ok(false);
            }
            continue;
        }
        let near = count_field(&diff, radius)?;
        let next = traj1[k + 1].xor(&traj2[k + 1]);
        if next.occupied_indices().any(|i| near.counts[i] == 0) {
            return Ok(false);
        }
    }
    Ok(true)
}

fn trajectory<N: DrivingNoise>(cfg: &Config, params: &ModelParams, noise: &N, t0: i64, steps: usize) -> Result<Vec<Config>> {
    let mut out = Vec::with_capacity(steps + 1);
    out.push(cfg.clone());
    for k in 0..steps {
        let next = step(&out[k], params, noise, t0 + k as i64)?;
        out.push(next);
    }
    Ok(out)
}

/// Neighbour offsets `e` in `B_1(0)`.
fn unit_ball(dim: usize) -> Vec<Point> {
    Point::ball(dim, 1)
}

/// Runs both copies and the reference through block `(x, n)` under one noise field.
///
/// The reference enters at `T_spread` and runs `T_couple` steps alongside.
pub fn coupling_experiment<N: DrivingNoise>(
    cfg1: &Config,
    cfg2: &Config,
    reference: &Config,
    setup: &BlockSetup,
    noise: &N,
    x: &Point,
    n: i64,
) -> Result<CouplingReport> {
    let sc = &setup.scales;
    let d = sc.dim;
    for c in [cfg1, cfg2, reference] {
        if c.dim() != d {
            return Err(BarwError::Invalid("configuration dimension differs from the scales".into()));
        }
        if c.side() < sc.min_side() {
            return Err(BarwError::TorusTooSmall { side: c.side(), needed: sc.min_side() });
        }
    }
    check_side(cfg1, setup)?;
    let region = BlockRegion { m: 4, x: *x, n };
    let center = cfg1.wrap(&region.center(sc));
    let t0 = region.bottom(sc);

    let mut first_failure = None;
    let mut bottoms = [false; 2];
    for (i, c) in [cfg1, cfg2].into_iter().enumerate() {
        let f = gconf_failure(c, &center, &setup.big, &setup.small)?;
        bottoms[i] = f.is_none();
        if first_failure.is_none() {
            first_failure = f.map(|mut f| {
                f.copy = i as u8 + 1;
                f.time = t0;
                f.event = format!("bottom_{}", f.event);
                f
            });
        }
    }

    let run1 = Traj::run(cfg1, setup, noise, t0)?;
    let run2 = Traj::run(cfg2, setup, noise, t0)?;
    let s1 = check_spread(&run1, setup, &center, t0, 1);
    let s2 = check_spread(&run2, setup, &center, t0, 2);
    let (traj1, traj2) = (&run1.configs, &run2.configs);
    let a_spread = s1.ok && s2.ok;
    if first_failure.is_none() {
        first_failure = s1.failure.or(s2.failure);
    }

    let t_ref = t0 + sc.t_spread as i64;
    let reach = 3 * sc.l_s;
    let reference_in_cref = in_cref(reference, &center, reach + sc.big_r * sc.t_couple, &setup.params, setup.eps_fp)?;
    let ref_top = crate::dynamics::flow(reference, &setup.params, noise, t_ref, t0 + sc.l_t as i64)?;
    let (top1, top2) = (&traj1[sc.l_t], &traj2[sc.l_t]);
    let misses = [top1, top2].map(|t| t.first_disagreement(&ref_top, &center, reach));
    let a_couple = misses.iter().all(Option::is_none);
    if first_failure.is_none() {
        if let Some((i, site)) = misses.iter().enumerate().find_map(|(i, m)| m.map(|p| (i, p))) {
            let occ = |c: &Config| f64::from(u8::from(c.get(&site)));
            first_failure = Some(Failure {
                event: "couple".into(),
                copy: i as u8 + 1,
                time: t0 + sc.l_t as i64,
                site: site.coords(d).to_vec(),
                value: occ([top1, top2][i]),
                lower: occ(&ref_top),
                upper: occ(&ref_top),
            });
        }
    }

    let agree_3ls = top1.agrees_on_ball(top2, &center, reach);
    let c1 = [count_field(top1, sc.big_r)?, run1.small[sc.l_t].clone()];
    let c2 = [count_field(top2, sc.big_r)?, run2.small[sc.l_t].clone()];
    let gconf_neighbors = unit_ball(d)
        .into_iter()
        .map(|e| {
            let c = top1.wrap(&(center + e.scale(d, sc.l_s as i64)));
            let ok = gconf_failure_counts(top1, &c1, &c, &setup.big, &setup.small).is_none()
                && gconf_failure_counts(top2, &c2, &c, &setup.big, &setup.small).is_none();
            (e.coords(d).to_vec(), ok)
        })
        .collect();
    let center_agreement_all_times = cfg1
        .agrees_on_ball(cfg2, &center, 2 * sc.l_s)
        .then(|| (1..=sc.l_t).all(|k| traj1[k].agrees_on_ball(&traj2[k], &center, sc.l_s)));

    let bottoms_ok = bottoms[0] && bottoms[1];
    Ok(CouplingReport {
        block_x: x.coords(d).to_vec(),
        block_n: n,
        bottoms_in_gconf: bottoms,
        a_spread,
        a_couple,
        gamma: a_spread && a_couple && bottoms_ok,
        agree_3ls,
        gconf_neighbors,
        center_agreement_all_times,
        reference_in_cref,
        reference_fallback: false,
        plateau_margin: s1.margin.min(s2.margin),
        upward_closure: upward_closure(traj1, traj2, sc.big_r)?,
        agreement_radius: agreement_radius(top1, top2, &center, 4 * sc.l_s as i64),
        reference_agreement_radius: agreement_radius(top1, &ref_top, &center, 4 * sc.l_s as i64),
        first_failure,
    })
}

/// Reduced geometry used for desk-scale block experiments: `L_s = 3R`,
/// `T_spread = ceil(3 L_s / ceil(0.9 R))`, `T_couple = 10`, `M = 2`, with the
/// default bracket.
pub fn mini_scale_setup(mu: f64, dim: usize, big_r: usize) -> Result<BlockSetup> {
    let params = ModelParams::new_supported(mu, big_r, dim)?;
    let overrides = ScaleOverrides { l_s: Some(3 * big_r), t_spread: None, t_couple: Some(MINI_T_COUPLE), m: Some(MINI_M) };
    BlockSetup::from_formulas(params, MINI_SPEED, 1, &overrides, BracketChoice::default())
}

pub const MINI_SPEED: f64 = 0.9;
pub const MINI_T_COUPLE: usize = 10;
pub const MINI_M: usize = 2;

/// Settings for a batch of independent block trials.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialPlan {
    pub side: usize,
    pub trials: usize,
    pub burn_in: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub big_r: usize,
    pub trials: usize,
    pub good: usize,
    pub frequency: f64,
    pub bottoms_in_gconf: usize,
    pub a_spread: usize,
    pub a_couple: usize,
    pub reference_fallbacks: usize,
    /// Good trials whose items (i) and (ii) both held.
    pub good_with_items: usize,
    pub reports: Vec<CouplingReport>,
}

/// Stream ids used by trial `i`: two bottoms, the reference, the block noise.
pub fn trial_streams(seed: u64, i: usize) -> [NoiseField; 4] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let base: u64 = rng.random();
    [0u64, 1, 2, 3].map(|j| NoiseField::new(seed, base.wrapping_add(j)))
}

/// Independent trials of block `(0, 0)`, each with fresh stationary bottoms,
/// a fresh reference and fresh block noise.
pub fn run_block_trials(setup: &BlockSetup, plan: &TrialPlan) -> Result<TrialSummary> {
    let side = plan.side.max(setup.scales.min_side());
    let reports: Vec<CouplingReport> = (0..plan.trials)
        .into_par_iter()
        .map(|i| {
            let [n1, n2, nr, nb] = trial_streams(plan.seed, i);
            let b1 = burn_in_with_retries(&setup.params, side, &n1, plan.burn_in.max(1), 5)?.config;
            let b2 = burn_in_with_retries(&setup.params, side, &n2, plan.burn_in.max(1), 5)?.config;
            let center = Point::ORIGIN;
            let sc = &setup.scales;
            let reach = 3 * sc.l_s + sc.big_r * sc.t_couple;
            let reference = sample_reference(setup, side, &nr, plan.burn_in, &center, reach)?;
            let mut rep = coupling_experiment(&b1, &b2, &reference.config, setup, &nb, &center, 0)?;
            rep.reference_fallback = reference.fallback;
            Ok(rep)
        })
        .collect::<Result<_>>()?;
    let count = |f: &dyn Fn(&CouplingReport) -> bool| reports.iter().filter(|r| f(r)).count();
    let good = count(&|r| r.gamma);
    Ok(TrialSummary {
        big_r: setup.scales.big_r,
        trials: plan.trials,
        good,
        frequency: if plan.trials == 0 { 0.0 } else { good as f64 / plan.trials as f64 },
        bottoms_in_gconf: count(&|r| r.bottoms_in_gconf == [true, true]),
        a_spread: count(&|r| r.a_spread),
        a_couple: count(&|r| r.a_couple),
        reference_fallbacks: count(&|r| r.reference_fallback),
        good_with_items: count(&|r| r.gamma && r.agree_3ls && r.gconf_neighbors.iter().all(|(_, ok)| *ok)),
        reports,
    })
}

/// One row of a goodness field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoodnessEntry {
    pub x: Vec<i64>,
    pub n: i64,
    pub gamma: bool,
    pub a_spread: bool,
    pub a_couple: bool,
    pub in_gconf: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoodnessField {
    pub dim: usize,
    /// Coarse labels per axis.
    pub extent: usize,
    pub layers: usize,
    pub entries: Vec<GoodnessEntry>,
    /// Configuration at `n L_t`, per layer.
    #[serde(skip)]
    pub bottoms: Vec<Config>,
    /// Reference injected at `n L_t + T_spread`, per layer.
    #[serde(skip)]
    pub references: Vec<Config>,
}

impl GoodnessField {
    pub fn density(&self) -> f64 {
        if self.entries.is_empty() {
            return 0.0;
        }
        self.entries.iter().filter(|e| e.gamma).count() as f64 / self.entries.len() as f64
    }

    /// CSV with columns `x_1.., n, gamma, a_spread, a_couple` (indicators as 0/1).
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let mut header: Vec<String> = (1..=self.dim).map(|a| format!("x_{a}")).collect();
        header.extend(["n", "gamma", "a_spread", "a_couple"].map(String::from));
        writeln!(w, "{}", header.join(","))?;
        for e in &self.entries {
            let mut cols: Vec<String> = e.x.iter().map(|c| c.to_string()).collect();
            cols.push(e.n.to_string());
            cols.extend([e.gamma, e.a_spread, e.a_couple].map(|b| u8::from(b).to_string()));
            writeln!(w, "{}", cols.join(","))?;
        }
        Ok(())
    }
}

/// Simulates one trajectory from `initial` at time 0 for `layers` block
/// heights and marks every block `(x, n)` with `x` in `{0..extent}^d`.
///
/// Each layer samples one reference configuration on the whole torus (stream
/// `reference_noise`), injects it at `n L_t + T_spread` and checks agreement
/// on every block's `B_{3 L_s}` at the layer top.
pub fn goodness_field<N: DrivingNoise>(
    initial: &Config,
    setup: &BlockSetup,
    noise: &N,
    reference_noise: &NoiseField,
    burn_in: usize,
    extent: usize,
    layers: usize,
) -> Result<GoodnessField> {
    let sc = &setup.scales;
    let d = sc.dim;
    if initial.side() < sc.min_side().max(extent * sc.l_s) {
        return Err(BarwError::TorusTooSmall { side: initial.side(), needed: sc.min_side().max(extent * sc.l_s) });
    }
    check_side(initial, setup)?;
    let labels: Vec<Point> = {
        let count = extent.pow(d as u32);
        (0..count)
            .map(|mut i| {
                let mut c = [0i64; MAX_DIM];
                for a in (0..d).rev() {
                    c[a] = (i % extent) as i64;
                    i /= extent;
                }
                Point(c)
            })
            .collect()
    };
    let mut entries = Vec::new();
    let (mut bottoms, mut references) = (Vec::new(), Vec::new());
    let mut bottom = initial.clone();
    for n in 0..layers as i64 {
        let t0 = n * sc.l_t as i64;
        let run = Traj::run(&bottom, setup, noise, t0)?;
        let reference = sample_reference(
            setup,
            initial.side(),
            &reference_noise.with_stream(reference_noise.stream_id.wrapping_add(n as u64)),
            burn_in,
            &Point::ORIGIN,
            initial.side(),
        )?;
        let ref_top = crate::dynamics::flow(&reference.config, &setup.params, noise, t0 + sc.t_spread as i64, t0 + sc.l_t as i64)?;
        let counts = [count_field(&bottom, setup.big.shape.r)?, count_field(&bottom, setup.small.shape.r)?];
        for x in &labels {
            let center = bottom.wrap(&x.scale(d, sc.l_s as i64));
            let g = gconf_failure_counts(&bottom, &counts, &center, &setup.big, &setup.small).is_none();
            let spread = check_spread(&run, setup, &center, t0, 1).ok;
            let couple = run.configs[sc.l_t].agrees_on_ball(&ref_top, &center, 3 * sc.l_s);
            entries.push(GoodnessEntry { x: x.coords(d).to_vec(), n, gamma: g && spread && couple, a_spread: spread, a_couple: couple, in_gconf: g });
        }
        references.push(reference.config);
        bottoms.push(std::mem::replace(&mut bottom, run.configs.into_iter().next_back().expect("non-empty trajectory")));
    }
    Ok(GoodnessField { dim: d, extent, layers, entries, bottoms, references })
}
