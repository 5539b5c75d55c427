//! Ancestral lineages in the stationary environment.
//!
//! The environment runs forwards in time; the lineage of a particle at the
//! top time walks backwards through it, choosing its parent uniformly among
//! the occupied sites within distance `R` one generation earlier. Positions
//! are unwrapped in `Z^d` while the environment is read modulo the torus.

use std::collections::VecDeque;
use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{burn_in_with_retries, retry_stream, step, step_agents, ModelParams, ParentMap};
use crate::error::{BarwError, Result};
use crate::lattice::Config;
use crate::noise::NoiseField;
use crate::output::format_float;
use crate::point::{Point, MAX_DIM};
use crate::stats::Ensemble;

/// Burn-in attempts before a stream is given up.
const RETRY_ATTEMPTS: usize = 5;

/// The last `horizon + 1` configurations of a trajectory.
#[derive(Clone, Debug)]
pub struct EnvHistory {
    params: ModelParams,
    noise: NoiseField,
    horizon: usize,
    top_time: i64,
    /// Oldest first.
    snapshots: VecDeque<Config>,
}

impl EnvHistory {
    /// A history holding only `initial` at `time`.
    pub fn new(params: ModelParams, noise: NoiseField, horizon: usize, initial: Config, time: i64) -> Self {
        let mut snapshots = VecDeque::with_capacity(horizon + 1);
        snapshots.push_back(initial);
        Self { params, noise, horizon, top_time: time, snapshots }
    }

    /// Evolves `initial` from `time` for `steps` steps, keeping the last
    /// `horizon + 1` snapshots.
    pub fn record(params: ModelParams, noise: NoiseField, initial: Config, time: i64, steps: usize, horizon: usize) -> Result<Self> {
        let mut h = Self::new(params, noise, horizon, initial, time);
        for _ in 0..steps {
            h.advance()?;
        }
        Ok(h)
    }

    /// Wraps given snapshots (oldest first) without a generating noise field;
    /// [`EnvHistory::verify_replay`] is meaningless for such histories.
    pub fn from_snapshots(params: ModelParams, top_time: i64, snapshots: Vec<Config>) -> Result<Self> {
        if snapshots.is_empty() {
            return Err(BarwError::Invalid("history needs at least one snapshot".into()));
        }
        let horizon = snapshots.len() - 1;
        Ok(Self { params, noise: NoiseField::new(0, 0), horizon, top_time, snapshots: snapshots.into() })
    }

    /// One more step; the oldest snapshot is dropped once the buffer is full.
    pub fn advance(&mut self) -> Result<()> {
        let next = step(self.top(), &self.params, &self.noise, self.top_time)?;
        self.snapshots.push_back(next);
        self.top_time += 1;
        if self.snapshots.len() > self.horizon + 1 {
            self.snapshots.pop_front();
        }
        Ok(())
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn noise(&self) -> &NoiseField {
        &self.noise
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn top_time(&self) -> i64 {
        self.top_time
    }

    pub fn oldest_time(&self) -> i64 {
        self.top_time - self.snapshots.len() as i64 + 1
    }

    /// Number of retained snapshots.
    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn top(&self) -> &Config {
        self.snapshots.back().expect("history is never empty")
    }

    pub fn at_time(&self, t: i64) -> Option<&Config> {
        let back = self.top_time.checked_sub(t)?;
        self.at_depth(usize::try_from(back).ok()?)
    }

    /// Snapshot at `top_time - depth`.
    pub fn at_depth(&self, depth: usize) -> Option<&Config> {
        self.snapshots.len().checked_sub(depth + 1).map(|i| &self.snapshots[i])
    }

    /// Replays the flow from the oldest snapshot and compares every later one.
    pub fn verify_replay(&self) -> Result<bool> {
        let mut cur = self.snapshots[0].clone();
        let mut t = self.oldest_time();
        for snap in self.snapshots.iter().skip(1) {
            cur = step(&cur, &self.params, &self.noise, t)?;
            t += 1;
            if cur != *snap {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// Uniform law on the occupied sites of `B_R(x)` one generation earlier.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AncestorDistribution {
    pub dim: usize,
    pub from: Point,
    /// Unwrapped candidate parents, each with weight `1 / support.len()`.
    pub support: Vec<Point>,
}

impl AncestorDistribution {
    /// Common denominator of the weights.
    pub fn denominator(&self) -> u64 {
        self.support.len() as u64
    }

    pub fn probability(&self, y: &Point) -> f64 {
        if self.support.contains(y) {
            1.0 / self.support.len() as f64
        } else {
            0.0
        }
    }

    /// `sum_y (y - x)` per axis.
    pub fn offset_sum(&self) -> [i64; MAX_DIM] {
        let mut s = [0i64; MAX_DIM];
        for y in &self.support {
            for (a, v) in s.iter_mut().enumerate().take(self.dim) {
                *v += y.0[a] - self.from.0[a];
            }
        }
        s
    }

    /// `E[X_k - X_{k-1} | X_{k-1} = x]`.
    pub fn mean_offset(&self) -> [f64; MAX_DIM] {
        let n = self.support.len() as f64;
        self.offset_sum().map(|v| v as f64 / n)
    }

    pub fn sample<G: Rng + ?Sized>(&self, rng: &mut G) -> Point {
        self.support[rng.random_range(0..self.support.len())]
    }
}

/// Parent law of a particle at `x` given the configuration `env` one
/// generation earlier.
pub fn ancestor_distribution(env: &Config, x: &Point, r: usize) -> Result<AncestorDistribution> {
    let dim = env.dim();
    let support: Vec<Point> = Point::ball(dim, r as i64)
        .into_iter()
        .map(|o| *x + o)
        .filter(|y| env.get(y))
        .collect();
    if support.is_empty() {
        return Err(BarwError::EmptyNeighbourhood { site: *x, radius: r });
    }
    Ok(AncestorDistribution { dim, from: *x, support })
}

/// Exact split of one step: `drift = drift_num / den`, `Y = y_num / den`,
/// with `drift_num + y_num = den * increment` per axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepSplit {
    pub den: u64,
    pub drift_num: [i64; MAX_DIM],
    pub y_num: [i64; MAX_DIM],
}

impl StepSplit {
    pub fn drift(&self) -> [f64; MAX_DIM] {
        self.drift_num.map(|v| v as f64 / self.den as f64)
    }

    pub fn martingale(&self) -> [f64; MAX_DIM] {
        self.y_num.map(|v| v as f64 / self.den as f64)
    }
}

/// A lineage `X_0, ..., X_K` started at the top time of its environment.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineagePath {
    pub dim: usize,
    pub top_time: i64,
    /// Unwrapped positions; `X_k` lives at time `top_time - k`.
    pub positions: Vec<Point>,
    /// Filled by [`martingale_decomposition`]; one entry per step.
    pub splits: Vec<StepSplit>,
}

impl LineagePath {
    pub fn start(&self) -> Point {
        self.positions[0]
    }

    pub fn steps(&self) -> usize {
        self.positions.len() - 1
    }

    pub fn is_decomposed(&self) -> bool {
        self.splits.len() == self.steps()
    }

    pub fn increment(&self, k: usize) -> Point {
        self.positions[k] - self.positions[k - 1]
    }

    /// `X_k - X_0`.
    pub fn displacement(&self, k: usize) -> Point {
        self.positions[k] - self.positions[0]
    }

    /// Checks `X_k - X_0 = sum drift + sum Y` in integer arithmetic for every `k`.
    pub fn reconstruction_exact(&self) -> bool {
        if !self.is_decomposed() {
            return false;
        }
        let mut acc = [0i64; MAX_DIM];
        for (k, s) in self.splits.iter().enumerate() {
            for (a, v) in acc.iter_mut().enumerate().take(self.dim) {
                let total = s.drift_num[a] + s.y_num[a];
                if s.den == 0 || total % s.den as i64 != 0 {
                    return false;
                }
                *v += total / s.den as i64;
            }
            let d = self.displacement(k + 1);
            if acc[..self.dim] != d.0[..self.dim] {
                return false;
            }
        }
        true
    }

    /// Bounded hops and `X_k` occupied at time `top_time - k` in `history`.
    pub fn consistent_with(&self, history: &EnvHistory) -> bool {
        let r = history.params().radius as i64;
        let Ok(depth0) = usize::try_from(history.top_time() - self.top_time) else {
            return false;
        };
        let hops = (1..=self.steps()).all(|k| self.increment(k).sup_norm(self.dim) <= r);
        hops && self.positions.iter().enumerate().all(|(k, x)| history.at_depth(depth0 + k).is_some_and(|c| c.get(x)))
    }

    /// Partial sums `S_k = Y_1 + ... + Y_k`, `k = 0..=K`.
    pub fn martingale_sums(&self) -> Vec<[f64; MAX_DIM]> {
        let mut out = vec![[0.0; MAX_DIM]];
        let mut acc = [0.0; MAX_DIM];
        for s in &self.splits {
            for (a, y) in s.martingale().iter().enumerate() {
                acc[a] += y;
            }
            out.push(acc);
        }
        out
    }
}

fn ensure_occupied(cfg: &Config, start: &Point) -> Result<()> {
    if !cfg.get(start) {
        return Err(BarwError::Invalid(format!("start {start} is not occupied at the top time")));
    }
    Ok(())
}

/// Runs the backward kernel for `steps` steps from `start` at the top time.
pub fn sample_lineage<G: Rng + ?Sized>(history: &EnvHistory, start: &Point, steps: usize, rng: &mut G) -> Result<LineagePath> {
    if steps >= history.len() {
        return Err(BarwError::Invalid(format!("{steps} steps exceed the {} retained generations", history.len() - 1)));
    }
    ensure_occupied(history.top(), start)?;
    let r = history.params().radius;
    let mut positions = Vec::with_capacity(steps + 1);
    positions.push(*start);
    for k in 0..steps {
        let env = history.at_depth(k + 1).expect("depth checked above");
        let next = ancestor_distribution(env, &positions[k], r)?.sample(rng);
        positions.push(next);
    }
    Ok(LineagePath { dim: history.top().dim(), top_time: history.top_time(), positions, splits: Vec::new() })
}

/// Follows recorded parents; `maps[j]` links generation `top - j` to `top - j - 1`.
pub fn lineage_from_parent_maps(maps: &[ParentMap], start: &Point, top_time: i64) -> Result<LineagePath> {
    let Some(dim) = maps.first().map(ParentMap::dim) else {
        return Err(BarwError::Invalid("no parent maps given".into()));
    };
    let mut positions = vec![*start];
    for (j, map) in maps.iter().enumerate() {
        let cur = positions[j];
        let parent = map.parent_of(&cur).ok_or(BarwError::MissingParent { child: cur, generation: j })?;
        let side = map.side() as i64;
        let mut next = cur;
        for a in 0..dim {
            let d = (parent.0[a] - cur.0[a]).rem_euclid(side);
            next.0[a] += if d > side / 2 { d - side } else { d };
        }
        positions.push(next);
    }
    Ok(LineagePath { dim, top_time, positions, splits: Vec::new() })
}

/// Fills the exact drift / martingale split of every step.
pub fn martingale_decomposition(mut path: LineagePath, history: &EnvHistory) -> Result<LineagePath> {
    let depth0 = usize::try_from(history.top_time() - path.top_time)
        .map_err(|_| BarwError::Invalid("path starts after the history top".into()))?;
    if depth0 + path.steps() >= history.len() {
        return Err(BarwError::Invalid("history does not cover the path".into()));
    }
    let r = history.params().radius;
    let mut splits = Vec::with_capacity(path.steps());
    for k in 1..=path.steps() {
        let env = history.at_depth(depth0 + k).expect("coverage checked above");
        let dist = ancestor_distribution(env, &path.positions[k - 1], r)?;
        let den = dist.denominator();
        let drift_num = dist.offset_sum();
        let inc = path.increment(k);
        let mut y_num = [0i64; MAX_DIM];
        for a in 0..path.dim {
            y_num[a] = inc.0[a] * den as i64 - drift_num[a];
        }
        splits.push(StepSplit { den, drift_num, y_num });
    }
    path.splits = splits;
    Ok(path)
}

/// `E[Y_k | X_{k-1} = x, eta]` computed from the kernel; zero up to rounding.
pub fn conditional_mean_y(env: &Config, x: &Point, r: usize) -> Result<[f64; MAX_DIM]> {
    let dist = ancestor_distribution(env, x, r)?;
    let drift = dist.mean_offset();
    let p = 1.0 / dist.support.len() as f64;
    let mut m = [0.0; MAX_DIM];
    for y in &dist.support {
        for a in 0..dist.dim {
            m[a] += p * ((y.0[a] - x.0[a]) as f64 - drift[a]);
        }
    }
    Ok(m)
}

/// `E[Y_k | X_{k-1} = x, eta]` times `den^2`, in integers; always zero.
pub fn conditional_mean_y_exact(env: &Config, x: &Point, r: usize) -> Result<[i64; MAX_DIM]> {
    let dist = ancestor_distribution(env, x, r)?;
    let den = dist.denominator() as i64;
    let drift_num = dist.offset_sum();
    let mut m = [0i64; MAX_DIM];
    for y in &dist.support {
        for a in 0..dist.dim {
            m[a] += (y.0[a] - x.0[a]) * den - drift_num[a];
        }
    }
    Ok(m)
}

/// `L_t exp(-(L_s / 8)^2 / (2 L_t R^2))`.
pub fn azuma_envelope(l_s: f64, l_t: f64, r: f64) -> f64 {
    l_t * (-(l_s / 8.0).powi(2) / (2.0 * l_t * r * r)).exp()
}

/// [`azuma_envelope`] at the given scales.
pub fn azuma_envelope_for(scales: &crate::renorm::Scales) -> f64 {
    azuma_envelope(scales.l_s as f64, scales.l_t as f64, scales.big_r as f64)
}

/// Confinement counts for starts in one distance band around the centre.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfinementBucket {
    /// Starts with `prev < |X_0 - z| <= max_start_distance`.
    pub max_start_distance: f64,
    pub paths: usize,
    pub confined: usize,
    pub frequency: f64,
}

/// Speed-bound diagnostics for lineages started near a block centre.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedBoundReport {
    pub paths: usize,
    pub l_s: usize,
    pub l_t: usize,
    pub r: usize,
    pub delta: f64,
    /// Fraction with `max_{k <= L_t} |X_k - X_0| <= L_s / 4`.
    pub confinement_frequency: f64,
    pub confinement_ok: bool,
    pub buckets: Vec<ConfinementBucket>,
    /// Fraction with `max_{0 < k <= L_t} |S_k| >= L_s / 8`.
    pub a_mart_frequency: f64,
    pub a_mart_std_error: f64,
    pub azuma_envelope: f64,
    pub envelope_vacuous: bool,
    /// `a_mart_frequency <= azuma_envelope + 3 se`.
    pub a_mart_within_envelope: bool,
    /// `L_s / (8 L_t)`.
    pub drift_limit: f64,
    /// Steps with `|X_{k-1} - X_0| <= L_s / 2`.
    pub drift_checked_steps: usize,
    pub max_drift_norm: f64,
    pub drift_violations: usize,
}

fn sup_dist(dim: usize, a: &Point, b: &Point) -> f64 {
    (*a - *b).sup_norm(dim) as f64
}

fn sup_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Evaluates the first `L_t` steps of each decomposed path against the
/// confinement, martingale and drift bounds (sup-norm throughout). Distances
/// are taken from each path's start; `center` only sorts starts into buckets.
pub fn check_speed_bound(paths: &[LineagePath], center: &Point, l_s: usize, l_t: usize, r: usize, delta: f64) -> Result<SpeedBoundReport> {
    let ls = l_s as f64;
    let drift_limit = ls / (8.0 * l_t as f64);
    let edges = [ls / 8.0, ls / 4.0, 3.0 * ls / 8.0, ls / 2.0, f64::INFINITY];
    let mut buckets: Vec<ConfinementBucket> =
        edges.iter().map(|&e| ConfinementBucket { max_start_distance: e, paths: 0, confined: 0, frequency: 0.0 }).collect();
    let (mut confined, mut mart) = (0usize, 0usize);
    let (mut checked, mut violations, mut max_drift) = (0usize, 0usize, 0.0f64);
    for p in paths {
        if !p.is_decomposed() || p.steps() < l_t {
            return Err(BarwError::Invalid("speed bound needs decomposed paths of at least L_t steps".into()));
        }
        let d = p.dim;
        let z = p.start();
        let ok = (0..=l_t).all(|k| sup_dist(d, &p.positions[k], &z) <= ls / 4.0);
        confined += usize::from(ok);
        let start = sup_dist(d, &p.start(), center);
        let b = edges.iter().position(|&e| start <= e).expect("last edge is infinite");
        buckets[b].paths += 1;
        buckets[b].confined += usize::from(ok);
        let sums = p.martingale_sums();
        mart += usize::from((1..=l_t).any(|k| sup_abs(&sums[k][..d]) >= ls / 8.0));
        for k in 1..=l_t {
            if sup_dist(d, &p.positions[k - 1], &z) <= ls / 2.0 {
                checked += 1;
                let norm = sup_abs(&p.splits[k - 1].drift()[..d]);
                max_drift = max_drift.max(norm);
                violations += usize::from(norm >= drift_limit);
            }
        }
    }
    for b in &mut buckets {
        b.frequency = if b.paths == 0 { 0.0 } else { b.confined as f64 / b.paths as f64 };
    }
    let n = paths.len().max(1) as f64;
    let confinement_frequency = confined as f64 / n;
    let a_mart_frequency = mart as f64 / n;
    let a_mart_std_error = (a_mart_frequency * (1.0 - a_mart_frequency) / n).sqrt();
    let env = azuma_envelope(ls, l_t as f64, r as f64);
    Ok(SpeedBoundReport {
        paths: paths.len(),
        l_s,
        l_t,
        r,
        delta,
        confinement_frequency,
        confinement_ok: confinement_frequency >= 1.0 - delta,
        buckets,
        a_mart_frequency,
        a_mart_std_error,
        azuma_envelope: env,
        envelope_vacuous: env >= 1.0,
        a_mart_within_envelope: a_mart_frequency <= env + 3.0 * a_mart_std_error,
        drift_limit,
        drift_checked_steps: checked,
        max_drift_norm: max_drift,
        drift_violations: violations,
    })
}

/// [`check_speed_bound`] at the block scales `L_s`, `L_t`, `R`.
pub fn check_speed_bound_at(paths: &[LineagePath], center: &Point, scales: &crate::renorm::Scales, delta: f64) -> Result<SpeedBoundReport> {
    check_speed_bound(paths, center, scales.l_s, scales.l_t, scales.big_r, delta)
}

/// Occupied sites of `cfg` within `B_radius(center)`, unwrapped.
pub fn occupied_near(cfg: &Config, center: &Point, radius: i64) -> Vec<Point> {
    Point::ball(cfg.dim(), radius).into_iter().map(|o| *center + o).filter(|y| cfg.get(y)).collect()
}

/// A uniformly chosen occupied site of the whole torus.
pub fn random_occupied<G: Rng + ?Sized>(cfg: &Config, rng: &mut G) -> Option<Point> {
    let n = cfg.count_occupied();
    (n > 0).then(|| cfg.point_of(cfg.occupied_indices().nth(rng.random_range(0..n)).expect("index below count")))
}

/// Writes `path,k,x_1..,drift_1..,y_1..`; row `k = 0` has zero drift and `Y`.
pub fn write_paths_csv<W: Write>(paths: &[LineagePath], mut w: W) -> io::Result<()> {
    let dim = paths.first().map_or(1, |p| p.dim);
    let mut header = vec!["path".to_string(), "k".to_string()];
    for prefix in ["x", "drift", "y"] {
        header.extend((1..=dim).map(|a| format!("{prefix}_{a}")));
    }
    writeln!(w, "{}", header.join(","))?;
    for (i, p) in paths.iter().enumerate() {
        for (k, x) in p.positions.iter().enumerate() {
            let mut row = vec![i.to_string(), k.to_string()];
            row.extend(x.0[..dim].iter().map(|c| c.to_string()));
            let (drift, y) = match k.checked_sub(1).and_then(|j| p.splits.get(j)) {
                Some(s) => (s.drift(), s.martingale()),
                None => ([0.0; MAX_DIM], [0.0; MAX_DIM]),
            };
            row.extend(drift[..dim].iter().map(|&v| format_float(v)));
            row.extend(y[..dim].iter().map(|&v| format_float(v)));
            writeln!(w, "{}", row.join(","))?;
        }
    }
    Ok(())
}

/// Settings for [`lineage_ensemble`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsemblePlan {
    pub side: usize,
    pub burn_in: usize,
    pub steps: usize,
    pub paths: usize,
    pub checkpoints: Vec<usize>,
    pub seed: u64,
}

/// Path `i` of an ensemble: its environment stream, and an RNG for the start
/// and the kernel draws.
pub fn path_streams(seed: u64, i: usize) -> (NoiseField, ChaCha8Rng) {
    let noise = NoiseField::new(seed, i as u64);
    let rng = ChaCha8Rng::seed_from_u64(noise.rng_seed(0x11ee));
    (noise, rng)
}

/// One decomposed lineage per independent environment: burn-in, record
/// `steps` more generations, start at a uniform occupied site of the top
/// snapshot.
pub fn sample_independent_lineage(params: &ModelParams, plan: &EnsemblePlan, i: usize) -> Result<LineagePath> {
    let (noise, mut rng) = path_streams(plan.seed, i);
    for attempt in 0..RETRY_ATTEMPTS {
        let b = burn_in_with_retries(params, plan.side, &retry_stream(&noise, attempt * RETRY_ATTEMPTS), plan.burn_in.max(1), RETRY_ATTEMPTS)?;
        let history = EnvHistory::record(*params, b.noise, b.config, b.time, plan.steps, plan.steps)?;
        if let Some(start) = random_occupied(history.top(), &mut rng) {
            let path = sample_lineage(&history, &start, plan.steps, &mut rng)?;
            return martingale_decomposition(path, &history);
        }
    }
    Err(BarwError::Invalid("environment died out before the lineage could start".into()))
}

/// Independent lineages gathered into an ensemble of displacements.
pub fn lineage_ensemble(params: &ModelParams, plan: &EnsemblePlan) -> Result<Ensemble> {
    let paths: Vec<LineagePath> =
        (0..plan.paths).into_par_iter().map(|i| sample_independent_lineage(params, plan, i)).collect::<Result<_>>()?;
    ensemble_of(params.dim, &plan.checkpoints, &paths)
}

/// Displacements of `paths` at `checkpoints`; path `i` gets seed label `i`.
pub fn ensemble_of(dim: usize, checkpoints: &[usize], paths: &[LineagePath]) -> Result<Ensemble> {
    let mut ens = Ensemble::new(dim, checkpoints.to_vec())?;
    for (i, p) in paths.iter().enumerate() {
        ens.push_path(&p.positions)?;
        ens.seeds.push(i as u64);
    }
    Ok(ens)
}

/// Settings for [`speed_bound_experiment`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedBoundPlan {
    pub side: usize,
    pub burn_in: usize,
    pub l_s: usize,
    pub l_t: usize,
    pub paths: usize,
    pub delta: f64,
    pub seed: u64,
}

/// Quenched speed-bound run: one stationary environment, `paths` lineages of
/// `L_t` steps from uniform occupied starts in `B_{L_s/2}` of the origin.
pub fn speed_bound_experiment(params: &ModelParams, plan: &SpeedBoundPlan) -> Result<SpeedBoundReport> {
    let reach = plan.l_s / 2 + params.radius * plan.l_t;
    if plan.side < 2 * reach + 1 {
        return Err(BarwError::TorusTooSmall { side: plan.side, needed: 2 * reach + 1 });
    }
    let noise = NoiseField::new(plan.seed, 0);
    let b = burn_in_with_retries(params, plan.side, &noise, plan.burn_in.max(1), RETRY_ATTEMPTS)?;
    let history = EnvHistory::record(*params, b.noise, b.config, b.time, plan.l_t, plan.l_t)?;
    let center = Point::ORIGIN;
    let starts = occupied_near(history.top(), &center, (plan.l_s / 2) as i64);
    if starts.is_empty() {
        return Err(BarwError::EmptyNeighbourhood { site: center, radius: plan.l_s / 2 });
    }
    let paths: Vec<LineagePath> = (0..plan.paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(noise.rng_seed(i as u64));
            let start = starts[rng.random_range(0..starts.len())];
            martingale_decomposition(sample_lineage(&history, &start, plan.l_t, &mut rng)?, &history)
        })
        .collect::<Result<_>>()?;
    check_speed_bound(&paths, &center, plan.l_s, plan.l_t, params.radius, plan.delta)
}

/// One-step displacements from true genealogy and from the backward kernel,
/// each draw in its own stationary environment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KernelComparison {
    pub genealogy: Vec<Point>,
    pub kernel: Vec<Point>,
}

/// For each draw: burn in, take one agent-based step with recorded parents,
/// pick a uniform occupied child, and record its true parent offset plus an
/// independent kernel draw from the same parent generation.
pub fn compare_genealogy_with_kernel(params: &ModelParams, side: usize, burn_in: usize, draws: usize, seed: u64) -> Result<KernelComparison> {
    let pairs: Vec<(Point, Point)> = (0..draws)
        .into_par_iter()
        .map(|i| {
            let (noise, mut rng) = path_streams(seed, i);
            for attempt in 0..RETRY_ATTEMPTS {
                let b = burn_in_with_retries(params, side, &retry_stream(&noise, attempt * RETRY_ATTEMPTS), burn_in.max(1), RETRY_ATTEMPTS)?;
                let (child, map) = step_agents(&b.config, params, &mut rng)?;
                if let Some(c) = random_occupied(&child, &mut rng) {
                    let g = lineage_from_parent_maps(std::slice::from_ref(&map), &c, b.time + 1)?;
                    let k = ancestor_distribution(&b.config, &c, params.radius)?.sample(&mut rng);
                    return Ok((g.increment(1), k - c));
                }
            }
            Err(BarwError::Invalid("agent step produced no particles".into()))
        })
        .collect::<Result<_>>()?;
    let (genealogy, kernel) = pairs.into_iter().unzip();
    Ok(KernelComparison { genealogy, kernel })
}

/// Histogram of the first coordinate over `-r..=r`.
pub fn displacement_histogram(steps: &[Point], r: usize) -> Vec<u64> {
    let mut h = vec![0u64; 2 * r + 1];
    for s in steps {
        h[(s.0[0] + r as i64) as usize] += 1;
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn envelope_value() {
        let v = azuma_envelope(128.0, 16.0, 8.0);
        assert!((v - 16.0 * (-0.125f64).exp()).abs() < 1e-12);
        assert!((v - 14.11995).abs() < 1e-5);
        assert!(azuma_envelope(256.0, 16.0, 8.0) < v);
    }

    #[test]
    fn single_and_pair_supports() {
        let mut cfg = Config::empty(1, 20).unwrap();
        cfg.set(&Point::from_coords(&[3]), true);
        let d = ancestor_distribution(&cfg, &Point::from_coords(&[1]), 2).unwrap();
        assert_eq!(d.support, vec![Point::from_coords(&[3])]);
        assert_eq!(d.probability(&Point::from_coords(&[3])), 1.0);
        cfg.set(&Point::from_coords(&[0]), true);
        let d = ancestor_distribution(&cfg, &Point::from_coords(&[1]), 2).unwrap();
        assert_eq!(d.denominator(), 2);
        assert_eq!(d.probability(&Point::from_coords(&[0])), 0.5);
        assert_eq!(d.mean_offset()[0], 0.5);
        let err = ancestor_distribution(&cfg, &Point::from_coords(&[10]), 2).unwrap_err();
        assert!(matches!(err, BarwError::EmptyNeighbourhood { .. }));
    }

    #[test]
    fn wrapped_support_is_unwrapped() {
        let mut cfg = Config::empty(1, 10).unwrap();
        cfg.set(&Point::from_coords(&[9]), true);
        let d = ancestor_distribution(&cfg, &Point::from_coords(&[20]), 1).unwrap();
        assert_eq!(d.support, vec![Point::from_coords(&[19])]);
    }
}
