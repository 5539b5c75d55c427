use barw_core::dynamics::{eps_fp, phi};
use barw_core::profiles::*;
use barw_core::{NoiseField, Point};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FIXTURE_S: f64 = 0.1;
const FIXTURE_W: f64 = 2.0;
const FIXTURE_EPS0: f64 = 0.025;
const FIXTURE_DELTA0: f64 = 0.002;
const FIXTURE_M0: usize = 4;

fn seq() -> AlphaBetaSeq {
    build_alpha_beta(2.0, 0.05, 0.4, 30).unwrap()
}

fn profile(r: usize, dim: usize, k0: usize) -> ProfilePair {
    let shape = ProfileShape { r, r_max: 64, s: FIXTURE_S, w: FIXTURE_W, eps0: FIXTURE_EPS0, k0 };
    ProfilePair::new(&seq(), FIXTURE_M0, shape, dim).unwrap()
}

/// Grid oracle for inf/sup of phi on an interval.
fn grid_extrema(mu: f64, a: f64, b: f64) -> (f64, f64) {
    (0..=10_000).fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), i| {
        let v = phi(mu, a + (b - a) * i as f64 / 10_000.0);
        (l.min(v), h.max(v))
    })
}

#[test]
fn m0_fixture_is_frozen() {
    let s = seq();
    assert_eq!(m0(&s, eps_fp(2.0, 0.1).unwrap()).unwrap(), FIXTURE_M0);
}

#[test]
fn image_of_each_interval_is_strictly_inside_next() {
    let s = seq();
    for m in 1..s.len() {
        let (lo, hi) = grid_extrema(2.0, s.alpha(m), s.beta(m));
        assert!(lo > s.alpha(m + 1) && hi < s.beta(m + 1), "m = {m}");
    }
}

#[test]
fn search_reproduces_frozen_fixture() {
    let out = find_cdp_params(&CdpSearch::new(2.0, 1, vec![8, 32], 32, 64)).unwrap();
    let p = out.found.expect("fixture parameters found");
    assert_eq!((p.s, p.w, p.eps0, p.delta0, p.m0), (FIXTURE_S, FIXTURE_W, FIXTURE_EPS0, FIXTURE_DELTA0, FIXTURE_M0));
}

#[test]
fn fixture_certifies_with_positive_margins() {
    for r in [8, 32] {
        let rep = certify_cdp(&profile(r, 1, 16), 2.0, FIXTURE_EPS0, FIXTURE_DELTA0);
        assert!(rep.pass, "r = {r}: {:?}", &rep.violations[..rep.violations.len().min(5)]);
        assert!(rep.min_margin > 0.0);
        assert_eq!(rep.steps.len(), 16);
        assert!(rep.steps.iter().all(|s| s.lower > 0.0 && s.upper > 0.0 && s.sites > 0));
    }
}

#[test]
fn halving_delta_keeps_certification() {
    let p = profile(8, 1, 16);
    assert!(certify_cdp(&p, 2.0, FIXTURE_EPS0, FIXTURE_DELTA0 / 2.0).pass);
    assert!(certify_cdp(&p, 2.0, FIXTURE_EPS0, FIXTURE_DELTA0 / 4.0).pass);
}

#[test]
fn deep_plateau_margin_matches_scalar_computation() {
    let p = profile(8, 1, 2);
    let s = seq();
    let (a, b) = (s.alpha(FIXTURE_M0), s.beta(FIXTURE_M0));
    let (lo, hi) = grid_extrema(2.0, a, b);
    // largest delta the plateau alone allows
    let limit = ((lo - a) / a).min((b - hi) / b);
    assert!(FIXTURE_DELTA0 < limit);
    let rep = certify_cdp(&p, 2.0, FIXTURE_EPS0, 0.0);
    // the plateau site x = 0 attains exactly these margins
    let upper_at_origin = b - hi;
    assert!(rep.steps[0].upper <= upper_at_origin + 1e-9);
    let too_big = certify_cdp(&p, 2.0, FIXTURE_EPS0, limit * 1.05);
    assert!(!too_big.pass);
    assert!(too_big.violations.iter().any(|v| v.x == vec![0]));
}

#[test]
fn swapped_pair_reports_exact_ordering_violations() {
    let mut p = profile(8, 1, 3);
    std::mem::swap(&mut p.alpha[0], &mut p.beta[0]);
    let rep = certify_cdp(&p, 2.0, FIXTURE_EPS0, FIXTURE_DELTA0);
    assert!(!rep.pass);
    let ordering: Vec<(usize, i64)> = rep
        .violations
        .iter()
        .filter(|v| v.condition == Condition::Ordering)
        .map(|v| (v.k, v.x[0]))
        .collect();
    // the swap only affects the outermost staircase step
    let mut expect = Vec::new();
    for k in 0..=3 {
        let base = p.plateau_radius(k);
        for n in base + 3 * 8 + 1..=base + 4 * 8 {
            expect.push((k, n));
        }
    }
    assert_eq!(ordering, expect);
}

/// Unreduced oracle: every site of the support in both signs, naive window sums.
fn naive_certify(p: &ProfilePair, mu: f64, eps: f64, delta: f64) -> (f64, usize) {
    let d = p.dim;
    let r = p.shape.r as i64;
    let vol = (2 * r + 1).pow(d as u32) as f64;
    let mut min_margin = f64::INFINITY;
    let mut violations = 0;
    for k in 0..p.shape.k0 {
        let ext = p.support_radius(k);
        for x in Point::ball(d, ext) {
            let zm = p.zeta_minus(k, &x);
            if zm <= 0.0 {
                continue;
            }
            let (mut lo, mut hi) = (0.0, 0.0);
            for o in Point::ball(d, r) {
                let y = x + o;
                let (a, b) = (p.zeta_minus(k, &y), p.zeta_plus(k, &y));
                let pa = phi(mu, a);
                let pb = phi(mu, b);
                lo += pa.min(pb);
                hi += if a <= 1.0 / mu && 1.0 / mu <= b { phi(mu, 1.0 / mu) } else { pa.max(pb) };
            }
            let lower = lo / vol - (1.0 + delta) * p.zeta_minus(k + 1, &x);
            let upper = (1.0 - delta) * p.zeta_plus(k + 1, &x) - hi / vol;
            min_margin = min_margin.min(lower).min(upper);
            violations += usize::from(lower < 0.0) + usize::from(upper < 0.0) + usize::from(zm > p.zeta_plus(k, &x)) + usize::from(zm < eps);
        }
    }
    (min_margin, violations)
}

#[test]
fn reduced_certification_matches_unreduced_oracle() {
    for (d, r, delta) in [(1, 3, FIXTURE_DELTA0), (2, 2, FIXTURE_DELTA0), (1, 3, 0.05), (2, 2, 0.05)] {
        let shape = ProfileShape { r, r_max: 6, s: 0.3, w: 2.0, eps0: 0.01, k0: 3 };
        let p = ProfilePair::new(&seq(), FIXTURE_M0, shape, d).unwrap();
        let rep = certify_cdp(&p, 2.0, 0.01, delta);
        let (naive_margin, naive_violations) = naive_certify(&p, 2.0, 0.01, delta);
        assert!((rep.min_margin - naive_margin).abs() < 1e-12, "d = {d}: {} vs {naive_margin}", rep.min_margin);
        assert_eq!(rep.pass, naive_violations == 0 && naive_margin > 0.0, "d = {d}, delta = {delta}");
        assert_eq!(rep.violation_count == 0, naive_violations == 0);
    }
}

#[test]
fn lower_profile_below_upper_and_grows_in_k() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for dim in 1..=3 {
        let p = profile(8, dim, 16);
        for _ in 0..10_000 / 3 {
            let k = rng.random_range(0..16);
            let ext = p.support_radius(k + 1) + 5;
            let x = Point::from_coords(&(0..dim).map(|_| rng.random_range(-ext..=ext)).collect::<Vec<_>>());
            let (lo, hi) = (p.zeta_minus(k, &x), p.zeta_plus(k, &x));
            assert!(lo <= hi);
            assert!(p.zeta_minus(k + 1, &x) >= lo);
            if lo > 0.0 {
                assert!(lo >= FIXTURE_EPS0 - 1e-15);
                assert!(x.sup_norm(dim) <= p.support_radius(k));
            }
        }
    }
}

#[test]
fn chi_shift_along_axes_in_higher_dimension() {
    let p = profile(8, 2, 4);
    let sp = p.speed();
    for n in p.staircase_end(0) + 1..p.support_radius(0) + 3 {
        let a = p.chi(1, &Point::from_coords(&[n + sp, 0]));
        let b = p.chi(0, &Point::from_coords(&[n, 0]));
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn bernstein_monotone_and_threshold() {
    let mut prev = f64::INFINITY;
    for r in 1..200 {
        let b = bernstein_bound(0.05, 0.05, r, 2).unwrap();
        assert!(b.value < prev);
        prev = b.value;
        let vol = ((2 * r + 1) as f64).powi(2);
        assert_eq!(b.vacuous, vol <= b.informative_volume);
    }
}

/// Bracket `[c0, c0]` at step k and `[lo, hi]` at step k + 1, everywhere.
struct Flat {
    c0: f64,
    next: (f64, f64),
    r: usize,
}

impl DensityProfile for Flat {
    fn dim(&self) -> usize {
        1
    }
    fn radius(&self) -> usize {
        self.r
    }
    fn lower(&self, k: usize, _: &Point) -> f64 {
        if k == 0 {
            self.c0
        } else {
            self.next.0
        }
    }
    fn upper(&self, k: usize, _: &Point) -> f64 {
        if k == 0 {
            self.c0
        } else {
            self.next.1
        }
    }
}

fn binomial_interval_probability(n: u64, p: f64, lo: f64, hi: f64) -> f64 {
    let mut total = 0.0;
    let mut log_c = 0.0f64;
    for j in 0..=n {
        if j > 0 {
            log_c += ((n - j + 1) as f64).ln() - (j as f64).ln();
        }
        let frac = j as f64 / n as f64;
        if frac >= lo && frac <= hi {
            total += (log_c + j as f64 * p.ln() + (n - j) as f64 * (1.0 - p).ln()).exp();
        }
    }
    total
}

#[test]
fn uk_estimate_matches_exact_binomial() {
    let f = Flat { c0: 0.3, next: (0.25, 0.40), r: 8 };
    let exact = binomial_interval_probability(17, phi(2.0, 0.3), 0.25, 0.40);
    let est = estimate_uk_probability(&f, 2.0, 0, &Point::ORIGIN, 50_000, &NoiseField::new(3, 0)).unwrap();
    let sd = (exact * (1.0 - exact) / 50_000.0).sqrt();
    assert!((est.estimate - exact).abs() < 3.0 * sd, "{} vs {exact}", est.estimate);
}

#[test]
fn uk_estimate_replicates_across_seeds() {
    let p = profile(8, 1, 4);
    let x = Point::from_coords(&[p.staircase_end(0) + 3]);
    let a = estimate_uk_probability(&p, 2.0, 0, &x, 20_000, &NoiseField::new(1, 0)).unwrap();
    let b = estimate_uk_probability(&p, 2.0, 0, &x, 20_000, &NoiseField::new(2, 0)).unwrap();
    assert!((a.estimate - b.estimate).abs() <= a.band + b.band);
}

#[test]
fn uk_estimate_respects_bound_when_informative() {
    // informative bound needs large eps * delta: use a synthetic bracket with wide margins
    let f = Flat { c0: 0.3, next: (0.1, 0.9), r: 8 };
    let b = bernstein_bound(0.5, 0.5, 8, 1).unwrap();
    assert!(!b.vacuous);
    let est = estimate_uk_probability(&f, 2.0, 0, &Point::ORIGIN, 5_000, &NoiseField::new(4, 0)).unwrap();
    assert!(est.estimate >= 1.0 - b.value - est.band);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn zeta_minus_below_plus_everywhere(k in 0usize..12, n in -400i64..400, m in -400i64..400) {
        let p = profile(8, 2, 12);
        let x = Point::from_coords(&[n, m]);
        prop_assert!(p.zeta_minus(k, &x) <= p.zeta_plus(k, &x));
        prop_assert!(p.zeta_minus(k + 1, &x) >= p.zeta_minus(k, &x));
    }

    #[test]
    fn zeta_symmetric_under_reflection_and_swap(k in 0usize..12, n in -400i64..400, m in -400i64..400) {
        let p = profile(8, 2, 12);
        let x = Point::from_coords(&[n, m]);
        let y = Point::from_coords(&[-m, n]);
        prop_assert_eq!(p.zeta_minus(k, &x), p.zeta_minus(k, &y));
        prop_assert_eq!(p.zeta_plus(k, &x), p.zeta_plus(k, &y));
    }
}
