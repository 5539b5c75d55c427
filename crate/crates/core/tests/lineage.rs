use barw_core::dynamics::{burn_in_stationary, step_agents, ModelParams};
use barw_core::lattice::Config;
use barw_core::lineage::*;
use barw_core::renorm::compute_scales;
use barw_core::stats::htest::{chi_square_gof, chi_square_two_sample};
use barw_core::{BarwError, NoiseField, Point};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn p1(x: i64) -> Point {
    Point::from_coords(&[x])
}

fn full_history(dim: usize, side: usize, r: usize, depth: usize) -> EnvHistory {
    let params = ModelParams::new(2.0, r, dim).unwrap();
    let full = Config::full(dim, side).unwrap();
    EnvHistory::from_snapshots(params, 0, vec![full; depth + 1]).unwrap()
}

fn recorded_history(dim: usize, side: usize, r: usize, burn: usize, horizon: usize, seed: u64) -> EnvHistory {
    let params = ModelParams::new(2.0, r, dim).unwrap();
    let b = burn_in_stationary(&params, side, &NoiseField::new(seed, 0), burn).unwrap();
    assert!(!b.extinct);
    EnvHistory::record(params, b.noise, b.config, b.time, horizon, horizon).unwrap()
}

#[test]
fn history_ring_buffer() {
    let h = recorded_history(1, 128, 3, 20, 8, 1);
    assert_eq!(h.len(), 9);
    assert_eq!(h.top_time(), 28);
    assert_eq!(h.oldest_time(), 20);
    assert!(h.verify_replay().unwrap());
    assert_eq!(h.at_time(25), h.at_depth(3));
    assert!(h.at_depth(9).is_none());
    assert!(h.at_time(29).is_none());

    let mut other = h.clone();
    other.advance().unwrap();
    assert_eq!(other.len(), 9);
    assert_eq!(other.oldest_time(), 21);
    assert_eq!(other.at_depth(1), h.at_depth(0));

    let cfgs: Vec<Config> = (0..3).map(|_| h.top().clone()).collect();
    let fake = EnvHistory::from_snapshots(*h.params(), 0, cfgs).unwrap();
    assert!(!fake.verify_replay().unwrap() || h.top().is_empty());
}

#[test]
fn zero_steps_gives_start_only() {
    let h = recorded_history(1, 128, 3, 20, 4, 2);
    let start = random_occupied(h.top(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let p = sample_lineage(&h, &start, 0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(p.positions, vec![start]);
    let p = martingale_decomposition(p, &h).unwrap();
    assert!(p.reconstruction_exact());
}

#[test]
fn sampler_rejects_bad_inputs() {
    let h = recorded_history(1, 128, 3, 20, 4, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let start = random_occupied(h.top(), &mut rng).unwrap();
    assert!(sample_lineage(&h, &start, 5, &mut rng).is_err());
    let empty = (0..128).map(p1).find(|x| !h.top().get(x)).unwrap();
    assert!(sample_lineage(&h, &empty, 1, &mut rng).is_err());
}

#[test]
fn recorded_paths_satisfy_invariants() {
    let h = recorded_history(2, 64, 3, 30, 40, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let start = random_occupied(h.top(), &mut rng).unwrap();
        let p = sample_lineage(&h, &start, 40, &mut rng).unwrap();
        assert!(p.consistent_with(&h));
        let p = martingale_decomposition(p, &h).unwrap();
        assert!(p.reconstruction_exact());
        let sums = p.martingale_sums();
        let mut drift = [0.0; 3];
        for k in 1..=p.steps() {
            for a in 0..2 {
                drift[a] += p.splits[k - 1].drift()[a];
                let d = p.displacement(k).0[a] as f64;
                assert!((d - drift[a] - sums[k][a]).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn single_parent_environment_is_deterministic() {
    // one occupied site per generation, drifting right by one each step
    let params = ModelParams::new(2.0, 2, 1).unwrap();
    let snaps: Vec<Config> = (0..6)
        .map(|t| {
            let mut c = Config::empty(1, 32).unwrap();
            c.set(&p1(5 - t), true);
            c
        })
        .collect();
    let h = EnvHistory::from_snapshots(params, 5, snaps).unwrap();
    let p = sample_lineage(&h, &p1(0), 5, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(p.positions, (0..6).map(p1).collect::<Vec<_>>());
    let p = martingale_decomposition(p, &h).unwrap();
    for s in &p.splits {
        assert_eq!(s.y_num[0], 0);
        assert_eq!(s.drift()[0], 1.0);
    }
}

#[test]
fn full_environment_has_zero_drift() {
    let h = full_history(2, 64, 3, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let p = sample_lineage(&h, &Point::from_coords(&[4, 4]), 10, &mut rng).unwrap();
    let p = martingale_decomposition(p, &h).unwrap();
    for (k, s) in p.splits.iter().enumerate() {
        assert_eq!(s.drift_num, [0; 3]);
        let inc = p.increment(k + 1);
        assert_eq!(s.martingale()[..2], [inc.0[0] as f64, inc.0[1] as f64]);
    }
}

#[test]
fn missing_parent_is_reported() {
    let params = ModelParams::new(2.0, 2, 1).unwrap();
    let cfg = Config::from_fn(1, 32, |x| x.0[0] % 3 == 0).unwrap();
    let (child, map) = step_agents(&cfg, &params, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    let vacant = (0..32).map(p1).find(|x| !child.get(x)).unwrap();
    let err = lineage_from_parent_maps(std::slice::from_ref(&map), &vacant, 1).unwrap_err();
    assert!(matches!(err, BarwError::MissingParent { generation: 0, .. }));
    assert!(lineage_from_parent_maps(&[], &vacant, 1).is_err());
}

#[test]
fn genealogy_follows_parent_maps() {
    let params = ModelParams::new(2.0, 3, 1).unwrap();
    let b = burn_in_stationary(&params, 200, &NoiseField::new(8, 0), 30).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut cfgs = vec![b.config.clone()];
    let mut maps = Vec::new();
    for _ in 0..12 {
        let (c, m) = step_agents(cfgs.last().unwrap(), &params, &mut rng).unwrap();
        cfgs.push(c);
        maps.push(m);
    }
    maps.reverse();
    let top = cfgs.last().unwrap();
    let start = random_occupied(top, &mut rng).unwrap();
    let path = lineage_from_parent_maps(&maps, &start, 12).unwrap();
    assert_eq!(path.steps(), maps.len());
    let history = EnvHistory::from_snapshots(params, 12, cfgs).unwrap();
    assert!(path.consistent_with(&history));
    assert!(martingale_decomposition(path, &history).unwrap().reconstruction_exact());
}

#[test]
fn kernel_resampling_matches_distribution() {
    let h = recorded_history(2, 48, 4, 30, 1, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = random_occupied(h.top(), &mut rng).unwrap();
    let dist = ancestor_distribution(h.at_depth(1).unwrap(), &x, 4).unwrap();
    assert!(dist.support.len() > 5);
    let mut counts = vec![0u64; dist.support.len()];
    for _ in 0..100_000 {
        let y = dist.sample(&mut rng);
        counts[dist.support.iter().position(|s| *s == y).unwrap()] += 1;
    }
    let probs: Vec<f64> = dist.support.iter().map(|y| dist.probability(y)).collect();
    let chi = chi_square_gof(&counts, &probs).unwrap();
    assert!(chi.p_value > 0.01, "p = {}", chi.p_value);
}

#[test]
fn srw_oracle_in_full_environment() {
    let (r, l_s, l_t, n) = (3usize, 40usize, 30usize, 4000usize);
    let h = full_history(1, 1024, r, l_t);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let paths: Vec<LineagePath> = (0..n)
        .map(|_| {
            let start = p1(rng.random_range(-5..=5));
            martingale_decomposition(sample_lineage(&h, &start, l_t, &mut rng).unwrap(), &h).unwrap()
        })
        .collect();
    let report = check_speed_bound(&paths, &p1(0), l_s, l_t, r, 0.1).unwrap();
    assert_eq!(report.drift_violations, 0);
    assert_eq!(report.max_drift_norm, 0.0);

    // plain random walk with uniform steps on {-R..R}
    let mut oracle = ChaCha8Rng::seed_from_u64(13);
    let (mut confined, mut mart) = (0usize, 0usize);
    for _ in 0..n {
        let mut x = oracle.random_range(-5i64..=5);
        let x0 = x;
        let (mut ok, mut hit) = (true, false);
        for _ in 0..l_t {
            x += oracle.random_range(-(r as i64)..=r as i64);
            ok &= (x - x0).abs() as f64 <= l_s as f64 / 4.0;
            hit |= (x - x0).abs() as f64 >= l_s as f64 / 8.0;
        }
        confined += usize::from(ok);
        mart += usize::from(hit);
    }
    for (emp, orc) in [(report.confinement_frequency, confined as f64 / n as f64), (report.a_mart_frequency, mart as f64 / n as f64)] {
        let se = (emp * (1.0 - emp) / n as f64 + orc * (1.0 - orc) / n as f64).sqrt();
        assert!((emp - orc).abs() <= 3.0 * se, "{emp} vs {orc}");
    }
}

#[test]
fn speed_bound_report_on_hand_paths() {
    let h = full_history(1, 64, 2, 4);
    let mk = |xs: &[i64]| {
        let p = LineagePath { dim: 1, top_time: 0, positions: xs.iter().map(|&x| p1(x)).collect(), splits: Vec::new() };
        martingale_decomposition(p, &h).unwrap()
    };
    let paths = vec![mk(&[0, 1, 0, 1, 0]), mk(&[0, -2, -4, -6, -8]), mk(&[30, 31, 30, 31, 30])];
    let rep = check_speed_bound(&paths, &p1(0), 24, 4, 2, 0.2).unwrap();
    assert_eq!(rep.paths, 3);
    assert!((rep.confinement_frequency - 2.0 / 3.0).abs() < 1e-12);
    assert!((rep.a_mart_frequency - 1.0 / 3.0).abs() < 1e-12);
    assert!(!rep.confinement_ok);
    assert_eq!(rep.drift_checked_steps, 12);
    assert_eq!(rep.buckets[4].confined, 1);
    assert_eq!(rep.buckets[0].paths, 2);
    assert_eq!(rep.buckets[4].paths, 1);
    assert_eq!(rep.drift_limit, 0.75);
    assert!(check_speed_bound(&paths, &p1(0), 24, 5, 2, 0.2).is_err());
}

#[test]
fn paths_csv_layout() {
    let h = full_history(2, 32, 1, 2);
    let p = sample_lineage(&h, &Point::from_coords(&[0, 0]), 2, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let p = martingale_decomposition(p, &h).unwrap();
    let mut buf = Vec::new();
    write_paths_csv(&[p.clone(), p], &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "path,k,x_1,x_2,drift_1,drift_2,y_1,y_2");
    assert_eq!(lines.len(), 7);
    assert!(lines[1].starts_with("0,0,0,0,"));
    assert!(lines[4].starts_with("1,0,"));
}

#[test]
fn genealogy_matches_kernel_small() {
    let params = ModelParams::new(2.0, 5, 1).unwrap();
    let cmp = compare_genealogy_with_kernel(&params, 256, 60, 3000, 77).unwrap();
    assert_eq!(cmp.genealogy.len(), 3000);
    assert!(cmp.genealogy.iter().chain(&cmp.kernel).all(|s| s.sup_norm(1) <= 5));
    let chi = chi_square_two_sample(&displacement_histogram(&cmp.genealogy, 5), &displacement_histogram(&cmp.kernel, 5)).unwrap();
    assert!(chi.p_value > 0.01, "p = {}", chi.p_value);
}

#[test]
fn ensembles_are_reproducible() {
    let params = ModelParams::new(2.0, 3, 1).unwrap();
    let plan = EnsemblePlan { side: 128, burn_in: 20, steps: 16, paths: 6, checkpoints: vec![4, 8, 16], seed: 3 };
    let a = lineage_ensemble(&params, &plan).unwrap();
    let b = lineage_ensemble(&params, &plan).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 6);
    let c = lineage_ensemble(&params, &EnsemblePlan { seed: 4, ..plan }).unwrap();
    assert_ne!(a.positions, c.positions);
}

fn full_scale_envelopes(kappa: f64, s: f64) -> Vec<f64> {
    (6..=12)
        .map(|e| {
            let params = ModelParams::new(2.0, 1 << e, 1).unwrap();
            azuma_envelope_for(&compute_scales(&params, kappa, s, 4).unwrap())
        })
        .collect()
}

#[test]
fn envelope_decay_needs_large_density_constant() {
    // decreasing once c_dens is in the hundreds
    let strong = full_scale_envelopes(0.995, 0.5);
    assert!(strong.windows(2).all(|w| w[1] < w[0]), "{strong:?}");
    // at a mild contraction the sequence grows instead
    let weak = full_scale_envelopes(0.5, 0.25);
    assert!(weak.windows(2).all(|w| w[1] > w[0]), "{weak:?}");
}

fn arb_env(dim: usize) -> impl Strategy<Value = (Config, Point, usize)> {
    (1usize..=3, any::<u64>()).prop_map(move |(r, seed)| {
        let side = 2 * r + 5;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cfg = Config::from_fn(dim, side, |_| rng.random_bool(0.4)).unwrap();
        let x = Point::from_coords(&(0..dim).map(|_| rng.random_range(0..side as i64)).collect::<Vec<_>>());
        let y = x + Point::from_coords(&vec![1; dim]);
        cfg.set(&y, true);
        (cfg, x, r)
    })
}

fn reflect(cfg: &Config, x: &Point) -> Config {
    let dim = cfg.dim();
    Config::from_fn(dim, cfg.side(), |y| cfg.get(&(x.scale(dim, 2) - *y))).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conditional_mean_of_y_vanishes((cfg, x, r) in (1usize..=3).prop_flat_map(arb_env)) {
        let exact = conditional_mean_y_exact(&cfg, &x, r).unwrap();
        prop_assert_eq!(exact, [0; 3]);
        let m = conditional_mean_y(&cfg, &x, r).unwrap();
        prop_assert!(m.iter().all(|v| v.abs() <= 1e-12));
    }

    #[test]
    fn kernel_is_uniform_on_occupied_ball((cfg, x, r) in (1usize..=3).prop_flat_map(arb_env)) {
        let d = ancestor_distribution(&cfg, &x, r).unwrap();
        let dim = cfg.dim();
        for o in Point::ball(dim, r as i64) {
            let y = x + o;
            let expect = if cfg.get(&y) { 1.0 / d.denominator() as f64 } else { 0.0 };
            prop_assert_eq!(d.probability(&y), expect);
        }
        prop_assert_eq!(d.support.len() as u64, d.denominator());
    }

    #[test]
    fn kernel_commutes_with_point_reflection((cfg, x, r) in (1usize..=3).prop_flat_map(arb_env)) {
        let dim = cfg.dim();
        let flipped = reflect(&cfg, &x);
        let d = ancestor_distribution(&cfg, &x, r).unwrap();
        let e = ancestor_distribution(&flipped, &x, r).unwrap();
        for o in Point::ball(dim, r as i64) {
            prop_assert_eq!(e.probability(&(x - o)), d.probability(&(x + o)));
        }
    }
}
