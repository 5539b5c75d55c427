use barw_core::dynamics::ModelParams;
use barw_core::lattice::Config;
use barw_core::lineage::{sample_lineage, EnvHistory};
use barw_core::stats::*;
use barw_core::Point;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const R: usize = 3;

/// Lineages in a fully occupied environment are simple random walks with
/// steps uniform on the box of radius `R`.
fn srw_ensemble(dim: usize, paths: usize, checkpoints: Vec<usize>, seed: u64) -> Ensemble {
    let steps = *checkpoints.last().unwrap();
    let params = ModelParams::new(2.0, R, dim).unwrap();
    let full = Config::full(dim, 32).unwrap();
    let h = EnvHistory::from_snapshots(params, 0, vec![full; steps + 1]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut e = Ensemble::new(dim, checkpoints).unwrap();
    for _ in 0..paths {
        let p = sample_lineage(&h, &Point::splat(dim, 0), steps, &mut rng).unwrap();
        e.push_path(&p.positions).unwrap();
    }
    e
}

#[test]
fn srw_variance_matches_uniform_box() {
    let e = srw_ensemble(2, 4000, vec![16, 64, 256], 1);
    let s = EnsembleSummary::from_ensemble(&e).unwrap();
    let clt = clt_diagnostic(&s, 2, 0.01).unwrap();
    assert!(clt.pass, "{:?}", clt.tests);
    let truth = (R * (R + 1)) as f64 / 3.0;
    for v in &clt.sigma2_hat {
        assert!((v / truth - 1.0).abs() < 0.05, "{v} vs {truth}");
    }
}

#[test]
fn srw_speed_decays_like_inverse_root() {
    let e = srw_ensemble(1, 2000, vec![16, 64, 256, 1024], 2);
    let s = EnsembleSummary::from_ensemble(&e).unwrap();
    let lln = lln_diagnostic(&s, 0.2).unwrap();
    assert!(lln.pass, "{:?}", lln.rows);
    // E|X_k| / k = sqrt(2 sigma^2 / (pi k)) for a centred normal limit
    let sigma2 = (R * (R + 1)) as f64 / 3.0;
    for row in &lln.rows {
        let expect = (2.0 * sigma2 / (std::f64::consts::PI * row.k as f64)).sqrt();
        assert!((row.mean_abs_over_k - expect).abs() < 4.0 * row.standard_error + 0.02 * expect, "{row:?}");
    }
}

#[test]
fn srw_passes_functional_checks() {
    let e = srw_ensemble(2, 1000, vec![32, 64, 128, 256], 3);
    let f = fclt_diagnostic(&e, 0.01).unwrap();
    assert!(f.pass, "{f:?}");
}

#[test]
fn null_calibration_within_band() {
    let cal = null_calibration(2, 200, 1000, 0.01, 7).unwrap();
    assert!(cal.pass, "{:?}", cal.rejections);
    assert!(cal.rejections.values().all(|&c| c <= 8));
}
