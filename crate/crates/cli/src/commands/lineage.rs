use barw_core::dynamics::ModelParams;
use barw_core::lineage::{
    ensemble_of, sample_independent_lineage, speed_bound_experiment, write_paths_csv, EnsemblePlan, LineagePath,
    SpeedBoundPlan, SpeedBoundReport,
};
use barw_core::stats::{
    clt_diagnostic, fclt_diagnostic, lln_diagnostic, CltReport, EnsembleSummary, FcltReport, LlnReport, MIN_CLT_SAMPLES,
};
use rayon::prelude::*;
use serde::Serialize;

use super::{run_seed, Outcome};
use crate::config::RunConfig;
use crate::error::CliError;
use crate::manifest::Outputs;

pub const MULTIPLE_TESTING_NOTE: &str = "each test is judged at its own level alpha; no family-wise correction is applied";

#[derive(Serialize)]
struct Stats {
    paths: usize,
    steps: usize,
    checkpoints: Vec<usize>,
    lln: Option<LlnReport>,
    clt: Option<CltReport>,
    fclt: Option<FcltReport>,
    speed_bound: Option<SpeedBoundReport>,
    skipped: Vec<String>,
    note: &'static str,
    pass: bool,
}

/// Powers of two below `steps`, then `steps`.
fn default_checkpoints(steps: usize) -> Vec<usize> {
    let mut c: Vec<usize> = std::iter::successors(Some(1usize), |k| Some(k * 2)).take_while(|&k| k < steps).collect();
    c.push(steps);
    c
}

pub fn run(cfg: &RunConfig, out: &mut Outputs) -> Result<Outcome, CliError> {
    let l = cfg.section(&cfg.lineage, "lineage")?;
    let m = &cfg.model;
    let params = ModelParams::new(m.mu, m.radius, m.dim)?;
    if l.paths == 0 {
        return Err(CliError::Config("lineage.paths must be at least 1".into()));
    }
    let checkpoints = l.checkpoints.clone().unwrap_or_else(|| default_checkpoints(l.steps));
    if checkpoints.last().is_some_and(|&k| k > l.steps) {
        return Err(CliError::Config(format!("lineage.checkpoints exceed lineage.steps = {}", l.steps)));
    }
    let plan = EnsemblePlan {
        side: cfg.side()?,
        burn_in: l.burn_in,
        steps: l.steps,
        paths: l.paths,
        checkpoints: checkpoints.clone(),
        seed: run_seed(cfg, 0x11ee),
    };
    let paths: Vec<LineagePath> =
        (0..l.paths).into_par_iter().map(|i| sample_independent_lineage(&params, &plan, i)).collect::<Result<_, _>>()?;
    let shown = l.csv_paths.unwrap_or(paths.len()).min(paths.len());
    out.write_with("paths.csv", |w| write_paths_csv(&paths[..shown], w))?;
    let ensemble = ensemble_of(m.dim, &checkpoints, &paths)?;
    drop(paths);

    let mut lines = Vec::new();
    let mut skipped = Vec::new();
    let positive = checkpoints.iter().filter(|&&k| k > 0).count();
    let summary = if ensemble.len() >= 2 {
        let s = EnsembleSummary::from_ensemble(&ensemble)?;
        out.write_with("moments.csv", |w| s.write_moments_csv(w))?;
        Some(s)
    } else {
        skipped.push("moments: fewer than 2 paths".into());
        None
    };
    let lln = match &summary {
        Some(s) if positive >= 2 => Some(lln_diagnostic(s, l.lln_threshold)?),
        _ => {
            skipped.push("lln: needs 2 paths and 2 checkpoints with k > 0".into());
            None
        }
    };
    let clt = match &summary {
        Some(s) if s.count >= MIN_CLT_SAMPLES && positive >= 1 => Some(clt_diagnostic(s, checkpoints.len() - 1, l.alpha)?),
        _ => {
            skipped.push(format!("clt: needs {MIN_CLT_SAMPLES} paths and k > 0"));
            None
        }
    };
    let fclt = if ensemble.len() >= MIN_CLT_SAMPLES && positive >= 3 {
        Some(fclt_diagnostic(&ensemble, l.alpha)?)
    } else {
        skipped.push(format!("fclt: needs {MIN_CLT_SAMPLES} paths and 3 checkpoints with k > 0"));
        None
    };
    let speed_bound = match &l.speed {
        Some(sp) => {
            let plan = SpeedBoundPlan {
                side: sp.side,
                burn_in: sp.burn_in,
                l_s: sp.l_s,
                l_t: sp.l_t,
                paths: sp.paths,
                delta: sp.delta,
                seed: run_seed(cfg, 0x5eed),
            };
            Some(speed_bound_experiment(&params, &plan)?)
        }
        None => None,
    };

    if let Some(r) = &lln {
        let last = r.rows.last().expect("rows present");
        lines.push(format!("lln: {} (mean |X_k|/k = {:.4e} at k = {})", verdict(r.pass), last.mean_abs_over_k, last.k));
    }
    if let Some(r) = &clt {
        lines.push(format!("clt at k = {}: {} (sigma2_hat {:?})", r.k, verdict(r.pass), r.sigma2_hat));
    }
    if let Some(r) = &fclt {
        lines.push(format!("fclt: {} (variance fit R^2 = {:.5})", verdict(r.pass), r.variance_fit.r_squared));
    }
    if let Some(r) = &speed_bound {
        lines.push(format!(
            "speed bound: confinement {:.4}, P(A_mart) {:.4e} vs azuma envelope {:.4e}{}, drift violations {}",
            r.confinement_frequency,
            r.a_mart_frequency,
            r.azuma_envelope,
            if r.envelope_vacuous { " (vacuous)" } else { "" },
            r.drift_violations
        ));
    }
    let speed_ok = speed_bound.as_ref().is_none_or(|r| r.confinement_ok && r.a_mart_within_envelope && r.drift_violations == 0);
    let pass = lln.as_ref().is_none_or(|r| r.pass)
        && clt.as_ref().is_none_or(|r| r.pass)
        && fclt.as_ref().is_none_or(|r| r.pass)
        && speed_ok;
    let stats = Stats { paths: l.paths, steps: l.steps, checkpoints, lln, clt, fclt, speed_bound, skipped, note: MULTIPLE_TESTING_NOTE, pass };
    out.write_json("stats.json", &stats)?;
    Ok(Outcome { pass, lines })
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "pass"
    } else {
        "FAIL"
    }
}
