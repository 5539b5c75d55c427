use std::io::Write;

use barw_core::dynamics::{burn_in_with_retries, ModelParams};
use barw_core::renorm::{
    goodness_field, mini_scale_setup, run_block_trials, BlockSetup, BracketChoice, CouplingReport, Scales, TrialPlan,
};
use serde::Serialize;

use super::{run_noise, run_seed, Outcome};
use crate::config::RunConfig;
use crate::error::CliError;
use crate::manifest::Outputs;

pub const MINI_CAVEAT: &str = "mini-scale overrides in use: scales are far below the regime of the asymptotic statements, so frequencies are a trend check only";

#[derive(Serialize)]
struct ReportLine<'a> {
    big_r: usize,
    trial: usize,
    #[serde(flatten)]
    report: &'a CouplingReport,
}

#[derive(Serialize)]
struct RadiusSummary {
    big_r: usize,
    scales: Scales,
    side: usize,
    trials: usize,
    good: usize,
    frequency: f64,
    bottoms_in_gconf: usize,
    a_spread: usize,
    a_couple: usize,
    reference_fallbacks: usize,
    good_with_items: usize,
}

#[derive(Serialize)]
struct Summary {
    caveat: Option<&'static str>,
    radii: Vec<RadiusSummary>,
    /// Good-block frequency nondecreasing in `R`.
    monotone: bool,
    /// Every good trial also passed the neighbour and agreement re-checks.
    items_hold: bool,
    goodness_density: Option<f64>,
    pass: bool,
}

fn setup_for(cfg: &RunConfig, big_r: usize, mini: bool) -> Result<BlockSetup, CliError> {
    let m = &cfg.model;
    if mini {
        return Ok(mini_scale_setup(m.mu, m.dim, big_r)?);
    }
    let sc = cfg.section(&cfg.scales, "scales")?;
    let params = ModelParams::new_supported(m.mu, big_r, m.dim)?;
    Ok(BlockSetup::from_formulas(params, sc.s, sc.m, &sc.overrides.into(), BracketChoice::default())?)
}

pub fn run(cfg: &RunConfig, out: &mut Outputs) -> Result<Outcome, CliError> {
    let b = cfg.section(&cfg.block, "block")?;
    let mut radii = b.radii.clone().unwrap_or_else(|| vec![cfg.model.radius]);
    radii.sort_unstable();
    let seed = run_seed(cfg, 0xb10c);
    let mut lines = Vec::new();
    if b.mini {
        lines.push(format!("note: {MINI_CAVEAT}"));
    }
    let mut summaries = Vec::new();
    let mut jsonl = Vec::new();
    let mut last_setup = None;
    for &big_r in &radii {
        let setup = setup_for(cfg, big_r, b.mini)?;
        let plan = TrialPlan { side: cfg.lattice.side.unwrap_or(0), trials: b.trials, burn_in: b.burn_in, seed };
        let t = run_block_trials(&setup, &plan)?;
        for (i, rep) in t.reports.iter().enumerate() {
            jsonl.push(serde_json::to_string(&ReportLine { big_r, trial: i, report: rep }).expect("report serialises"));
        }
        lines.push(format!("R = {big_r}: {} of {} blocks good ({:.3})", t.good, t.trials, t.frequency));
        summaries.push(RadiusSummary {
            big_r,
            scales: setup.scales.clone(),
            side: plan.side.max(setup.scales.min_side()),
            trials: t.trials,
            good: t.good,
            frequency: t.frequency,
            bottoms_in_gconf: t.bottoms_in_gconf,
            a_spread: t.a_spread,
            a_couple: t.a_couple,
            reference_fallbacks: t.reference_fallbacks,
            good_with_items: t.good_with_items,
        });
        last_setup = Some(setup);
    }
    out.write_with("reports.jsonl", |w| jsonl.iter().try_for_each(|l| writeln!(w, "{l}")))?;

    let mut goodness_density = None;
    if b.goodness_extent > 0 {
        let setup = last_setup.as_ref().expect("at least one radius");
        let sc = &setup.scales;
        let side = cfg.lattice.side.unwrap_or(0).max(sc.min_side()).max(b.goodness_extent * sc.l_s);
        let noise = run_noise(cfg);
        let initial = burn_in_with_retries(&setup.params, side, &noise.with_stream(noise.stream_id.wrapping_add(1)), b.burn_in.max(1), 5)?.config;
        let reference_noise = noise.with_stream(noise.stream_id.wrapping_add(2));
        let field = goodness_field(&initial, setup, &noise, &reference_noise, b.burn_in, b.goodness_extent, b.goodness_layers)?;
        out.write_with("goodness.csv", |w| field.write_csv(w))?;
        lines.push(format!("goodness field at R = {}: density {:.3} over {} blocks", sc.big_r, field.density(), field.entries.len()));
        goodness_density = Some(field.density());
    }

    let monotone = summaries.windows(2).all(|w| w[1].frequency >= w[0].frequency);
    let items_hold = summaries.iter().all(|s| s.good_with_items == s.good);
    let pass = monotone && items_hold;
    if radii.len() > 1 {
        lines.push(format!("trend {}", if monotone { "nondecreasing" } else { "NOT nondecreasing" }));
    }
    let summary = Summary { caveat: b.mini.then_some(MINI_CAVEAT), radii: summaries, monotone, items_hold, goodness_density, pass };
    out.write_json("summary.json", &summary)?;
    Ok(Outcome { pass, lines })
}
