use barw_core::dynamics::ModelParams;
use barw_core::profiles::{
    bernstein_bound, certify_cdp, estimate_uk_probability, find_cdp_params, search_profile, search_sequence, BernsteinBound,
    CdpReport, CdpSearch, UkEstimate,
};
use barw_core::Point;
use serde::Serialize;

use super::{run_noise, Outcome};
use crate::config::RunConfig;
use crate::error::CliError;
use crate::manifest::Outputs;

/// Violations echoed to the terminal per radius.
const LISTED: usize = 10;

#[derive(Serialize)]
struct Tuple {
    s: f64,
    w: f64,
    eps0: f64,
    delta0: f64,
}

#[derive(Serialize)]
struct UkCheck {
    k: usize,
    estimate: UkEstimate,
    /// Failure frequency within the Bernstein bound plus 3 sigma, or the bound is vacuous.
    consistent: bool,
}

#[derive(Serialize)]
struct RadiusReport {
    r: usize,
    report: CdpReport,
    bernstein: BernsteinBound,
    uk: Vec<UkCheck>,
}

#[derive(Serialize)]
struct Certification {
    mu: f64,
    dim: usize,
    big_r: usize,
    r_max: usize,
    k0: usize,
    m0: usize,
    eps_fp: f64,
    search_tried: Option<usize>,
    params: Option<Tuple>,
    radii: Vec<RadiusReport>,
    pass: bool,
}

pub fn run(cfg: &RunConfig, out: &mut Outputs) -> Result<Outcome, CliError> {
    let c = cfg.section(&cfg.certify, "certify")?;
    let m = &cfg.model;
    ModelParams::new_supported(m.mu, m.radius, m.dim)?;
    let mut search = CdpSearch::new(m.mu, m.dim, c.radii.clone(), m.radius, c.r_max);
    search.k0 = c.k0;
    search.alpha1 = c.alpha1;
    search.beta1 = c.beta1;
    search.slack = c.slack;
    search.contraction_margin = c.contraction_margin;
    search.m_max = c.m_max;
    let (seq, m0, eps_fp) = search_sequence(&search)?;

    let mut lines = Vec::new();
    let (tuple, tried) = if c.search {
        let found = find_cdp_params(&search)?;
        lines.push(format!("search tried {} tuples", found.tried));
        (found.found.map(|p| Tuple { s: p.s, w: p.w, eps0: p.eps0, delta0: p.delta0 }), Some(found.tried))
    } else {
        let need = |v: Option<f64>, key: &str| v.ok_or_else(|| CliError::Config(format!("missing key certify.{key} (or set certify.search = true)")));
        (Some(Tuple { s: need(c.s, "s")?, w: need(c.w, "w")?, eps0: need(c.eps0, "eps0")?, delta0: need(c.delta0, "delta0")? }), None)
    };

    let mut radii = Vec::new();
    if let Some(t) = &tuple {
        let noise = run_noise(cfg);
        for &r in &c.radii {
            let profile = search_profile(&search, &seq, m0, r, t.s, t.w, t.eps0)?;
            let report = certify_cdp(&profile, m.mu, t.eps0, t.delta0);
            let bernstein = bernstein_bound(t.eps0, t.delta0, r, m.dim)?;
            let mut uk = Vec::new();
            if c.uk_trials > 0 {
                for k in [0, c.k0 / 2, c.k0 - 1] {
                    let estimate = estimate_uk_probability(&profile, m.mu, k, &Point::ORIGIN, c.uk_trials, &noise.with_stream(noise.stream_id ^ r as u64))?;
                    let consistent = bernstein.vacuous || estimate.estimate >= 1.0 - bernstein.value - estimate.band;
                    uk.push(UkCheck { k, estimate, consistent });
                }
            }
            lines.push(format!(
                "r = {r}: {} (min margin {:.3e}, {} violations; bernstein bound {:.3e}{})",
                if report.pass { "certified" } else { "NOT certified" },
                report.min_margin,
                report.violation_count,
                bernstein.value,
                if bernstein.vacuous { ", vacuous" } else { "" }
            ));
            for v in report.violations.iter().take(LISTED) {
                lines.push(format!("  violation k = {} x = {:?} {:?} margin {:.3e}", v.k, v.x, v.condition, v.margin));
            }
            radii.push(RadiusReport { r, report, bernstein, uk });
        }
    } else {
        lines.push("no parameter tuple certifies every radius".into());
    }
    let pass = tuple.is_some() && radii.iter().all(|r| r.report.pass && r.uk.iter().all(|u| u.consistent));
    let cert = Certification {
        mu: m.mu,
        dim: m.dim,
        big_r: m.radius,
        r_max: c.r_max,
        k0: c.k0,
        m0,
        eps_fp,
        search_tried: tried,
        params: tuple,
        radii,
        pass,
    };
    out.write_json("certify.json", &cert)?;
    Ok(Outcome { pass, lines })
}
