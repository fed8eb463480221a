//! Per-site coefficient table and the text summary of a fit.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use esfma::aggregate::ModelKind;
use esfma::{AggregatedFit, Dataset};

use crate::data::fmt_f64;
use crate::error::CliResult;

/// `id,x,y,beta_<name>...,sigma2`, one row per site.
pub fn write_coefficients(path: &Path, ds: &Dataset, ids: &[String], fit: &AggregatedFit) -> CliResult<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let mut header = vec!["id".to_string(), "x".into(), "y".into()];
    header.extend(ds.names.iter().map(|n| format!("beta_{n}")));
    header.push("sigma2".into());
    writeln!(w, "{}", header.join(","))?;
    for i in 0..ds.n() {
        let mut row = vec![ids[i].clone(), fmt_f64(ds.sites[i][0]), fmt_f64(ds.sites[i][1])];
        row.extend((0..ds.k()).map(|k| fmt_f64(fit.beta[(i, k)])));
        row.push(fmt_f64(fit.sigma2[i]));
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Lines starting with this prefix carry wall-clock times and are the only
/// part of the summary that changes between identical runs.
pub const TIMING_PREFIX: &str = "time ";

pub struct SummaryContext<'a> {
    pub input: &'a str,
    pub scheme: &'a str,
    pub estimation_weights: &'a str,
}

pub fn summary_text(ds: &Dataset, fit: &AggregatedFit, ctx: &SummaryContext<'_>) -> String {
    let mut s = String::new();
    let n_local = fit.models.iter().filter(|m| matches!(m.kind, ModelKind::Local(_))).count();
    let n_global = fit.n_models() - n_local;
    let _ = writeln!(s, "ESF-MA fit");
    let _ = writeln!(s, "input: {} (N = {}, K = {})", ctx.input, ds.n(), ds.k());
    let _ = writeln!(
        s,
        "scheme: {}, {} local and {} global sub-models, estimation weights {}",
        ctx.scheme, n_local, n_global, ctx.estimation_weights
    );
    let _ = writeln!(s);

    let _ = writeln!(s, "Constant coefficients");
    let _ = writeln!(
        s,
        "t = estimate / posterior-weighted mean of the sub-model standard errors (approximate; no reference distribution is implied)"
    );
    if fit.constants.is_empty() {
        let _ = writeln!(s, "  (none)");
    } else {
        let _ = writeln!(s, "  {:<16} {:>14} {:>14} {:>10}", "name", "estimate", "se", "t");
        for c in &fit.constants {
            let _ = writeln!(
                s,
                "  {:<16} {:>14.6} {:>14.6} {:>10.3}",
                ds.names[c.covariate], c.estimate, c.se, c.t
            );
        }
    }
    let _ = writeln!(s);

    let _ = writeln!(s, "Varying coefficients (fused surface over sites)");
    let _ = writeln!(s, "  {:<16} {:>12} {:>12} {:>12} {:>12}", "name", "mean", "sd", "min", "max");
    for k in (0..ds.k()).filter(|&k| fit.svc[k]) {
        let col: Vec<f64> = (0..ds.n()).map(|i| fit.beta[(i, k)]).collect();
        let n = col.len() as f64;
        let mean = col.iter().sum::<f64>() / n;
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let min = col.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let _ = writeln!(s, "  {:<16} {:>12.5} {:>12.5} {:>12.5} {:>12.5}", ds.names[k], mean, sd, min, max);
    }
    let _ = writeln!(s);

    let _ = writeln!(s, "log-likelihood (sum over sub-models): {:.6}", fit.loglik);
    let _ = writeln!(s, "BIC: {:.6} ({} parameters)", fit.bic, fit.n_params);
    let _ = writeln!(s);

    let _ = writeln!(s, "Sub-models");
    let _ = writeln!(
        s,
        "  {:<8} {:>7} {:>10} {:>6} {:>12} {:>14} {:>8}",
        "model", "sites", "range", "L", "sigma2", "loglik", "conv"
    );
    for (m, f) in fit.models.iter().zip(&fit.sub_fits) {
        let name = match m.kind {
            ModelKind::Local(c) => format!("local{c}"),
            ModelKind::Global => "global".into(),
        };
        let _ = writeln!(
            s,
            "  {:<8} {:>7} {:>10.5} {:>6} {:>12.6} {:>14.4} {:>8}",
            name,
            m.support.len(),
            m.range,
            f.n_basis(),
            f.sigma2,
            f.loglik,
            if f.converged { "yes" } else { "no" }
        );
    }
    let _ = writeln!(s);

    let t = &fit.timings;
    let _ = writeln!(s, "Stage wall-clock (seconds)");
    for (name, v) in [
        ("partition", t.partition),
        ("eigen", t.eigen),
        ("fits", t.fits),
        ("fusion", t.fusion),
        ("total", t.total()),
    ] {
        let _ = writeln!(s, "{TIMING_PREFIX}{name:<10} {v:.4}");
    }
    s
}
