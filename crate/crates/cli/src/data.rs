//! CSV ingestion and export.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use esfma::simulate::SimTruth;
use esfma::{Coord, Dataset, Mat};

use crate::error::{CliError, CliResult};

/// Name given to the auto-prepended intercept column.
pub const INTERCEPT: &str = "intercept";

/// Which CSV columns hold what.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnSpec {
    pub x: String,
    pub y: String,
    pub response: String,
    pub covariates: Vec<String>,
}

impl ColumnSpec {
    pub fn new(x: &str, y: &str, response: &str, covariates: &[&str]) -> Self {
        Self {
            x: x.into(),
            y: y.into(),
            response: response.into(),
            covariates: covariates.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LoadedData {
    pub dataset: Dataset,
    /// Values of the `id` column, or 1-based row numbers when there is none.
    pub ids: Vec<String>,
    /// Human-readable account of rows read and columns used.
    pub report: String,
}

/// Formats a float with 17 significant digits, enough to round-trip.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Reads a headed CSV. Covariate columns follow an auto-prepended
/// intercept; row numbers in errors count data rows from 1.
pub fn load_dataset(path: &Path, spec: &ColumnSpec) -> CliResult<LoadedData> {
    let file = File::open(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| -> CliResult<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            CliError::Input(format!(
                "column '{name}' not found; available: {}",
                headers.iter().collect::<Vec<_>>().join(", ")
            ))
        })
    };
    if spec.covariates.iter().any(|c| c == INTERCEPT) {
        return Err(CliError::Config(format!("'{INTERCEPT}' is added automatically; do not list it")));
    }
    let ix = find(&spec.x)?;
    let iy = find(&spec.y)?;
    let ir = find(&spec.response)?;
    let ic = spec.covariates.iter().map(|c| find(c)).collect::<CliResult<Vec<_>>>()?;
    let id_col = headers.iter().position(|h| h == "id");

    let mut sites: Vec<Coord> = Vec::new();
    let mut response = Vec::new();
    let mut cov: Vec<Vec<f64>> = Vec::new();
    let mut ids = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let row = r + 1;
        let rec = rec.map_err(|e| CliError::Input(format!("row {row}: {e}")))?;
        let num = |col: usize| -> CliResult<f64> {
            let raw = rec.get(col).unwrap_or("");
            raw.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                CliError::Input(format!("row {row}, column '{}': cannot read '{raw}' as a number", &headers[col]))
            })
        };
        sites.push([num(ix)?, num(iy)?]);
        response.push(num(ir)?);
        cov.push(ic.iter().map(|&c| num(c)).collect::<CliResult<Vec<_>>>()?);
        ids.push(match id_col {
            Some(c) => rec.get(c).unwrap_or("").to_string(),
            None => row.to_string(),
        });
    }
    let n = sites.len();
    if n < 2 {
        return Err(CliError::Input(format!("{}: need at least 2 data rows, got {n}", path.display())));
    }
    let k = spec.covariates.len() + 1;
    let x = Mat::from_fn(n, k, |i, j| if j == 0 { 1.0 } else { cov[i][j - 1] });
    let mut names = vec![INTERCEPT.to_string()];
    names.extend(spec.covariates.iter().cloned());
    let dataset = Dataset::new(sites, response, x, names)?;

    let mut report = format!(
        "read {n} rows from {}: coordinates ({}, {}), response {}, covariates {INTERCEPT} (added)",
        path.display(),
        spec.x,
        spec.y,
        spec.response
    );
    for c in &spec.covariates {
        report.push_str(", ");
        report.push_str(c);
    }
    report.push_str(match id_col {
        Some(_) => "; ids from column 'id'",
        None => "; ids are row numbers",
    });
    Ok(LoadedData { dataset, ids, report })
}

/// Writes `id,x,y,response,<covariates>` for a simulated scenario.
pub fn write_scenario(truth: &SimTruth, path: &Path) -> CliResult<()> {
    let ds = &truth.dataset;
    let mut w = BufWriter::new(File::create(path)?);
    let mut header = vec!["id".to_string(), "x".into(), "y".into(), "response".into()];
    header.extend(ds.names.iter().skip(1).cloned());
    writeln!(w, "{}", header.join(","))?;
    for i in 0..ds.n() {
        let mut row = vec![(i + 1).to_string(), fmt_f64(ds.sites[i][0]), fmt_f64(ds.sites[i][1]), fmt_f64(ds.y[i])];
        row.extend((1..ds.k()).map(|j| fmt_f64(ds.x[(i, j)])));
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `id,beta_<name>...` with the true coefficients.
pub fn write_truth(truth: &SimTruth, path: &Path) -> CliResult<()> {
    let ds = &truth.dataset;
    let mut w = BufWriter::new(File::create(path)?);
    let mut header = vec!["id".to_string()];
    header.extend(ds.names.iter().map(|n| format!("beta_{n}")));
    writeln!(w, "{}", header.join(","))?;
    for i in 0..ds.n() {
        let mut row = vec![(i + 1).to_string()];
        row.extend((0..ds.k()).map(|j| fmt_f64(truth.beta[(i, j)])));
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}
