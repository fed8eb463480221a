//! Subcommands and their flags.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use esfma::bench::{run_bench, BenchConfig, BenchMode, BenchReport, Estimator};
use esfma::simulate::generate_scenario;
use esfma::{fit_esfma, ClusterSpec, EsfmaConfig, EstimationWeights, SimConfig, WeightScheme, WeightVariant};
use sha2::{Digest, Sha256};

use crate::archive::{save_model, FitSettings, ModelArchive, Provenance};
use crate::data::{fmt_f64, load_dataset, write_scenario, write_truth, ColumnSpec};
use crate::error::{CliError, CliResult};
use crate::report::{summary_text, write_coefficients, SummaryContext};

#[derive(Debug, Parser)]
#[command(name = "esfma", version, about = "Spatially varying coefficient regression by aggregated eigenvector spatial filtering")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit ESF-MA to a CSV dataset.
    Fit(FitArgs),
    /// Write a simulated scenario and its true coefficients.
    Simulate(SimulateArgs),
    /// Monte Carlo comparison of estimators on simulated scenarios.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WeightsArg {
    Normalized,
    Unnormalized,
}

impl WeightsArg {
    fn to_core(self) -> EstimationWeights {
        match self {
            WeightsArg::Normalized => EstimationWeights::Normalized,
            WeightsArg::Unnormalized => EstimationWeights::Unnormalized,
        }
    }

    fn name(self) -> &'static str {
        match self {
            WeightsArg::Normalized => "normalized",
            WeightsArg::Unnormalized => "unnormalized",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Varying intercept and three varying plus two constant covariates.
    Mixed,
    /// Varying intercept and three varying covariates.
    SvcOnly,
    /// As svc-only with ranges 1.0, 0.5 and 2.0.
    Multiscale,
}

impl Preset {
    fn config(self, side: usize, range: f64, seed: u64) -> SimConfig {
        match self {
            Preset::Mixed => SimConfig::mixed(side, range, seed),
            Preset::SvcOnly => SimConfig::svc_only(side, range, seed),
            Preset::Multiscale => SimConfig::multiscale(side, seed),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    /// Input CSV with a header row.
    pub input: PathBuf,
    /// Coordinate columns, `x,y`.
    #[arg(long, value_delimiter = ',', num_args = 2, default_values = ["x", "y"])]
    pub coords: Vec<String>,
    #[arg(long)]
    pub response: String,
    /// Covariate columns; an intercept is added in front.
    #[arg(long, value_delimiter = ',')]
    pub covariates: Vec<String>,
    /// Covariates with spatially varying coefficients. Others get constant
    /// coefficients; the intercept always varies. Omit to let all vary.
    #[arg(long, value_delimiter = ',')]
    pub svc: Option<Vec<String>>,
    /// `L0`, `GL0`, `L`, `GL`, `disjoint` or `overlap`.
    #[arg(long, default_value = "GL")]
    pub scheme: String,
    /// Drop the global sub-model.
    #[arg(long)]
    pub no_global: bool,
    /// Number of local clusters; overrides --target-size.
    #[arg(long)]
    pub clusters: Option<usize>,
    /// Sites per local cluster when --clusters is not given.
    #[arg(long, default_value_t = 600)]
    pub target_size: usize,
    /// Eigenvectors of the global sub-model.
    #[arg(long, default_value_t = 200)]
    pub global_l: usize,
    /// Eigenvector cap of local sub-models (default: all positive).
    #[arg(long)]
    pub local_l: Option<usize>,
    /// Overlap cutoff as a multiple of the cluster range.
    #[arg(long, default_value_t = 2.2)]
    pub threshold: f64,
    #[arg(long, value_enum, default_value_t = WeightsArg::Normalized)]
    pub estimation_weights: WeightsArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 50)]
    pub grid_side: usize,
    /// Range of the coefficient processes.
    #[arg(long, default_value_t = 1.0)]
    pub range: f64,
    #[arg(long, value_enum, default_value_t = Preset::Mixed)]
    pub preset: Preset,
    /// Set every process variance to zero.
    #[arg(long)]
    pub no_variation: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 40)]
    pub grid_side: usize,
    #[arg(long, default_value_t = 1.0)]
    pub range: f64,
    #[arg(long, value_enum, default_value_t = Preset::Mixed)]
    pub preset: Preset,
    #[arg(long, default_value_t = 10)]
    pub trials: usize,
    /// `ESF`, `ESF:<L>`, `L0`, `GL0`, `L`, `GL`.
    #[arg(long, value_delimiter = ',', default_values = ["ESF", "L0", "GL0", "L", "GL"])]
    pub estimators: Vec<String>,
    /// Target cluster sizes to sweep.
    #[arg(long, value_delimiter = ',', conflicts_with = "sweep_l")]
    pub sweep_clusters: Option<Vec<usize>>,
    /// Eigenvector counts of plain ESF to sweep.
    #[arg(long, value_delimiter = ',')]
    pub sweep_l: Option<Vec<usize>>,
    #[arg(long, default_value_t = 600)]
    pub target_size: usize,
    /// Eigenvectors of plain ESF and of the global sub-model.
    #[arg(long, default_value_t = 200)]
    pub global_l: usize,
    #[arg(long, value_enum, default_value_t = WeightsArg::Normalized)]
    pub estimation_weights: WeightsArg,
    /// First scenario seed; trial t uses seed + t.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

/// Parses `args` and runs the subcommand; returns the process exit code.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 3 } else { 0 };
        }
    };
    let result = match &cli.command {
        Command::Fit(a) => cmd_fit(a).map(|o| print!("{}", o.summary_text)),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Bench(a) => cmd_bench(a).map(|_| ()),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn scheme_from(args: &FitArgs) -> CliResult<WeightScheme> {
    let mut scheme = match args.scheme.to_ascii_lowercase().as_str() {
        "disjoint" => WeightScheme::new(WeightVariant::Disjoint, true),
        "overlap" => WeightScheme::new(WeightVariant::Overlap, true),
        other => WeightScheme::from_name(other).ok_or_else(|| {
            CliError::Config(format!("unknown scheme '{}'; use L0, GL0, L, GL, disjoint or overlap", args.scheme))
        })?,
    };
    if args.no_global {
        scheme.include_global = false;
    }
    scheme.threshold_factor = args.threshold;
    Ok(scheme)
}

fn svc_flags(args: &FitArgs) -> CliResult<Vec<bool>> {
    let mut flags = vec![true];
    match &args.svc {
        None => flags.extend(args.covariates.iter().map(|_| true)),
        Some(list) => {
            if let Some(bad) = list.iter().find(|s| !args.covariates.contains(s)) {
                return Err(CliError::Config(format!("--svc names '{bad}', which is not in --covariates")));
            }
            flags.extend(args.covariates.iter().map(|c| list.contains(c)));
        }
    }
    Ok(flags)
}

fn file_sha256(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Paths written by `fit`.
#[derive(Debug, Clone)]
pub struct FitOutputs {
    pub coefficients: PathBuf,
    pub archive: PathBuf,
    pub summary: PathBuf,
    pub summary_text: String,
}

pub fn cmd_fit(args: &FitArgs) -> CliResult<FitOutputs> {
    if args.coords.len() != 2 {
        return Err(CliError::Config("--coords takes exactly two column names".into()));
    }
    let scheme = scheme_from(args)?;
    let svc = svc_flags(args)?;
    let spec = ColumnSpec {
        x: args.coords[0].clone(),
        y: args.coords[1].clone(),
        response: args.response.clone(),
        covariates: args.covariates.clone(),
    };
    let loaded = load_dataset(&args.input, &spec)?;
    eprintln!("{}", loaded.report);
    let config = EsfmaConfig {
        clusters: match args.clusters {
            Some(c) => ClusterSpec::Count(c),
            None => ClusterSpec::TargetSize(args.target_size),
        },
        scheme,
        estimation_weights: args.estimation_weights.to_core(),
        global_l: args.global_l,
        local_l: args.local_l,
        svc: Some(svc.clone()),
        seed: args.seed,
        workers: args.workers,
        ..EsfmaConfig::default()
    };
    let ds = &loaded.dataset;
    let fit = fit_esfma(ds, &config)?;

    fs::create_dir_all(&args.out)?;
    let mut outputs = FitOutputs {
        coefficients: args.out.join("coefficients.csv"),
        archive: args.out.join("model.archive"),
        summary: args.out.join("summary.txt"),
        summary_text: String::new(),
    };
    write_coefficients(&outputs.coefficients, ds, &loaded.ids, &fit)?;

    let settings = FitSettings {
        input: args.input.display().to_string(),
        coords: [spec.x.clone(), spec.y.clone()],
        response: spec.response.clone(),
        covariates: spec.covariates.clone(),
        svc,
        scheme: scheme.name().into(),
        overlap: scheme.variant == WeightVariant::Overlap,
        include_global: scheme.include_global,
        threshold_factor: scheme.threshold_factor,
        clusters: args.clusters,
        target_size: args.target_size,
        global_l: args.global_l,
        local_l: args.local_l,
        estimation_weights: args.estimation_weights.name().into(),
        seed: args.seed,
    };
    let provenance = Provenance {
        software: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: args.seed,
        input_sha256: Some(file_sha256(&args.input)?),
    };
    let archive = ModelArchive::from_fit(&fit, settings, provenance, &loaded.ids, &ds.sites, &ds.names);
    save_model(&archive, &outputs.archive)?;

    let input = args.input.display().to_string();
    let text = summary_text(
        ds,
        &fit,
        &SummaryContext {
            input: &input,
            scheme: scheme.name(),
            estimation_weights: args.estimation_weights.name(),
        },
    );
    fs::write(&outputs.summary, &text)?;
    outputs.summary_text = text;
    Ok(outputs)
}

pub fn cmd_simulate(args: &SimulateArgs) -> CliResult<()> {
    let mut config = args.preset.config(args.grid_side, args.range, args.seed);
    if args.no_variation {
        config = config.without_variation();
    }
    let truth = generate_scenario(&config)?;
    fs::create_dir_all(&args.out)?;
    let scenario = args.out.join("scenario.csv");
    let truth_path = args.out.join("truth.csv");
    write_scenario(&truth, &scenario)?;
    write_truth(&truth, &truth_path)?;
    let covs: Vec<&str> = truth.dataset.names.iter().skip(1).map(|s| s.as_str()).collect();
    let svc: Vec<&str> = covs.iter().enumerate().filter(|(j, _)| truth.svc[j + 1]).map(|(_, s)| *s).collect();
    println!(
        "wrote {} rows to {} and {}",
        truth.dataset.n(),
        scenario.display(),
        truth_path.display()
    );
    println!("fit with: --response response --covariates {} --svc {}", covs.join(","), svc.join(","));
    Ok(())
}

pub fn cmd_bench(args: &BenchArgs) -> CliResult<BenchReport> {
    let scenario = args.preset.config(args.grid_side, args.range, args.seed);
    let estimators = args
        .estimators
        .iter()
        .map(|s| {
            Estimator::parse(s, args.global_l).ok_or_else(|| CliError::Config(format!("unknown estimator '{s}'")))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let mut config = BenchConfig::new(scenario, estimators, args.trials);
    config.mode = match (&args.sweep_clusters, &args.sweep_l) {
        (Some(s), _) => BenchMode::ClusterSweep(s.clone()),
        (None, Some(l)) => BenchMode::LSweep(l.clone()),
        (None, None) => BenchMode::Standard,
    };
    config.target_size = args.target_size;
    config.global_l = args.global_l;
    config.estimation_weights = args.estimation_weights.to_core();
    config.seed = args.seed;
    config.workers = args.workers;
    let report = run_bench(&config)?;
    fs::create_dir_all(&args.out)?;
    let path = args.out.join("bench.csv");
    write_bench_csv(&report, &path)?;
    for s in &report.summary {
        let rmse: Vec<String> = s.mean_rmse.iter().map(|v| format!("{v:.4}")).collect();
        println!(
            "{:<12} {:<14} trials {:>3} failed {:>2} time {:>8.3}s rmse [{}]",
            s.block,
            s.estimator,
            s.trials,
            s.failures,
            s.mean_seconds,
            rmse.join(", ")
        );
    }
    println!("wrote {}", path.display());
    Ok(report)
}

/// `row` is `trial` for single trials and `mean` for the per-block
/// averages over successful trials.
pub fn write_bench_csv(report: &BenchReport, path: &Path) -> CliResult<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let mut header: Vec<String> = ["row", "block", "estimator", "trial", "seed", "seconds", "setup_seconds", "failures", "error"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(report.coefficient_names.iter().map(|n| format!("rmse_{n}")));
    header.extend(report.coefficient_names.iter().map(|n| format!("mae_{n}")));
    writeln!(w, "{}", header.join(","))?;
    let k = report.coefficient_names.len();
    let blank = || vec![String::new(); k];
    for t in &report.trials {
        let mut row = vec![
            "trial".to_string(),
            t.block.clone(),
            t.estimator.clone(),
            t.trial.to_string(),
            t.seed.to_string(),
            fmt_f64(t.seconds),
            String::new(),
            String::new(),
            t.error.as_deref().map(csv_text).unwrap_or_default(),
        ];
        if t.error.is_some() {
            row.extend(blank());
            row.extend(blank());
        } else {
            row.extend(t.rmse.iter().map(|&v| fmt_f64(v)));
            row.extend(t.mae.iter().map(|&v| fmt_f64(v)));
        }
        writeln!(w, "{}", row.join(","))?;
    }
    for s in &report.summary {
        let mut row = vec![
            "mean".to_string(),
            s.block.clone(),
            s.estimator.clone(),
            String::new(),
            String::new(),
            fmt_f64(s.mean_seconds),
            fmt_f64(s.setup_seconds),
            s.failures.to_string(),
            String::new(),
        ];
        if s.mean_rmse.len() == k {
            row.extend(s.mean_rmse.iter().map(|&v| fmt_f64(v)));
            row.extend(s.mean_mae.iter().map(|&v| fmt_f64(v)));
        } else {
            row.extend(blank());
            row.extend(blank());
        }
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

fn csv_text(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\"").replace(['\n', '\r'], " "))
}
