//! Monte Carlo comparison of plain ESF and ESF-MA variants on simulated
//! scenarios.
//!
//! Sites are the same grid in every trial, so partitions, weights and
//! eigenbases are built once per block and estimator and reused; per-trial
//! time covers the sub-model fits and fusion only.

use crate::clock::Stopwatch;

use serde::{Deserialize, Serialize};

use crate::aggregate::{ClusterSpec, EsfmaConfig, EsfmaPlan, EstimationWeights, ReesfPlan, WeightScheme};
use crate::basis::BasisOptions;
use crate::estimator::FitOptions;
use crate::simulate::{generate_scenario, grid_sites, score, SimConfig};
use crate::{AggregatedFit, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Estimator {
    /// Plain random-effects ESF with the `l` leading eigenvectors.
    Esf { l: usize },
    Esfma { scheme: WeightScheme },
}

impl Estimator {
    pub fn name(&self) -> String {
        match self {
            Estimator::Esf { l } => format!("ESF(L={l})"),
            Estimator::Esfma { scheme } => format!("ESF-MA_{}", scheme.name()),
        }
    }

    /// `ESF`, `ESF:<L>`, or one of the ESF-MA variant names.
    pub fn parse(s: &str, default_l: usize) -> Option<Self> {
        let t = s.trim();
        let up = t.to_ascii_uppercase();
        if up == "ESF" {
            return Some(Estimator::Esf { l: default_l });
        }
        if let Some(rest) = up.strip_prefix("ESF:") {
            return rest.parse().ok().filter(|&l| l > 0).map(|l| Estimator::Esf { l });
        }
        let v = up.strip_prefix("ESF-MA_").unwrap_or(&up);
        WeightScheme::from_name(v).map(|scheme| Estimator::Esfma { scheme })
    }

    /// The four ESF-MA variants.
    pub fn esfma_variants() -> Vec<Estimator> {
        [WeightScheme::l0(), WeightScheme::gl0(), WeightScheme::l(), WeightScheme::gl()]
            .into_iter()
            .map(|scheme| Estimator::Esfma { scheme })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BenchMode {
    /// Every estimator once per trial.
    Standard,
    /// ESF-MA estimators at each target cluster size; ESF is run once.
    ClusterSweep(Vec<usize>),
    /// Plain ESF at each eigenvector count; ESF-MA estimators are skipped.
    LSweep(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    /// Scenario template; trial `t` uses seed `scenario.seed + t`.
    pub scenario: SimConfig,
    pub estimators: Vec<Estimator>,
    pub trials: usize,
    pub mode: BenchMode,
    pub target_size: usize,
    pub global_l: usize,
    pub estimation_weights: EstimationWeights,
    /// Seed of the k-means partition.
    pub seed: u64,
    pub workers: usize,
    pub fit: FitOptions,
    pub basis: BasisOptions,
}

impl BenchConfig {
    pub fn new(scenario: SimConfig, estimators: Vec<Estimator>, trials: usize) -> Self {
        Self {
            scenario,
            estimators,
            trials,
            mode: BenchMode::Standard,
            target_size: 600,
            global_l: 200,
            estimation_weights: EstimationWeights::Normalized,
            seed: 0,
            workers: 1,
            fit: FitOptions::default(),
            basis: BasisOptions::default(),
        }
    }
}

/// One estimator on one simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub block: String,
    pub estimator: String,
    pub trial: usize,
    pub seed: u64,
    pub rmse: Vec<f64>,
    pub mae: Vec<f64>,
    pub seconds: f64,
    pub error: Option<String>,
}

/// Means over the successful trials of one block and estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub block: String,
    pub estimator: String,
    pub trials: usize,
    pub failures: usize,
    pub mean_rmse: Vec<f64>,
    pub mean_mae: Vec<f64>,
    pub mean_seconds: f64,
    /// One-off time for partition, weights and eigenbases.
    pub setup_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub coefficient_names: Vec<String>,
    pub trials: Vec<TrialResult>,
    pub summary: Vec<BenchSummary>,
}

enum Prepared {
    Esf(ReesfPlan),
    Esfma(EsfmaPlan),
}

impl Prepared {
    fn fit(&self, truth: &crate::SimTruth, fit: &FitOptions) -> Result<AggregatedFit> {
        match self {
            Prepared::Esf(p) => p.fit(&truth.dataset, Some(&truth.svc), fit),
            Prepared::Esfma(p) => p.fit(&truth.dataset),
        }
    }
}

struct Job {
    block: String,
    estimator: String,
    plan: std::result::Result<Prepared, String>,
    setup: f64,
}

pub fn run_bench(config: &BenchConfig) -> Result<BenchReport> {
    config.scenario.validate()?;
    if config.trials == 0 {
        return Err(Error::Config("at least one trial is required".into()));
    }
    if config.estimators.is_empty() {
        return Err(Error::Config("no estimators selected".into()));
    }
    let sites = grid_sites(config.scenario.grid_side);
    let svc = config.scenario.svc_flags();
    let esfma_config = |scheme: WeightScheme, size: usize| EsfmaConfig {
        clusters: ClusterSpec::TargetSize(size),
        scheme,
        estimation_weights: config.estimation_weights,
        global_l: config.global_l,
        local_l: None,
        svc: Some(svc.clone()),
        seed: config.seed,
        workers: config.workers,
        fit: config.fit.clone(),
        basis: config.basis,
    };
    let timed = |f: &dyn Fn() -> Result<Prepared>| {
        let t = Stopwatch::start();
        let p = f().map_err(|e| e.to_string());
        (p, t.seconds())
    };

    let mut jobs = Vec::new();
    match &config.mode {
        BenchMode::Standard => {
            for est in &config.estimators {
                let (plan, setup) = match est {
                    Estimator::Esf { l } => timed(&|| Ok(Prepared::Esf(ReesfPlan::new(&sites, Some(*l), &config.basis)?))),
                    Estimator::Esfma { scheme } => timed(&|| {
                        Ok(Prepared::Esfma(EsfmaPlan::new(&sites, &esfma_config(*scheme, config.target_size))?))
                    }),
                };
                jobs.push(Job {
                    block: String::new(),
                    estimator: est.name(),
                    plan,
                    setup,
                });
            }
        }
        BenchMode::ClusterSweep(sizes) => {
            for est in &config.estimators {
                match est {
                    Estimator::Esf { l } => {
                        let (plan, setup) =
                            timed(&|| Ok(Prepared::Esf(ReesfPlan::new(&sites, Some(*l), &config.basis)?)));
                        jobs.push(Job {
                            block: String::new(),
                            estimator: est.name(),
                            plan,
                            setup,
                        });
                    }
                    Estimator::Esfma { scheme } => {
                        for &size in sizes {
                            let (plan, setup) =
                                timed(&|| Ok(Prepared::Esfma(EsfmaPlan::new(&sites, &esfma_config(*scheme, size))?)));
                            jobs.push(Job {
                                block: format!("Nc={size}"),
                                estimator: est.name(),
                                plan,
                                setup,
                            });
                        }
                    }
                }
            }
        }
        BenchMode::LSweep(ls) => {
            let max_l = ls.iter().copied().max().unwrap_or(1);
            let (full, setup) = {
                let t = Stopwatch::start();
                let p = ReesfPlan::new(&sites, Some(max_l), &config.basis);
                (p, t.seconds())
            };
            for &l in ls {
                let plan = match &full {
                    Ok(p) => Ok(Prepared::Esf(p.truncated(l))),
                    Err(e) => Err(e.to_string()),
                };
                jobs.push(Job {
                    block: format!("L={l}"),
                    estimator: Estimator::Esf { l }.name(),
                    plan,
                    setup,
                });
            }
        }
    }

    let k = config.scenario.n_svc() + config.scenario.n_constant();
    let mut trials = Vec::new();
    let mut names = None;
    for t in 0..config.trials {
        let seed = config.scenario.seed.wrapping_add(t as u64);
        let scenario = SimConfig {
            seed,
            ..config.scenario.clone()
        };
        let truth = generate_scenario(&scenario)?;
        if names.is_none() {
            names = Some(truth.dataset.names.clone());
        }
        for job in &jobs {
            let mut row = TrialResult {
                block: job.block.clone(),
                estimator: job.estimator.clone(),
                trial: t,
                seed,
                rmse: vec![f64::NAN; k],
                mae: vec![f64::NAN; k],
                seconds: f64::NAN,
                error: None,
            };
            match &job.plan {
                Err(e) => row.error = Some(e.clone()),
                Ok(plan) => {
                    let t0 = Stopwatch::start();
                    match plan.fit(&truth, &config.fit).and_then(|f| score(&f.beta, &truth.beta)) {
                        Ok(s) => {
                            row.seconds = t0.seconds();
                            row.rmse = s.rmse;
                            row.mae = s.mae;
                        }
                        Err(e) => row.error = Some(e.to_string()),
                    }
                }
            }
            trials.push(row);
        }
    }

    let summary = jobs
        .iter()
        .map(|job| {
            let rows: Vec<&TrialResult> = trials
                .iter()
                .filter(|r| r.block == job.block && r.estimator == job.estimator)
                .collect();
            let ok: Vec<&&TrialResult> = rows.iter().filter(|r| r.error.is_none()).collect();
            let m = ok.len().max(1) as f64;
            let mean_of = |f: &dyn Fn(&TrialResult) -> &Vec<f64>| -> Vec<f64> {
                (0..k)
                    .map(|j| if ok.is_empty() { f64::NAN } else { ok.iter().map(|r| f(r)[j]).sum::<f64>() / m })
                    .collect()
            };
            BenchSummary {
                block: job.block.clone(),
                estimator: job.estimator.clone(),
                trials: rows.len(),
                failures: rows.len() - ok.len(),
                mean_rmse: mean_of(&|r| &r.rmse),
                mean_mae: mean_of(&|r| &r.mae),
                mean_seconds: if ok.is_empty() { f64::NAN } else { ok.iter().map(|r| r.seconds).sum::<f64>() / m },
                setup_seconds: job.setup,
            }
        })
        .collect();

    Ok(BenchReport {
        coefficient_names: names.unwrap_or_default(),
        trials,
        summary,
    })
}
