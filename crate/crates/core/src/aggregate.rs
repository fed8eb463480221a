//! ESF-MA: prior weights over local clusters and an optional global
//! model, independent sub-model fits, and product-of-experts fusion.

use crate::clock::Stopwatch;

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::basis::{connectivity_from_sites, moran_basis, BasisOptions, ConnectivityConfig, MoranBasis};
use crate::estimator::{build_design, fit_submodel, predict_sub_svc, FitOptions, SubModelFit};
use crate::geometry::{choose_cluster_count, dist, kmeans_partition, mst_range, ClusterPartition, Coord, Dataset};
use crate::{Error, Result};

/// Prior weight form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightVariant {
    /// Weight 1 inside the cluster, 0 elsewhere.
    Disjoint,
    /// `exp(-d / r_c)` from the nearest cluster member, cut off at
    /// `threshold_factor * r_c`.
    Overlap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightScheme {
    pub variant: WeightVariant,
    pub threshold_factor: f64,
    pub include_global: bool,
}

impl WeightScheme {
    pub fn new(variant: WeightVariant, include_global: bool) -> Self {
        Self {
            variant,
            threshold_factor: 2.2,
            include_global,
        }
    }

    /// Local sub-models only, no overlap.
    pub fn l0() -> Self {
        Self::new(WeightVariant::Disjoint, false)
    }

    /// Global plus local, no overlap.
    pub fn gl0() -> Self {
        Self::new(WeightVariant::Disjoint, true)
    }

    /// Local sub-models with overlap.
    pub fn l() -> Self {
        Self::new(WeightVariant::Overlap, false)
    }

    /// Global plus overlapping local sub-models.
    pub fn gl() -> Self {
        Self::new(WeightVariant::Overlap, true)
    }

    /// Parses `L0`, `GL0`, `L` or `GL` (case-insensitive).
    pub fn from_name(name: &str) -> Option<Self> {
        match name.to_ascii_uppercase().as_str() {
            "L0" => Some(Self::l0()),
            "GL0" => Some(Self::gl0()),
            "L" => Some(Self::l()),
            "GL" => Some(Self::gl()),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match (self.variant, self.include_global) {
            (WeightVariant::Disjoint, false) => "L0",
            (WeightVariant::Disjoint, true) => "GL0",
            (WeightVariant::Overlap, false) => "L",
            (WeightVariant::Overlap, true) => "GL",
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.threshold_factor > 0.0 && self.threshold_factor.is_finite()) {
            return Err(Error::Config(format!(
                "threshold factor must be positive, got {}",
                self.threshold_factor
            )));
        }
        Ok(())
    }
}

impl Default for WeightScheme {
    fn default() -> Self {
        Self::gl()
    }
}

/// Row-normalized prior weights, stored sparsely both ways.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    /// Per site: `(model, weight)` with positive weight, by model index.
    pub rows: Vec<Vec<(usize, f64)>>,
    /// Per model: `(site, weight)` with positive weight, by site index.
    pub columns: Vec<Vec<(usize, f64)>>,
    /// Per model: `W_c`, the column sum.
    pub totals: Vec<f64>,
    /// Per site: the row sum before normalization.
    pub row_sums: Vec<f64>,
}

impl WeightMatrix {
    /// Normalizes unnormalized rows and builds the column view.
    pub fn from_unnormalized(rows: Vec<Vec<(usize, f64)>>, n_models: usize) -> Result<Self> {
        let mut norm_rows = Vec::with_capacity(rows.len());
        let mut row_sums = Vec::with_capacity(rows.len());
        for (i, mut row) in rows.into_iter().enumerate() {
            row.retain(|&(_, w)| w > 0.0);
            row.sort_by_key(|&(c, _)| c);
            let s: f64 = row.iter().map(|&(_, w)| w).sum();
            if !(s > 0.0) {
                return Err(Error::Coverage { site: i });
            }
            if row.iter().any(|&(c, _)| c >= n_models) {
                return Err(Error::Dimension(format!("site {i} references a model beyond {n_models}")));
            }
            row_sums.push(s);
            norm_rows.push(row.into_iter().map(|(c, w)| (c, w / s)).collect::<Vec<_>>());
        }
        let mut columns = vec![Vec::new(); n_models];
        for (i, row) in norm_rows.iter().enumerate() {
            for &(c, w) in row {
                columns[c].push((i, w));
            }
        }
        let totals = columns.iter().map(|col| col.iter().map(|&(_, w)| w).sum()).collect();
        Ok(Self {
            rows: norm_rows,
            columns,
            totals,
            row_sums,
        })
    }

    pub fn n_sites(&self) -> usize {
        self.rows.len()
    }

    /// Column `c` as `(site, weight)` pairs, either normalized or with the
    /// row normalization undone.
    pub fn column(&self, c: usize, kind: EstimationWeights) -> Vec<(usize, f64)> {
        match kind {
            EstimationWeights::Normalized => self.columns[c].clone(),
            EstimationWeights::Unnormalized => self.columns[c].iter().map(|&(i, w)| (i, w * self.row_sums[i])).collect(),
        }
    }

    pub fn n_models(&self) -> usize {
        self.columns.len()
    }

    /// Dense row `i`.
    pub fn row(&self, i: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n_models()];
        for &(c, w) in &self.rows[i] {
            out[c] = w;
        }
        out
    }

    /// Sites with positive weight in model `c`.
    pub fn support(&self, c: usize) -> Vec<usize> {
        self.columns[c].iter().map(|&(i, _)| i).collect()
    }
}

/// Prior weights for the clusters of `partition` (models `0..C-1`) and,
/// if enabled, the global model (index `C-1`). `ranges[c]` is the kernel
/// range of cluster `c`.
pub fn prior_weights(
    partition: &ClusterPartition,
    sites: &[Coord],
    ranges: &[f64],
    scheme: &WeightScheme,
) -> Result<WeightMatrix> {
    scheme.validate()?;
    let n = sites.len();
    let nc = partition.n_clusters();
    if partition.assignments.len() != n {
        return Err(Error::Dimension(format!(
            "partition covers {} sites, expected {n}",
            partition.assignments.len()
        )));
    }
    if ranges.len() != nc {
        return Err(Error::Dimension(format!("{} ranges for {nc} clusters", ranges.len())));
    }
    if let Some(r) = ranges.iter().find(|r| !(**r > 0.0 && r.is_finite())) {
        return Err(Error::Input(format!("cluster range must be positive, got {r}")));
    }
    let mut rows: Vec<Vec<(usize, f64)>> = partition.assignments.iter().map(|&c| vec![(c, 1.0)]).collect();
    if scheme.variant == WeightVariant::Overlap {
        let members = partition.members();
        for (c, mem) in members.iter().enumerate() {
            if mem.is_empty() {
                continue;
            }
            let cutoff = scheme.threshold_factor * ranges[c];
            let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
            for &j in mem {
                for a in 0..2 {
                    lo[a] = lo[a].min(sites[j][a]);
                    hi[a] = hi[a].max(sites[j][a]);
                }
            }
            for i in 0..n {
                if partition.assignments[i] == c {
                    continue;
                }
                let s = sites[i];
                if s[0] < lo[0] - cutoff || s[0] > hi[0] + cutoff || s[1] < lo[1] - cutoff || s[1] > hi[1] + cutoff {
                    continue;
                }
                let d = mem.iter().map(|&j| dist(&s, &sites[j])).fold(f64::INFINITY, f64::min);
                if d <= cutoff {
                    rows[i].push((c, (-d / ranges[c]).exp()));
                }
            }
        }
    }
    if scheme.include_global {
        for row in rows.iter_mut() {
            row.push((nc, 1.0));
        }
    }
    WeightMatrix::from_unnormalized(rows, partition.n_models(scheme.include_global))
}

/// `w_c / sigma2_c`, not renormalized.
pub fn posterior_weights(prior: &[f64], sigma2: &[f64]) -> Result<Vec<f64>> {
    if prior.len() != sigma2.len() {
        return Err(Error::Dimension(format!("{} weights, {} variances", prior.len(), sigma2.len())));
    }
    if let Some(s) = sigma2.iter().find(|s| !(**s > 0.0)) {
        return Err(Error::Input(format!("noise variance must be positive, got {s}")));
    }
    Ok(prior.iter().zip(sigma2).map(|(w, s)| w / s).collect())
}

/// Posterior-weighted mean of the sub-model values at one site. A single
/// contributing model is returned exactly.
pub fn aggregate_svc(values: &[f64], posterior: &[f64]) -> Option<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    let mut count = 0;
    let mut last = 0.0;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (v, w) in values.iter().zip(posterior) {
        if *w > 0.0 {
            num += w * v;
            den += w;
            count += 1;
            last = *v;
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
    }
    // The clamp only removes round-off that would leave the convex hull.
    match count {
        0 => None,
        1 => Some(last),
        _ => Some((num / den).clamp(lo, hi)),
    }
}

/// Fused noise variance `(sum_c w_c / sigma2_c)^-1` at one site.
pub fn aggregate_variance(prior: &[f64], sigma2: &[f64]) -> Option<f64> {
    let precision: f64 = prior.iter().zip(sigma2).filter(|(w, _)| **w > 0.0).map(|(w, s)| w / s).sum();
    (precision > 0.0).then(|| 1.0 / precision)
}

/// Fused constant coefficient `k`: the average of the `b_{k,c}` weighted by
/// each model's total posterior mass `W_c / sigma2_c`.
pub fn aggregate_constant(fits: &[SubModelFit], weights: &WeightMatrix, k: usize) -> Result<f64> {
    let (num, den) = constant_masses(fits, weights, k)?
        .into_iter()
        .fold((0.0, 0.0), |(n, d), (b, m)| (n + b * m, d + m));
    if !(den > 0.0) {
        return Err(Error::Coverage { site: 0 });
    }
    Ok(num / den)
}

fn constant_masses(fits: &[SubModelFit], weights: &WeightMatrix, k: usize) -> Result<Vec<(f64, f64)>> {
    if fits.len() != weights.n_models() {
        return Err(Error::Dimension(format!(
            "{} fits for {} weight columns",
            fits.len(),
            weights.n_models()
        )));
    }
    if fits.iter().any(|f| k >= f.b.len()) {
        return Err(Error::Dimension(format!("covariate {k} out of range")));
    }
    if fits.iter().any(|f| f.params.svc[k]) {
        return Err(Error::Config(format!(
            "covariate {k} is varying in at least one sub-model"
        )));
    }
    Ok(fits
        .iter()
        .zip(&weights.totals)
        .map(|(f, w)| (f.b[k], w / f.sigma2))
        .collect())
}

/// Sum of sub-model log-likelihoods, parameter count `C (3K + 1)` and
/// `BIC = -2 loglik + P log N`.
pub fn total_loglik_and_bic(logliks: &[f64], k: usize, n: usize) -> (f64, f64, usize) {
    let ll: f64 = logliks.iter().sum();
    let p = logliks.len() * (3 * k + 1);
    (ll, -2.0 * ll + p as f64 * (n as f64).ln(), p)
}

/// Which site weights enter each sub-model's likelihood. Fusion always
/// uses the normalized weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum EstimationWeights {
    /// Row-normalized prior weights.
    #[default]
    Normalized,
    /// Unnormalized `w0`: 1 for own-cluster sites and for the global
    /// model, `exp(-d / r_c)` for overlap sites. Opt-in.
    Unnormalized,
}

/// How the number of local clusters is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClusterSpec {
    /// `max(1, round(N / size))` clusters.
    TargetSize(usize),
    Count(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EsfmaConfig {
    pub clusters: ClusterSpec,
    pub scheme: WeightScheme,
    pub estimation_weights: EstimationWeights,
    /// Eigenvector count of the global sub-model.
    pub global_l: usize,
    /// Eigenvector cap of local sub-models; `None` keeps every positive pair.
    pub local_l: Option<usize>,
    /// Per-covariate varying flag; `None` lets every coefficient vary.
    pub svc: Option<Vec<bool>>,
    pub seed: u64,
    /// Threads for the sub-model fan-out. Results do not depend on it.
    pub workers: usize,
    pub fit: FitOptions,
    pub basis: BasisOptions,
}

impl Default for EsfmaConfig {
    fn default() -> Self {
        Self {
            clusters: ClusterSpec::TargetSize(600),
            scheme: WeightScheme::gl(),
            estimation_weights: EstimationWeights::Normalized,
            global_l: 200,
            local_l: None,
            svc: None,
            seed: 0,
            workers: 1,
            fit: FitOptions::default(),
            basis: BasisOptions::default(),
        }
    }
}

/// Wall-clock seconds per pipeline stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub partition: f64,
    pub eigen: f64,
    pub fits: f64,
    pub fusion: f64,
}

impl StageTimings {
    pub fn total(&self) -> f64 {
        self.partition + self.eigen + self.fits + self.fusion
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    Local(usize),
    Global,
}

/// Geometry of one sub-model.
#[derive(Debug, Clone)]
pub struct ModelGeometry {
    pub kind: ModelKind,
    /// Kernel range of the model's connectivity.
    pub range: f64,
    /// Sites with positive prior weight, ascending.
    pub support: Vec<usize>,
    pub weights: Vec<f64>,
    pub basis: MoranBasis,
}

/// Everything in ESF-MA that depends only on the site coordinates:
/// partition, ranges, prior weights and eigenbases. Build once and fit
/// any number of datasets observed at the same sites.
#[derive(Debug, Clone)]
pub struct EsfmaPlan {
    pub sites: Vec<Coord>,
    pub partition: ClusterPartition,
    pub weights: WeightMatrix,
    pub models: Vec<ModelGeometry>,
    pub config: EsfmaConfig,
    pub timings: StageTimings,
}

impl EsfmaPlan {
    pub fn new(sites: &[Coord], config: &EsfmaConfig) -> Result<Self> {
        config.scheme.validate()?;
        if config.workers == 0 {
            return Err(Error::Config("worker count must be at least 1".into()));
        }
        if config.global_l == 0 {
            return Err(Error::Config("global eigenvector count must be positive".into()));
        }
        let n = sites.len();
        let t0 = Stopwatch::start();
        let n_clusters = match config.clusters {
            ClusterSpec::TargetSize(0) | ClusterSpec::Count(0) => {
                return Err(Error::Config("cluster size and count must be positive".into()))
            }
            ClusterSpec::TargetSize(s) => choose_cluster_count(n, s),
            ClusterSpec::Count(c) => c,
        };
        let partition = kmeans_partition(sites, n_clusters, config.seed)?;
        let members = partition.members();
        let ranges = members
            .iter()
            .enumerate()
            .map(|(c, mem)| {
                let pts: Vec<Coord> = mem.iter().map(|&i| sites[i]).collect();
                mst_range(&pts).map_err(|e| e.in_model(c))
            })
            .collect::<Result<Vec<f64>>>()?;
        let weights = prior_weights(&partition, sites, &ranges, &config.scheme)?;
        let partition_time = t0.seconds();

        let t1 = Stopwatch::start();
        let nm = weights.n_models();
        let global_range = if config.scheme.include_global { Some(mst_range(sites)?) } else { None };
        let models = map_models(nm, config.workers, |c| -> Result<ModelGeometry> {
            let (kind, range, max_l) = if c < n_clusters {
                (ModelKind::Local(c), ranges[c], config.local_l)
            } else {
                (ModelKind::Global, global_range.unwrap_or(1.0), Some(config.global_l))
            };
            let support = weights.support(c);
            let w: Vec<f64> = weights
                .column(c, config.estimation_weights)
                .iter()
                .map(|&(_, w)| w)
                .collect();
            let pts: Vec<Coord> = support.iter().map(|&i| sites[i]).collect();
            let cm = connectivity_from_sites(&pts, &ConnectivityConfig::new(range)?)?;
            let basis = moran_basis(cm.as_ref(), max_l, &config.basis)?;
            Ok(ModelGeometry {
                kind,
                range,
                support,
                weights: w,
                basis,
            })
        })?;
        Ok(Self {
            sites: sites.to_vec(),
            partition,
            weights,
            models,
            config: config.clone(),
            timings: StageTimings {
                partition: partition_time,
                eigen: t1.seconds(),
                ..StageTimings::default()
            },
        })
    }

    /// Fits every sub-model on `dataset` and fuses them.
    pub fn fit(&self, dataset: &Dataset) -> Result<AggregatedFit> {
        if dataset.sites != self.sites {
            return Err(Error::Input("dataset sites differ from the plan's sites".into()));
        }
        let svc = resolve_svc(&self.config.svc, dataset.k())?;
        let t0 = Stopwatch::start();
        let fitted = map_models(self.models.len(), self.config.workers, |c| {
            let m = &self.models[c];
            let design = build_design(dataset, &m.basis, &m.support, &m.weights, &svc)?;
            let fit = fit_submodel(&design, &self.config.fit)?;
            let surface = predict_sub_svc(&fit, m.basis.vectors())?;
            Ok((fit, surface))
        })?;
        let fits_time = t0.seconds();
        let t1 = Stopwatch::start();
        let infos: Vec<ModelInfo> = self
            .models
            .iter()
            .map(|m| ModelInfo {
                kind: m.kind,
                range: m.range,
                support: m.support.clone(),
            })
            .collect();
        let mut out = fuse(dataset, &svc, &self.weights, infos, fitted)?;
        out.timings = StageTimings {
            partition: self.timings.partition,
            eigen: self.timings.eigen,
            fits: fits_time,
            fusion: t1.seconds(),
        };
        Ok(out)
    }
}

fn resolve_svc(svc: &Option<Vec<bool>>, k: usize) -> Result<Vec<bool>> {
    match svc {
        None => Ok(vec![true; k]),
        Some(v) if v.len() == k => Ok(v.clone()),
        Some(v) => Err(Error::Config(format!("{} svc flags for {k} covariates", v.len()))),
    }
}

/// Runs `f` for every model index, on `workers` threads when the
/// `parallel` feature is on. Output order and the reported error (the
/// lowest failing model) do not depend on the schedule.
fn map_models<T, F>(n: usize, workers: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    let results: Vec<Result<T>> = run_indexed(n, workers, &f)?;
    results
        .into_iter()
        .enumerate()
        .map(|(c, r)| r.map_err(|e| e.in_model(c)))
        .collect()
}

#[cfg(feature = "parallel")]
fn run_indexed<T, F>(n: usize, workers: usize, f: &F) -> Result<Vec<Result<T>>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    use rayon::prelude::*;
    if workers <= 1 {
        return Ok((0..n).map(f).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(|| (0..n).into_par_iter().map(f).collect()))
}

#[cfg(not(feature = "parallel"))]
fn run_indexed<T, F>(n: usize, _workers: usize, f: &F) -> Result<Vec<Result<T>>>
where
    F: Fn(usize) -> Result<T>,
{
    Ok((0..n).map(f).collect())
}

/// Bookkeeping of one fitted sub-model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub kind: ModelKind,
    pub range: f64,
    pub support: Vec<usize>,
}

/// Fused estimate of a constant coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantEstimate {
    pub covariate: usize,
    pub estimate: f64,
    /// Posterior-mass-weighted mean of the sub-model standard errors.
    pub se: f64,
    pub t: f64,
}

/// Output of the full pipeline.
#[derive(Debug, Clone)]
pub struct AggregatedFit {
    pub models: Vec<ModelInfo>,
    pub sub_fits: Vec<SubModelFit>,
    /// Fused coefficients, `N x K`. Constant covariates hold their fused value.
    pub beta: Mat<f64>,
    /// Fused noise variance per site.
    pub sigma2: Vec<f64>,
    pub svc: Vec<bool>,
    pub constants: Vec<ConstantEstimate>,
    pub loglik: f64,
    pub bic: f64,
    pub n_params: usize,
    pub timings: StageTimings,
}

impl AggregatedFit {
    pub fn n_models(&self) -> usize {
        self.sub_fits.len()
    }
}

fn fuse(
    dataset: &Dataset,
    svc: &[bool],
    weights: &WeightMatrix,
    models: Vec<ModelInfo>,
    fitted: Vec<(SubModelFit, Mat<f64>)>,
) -> Result<AggregatedFit> {
    let n = dataset.n();
    let k = dataset.k();
    let (sub_fits, surfaces): (Vec<SubModelFit>, Vec<Mat<f64>>) = fitted.into_iter().unzip();
    let sigma2s: Vec<f64> = sub_fits.iter().map(|f| f.sigma2).collect();
    // Position of each site within each model's support, following the row view.
    let mut cursor = vec![0usize; weights.n_models()];
    let mut beta = Mat::<f64>::zeros(n, k);
    let mut sigma2 = vec![0.0; n];
    let mut vals = Vec::new();
    let mut post = Vec::new();
    let mut prior = Vec::new();
    let mut s2 = Vec::new();
    for i in 0..n {
        let row = &weights.rows[i];
        prior.clear();
        s2.clear();
        for &(c, w) in row {
            prior.push(w);
            s2.push(sigma2s[c]);
        }
        post.clear();
        post.extend(posterior_weights(&prior, &s2)?);
        for kk in 0..k {
            if !svc[kk] {
                continue;
            }
            vals.clear();
            for &(c, _) in row {
                vals.push(surfaces[c][(cursor[c], kk)]);
            }
            beta[(i, kk)] = aggregate_svc(&vals, &post).ok_or(Error::Coverage { site: i })?;
        }
        sigma2[i] = aggregate_variance(&prior, &s2).ok_or(Error::Coverage { site: i })?;
        for &(c, _) in row {
            cursor[c] += 1;
        }
    }
    let mut constants = Vec::new();
    for kk in (0..k).filter(|&kk| !svc[kk]) {
        let masses = constant_masses(&sub_fits, weights, kk)?;
        let total: f64 = masses.iter().map(|m| m.1).sum();
        let estimate = aggregate_constant(&sub_fits, weights, kk)?;
        let se = sub_fits
            .iter()
            .zip(&masses)
            .map(|(f, m)| f.fixed_se()[kk] * m.1)
            .sum::<f64>()
            / total;
        for i in 0..n {
            beta[(i, kk)] = estimate;
        }
        constants.push(ConstantEstimate {
            covariate: kk,
            estimate,
            se,
            t: estimate / se,
        });
    }
    let logliks: Vec<f64> = sub_fits.iter().map(|f| f.loglik).collect();
    let (loglik, bic, n_params) = total_loglik_and_bic(&logliks, k, n);
    Ok(AggregatedFit {
        models,
        sub_fits,
        beta,
        sigma2,
        svc: svc.to_vec(),
        constants,
        loglik,
        bic,
        n_params,
        timings: StageTimings::default(),
    })
}

/// Builds a plan for `dataset.sites` and fits it.
pub fn fit_esfma(dataset: &Dataset, config: &EsfmaConfig) -> Result<AggregatedFit> {
    EsfmaPlan::new(&dataset.sites, config)?.fit(dataset)
}

/// Plain random-effects ESF on all sites: one model, unit weights, kernel
/// range from the full minimum spanning tree and the `max_l` leading
/// eigenvectors (all positive ones when `None`).
#[derive(Debug, Clone)]
pub struct ReesfPlan {
    pub sites: Vec<Coord>,
    pub range: f64,
    pub basis: MoranBasis,
    pub eigen_time: f64,
}

impl ReesfPlan {
    pub fn new(sites: &[Coord], max_l: Option<usize>, options: &BasisOptions) -> Result<Self> {
        let t0 = Stopwatch::start();
        let range = mst_range(sites)?;
        let c = connectivity_from_sites(sites, &ConnectivityConfig::new(range)?)?;
        let basis = moran_basis(c.as_ref(), max_l, options)?;
        Ok(Self {
            sites: sites.to_vec(),
            range,
            basis,
            eigen_time: t0.seconds(),
        })
    }

    /// The same plan with only the `l` leading eigenvectors.
    pub fn truncated(&self, l: usize) -> Self {
        Self {
            basis: self.basis.truncated(l),
            ..self.clone()
        }
    }

    pub fn fit(&self, dataset: &Dataset, svc: Option<&[bool]>, options: &FitOptions) -> Result<AggregatedFit> {
        if dataset.sites != self.sites {
            return Err(Error::Input("dataset sites differ from the plan's sites".into()));
        }
        let n = dataset.n();
        let svc = resolve_svc(&svc.map(|s| s.to_vec()), dataset.k())?;
        let t0 = Stopwatch::start();
        let idx: Vec<usize> = (0..n).collect();
        let design = build_design(dataset, &self.basis, &idx, &vec![1.0; n], &svc)?;
        let fit = fit_submodel(&design, options)?;
        let surface = predict_sub_svc(&fit, self.basis.vectors())?;
        let fits_time = t0.seconds();
        let weights = WeightMatrix::from_unnormalized((0..n).map(|_| vec![(0, 1.0)]).collect(), 1)?;
        let info = ModelInfo {
            kind: ModelKind::Global,
            range: self.range,
            support: idx,
        };
        let t1 = Stopwatch::start();
        let mut out = fuse(dataset, &svc, &weights, vec![info], vec![(fit, surface)])?;
        out.timings = StageTimings {
            partition: 0.0,
            eigen: self.eigen_time,
            fits: fits_time,
            fusion: t1.seconds(),
        };
        Ok(out)
    }
}

/// Plain random-effects ESF with the `max_l` leading eigenvectors.
pub fn fit_reesf(
    dataset: &Dataset,
    max_l: Option<usize>,
    svc: Option<&[bool]>,
    options: &FitOptions,
) -> Result<AggregatedFit> {
    ReesfPlan::new(&dataset.sites, max_l, &BasisOptions::default())?.fit(dataset, svc, options)
}
