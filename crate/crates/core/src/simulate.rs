//! Synthetic SVC scenarios on a regular grid and accuracy scores.
//!
//! Every random component draws from its own ChaCha8 stream of the
//! scenario seed: stream 0 is the noise, `1 + k` the process of varying
//! coefficient `k` (intercept is `k = 0`), `100 + j` and `200 + j` the white
//! and spatial parts of covariate `j` (`j >= 1`).

use faer::{Mat, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::geometry::{check_sites, dist, Coord, Dataset};
use crate::{Error, Result};

const STREAM_NOISE: u64 = 0;
const STREAM_SVC: u64 = 1;
const STREAM_COV_WHITE: u64 = 100;
const STREAM_COV_GP: u64 = 200;

/// Range of the spatial part of every covariate.
pub const COVARIATE_RANGE: f64 = 1.0;

/// Scenario definition. Varying coefficients come first (intercept at
/// index 0), followed by the constant-coefficient covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub grid_side: usize,
    /// Means `b_k` of the varying coefficients.
    pub b: Vec<f64>,
    /// Process variances `tau_k^2` of the varying coefficients.
    pub tau2: Vec<f64>,
    /// Process ranges of the varying coefficients.
    pub ranges: Vec<f64>,
    /// Coefficients of the constant-coefficient covariates.
    pub b_constant: Vec<f64>,
    pub include_constant_covariates: bool,
    pub noise_var: f64,
    pub seed: u64,
}

impl SimConfig {
    /// Three varying and two constant covariates plus a varying intercept
    /// (`b_0 = 0`, `tau_0^2 = 1`), all processes with range `r`.
    pub fn mixed(grid_side: usize, r: f64, seed: u64) -> Self {
        Self {
            grid_side,
            b: vec![0.0, 1.0, 2.0, -0.5],
            tau2: vec![1.0, 1.0, 2.0, 1.0],
            ranges: vec![r; 4],
            b_constant: vec![1.0, -1.0],
            include_constant_covariates: true,
            noise_var: 1.0,
            seed,
        }
    }

    /// As [`SimConfig::mixed`] without the constant-coefficient covariates.
    pub fn svc_only(grid_side: usize, r: f64, seed: u64) -> Self {
        Self {
            include_constant_covariates: false,
            b_constant: Vec::new(),
            ..Self::mixed(grid_side, r, seed)
        }
    }

    /// Varying coefficients with ranges 1.0, 0.5 and 2.0; the intercept
    /// uses 1.0.
    pub fn multiscale(grid_side: usize, seed: u64) -> Self {
        Self {
            ranges: vec![1.0, 1.0, 0.5, 2.0],
            ..Self::svc_only(grid_side, 1.0, seed)
        }
    }

    /// Sets every process variance to zero.
    pub fn without_variation(mut self) -> Self {
        self.tau2.iter_mut().for_each(|t| *t = 0.0);
        self
    }

    pub fn n_sites(&self) -> usize {
        self.grid_side * self.grid_side
    }

    pub fn n_svc(&self) -> usize {
        self.b.len()
    }

    pub fn n_constant(&self) -> usize {
        if self.include_constant_covariates {
            self.b_constant.len()
        } else {
            0
        }
    }

    /// Per-covariate varying flags of the generated dataset.
    pub fn svc_flags(&self) -> Vec<bool> {
        let mut f = vec![true; self.n_svc()];
        f.extend(std::iter::repeat(false).take(self.n_constant()));
        f
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_side < 2 {
            return Err(Error::Config(format!("grid side must be at least 2, got {}", self.grid_side)));
        }
        let m = self.b.len();
        if m == 0 || self.tau2.len() != m || self.ranges.len() != m {
            return Err(Error::Config(
                "b, tau2 and ranges must be non-empty and of equal length".into(),
            ));
        }
        if self.tau2.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
            return Err(Error::Config("tau2 must be non-negative".into()));
        }
        if self.ranges.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(Error::Config("ranges must be positive".into()));
        }
        if !(self.noise_var >= 0.0 && self.noise_var.is_finite()) {
            return Err(Error::Config("noise variance must be non-negative".into()));
        }
        Ok(())
    }
}

/// A generated dataset with its true coefficient surfaces.
#[derive(Debug, Clone)]
pub struct SimTruth {
    pub dataset: Dataset,
    /// True coefficients, `N x K`, in dataset column order.
    pub beta: Mat<f64>,
    pub svc: Vec<bool>,
}

/// `side x side` sites spanning the unit square, boundary included,
/// with the first coordinate running fastest.
pub fn grid_sites(side: usize) -> Vec<Coord> {
    let step = if side > 1 { 1.0 / (side - 1) as f64 } else { 0.0 };
    let mut out = Vec::with_capacity(side * side);
    for j in 0..side {
        for i in 0..side {
            out.push([i as f64 * step, j as f64 * step]);
        }
    }
    out
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Draws from a zero-mean Gaussian process with covariance
/// `tau2 * exp(-d / range)` over fixed sites.
#[derive(Debug, Clone)]
pub struct GpSampler {
    factor: Mat<f64>,
}

impl GpSampler {
    pub fn new(sites: &[Coord], range: f64) -> Result<Self> {
        check_sites(sites)?;
        if !(range > 0.0 && range.is_finite()) {
            return Err(Error::Input(format!("process range must be positive, got {range}")));
        }
        let n = sites.len();
        let mut cov = Mat::<f64>::zeros(n, n);
        crate::basis::clear_upper_simd();
        for j in 0..n {
            let sj = sites[j];
            for (i, v) in cov.col_as_slice_mut(j).iter_mut().enumerate() {
                *v = if i == j { 1.0 } else { (-dist(&sites[i], &sj) / range).exp() };
            }
        }
        let mut jitter = 0.0;
        for step in 0..4 {
            if step > 0 {
                let add = 1e-10 * 10f64.powi(step - 1);
                for i in 0..n {
                    cov[(i, i)] += add - jitter;
                }
                jitter = add;
            }
            if let Ok(llt) = cov.llt(Side::Lower) {
                return Ok(Self {
                    factor: llt.L().to_owned(),
                });
            }
        }
        Err(Error::Factorization(format!(
            "process covariance with range {range} is not positive definite after jitter"
        )))
    }

    pub fn n_sites(&self) -> usize {
        self.factor.nrows()
    }

    /// One draw; `tau2 = 0` gives exact zeros without consuming randomness.
    pub fn draw<R: Rng>(&self, tau2: f64, rng: &mut R) -> Vec<f64> {
        let n = self.n_sites();
        if tau2 == 0.0 {
            return vec![0.0; n];
        }
        let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        let s = tau2.sqrt();
        let mut out = vec![0.0; n];
        for j in 0..n {
            let zj = s * z[j];
            let col = &self.factor.col_as_slice(j)[j..];
            for (o, l) in out[j..].iter_mut().zip(col) {
                *o += l * zj;
            }
        }
        out
    }

    /// `count` independent draws as columns.
    pub fn draw_many<R: Rng>(&self, tau2: f64, count: usize, rng: &mut R) -> Mat<f64> {
        let n = self.n_sites();
        let z = Mat::from_fn(n, count, |_, _| -> f64 { StandardNormal.sample(rng) });
        let mut out = &self.factor * &z;
        let s = tau2.sqrt();
        for j in 0..count {
            out.col_as_slice_mut(j).iter_mut().for_each(|v| *v *= s);
        }
        out
    }
}

/// One Gaussian-process draw with covariance `tau2 * exp(-d / range)`.
pub fn sample_gp(sites: &[Coord], tau2: f64, range: f64, seed: u64) -> Result<Vec<f64>> {
    if !(tau2 >= 0.0 && tau2.is_finite()) {
        return Err(Error::Input(format!("process variance must be non-negative, got {tau2}")));
    }
    if tau2 == 0.0 {
        check_sites(sites)?;
        return Ok(vec![0.0; sites.len()]);
    }
    let sampler = GpSampler::new(sites, range)?;
    Ok(sampler.draw(tau2, &mut ChaCha8Rng::seed_from_u64(seed)))
}

fn covariate_from(sampler: &GpSampler, seed: u64, j: u64) -> Vec<f64> {
    let mut white = stream(seed, STREAM_COV_WHITE + j);
    let mut spatial = stream(seed, STREAM_COV_GP + j);
    let g: Vec<f64> = sampler.draw(1.0, &mut spatial);
    g.iter()
        .map(|gx| {
            let g0: f64 = StandardNormal.sample(&mut white);
            0.5 * g0 + 0.5 * gx
        })
        .collect()
}

/// `0.5 * N(0, 1) + 0.5 * GP(range 1)` at every site.
pub fn generate_covariate(sites: &[Coord], seed: u64) -> Result<Vec<f64>> {
    let sampler = GpSampler::new(sites, COVARIATE_RANGE)?;
    Ok(covariate_from(&sampler, seed, 1))
}

/// Generates `y = sum_k x_k beta_k + sum_j x_j b_j + e` on the grid.
pub fn generate_scenario(config: &SimConfig) -> Result<SimTruth> {
    config.validate()?;
    let sites = grid_sites(config.grid_side);
    let n = sites.len();
    let m = config.n_svc();
    let k = m + config.n_constant();

    let mut samplers: Vec<(f64, GpSampler)> = Vec::new();
    let mut sampler_for = |r: f64| -> Result<usize> {
        if let Some(p) = samplers.iter().position(|(q, _)| *q == r) {
            return Ok(p);
        }
        samplers.push((r, GpSampler::new(&sites, r)?));
        Ok(samplers.len() - 1)
    };
    let cov_idx = sampler_for(COVARIATE_RANGE)?;
    let svc_idx = config
        .ranges
        .iter()
        .map(|&r| sampler_for(r))
        .collect::<Result<Vec<_>>>()?;

    let mut x = Mat::<f64>::zeros(n, k);
    for i in 0..n {
        x[(i, 0)] = 1.0;
    }
    for j in 1..k {
        let col = covariate_from(&samplers[cov_idx].1, config.seed, j as u64);
        for i in 0..n {
            x[(i, j)] = col[i];
        }
    }
    let mut beta = Mat::<f64>::zeros(n, k);
    for c in 0..m {
        let mut rng = stream(config.seed, STREAM_SVC + c as u64);
        let g = samplers[svc_idx[c]].1.draw(config.tau2[c], &mut rng);
        for i in 0..n {
            beta[(i, c)] = config.b[c] + g[i];
        }
    }
    for j in 0..config.n_constant() {
        for i in 0..n {
            beta[(i, m + j)] = config.b_constant[j];
        }
    }
    let mut noise = stream(config.seed, STREAM_NOISE);
    let sd = config.noise_var.sqrt();
    let y: Vec<f64> = (0..n)
        .map(|i| {
            let e: f64 = StandardNormal.sample(&mut noise);
            (0..k).map(|j| x[(i, j)] * beta[(i, j)]).sum::<f64>() + sd * e
        })
        .collect();
    let mut names = vec!["intercept".to_string()];
    names.extend((1..k).map(|j| format!("x{j}")));
    let dataset = Dataset::new(sites, y, x, names)?;
    Ok(SimTruth {
        dataset,
        beta,
        svc: config.svc_flags(),
    })
}

/// Per-coefficient accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub rmse: Vec<f64>,
    pub mae: Vec<f64>,
}

pub fn score(beta_hat: &Mat<f64>, beta_true: &Mat<f64>) -> Result<Score> {
    if beta_hat.nrows() != beta_true.nrows() || beta_hat.ncols() != beta_true.ncols() {
        return Err(Error::Dimension(format!(
            "estimate is {}x{}, truth is {}x{}",
            beta_hat.nrows(),
            beta_hat.ncols(),
            beta_true.nrows(),
            beta_true.ncols()
        )));
    }
    let n = beta_hat.nrows() as f64;
    let mut rmse = Vec::new();
    let mut mae = Vec::new();
    for k in 0..beta_hat.ncols() {
        let (mut sq, mut ab) = (0.0, 0.0);
        for i in 0..beta_hat.nrows() {
            let d = beta_hat[(i, k)] - beta_true[(i, k)];
            sq += d * d;
            ab += d.abs();
        }
        rmse.push((sq / n).sqrt());
        mae.push(ab / n);
    }
    Ok(Score { rmse, mae })
}
