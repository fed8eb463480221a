//! One random-effects ESF sub-model: design assembly, the profiled
//! restricted likelihood, coefficient solve and variance-parameter fit.
//!
//! Coefficient `k` varies as `beta_k(s) = b_k + sum_l e_l(s) v_{k,l} u_{k,l}`
//! with `v_{k,l} = sqrt(tau2_k) * (lambda_l / lambda_1)^(alpha_k / 2)`.
//! Here `tau2_k` is the coefficient variance relative to the noise variance,
//! so the noise variance profiles out of the likelihood in closed form.

use faer::linalg::cholesky::llt::factor::LltError;
use faer::linalg::solvers::DenseSolveCore;
use faer::prelude::*;
use faer::{Mat, MatRef, Side};

use crate::basis::MoranBasis;
use crate::geometry::Dataset;
use crate::optim::{self, BfgsOptions};
use crate::{Error, Result};

/// Per-covariate variance parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceParams {
    /// Scale exponents in `[0, alpha_max]`.
    pub alpha: Vec<f64>,
    /// Coefficient-process variance divided by the noise variance.
    pub tau2: Vec<f64>,
    /// Covariates whose coefficient is allowed to vary.
    pub svc: Vec<bool>,
}

impl VarianceParams {
    pub fn new(alpha: Vec<f64>, tau2: Vec<f64>, svc: Vec<bool>) -> Result<Self> {
        let k = svc.len();
        if alpha.len() != k || tau2.len() != k {
            return Err(Error::Dimension(format!(
                "variance parameters: {} alphas, {} tau2 for {k} covariates",
                alpha.len(),
                tau2.len()
            )));
        }
        for i in 0..k {
            if !(alpha[i] >= 0.0 && alpha[i].is_finite()) || !(tau2[i] >= 0.0 && tau2[i].is_finite()) {
                return Err(Error::Input(format!(
                    "covariate {i}: alpha = {}, tau2 = {} out of range",
                    alpha[i], tau2[i]
                )));
            }
            if !svc[i] && tau2[i] != 0.0 {
                return Err(Error::Input(format!("covariate {i} is constant but tau2 = {}", tau2[i])));
            }
        }
        Ok(Self { alpha, tau2, svc })
    }

    /// All variances zero: the fixed-effects model.
    pub fn null(svc: &[bool]) -> Self {
        Self {
            alpha: vec![0.0; svc.len()],
            tau2: vec![0.0; svc.len()],
            svc: svc.to_vec(),
        }
    }

    pub fn k(&self) -> usize {
        self.svc.len()
    }
}

/// Optimizer and solver settings for [`fit_submodel`].
#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub alpha_max: f64,
    pub max_iter: usize,
    /// Stop when the relative improvement of the log-likelihood is below this.
    pub rel_tol: f64,
    /// Starting relative variance and exponent of the non-null start.
    pub tau2_start: f64,
    pub alpha_start: f64,
    /// Retry a failed factorization with a small ridge on the fixed-effect block.
    pub jitter: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            alpha_max: 10.0,
            max_iter: 200,
            rel_tol: 1e-8,
            tau2_start: 0.01,
            alpha_start: 1.0,
            jitter: false,
        }
    }
}

/// Weighted sub-sample with its cached cross-products.
///
/// The interaction matrix `e` holds `x_k(s_i) e_l(s_i)` at column
/// `j * L + l`, where `j` counts only the covariates with `svc[k] = true`.
#[derive(Debug, Clone)]
pub struct SubModelDesign {
    pub site_indices: Vec<usize>,
    pub weights: Vec<f64>,
    pub y: Vec<f64>,
    pub x: Mat<f64>,
    pub e: Mat<f64>,
    pub svc: Vec<bool>,
    /// `lambda_l / lambda_1` of the sub-model basis.
    pub ratios: Vec<f64>,
    pub total_weight: f64,
    svc_index: Vec<usize>,
    xtx: Mat<f64>,
    xte: Mat<f64>,
    ete: Mat<f64>,
    xty: Vec<f64>,
    ety: Vec<f64>,
    yty: f64,
}

impl SubModelDesign {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn k(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_basis(&self) -> usize {
        self.ratios.len()
    }

    /// `W_c / N_c`.
    pub fn z(&self) -> f64 {
        self.total_weight / self.n() as f64
    }

    /// Diagonal of the rescaled weight matrix `(N_c / W_c) diag(w)`.
    pub fn scaled_weights(&self) -> Vec<f64> {
        let f = self.n() as f64 / self.total_weight;
        self.weights.iter().map(|w| w * f).collect()
    }

    /// Indices of the covariates with a varying coefficient.
    pub fn svc_covariates(&self) -> &[usize] {
        &self.svc_index
    }

    fn p(&self) -> usize {
        self.e.ncols()
    }
}

/// Assembles the weighted design for the sites `site_indices` of `dataset`.
/// Row `i` of the basis belongs to site `site_indices[i]`.
pub fn build_design(
    dataset: &Dataset,
    basis: &MoranBasis,
    site_indices: &[usize],
    weights: &[f64],
    svc: &[bool],
) -> Result<SubModelDesign> {
    let n = site_indices.len();
    let k = dataset.k();
    if weights.len() != n || basis.n_sites() != n {
        return Err(Error::Dimension(format!(
            "{n} sites, {} weights, basis over {} sites",
            weights.len(),
            basis.n_sites()
        )));
    }
    if svc.len() != k {
        return Err(Error::Dimension(format!("{} svc flags for {k} covariates", svc.len())));
    }
    if let Some(&bad) = site_indices.iter().find(|&&i| i >= dataset.n()) {
        return Err(Error::Input(format!("site index {bad} out of range")));
    }
    if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && **w <= 1.0)) {
        return Err(Error::Input(format!("prior weight {w} outside (0, 1]")));
    }
    if n <= k {
        return Err(Error::InsufficientSample { n, k });
    }
    let l = basis.len();
    let svc_index: Vec<usize> = (0..k).filter(|&j| svc[j]).collect();
    let ev = basis.vectors();
    let x = Mat::from_fn(n, k, |i, j| dataset.x[(site_indices[i], j)]);
    let y: Vec<f64> = site_indices.iter().map(|&i| dataset.y[i]).collect();
    let e = Mat::from_fn(n, svc_index.len() * l, |i, c| x[(i, svc_index[c / l])] * ev[(i, c % l)]);
    let total_weight: f64 = weights.iter().sum();

    let scale = n as f64 / total_weight;
    let root: Vec<f64> = weights.iter().map(|w| (w * scale).sqrt()).collect();
    let xs = Mat::from_fn(n, k, |i, j| root[i] * x[(i, j)]);
    let es = Mat::from_fn(n, e.ncols(), |i, j| root[i] * e[(i, j)]);
    let ys = Mat::from_fn(n, 1, |i, _| root[i] * y[i]);
    let xtx = xs.transpose() * &xs;
    let xte = xs.transpose() * &es;
    let ete = es.transpose() * &es;
    let xty_m = xs.transpose() * &ys;
    let ety_m = es.transpose() * &ys;
    let xty = (0..k).map(|i| xty_m[(i, 0)]).collect();
    let ety = (0..e.ncols()).map(|i| ety_m[(i, 0)]).collect();
    let yty = (0..n).map(|i| ys[(i, 0)] * ys[(i, 0)]).sum();

    Ok(SubModelDesign {
        site_indices: site_indices.to_vec(),
        weights: weights.to_vec(),
        y,
        x,
        e,
        svc: svc.to_vec(),
        ratios: basis.ratios(),
        total_weight,
        svc_index,
        xtx,
        xte,
        ete,
        xty,
        ety,
        yty,
    })
}

/// `V` over the varying covariates: entry `j * L + l` is
/// `sqrt(tau2_k) * ratio_l^(alpha_k / 2)` for the `j`-th varying covariate
/// `k`, with `ratio_l = lambda_l / lambda_1`.
pub fn variance_diagonal(params: &VarianceParams, lambdas: &[f64]) -> Vec<f64> {
    let l1 = lambdas.first().copied().unwrap_or(1.0);
    let ratios: Vec<f64> = lambdas.iter().map(|v| v / l1).collect();
    diag_from_ratios(params, &ratios)
}

fn diag_from_ratios(params: &VarianceParams, ratios: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(ratios.len() * params.k());
    for k in 0..params.k() {
        if !params.svc[k] {
            continue;
        }
        let t = params.tau2[k].sqrt();
        let half = 0.5 * params.alpha[k];
        v.extend(ratios.iter().map(|r| t * r.powf(half)));
    }
    v
}

/// Block system `M q = rhs` of the mixed-model normal equations for a
/// given `V`: `M = [[X'WX, X'WEV], [VE'WX, VE'WEV + I]]`.
fn assemble(d: &SubModelDesign, v: &[f64], ridge: f64) -> (Mat<f64>, Vec<f64>) {
    let k = d.k();
    let p = d.p();
    let m = Mat::from_fn(k + p, k + p, |i, j| match (i < k, j < k) {
        (true, true) => d.xtx[(i, j)] + if i == j { ridge } else { 0.0 },
        (true, false) => d.xte[(i, j - k)] * v[j - k],
        (false, true) => d.xte[(j, i - k)] * v[i - k],
        (false, false) => {
            let a = v[i - k] * d.ete[(i - k, j - k)] * v[j - k];
            if i == j {
                a + 1.0
            } else {
                a
            }
        }
    });
    let mut rhs = d.xty.clone();
    rhs.extend(d.ety.iter().zip(v).map(|(a, b)| a * b));
    (m, rhs)
}

/// The normal-equation matrix and right-hand side at `params`.
pub fn normal_equations(design: &SubModelDesign, params: &VarianceParams) -> Result<(Mat<f64>, Vec<f64>)> {
    check_params(design, params)?;
    let v = diag_from_ratios(params, &design.ratios);
    Ok(assemble(design, &v, 0.0))
}

fn check_params(d: &SubModelDesign, params: &VarianceParams) -> Result<()> {
    if params.k() != d.k() || params.svc != d.svc {
        return Err(Error::Dimension(
            "variance parameters do not match the design covariates".into(),
        ));
    }
    Ok(())
}

struct Factored {
    llt: faer::linalg::solvers::Llt<f64>,
    m: Mat<f64>,
    rhs: Vec<f64>,
}

fn pivot_covariate(d: &SubModelDesign, index: usize) -> usize {
    let k = d.k();
    if index < k {
        index
    } else {
        let l = d.n_basis().max(1);
        d.svc_index[((index - k) / l).min(d.svc_index.len() - 1)]
    }
}

fn factor(d: &SubModelDesign, v: &[f64], jitter: bool) -> Result<Factored> {
    let (m, rhs) = assemble(d, v, 0.0);
    match m.llt(Side::Lower) {
        Ok(llt) => Ok(Factored { llt, m, rhs }),
        Err(LltError::NonPositivePivot { index }) => {
            if !jitter {
                return Err(Error::Singular {
                    covariate: pivot_covariate(d, index),
                });
            }
            let k = d.k();
            let trace: f64 = (0..k).map(|i| d.xtx[(i, i)]).sum();
            let delta = 1e-8 * trace / k as f64;
            let (m, rhs) = assemble(d, v, delta);
            match m.llt(Side::Lower) {
                Ok(llt) => Ok(Factored { llt, m, rhs }),
                Err(LltError::NonPositivePivot { index }) => Err(Error::Singular {
                    covariate: pivot_covariate(d, index),
                }),
            }
        }
    }
}

fn solve_vec(f: &Factored, rhs: &[f64]) -> Vec<f64> {
    let b = Mat::from_fn(rhs.len(), 1, |i, _| rhs[i]);
    let x = f.llt.solve(&b);
    (0..rhs.len()).map(|i| x[(i, 0)]).collect()
}

fn log_det(f: &Factored) -> f64 {
    let l = f.llt.L();
    2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
}

/// Solution of the normal equations at fixed variance parameters.
#[derive(Debug, Clone)]
pub struct Coefficients {
    pub b: Vec<f64>,
    pub u: Vec<f64>,
    /// `y - X b - E V u` over the sub-sample.
    pub eps: Vec<f64>,
    /// `eps' W eps + u'u` with the rescaled weights.
    pub quad: f64,
    /// `||M q - rhs|| / ||rhs||` after refinement.
    pub residual: f64,
}

/// Coefficients `(b, u)` maximizing the joint density at `params`.
pub fn solve_coefficients(design: &SubModelDesign, params: &VarianceParams, jitter: bool) -> Result<Coefficients> {
    check_params(design, params)?;
    let v = diag_from_ratios(params, &design.ratios);
    let f = factor(design, &v, jitter)?;
    let (q, residual) = refined_solve(&f);
    Ok(coefficients_from(design, &v, q, residual))
}

fn refined_solve(f: &Factored) -> (Vec<f64>, f64) {
    let mut q = solve_vec(f, &f.rhs);
    let mut residual = f64::INFINITY;
    let rn = norm(&f.rhs).max(f64::MIN_POSITIVE);
    for _ in 0..3 {
        let r = sub(&f.rhs, &matvec(f.m.as_ref(), &q));
        residual = norm(&r) / rn;
        if residual < 1e-13 {
            break;
        }
        let dq = solve_vec(f, &r);
        q.iter_mut().zip(&dq).for_each(|(a, b)| *a += b);
    }
    let r = sub(&f.rhs, &matvec(f.m.as_ref(), &q));
    residual = residual.min(norm(&r) / rn);
    (q, residual)
}

fn coefficients_from(d: &SubModelDesign, v: &[f64], q: Vec<f64>, residual: f64) -> Coefficients {
    let k = d.k();
    let b = q[..k].to_vec();
    let u = q[k..].to_vec();
    let vu: Vec<f64> = u.iter().zip(v).map(|(a, b)| a * b).collect();
    let fit_x = matvec(d.x.as_ref(), &b);
    let fit_e = matvec(d.e.as_ref(), &vu);
    let eps: Vec<f64> = (0..d.n()).map(|i| d.y[i] - fit_x[i] - fit_e[i]).collect();
    let sw = d.scaled_weights();
    let quad = eps.iter().zip(&sw).map(|(e, w)| w * e * e).sum::<f64>() + u.iter().map(|x| x * x).sum::<f64>();
    Coefficients {
        b,
        u,
        eps,
        quad,
        residual,
    }
}

/// `(eps' W eps + u'u) / (N_c - K)` with the rescaled weights.
pub fn estimate_sigma2(eps: &[f64], u: &[f64], design: &SubModelDesign) -> Result<f64> {
    let (n, k) = (design.n(), design.k());
    if n <= k {
        return Err(Error::InsufficientSample { n, k });
    }
    if eps.len() != n {
        return Err(Error::Dimension(format!("{} residuals for {n} sites", eps.len())));
    }
    let sw = design.scaled_weights();
    let quad = eps.iter().zip(&sw).map(|(e, w)| w * e * e).sum::<f64>() + u.iter().map(|x| x * x).sum::<f64>();
    let s2 = quad / (n - k) as f64;
    // Round-off residuals of an exact fit count as zero.
    if !(quad > 1e-24 * design.yty) {
        return Err(Error::ZeroVariance);
    }
    Ok(s2)
}

fn profile_value(d: &SubModelDesign, quad: f64, logdet: f64) -> f64 {
    let (n, k) = (d.n() as f64, d.k() as f64);
    let w = d.total_weight;
    -(w - k) / 2.0 * (2.0 * std::f64::consts::PI * quad / (n - k)).ln() - 0.5 * logdet - w / 2.0
}

fn check_profile(d: &SubModelDesign) -> Result<()> {
    let k = d.k();
    if d.n() <= k {
        return Err(Error::InsufficientSample { n: d.n(), k });
    }
    if d.total_weight <= k as f64 {
        return Err(Error::ProfileDegenerate {
            weight: d.total_weight,
            k,
        });
    }
    Ok(())
}

/// Restricted log-likelihood with the noise variance profiled out:
/// `-(W-K)/2 log(2 pi Q / (N-K)) - log|M| / 2 - W/2`, where
/// `Q = eps' W eps + u'u` at the solution of the normal equations.
pub fn restricted_loglik(design: &SubModelDesign, params: &VarianceParams) -> Result<f64> {
    check_params(design, params)?;
    check_profile(design)?;
    let v = diag_from_ratios(params, &design.ratios);
    let f = factor(design, &v, false)?;
    let (q, _) = refined_solve(&f);
    let c = coefficients_from(design, &v, q, 0.0);
    if !(c.quad > 0.0) {
        return Err(Error::ZeroVariance);
    }
    Ok(profile_value(design, c.quad, log_det(&f)))
}

/// Likelihood evaluation inside the optimizer: the quadratic form comes
/// from `y'Wy - rhs'q` instead of explicit residuals.
fn fast_value(d: &SubModelDesign, v: &[f64]) -> Option<(f64, Factored, Vec<f64>, f64)> {
    let f = factor(d, v, false).ok()?;
    let q = solve_vec(&f, &f.rhs);
    let quad = d.yty - dot(&f.rhs, &q);
    if !(quad > 0.0) {
        return None;
    }
    let value = profile_value(d, quad, log_det(&f));
    Some((value, f, q, quad))
}

/// Derivatives of the restricted log-likelihood with respect to each `v_p`.
fn grad_v(d: &SubModelDesign, v: &[f64], f: &Factored, q: &[f64], quad: f64) -> Vec<f64> {
    let k = d.k();
    let p = d.p();
    let inv = f.llt.inverse();
    // (H D q) restricted to the random block, H the unscaled cross-product matrix.
    let dq: Vec<f64> = (0..p).map(|m| v[m] * q[k + m]).collect();
    let xte_t_qb = matvec_t(d.xte.as_ref(), &q[..k]);
    let ete_dq = matvec(d.ete.as_ref(), &dq);
    let w = d.total_weight;
    (0..p)
        .map(|a| {
            let hdq = xte_t_qb[a] + ete_dq[a];
            let dquad = 2.0 * q[k + a] * (hdq - d.ety[a]);
            let mut tr = 0.0;
            for j in 0..k {
                tr += inv[(k + a, j)] * d.xte[(j, a)];
            }
            for m in 0..p {
                tr += inv[(k + a, k + m)] * v[m] * d.ete[(m, a)];
            }
            -(w - k as f64) / 2.0 * dquad / quad - tr
        })
        .collect()
}

/// Restricted log-likelihood and its gradient with respect to
/// `log tau2_k` and `alpha_k` for each varying covariate, in the order of
/// [`SubModelDesign::svc_covariates`].
pub fn restricted_loglik_grad(design: &SubModelDesign, params: &VarianceParams) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    check_params(design, params)?;
    check_profile(design)?;
    let v = diag_from_ratios(params, &design.ratios);
    let (value, f, q, quad) = fast_value(design, &v).ok_or_else(|| Error::Factorization("likelihood not finite".into()))?;
    let gv = grad_v(design, &v, &f, &q, quad);
    let l = design.n_basis();
    let mut g_tau = Vec::new();
    let mut g_alpha = Vec::new();
    for j in 0..design.svc_index.len() {
        let mut gt = 0.0;
        let mut ga = 0.0;
        for li in 0..l {
            let idx = j * l + li;
            gt += gv[idx] * v[idx] * 0.5;
            ga += gv[idx] * v[idx] * 0.5 * design.ratios[li].ln();
        }
        g_tau.push(gt);
        g_alpha.push(ga);
    }
    Ok((value, g_tau, g_alpha))
}

/// Fitted sub-model.
#[derive(Debug, Clone, PartialEq)]
pub struct SubModelFit {
    pub b: Vec<f64>,
    /// Random coefficients, `j * L + l` over the varying covariates.
    pub u: Vec<f64>,
    pub sigma2: f64,
    pub params: VarianceParams,
    pub loglik: f64,
    pub n_sites: usize,
    pub total_weight: f64,
    /// `lambda_l / lambda_1` of the basis the fit used.
    pub ratios: Vec<f64>,
    /// Diagonal of the fixed-effect block of `M^-1`.
    pub fixed_cov_diag: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl SubModelFit {
    pub fn n_basis(&self) -> usize {
        self.ratios.len()
    }

    pub fn z(&self) -> f64 {
        self.total_weight / self.n_sites as f64
    }

    /// Absolute coefficient-process variances `tau2_rel * sigma2`.
    pub fn tau2_abs(&self) -> Vec<f64> {
        self.params.tau2.iter().map(|t| t * self.sigma2).collect()
    }

    /// Standard errors of the fixed coefficients.
    pub fn fixed_se(&self) -> Vec<f64> {
        let z = self.z();
        self.fixed_cov_diag
            .iter()
            .map(|m| (self.sigma2 / z * m).sqrt())
            .collect()
    }

    /// Site-averaged variance of each fitted coefficient process,
    /// `sigma2 * sum_l v_l^2 / N_c`; zero for constant coefficients. Unlike
    /// `tau2_abs` this is on the scale of the coefficient itself.
    pub fn process_variance(&self) -> Vec<f64> {
        let n = self.n_sites as f64;
        (0..self.params.k())
            .map(|k| {
                if !self.params.svc[k] {
                    return 0.0;
                }
                let a = self.params.alpha[k];
                let s: f64 = self.ratios.iter().map(|r| r.powf(a)).sum();
                self.sigma2 * self.params.tau2[k] * s / n
            })
            .collect()
    }

    /// `V` of the fit over the varying covariates.
    pub fn variance_diagonal(&self) -> Vec<f64> {
        diag_from_ratios(&self.params, &self.ratios)
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

const LOG_TAU_BOUNDS: (f64, f64) = (-25.0, 15.0);
const LOGIT_BOUND: f64 = 30.0;

/// Maximizes the restricted likelihood over `(tau2, alpha)` of every
/// varying covariate, then solves for the coefficients.
pub fn fit_submodel(design: &SubModelDesign, options: &FitOptions) -> Result<SubModelFit> {
    check_profile(design)?;
    let k = design.k();
    let svc = &design.svc;
    let n_svc = design.svc_index.len();
    let l = design.n_basis();
    let amax = options.alpha_max;

    let null = VarianceParams::null(svc);
    let null_value = fast_value(design, &vec![0.0; design.p()]).map(|r| r.0);

    let mut best: Option<(f64, VarianceParams, usize, bool)> = null_value.map(|val| (val, null.clone(), 0, true));

    if n_svc > 0 && l > 0 {
        let to_params = |z: &[f64]| -> VarianceParams {
            let mut p = VarianceParams::null(svc);
            for (j, &kk) in design.svc_index.iter().enumerate() {
                p.tau2[kk] = z[2 * j].exp();
                p.alpha[kk] = amax * sigmoid(z[2 * j + 1]);
            }
            p
        };
        let value = |z: &[f64]| -> f64 {
            let v = diag_from_ratios(&to_params(z), &design.ratios);
            match fast_value(design, &v) {
                Some((val, ..)) => -val,
                None => f64::NAN,
            }
        };
        let value_grad = |z: &[f64]| -> (f64, Vec<f64>) {
            let v = diag_from_ratios(&to_params(z), &design.ratios);
            let Some((val, f, q, quad)) = fast_value(design, &v) else {
                return (f64::NAN, vec![f64::NAN; z.len()]);
            };
            let gv = grad_v(design, &v, &f, &q, quad);
            let mut g = vec![0.0; z.len()];
            for j in 0..n_svc {
                let s = sigmoid(z[2 * j + 1]);
                let dalpha = amax * s * (1.0 - s);
                for li in 0..l {
                    let idx = j * l + li;
                    g[2 * j] -= gv[idx] * v[idx] * 0.5;
                    g[2 * j + 1] -= gv[idx] * v[idx] * 0.5 * design.ratios[li].ln() * dalpha;
                }
            }
            (-val, g)
        };
        let a0 = (options.alpha_start / amax).clamp(1e-6, 1.0 - 1e-6);
        let mut z0 = Vec::with_capacity(2 * n_svc);
        for _ in 0..n_svc {
            z0.push(options.tau2_start.max(1e-300).ln().clamp(LOG_TAU_BOUNDS.0, LOG_TAU_BOUNDS.1));
            z0.push((a0 / (1.0 - a0)).ln());
        }
        let lo: Vec<f64> = (0..2 * n_svc)
            .map(|i| if i % 2 == 0 { LOG_TAU_BOUNDS.0 } else { -LOGIT_BOUND })
            .collect();
        let hi: Vec<f64> = (0..2 * n_svc)
            .map(|i| if i % 2 == 0 { LOG_TAU_BOUNDS.1 } else { LOGIT_BOUND })
            .collect();
        let bopts = BfgsOptions {
            max_iter: options.max_iter,
            ftol: options.rel_tol,
            ..BfgsOptions::default()
        };
        match optim::minimize(value, value_grad, &z0, &lo, &hi, &bopts) {
            Ok(r) => {
                let cand = -r.f;
                if best.as_ref().map_or(true, |b| cand > b.0) {
                    best = Some((cand, to_params(&r.x), r.iterations, r.converged));
                }
            }
            Err(r) => {
                if best.is_none() {
                    let p = to_params(&r.x);
                    return Err(Error::Optimizer {
                        iterations: r.iterations,
                        loglik: -r.f,
                        alpha: p.alpha,
                        tau2: p.tau2,
                    });
                }
            }
        }
    }

    let Some((_, params, iterations, converged)) = best else {
        return Err(Error::Optimizer {
            iterations: 0,
            loglik: f64::NAN,
            alpha: null.alpha,
            tau2: null.tau2,
        });
    };
    let v = diag_from_ratios(&params, &design.ratios);
    let f = factor(design, &v, options.jitter)?;
    let (q, residual) = refined_solve(&f);
    let coef = coefficients_from(design, &v, q, residual);
    let sigma2 = estimate_sigma2(&coef.eps, &coef.u, design)?;
    let loglik = profile_value(design, coef.quad, log_det(&f));
    if !loglik.is_finite() {
        return Err(Error::Optimizer {
            iterations,
            loglik,
            alpha: params.alpha,
            tau2: params.tau2,
        });
    }
    let fixed_cov_diag = fixed_block_diag(&f, k);
    Ok(SubModelFit {
        b: coef.b,
        u: coef.u,
        sigma2,
        params,
        loglik,
        n_sites: design.n(),
        total_weight: design.total_weight,
        ratios: design.ratios.clone(),
        fixed_cov_diag,
        iterations,
        converged,
    })
}

fn fixed_block_diag(f: &Factored, k: usize) -> Vec<f64> {
    let n = f.m.nrows();
    (0..k)
        .map(|i| {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            solve_vec(f, &e)[i]
        })
        .collect()
}

/// Coefficient surfaces of a fit at target sites, `targets x K`.
/// `basis_rows` holds the sub-model's eigenvectors evaluated at the targets.
pub fn predict_sub_svc(fit: &SubModelFit, basis_rows: MatRef<'_, f64>) -> Result<Mat<f64>> {
    let l = fit.n_basis();
    if basis_rows.ncols() != l {
        return Err(Error::Dimension(format!(
            "basis rows have {} columns, fit has {l} eigenvectors",
            basis_rows.ncols()
        )));
    }
    let k = fit.params.k();
    let v = fit.variance_diagonal();
    let nt = basis_rows.nrows();
    let mut out = Mat::from_fn(nt, k, |_, j| fit.b[j]);
    let mut slot = 0;
    for kk in 0..k {
        if !fit.params.svc[kk] {
            continue;
        }
        let coef = Mat::from_fn(l, 1, |li, _| v[slot * l + li] * fit.u[slot * l + li]);
        let surface = basis_rows * &coef;
        for i in 0..nt {
            out[(i, kk)] += surface[(i, 0)];
        }
        slot += 1;
    }
    Ok(out)
}

fn matvec(a: MatRef<'_, f64>, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.nrows()];
    for j in 0..a.ncols() {
        let xj = x[j];
        if xj == 0.0 {
            continue;
        }
        for (o, v) in out.iter_mut().zip(a.col(j).iter()) {
            *o += v * xj;
        }
    }
    out
}

fn matvec_t(a: MatRef<'_, f64>, x: &[f64]) -> Vec<f64> {
    (0..a.ncols())
        .map(|j| a.col(j).iter().zip(x).map(|(p, q)| p * q).sum())
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}
