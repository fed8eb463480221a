//! Exponential connectivity and the Moran eigenvector basis.
//!
//! The basis is the set of eigenpairs of `MCM` with positive eigenvalues,
//! where `C` holds `exp(-d_ij / r)` off the diagonal and zeros on it and
//! `M = I - 11'/N` is the centering projector.

use faer::{Mat, MatRef, Side};

use crate::geometry::{check_sites, dist, Coord};
use crate::krylov;
use crate::{Error, Result};

/// Kernel settings: `c(d) = exp(-d / range)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConnectivityConfig {
    pub range: f64,
}

impl ConnectivityConfig {
    pub fn new(range: f64) -> Result<Self> {
        if !(range > 0.0 && range.is_finite()) {
            return Err(Error::Input(format!("kernel range must be positive, got {range}")));
        }
        Ok(Self { range })
    }
}

/// How eigenpairs are extracted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasisOptions {
    /// Largest N solved with a dense symmetric eigensolver. Above it, and
    /// when only the leading `max_l` pairs are wanted, a block Krylov
    /// solver computes just those.
    pub dense_cap: usize,
    /// Eigenvalues at or below `positive_tol * lambda_1` are discarded.
    pub positive_tol: f64,
}

impl Default for BasisOptions {
    fn default() -> Self {
        Self {
            dense_cap: 4000,
            positive_tol: 1e-9,
        }
    }
}

/// Orthonormal eigenvectors of `MCM` with positive eigenvalues, in
/// descending eigenvalue order.
#[derive(Debug, Clone)]
pub struct MoranBasis {
    vectors: Mat<f64>,
    values: Vec<f64>,
}

impl MoranBasis {
    /// Builds a basis from precomputed eigenpairs, which must already be
    /// sorted in descending order with positive eigenvalues.
    pub fn from_parts(vectors: Mat<f64>, values: Vec<f64>) -> Result<Self> {
        if vectors.ncols() != values.len() {
            return Err(Error::Dimension(format!(
                "{} eigenvectors but {} eigenvalues",
                vectors.ncols(),
                values.len()
            )));
        }
        if values.is_empty() {
            return Err(Error::EmptyBasis { threshold: 0.0 });
        }
        if values.windows(2).any(|w| w[1] > w[0]) || values[values.len() - 1] <= 0.0 {
            return Err(Error::Input(
                "eigenvalues must be positive and non-increasing".into(),
            ));
        }
        Ok(Self { vectors, values })
    }

    /// Eigenvectors as columns, one row per site.
    pub fn vectors(&self) -> MatRef<'_, f64> {
        self.vectors.as_ref()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn lambda_max(&self) -> f64 {
        self.values[0]
    }

    /// Eigenvalues scaled by the largest one; these enter the variance
    /// function so that the scale exponent is unit-free.
    pub fn ratios(&self) -> Vec<f64> {
        let l1 = self.lambda_max();
        self.values.iter().map(|&v| v / l1).collect()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn n_sites(&self) -> usize {
        self.vectors.nrows()
    }

    /// The `l` leading pairs (all of them if `l >= len`).
    pub fn truncated(&self, l: usize) -> MoranBasis {
        let l = l.min(self.len()).max(1);
        MoranBasis {
            vectors: Mat::from_fn(self.n_sites(), l, |i, j| self.vectors[(i, j)]),
            values: self.values[..l].to_vec(),
        }
    }

    /// Rows `rows` of the eigenvector matrix.
    pub fn rows(&self, rows: &[usize]) -> Mat<f64> {
        Mat::from_fn(rows.len(), self.len(), |i, j| self.vectors[(rows[i], j)])
    }
}

/// Clears the upper halves of the AVX registers. Dense kernels can leave
/// them dirty, after which every SSE-encoded libm call (notably `exp`) pays
/// a state-transition penalty; on some CPUs that makes kernel fills ~10x
/// slower. Call before long loops of scalar transcendental functions.
#[inline]
pub(crate) fn clear_upper_simd() {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx") {
        // SAFETY: guarded by the runtime feature check above.
        unsafe { std::arch::x86_64::_mm256_zeroupper() }
    }
}

/// `exp(-d / r)` off the diagonal, zero on it.
pub fn connectivity_matrix(distances: MatRef<'_, f64>, config: &ConnectivityConfig) -> Result<Mat<f64>> {
    let n = distances.nrows();
    if distances.ncols() != n {
        return Err(Error::Dimension("distance matrix must be square".into()));
    }
    let r = config.range;
    clear_upper_simd();
    Ok(Mat::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            (-distances[(i, j)] / r).exp()
        }
    }))
}

/// Same as [`connectivity_matrix`] but straight from coordinates, without
/// materialising the distance matrix.
pub fn connectivity_from_sites(sites: &[Coord], config: &ConnectivityConfig) -> Result<Mat<f64>> {
    check_sites(sites)?;
    let n = sites.len();
    let r = config.range;
    // Column by column keeps writes contiguous; the kernel is symmetric in
    // (i, j) so this is exactly symmetric too.
    let mut c = Mat::<f64>::zeros(n, n);
    clear_upper_simd();
    for j in 0..n {
        let sj = sites[j];
        for (i, v) in c.col_as_slice_mut(j).iter_mut().enumerate() {
            if i != j {
                *v = (-dist(&sites[i], &sj) / r).exp();
            }
        }
    }
    Ok(c)
}

/// `MCM` for symmetric `C`.
pub fn double_center(c: MatRef<'_, f64>) -> Mat<f64> {
    let n = c.nrows();
    let nf = n as f64;
    let row_mean: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| c[(i, j)]).sum::<f64>() / nf)
        .collect();
    let grand = row_mean.iter().sum::<f64>() / nf;
    Mat::from_fn(n, n, |i, j| c[(i, j)] - row_mean[i] - row_mean[j] + grand)
}

fn check_connectivity(c: MatRef<'_, f64>) -> Result<()> {
    let n = c.nrows();
    if c.ncols() != n {
        return Err(Error::Dimension("connectivity matrix must be square".into()));
    }
    if n < 2 {
        return Err(Error::Input("need at least 2 sites".into()));
    }
    Ok(())
}

/// Eigenpairs of `MCM` with eigenvalue above `positive_tol * lambda_1`,
/// truncated to the `max_l` largest when given.
pub fn moran_basis(c: MatRef<'_, f64>, max_l: Option<usize>, options: &BasisOptions) -> Result<MoranBasis> {
    check_connectivity(c)?;
    let n = c.nrows();
    let (values, vectors) = match max_l {
        Some(l) if n > options.dense_cap && l < n / 2 => krylov_pairs(c, l)?,
        _ => dense_pairs(c)?,
    };
    select(values, vectors, max_l, options.positive_tol)
}

/// All eigenpairs, descending.
fn dense_pairs(c: MatRef<'_, f64>) -> Result<(Vec<f64>, Mat<f64>)> {
    let mcm = double_center(c);
    let evd = mcm
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Eigen(format!("{e:?}")))?;
    let n = mcm.nrows();
    let s = evd.S().column_vector();
    let u = evd.U();
    let values: Vec<f64> = (0..n).rev().map(|i| s[i]).collect();
    let vectors = Mat::from_fn(n, n, |i, j| u[(i, n - 1 - j)]);
    Ok((values, vectors))
}

fn krylov_pairs(c: MatRef<'_, f64>, l: usize) -> Result<(Vec<f64>, Mat<f64>)> {
    let apply = |x: MatRef<'_, f64>| -> Mat<f64> {
        let mut xc = x.to_owned();
        center_columns(&mut xc);
        let mut y = c * &xc;
        center_columns(&mut y);
        y
    };
    krylov::top_eigenpairs(c.nrows(), l, apply)
}

pub(crate) fn center_columns(x: &mut Mat<f64>) {
    let n = x.nrows() as f64;
    for j in 0..x.ncols() {
        let col = x.col_as_slice_mut(j);
        let mean = col.iter().sum::<f64>() / n;
        col.iter_mut().for_each(|v| *v -= mean);
    }
}

fn select(values: Vec<f64>, vectors: Mat<f64>, max_l: Option<usize>, tol: f64) -> Result<MoranBasis> {
    let lambda_1 = values.first().copied().unwrap_or(0.0);
    let threshold = tol * lambda_1.max(0.0);
    if !(lambda_1 > 0.0) {
        return Err(Error::EmptyBasis { threshold });
    }
    let mut keep = values.iter().take_while(|&&v| v > threshold).count();
    if let Some(l) = max_l {
        keep = keep.min(l);
    }
    if keep == 0 {
        return Err(Error::EmptyBasis { threshold });
    }
    let n = vectors.nrows();
    let mut out = Mat::from_fn(n, keep, |i, j| vectors[(i, j)]);
    for j in 0..keep {
        let col = out.col_as_slice_mut(j);
        if let Some(first) = col.iter().find(|v| v.abs() > 1e-10) {
            if *first < 0.0 {
                col.iter_mut().for_each(|v| *v = -*v);
            }
        }
    }
    Ok(MoranBasis {
        vectors: out,
        values: values[..keep].to_vec(),
    })
}

/// Moran coefficient of `v` under connectivity `C`:
/// `(N / 1'C1) * (v'MCMv / v'Mv)`.
pub fn moran_coefficient(v: &[f64], c: MatRef<'_, f64>) -> Result<f64> {
    check_connectivity(c)?;
    let n = c.nrows();
    if v.len() != n {
        return Err(Error::Dimension(format!("vector of length {} for {n} sites", v.len())));
    }
    let mean = v.iter().sum::<f64>() / n as f64;
    let z: Vec<f64> = v.iter().map(|x| x - mean).collect();
    let denom: f64 = z.iter().map(|x| x * x).sum();
    let scale = v.iter().map(|x| x.abs()).fold(0.0, f64::max).max(1.0);
    if !(denom > (1e-14 * scale).powi(2) * n as f64) {
        return Err(Error::UndefinedStatistic(
            "Moran coefficient of a constant vector".into(),
        ));
    }
    let mut num = 0.0;
    let mut total = 0.0;
    for j in 0..n {
        let mut acc = 0.0;
        for i in 0..n {
            acc += c[(i, j)] * z[i];
            total += c[(i, j)];
        }
        num += acc * z[j];
    }
    Ok(n as f64 / total * num / denom)
}
