//! Block Krylov eigensolver for the leading eigenpairs of a symmetric
//! positive-semidefinite operator, with full reorthogonalisation and
//! thick restarts.

use faer::{Mat, MatRef, Side};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::basis::center_columns;
use crate::{Error, Result};

const BLOCK: usize = 32;
const TOL: f64 = 2e-9;
const MAX_RESTARTS: usize = 60;
const SEED: u64 = 0x5eed_0e16;

/// Leading `want` eigenpairs of `apply`, descending. The operator is
/// assumed to annihilate the constant vector, so iterates are kept
/// centered.
pub(crate) fn top_eigenpairs<F>(n: usize, want: usize, apply: F) -> Result<(Vec<f64>, Mat<f64>)>
where
    F: Fn(MatRef<'_, f64>) -> Mat<f64>,
{
    if want == 0 || want >= n {
        return Err(Error::Eigen(format!("cannot extract {want} of {n} eigenpairs iteratively")));
    }
    let b = BLOCK.min(n - want).max(1);
    let max_basis = (3 * want).max(want + 8 * b).min(n - 1);
    let keep = (want + b).min(max_basis - b);

    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut q = Mat::<f64>::zeros(n, 0);
    let mut aq = Mat::<f64>::zeros(n, 0);
    let mut block = random_block(n, b, &mut rng);
    let mut restarts = 0;

    loop {
        block = orthonormalize_against(&q, block, &mut rng);
        let y = apply(block.as_ref());
        q = hcat(&q, &block);
        aq = hcat(&aq, &y);
        let m = q.ncols();
        // Rayleigh-Ritz is the expensive step, so only run it on a full basis.
        if m + b <= max_basis {
            block = y;
            continue;
        }

        // Rayleigh-Ritz on span(Q).
        let mut t = q.transpose() * &aq;
        symmetrize(&mut t);
        let evd = t
            .self_adjoint_eigen(Side::Lower)
            .map_err(|e| Error::Eigen(format!("{e:?}")))?;
        let s = evd.S().column_vector();
        let u = evd.U();
        let order: Vec<usize> = (0..m).rev().collect();
        let theta: Vec<f64> = order.iter().map(|&i| s[i]).collect();
        let sel = Mat::from_fn(m, m.min(keep.max(want)), |i, j| u[(i, order[j])]);
        let ritz = &q * &sel;
        let aritz = &aq * &sel;
        let scale = theta[0].abs().max(f64::MIN_POSITIVE);

        let mut resid = aritz.clone();
        let mut unconverged = Vec::new();
        for j in 0..sel.ncols() {
            let col = resid.col_as_slice_mut(j);
            let rc = ritz.col_as_slice(j);
            for (r, x) in col.iter_mut().zip(rc) {
                *r -= theta[j] * x;
            }
            let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
            if j < want && norm > TOL * scale {
                unconverged.push(j);
            }
        }
        if unconverged.is_empty() {
            let vectors = Mat::from_fn(n, want, |i, j| ritz[(i, j)]);
            return Ok((theta[..want].to_vec(), vectors));
        }

        restarts += 1;
        if restarts > MAX_RESTARTS {
            return Err(Error::Eigen(format!(
                "block Krylov did not converge: {} of {want} pairs above tolerance",
                unconverged.len()
            )));
        }
        let k = keep.min(sel.ncols());
        q = Mat::from_fn(n, k, |i, j| ritz[(i, j)]);
        aq = Mat::from_fn(n, k, |i, j| aritz[(i, j)]);
        let cols: Vec<usize> = unconverged.iter().copied().take(b).collect();
        block = Mat::from_fn(n, cols.len().max(1), |i, j| resid[(i, cols[j.min(cols.len() - 1)])]);
    }
}

fn random_block(n: usize, b: usize, rng: &mut ChaCha8Rng) -> Mat<f64> {
    let mut x = Mat::from_fn(n, b, |_, _| StandardNormal.sample(rng));
    center_columns(&mut x);
    x
}

fn hcat(a: &Mat<f64>, b: &Mat<f64>) -> Mat<f64> {
    let (n, p, q) = (a.nrows().max(b.nrows()), a.ncols(), b.ncols());
    Mat::from_fn(n, p + q, |i, j| if j < p { a[(i, j)] } else { b[(i, j - p)] })
}

fn symmetrize(t: &mut Mat<f64>) {
    let m = t.nrows();
    for j in 0..m {
        for i in (j + 1)..m {
            let v = 0.5 * (t[(i, j)] + t[(j, i)]);
            t[(i, j)] = v;
            t[(j, i)] = v;
        }
    }
}

/// Projects `x` off span(`q`) twice, orthonormalizes it and replaces any
/// rank-deficient directions with fresh random ones.
fn orthonormalize_against(q: &Mat<f64>, mut x: Mat<f64>, rng: &mut ChaCha8Rng) -> Mat<f64> {
    let n = x.nrows();
    let b = x.ncols();
    center_columns(&mut x);
    for attempt in 0..4 {
        for _ in 0..2 {
            if q.ncols() > 0 {
                let coef = q.transpose() * &x;
                x -= q * &coef;
            }
        }
        let norms: Vec<f64> = (0..b)
            .map(|j| x.col_as_slice(j).iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let max_norm = norms.iter().cloned().fold(0.0, f64::max);
        let qr = x.qr();
        let r = qr.R();
        let ok = (0..b.min(r.nrows())).all(|j| r[(j, j)].abs() > 1e-10 * max_norm.max(1e-300));
        let mut qx = qr.compute_thin_Q();
        if ok && max_norm > 0.0 {
            for _ in 0..2 {
                if q.ncols() > 0 {
                    let coef = q.transpose() * &qx;
                    qx -= q * &coef;
                }
                let qr2 = qx.qr();
                qx = qr2.compute_thin_Q();
            }
            return qx;
        }
        let _ = attempt;
        x = random_block(n, b, rng);
    }
    x
}
