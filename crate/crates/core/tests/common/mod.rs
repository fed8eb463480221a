//! Small dense linear algebra on nested vectors, used as independent
//! oracles. Nothing here calls into the crate's factorizations.
#![allow(dead_code)]

use esfma::basis::{connectivity_from_sites, moran_basis, ConnectivityConfig};
use esfma::geometry::mst_range;
use esfma::simulate::grid_sites;
use esfma::{BasisOptions, Coord, Dataset, Mat, MoranBasis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Dense = Vec<Vec<f64>>;

pub fn zeros(r: usize, c: usize) -> Dense {
    vec![vec![0.0; c]; r]
}

pub fn identity(n: usize) -> Dense {
    let mut m = zeros(n, n);
    for i in 0..n {
        m[i][i] = 1.0;
    }
    m
}

pub fn from_mat(m: &Mat<f64>) -> Dense {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

pub fn transpose(a: &Dense) -> Dense {
    let (r, c) = (a.len(), a[0].len());
    (0..c).map(|j| (0..r).map(|i| a[i][j]).collect()).collect()
}

pub fn matmul(a: &Dense, b: &Dense) -> Dense {
    let (n, m, p) = (a.len(), b.len(), b[0].len());
    let mut out = zeros(n, p);
    for i in 0..n {
        for k in 0..m {
            let aik = a[i][k];
            for j in 0..p {
                out[i][j] += aik * b[k][j];
            }
        }
    }
    out
}

pub fn matvec(a: &Dense, x: &[f64]) -> Vec<f64> {
    a.iter().map(|row| row.iter().zip(x).map(|(p, q)| p * q).sum()).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

/// LU with partial pivoting: returns (packed LU, permutation, sign).
fn lu(a: &Dense) -> (Dense, Vec<usize>, f64) {
    let n = a.len();
    let mut m = a.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut sign = 1.0;
    for col in 0..n {
        let p = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs())).unwrap();
        if p != col {
            m.swap(p, col);
            perm.swap(p, col);
            sign = -sign;
        }
        let piv = m[col][col];
        assert!(piv != 0.0, "singular matrix in oracle");
        for r in col + 1..n {
            let f = m[r][col] / piv;
            m[r][col] = f;
            for c in col + 1..n {
                m[r][c] -= f * m[col][c];
            }
        }
    }
    (m, perm, sign)
}

/// log |det A| for a matrix with positive determinant.
pub fn log_det(a: &Dense) -> f64 {
    let (m, _, sign) = lu(a);
    let mut s = sign;
    let mut acc = 0.0;
    for (i, row) in m.iter().enumerate() {
        s *= row[i].signum();
        acc += row[i].abs().ln();
    }
    assert!(s > 0.0, "determinant is not positive");
    acc
}

pub fn solve(a: &Dense, b: &[f64]) -> Vec<f64> {
    let n = a.len();
    let (m, perm, _) = lu(a);
    let mut x: Vec<f64> = perm.iter().map(|&p| b[p]).collect();
    for i in 0..n {
        for j in 0..i {
            x[i] -= m[i][j] * x[j];
        }
    }
    for i in (0..n).rev() {
        for j in i + 1..n {
            x[i] -= m[i][j] * x[j];
        }
        x[i] /= m[i][i];
    }
    x
}

pub fn inverse(a: &Dense) -> Dense {
    let n = a.len();
    let cols: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            solve(a, &e)
        })
        .collect();
    transpose(&cols)
}

/// Grid basis with at most `l` eigenvectors.
pub fn grid_basis(side: usize, l: usize) -> (Vec<Coord>, MoranBasis) {
    let sites = grid_sites(side);
    let r = mst_range(&sites).unwrap();
    let c = connectivity_from_sites(&sites, &ConnectivityConfig::new(r).unwrap()).unwrap();
    let basis = moran_basis(c.as_ref(), Some(l), &BasisOptions::default()).unwrap();
    (sites, basis)
}

/// Intercept plus `k - 1` standard normal covariates and a normal response.
pub fn random_dataset(sites: &[Coord], k: usize, seed: u64) -> Dataset {
    let n = sites.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Mat::from_fn(n, k, |_, j| if j == 0 { 1.0 } else { rng.random::<f64>() * 2.0 - 1.0 });
    let y: Vec<f64> = (0..n)
        .map(|i| {
            let s = sites[i];
            (3.0 * s[0]).sin() + s[1] + 0.3 * (rng.random::<f64>() - 0.5)
        })
        .collect();
    let names = (0..k).map(|j| format!("x{j}")).collect();
    Dataset::new(sites.to_vec(), y, x, names).unwrap()
}

/// Interaction matrix `x_k(s_i) e_l(s_i)` over the varying covariates,
/// column `j * L + l`.
pub fn interactions(x: &Mat<f64>, e: &Dense, svc: &[bool]) -> Dense {
    let n = x.nrows();
    let l = e[0].len();
    let ks: Vec<usize> = (0..svc.len()).filter(|&k| svc[k]).collect();
    let mut out = zeros(n, ks.len() * l);
    for i in 0..n {
        for (j, &k) in ks.iter().enumerate() {
            for c in 0..l {
                out[i][j * l + c] = x[(i, k)] * e[i][c];
            }
        }
    }
    out
}

/// `sqrt(tau2_k) (lambda_l / lambda_1)^(alpha_k / 2)` over varying covariates.
pub fn v_diag(tau2: &[f64], alpha: &[f64], svc: &[bool], ratios: &[f64]) -> Vec<f64> {
    let mut v = Vec::new();
    for k in 0..svc.len() {
        if svc[k] {
            for r in ratios {
                v.push(tau2[k].sqrt() * r.powf(alpha[k] / 2.0));
            }
        }
    }
    v
}

/// Textbook profiled REML of y ~ N(Xb, s2 H), H = I + A V^2 A', by direct
/// N x N algebra, with the constant that accompanies the `-W/2` form.
pub fn dense_reml(x: &Dense, y: &[f64], a: &Dense, v: &[f64]) -> f64 {
    let n = y.len();
    let k = x[0].len();
    let mut h = identity(n);
    for i in 0..n {
        for j in 0..n {
            h[i][j] += (0..v.len()).map(|p| a[i][p] * v[p] * v[p] * a[j][p]).sum::<f64>();
        }
    }
    let hinv = inverse(&h);
    let xt = transpose(x);
    let xthx = matmul(&matmul(&xt, &hinv), x);
    let hy = matvec(&hinv, y);
    let b = solve(&xthx, &matvec(&xt, &hy));
    let r: Vec<f64> = (0..n).map(|i| y[i] - dot(&x[i], &b)).collect();
    let ypy = dot(&r, &matvec(&hinv, &r));
    let nk = (n - k) as f64;
    -nk / 2.0 * (2.0 * std::f64::consts::PI * ypy / nk).ln() - 0.5 * log_det(&h) - 0.5 * log_det(&xthx) - nk / 2.0 - k as f64 / 2.0
}
