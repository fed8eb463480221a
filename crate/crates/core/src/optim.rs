//! Box-constrained BFGS with Armijo backtracking.

#[derive(Debug, Clone, Copy)]
pub(crate) struct BfgsOptions {
    pub max_iter: usize,
    /// Relative change in the objective below which iteration stops.
    pub ftol: f64,
    pub gtol: f64,
    pub max_step: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            ftol: 1e-8,
            gtol: 1e-6,
            max_step: 4.0,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct BfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimizes `f` over the box `[lo, hi]`. `value(x)` returns the objective
/// only; `value_grad(x)` returns it with the gradient. A non-finite value
/// at a trial point is treated as an infinitely bad point; a non-finite
/// value at the start is returned as an error carrying the start.
pub(crate) fn minimize<V, G>(
    mut value: V,
    mut value_grad: G,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    opts: &BfgsOptions,
) -> Result<BfgsResult, BfgsResult>
where
    V: FnMut(&[f64]) -> f64,
    G: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let p = x0.len();
    let clamp = |x: &mut [f64]| {
        for i in 0..p {
            x[i] = x[i].clamp(lo[i], hi[i]);
        }
    };
    let mut x = x0.to_vec();
    clamp(&mut x);
    let (mut f, mut g) = value_grad(&x);
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(BfgsResult {
            x,
            f,
            iterations: 0,
            converged: false,
        });
    }
    let mut h = identity(p);
    let mut first = true;
    let mut iter = 0;
    let mut converged = false;
    while iter < opts.max_iter {
        iter += 1;
        let proj_g = projected_gradient(&x, &g, lo, hi);
        if norm(&proj_g) < opts.gtol {
            converged = true;
            break;
        }
        let mut d = matvec(&h, &g);
        d.iter_mut().for_each(|v| *v = -*v);
        // Freeze coordinates pinned at a bound and pushing outward.
        for i in 0..p {
            if (x[i] <= lo[i] && d[i] < 0.0) || (x[i] >= hi[i] && d[i] > 0.0) {
                d[i] = 0.0;
            }
        }
        let mut slope = dot(&g, &d);
        if slope >= 0.0 || !slope.is_finite() {
            h = identity(p);
            d = g.iter().map(|v| -v).collect();
            for i in 0..p {
                if (x[i] <= lo[i] && d[i] < 0.0) || (x[i] >= hi[i] && d[i] > 0.0) {
                    d[i] = 0.0;
                }
            }
            slope = dot(&g, &d);
            if slope >= 0.0 {
                converged = true;
                break;
            }
        }
        let dn = norm(&d);
        let mut step = if dn > opts.max_step { opts.max_step / dn } else { 1.0 };
        let mut accepted = None;
        for _ in 0..50 {
            let mut xt: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + step * b).collect();
            clamp(&mut xt);
            let ft = value(&xt);
            if ft.is_finite() && ft <= f + 1e-4 * step * slope {
                accepted = Some(xt);
                break;
            }
            step *= 0.5;
        }
        let Some(xn) = accepted else {
            converged = true;
            break;
        };
        let (fn_, gn) = value_grad(&xn);
        if !fn_.is_finite() || gn.iter().any(|v| !v.is_finite()) {
            break;
        }
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let df = (f - fn_).abs();
        let f_old = f;
        x = xn;
        f = fn_;
        g = gn;
        let sy = dot(&s, &yv);
        if sy > 1e-12 * norm(&s) * norm(&yv) {
            if first {
                let scale = sy / dot(&yv, &yv);
                h = identity(p);
                h.iter_mut().for_each(|r| r.iter_mut().for_each(|v| *v *= scale));
                first = false;
            }
            bfgs_update(&mut h, &s, &yv, sy);
        }
        if df < opts.ftol * (1.0 + f_old.abs()) {
            converged = true;
            break;
        }
    }
    Ok(BfgsResult {
        x,
        f,
        iterations: iter,
        converged,
    })
}

fn projected_gradient(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            if (x[i] <= lo[i] && g[i] > 0.0) || (x[i] >= hi[i] && g[i] < 0.0) {
                0.0
            } else {
                g[i]
            }
        })
        .collect()
}

fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let p = s.len();
    let rho = 1.0 / sy;
    let hy = matvec(h, y);
    let yhy = dot(y, &hy);
    for i in 0..p {
        for j in 0..p {
            h[i][j] += (1.0 + rho * yhy) * rho * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
        }
    }
}

fn identity(p: usize) -> Vec<Vec<f64>> {
    (0..p)
        .map(|i| (0..p).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

fn matvec(h: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    h.iter().map(|r| dot(r, v)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
