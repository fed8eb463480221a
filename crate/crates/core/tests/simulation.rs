use esfma::simulate::{generate_covariate, generate_scenario, grid_sites, score, GpSampler};
use esfma::{Coord, FitOptions, Mat, ReesfPlan, SimConfig, BasisOptions};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn d(a: &Coord, b: &Coord) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn covariance(draws: &Mat<f64>) -> Vec<Vec<f64>> {
    let (n, m) = (draws.nrows(), draws.ncols());
    let mean: Vec<f64> = (0..n).map(|i| (0..m).map(|t| draws[(i, t)]).sum::<f64>() / m as f64).collect();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| (0..m).map(|t| (draws[(i, t)] - mean[i]) * (draws[(j, t)] - mean[j])).sum::<f64>() / (m - 1) as f64)
                .collect()
        })
        .collect()
}

#[test]
fn gp_covariance_on_small_grid() {
    let sites = grid_sites(5);
    let (tau2, r) = (2.0, 0.5);
    let g = GpSampler::new(&sites, r).unwrap();
    let draws = g.draw_many(tau2, 5000, &mut ChaCha8Rng::seed_from_u64(1));
    let cov = covariance(&draws);
    let mut worst = 0.0f64;
    for i in 0..25 {
        for j in 0..25 {
            worst = worst.max((cov[i][j] - tau2 * (-d(&sites[i], &sites[j]) / r).exp()).abs());
        }
    }
    assert!(worst < 0.1 * tau2, "{worst}");
}

#[test]
fn two_site_correlation() {
    let sites = vec![[0.0, 0.0], [0.7, 0.0]];
    let g = GpSampler::new(&sites, 0.7).unwrap();
    let draws = g.draw_many(1.0, 100_000, &mut ChaCha8Rng::seed_from_u64(2));
    let cov = covariance(&draws);
    let corr = cov[0][1] / (cov[0][0] * cov[1][1]).sqrt();
    assert!((corr - (-1.0f64).exp()).abs() < 0.01, "{corr}");
}

#[test]
fn covariate_variance_and_far_correlation() {
    // Two sites much further apart than the covariate range.
    let sites = vec![[0.0, 0.0], [40.0, 0.0]];
    let reps = 100_000;
    let (mut s0, mut s00, mut s1, mut s11, mut s01) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for seed in 0..reps {
        let x = generate_covariate(&sites, seed).unwrap();
        s0 += x[0];
        s1 += x[1];
        s00 += x[0] * x[0];
        s11 += x[1] * x[1];
        s01 += x[0] * x[1];
    }
    let m = reps as f64;
    let (m0, m1) = (s0 / m, s1 / m);
    let v0 = s00 / m - m0 * m0;
    let v1 = s11 / m - m1 * m1;
    let c = s01 / m - m0 * m1;
    assert!((v0 - 0.5).abs() < 0.025 && (v1 - 0.5).abs() < 0.025, "{v0} {v1}");
    assert!((c / (v0 * v1).sqrt()).abs() < 0.02, "{}", c / (v0 * v1).sqrt());
}

fn surface_variance(beta: &Mat<f64>, k: usize) -> f64 {
    let n = beta.nrows() as f64;
    let mean = (0..beta.nrows()).map(|i| beta[(i, k)]).sum::<f64>() / n;
    (0..beta.nrows()).map(|i| (beta[(i, k)] - mean).powi(2)).sum::<f64>() / n
}

#[test]
fn constant_coefficient_data_gives_flat_fitted_surfaces() {
    let plan = ReesfPlan::new(&grid_sites(20), None, &BasisOptions::default()).unwrap();
    let base = SimConfig::mixed(20, 1.0, 0).without_variation();
    let k = base.n_svc();
    let mut mean = vec![0.0; k];
    for seed in 0..20 {
        let truth = generate_scenario(&SimConfig { seed, ..base.clone() }).unwrap();
        let fit = plan.fit(&truth.dataset, Some(&truth.svc), &FitOptions::default()).unwrap();
        for (j, m) in mean.iter_mut().enumerate() {
            *m += surface_variance(&fit.beta, j) / 20.0;
        }
    }
    assert!(mean.iter().all(|t| *t < 0.05), "{mean:?}");
}

#[test]
fn fitted_variance_ranks_strong_and_weak_like_the_truth() {
    let plan = ReesfPlan::new(&grid_sites(20), None, &BasisOptions::default()).unwrap();
    let mut agree = 0;
    for seed in 0..20 {
        let truth = generate_scenario(&SimConfig::mixed(20, 1.0, 100 + seed)).unwrap();
        let fit = plan.fit(&truth.dataset, Some(&truth.svc), &FitOptions::default()).unwrap();
        let p = fit.sub_fits[0].process_variance();
        // Column 2 is the strong coefficient, column 3 a weak one.
        let realized = surface_variance(&truth.beta, 2) > surface_variance(&truth.beta, 3);
        if (p[2] > p[3]) == realized {
            agree += 1;
        }
    }
    assert!(agree >= 16, "{agree} of 20");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn same_config_same_truth(seed in 0u64..1_000_000, side in 3usize..9) {
        let cfg = SimConfig::mixed(side, 1.0, seed);
        let a = generate_scenario(&cfg).unwrap();
        let b = generate_scenario(&cfg).unwrap();
        prop_assert_eq!(&a.dataset.y, &b.dataset.y);
        prop_assert!(a.beta == b.beta && a.dataset.x == b.dataset.x);
    }

    #[test]
    fn rmse_bounds_mae(vals in prop::collection::vec(-10.0f64..10.0, 2..60)) {
        let n = vals.len() / 2;
        let a = Mat::from_fn(n, 1, |i, _| vals[i]);
        let b = Mat::from_fn(n, 1, |i, _| vals[n + i]);
        let s = score(&a, &b).unwrap();
        prop_assert!(s.rmse[0] + 1e-12 >= s.mae[0]);
    }

    #[test]
    fn gp_law_is_exchangeable(seed in 0u64..1000) {
        // Covariance of the relabeled process equals the relabeled covariance,
        // so relabeling must not change the empirical covariance beyond noise.
        let sites = grid_sites(3);
        let mut perm: Vec<usize> = (0..9).collect();
        use rand::seq::SliceRandom;
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let shuffled: Vec<Coord> = perm.iter().map(|&i| sites[i]).collect();
        let g = GpSampler::new(&shuffled, 1.0).unwrap();
        let cov = covariance(&g.draw_many(1.0, 4000, &mut ChaCha8Rng::seed_from_u64(seed)));
        for a in 0..9 {
            for b in 0..9 {
                let want = (-d(&sites[perm[a]], &sites[perm[b]])).exp();
                prop_assert!((cov[a][b] - want).abs() < 0.15);
            }
        }
    }
}
