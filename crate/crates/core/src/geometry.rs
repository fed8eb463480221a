//! Sites, distances, the minimum-spanning-tree range and k-means partitioning.

use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// A planar site location.
pub type Coord = [f64; 2];

#[inline]
pub(crate) fn dist(a: &Coord, b: &Coord) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

#[inline]
fn dist2(a: &Coord, b: &Coord) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

/// Regression input: site coordinates, response and covariates.
///
/// Column 0 of `x` is the intercept and must be identically one.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub sites: Vec<Coord>,
    pub y: Vec<f64>,
    pub x: Mat<f64>,
    pub names: Vec<String>,
}

impl Dataset {
    pub fn new(sites: Vec<Coord>, y: Vec<f64>, x: Mat<f64>, names: Vec<String>) -> Result<Self> {
        let n = sites.len();
        if n < 2 {
            return Err(Error::Input(format!("need at least 2 sites, got {n}")));
        }
        if y.len() != n || x.nrows() != n {
            return Err(Error::Dimension(format!(
                "{n} sites but {} responses and {} covariate rows",
                y.len(),
                x.nrows()
            )));
        }
        if x.ncols() == 0 || names.len() != x.ncols() {
            return Err(Error::Dimension(format!(
                "{} covariate columns but {} names",
                x.ncols(),
                names.len()
            )));
        }
        check_sites(&sites)?;
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!("non-finite response at row {i}")));
        }
        for i in 0..n {
            if x[(i, 0)] != 1.0 {
                return Err(Error::Input(format!(
                    "column 0 must be the intercept (all ones); row {i} holds {}",
                    x[(i, 0)]
                )));
            }
            for j in 1..x.ncols() {
                if !x[(i, j)].is_finite() {
                    return Err(Error::Input(format!(
                        "non-finite covariate '{}' at row {i}",
                        names[j]
                    )));
                }
            }
        }
        Ok(Self { sites, y, x, names })
    }

    pub fn n(&self) -> usize {
        self.sites.len()
    }

    pub fn k(&self) -> usize {
        self.x.ncols()
    }
}

/// A k-means partition of the sites into local clusters.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterPartition {
    /// Zero-based cluster index of every site.
    pub assignments: Vec<usize>,
    pub centroids: Vec<Coord>,
}

impl ClusterPartition {
    pub fn n_clusters(&self) -> usize {
        self.centroids.len()
    }

    /// Total sub-model count: the local clusters plus the global model if any.
    pub fn n_models(&self, include_global: bool) -> usize {
        self.n_clusters() + usize::from(include_global)
    }

    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_clusters()];
        for (i, &c) in self.assignments.iter().enumerate() {
            out[c].push(i);
        }
        out
    }
}

pub(crate) fn check_sites(sites: &[Coord]) -> Result<()> {
    match sites
        .iter()
        .position(|s| !(s[0].is_finite() && s[1].is_finite()))
    {
        Some(i) => Err(Error::Input(format!("non-finite coordinates at site {i}"))),
        None => Ok(()),
    }
}

/// Dense Euclidean distance matrix.
pub fn pairwise_distance(sites: &[Coord]) -> Result<Mat<f64>> {
    if sites.len() < 2 {
        return Err(Error::Input("need at least 2 sites".into()));
    }
    check_sites(sites)?;
    let n = sites.len();
    Ok(distance_block(sites, 0..n, 0..n))
}

/// Distances between the sites in `rows` and the sites in `cols`.
///
/// Callers that cannot afford the full N x N matrix walk it block by block.
pub fn distance_block(
    sites: &[Coord],
    rows: std::ops::Range<usize>,
    cols: std::ops::Range<usize>,
) -> Mat<f64> {
    let r0 = rows.start;
    let c0 = cols.start;
    Mat::from_fn(rows.len(), cols.len(), |i, j| {
        dist(&sites[r0 + i], &sites[c0 + j])
    })
}

/// Longest edge of a Euclidean minimum spanning tree over the sites.
///
/// Dense Prim in O(N^2) time and O(N) memory; distances are never stored.
pub fn mst_range(sites: &[Coord]) -> Result<f64> {
    let n = sites.len();
    if n < 2 {
        return Err(Error::Input(format!("need at least 2 sites, got {n}")));
    }
    check_sites(sites)?;
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    let mut longest = 0.0_f64;
    let mut current = 0;
    in_tree[0] = true;
    for _ in 1..n {
        let here = sites[current];
        let mut next = usize::MAX;
        let mut next_d = f64::INFINITY;
        for j in 0..n {
            if in_tree[j] {
                continue;
            }
            let d = dist2(&here, &sites[j]);
            if d < best[j] {
                best[j] = d;
            }
            if best[j] < next_d {
                next_d = best[j];
                next = j;
            }
        }
        in_tree[next] = true;
        longest = longest.max(next_d);
        current = next;
    }
    let r = longest.sqrt();
    if r == 0.0 {
        return Err(Error::DegenerateGeometry(
            "all sites coincide; the kernel range would be zero".into(),
        ));
    }
    Ok(r)
}

/// Number of local clusters giving roughly `target_per_cluster` sites each.
pub fn choose_cluster_count(n: usize, target_per_cluster: usize) -> usize {
    let target = target_per_cluster.max(1);
    ((n as f64 / target as f64).round() as usize).max(1)
}

const KMEANS_MAX_ITER: usize = 100;

/// Lloyd's k-means on raw coordinates with k-means++ seeding.
///
/// Deterministic for a fixed `seed`. Clusters that empty out are re-seeded
/// with the point farthest from its own centroid.
pub fn kmeans_partition(sites: &[Coord], n_clusters: usize, seed: u64) -> Result<ClusterPartition> {
    let n = sites.len();
    if n_clusters == 0 || n_clusters > n {
        return Err(Error::Input(format!(
            "cluster count {n_clusters} must be in 1..={n}"
        )));
    }
    check_sites(sites)?;
    if n_clusters == 1 {
        return Ok(ClusterPartition {
            assignments: vec![0; n],
            centroids: vec![centroid(sites, 0..n)],
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_seeds(sites, n_clusters, &mut rng);
    let mut assignments = vec![usize::MAX; n];

    for _ in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        for (i, s) in sites.iter().enumerate() {
            let c = nearest(&centroids, s);
            if assignments[i] != c {
                assignments[i] = c;
                changed = true;
            }
        }
        changed |= fill_empty(sites, &mut assignments, &mut centroids);
        update_centroids(sites, &assignments, &mut centroids);
        if !changed {
            break;
        }
    }
    if fill_empty(sites, &mut assignments, &mut centroids) {
        update_centroids(sites, &assignments, &mut centroids);
    }
    Ok(ClusterPartition {
        assignments,
        centroids,
    })
}

fn centroid(sites: &[Coord], idx: impl Iterator<Item = usize>) -> Coord {
    let (mut sx, mut sy, mut m) = (0.0, 0.0, 0usize);
    for i in idx {
        sx += sites[i][0];
        sy += sites[i][1];
        m += 1;
    }
    [sx / m as f64, sy / m as f64]
}

fn nearest(centroids: &[Coord], s: &Coord) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, ctr) in centroids.iter().enumerate() {
        let d = dist2(ctr, s);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

fn plus_plus_seeds(sites: &[Coord], k: usize, rng: &mut ChaCha8Rng) -> Vec<Coord> {
    let n = sites.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![sites[first]];
    let mut d2: Vec<f64> = sites.iter().map(|s| dist2(s, &sites[first])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    pick = Some(i);
                    if target < w {
                        break;
                    }
                    target -= w;
                }
            }
            pick.expect("positive total implies a positive entry")
        } else {
            // every remaining site duplicates a centroid
            (0..n).find(|&i| !chosen[i]).unwrap_or(0)
        };
        chosen[pick] = true;
        centroids.push(sites[pick]);
        for (i, s) in sites.iter().enumerate() {
            d2[i] = d2[i].min(dist2(s, &sites[pick]));
        }
    }
    centroids
}

fn update_centroids(sites: &[Coord], assignments: &[usize], centroids: &mut [Coord]) {
    let k = centroids.len();
    let mut sum = vec![[0.0_f64; 2]; k];
    let mut count = vec![0usize; k];
    for (s, &c) in sites.iter().zip(assignments) {
        sum[c][0] += s[0];
        sum[c][1] += s[1];
        count[c] += 1;
    }
    for c in 0..k {
        if count[c] > 0 {
            centroids[c] = [sum[c][0] / count[c] as f64, sum[c][1] / count[c] as f64];
        }
    }
}

/// Gives every empty cluster the site farthest from its own centroid, taken
/// from a cluster that can spare one. Returns whether anything moved.
fn fill_empty(sites: &[Coord], assignments: &mut [usize], centroids: &mut [Coord]) -> bool {
    let k = centroids.len();
    let mut moved = false;
    loop {
        let mut count = vec![0usize; k];
        for &c in assignments.iter() {
            count[c] += 1;
        }
        let Some(empty) = (0..k).find(|&c| count[c] == 0) else {
            return moved;
        };
        let mut far = usize::MAX;
        let mut far_d = -1.0;
        for (i, s) in sites.iter().enumerate() {
            let c = assignments[i];
            if count[c] < 2 {
                continue;
            }
            let d = dist2(s, &centroids[c]);
            if d > far_d {
                far_d = d;
                far = i;
            }
        }
        assignments[far] = empty;
        centroids[empty] = sites[far];
        moved = true;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_sites(n: usize, seed: u64) -> Vec<Coord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect()
    }

    #[test]
    fn distance_three_four_five() {
        let d = pairwise_distance(&[[0.0, 0.0], [3.0, 4.0]]).unwrap();
        assert_eq!(d[(0, 1)], 5.0);
        assert_eq!(d[(1, 0)], 5.0);
        assert_eq!(d[(0, 0)], 0.0);
    }

    #[test]
    fn distance_duplicate_sites_is_zero() {
        let d = pairwise_distance(&[[1.5, -2.0], [1.5, -2.0]]).unwrap();
        assert_eq!(d[(0, 1)], 0.0);
    }

    #[test]
    fn distance_matches_double_loop() {
        let sites = random_sites(10, 3);
        let d = pairwise_distance(&sites).unwrap();
        for i in 0..10 {
            for j in 0..10 {
                let dx = sites[i][0] - sites[j][0];
                let dy = sites[i][1] - sites[j][1];
                let oracle = (dx * dx + dy * dy).sqrt();
                assert!((d[(i, j)] - oracle).abs() < 1e-12);
            }
        }
        for i in 0..10 {
            for j in 0..10 {
                for k in 0..10 {
                    assert!(d[(i, k)] <= d[(i, j)] + d[(j, k)] + 1e-12);
                }
            }
        }
    }

    #[test]
    fn distance_rejects_nan() {
        assert!(matches!(
            pairwise_distance(&[[0.0, 0.0], [f64::NAN, 1.0]]),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn mst_unit_square() {
        let r = mst_range(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]).unwrap();
        assert!((r - 1.0).abs() < 1e-15);
    }

    #[test]
    fn mst_collinear_chain() {
        let r = mst_range(&[[0.0, 0.0], [1.0, 0.0], [5.0, 0.0]]).unwrap();
        assert!((r - 4.0).abs() < 1e-15);
    }

    #[test]
    fn mst_coincident_sites_error() {
        assert!(matches!(
            mst_range(&[[2.0, 2.0]; 4]),
            Err(Error::DegenerateGeometry(_))
        ));
        // partial duplicates are fine
        assert_eq!(mst_range(&[[0.0, 0.0], [0.0, 0.0], [2.0, 0.0]]).unwrap(), 2.0);
    }

    #[test]
    fn cluster_count_rule() {
        assert_eq!(choose_cluster_count(41266, 600), 69);
        assert_eq!(choose_cluster_count(600, 600), 1);
        assert_eq!(choose_cluster_count(100, 600), 1);
        assert_eq!(choose_cluster_count(1600, 600), 3);
    }

    #[test]
    fn kmeans_single_cluster() {
        let sites = random_sites(25, 1);
        let p = kmeans_partition(&sites, 1, 9).unwrap();
        assert!(p.assignments.iter().all(|&c| c == 0));
    }

    #[test]
    fn kmeans_singletons() {
        let sites = random_sites(12, 2);
        let p = kmeans_partition(&sites, 12, 5).unwrap();
        let mut seen = p.assignments.clone();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 12);
    }

    #[test]
    fn kmeans_too_many_clusters() {
        assert!(kmeans_partition(&random_sites(3, 0), 4, 0).is_err());
    }

    #[test]
    fn kmeans_separates_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut sites = Vec::new();
        for centre in [[0.0, 0.0], [100.0, 100.0]] {
            for _ in 0..50 {
                sites.push([
                    centre[0] + rng.random::<f64>() * 4.0 - 2.0,
                    centre[1] + rng.random::<f64>() * 4.0 - 2.0,
                ]);
            }
        }
        // oracle: the blobs really are separated
        let max_within = (0..100)
            .flat_map(|i| (0..100).map(move |j| (i, j)))
            .filter(|&(i, j)| (i < 50) == (j < 50))
            .map(|(i, j)| dist(&sites[i], &sites[j]))
            .fold(0.0, f64::max);
        let min_cross = (0..50)
            .flat_map(|i| (50..100).map(move |j| (i, j)))
            .map(|(i, j)| dist(&sites[i], &sites[j]))
            .fold(f64::INFINITY, f64::min);
        assert!(max_within < min_cross);

        for seed in 0..5 {
            let p = kmeans_partition(&sites, 2, seed).unwrap();
            let a = p.assignments[0];
            assert!(p.assignments[..50].iter().all(|&c| c == a));
            assert!(p.assignments[50..].iter().all(|&c| c != a));
        }
    }

    #[test]
    fn kmeans_duplicates_never_leave_empty_clusters() {
        let mut sites = vec![[0.0, 0.0]; 6];
        sites.push([1.0, 1.0]);
        let p = kmeans_partition(&sites, 4, 3).unwrap();
        let members = p.members();
        assert!(members.iter().all(|m| !m.is_empty()));
    }

    proptest! {
        #[test]
        fn mst_range_rigid_motion_and_scaling(
            pts in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..25),
            theta in 0.0f64..6.3,
            shift in (-50.0f64..50.0, -50.0f64..50.0),
            scale in 0.1f64..10.0,
        ) {
            let sites: Vec<Coord> = pts.iter().map(|&(x, y)| [x, y]).collect();
            let r = mst_range(&sites).unwrap();
            let (s, c) = theta.sin_cos();
            let moved: Vec<Coord> = sites
                .iter()
                .map(|p| [c * p[0] - s * p[1] + shift.0, s * p[0] + c * p[1] + shift.1])
                .collect();
            prop_assert!((mst_range(&moved).unwrap() - r).abs() < 1e-9 * (1.0 + r));
            let scaled: Vec<Coord> = sites.iter().map(|p| [p[0] * scale, p[1] * scale]).collect();
            prop_assert!((mst_range(&scaled).unwrap() - scale * r).abs() < 1e-9 * (1.0 + scale * r));
        }

        #[test]
        fn kmeans_is_a_reproducible_partition(
            pts in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 5..60),
            k in 1usize..5,
            seed in any::<u64>(),
        ) {
            let sites: Vec<Coord> = pts.iter().map(|&(x, y)| [x, y]).collect();
            let k = k.min(sites.len());
            let a = kmeans_partition(&sites, k, seed).unwrap();
            let b = kmeans_partition(&sites, k, seed).unwrap();
            prop_assert_eq!(&a, &b);
            let members = a.members();
            prop_assert_eq!(members.iter().map(Vec::len).sum::<usize>(), sites.len());
            prop_assert!(members.iter().all(|m| !m.is_empty()));
        }
    }
}
