//! Local Outlier Factor with exact neighbour search.

/// Added to mean reachability distances so duplicate points get a large
/// finite density instead of infinity.
pub const DENSITY_EPS: f64 = 1e-10;

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// LOF of every point with `k` neighbours. Neighbourhoods include every
/// point tied with the k-th nearest. Scores near 1 are inliers.
///
/// Panics unless `1 ≤ k < points.len()`.
pub fn lof_scores(points: &[Vec<f64>], k: usize) -> Vec<f64> {
    let n = points.len();
    assert!(k >= 1 && k < n, "need 1 <= k < n (k = {k}, n = {n})");
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = euclidean(&points[i], &points[j]);
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    let mut k_dist = vec![0.0; n];
    let mut neigh: Vec<Vec<usize>> = Vec::with_capacity(n);
    for i in 0..n {
        let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        others.sort_by(|&a, &b| dist[i * n + a].total_cmp(&dist[i * n + b]).then(a.cmp(&b)));
        let kd = dist[i * n + others[k - 1]];
        k_dist[i] = kd;
        neigh.push(
            others
                .into_iter()
                .take_while(|&j| dist[i * n + j] <= kd)
                .collect(),
        );
    }
    let lrd: Vec<f64> = (0..n)
        .map(|i| {
            let s: f64 = neigh[i]
                .iter()
                .map(|&o| k_dist[o].max(dist[i * n + o]))
                .sum();
            1.0 / (s / neigh[i].len() as f64 + DENSITY_EPS)
        })
        .collect();
    (0..n)
        .map(|i| neigh[i].iter().map(|&o| lrd[o]).sum::<f64>() / (neigh[i].len() as f64 * lrd[i]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal, stream};
    use proptest::prelude::*;

    /// Definition-level reference: every quantity recomputed from scratch.
    fn reference(points: &[Vec<f64>], k: usize) -> Vec<f64> {
        let n = points.len();
        let d = |a: usize, b: usize| euclidean(&points[a], &points[b]);
        let k_distance = |p: usize| {
            let mut ds: Vec<f64> = (0..n).filter(|&o| o != p).map(|o| d(p, o)).collect();
            ds.sort_by(f64::total_cmp);
            ds[k - 1]
        };
        let hood = |p: usize| -> Vec<usize> {
            (0..n)
                .filter(|&o| o != p && d(p, o) <= k_distance(p))
                .collect()
        };
        let lrd = |p: usize| {
            let h = hood(p);
            let mean = h.iter().map(|&o| k_distance(o).max(d(p, o))).sum::<f64>() / h.len() as f64;
            1.0 / (mean + DENSITY_EPS)
        };
        (0..n)
            .map(|p| {
                let h = hood(p);
                h.iter().map(|&o| lrd(o)).sum::<f64>() / h.len() as f64 / lrd(p)
            })
            .collect()
    }

    #[test]
    fn equidistant_triangle() {
        let pts = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.5, 3f64.sqrt() / 2.0]];
        for s in lof_scores(&pts, 2) {
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn grid_interior_is_inlier_and_far_point_is_max() {
        let mut pts = Vec::new();
        for x in 0..10 {
            for y in 0..10 {
                pts.push(vec![f64::from(x), f64::from(y)]);
            }
        }
        let s = lof_scores(&pts, 8);
        assert!((0.8..=1.2).contains(&s[5 * 10 + 5]));

        let mut rng = stream(1, 1);
        let mut pts: Vec<Vec<f64>> = (0..100)
            .map(|_| vec![normal(&mut rng), normal(&mut rng)])
            .collect();
        pts.push(vec![10.0, 0.0]);
        let s = lof_scores(&pts, 10);
        let top = (0..s.len()).max_by(|&a, &b| s[a].total_cmp(&s[b])).unwrap();
        assert_eq!(top, 100);
    }

    #[test]
    fn duplicates_stay_finite() {
        let pts = vec![vec![0.0], vec![0.0], vec![0.0], vec![5.0]];
        let s = lof_scores(&pts, 2);
        assert!(s.iter().all(|x| x.is_finite()));
        assert!(s[3] > s[0]);
        for (a, b) in s.iter().zip(reference(&pts, 2)) {
            assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn matches_reference(seed in 0u64..1000, n in 3usize..60, kk in 1usize..25, grid in any::<bool>()) {
            let mut rng = stream(seed, 2);
            let pts: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..3).map(|_| {
                    let v = normal(&mut rng);
                    if grid { v.round() } else { v }
                }).collect())
                .collect();
            let k = kk.min(n - 1);
            let a = lof_scores(&pts, k);
            let b = reference(&pts, k);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-9 * y.abs().max(1.0));
            }
        }
    }
}
