//! Isolation Forest.

use rand::Rng;
use rayon::prelude::*;

use crate::rng::{self, Prng};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Average unsuccessful-search path length in a binary search tree of `n`
/// points: `2H(n−1) − 2(n−1)/n`.
pub fn average_path_length(n: usize) -> f64 {
    match n {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let m = (n - 1) as f64;
            2.0 * (m.ln() + EULER_GAMMA) - 2.0 * m / n as f64
        }
    }
}

/// `s = 2^(−E[h]/c(ψ))`.
pub fn anomaly_score(mean_path: f64, psi: usize) -> f64 {
    let c = average_path_length(psi);
    if c == 0.0 {
        return 0.5;
    }
    2f64.powf(-mean_path / c)
}

enum Node {
    Leaf {
        size: usize,
    },
    Split {
        attr: usize,
        at: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

fn build(
    points: &[Vec<f64>],
    idx: &mut [usize],
    depth: usize,
    limit: usize,
    rng: &mut Prng,
) -> Node {
    if depth >= limit || idx.len() <= 1 {
        return Node::Leaf { size: idx.len() };
    }
    let dim = points[idx[0]].len();
    let spread: Vec<(usize, f64, f64)> = (0..dim)
        .filter_map(|a| {
            let (lo, hi) = idx
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                    (lo.min(points[i][a]), hi.max(points[i][a]))
                });
            (hi > lo).then_some((a, lo, hi))
        })
        .collect();
    if spread.is_empty() {
        return Node::Leaf { size: idx.len() };
    }
    let (attr, lo, hi) = spread[rng.random_range(0..spread.len())];
    let at = rng.random_range(lo..hi);
    let mut mid = 0;
    for j in 0..idx.len() {
        if points[idx[j]][attr] < at {
            idx.swap(j, mid);
            mid += 1;
        }
    }
    let (l, r) = idx.split_at_mut(mid);
    Node::Split {
        attr,
        at,
        left: Box::new(build(points, l, depth + 1, limit, rng)),
        right: Box::new(build(points, r, depth + 1, limit, rng)),
    }
}

fn path_length(node: &Node, x: &[f64], depth: f64) -> f64 {
    match node {
        Node::Leaf { size } => depth + average_path_length(*size),
        Node::Split {
            attr,
            at,
            left,
            right,
        } => {
            if x[*attr] < *at {
                path_length(left, x, depth + 1.0)
            } else {
                path_length(right, x, depth + 1.0)
            }
        }
    }
}

/// Anomaly scores in `(0, 1)`; higher is more anomalous. Each tree draws
/// its own seeded stream, so results do not depend on thread count.
pub fn iforest_scores(
    points: &[Vec<f64>],
    n_trees: usize,
    subsample: usize,
    seed: u64,
) -> Vec<f64> {
    let n = points.len();
    assert!(n >= 2, "need at least two points");
    assert!(n_trees >= 1);
    let psi = subsample.clamp(2, n);
    let limit = (psi as f64).log2().ceil() as usize;
    let per_tree: Vec<Vec<f64>> = (0..n_trees)
        .into_par_iter()
        .map(|t| {
            let mut r = rng::stream(
                seed.wrapping_add((t as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
                rng::streams::FOREST,
            );
            let mut idx = rng::sample_indices(n, psi, &mut r);
            let tree = build(points, &mut idx, 0, limit, &mut r);
            points.iter().map(|x| path_length(&tree, x, 0.0)).collect()
        })
        .collect();
    (0..n)
        .map(|i| {
            let mean = per_tree.iter().map(|t| t[i]).sum::<f64>() / n_trees as f64;
            anomaly_score(mean, psi)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal, stream};

    #[test]
    fn normalizer_and_score() {
        assert_eq!(average_path_length(1), 0.0);
        assert_eq!(average_path_length(2), 1.0);
        let c256 = average_path_length(256);
        let want = 2.0 * (255f64.ln() + EULER_GAMMA) - 2.0 * 255.0 / 256.0;
        assert!((c256 - want).abs() < 1e-12);
        assert!((anomaly_score(c256, 256) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn planted_outlier_gets_top_score() {
        let mut rng = stream(3, 1);
        let mut pts: Vec<Vec<f64>> = (0..200)
            .map(|_| (0..4).map(|_| normal(&mut rng)).collect())
            .collect();
        // 10σ from the centre along a diagonal
        pts.push(vec![5.0, -5.0, 5.0, 5.0]);
        let s = iforest_scores(&pts, 100, 256, 0);
        assert!(s.iter().all(|&v| v > 0.0 && v < 1.0));
        let top = (0..s.len()).max_by(|&a, &b| s[a].total_cmp(&s[b])).unwrap();
        assert_eq!(top, 200);
    }

    #[test]
    fn constant_and_duplicate_data() {
        let pts = vec![vec![1.0, 2.0]; 10];
        let s = iforest_scores(&pts, 10, 256, 0);
        assert!(s.windows(2).all(|w| w[0] == w[1]));
        let mut pts: Vec<Vec<f64>> = (0..20).map(|i| vec![f64::from(i)]).collect();
        pts.push(vec![4.0]);
        let s = iforest_scores(&pts, 50, 256, 1);
        assert_eq!(s[4], s[20]);
    }

    #[test]
    fn deterministic_given_seed() {
        let mut rng = stream(4, 1);
        let pts: Vec<Vec<f64>> = (0..50)
            .map(|_| vec![normal(&mut rng), normal(&mut rng)])
            .collect();
        assert_eq!(
            iforest_scores(&pts, 20, 32, 9),
            iforest_scores(&pts, 20, 32, 9)
        );
        assert_ne!(
            iforest_scores(&pts, 20, 32, 9),
            iforest_scores(&pts, 20, 32, 10)
        );
    }
}
