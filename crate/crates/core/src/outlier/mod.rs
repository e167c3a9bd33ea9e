//! Unsupervised typing-error detection: project entity embeddings with a
//! triplet-trained network, then score each type's members independently
//! with LOF or Isolation Forest.

pub mod iforest;
pub mod lof;
pub mod repr;

use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::Verdict;
use crate::rng::{self, normal};

pub use iforest::{anomaly_score, average_path_length, iforest_scores};
pub use lof::{euclidean, lof_scores};
pub use repr::{
    cosine_distance, sample_triplets, train_repr, triplet_loss, ReprConfig, ReprNet, Triplet,
    TypeSets,
};

#[derive(Debug, Error)]
pub enum OutlierError {
    #[error("invalid outlier configuration: {0}")]
    Config(String),
    #[error("type {type_id}: {count} entities, need at least {need}")]
    TooFew {
        type_id: String,
        count: usize,
        need: usize,
    },
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {0}: malformed score row")]
    Malformed(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutlierMethod {
    Lof,
    #[serde(rename = "if")]
    IForest,
}

impl FromStr for OutlierMethod {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "lof" => Ok(OutlierMethod::Lof),
            "if" | "iforest" => Ok(OutlierMethod::IForest),
            _ => Err(format!("unknown outlier method {s:?} (lof, if)")),
        }
    }
}

impl std::fmt::Display for OutlierMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OutlierMethod::Lof => "lof",
            OutlierMethod::IForest => "if",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OutlierConfig {
    pub method: OutlierMethod,
    pub k: usize,
    pub n_trees: usize,
    pub subsample: usize,
    /// Fraction of each type flagged; `None` uses the score thresholds.
    pub contamination: Option<f64>,
    pub lof_threshold: f64,
    pub if_threshold: f64,
    pub min_entities: usize,
    pub seed: u64,
}

impl Default for OutlierConfig {
    fn default() -> Self {
        Self {
            method: OutlierMethod::IForest,
            k: 20,
            n_trees: 100,
            subsample: 256,
            contamination: None,
            lof_threshold: 1.5,
            if_threshold: 0.5,
            min_entities: 3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutlierScore {
    pub type_id: String,
    pub entity: String,
    pub method: OutlierMethod,
    pub score: f64,
    pub verdict: Verdict,
}

/// Scores the members of one type. Returned in input order.
pub fn detect_type_outliers(
    type_id: &str,
    entities: &[String],
    points: &[Vec<f64>],
    cfg: &OutlierConfig,
) -> Result<Vec<OutlierScore>, OutlierError> {
    assert_eq!(entities.len(), points.len());
    let n = points.len();
    let need = cfg.min_entities.max(2);
    if n < need {
        return Err(OutlierError::TooFew {
            type_id: type_id.to_string(),
            count: n,
            need,
        });
    }
    if let Some(c) = cfg.contamination {
        if !(0.0..=1.0).contains(&c) {
            return Err(OutlierError::Config(format!(
                "contamination must lie in [0, 1], got {c}"
            )));
        }
    }
    let type_seed = cfg.seed ^ crate::network::features::fnv1a(type_id.as_bytes());
    let scores = match cfg.method {
        OutlierMethod::Lof => lof_scores(points, cfg.k.clamp(1, n - 1)),
        OutlierMethod::IForest => iforest_scores(points, cfg.n_trees, cfg.subsample, type_seed),
    };
    let flagged: Vec<bool> = match cfg.contamination {
        Some(c) => {
            let m = (c * n as f64 + 1e-9).floor() as usize;
            let mut mask = vec![false; n];
            for i in crate::active::top_k(&scores, m) {
                mask[i] = true;
            }
            mask
        }
        None => {
            let t = match cfg.method {
                OutlierMethod::Lof => cfg.lof_threshold,
                OutlierMethod::IForest => cfg.if_threshold,
            };
            scores.iter().map(|&s| s > t).collect()
        }
    };
    Ok(entities
        .iter()
        .zip(scores)
        .zip(flagged)
        .map(|((e, score), f)| OutlierScore {
            type_id: type_id.to_string(),
            entity: e.clone(),
            method: cfg.method,
            score,
            verdict: if f { Verdict::Error } else { Verdict::Correct },
        })
        .collect())
}

pub fn write_scores_tsv<W: Write>(scores: &[OutlierScore], mut w: W) -> std::io::Result<()> {
    writeln!(w, "type\tentity\tmethod\tscore\tverdict")?;
    for s in scores {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}",
            s.type_id,
            s.entity,
            s.method,
            s.score,
            s.verdict.as_str()
        )?;
    }
    Ok(())
}

pub fn read_scores_tsv<R: BufRead>(r: R) -> Result<Vec<OutlierScore>, OutlierError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if i == 0 && line.starts_with("type\t") || line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let parsed = (f.len() == 5)
            .then(|| {
                Some(OutlierScore {
                    type_id: f[0].to_string(),
                    entity: f[1].to_string(),
                    method: f[2].parse().ok()?,
                    score: f[3].parse().ok()?,
                    verdict: Verdict::parse(f[4])?,
                })
            })
            .flatten();
        out.push(parsed.ok_or(OutlierError::Malformed(i + 1))?);
    }
    Ok(out)
}

/// One type's members: a main cluster plus wrong-type entities from two
/// confusable sources. Returns points and the wrong-type mask.
pub fn confusable_benchmark(n: usize, dim: usize, q: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<bool>) {
    confusable_benchmark_with(n, dim, q, seed, BENCH_SOURCE_DISTANCE, BENCH_SOURCE_SPREAD)
}

pub const BENCH_SOURCE_DISTANCE: f64 = 8.0;
pub const BENCH_SOURCE_SPREAD: f64 = 1.0;

/// As [`confusable_benchmark`] with explicit source distance from the main
/// centre and source standard deviation.
pub fn confusable_benchmark_with(
    n: usize,
    dim: usize,
    q: f64,
    seed: u64,
    distance: f64,
    spread: f64,
) -> (Vec<Vec<f64>>, Vec<bool>) {
    let mut r = rng::stream(seed, rng::streams::SAMPLING);
    let centre = |r: &mut rng::Prng| -> Vec<f64> {
        let v: Vec<f64> = (0..dim).map(|_| normal(r)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        v.into_iter().map(|x| distance * x / norm).collect()
    };
    let main = vec![0.0; dim];
    let sources = [centre(&mut r), centre(&mut r)];
    let wrong = (q * n as f64 + 1e-9).floor() as usize;
    let mut mask = vec![false; n];
    for i in rng::sample_indices(n, wrong, &mut r) {
        mask[i] = true;
    }
    let points = mask
        .iter()
        .map(|&bad| {
            if bad {
                let c = &sources[r.random_range(0..2)];
                c.iter().map(|&m| m + spread * normal(&mut r)).collect()
            } else {
                main.iter().map(|&m| m + normal(&mut r)).collect()
            }
        })
        .collect();
    (points, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::average_precision;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("e{i}")).collect()
    }

    #[test]
    fn contamination_controls_verdicts() {
        let (pts, _) = confusable_benchmark(100, 4, 0.05, 1);
        let cfg = OutlierConfig {
            contamination: Some(0.0),
            ..Default::default()
        };
        let s = detect_type_outliers("T", &ids(100), &pts, &cfg).unwrap();
        assert!(s.iter().all(|x| x.verdict == Verdict::Correct));
        let cfg = OutlierConfig {
            contamination: Some(0.1),
            method: OutlierMethod::Lof,
            ..Default::default()
        };
        let s = detect_type_outliers("T", &ids(100), &pts, &cfg).unwrap();
        assert_eq!(s.iter().filter(|x| x.verdict == Verdict::Error).count(), 10);
        assert!(matches!(
            detect_type_outliers("T", &ids(1), &pts[..1], &OutlierConfig::default()),
            Err(OutlierError::TooFew { .. })
        ));
    }

    #[test]
    fn planted_minority_ranks_first() {
        let mut ap = 0.0;
        for seed in 0..5 {
            let (pts, mask) = confusable_benchmark(400, 8, 0.05, seed);
            let s = detect_type_outliers(
                "T",
                &ids(400),
                &pts,
                &OutlierConfig {
                    seed,
                    ..Default::default()
                },
            )
            .unwrap();
            let scores: Vec<f64> = s.iter().map(|x| x.score).collect();
            ap += average_precision(&scores, &mask).unwrap();
        }
        assert!(ap / 5.0 >= 0.9, "{}", ap / 5.0);
    }

    #[test]
    fn tsv_round_trip() {
        let (pts, _) = confusable_benchmark(30, 3, 0.1, 2);
        let s = detect_type_outliers("dbo:T", &ids(30), &pts, &OutlierConfig::default()).unwrap();
        let mut buf = Vec::new();
        write_scores_tsv(&s, &mut buf).unwrap();
        assert_eq!(read_scores_tsv(buf.as_slice()).unwrap(), s);
    }
}
