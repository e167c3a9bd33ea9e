//! Detection metrics (positive class = typing error), ranking metrics and
//! error-rate estimates.

use indexmap::IndexMap;
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::ingest::{GroundTruth, Verdict};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("no truth record for ({0}, {1})")]
    MissingTruth(String, String),
    #[error("sample size must be positive")]
    EmptySample,
    #[error("k = {k} exceeds n = {n}")]
    CountExceedsSample { k: u64, n: u64 },
    #[error("confidence must lie in (0, 1)")]
    Confidence,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn add(&mut self, predicted: Verdict, actual: Verdict) {
        match (predicted.is_error(), actual.is_error()) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// 0 when nothing was flagged.
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    /// 0 when there is nothing to find.
    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        f1(self.precision(), self.recall())
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }

    pub fn scores(&self) -> Prf1 {
        Prf1 {
            precision: self.precision(),
            recall: self.recall(),
            f1: self.f1(),
        }
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Prf1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectionMetrics {
    pub counts: ConfusionCounts,
    pub micro: Prf1,
    /// Unweighted mean of per-type precision, recall and F1, grouped by the
    /// asserted type.
    pub macro_avg: Prf1,
    pub per_type: IndexMap<String, ConfusionCounts>,
}

/// Scores `(entity, asserted type, predicted verdict)` triples against the
/// hidden truth.
pub fn prf1<'a, I>(predictions: I, truth: &GroundTruth) -> Result<DetectionMetrics, EvalError>
where
    I: IntoIterator<Item = (&'a str, &'a str, Verdict)>,
{
    let mut counts = ConfusionCounts::default();
    let mut per_type: IndexMap<String, ConfusionCounts> = IndexMap::new();
    for (e, t, v) in predictions {
        let actual = truth
            .verdict(e, t)
            .ok_or_else(|| EvalError::MissingTruth(e.to_string(), t.to_string()))?;
        counts.add(v, actual);
        per_type.entry(t.to_string()).or_default().add(v, actual);
    }
    per_type.sort_keys();
    let n = per_type.len().max(1) as f64;
    let macro_avg = Prf1 {
        precision: per_type
            .values()
            .map(ConfusionCounts::precision)
            .sum::<f64>()
            / n,
        recall: per_type.values().map(ConfusionCounts::recall).sum::<f64>() / n,
        f1: per_type.values().map(ConfusionCounts::f1).sum::<f64>() / n,
    };
    Ok(DetectionMetrics {
        counts,
        micro: counts.scores(),
        macro_avg,
        per_type,
    })
}

/// Mean of precision@rank over the ranks of the positives, ranking by
/// descending score with ties kept in input order. `None` without positives.
pub fn average_precision(scores: &[f64], positive: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), positive.len());
    let n_pos = positive.iter().filter(|&&p| p).count();
    if n_pos == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if positive[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(sum / n_pos as f64)
}

/// Unweighted mean over the types that have an AP; types without positives
/// are reported back for diagnostics.
pub fn mean_average_precision(per_type: &IndexMap<String, Option<f64>>) -> (f64, Vec<String>) {
    let excluded: Vec<String> = per_type
        .iter()
        .filter(|(_, ap)| ap.is_none())
        .map(|(t, _)| t.clone())
        .collect();
    for t in &excluded {
        log::warn!("type {t} has no positives; left out of MAP");
    }
    let aps: Vec<f64> = per_type.values().filter_map(|&a| a).collect();
    let map = if aps.is_empty() {
        0.0
    } else {
        aps.iter().sum::<f64>() / aps.len() as f64
    };
    (map, excluded)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IntervalMethod {
    Normal,
    Wilson,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateEstimate {
    pub p_hat: f64,
    pub n: u64,
    pub halfwidth: f64,
    pub confidence: f64,
    /// Interval bounds (clipped to [0, 1]). For the Wilson method the
    /// interval is centred on the Wilson centre rather than `p_hat`.
    pub lower: f64,
    pub upper: f64,
    pub method: IntervalMethod,
}

/// Two-sided standard-normal quantile for `confidence` (1.96 at 0.95).
pub fn z_quantile(confidence: f64) -> Result<f64, EvalError> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(EvalError::Confidence);
    }
    let n = Normal::standard();
    Ok(n.inverse_cdf(0.5 + confidence / 2.0))
}

pub fn error_rate_ci(
    k: u64,
    n: u64,
    confidence: f64,
    method: IntervalMethod,
) -> Result<RateEstimate, EvalError> {
    if n == 0 {
        return Err(EvalError::EmptySample);
    }
    if k > n {
        return Err(EvalError::CountExceedsSample { k, n });
    }
    let z = z_quantile(confidence)?;
    let nf = n as f64;
    let p = k as f64 / nf;
    let (centre, halfwidth) = match method {
        IntervalMethod::Normal => (p, z * (p * (1.0 - p) / nf).sqrt()),
        IntervalMethod::Wilson => {
            let z2 = z * z;
            let denom = 1.0 + z2 / nf;
            let centre = (p + z2 / (2.0 * nf)) / denom;
            let hw = z / denom * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt();
            (centre, hw)
        }
    };
    Ok(RateEstimate {
        p_hat: p,
        n,
        halfwidth,
        confidence,
        lower: (centre - halfwidth).max(0.0),
        upper: (centre + halfwidth).min(1.0),
        method,
    })
}

/// Sample size at which the normal-approximation halfwidth equals `halfwidth`
/// for proportion `p`: `n = z²·p(1−p)/h²`.
pub fn implied_sample_size(p: f64, halfwidth: f64, confidence: f64) -> Result<f64, EvalError> {
    let z = z_quantile(confidence)?;
    Ok(z * z * p * (1.0 - p) / (halfwidth * halfwidth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::TruthRecord;
    use proptest::prelude::*;

    fn truth(rows: &[(&str, Verdict)]) -> GroundTruth {
        let mut t = GroundTruth::default();
        for (e, v) in rows {
            t.insert(
                e,
                "T",
                TruthRecord {
                    verdict: *v,
                    true_type: "T".into(),
                },
            );
        }
        t
    }

    #[test]
    fn prf1_conventions() {
        use Verdict::*;
        let t = truth(&[("a", Correct), ("b", Correct)]);
        let m = prf1([("a", "T", Correct), ("b", "T", Correct)], &t).unwrap();
        assert_eq!(m.micro, Prf1::default());

        let t = truth(&[("a", Error), ("b", Correct)]);
        let m = prf1([("a", "T", Error), ("b", "T", Correct)], &t).unwrap();
        assert_eq!(
            (m.micro.precision, m.micro.recall, m.micro.f1),
            (1.0, 1.0, 1.0)
        );

        let c = ConfusionCounts {
            tp: 5,
            fp: 5,
            tn: 0,
            fn_: 5,
        };
        assert_eq!(
            c.scores(),
            Prf1 {
                precision: 0.5,
                recall: 0.5,
                f1: 0.5
            }
        );

        assert!(matches!(
            prf1([("zz", "T", Error)], &t),
            Err(EvalError::MissingTruth(..))
        ));
    }

    #[test]
    fn ap_examples() {
        assert_eq!(
            average_precision(&[0.9, 0.8, 0.1], &[true, true, false]),
            Some(1.0)
        );
        assert_eq!(
            average_precision(&[0.9, 0.8, 0.7, 0.1], &[false, true, false, false]),
            Some(0.5)
        );
        assert_eq!(average_precision(&[0.1, 0.2], &[false, false]), None);
        // ties keep input order
        assert_eq!(average_precision(&[0.5, 0.5], &[false, true]), Some(0.5));
    }

    #[test]
    fn map_skips_types_without_positives() {
        let mut per = IndexMap::new();
        per.insert("A".to_string(), Some(1.0));
        per.insert("B".to_string(), None);
        per.insert("C".to_string(), Some(0.5));
        let (map, excluded) = mean_average_precision(&per);
        assert_eq!(map, 0.75);
        assert_eq!(excluded, vec!["B".to_string()]);
    }

    #[test]
    fn ci_examples() {
        let e = error_rate_ci(0, 50, 0.95, IntervalMethod::Normal).unwrap();
        assert_eq!((e.p_hat, e.halfwidth), (0.0, 0.0));
        let e = error_rate_ci(163, 600, 0.95, IntervalMethod::Normal).unwrap();
        assert!((e.p_hat - 0.2717).abs() < 1e-4);
        assert!((e.halfwidth - 0.0356).abs() < 1e-4);
        let e = error_rate_ci(300, 600, 0.95, IntervalMethod::Normal).unwrap();
        assert!((e.halfwidth - 1.96 * (0.25f64 / 600.0).sqrt()).abs() < 1e-4);
        assert_eq!(
            error_rate_ci(1, 0, 0.95, IntervalMethod::Normal),
            Err(EvalError::EmptySample)
        );
        assert!(error_rate_ci(7, 3, 0.95, IntervalMethod::Normal).is_err());
    }

    #[test]
    fn wilson_stays_inside_unit_interval() {
        let e = error_rate_ci(0, 10, 0.95, IntervalMethod::Wilson).unwrap();
        assert!(e.halfwidth > 0.0 && e.lower.abs() < 1e-12 && e.upper < 0.35);
        assert!((e.upper - 1.96f64.powi(2) / (10.0 + 1.96f64.powi(2))).abs() < 1e-3);
    }

    #[test]
    fn z_is_196() {
        assert!((z_quantile(0.95).unwrap() - 1.959964).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn ap_invariant_under_monotone_maps(scores in proptest::collection::vec(-5.0f64..5.0, 1..40), seed in any::<u64>()) {
            let positive: Vec<bool> = scores.iter().enumerate().map(|(i, _)| (seed >> (i % 64)) & 1 == 1).collect();
            let mapped: Vec<f64> = scores.iter().map(|s| (2.0 * s).exp() + 3.0).collect();
            prop_assert_eq!(average_precision(&scores, &positive), average_precision(&mapped, &positive));
        }

        #[test]
        fn halfwidth_peaks_at_half(n in 2u64..2000) {
            let half = error_rate_ci(n / 2, n, 0.95, IntervalMethod::Normal).unwrap().halfwidth;
            for k in 0..=n.min(50) {
                prop_assert!(error_rate_ci(k, n, 0.95, IntervalMethod::Normal).unwrap().halfwidth <= half + 1e-12);
            }
        }

        #[test]
        fn prf1_ignores_order(bits in proptest::collection::vec((any::<bool>(), any::<bool>()), 1..30)) {
            let names: Vec<String> = (0..bits.len()).map(|i| format!("e{i}")).collect();
            let mut t = GroundTruth::default();
            let v = |b: bool| if b { Verdict::Error } else { Verdict::Correct };
            for (i, (_, a)) in bits.iter().enumerate() {
                t.insert(&names[i], "T", TruthRecord { verdict: v(*a), true_type: "T".into() });
            }
            let fwd: Vec<(&str, &str, Verdict)> = bits.iter().enumerate().map(|(i, (p, _))| (names[i].as_str(), "T", v(*p))).collect();
            let rev: Vec<_> = fwd.iter().rev().copied().collect();
            prop_assert_eq!(prf1(fwd, &t).unwrap().counts, prf1(rev, &t).unwrap().counts);
        }
    }
}
