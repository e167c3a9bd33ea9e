//! Turning model beliefs into error verdicts.

use crate::ingest::Verdict;
use crate::network::{predict, TypingModel};

/// A decision on one assertion. `Error` iff `score < τ`; ties count as
/// correct.
#[derive(Clone, Debug, PartialEq)]
pub struct Decision {
    pub entity: String,
    pub type_id: String,
    pub verdict: Verdict,
    /// `Pr(z_type | e)`, or 0 when the type is unknown to the model.
    pub score: f64,
    pub unknown_type: bool,
}

pub fn decide(score: f64, threshold: f64) -> Verdict {
    if score < threshold {
        Verdict::Error
    } else {
        Verdict::Correct
    }
}

/// `(entity id, type id, entity index, type index)` rows; a missing type
/// index marks a type the model does not know.
pub type DetectionInput = (String, String, usize, Option<usize>);

pub fn detect_errors<M: TypingModel + ?Sized>(
    model: &M,
    inputs: &[DetectionInput],
    threshold: f64,
) -> Vec<Decision> {
    let entities: Vec<usize> = inputs.iter().map(|x| x.2).collect();
    let preds = predict(model, &entities);
    inputs
        .iter()
        .zip(&preds.z)
        .map(|((e, t, _, ti), z)| match ti {
            Some(k) => Decision {
                entity: e.clone(),
                type_id: t.clone(),
                verdict: decide(z[*k], threshold),
                score: z[*k],
                unknown_type: false,
            },
            None => Decision {
                entity: e.clone(),
                type_id: t.clone(),
                verdict: Verdict::Error,
                score: 0.0,
                unknown_type: true,
            },
        })
        .collect()
}

/// Threshold maximizing F1 (positive = error) over `(score, is_error)`
/// pairs. Candidates are midpoints between consecutive distinct scores and
/// the two ends; the smallest best candidate wins. `None` without errors.
pub fn calibrate_threshold(scored: &[(f64, bool)]) -> Option<f64> {
    let positives = scored.iter().filter(|s| s.1).count();
    if positives == 0 {
        return None;
    }
    let mut sorted: Vec<(f64, bool)> = scored.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut best = (-1.0, 0.0);
    // τ below everything: nothing flagged.
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0;
    let mut candidate = sorted[0].0 - 1e-9;
    loop {
        let f1 = if tp == 0 {
            0.0
        } else {
            2.0 * tp as f64 / (2 * tp + fp + (positives - tp)) as f64
        };
        if f1 > best.0 {
            best = (f1, candidate);
        }
        if i == sorted.len() {
            break;
        }
        let s = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == s {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        candidate = if i < sorted.len() {
            0.5 * (s + sorted[i].0)
        } else {
            s + 1e-9
        };
    }
    Some(best.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn decision_rule() {
        assert_eq!(decide(0.9, 0.5), Verdict::Correct);
        assert_eq!(decide(0.5, 0.5), Verdict::Correct);
        assert_eq!(decide(0.49, 0.5), Verdict::Error);
    }

    #[test]
    fn calibration_separates_clean_scores() {
        let s = [(0.1, true), (0.2, true), (0.7, false), (0.9, false)];
        let t = calibrate_threshold(&s).unwrap();
        assert!((t - 0.45).abs() < 1e-12);
        assert_eq!(calibrate_threshold(&[(0.3, false)]), None);
    }

    fn f1_at(s: &[(f64, bool)], t: f64) -> f64 {
        let tp = s.iter().filter(|x| x.1 && x.0 < t).count() as f64;
        let fp = s.iter().filter(|x| !x.1 && x.0 < t).count() as f64;
        let fn_ = s.iter().filter(|x| x.1 && x.0 >= t).count() as f64;
        if tp == 0.0 {
            0.0
        } else {
            2.0 * tp / (2.0 * tp + fp + fn_)
        }
    }

    proptest! {
        #[test]
        fn monotone_in_threshold(score in 0.0f64..1.0, a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            if decide(score, lo) == Verdict::Error {
                prop_assert_eq!(decide(score, hi), Verdict::Error);
            }
        }

        #[test]
        fn calibration_is_optimal(s in prop::collection::vec((0u8..20, any::<bool>()), 1..30)) {
            let s: Vec<(f64, bool)> = s.into_iter().map(|(v, e)| (f64::from(v) / 20.0, e)).collect();
            if let Some(t) = calibrate_threshold(&s) {
                let got = f1_at(&s, t);
                for k in 0..=21 {
                    prop_assert!(got >= f1_at(&s, f64::from(k) / 20.0 + 0.025) - 1e-12);
                }
            }
        }
    }
}
