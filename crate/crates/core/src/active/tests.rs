use proptest::prelude::{prop, prop_assert_eq, proptest};

use super::*;
use crate::ingest::{GroundTruth, TruthRecord};
use crate::network::LinearProbe;
use crate::noise::NOISE_PARAM;
use crate::rng::stream;
use crate::trainer::annotator::OracleAnnotator;
use crate::vat::random_embeddings;

#[test]
fn entropy_examples() {
    for t in 1..=1000 {
        let s = uncertainty_score(&vec![0.5; t]);
        assert_eq!(s, t as f64 * std::f64::consts::LN_2, "T = {t}");
    }
    assert!(uncertainty_score(&[0.0, 1.0]) < 1e-9);
    let s = uncertainty_score(&[0.9, 0.5]);
    assert!((s - 1.0182).abs() < 1e-4);
    assert!((binary_entropy(0.9) - 0.3251).abs() < 1e-4);
}

#[test]
fn top_k_examples() {
    assert_eq!(top_k(&[0.1, 0.9, 0.5], 1), vec![1]);
    assert_eq!(top_k(&[0.1, 0.9, 0.5], 3), vec![1, 2, 0]);
    assert_eq!(top_k(&[0.5, 0.5, 0.5], 2), vec![0, 1]);
}

proptest! {
    #[test]
    fn select_us_matches_full_sort(probs in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 3), 1..40), k in 0usize..45) {
        let got = select_us(&probs, k);
        let mut oracle: Vec<(f64, usize)> = probs.iter().map(|p| uncertainty_score(p)).zip(0..).collect();
        oracle.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let want: Vec<usize> = oracle.into_iter().take(k).map(|x| x.1).collect();
        prop_assert_eq!(got, want);
    }
}

fn tiny_probe(seed: u64) -> LinearProbe {
    let inputs = random_embeddings(&mut stream(seed, 20), 12, 2, 1.5);
    let mut m = LinearProbe::new(inputs, 1, false, true, seed);
    m.params.get_mut(NOISE_PARAM).unwrap().data_mut()[0] = 0.8;
    m
}

fn items(n: usize) -> Vec<TrainItem> {
    (0..n)
        .map(|i| {
            let mut it = TrainItem::noisy(format!("e{i}"), "T", i, 0);
            it.weight = 0.5 + (i as f64) / (2.0 * n as f64);
            it
        })
        .collect()
}

#[test]
fn err_matches_brute_force() {
    for seed in 0..10 {
        let m = tiny_probe(seed);
        assert!(m.params.num_values() <= 4);
        let all = items(12);
        let batch: Vec<&TrainItem> = all[..4].iter().collect();
        let r = random_embeddings(&mut stream(seed, 21), 5, 2, 0.7);
        for how in [ErrExpectation::Model, ErrExpectation::Pessimistic] {
            for c in &all[4..] {
                let opts = LossOptions {
                    use_dynamic_lr: true,
                };
                let fast = err_score(&m, c, batch.len(), opts, how);
                let slow =
                    err_score_brute_force(&m, c, &batch, opts, how, Some((0.1, &r))).unwrap();
                assert!((fast - slow).abs() < 1e-8, "{fast} vs {slow}");
            }
        }
    }
}

#[test]
fn err_degenerate_cases() {
    let mut m = tiny_probe(1);
    let mut it = items(1).remove(0);
    it.gold = Some(GoldLabel::new(Verdict::Correct, None, 0));
    assert_eq!(
        err_score(
            &m,
            &it,
            10,
            LossOptions {
                use_dynamic_lr: false
            },
            ErrExpectation::Model
        ),
        0.0
    );
    // identity channel and a saturated prediction: nothing changes
    m.params.get_mut(NOISE_PARAM).unwrap().data_mut()[0] = 1.0;
    m.params.get_mut("head.b").unwrap().data_mut()[0] = 40.0;
    let it = items(1).remove(0);
    let s = err_score(
        &m,
        &it,
        10,
        LossOptions {
            use_dynamic_lr: false,
        },
        ErrExpectation::Model,
    );
    assert!(s.abs() < 1e-12, "{s}");
}

#[test]
fn err_scores_do_not_depend_on_pool_order() {
    let m = tiny_probe(3);
    let all = items(8);
    let opts = LossOptions {
        use_dynamic_lr: false,
    };
    let fwd: Vec<f64> = all
        .iter()
        .map(|c| err_score(&m, c, 4, opts, ErrExpectation::Model))
        .collect();
    let rev: Vec<f64> = all
        .iter()
        .rev()
        .map(|c| err_score(&m, c, 4, opts, ErrExpectation::Model))
        .collect();
    let mut rev = rev;
    rev.reverse();
    assert_eq!(fwd, rev);
}

fn state_and_truth(n: usize) -> (AnnotationState, GroundTruth) {
    let all = items(n);
    let mut truth = GroundTruth::default();
    for (i, it) in all.iter().enumerate() {
        let verdict = if i % 3 == 0 {
            Verdict::Error
        } else {
            Verdict::Correct
        };
        truth.insert(
            &it.entity_id,
            "T",
            TruthRecord {
                verdict,
                true_type: "U".into(),
            },
        );
    }
    (AnnotationState::new(all, vec!["T".into()]), truth)
}

fn request(k: usize, strategy: Strategy) -> SelectionRequest {
    SelectionRequest {
        k,
        strategy,
        err_pool_subsample: 5,
        err_batch_len: 8,
        err_expectation: ErrExpectation::Model,
        loss: LossOptions {
            use_dynamic_lr: false,
        },
    }
}

#[test]
fn rounds_move_items_to_gold() {
    let m = tiny_probe(4);
    let (mut state, truth) = state_and_truth(12);
    let mut oracle = OracleAnnotator::new(truth.clone(), false);
    let out = run_selection_round(
        &m,
        &mut state,
        &request(0, Strategy::Us),
        &mut oracle,
        &mut stream(0, 5),
    )
    .unwrap();
    assert!(out.queried.is_empty());
    assert_eq!(state.gold_len(), 0);
    for strategy in [Strategy::Us, Strategy::Err, Strategy::Random] {
        let (mut state, _) = state_and_truth(12);
        let mut total = 0;
        for _ in 0..2 {
            let out = run_selection_round(
                &m,
                &mut state,
                &request(3, strategy),
                &mut oracle,
                &mut stream(0, 5),
            )
            .unwrap();
            total += out.committed.len();
            for rec in &out.committed {
                assert_eq!(Some(rec.verdict), truth.verdict(&rec.entity, &rec.type_id));
            }
            assert_eq!(state.noisy_len() + state.gold_len(), 12);
        }
        assert_eq!(state.gold_len(), total);
        assert_eq!(total, 6);
    }
}

#[test]
fn skipped_items_stay_noisy() {
    let m = tiny_probe(4);
    let (mut state, _) = state_and_truth(6);
    let mut none = crate::trainer::annotator::NullAnnotator;
    let out = run_selection_round(
        &m,
        &mut state,
        &request(2, Strategy::Us),
        &mut none,
        &mut stream(0, 5),
    )
    .unwrap();
    assert_eq!(out.skipped, 2);
    assert_eq!(state.gold_len(), 0);
    assert_eq!(state.query_pool().len(), 4);
}

#[test]
fn replaying_records_reproduces_state() {
    let m = tiny_probe(6);
    let (mut state, truth) = state_and_truth(12);
    let fresh = state.clone();
    let mut oracle = OracleAnnotator::new(truth, true);
    let out = run_selection_round(
        &m,
        &mut state,
        &request(5, Strategy::Us),
        &mut oracle,
        &mut stream(0, 5),
    )
    .unwrap();
    let mut replayed = fresh;
    for rec in &out.committed {
        assert!(replayed.apply(rec));
        assert!(!replayed.apply(rec));
    }
    replayed.skipped = state.skipped.clone();
    assert_eq!(replayed, state);
}
