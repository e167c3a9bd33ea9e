use super::*;
use crate::ingest::TruthRecord;
use crate::network::LinearProbe;
use crate::rng::stream;
use crate::tensor::Tensor;
use crate::vat::random_embeddings;

/// Two separable clusters with a fraction of flipped labels.
fn fixture(n: usize, flip_every: usize, seed: u64) -> (LinearProbe, AnnotationState, GroundTruth) {
    let mut rng = stream(seed, 30);
    let noise = random_embeddings(&mut rng, n, 2, 0.6);
    let mut data = Vec::with_capacity(n * 2);
    let mut items = Vec::with_capacity(n);
    let mut truth = GroundTruth::default();
    let labels = vec!["A".to_string(), "B".to_string()];
    for i in 0..n {
        let t = i % 2;
        let c = if t == 0 { 1.5 } else { -1.5 };
        data.push(c + noise.get(i, 0));
        data.push(-c + noise.get(i, 1));
        let flipped = flip_every > 0 && i % flip_every == 0;
        let obs = if flipped { 1 - t } else { t };
        let id = format!("e{i}");
        truth.insert(
            &id,
            &labels[obs],
            TruthRecord {
                verdict: if flipped {
                    Verdict::Error
                } else {
                    Verdict::Correct
                },
                true_type: labels[t].clone(),
            },
        );
        items.push(TrainItem::noisy(id, labels[obs].clone(), i, obs));
    }
    let inputs = Tensor::new(vec![n, 2], data).unwrap();
    let model = LinearProbe::new(inputs, 2, false, true, seed);
    (model, AnnotationState::new(items, labels), truth)
}

fn small_cfg() -> TrainConfig {
    TrainConfig {
        batch_size: 32,
        base_lr: 0.05,
        epochs: 3,
        annotations_per_round: 20,
        rounds_every_iters: 10,
        annotation_budget: 60,
        vat: VatConfig {
            epsilon: 0.3,
            ..Default::default()
        },
        ..Default::default()
    }
}

#[test]
fn zero_per_round_leaves_pools_unchanged() {
    let (m, state, truth) = fixture(200, 5, 0);
    let cfg = TrainConfig {
        annotations_per_round: 0,
        ..small_cfg()
    };
    let mut t = Trainer::new(m, cfg, state).unwrap();
    let mut oracle = OracleAnnotator::new(truth, false);
    t.run_epoch(&mut oracle);
    assert_eq!(t.state.gold_len(), 0);
    assert_eq!(t.state.noisy_len(), 200);
}

#[test]
fn one_round_of_twenty() {
    let (m, state, truth) = fixture(1000, 5, 1);
    let mut t = Trainer::new(m, small_cfg(), state).unwrap();
    let mut oracle = OracleAnnotator::new(truth, false);
    let log = t.annotation_round(&mut oracle, Strategy::Us);
    assert_eq!(log.committed, 20);
    assert_eq!(t.state.noisy_len(), 980);
    assert_eq!(t.state.gold_len(), 20);
}

#[test]
fn bookkeeping_over_a_run() {
    let (m, state, truth) = fixture(400, 5, 2);
    let mut t = Trainer::new(m, small_cfg(), state).unwrap();
    let mut oracle = OracleAnnotator::new(truth, false);
    let mut last_gold = 0;
    for _ in 0..3 {
        let e = t.run_epoch(&mut oracle);
        assert_eq!(e.noisy_len + e.gold_len, 400);
        assert!(e.gold_len >= last_gold);
        last_gold = e.gold_len;
    }
    assert_eq!(t.annotations.len(), 60);
    assert_eq!(t.state.gold_len(), 60);
}

#[test]
fn runs_are_deterministic() {
    let run = || {
        let (m, state, truth) = fixture(300, 4, 3);
        let mut t = Trainer::new(m, small_cfg(), state).unwrap();
        t.run(&mut OracleAnnotator::new(truth, false)).unwrap();
        (
            t.model.params.clone(),
            t.history.clone(),
            t.annotations.clone(),
            t.report().render(),
        )
    };
    assert_eq!(run(), run());
}

#[test]
fn training_lowers_loss_and_detects_flips() {
    let (m, state, truth) = fixture(600, 5, 4);
    let cfg = TrainConfig {
        epochs: 15,
        ..small_cfg()
    };
    let inputs: Vec<DetectionInput> = state
        .items
        .iter()
        .map(|it| {
            (
                it.entity_id.clone(),
                it.type_id.clone(),
                it.entity,
                Some(it.type_idx),
            )
        })
        .collect();
    let eval = EvalSet {
        inputs,
        truth: truth.clone(),
    };
    let mut t = Trainer::new(m, cfg, state)
        .unwrap()
        .with_eval(Some(eval), None);
    t.run(&mut OracleAnnotator::new(truth, false)).unwrap();
    assert!(t.history.last().unwrap().loss < t.history[0].loss);
    let f1 = t.evaluate().unwrap().micro.f1;
    assert!(f1 > 0.8, "{f1}");
}

#[test]
fn gold_only_trains_on_annotated_items() {
    let (m, state, truth) = fixture(300, 5, 5);
    let cfg = TrainConfig {
        gold_only: true,
        annotation_budget: 40,
        ..small_cfg()
    };
    let mut t = Trainer::new(m, cfg, state).unwrap();
    t.run(&mut OracleAnnotator::new(truth, false)).unwrap();
    assert_eq!(t.state.gold_len(), 40);
    // two batches of at most 32 per epoch
    assert_eq!(t.iteration, 3 * 2);
}

#[test]
fn plain_bce_without_noise_model() {
    let (m, mut state, _) = fixture(10, 0, 6);
    let mut no_noise = LinearProbe::new(m.inputs.clone(), 2, false, false, 6);
    no_noise.params = m.params.clone();
    let mut p = no_noise.params.clone();
    let mut fresh = crate::tensor::ParamStore::new();
    for (k, v) in p.iter() {
        if k != NOISE_PARAM {
            fresh.insert(k, v.clone());
        }
    }
    p = fresh;
    no_noise.params = p;
    for it in &mut state.items {
        it.gold = Some(GoldLabel::new(Verdict::Correct, None, it.type_idx));
    }
    let items: Vec<&TrainItem> = state.items.iter().collect();
    let mut g = Graph::new();
    let b = no_noise.params.bind(&mut g);
    let parts = combined_loss(
        &no_noise,
        &mut g,
        &b,
        &items,
        LossOptions {
            use_dynamic_lr: true,
        },
        VatInput::Off,
    )
    .unwrap();
    let z = crate::network::predict(&no_noise, &(0..10).collect::<Vec<_>>()).z;
    let mut want = 0.0;
    for (it, z) in state.items.iter().zip(&z) {
        for (k, &p) in z.iter().enumerate() {
            let t = if k == it.type_idx { 1.0 } else { 0.0 };
            want -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
        }
    }
    assert!((g.value(parts.total).item() - want / 10.0).abs() < 1e-10);
}

#[test]
fn threshold_parsing_and_report() {
    assert_eq!("auto".parse::<Threshold>().unwrap(), Threshold::Auto);
    assert_eq!("0.7".parse::<Threshold>().unwrap(), Threshold::Fixed(0.7));
    assert!("1.5".parse::<Threshold>().is_err());
    let (m, state, _) = fixture(20, 0, 7);
    let t = Trainer::new(m, small_cfg(), state).unwrap();
    let doc = t.report();
    assert_eq!(doc.get("noise.p.A"), Some("1"));
    assert_eq!(doc.get("config.strategy"), Some("us"));
}

#[test]
fn config_round_trips_through_a_document() {
    let cfg = TrainConfig {
        base_lr: 0.02,
        strategy: Strategy::Err,
        threshold: Threshold::Auto,
        eval_at: vec![20, 80],
        use_vat: false,
        seed: 9,
        ..Default::default()
    };
    let mut doc = KvDoc::new("cfg", 1);
    cfg.describe(&mut doc, "train.");
    assert_eq!(TrainConfig::from_doc(&doc, "train.").unwrap(), cfg);
    let mut c = TrainConfig::default();
    assert!(c.set("nope", "1").is_err());
    assert!(c.set("epochs", "x").is_err());
}
