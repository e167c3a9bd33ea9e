use std::io::Write;

use indexmap::IndexMap;
use kgtyper_core::eval::prf1;
use kgtyper_core::ingest::{
    build_entities, generate_synthetic_kg, parse_triples_str, Bundle, DescriptionStore,
    OnMalformed, SyntheticConfig, TYPE_RELATION,
};
use kgtyper_core::ledger::{read_ledger, replay_ledger, Clock, LedgerWriter};
use kgtyper_core::network::{Channel, EncoderConfig, PretrainConfig};
use kgtyper_core::pipeline::{
    ablation_study, annotation_state, build_network, detection_inputs, eval_set,
    fit_encoder_config, load_network, pretrain_channels, prior_belief,
};
use kgtyper_core::trainer::{detect_errors, OracleAnnotator, Threshold, TrainConfig, Trainer};

fn encoder() -> EncoderConfig {
    EncoderConfig {
        surface_hidden: 16,
        relation_embed_dim: 16,
        relation_min_count: 5,
        classifier_hidden: 64,
        use_relu: false,
        ..Default::default()
    }
}

fn synth(cfg: SyntheticConfig) -> Bundle {
    generate_synthetic_kg(&cfg).unwrap()
}

#[test]
fn ingested_triples_become_entities_and_assertions() {
    let text = "dbr:Canada\tdbo:capital\tdbr:Ottawa\n\
                dbr:Canada\trdf:type\tdbo:Country\n\
                dbr:Ottawa\trdf:type\tdbo:City\n\
                not a triple\n\
                dbr:Canada\tdbo:capital\tdbr:Ottawa\n\
                dbr:Ottawa\tdbo:country\tdbr:Canada\n";
    let parsed = parse_triples_str(text, OnMalformed::Skip).unwrap();
    assert_eq!(parsed.records.len(), 5);
    assert_eq!(parsed.diagnostics.len(), 1);
    assert_eq!(parsed.diagnostics[0].line, 4);
    assert!(parse_triples_str(text, OnMalformed::Abort).is_err());

    let names: IndexMap<String, String> = [("dbr:Canada".to_string(), "Canada".to_string())]
        .into_iter()
        .collect();
    let built = build_entities(
        &parsed.records,
        &names,
        &DescriptionStore::default(),
        TYPE_RELATION,
    );
    assert_eq!(built.store.len(), 2);
    assert_eq!(
        built.type_assertions,
        vec![
            ("dbr:Canada".to_string(), "dbo:Country".to_string()),
            ("dbr:Ottawa".to_string(), "dbo:City".to_string())
        ]
    );
    let canada = built.store.get("dbr:Canada").unwrap();
    assert_eq!(canada.name, "Canada");
    assert_eq!(canada.relations.get("dbo:capital"), Some(&2));
    assert!(!canada.relations.contains_key(TYPE_RELATION));
    assert_eq!(built.missing_names, 1);
}

#[test]
fn bundle_round_trip_keeps_the_trained_model_usable() {
    let dir = tempfile::tempdir().unwrap();
    let b = synth(SyntheticConfig {
        n_entities: 500,
        n_types: 3,
        seed: 4,
        ..Default::default()
    });
    b.write_dir(dir.path()).unwrap();
    let back = Bundle::read_dir(dir.path()).unwrap();
    assert_eq!(back.digest(), b.digest());

    let net = build_network(&b, fit_encoder_config(&b, encoder()), true, 4).unwrap();
    let loaded = load_network(&back, &net.to_checkpoint()).unwrap();
    let inputs = detection_inputs(&net, &b.split.test);
    let a: Vec<f64> = detect_errors(&net, &inputs, 0.5)
        .iter()
        .map(|d| d.score)
        .collect();
    let c: Vec<f64> = detect_errors(&loaded, &inputs, 0.5)
        .iter()
        .map(|d| d.score)
        .collect();
    assert_eq!(a, c);
}

#[test]
fn detections_reproduce_the_reported_f1() {
    let b = synth(SyntheticConfig {
        n_entities: 1500,
        n_types: 4,
        seed: 2,
        ..Default::default()
    });
    let mut net = build_network(&b, fit_encoder_config(&b, encoder()), true, 2).unwrap();
    pretrain_channels(
        &mut net,
        &b,
        &PretrainConfig {
            epochs: 1,
            seed: 2,
            ..Default::default()
        },
    )
    .unwrap();
    let state = annotation_state(&b, &net, prior_belief(&b).as_ref());
    let test = eval_set(&net, &b.split.test, b.truth.as_ref());
    let dev = eval_set(&net, &b.split.dev, b.truth.as_ref());
    let cfg = TrainConfig {
        base_lr: 1e-2,
        epochs: 3,
        annotation_budget: 40,
        rounds_every_iters: 3,
        threshold: Threshold::Auto,
        seed: 2,
        ..Default::default()
    };
    let mut tr = Trainer::new(net, cfg, state).unwrap().with_eval(test, dev);
    tr.run(&mut OracleAnnotator::new(b.truth.clone().unwrap(), true))
        .unwrap();
    let reported = tr.evaluate().unwrap();

    let decisions = detect_errors(
        &tr.model,
        &detection_inputs(&tr.model, &b.split.test),
        tr.threshold(),
    );
    let truth = b.truth.as_ref().unwrap();
    let recomputed = prf1(
        decisions
            .iter()
            .map(|d| (d.entity.as_str(), d.type_id.as_str(), d.verdict)),
        truth,
    )
    .unwrap();
    assert_eq!(recomputed.micro, reported.micro);
    assert_eq!(recomputed.counts.total(), b.split.test.len());
}

#[test]
fn two_rounds_replay_from_the_ledger() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("session.jsonl");
    let b = synth(SyntheticConfig {
        n_entities: 800,
        n_types: 3,
        seed: 9,
        ..Default::default()
    });
    let net = build_network(&b, fit_encoder_config(&b, encoder()), true, 9).unwrap();
    let prior = prior_belief(&b);
    let fresh = || annotation_state(&b, &net, prior.as_ref());
    let mut ledger = LedgerWriter::create(&path, &b.digest(), Clock::Logical).unwrap();
    let cfg = TrainConfig {
        batch_size: 32,
        epochs: 1,
        annotations_per_round: 10,
        annotation_budget: 20,
        rounds_every_iters: 4,
        seed: 9,
        ..Default::default()
    };
    let mut tr = Trainer::new(net.clone(), cfg, fresh())
        .unwrap()
        .with_sink(Box::new(move |rec| {
            ledger.append(rec).map(|_| ()).map_err(|e| e.to_string())
        }));
    tr.run(&mut OracleAnnotator::new(b.truth.clone().unwrap(), true))
        .unwrap();
    assert_eq!(tr.rounds.iter().filter(|r| r.committed > 0).count(), 2);
    assert_eq!(tr.state.gold_len(), 20);

    let mut replayed = fresh();
    assert_eq!(
        replay_ledger(&path, &b.digest(), &mut replayed).unwrap(),
        20
    );
    assert_eq!(replayed.items, tr.state.items);
    assert_eq!(replayed.annotated, tr.state.annotated);

    // a half-written final line is dropped
    std::fs::OpenOptions::new()
        .append(true)
        .open(&path)
        .unwrap()
        .write_all(b"{\"seq\":21,\"enti")
        .unwrap();
    let contents = read_ledger(&path).unwrap();
    assert!(contents.torn_tail);
    let mut again = fresh();
    assert_eq!(replay_ledger(&path, &b.digest(), &mut again).unwrap(), 20);
    assert_eq!(again.annotated, tr.state.annotated);
}

/// Dev accuracy of the pre-trained surface channel.
fn surface_accuracy(name_signal: f64, headword_rate: f64) -> (f64, f64) {
    let b = synth(SyntheticConfig {
        n_entities: 2000,
        n_types: 4,
        name_signal,
        headword_rate,
        seed: 6,
        ..Default::default()
    });
    let mut net = build_network(&b, fit_encoder_config(&b, encoder()), true, 6).unwrap();
    let out = pretrain_channels(
        &mut net,
        &b,
        &PretrainConfig {
            epochs: 3,
            seed: 6,
            ..Default::default()
        },
    )
    .unwrap();
    let s = out.iter().find(|o| o.channel == Channel::Surface).unwrap();
    (s.dev_accuracy.unwrap(), s.majority_baseline.unwrap())
}

#[test]
fn surface_channel_reads_types_from_name_suffixes() {
    let (with, base) = surface_accuracy(0.9, 0.0);
    let (without, _) = surface_accuracy(0.0, 0.0);
    assert!(with > base + 0.2, "{with} vs majority {base}");
    assert!(with > without + 0.2, "{with} vs {without} without suffixes");
}

#[test]
fn removing_descriptions_costs_the_most_when_they_carry_the_signal() {
    for seed in 0..3 {
        let b = synth(SyntheticConfig {
            n_entities: 2000,
            description_separation: 0.6,
            seed,
            ..Default::default()
        });
        let mut net = build_network(&b, fit_encoder_config(&b, encoder()), true, seed).unwrap();
        pretrain_channels(
            &mut net,
            &b,
            &PretrainConfig {
                epochs: 2,
                seed,
                ..Default::default()
            },
        )
        .unwrap();
        let rows = ablation_study(&net, &b, 10, 1e-2, seed).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows[0].channel.is_none());
        let full = rows[0].dev_accuracy;
        let worst = rows[1..]
            .iter()
            .min_by(|a, b| a.dev_accuracy.total_cmp(&b.dev_accuracy))
            .unwrap();
        assert_eq!(
            worst.channel,
            Some(Channel::Description),
            "seed {seed}: {rows:?}"
        );
        assert!(worst.dev_accuracy < full);
    }
}
