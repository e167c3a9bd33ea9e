use std::rc::Rc;
use std::sync::Arc;

use proptest::prelude::*;

use super::*;
use crate::tensor::{finite_diff_check, Checkpoint};

fn small_config(description: DescriptionEncoder, cell: CellKind) -> EncoderConfig {
    EncoderConfig {
        description,
        surface_hidden: 3,
        relation_embed_dim: 4,
        relation_min_count: 0,
        classifier_hidden: 5,
        n_types: 2,
        use_relu: false,
        cell,
        max_name_chars: 8,
    }
}

fn vocab(n: usize) -> RelationVocab {
    let text: String = (0..n).map(|i| format!("r{i}\t5\n")).collect();
    RelationVocab::read(text.as_bytes()).unwrap()
}

fn fixture(description: DescriptionEncoder, cell: CellKind, use_noise: bool) -> TypingNetwork {
    let cfg = small_config(description, cell);
    let mut net =
        TypingNetwork::new(cfg, vec!["A".into(), "B".into()], vocab(3), use_noise, 7).unwrap();
    let desc = |k: usize| match description {
        DescriptionEncoder::FileVector { dim } => {
            DescFeature::Vector((0..dim).map(|j| (k + j) as f64 * 0.1).collect())
        }
        DescriptionEncoder::HashedTokens { .. } => DescFeature::Tokens(vec![k % 4, (k + 1) % 4]),
    };
    let feats = vec![
        EntityFeatures {
            chars: vec![1, 2, 3],
            relations: vec![(0, 1.0), (2, 2.0)],
            description: desc(0),
        },
        EntityFeatures {
            chars: vec![4],
            relations: vec![(1, 1.0)],
            description: desc(1),
        },
        EntityFeatures {
            chars: vec![],
            relations: vec![],
            description: DescFeature::Missing,
        },
        EntityFeatures {
            chars: vec![5, 5, 6, 7],
            relations: vec![(0, 3.0)],
            description: desc(3),
        },
    ];
    let ids = (0..feats.len()).map(|i| format!("e{i}")).collect();
    net.set_features(Arc::new(FeatureSet::from_features(ids, feats)));
    if let Some(p) = net.params.get_mut(crate::noise::NOISE_PARAM) {
        p.data_mut().copy_from_slice(&[0.8, 0.9]);
    }
    net
}

fn loss_over(net: &TypingNetwork, g: &mut Graph, b: &BoundParams) -> Var {
    let items = [0, 1, 2, 3];
    let e = net.embed(g, b, &items);
    let out = net.head(g, b, e);
    let targets = Tensor::new(vec![4, 2], vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0]).unwrap();
    g.bce_prob(
        out.y,
        Rc::new(targets),
        Rc::new(Tensor::filled(&[4, 2], 0.25)),
    )
}

#[test]
fn gradients_match_finite_differences() {
    for (desc, cell, noise) in [
        (
            DescriptionEncoder::HashedTokens {
                hash_dim: 4,
                embed_dim: 2,
            },
            CellKind::Elman,
            true,
        ),
        (
            DescriptionEncoder::FileVector { dim: 2 },
            CellKind::Leaky(0.5),
            false,
        ),
    ] {
        let mut net = fixture(desc, cell, noise);
        net.params.get_mut("scale.surface").unwrap().data_mut()[0] = 0.7;
        let err = finite_diff_check(|g, b| loss_over(&net, g, b), &net.params, 1e-6).unwrap();
        assert!(err < 1e-5, "{desc:?} {cell:?}: {err}");
    }
}

#[test]
fn surface_encoder_edge_cases() {
    let net = fixture(
        DescriptionEncoder::FileVector { dim: 2 },
        CellKind::Elman,
        false,
    );
    let mut g = Graph::new();
    let b = net.params.bind(&mut g);
    let v = net.encode_channel(&mut g, &b, Channel::Surface, &[1, 2]);
    let out = g.value(v);
    // single character: one step from the zero state
    let wx = net.params.tensor("surface.wx");
    let bias = net.params.tensor("surface.b");
    for j in 0..3 {
        let want = (wx.get(4, j) + bias.data()[j]).tanh();
        assert!((out.get(0, j) - want).abs() < 1e-12);
    }
    // empty name: zero vector
    assert!(out.row_slice(1).iter().all(|&x| x == 0.0));
}

#[test]
fn missing_description_and_relations_are_zero() {
    let net = fixture(
        DescriptionEncoder::HashedTokens {
            hash_dim: 4,
            embed_dim: 2,
        },
        CellKind::Elman,
        false,
    );
    let mut g = Graph::new();
    let b = net.params.bind(&mut g);
    let e = net.embed(&mut g, &b, &[2]);
    assert!(g.value(e).data().iter().all(|&x| x == 0.0));
    assert_eq!(g.value(e).cols(), 2 + 3 + 4);
}

#[test]
fn graph_head_matches_scalar_head() {
    for relu in [false, true] {
        let mut net = fixture(
            DescriptionEncoder::FileVector { dim: 2 },
            CellKind::Elman,
            false,
        );
        net.config.use_relu = relu;
        let mut g = Graph::new();
        let b = net.params.bind(&mut g);
        let e = net.embed(&mut g, &b, &[0, 3]);
        let out = net.head(&mut g, &b, e);
        for r in 0..2 {
            let s = type_scores(
                g.value(e).row_slice(r),
                net.params.tensor("head.w"),
                net.params.tensor("head.b").data(),
                relu,
            );
            for j in 0..2 {
                assert!((g.value(out.z).get(r, j) - s.z[j]).abs() < 1e-12);
                assert!((g.value(out.logits).get(r, j) - s.o[j]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let net = fixture(
        DescriptionEncoder::HashedTokens {
            hash_dim: 4,
            embed_dim: 2,
        },
        CellKind::Leaky(0.3),
        true,
    );
    let bytes = net.to_checkpoint().to_bytes().unwrap();
    let mut back =
        TypingNetwork::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
    back.set_features(Arc::new(net.features().clone()));
    assert_eq!(back.config, net.config);
    assert_eq!(back.labels, net.labels);
    assert_eq!(back.relations, net.relations);
    assert_eq!(predict(&back, &[0, 1, 2, 3]), predict(&net, &[0, 1, 2, 3]));
}

#[test]
fn predictions_do_not_depend_on_batching() {
    let net = fixture(
        DescriptionEncoder::FileVector { dim: 2 },
        CellKind::Elman,
        true,
    );
    let all = predict(&net, &[0, 1, 2, 3]);
    for i in 0..4 {
        let one = predict(&net, &[i]);
        for j in 0..2 {
            assert!((one.y[0][j] - all.y[i][j]).abs() < 1e-12);
        }
    }
}

#[test]
fn zero_epoch_pretraining_keeps_initialization() {
    let mut net = fixture(
        DescriptionEncoder::HashedTokens {
            hash_dim: 4,
            embed_dim: 2,
        },
        CellKind::Elman,
        false,
    );
    let before = net.params.clone();
    let cfg = PretrainConfig {
        epochs: 0,
        ..Default::default()
    };
    for ch in Channel::ALL {
        pretrain_component(&mut net, ch, &[(0, 0), (1, 1)], &[], &cfg).unwrap();
    }
    assert_eq!(net.params, before);
}

#[test]
fn pretraining_fits_relation_channel() {
    let mut net = fixture(
        DescriptionEncoder::FileVector { dim: 2 },
        CellKind::Elman,
        false,
    );
    let train = [(0, 0), (1, 1), (3, 0)];
    let cfg = PretrainConfig {
        epochs: 200,
        batch_size: 3,
        lr: 0.05,
        seed: 1,
    };
    let out = pretrain_component(&mut net, Channel::Relations, &train, &train, &cfg).unwrap();
    assert!(out.epoch_losses.last().unwrap() < &out.epoch_losses[0]);
    assert_eq!(out.dev_accuracy, Some(1.0));
    assert!(!net.params.contains("pre.h.w"));
}

#[test]
fn calibration_gives_unit_rms_channels() {
    let mut net = fixture(
        DescriptionEncoder::HashedTokens {
            hash_dim: 4,
            embed_dim: 2,
        },
        CellKind::Elman,
        false,
    );
    let items = [0, 1, 2, 3];
    calibrate_channel_scales(&mut net, &items);
    for ch in Channel::ALL {
        let mut g = Graph::new();
        let b = net.params.bind(&mut g);
        let v = net.encode_channel(&mut g, &b, ch, &items);
        let t = g.value(v);
        let rms = (t.data().iter().map(|x| x * x).sum::<f64>() / t.len() as f64).sqrt();
        assert!((rms - 1.0).abs() < 1e-9, "{ch:?}: {rms}");
        assert!(!net.params.is_trainable(ch.scale_param()));
    }
}

#[test]
fn ablation_replaces_channel_with_fixed_uniform_noise() {
    let mut net = fixture(
        DescriptionEncoder::FileVector { dim: 2 },
        CellKind::Elman,
        false,
    );
    net.ablation = Some(Ablation {
        channel: Channel::Relations,
        seed: 3,
    });
    let run = |items: &[usize]| {
        let mut g = Graph::new();
        let b = net.params.bind(&mut g);
        let v = net.encode_channel(&mut g, &b, Channel::Relations, items);
        g.value(v).clone()
    };
    let a = run(&[0, 1]);
    let b = run(&[1]);
    assert!(a.data().iter().all(|&x| (0.0..1.0).contains(&x)));
    assert_eq!(a.row_slice(1), b.row_slice(0));
}

#[test]
fn config_validation() {
    let mut cfg = EncoderConfig::default();
    assert!(cfg.validate().is_ok());
    assert_eq!(cfg.embed_dim(), 100 + 64 + 256);
    cfg.cell = CellKind::Leaky(0.0);
    assert!(cfg.validate().is_err());
    cfg.cell = CellKind::Elman;
    cfg.surface_hidden = 0;
    assert!(cfg.validate().is_err());
}

proptest! {
    #[test]
    fn rectified_scores_stay_above_half(e in prop::collection::vec(-5.0f64..5.0, 3), w in prop::collection::vec(-2.0f64..2.0, 6)) {
        let w = Tensor::new(vec![3, 2], w).unwrap();
        let s = type_scores(&e, &w, &[0.1, -0.2], true);
        prop_assert!(s.z.iter().all(|&z| (0.5..1.0).contains(&z)));
        let s = type_scores(&e, &w, &[0.1, -0.2], false);
        prop_assert!(s.z.iter().all(|&z| z > 0.0 && z < 1.0));
    }
}
