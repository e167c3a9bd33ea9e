//! Glue from a dataset bundle to trained models: network construction,
//! training items, evaluation sets, per-channel pre-training, the channel
//! ablation harness and the outlier-detection pipeline.

use std::sync::Arc;

use indexmap::IndexMap;
use thiserror::Error;

use crate::active::AnnotationState;
use crate::eval::{average_precision, mean_average_precision};
use crate::ingest::{Bundle, GroundTruth, IngestError, TruthRecord, TypeAssertion, VectorTable};
use crate::network::{
    calibrate_channel_scales, pretrain_component, Ablation, Channel, DescriptionEncoder,
    EncoderConfig, FeatureSet, NetworkError, PretrainConfig, PretrainOutcome, RelationVocab,
    TypingNetwork,
};
use crate::outlier::{
    detect_type_outliers, train_repr, OutlierConfig, OutlierError, OutlierScore, ReprConfig,
    TypeSets,
};
use crate::tensor::{Checkpoint, Tensor};
use crate::trainer::{
    DetectionInput, EvalSet, GoldLabel, NullAnnotator, PriorBelief, TrainConfig, TrainError,
    TrainItem, Trainer,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Outlier(#[from] OutlierError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("{0}")]
    Data(String),
}

/// Fills the dataset-dependent fields: `n_types` from the label list and,
/// for the file-vector encoder, the dimension of the vector table. Falls
/// back to hashed tokens when the bundle has no description vectors.
pub fn fit_encoder_config(bundle: &Bundle, mut cfg: EncoderConfig) -> EncoderConfig {
    cfg.n_types = bundle.labels().len();
    if let DescriptionEncoder::FileVector { .. } = cfg.description {
        match &bundle.descriptions.vectors {
            Some(v) => cfg.description = DescriptionEncoder::FileVector { dim: v.dim() },
            None => {
                log::warn!("no description vectors; using the hashed-token encoder");
                cfg.description = DescriptionEncoder::HashedTokens {
                    hash_dim: 4096,
                    embed_dim: 100,
                };
            }
        }
    }
    cfg
}

/// Builds features for every entity of the bundle and a freshly
/// initialized network over them.
pub fn build_network(
    bundle: &Bundle,
    cfg: EncoderConfig,
    use_noise: bool,
    seed: u64,
) -> Result<TypingNetwork, PipelineError> {
    let vocab = RelationVocab::build(&bundle.store, cfg.relation_min_count);
    let features = FeatureSet::build(&bundle.store, &bundle.descriptions, &cfg, &vocab);
    let mut net = TypingNetwork::new(cfg, bundle.labels(), vocab, use_noise, seed)?;
    net.set_features(Arc::new(features));
    Ok(net)
}

/// Restores a checkpointed network and attaches features for the bundle's
/// entities using the checkpoint's own relation vocabulary.
pub fn load_network(bundle: &Bundle, ckpt: &Checkpoint) -> Result<TypingNetwork, PipelineError> {
    let mut net = TypingNetwork::from_checkpoint(ckpt)?;
    if net.labels != bundle.labels() {
        return Err(PipelineError::Data(format!(
            "checkpoint labels {:?} differ from the dataset labels {:?}",
            net.labels,
            bundle.labels()
        )));
    }
    let features = FeatureSet::build(
        &bundle.store,
        &bundle.descriptions,
        &net.config,
        &net.relations,
    );
    net.set_features(Arc::new(features));
    Ok(net)
}

/// Word prior over the noisy training pairs, when the bundle has a word
/// table.
pub fn prior_belief(bundle: &Bundle) -> Option<PriorBelief> {
    let words: VectorTable = bundle.words.clone()?;
    let mut prior = PriorBelief::new(words);
    let pairs: Vec<(&str, &str)> = bundle
        .split
        .noisy_train
        .iter()
        .filter_map(|a| {
            Some((
                bundle.store.get(&a.entity)?.name.as_str(),
                a.type_id.as_str(),
            ))
        })
        .collect();
    prior.fit_fallback(pairs);
    Some(prior)
}

fn resolve(net: &TypingNetwork, a: &TypeAssertion) -> Option<(usize, usize)> {
    let e = net.features().index_of(&a.entity);
    let t = net.label_index(&a.type_id);
    if e.is_none() || t.is_none() {
        log::warn!(
            "assertion ({}, {}) not resolvable; dropped",
            a.entity,
            a.type_id
        );
    }
    Some((e?, t?))
}

/// `S` from the noisy training section and `Ŝ` from the gold pool. Noisy
/// items carry the prior weight when a prior is given.
pub fn train_items(
    bundle: &Bundle,
    net: &TypingNetwork,
    prior: Option<&PriorBelief>,
) -> Vec<TrainItem> {
    let mut items = Vec::new();
    for a in &bundle.split.noisy_train {
        let Some((e, t)) = resolve(net, a) else {
            continue;
        };
        let mut it = TrainItem::noisy(&a.entity, &a.type_id, e, t);
        if let (Some(p), Some(rec)) = (prior, bundle.store.get(&a.entity)) {
            it.weight = p.factor(&rec.name, &a.type_id);
        }
        items.push(it);
    }
    for a in &bundle.split.gold_pool {
        let Some((e, t)) = resolve(net, a) else {
            continue;
        };
        let Some(v) = a.verdict else { continue };
        let tt = a.gold_type.as_deref().and_then(|g| net.label_index(g));
        let mut it = TrainItem::noisy(&a.entity, &a.type_id, e, t);
        it.gold = Some(GoldLabel::new(v, tt, t));
        items.push(it);
    }
    items
}

pub fn annotation_state(
    bundle: &Bundle,
    net: &TypingNetwork,
    prior: Option<&PriorBelief>,
) -> AnnotationState {
    AnnotationState::new(train_items(bundle, net, prior), net.labels.clone())
}

pub fn detection_inputs(net: &TypingNetwork, assertions: &[TypeAssertion]) -> Vec<DetectionInput> {
    assertions
        .iter()
        .filter_map(|a| {
            let e = net.features().index_of(&a.entity)?;
            Some((
                a.entity.clone(),
                a.type_id.clone(),
                e,
                net.label_index(&a.type_id),
            ))
        })
        .collect()
}

/// Assertions with a known verdict, from the assertion itself or from the
/// hidden truth. `None` when no assertion has one.
pub fn eval_set(
    net: &TypingNetwork,
    assertions: &[TypeAssertion],
    truth: Option<&GroundTruth>,
) -> Option<EvalSet> {
    let mut known = GroundTruth::default();
    let mut kept = Vec::new();
    for a in assertions {
        let verdict = a
            .verdict
            .or_else(|| truth.and_then(|t| t.verdict(&a.entity, &a.type_id)));
        if let Some(v) = verdict {
            let true_type = truth
                .and_then(|t| t.get(&a.entity, &a.type_id))
                .map_or_else(|| a.type_id.clone(), |r| r.true_type.clone());
            known.insert(
                &a.entity,
                &a.type_id,
                TruthRecord {
                    verdict: v,
                    true_type,
                },
            );
            kept.push(a.clone());
        }
    }
    let inputs = detection_inputs(net, &kept);
    (!inputs.is_empty()).then_some(EvalSet {
        inputs,
        truth: known,
    })
}

fn pairs(net: &TypingNetwork, assertions: &[TypeAssertion]) -> Vec<(usize, usize)> {
    assertions.iter().filter_map(|a| resolve(net, a)).collect()
}

/// Pre-trains each channel on the noisy training labels (dev pairs for
/// accuracy), then rescales channels to unit RMS over every entity.
pub fn pretrain_channels(
    net: &mut TypingNetwork,
    bundle: &Bundle,
    cfg: &PretrainConfig,
) -> Result<Vec<PretrainOutcome>, PipelineError> {
    let train = pairs(net, &bundle.split.noisy_train);
    let dev = pairs(net, &bundle.split.dev);
    let mut out = Vec::new();
    for ch in Channel::ALL {
        out.push(pretrain_component(net, ch, &train, &dev, cfg)?);
    }
    let all: Vec<usize> = (0..net.features().len()).collect();
    calibrate_channel_scales(net, &all);
    Ok(out)
}

/// Top-1 accuracy of the typing head (`Pr(z)`) against the true types of
/// the given assertions.
pub fn typing_accuracy(
    net: &TypingNetwork,
    assertions: &[TypeAssertion],
    truth: Option<&GroundTruth>,
) -> Option<f64> {
    let mut items = Vec::new();
    let mut gold = Vec::new();
    for a in assertions {
        let true_type = truth
            .and_then(|t| t.get(&a.entity, &a.type_id))
            .map_or(a.type_id.as_str(), |r| r.true_type.as_str());
        if let (Some(e), Some(t)) = (
            net.features().index_of(&a.entity),
            net.label_index(true_type),
        ) {
            items.push(e);
            gold.push(t);
        }
    }
    if items.is_empty() {
        return None;
    }
    let z = crate::network::predict(net, &items).z;
    let hits = z
        .iter()
        .zip(&gold)
        .filter(|(row, &t)| {
            let best = (0..row.len()).fold(0, |a, k| if row[k] > row[a] { k } else { a });
            best == t
        })
        .count();
    Some(hits as f64 / items.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    /// `None` for the full model.
    pub channel: Option<Channel>,
    pub dev_accuracy: f64,
}

/// Dev accuracy of a trained network with each channel in turn replaced by
/// fixed uniform noise.
pub fn channel_ablation(
    net: &TypingNetwork,
    dev: &[TypeAssertion],
    truth: Option<&GroundTruth>,
    seed: u64,
) -> Vec<AblationRow> {
    let mut rows = Vec::new();
    let mut probe = net.clone();
    probe.ablation = None;
    if let Some(acc) = typing_accuracy(&probe, dev, truth) {
        rows.push(AblationRow {
            channel: None,
            dev_accuracy: acc,
        });
    }
    for ch in Channel::ALL {
        probe.ablation = Some(Ablation { channel: ch, seed });
        if let Some(acc) = typing_accuracy(&probe, dev, truth) {
            rows.push(AblationRow {
                channel: Some(ch),
                dev_accuracy: acc,
            });
        }
    }
    rows
}

/// Trains a copy of `net` as a plain classifier on the noisy labels once
/// per variant (full model, then each channel replaced by fixed uniform
/// noise during training and evaluation) and reports the best dev accuracy
/// over `epochs`.
pub fn ablation_study(
    net: &TypingNetwork,
    bundle: &Bundle,
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<Vec<AblationRow>, PipelineError> {
    let variants = std::iter::once(None).chain(Channel::ALL.into_iter().map(Some));
    let mut rows = Vec::new();
    for channel in variants {
        let mut model = net.clone();
        model.ablation = channel.map(|channel| Ablation { channel, seed });
        let cfg = TrainConfig {
            base_lr: lr,
            epochs,
            annotation_budget: 0,
            use_noise_model: false,
            use_vat: false,
            use_dynamic_lr: false,
            seed,
            ..Default::default()
        };
        let state = annotation_state(bundle, &model, None);
        let mut tr = Trainer::new(model, cfg, state)?;
        let mut best = None::<f64>;
        for _ in 0..epochs {
            tr.run_epoch(&mut NullAnnotator);
            if let Some(acc) = typing_accuracy(&tr.model, &bundle.split.dev, bundle.truth.as_ref())
            {
                best = Some(best.map_or(acc, |b| b.max(acc)));
            }
        }
        if let Some(dev_accuracy) = best {
            rows.push(AblationRow {
                channel,
                dev_accuracy,
            });
        }
    }
    Ok(rows)
}

#[derive(Clone, Debug)]
pub struct OutlierPipelineConfig {
    /// Learn the triplet projection first; otherwise score the raw
    /// concatenated embeddings.
    pub use_repr: bool,
    pub repr: ReprConfig,
    pub detect: OutlierConfig,
}

impl Default for OutlierPipelineConfig {
    fn default() -> Self {
        Self {
            use_repr: true,
            repr: ReprConfig::default(),
            detect: OutlierConfig::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct OutlierRun {
    pub scores: Vec<OutlierScore>,
    /// AP per type against the hidden truth; `None` for types without
    /// errors.
    pub per_type_ap: IndexMap<String, Option<f64>>,
    pub map: Option<f64>,
    pub skipped_types: Vec<String>,
    pub repr_losses: Vec<f64>,
    pub input_dim: usize,
}

/// Every assertion of the split, grouped by asserted type in label order.
fn members(bundle: &Bundle, have: impl Fn(&str) -> bool) -> IndexMap<String, Vec<String>> {
    let mut out: IndexMap<String, Vec<String>> = IndexMap::new();
    for a in bundle.split.all() {
        if have(&a.entity) {
            out.entry(a.type_id.clone())
                .or_default()
                .push(a.entity.clone());
        } else {
            log::warn!("{} has no outlier embedding; skipped", a.entity);
        }
    }
    out.sort_keys();
    out
}

/// Concatenated text and graph embeddings, optional triplet projection,
/// then per-type scoring. AP and MAP are computed when the bundle has
/// hidden truth.
pub fn run_outliers(
    bundle: &Bundle,
    cfg: &OutlierPipelineConfig,
) -> Result<OutlierRun, PipelineError> {
    let tables: Vec<&VectorTable> = [
        bundle.text_embeddings.as_ref(),
        bundle.graph_embeddings.as_ref(),
    ]
    .into_iter()
    .flatten()
    .collect();
    if tables.is_empty() {
        return Err(PipelineError::Data(
            "bundle has no text or graph embeddings".into(),
        ));
    }
    let have = |e: &str| tables.iter().all(|t| t.contains(e));
    let groups = members(bundle, have);

    let mut row_of: IndexMap<String, usize> = IndexMap::new();
    for ents in groups.values() {
        for e in ents {
            let n = row_of.len();
            row_of.entry(e.clone()).or_insert(n);
        }
    }
    let dim: usize = tables.iter().map(|t| t.dim()).sum();
    let mut data = Vec::with_capacity(row_of.len() * dim);
    for e in row_of.keys() {
        for t in &tables {
            data.extend_from_slice(t.get(e).expect("filtered"));
        }
    }
    let inputs = Tensor::new(vec![row_of.len(), dim], data)
        .map_err(|e| PipelineError::Data(e.to_string()))?;

    let (points, repr_losses) = if cfg.use_repr && row_of.len() > 1 {
        let sets: Vec<TypeSets> = groups
            .iter()
            .map(|(t, ents)| {
                let pos: Vec<usize> = ents.iter().map(|e| row_of[e]).collect();
                let inside: std::collections::HashSet<usize> = pos.iter().copied().collect();
                TypeSets {
                    type_id: t.clone(),
                    negatives: (0..row_of.len()).filter(|i| !inside.contains(i)).collect(),
                    positives: pos,
                }
            })
            .collect();
        let net = train_repr(&inputs, &sets, &cfg.repr)?;
        (net.project(&inputs), net.epoch_losses)
    } else {
        (
            (0..inputs.rows())
                .map(|r| inputs.row_slice(r).to_vec())
                .collect(),
            Vec::new(),
        )
    };

    let mut scores = Vec::new();
    let mut per_type_ap = IndexMap::new();
    let mut skipped_types = Vec::new();
    for (t, ents) in &groups {
        let pts: Vec<Vec<f64>> = ents.iter().map(|e| points[row_of[e]].clone()).collect();
        let s = match detect_type_outliers(t, ents, &pts, &cfg.detect) {
            Ok(s) => s,
            Err(OutlierError::TooFew { .. }) => {
                log::warn!("type {t} has {} members; skipped", ents.len());
                skipped_types.push(t.clone());
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        if let Some(truth) = &bundle.truth {
            let sc: Vec<f64> = s.iter().map(|x| x.score).collect();
            let pos: Vec<bool> = s
                .iter()
                .map(|x| truth.verdict(&x.entity, t).is_some_and(|v| v.is_error()))
                .collect();
            per_type_ap.insert(t.clone(), average_precision(&sc, &pos));
        }
        scores.extend(s);
    }
    let map = (!per_type_ap.is_empty()).then(|| mean_average_precision(&per_type_ap).0);
    Ok(OutlierRun {
        scores,
        per_type_ap,
        map,
        skipped_types,
        repr_losses,
        input_dim: dim,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{generate_synthetic_kg, SyntheticConfig};

    fn small() -> Bundle {
        generate_synthetic_kg(&SyntheticConfig {
            n_entities: 300,
            n_types: 3,
            noise_rate: 0.2,
            seed: 3,
            ..Default::default()
        })
        .unwrap()
    }

    fn small_encoder() -> EncoderConfig {
        EncoderConfig {
            surface_hidden: 8,
            relation_embed_dim: 8,
            relation_min_count: 2,
            classifier_hidden: 16,
            ..Default::default()
        }
    }

    #[test]
    fn network_and_items_cover_the_split() {
        let b = small();
        let cfg = fit_encoder_config(&b, small_encoder());
        assert_eq!(cfg.n_types, 3);
        assert_eq!(cfg.description, DescriptionEncoder::FileVector { dim: 32 });
        let net = build_network(&b, cfg, true, 0).unwrap();
        let prior = prior_belief(&b).unwrap();
        let state = annotation_state(&b, &net, Some(&prior));
        assert_eq!(state.noisy_len(), b.split.noisy_train.len());
        assert_eq!(state.gold_len(), 0);
        assert!(state
            .items
            .iter()
            .all(|it| (0.5..=1.5).contains(&it.weight)));
        let test = eval_set(&net, &b.split.test, b.truth.as_ref()).unwrap();
        assert_eq!(test.inputs.len(), b.split.test.len());
        let dev = eval_set(&net, &b.split.dev, b.truth.as_ref()).unwrap();
        assert_eq!(dev.inputs.len(), b.split.dev.len());
        assert!(eval_set(&net, &b.split.dev, None).is_none());
    }

    #[test]
    fn checkpointed_network_predicts_the_same() {
        let b = small();
        let net = build_network(&b, fit_encoder_config(&b, small_encoder()), true, 4).unwrap();
        let loaded = load_network(&b, &net.to_checkpoint()).unwrap();
        let items: Vec<usize> = (0..10).collect();
        assert_eq!(
            crate::network::predict(&net, &items),
            crate::network::predict(&loaded, &items)
        );
        let mut other = net.to_checkpoint();
        other
            .meta
            .insert("labels".into(), "[\"X\",\"Y\",\"Z\"]".into());
        assert!(matches!(
            load_network(&b, &other),
            Err(PipelineError::Data(_))
        ));
    }

    #[test]
    fn pretraining_sets_unit_scales_and_ablation_reports_every_channel() {
        let b = small();
        let cfg = fit_encoder_config(&b, small_encoder());
        let mut net = build_network(&b, cfg, true, 0).unwrap();
        let out = pretrain_channels(
            &mut net,
            &b,
            &PretrainConfig {
                epochs: 1,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(out.len(), 3);
        let rows = channel_ablation(&net, &b.split.test, b.truth.as_ref(), 1);
        assert_eq!(rows.len(), 4);
        assert!(rows[0].channel.is_none());
        assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.dev_accuracy)));
    }

    #[test]
    fn outlier_pipeline_scores_every_member() {
        let b = small();
        let cfg = OutlierPipelineConfig {
            use_repr: true,
            repr: ReprConfig {
                hidden_dim: 16,
                output_dim: 8,
                epochs: 1,
                steps_per_epoch: 5,
                ..Default::default()
            },
            detect: OutlierConfig::default(),
        };
        let run = run_outliers(&b, &cfg).unwrap();
        assert_eq!(run.scores.len(), b.split.all().count());
        assert_eq!(run.input_dim, 16 + 24);
        assert_eq!(run.repr_losses.len(), 1);
        let map = run.map.unwrap();
        assert!((0.0..=1.0).contains(&map));
        let again = run_outliers(&b, &cfg).unwrap();
        assert_eq!(again.scores, run.scores);
    }
}
