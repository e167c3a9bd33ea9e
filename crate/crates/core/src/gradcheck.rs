//! Finite-difference check of the full training objective: all three
//! encoders, the typing head, the noise layer and the combined loss with a
//! frozen adversarial perturbation, on a small synthetic graph.

use rand::Rng;

use crate::ingest::{generate_synthetic_kg, SyntheticConfig, Verdict};
use crate::network::{CellKind, Channel, DescriptionEncoder, EncoderConfig};
use crate::noise::NOISE_PARAM;
use crate::pipeline::{build_network, train_items, PipelineError};
use crate::rng::{self, streams};
use crate::tensor::finite_diff_check;
use crate::trainer::{combined_loss, GoldLabel, LossOptions, TrainItem, VatInput};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckConfig {
    pub n_entities: usize,
    /// Items in the loss batch; a third of them are given gold labels.
    pub batch: usize,
    pub use_relu: bool,
    pub vat_weight: f64,
    pub vat_scale: f64,
    pub step: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            n_entities: 24,
            batch: 6,
            use_relu: true,
            vat_weight: 0.5,
            vat_scale: 0.3,
            step: 1e-6,
        }
    }
}

/// Largest relative gradient error for one seed.
pub fn full_model_grad_check(seed: u64, cfg: &GradCheckConfig) -> Result<f64, PipelineError> {
    let bundle = generate_synthetic_kg(&SyntheticConfig {
        n_entities: cfg.n_entities,
        n_types: 3,
        n_relations: 5,
        seed,
        description_dim: 4,
        dev_fraction: 0.0,
        test_fraction: 0.0,
        ..Default::default()
    })?;
    let enc = EncoderConfig {
        description: DescriptionEncoder::HashedTokens {
            hash_dim: 8,
            embed_dim: 2,
        },
        surface_hidden: 2,
        relation_embed_dim: 3,
        relation_min_count: 0,
        classifier_hidden: 4,
        n_types: bundle.labels().len(),
        use_relu: cfg.use_relu,
        cell: CellKind::Elman,
        max_name_chars: 6,
    };
    let mut net = build_network(&bundle, enc, true, seed)?;
    let mut rng = rng::stream(seed, streams::VAT);
    let t = net.labels.len();
    // Move p away from its initial value so the channel is not an identity.
    if let Some(p) = net.params.get_mut(NOISE_PARAM) {
        for v in p.data_mut() {
            *v = rng.random_range(0.6..0.95);
        }
    }
    for ch in Channel::ALL {
        if let Some(s) = net.params.get_mut(ch.scale_param()) {
            s.data_mut()[0] = rng.random_range(0.5..1.5);
        }
    }

    let mut items: Vec<TrainItem> = train_items(&bundle, &net, None)
        .into_iter()
        .take(cfg.batch)
        .collect();
    for (i, it) in items.iter_mut().enumerate() {
        it.weight = rng.random_range(0.5..1.5);
        match i % 3 {
            1 => it.gold = Some(GoldLabel::new(Verdict::Correct, None, it.type_idx)),
            2 => {
                it.gold = Some(GoldLabel::new(
                    Verdict::Error,
                    Some((it.type_idx + 1) % t),
                    it.type_idx,
                ))
            }
            _ => {}
        }
    }
    let refs: Vec<&TrainItem> = items.iter().collect();
    let r =
        crate::vat::random_embeddings(&mut rng, refs.len(), net.config.embed_dim(), cfg.vat_scale);
    let opts = LossOptions {
        use_dynamic_lr: true,
    };
    finite_diff_check(
        |g, b| {
            combined_loss(
                &net,
                g,
                b,
                &refs,
                opts,
                VatInput::Fixed {
                    weight: cfg.vat_weight,
                    r: &r,
                },
            )
            .expect("well-formed batch")
            .total
        },
        &net.params,
        cfg.step,
    )
    .map_err(|e| PipelineError::Data(e.to_string()))
}
