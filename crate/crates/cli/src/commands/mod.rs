//! Subcommand registry and helpers shared between subcommands.

mod data;
mod model;
mod service;
mod stats;

use std::path::Path;

use kgtyper_core::doc::KvDoc;
use kgtyper_core::ingest::Bundle;
use kgtyper_core::network::{EncoderConfig, TypingNetwork};
use kgtyper_core::pipeline::{build_network, fit_encoder_config, load_network};
use kgtyper_core::tensor::Checkpoint;
use kgtyper_core::trainer::TrainConfig;

use crate::error::CliError;
use crate::manifest::RunManifest;
use crate::settings::{Key, Settings, Spec};

pub type Handler = fn(&Settings, &mut RunManifest) -> Result<(), CliError>;

pub struct Subcommand {
    pub spec: Spec,
    pub run: Handler,
}

pub fn all() -> Vec<Subcommand> {
    vec![
        Subcommand {
            spec: data::ingest_spec(),
            run: data::ingest,
        },
        Subcommand {
            spec: data::build_dataset_spec(),
            run: data::build_dataset,
        },
        Subcommand {
            spec: data::synth_spec(),
            run: data::synth,
        },
        Subcommand {
            spec: model::pretrain_spec(),
            run: model::pretrain,
        },
        Subcommand {
            spec: model::train_spec(),
            run: model::train,
        },
        Subcommand {
            spec: service::serve_spec(),
            run: service::serve,
        },
        Subcommand {
            spec: service::oracle_spec(),
            run: service::oracle,
        },
        Subcommand {
            spec: model::detect_spec(),
            run: model::detect,
        },
        Subcommand {
            spec: stats::outliers_spec(),
            run: stats::outliers,
        },
        Subcommand {
            spec: model::evaluate_spec(),
            run: model::evaluate,
        },
        Subcommand {
            spec: stats::error_rate_spec(),
            run: stats::error_rate,
        },
        Subcommand {
            spec: model::grad_check_spec(),
            run: model::grad_check,
        },
    ]
}

pub const ENCODER_KEYS: &[Key] = &[
    Key::new(
        "description",
        "Description encoder: file_vector or hashed_tokens",
    ),
    Key::new(
        "description_dim",
        "Description channel width (hashed tokens)",
    ),
    Key::new("hash_dim", "Hash buckets for the hashed-token encoder"),
    Key::new("surface_hidden", "Character RNN hidden width"),
    Key::new("relation_embed_dim", "Relation channel width"),
    Key::new(
        "relation_min_count",
        "Relations seen at most this often are dropped",
    ),
    Key::new("classifier_hidden", "Hidden width of the pre-training head"),
    Key::new("use_relu", "Rectify logits before the sigmoid"),
    Key::new("cell", "Surface RNN cell: elman or leaky:RATE"),
    Key::new("max_name_chars", "Characters of the name fed to the RNN"),
];

pub fn encoder_defaults() -> KvDoc {
    let mut doc = KvDoc::new("defaults", 1);
    EncoderConfig::default().describe(&mut doc, "");
    if doc.get("hash_dim").is_none() {
        doc.set("hash_dim", 4096);
    }
    doc
}

pub const TRAIN_KEYS: &[Key] = &[
    Key::new("batch_size", "Minibatch size"),
    Key::new("base_lr", "Adam learning rate"),
    Key::new("epochs", "Passes over the training items"),
    Key::new(
        "annotations_per_round",
        "Assertions queried per annotation round",
    ),
    Key::new("rounds_every_iters", "Iterations between annotation rounds"),
    Key::new("annotation_budget", "Total annotations over the run"),
    Key::new("threshold", "Error threshold on Pr(z): a number or auto"),
    Key::new("use_noise_model", "Train through the noise layer"),
    Key::new("use_vat", "Add the adversarial smoothness term"),
    Key::new(
        "use_dynamic_lr",
        "Scale noisy-item weights by the prior belief",
    ),
    Key::new(
        "finetune_on_gold",
        "Fine-tune on the gold set after training",
    ),
    Key::new("finetune_epochs", "Fine-tuning epochs"),
    Key::new(
        "gold_only",
        "Spend the budget up front and train on gold labels only",
    ),
    Key::new("strategy", "Selection strategy: us or err"),
    Key::new("err.pool_subsample", "Pool subsample scored per ERR round"),
    Key::new("err.batch_len", "Gold items per ERR lookahead step"),
    Key::new("err.expectation", "ERR label expectation: model or uniform"),
    Key::new("vat.epsilon", "Perturbation radius"),
    Key::new("vat.lambda", "Weight of the adversarial term"),
    Key::new(
        "vat.power_iters",
        "Power iterations for the adversarial direction",
    ),
    Key::new("vat.xi", "Finite-difference step of the power iteration"),
    Key::new(
        "vat.paper_sign",
        "Use the literal sign convention of the adversarial term",
    ),
    Key::new(
        "eval_at",
        "Comma-separated annotation counts at which to evaluate",
    ),
];

pub fn train_defaults() -> KvDoc {
    let mut doc = KvDoc::new("defaults", 1);
    TrainConfig::default().describe(&mut doc, "");
    doc
}

/// Training config from `TRAIN_KEYS` plus the run seed.
pub fn train_config(s: &Settings) -> Result<TrainConfig, CliError> {
    let mut cfg = TrainConfig::default();
    for k in TRAIN_KEYS {
        cfg.set(k.name, s.get(k.name))
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    cfg.seed = s.seed()?;
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

/// Encoder config from `ENCODER_KEYS`, fitted to the bundle.
pub fn encoder_config(s: &Settings, bundle: &Bundle) -> Result<EncoderConfig, CliError> {
    let mut doc = KvDoc::new("encoder", 1);
    for k in ENCODER_KEYS {
        doc.set(k.name, s.get(k.name));
    }
    doc.set("n_types", bundle.labels().len().max(1));
    let cfg = EncoderConfig::from_doc(&doc, "").map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(fit_encoder_config(bundle, cfg))
}

pub fn read_bundle(s: &Settings, key: &str, m: &mut RunManifest) -> Result<Bundle, CliError> {
    let dir = s.input(key)?;
    m.input(key, &dir);
    Ok(Bundle::read_dir(&dir)?)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    let bytes = std::fs::read(path)?;
    Checkpoint::from_bytes(&bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// The network from `--checkpoint` when given, otherwise a fresh one built
/// from the encoder keys.
pub fn network(
    s: &Settings,
    bundle: &Bundle,
    use_noise: bool,
    m: &mut RunManifest,
) -> Result<TypingNetwork, CliError> {
    match s.optional_input("checkpoint")? {
        Some(p) => {
            m.input("checkpoint", &p);
            Ok(load_network(bundle, &read_checkpoint(&p)?)?)
        }
        None => Ok(build_network(
            bundle,
            encoder_config(s, bundle)?,
            use_noise,
            s.seed()?,
        )?),
    }
}

pub fn write_doc(path: &Path, doc: &KvDoc) -> Result<(), CliError> {
    std::fs::write(path, doc.render())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use super::*;

    #[test]
    fn tables_cover_every_core_key() {
        let train_doc = train_defaults();
        let train: HashSet<&str> = train_doc
            .iter()
            .map(|(k, _)| k)
            .filter(|k| *k != "seed")
            .collect();
        let keys: HashSet<&str> = TRAIN_KEYS.iter().map(|k| k.name).collect();
        assert_eq!(train, keys);
        let enc_doc = encoder_defaults();
        let enc: HashSet<&str> = enc_doc
            .iter()
            .map(|(k, _)| k)
            .filter(|k| *k != "n_types")
            .collect();
        let keys: HashSet<&str> = ENCODER_KEYS.iter().map(|k| k.name).collect();
        assert_eq!(enc, keys);
    }

    #[test]
    fn flags_are_unique_per_command() {
        for c in all() {
            let mut seen = HashSet::new();
            for k in &c.spec.keys {
                assert!(
                    seen.insert(k.long()),
                    "{}: duplicate --{}",
                    c.spec.name,
                    k.long()
                );
            }
            c.spec.command().debug_assert();
        }
    }
}
