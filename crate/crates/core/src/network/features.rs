//! Per-entity model inputs: normalized character ids, relation bag and
//! description features.

use std::io::{BufRead, Write};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{DescriptionEncoder, EncoderConfig};
use crate::ingest::{DescriptionStore, EntityRecord, EntityStore, IngestError};

/// Printable ASCII `0x20..=0x7F` maps to ids `0..96`; anything else is
/// [`OOV_CHAR`].
pub const ALPHABET: usize = 97;
pub const OOV_CHAR: u8 = 96;

/// Lowercases and maps characters to alphabet ids. Only the trailing
/// `max_chars` characters are kept, so suffixes survive truncation.
pub fn normalize_name(name: &str, max_chars: usize) -> Vec<u8> {
    let ids: Vec<u8> = name
        .trim()
        .chars()
        .flat_map(char::to_lowercase)
        .map(|c| {
            let cp = c as u32;
            if (0x20..=0x7F).contains(&cp) {
                (cp - 0x20) as u8
            } else {
                OOV_CHAR
            }
        })
        .collect();
    let skip = ids.len().saturating_sub(max_chars);
    ids[skip..].to_vec()
}

/// Lowercase alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn hash_token(token: &str, buckets: usize) -> usize {
    (fnv1a(token.as_bytes()) % buckets as u64) as usize
}

/// Relations seen more than `min_count` times, sorted by id.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RelationVocab {
    entries: IndexMap<String, u64>,
}

impl RelationVocab {
    pub fn build(store: &EntityStore, min_count: u64) -> Self {
        let mut counts: IndexMap<String, u64> = IndexMap::new();
        for e in store.iter() {
            for (r, &c) in &e.relations {
                *counts.entry(r.clone()).or_default() += u64::from(c);
            }
        }
        counts.retain(|_, c| *c > min_count);
        counts.sort_keys();
        Self { entries: counts }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn index(&self, relation: &str) -> Option<usize> {
        self.entries.get_index_of(relation)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u64)> {
        self.entries.iter().map(|(k, &c)| (k.as_str(), c))
    }

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (r, c) in &self.entries {
            writeln!(w, "{r}\t{c}")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self, IngestError> {
        let mut entries = IndexMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed = line
                .split_once('\t')
                .and_then(|(r, c)| Some((r.to_string(), c.trim().parse().ok()?)));
            let (r, c) = parsed.ok_or_else(|| IngestError::Malformed {
                line: i + 1,
                message: "expected relation<TAB>count".into(),
            })?;
            entries.insert(r, c);
        }
        Ok(Self { entries })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DescFeature {
    Vector(Vec<f64>),
    Tokens(Vec<usize>),
    Missing,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EntityFeatures {
    pub chars: Vec<u8>,
    /// `(vocab index, multiplicity)`; out-of-vocabulary relations dropped.
    pub relations: Vec<(usize, f64)>,
    pub description: DescFeature,
}

pub fn entity_features(
    rec: &EntityRecord,
    descriptions: &DescriptionStore,
    cfg: &EncoderConfig,
    vocab: &RelationVocab,
) -> EntityFeatures {
    let chars = normalize_name(&rec.name, cfg.max_name_chars);
    let relations = rec
        .relations
        .iter()
        .filter_map(|(r, &c)| vocab.index(r).map(|i| (i, f64::from(c))))
        .collect();
    let description = match cfg.description {
        DescriptionEncoder::FileVector { dim } => match descriptions
            .vectors
            .as_ref()
            .and_then(|v| v.get(&rec.description_key))
        {
            Some(v) if v.len() == dim => DescFeature::Vector(v.to_vec()),
            Some(v) => {
                log::warn!(
                    "{}: description vector has dimension {} (want {dim})",
                    rec.id,
                    v.len()
                );
                DescFeature::Missing
            }
            None => DescFeature::Missing,
        },
        DescriptionEncoder::HashedTokens { hash_dim, .. } => {
            match descriptions.text.get(&rec.description_key) {
                Some(t) => {
                    let toks: Vec<usize> = tokenize(t)
                        .iter()
                        .map(|w| hash_token(w, hash_dim))
                        .collect();
                    if toks.is_empty() {
                        DescFeature::Missing
                    } else {
                        DescFeature::Tokens(toks)
                    }
                }
                None => DescFeature::Missing,
            }
        }
    };
    EntityFeatures {
        chars,
        relations,
        description,
    }
}

/// Features for every entity of a store, in store order.
#[derive(Clone, Debug, Default)]
pub struct FeatureSet {
    pub entities: Vec<EntityFeatures>,
    index: IndexMap<String, usize>,
    pub missing_descriptions: usize,
    pub empty_names: usize,
}

impl FeatureSet {
    pub fn build(
        store: &EntityStore,
        descriptions: &DescriptionStore,
        cfg: &EncoderConfig,
        vocab: &RelationVocab,
    ) -> Self {
        let mut set = FeatureSet::default();
        for rec in store.iter() {
            let f = entity_features(rec, descriptions, cfg, vocab);
            if f.description == DescFeature::Missing {
                set.missing_descriptions += 1;
            }
            if f.chars.is_empty() {
                set.empty_names += 1;
            }
            set.index.insert(rec.id.clone(), set.entities.len());
            set.entities.push(f);
        }
        if set.missing_descriptions > 0 {
            log::warn!(
                "{} entities use a zero description channel",
                set.missing_descriptions
            );
        }
        if set.empty_names > 0 {
            log::warn!("{} entities have an empty normalized name", set.empty_names);
        }
        set
    }

    pub fn from_features(ids: Vec<String>, entities: Vec<EntityFeatures>) -> Self {
        assert_eq!(ids.len(), entities.len());
        Self {
            index: ids.into_iter().enumerate().map(|(i, id)| (id, i)).collect(),
            entities,
            missing_descriptions: 0,
            empty_names: 0,
        }
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn id(&self, i: usize) -> &str {
        self.index.get_index(i).expect("entity index").0
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }
}
