//! Synthetic knowledge graphs with planted typing errors.
//!
//! Each entity draws a true coarse type and a sub-cluster within it. All
//! feature channels are type-correlated: a name suffix and optional head
//! word, a relation multiset biased toward the type's preferred relations,
//! a description vector around a type centroid, a description text mixing
//! type and generic vocabulary, and two extra embedding tables for the
//! outlier pipeline. Then exactly `⌊q·n⌋` entities get their asserted type
//! replaced by a different one.

use indexmap::IndexMap;
use rand::Rng;

use super::bundle::Bundle;
use super::dataset::{
    split_by_entity, DatasetSplit, GroundTruth, TruthRecord, TypeAssertion, Verdict,
};
use super::hierarchy::TypeHierarchy;
use super::store::{build_entities, DescriptionStore};
use super::tables::VectorTable;
use super::triples::{TripleRecord, TYPE_RELATION};
use super::IngestError;
use crate::doc::KvDoc;
use crate::rng::{self, normal, Prng};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseMode {
    /// Flipped entities chosen uniformly; each flips to a uniformly chosen
    /// different type.
    Uniform,
    /// One sub-cluster per type is over-represented among flips
    /// (`corrupted_weight`) and always flips to one fixed confusable type,
    /// so errors are systematic rather than scattered.
    Clustered,
}

impl std::str::FromStr for NoiseMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "uniform" => Ok(NoiseMode::Uniform),
            "clustered" => Ok(NoiseMode::Clustered),
            _ => Err(format!("unknown noise mode {s:?}")),
        }
    }
}

impl std::fmt::Display for NoiseMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NoiseMode::Uniform => "uniform",
            NoiseMode::Clustered => "clustered",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub n_entities: usize,
    pub n_types: usize,
    pub n_relations: usize,
    pub noise_rate: f64,
    pub seed: u64,
    pub noise_mode: NoiseMode,
    pub subclusters: usize,
    pub corrupted_weight: f64,
    pub description_dim: usize,
    /// Scale of type centroids relative to unit per-entity noise.
    pub description_separation: f64,
    /// Probability that a name carries its own type's suffix.
    pub name_signal: f64,
    /// Probability that a name ends with one of its type's head words.
    pub headword_rate: f64,
    /// Probability that an edge uses one of the type's preferred relations.
    pub relation_signal: f64,
    pub word_dim: usize,
    pub text_dim: usize,
    pub graph_dim: usize,
    pub dev_fraction: f64,
    pub test_fraction: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_entities: 1000,
            n_types: 5,
            n_relations: 30,
            noise_rate: 0.2,
            seed: 0,
            noise_mode: NoiseMode::Uniform,
            subclusters: 4,
            corrupted_weight: 8.0,
            description_dim: 32,
            description_separation: 0.35,
            name_signal: 0.6,
            headword_rate: 0.6,
            relation_signal: 0.5,
            word_dim: 16,
            text_dim: 16,
            graph_dim: 24,
            dev_fraction: 0.05,
            test_fraction: 0.2,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<(), IngestError> {
        let bad = |m: &str| Err(IngestError::Config(m.to_string()));
        if !(0.0..0.5).contains(&self.noise_rate) {
            return bad("noise rate must lie in [0, 0.5)");
        }
        if self.n_types < 2 {
            return bad("need at least two types");
        }
        if self.n_entities == 0 || self.n_relations == 0 || self.subclusters == 0 {
            return bad("entity, relation and sub-cluster counts must be positive");
        }
        if self.description_dim == 0
            || self.word_dim == 0
            || self.text_dim == 0
            || self.graph_dim == 0
        {
            return bad("dimensions must be positive");
        }
        for p in [self.name_signal, self.headword_rate, self.relation_signal] {
            if !(0.0..=1.0).contains(&p) {
                return bad("signal probabilities must lie in [0, 1]");
            }
        }
        if !(self.corrupted_weight > 0.0) {
            return bad("corrupted weight must be positive");
        }
        Ok(())
    }

    /// Number of flipped assertions, `⌊q·n⌋`. The tiny offset keeps products
    /// like 0.29·100 from rounding down through representation error.
    pub fn flip_count(&self) -> usize {
        ((self.noise_rate * self.n_entities as f64) + 1e-9).floor() as usize
    }
}

const TYPE_NAMES: &[&str] = &[
    "Person",
    "Place",
    "Organisation",
    "Work",
    "Species",
    "Event",
    "Device",
    "Food",
    "Language",
    "Award",
    "Disease",
    "ChemicalSubstance",
    "MeanOfTransportation",
    "Activity",
    "Currency",
    "Colour",
    "Sport",
    "Holiday",
    "Building",
    "Game",
];
const CONSONANTS: &[&str] = &[
    "b", "c", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "sh", "tr",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou"];

fn syllables(rng: &mut Prng, n: usize) -> String {
    (0..n)
        .map(|_| {
            let c = CONSONANTS[rng.random_range(0..CONSONANTS.len())];
            let v = VOWELS[rng.random_range(0..VOWELS.len())];
            format!("{c}{v}")
        })
        .collect()
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    c.next()
        .map_or(String::new(), |f| f.to_uppercase().chain(c).collect())
}

fn gaussian(rng: &mut Prng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim).map(|_| scale * normal(rng)).collect()
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        v
    } else {
        v.into_iter().map(|x| x / n).collect()
    }
}

fn around(rng: &mut Prng, centre: &[f64], offset: &[f64], noise: f64) -> Vec<f64> {
    centre
        .iter()
        .zip(offset)
        .map(|(c, o)| c + o + noise * normal(rng))
        .collect()
}

struct TypeProfile {
    id: String,
    token: String,
    suffixes: Vec<String>,
    headwords: Vec<String>,
    vocabulary: Vec<String>,
    preferred_relations: Vec<usize>,
    desc_centre: Vec<f64>,
    text_centre: Vec<f64>,
    graph_centre: Vec<f64>,
    sub_offsets: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)>,
    corrupted_sub: usize,
    confusion_target: usize,
}

/// Draws a synthetic graph, split and hidden truth. Deterministic in the
/// config (including the seed).
pub fn generate_synthetic_kg(cfg: &SyntheticConfig) -> Result<Bundle, IngestError> {
    cfg.validate()?;
    let mut rng = rng::stream(cfg.seed, rng::streams::SAMPLING);
    let t_count = cfg.n_types;

    let mut used_tokens = std::collections::HashSet::new();
    let mut fresh_word = |rng: &mut Prng, syl: usize| loop {
        let w = syllables(rng, syl);
        if used_tokens.insert(w.clone()) {
            return w;
        }
    };

    let pref_size = (2 * cfg.n_relations / t_count).clamp(2.min(cfg.n_relations), cfg.n_relations);
    let mut profiles = Vec::with_capacity(t_count);
    for t in 0..t_count {
        let base = TYPE_NAMES
            .get(t)
            .map_or_else(|| format!("Type{t}"), |s| s.to_string());
        let suffixes = (0..2).map(|_| fresh_word(&mut rng, 2)).collect();
        let headwords = (0..5).map(|_| fresh_word(&mut rng, 2)).collect();
        let vocabulary = (0..8).map(|_| fresh_word(&mut rng, 3)).collect();
        let preferred_relations = rng::sample_indices(cfg.n_relations, pref_size, &mut rng);
        let sep = cfg.description_separation;
        let desc_centre = gaussian(&mut rng, cfg.description_dim, sep);
        let text_centre = gaussian(&mut rng, cfg.text_dim, 1.5);
        let graph_centre = gaussian(&mut rng, cfg.graph_dim, 1.5);
        let sub_offsets = (0..cfg.subclusters)
            .map(|_| {
                (
                    gaussian(&mut rng, cfg.description_dim, 0.5 * sep),
                    gaussian(&mut rng, cfg.text_dim, 0.5),
                    gaussian(&mut rng, cfg.graph_dim, 0.5),
                )
            })
            .collect();
        let corrupted_sub = rng.random_range(0..cfg.subclusters);
        let mut confusion_target = rng.random_range(0..t_count - 1);
        if confusion_target >= t {
            confusion_target += 1;
        }
        profiles.push(TypeProfile {
            id: format!("dbo:{base}"),
            token: base.to_lowercase(),
            suffixes,
            headwords,
            vocabulary,
            preferred_relations,
            desc_centre,
            text_centre,
            graph_centre,
            sub_offsets,
            corrupted_sub,
            confusion_target,
        });
    }
    let generic: Vec<String> = (0..40).map(|_| fresh_word(&mut rng, 2)).collect();
    let relation_ids: Vec<String> = (0..cfg.n_relations)
        .map(|j| format!("dbo:rel{j:03}"))
        .collect();

    let mut hierarchy = TypeHierarchy::new("owl:Thing");
    for p in &profiles {
        hierarchy.add(p.id.clone(), "owl:Thing")?;
        for s in 0..cfg.subclusters {
            hierarchy.add(format!("{}Kind{s}", p.id), &p.id)?;
        }
    }

    // Word vectors: one per type token, head words close to their type.
    let mut words = VectorTable::new(cfg.word_dim);
    let type_vecs: Vec<Vec<f64>> = profiles
        .iter()
        .map(|_| unit(gaussian(&mut rng, cfg.word_dim, 1.0)))
        .collect();
    for (p, v) in profiles.iter().zip(&type_vecs) {
        words.insert(p.token.clone(), v.clone());
    }
    for (p, v) in profiles.iter().zip(&type_vecs) {
        for hw in &p.headwords {
            let noise = unit(gaussian(&mut rng, cfg.word_dim, 1.0));
            let w: Vec<f64> = v
                .iter()
                .zip(&noise)
                .map(|(a, b)| 0.8 * a + 0.6 * b)
                .collect();
            words.insert(hw.clone(), w);
        }
    }
    for g in &generic {
        words.insert(g.clone(), unit(gaussian(&mut rng, cfg.word_dim, 1.0)));
    }

    let n = cfg.n_entities;
    let ids: Vec<String> = (0..n).map(|i| format!("dbr:E{i:05}")).collect();
    let mut true_type = Vec::with_capacity(n);
    let mut sub = Vec::with_capacity(n);
    let mut names = IndexMap::new();
    let mut texts = IndexMap::new();
    let mut desc_vecs = VectorTable::new(cfg.description_dim);
    let mut text_emb = VectorTable::new(cfg.text_dim);
    let mut graph_emb = VectorTable::new(cfg.graph_dim);
    let mut relation_triples = Vec::new();
    for id in &ids {
        let t = rng.random_range(0..t_count);
        let s = rng.random_range(0..cfg.subclusters);
        true_type.push(t);
        sub.push(s);
        let p = &profiles[t];

        let suffix_owner = if rng.random_bool(cfg.name_signal) {
            t
        } else {
            rng.random_range(0..t_count)
        };
        let suffixes = &profiles[suffix_owner].suffixes;
        let mut name =
            capitalize(&syllables(&mut rng, 2)) + &suffixes[rng.random_range(0..suffixes.len())];
        if rng.random_bool(cfg.headword_rate) {
            name.push(' ');
            name.push_str(&capitalize(
                &p.headwords[rng.random_range(0..p.headwords.len())],
            ));
        }
        names.insert(id.clone(), name);

        let len = rng.random_range(6..=12);
        let text: Vec<&str> = (0..len)
            .map(|_| {
                if rng.random_bool(0.5) {
                    p.vocabulary[rng.random_range(0..p.vocabulary.len())].as_str()
                } else {
                    generic[rng.random_range(0..generic.len())].as_str()
                }
            })
            .collect();
        texts.insert(id.clone(), text.join(" "));

        let (d_off, t_off, g_off) = &p.sub_offsets[s];
        desc_vecs.insert(id.clone(), around(&mut rng, &p.desc_centre, d_off, 1.0));
        text_emb.insert(id.clone(), around(&mut rng, &p.text_centre, t_off, 1.0));
        graph_emb.insert(id.clone(), around(&mut rng, &p.graph_centre, g_off, 1.0));

        let edges = rng.random_range(1..=6);
        for _ in 0..edges {
            let r = if rng.random_bool(cfg.relation_signal) {
                p.preferred_relations[rng.random_range(0..p.preferred_relations.len())]
            } else {
                rng.random_range(0..cfg.n_relations)
            };
            let tail = ids[rng.random_range(0..n)].clone();
            relation_triples.push(TripleRecord::new(id.clone(), relation_ids[r].clone(), tail));
        }
    }

    // Plant exactly ⌊q·n⌋ flips on a separate stream so feature draws stay
    // fixed when only the noise rate changes.
    let mut noise_rng = rng::stream(cfg.seed, rng::streams::NOISE);
    let k = cfg.flip_count();
    let flipped = match cfg.noise_mode {
        NoiseMode::Uniform => rng::sample_indices(n, k, &mut noise_rng),
        NoiseMode::Clustered => {
            let w: Vec<f64> = (0..n)
                .map(|i| {
                    if sub[i] == profiles[true_type[i]].corrupted_sub {
                        cfg.corrupted_weight
                    } else {
                        1.0
                    }
                })
                .collect();
            rng::weighted_sample_indices(&w, k, &mut noise_rng)
        }
    };
    let mut observed = true_type.clone();
    for &i in &flipped {
        let t = true_type[i];
        observed[i] =
            if cfg.noise_mode == NoiseMode::Clustered && sub[i] == profiles[t].corrupted_sub {
                profiles[t].confusion_target
            } else {
                let mut o = noise_rng.random_range(0..t_count - 1);
                if o >= t {
                    o += 1;
                }
                o
            };
    }

    let mut triples = Vec::with_capacity(n + relation_triples.len());
    let mut truth = GroundTruth::default();
    let mut assertions = Vec::with_capacity(n);
    let mut rel_iter = relation_triples.into_iter().peekable();
    for i in 0..n {
        let asserted = &profiles[observed[i]].id;
        triples.push(TripleRecord::new(
            ids[i].clone(),
            TYPE_RELATION,
            asserted.clone(),
        ));
        while rel_iter.peek().is_some_and(|t| t.head == ids[i]) {
            triples.push(rel_iter.next().expect("peeked"));
        }
        let verdict = if observed[i] == true_type[i] {
            Verdict::Correct
        } else {
            Verdict::Error
        };
        truth.insert(
            &ids[i],
            asserted,
            TruthRecord {
                verdict,
                true_type: profiles[true_type[i]].id.clone(),
            },
        );
        assertions.push(TypeAssertion::noisy(ids[i].clone(), asserted.clone()));
    }

    let mut split_rng = rng::stream(cfg.seed, rng::streams::SAMPLING ^ 0x5eed);
    let (train, dev, test) = split_by_entity(
        assertions,
        cfg.dev_fraction,
        cfg.test_fraction,
        &mut split_rng,
    )?;
    let test = test
        .into_iter()
        .map(|a| {
            let v = truth
                .verdict(&a.entity, &a.type_id)
                .expect("truth for every assertion");
            TypeAssertion::gold(a.entity, a.type_id, v)
        })
        .collect();
    let split = DatasetSplit {
        noisy_train: train,
        gold_pool: Vec::new(),
        dev,
        test,
        seed: cfg.seed,
    };
    split.validate()?;

    let descriptions = DescriptionStore {
        text: texts,
        vectors: Some(desc_vecs),
    };
    let built = build_entities(&triples, &names, &descriptions, TYPE_RELATION);

    let mut manifest = KvDoc::new(super::DATASET_MANIFEST_KIND, 1);
    manifest.set("source", "synthetic");
    manifest.set("entities", cfg.n_entities);
    manifest.set("types", cfg.n_types);
    manifest.set("relations", cfg.n_relations);
    manifest.set("noise_rate", cfg.noise_rate);
    manifest.set("noise_mode", cfg.noise_mode);
    manifest.set("flips", k);
    manifest.set("subclusters", cfg.subclusters);
    manifest.set("description_dim", cfg.description_dim);
    manifest.set("description_separation", cfg.description_separation);
    manifest.set("name_signal", cfg.name_signal);
    manifest.set("headword_rate", cfg.headword_rate);
    manifest.set("relation_signal", cfg.relation_signal);
    manifest.set(
        "labels",
        profiles
            .iter()
            .map(|p| p.id.as_str())
            .collect::<Vec<_>>()
            .join(","),
    );
    split.describe(&mut manifest);

    Ok(Bundle {
        store: built.store,
        triples,
        names,
        descriptions,
        hierarchy,
        split,
        truth: Some(truth),
        words: Some(words),
        text_embeddings: Some(text_emb),
        graph_embeddings: Some(graph_emb),
        manifest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_noise_means_all_correct() {
        let kg = generate_synthetic_kg(&SyntheticConfig {
            n_entities: 200,
            noise_rate: 0.0,
            ..SyntheticConfig::default()
        })
        .unwrap();
        let truth = kg.truth.as_ref().unwrap();
        assert_eq!(truth.error_count(), 0);
        assert_eq!(truth.len(), 200);
    }

    #[test]
    fn exact_flip_counts() {
        for (n, q, want) in [(1000, 0.3, 300), (600, 0.272, 163), (100, 0.29, 29)] {
            for mode in [NoiseMode::Uniform, NoiseMode::Clustered] {
                let kg = generate_synthetic_kg(&SyntheticConfig {
                    n_entities: n,
                    noise_rate: q,
                    noise_mode: mode,
                    seed: 3,
                    ..SyntheticConfig::default()
                })
                .unwrap();
                let truth = kg.truth.as_ref().unwrap();
                assert_eq!(truth.error_count(), want, "n={n} q={q} {mode}");
                for (_, t, r) in truth.iter() {
                    assert_eq!(r.verdict == Verdict::Error, r.true_type != t);
                }
            }
        }
    }

    #[test]
    fn invalid_configs_error() {
        for cfg in [
            SyntheticConfig {
                noise_rate: 0.5,
                ..SyntheticConfig::default()
            },
            SyntheticConfig {
                n_types: 1,
                ..SyntheticConfig::default()
            },
            SyntheticConfig {
                noise_rate: -0.1,
                ..SyntheticConfig::default()
            },
        ] {
            assert!(matches!(
                generate_synthetic_kg(&cfg),
                Err(IngestError::Config(_))
            ));
        }
    }

    #[test]
    fn deterministic_and_consistent() {
        let cfg = SyntheticConfig {
            n_entities: 300,
            seed: 9,
            ..SyntheticConfig::default()
        };
        let a = generate_synthetic_kg(&cfg).unwrap();
        let b = generate_synthetic_kg(&cfg).unwrap();
        assert_eq!(a.triples, b.triples);
        assert_eq!(a.split, b.split);
        assert_eq!(a.manifest.render(), b.manifest.render());
        assert_eq!(a.store.len(), 300);
        assert!(a.split.test.iter().all(|x| x.verdict.is_some()));
        let total = a.split.noisy_train.len() + a.split.dev.len() + a.split.test.len();
        assert_eq!(total, 300);
        assert_eq!(a.split.test.len(), 60);
    }
}
