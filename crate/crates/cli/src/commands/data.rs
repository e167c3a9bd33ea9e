//! Dataset subcommands: `synth`, `ingest`, `build-dataset`.

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::Path;

use indexmap::IndexMap;
use kgtyper_core::doc::KvDoc;
use kgtyper_core::ingest::{
    build_coarse_dataset, build_entities, generate_synthetic_kg, parse_ntriples, parse_triples,
    read_text_table, Bundle, CoarseConfig, DatasetSplit, DescriptionStore, GroundTruth,
    OnMalformed, SyntheticConfig, TypeHierarchy, VectorFormat, VectorTable, DATASET_MANIFEST_KIND,
    TYPE_RELATION,
};

use super::read_bundle;
use crate::error::CliError;
use crate::manifest::RunManifest;
use crate::settings::{Key, Settings, Spec};

const SYNTH_KEYS: &[Key] = &[
    Key::flag(
        "n_entities",
        "entities",
        "Entities, one type assertion each",
    ),
    Key::flag("n_types", "types", "Types"),
    Key::flag("n_relations", "relations", "Relation vocabulary size"),
    Key::flag(
        "noise_rate",
        "noise",
        "Fraction of assertions flipped to a wrong type",
    ),
    Key::new("noise_mode", "uniform or clustered"),
    Key::new("subclusters", "Sub-clusters per type"),
    Key::new(
        "corrupted_weight",
        "Over-representation of the corrupted sub-cluster (clustered mode)",
    ),
    Key::new("description_dim", "Description vector width"),
    Key::new(
        "description_separation",
        "Type centroid scale relative to entity noise",
    ),
    Key::new(
        "name_signal",
        "Probability a name carries its type's suffix",
    ),
    Key::new(
        "headword_rate",
        "Probability a name ends in a type head word",
    ),
    Key::new(
        "relation_signal",
        "Probability an edge uses a preferred relation",
    ),
    Key::new("word_dim", "Word vector width"),
    Key::new("text_dim", "Text embedding width"),
    Key::new("graph_dim", "Graph embedding width"),
    Key::new("dev_fraction", "Entities held out for dev"),
    Key::new("test_fraction", "Entities held out for test"),
];

pub fn synth_spec() -> Spec {
    let d = SyntheticConfig::default();
    let mut s = Spec::new(
        "synth",
        "Generate a synthetic typed knowledge graph with planted errors",
    );
    s.add(
        SYNTH_KEYS,
        &[
            ("n_entities", d.n_entities.to_string()),
            ("n_types", d.n_types.to_string()),
            ("n_relations", d.n_relations.to_string()),
            ("noise_rate", d.noise_rate.to_string()),
            ("noise_mode", d.noise_mode.to_string()),
            ("subclusters", d.subclusters.to_string()),
            ("corrupted_weight", d.corrupted_weight.to_string()),
            ("description_dim", d.description_dim.to_string()),
            (
                "description_separation",
                d.description_separation.to_string(),
            ),
            ("name_signal", d.name_signal.to_string()),
            ("headword_rate", d.headword_rate.to_string()),
            ("relation_signal", d.relation_signal.to_string()),
            ("word_dim", d.word_dim.to_string()),
            ("text_dim", d.text_dim.to_string()),
            ("graph_dim", d.graph_dim.to_string()),
            ("dev_fraction", d.dev_fraction.to_string()),
            ("test_fraction", d.test_fraction.to_string()),
        ],
    );
    s
}

fn synth_config(s: &Settings) -> Result<SyntheticConfig, CliError> {
    Ok(SyntheticConfig {
        n_entities: s.parse("n_entities")?,
        n_types: s.parse("n_types")?,
        n_relations: s.parse("n_relations")?,
        noise_rate: s.parse("noise_rate")?,
        seed: s.seed()?,
        noise_mode: s.get("noise_mode").parse().map_err(CliError::Usage)?,
        subclusters: s.parse("subclusters")?,
        corrupted_weight: s.parse("corrupted_weight")?,
        description_dim: s.parse("description_dim")?,
        description_separation: s.parse("description_separation")?,
        name_signal: s.parse("name_signal")?,
        headword_rate: s.parse("headword_rate")?,
        relation_signal: s.parse("relation_signal")?,
        word_dim: s.parse("word_dim")?,
        text_dim: s.parse("text_dim")?,
        graph_dim: s.parse("graph_dim")?,
        dev_fraction: s.parse("dev_fraction")?,
        test_fraction: s.parse("test_fraction")?,
    })
}

pub fn synth(s: &Settings, m: &mut RunManifest) -> Result<(), CliError> {
    let cfg = synth_config(s)?;
    cfg.validate()?;
    let bundle = generate_synthetic_kg(&cfg)?;
    let out = s.out();
    bundle.write_dir(&out)?;
    m.output("bundle", &out);
    m.result("assertions", bundle.split.all().count());
    m.result("flips", cfg.flip_count());
    Ok(())
}

const INGEST_KEYS: &[Key] = &[
    Key::new(
        "triples",
        "Triple file: tab-separated head, relation, tail, or N-Triples",
    ),
    Key::new("format", "tsv, ntriples, or auto (by extension)"),
    Key::new("on_malformed", "skip (with diagnostics) or abort"),
    Key::new(
        "typing_relation",
        "Relation whose triples are type assertions",
    ),
    Key::new("names", "Entity names table (id, name)"),
    Key::new("descriptions", "Entity descriptions table (id, text)"),
    Key::new("description_vectors", "Description vectors (id, values)"),
    Key::new(
        "hierarchy",
        "Type hierarchy (child, parent); flat when absent",
    ),
    Key::new("words", "Word vectors (token values...)"),
    Key::new("text_embeddings", "Entity text embeddings (id, values)"),
    Key::new("graph_embeddings", "Entity graph embeddings (id, values)"),
];

const FLAT_ROOT: &str = "owl:Thing";

pub fn ingest_spec() -> Spec {
    let mut s = Spec::new(
        "ingest",
        "Read triples and side tables into a dataset bundle",
    );
    s.add(
        INGEST_KEYS,
        &[
            ("format", "auto"),
            ("on_malformed", "skip"),
            ("typing_relation", TYPE_RELATION),
        ],
    );
    s
}

fn open(p: &Path) -> Result<BufReader<File>, CliError> {
    Ok(BufReader::new(File::open(p)?))
}

fn optional_table(
    s: &Settings,
    key: &str,
    m: &mut RunManifest,
) -> Result<IndexMap<String, String>, CliError> {
    match s.optional_input(key)? {
        Some(p) => {
            m.input(key, &p);
            Ok(read_text_table(open(&p)?)?)
        }
        None => Ok(IndexMap::new()),
    }
}

fn optional_vectors(
    s: &Settings,
    key: &str,
    format: VectorFormat,
    m: &mut RunManifest,
) -> Result<Option<VectorTable>, CliError> {
    match s.optional_input(key)? {
        Some(p) => {
            m.input(key, &p);
            Ok(Some(VectorTable::read(open(&p)?, format)?))
        }
        None => Ok(None),
    }
}

pub fn ingest(s: &Settings, m: &mut RunManifest) -> Result<(), CliError> {
    let path = s.input("triples")?;
    m.input("triples", &path);
    let mode = match s.get("on_malformed") {
        "skip" => OnMalformed::Skip,
        "abort" => OnMalformed::Abort,
        other => {
            return Err(CliError::Usage(format!(
                "--on-malformed: expected skip or abort, got {other:?}"
            )))
        }
    };
    let ntriples = match s.get("format") {
        "tsv" => false,
        "ntriples" => true,
        "auto" => path.extension().is_some_and(|e| e == "nt"),
        other => {
            return Err(CliError::Usage(format!(
                "--format: expected tsv, ntriples or auto, got {other:?}"
            )))
        }
    };
    let names = optional_table(s, "names", m)?;
    let text = optional_table(s, "descriptions", m)?;
    let vectors = optional_vectors(s, "description_vectors", VectorFormat::Tab, m)?;
    let words = optional_vectors(s, "words", VectorFormat::Space, m)?;
    let text_embeddings = optional_vectors(s, "text_embeddings", VectorFormat::Tab, m)?;
    let graph_embeddings = optional_vectors(s, "graph_embeddings", VectorFormat::Tab, m)?;

    let parsed = if ntriples {
        parse_ntriples(open(&path)?, mode)?
    } else {
        parse_triples(open(&path)?, mode)?
    };
    // Bundles always store type assertions under the default relation.
    let typing = s.get("typing_relation");
    let mut triples = parsed.records;
    for t in &mut triples {
        if t.relation == typing {
            t.relation = TYPE_RELATION.to_string();
        }
    }
    let descriptions = DescriptionStore { text, vectors };
    let built = build_entities(&triples, &names, &descriptions, TYPE_RELATION);
    let hierarchy = match s.optional_input("hierarchy")? {
        Some(p) => {
            m.input("hierarchy", &p);
            TypeHierarchy::read(open(&p)?)?
        }
        None => {
            let mut h = TypeHierarchy::new(FLAT_ROOT);
            for (_, t) in &built.type_assertions {
                if !h.contains(t) {
                    h.add(t.clone(), FLAT_ROOT)?;
                }
            }
            h
        }
    };

    let mut manifest = KvDoc::new(DATASET_MANIFEST_KIND, 1);
    manifest.set("source", "ingest");
    manifest.set("triples", triples.len());
    manifest.set("diagnostics", parsed.diagnostics.len());
    manifest.set("entities", built.store.len());
    manifest.set("type_assertions", built.type_assertions.len());
    manifest.set("missing_names", built.missing_names);
    manifest.set("missing_descriptions", built.missing_descriptions);
    let bundle = Bundle {
        store: built.store,
        triples,
        names,
        descriptions,
        hierarchy,
        split: DatasetSplit::default(),
        truth: None,
        words,
        text_embeddings,
        graph_embeddings,
        manifest,
    };
    let out = s.out();
    bundle.write_dir(&out)?;
    let diag = out.join("diagnostics.tsv");
    let mut w = std::io::BufWriter::new(File::create(&diag)?);
    for d in &parsed.diagnostics {
        writeln!(w, "{}\t{}", d.line, d.message)?;
    }
    w.flush()?;
    m.output("bundle", &out);
    m.output("diagnostics", &diag);
    m.result("triples", bundle.triples.len());
    m.result("diagnostics", parsed.diagnostics.len());
    m.result("entities", bundle.store.len());
    Ok(())
}

const BUILD_KEYS: &[Key] = &[
    Key::new("bundle", "Input bundle directory"),
    Key::new(
        "truth",
        "Hidden-truth table to attach (entity, type, verdict, true type)",
    ),
    Key::new("per_type_cap", "Assertions kept per level-1 type"),
    Key::new(
        "minority_threshold",
        "Types below this many assertions merge into Other; defaults to the cap",
    ),
    Key::new(
        "final_size",
        "Subsample to this many assertions; all when unset",
    ),
    Key::new("dev_fraction", "Entities held out for dev"),
    Key::new("test_fraction", "Entities held out for test"),
];

pub fn build_dataset_spec() -> Spec {
    let d = CoarseConfig::default();
    let mut s = Spec::new(
        "build-dataset",
        "Map types to level 1, cap, merge minorities and split",
    );
    s.add(
        BUILD_KEYS,
        &[
            ("per_type_cap", d.per_type_cap.to_string()),
            ("dev_fraction", d.dev_fraction.to_string()),
            ("test_fraction", d.test_fraction.to_string()),
        ],
    );
    s
}

pub fn build_dataset(s: &Settings, m: &mut RunManifest) -> Result<(), CliError> {
    let cfg = CoarseConfig {
        per_type_cap: s.parse("per_type_cap")?,
        minority_threshold: s.optional("minority_threshold")?,
        final_size: s.optional("final_size")?,
        dev_fraction: s.parse("dev_fraction")?,
        test_fraction: s.parse("test_fraction")?,
        seed: s.seed()?,
    };
    let mut bundle = read_bundle(s, "bundle", m)?;
    if let Some(p) = s.optional_input("truth")? {
        m.input("truth", &p);
        bundle.truth = Some(GroundTruth::read(open(&p)?)?);
    }
    let assertions = build_entities(
        &bundle.triples,
        &bundle.names,
        &bundle.descriptions,
        TYPE_RELATION,
    )
    .type_assertions;
    let ds = build_coarse_dataset(&assertions, &bundle.hierarchy, &cfg)?;
    bundle.split = ds.split;
    bundle.manifest = ds.manifest;
    let out = s.out();
    bundle.write_dir(&out)?;
    m.output("bundle", &out);
    for (t, c) in &ds.label_counts {
        m.result(&format!("label_count.{t}"), c);
    }
    Ok(())
}
