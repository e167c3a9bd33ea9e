//! Reading knowledge-graph files into entity records, type hierarchies and
//! dataset splits, plus synthetic graph generation.

pub mod bundle;
pub mod dataset;
pub mod hierarchy;
pub mod store;
pub mod synth;
pub mod tables;
pub mod triples;

use thiserror::Error;

pub use bundle::Bundle;
pub use dataset::{
    build_coarse_dataset, split_by_entity, CoarseConfig, CoarseDataset, DatasetSplit, GroundTruth,
    Provenance, TruthRecord, TypeAssertion, Verdict, OTHER_TYPE,
};
pub use hierarchy::TypeHierarchy;
pub use store::{build_entities, BuiltEntities, DescriptionStore, EntityRecord, EntityStore};
pub use synth::{generate_synthetic_kg, NoiseMode, SyntheticConfig};
pub use tables::{read_text_table, write_text_table, VectorFormat, VectorTable};
pub use triples::{
    parse_ntriples, parse_triples, parse_triples_str, write_triples, Diagnostic, OnMalformed,
    ParsedTriples, TripleRecord, TYPE_RELATION,
};

pub const DATASET_MANIFEST_KIND: &str = "kgtyper-dataset";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("unknown type {0}")]
    UnknownType(String),
    #[error("invalid hierarchy: {0}")]
    Hierarchy(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("requested {requested} assertions but only {available} are available")]
    TooSmall { requested: usize, available: usize },
    #[error("invalid split: {0}")]
    Split(String),
    #[error("missing file {0}")]
    MissingFile(String),
    #[error(transparent)]
    Doc(#[from] crate::doc::DocError),
}
