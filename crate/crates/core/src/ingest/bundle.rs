//! On-disk dataset directory: every table the pipeline consumes, plus a
//! manifest with per-file digests.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use indexmap::IndexMap;

use super::dataset::{DatasetSplit, GroundTruth};
use super::hierarchy::TypeHierarchy;
use super::store::{build_entities, DescriptionStore, EntityStore};
use super::tables::{read_text_table, write_text_table, VectorFormat, VectorTable};
use super::triples::{parse_triples, write_triples, OnMalformed, TripleRecord, TYPE_RELATION};
use super::{IngestError, DATASET_MANIFEST_KIND};
use crate::doc::{sha256_hex, KvDoc};

pub const TRIPLES_FILE: &str = "triples.tsv";
pub const NAMES_FILE: &str = "names.tsv";
pub const DESCRIPTIONS_FILE: &str = "descriptions.tsv";
pub const DESCRIPTION_VECTORS_FILE: &str = "description_vectors.tsv";
pub const HIERARCHY_FILE: &str = "hierarchy.tsv";
pub const SPLIT_FILE: &str = "split.tsv";
pub const TRUTH_FILE: &str = "truth.tsv";
pub const WORDS_FILE: &str = "words.vec";
pub const TEXT_EMBEDDINGS_FILE: &str = "text_embeddings.tsv";
pub const GRAPH_EMBEDDINGS_FILE: &str = "graph_embeddings.tsv";
pub const MANIFEST_FILE: &str = "dataset.manifest";

#[derive(Clone, Debug)]
pub struct Bundle {
    pub store: EntityStore,
    pub triples: Vec<TripleRecord>,
    pub names: IndexMap<String, String>,
    pub descriptions: DescriptionStore,
    pub hierarchy: TypeHierarchy,
    pub split: DatasetSplit,
    pub truth: Option<GroundTruth>,
    pub words: Option<VectorTable>,
    pub text_embeddings: Option<VectorTable>,
    pub graph_embeddings: Option<VectorTable>,
    pub manifest: KvDoc,
}

fn write_file(
    dir: &Path,
    name: &str,
    f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
) -> Result<String, IngestError> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    let mut out = BufWriter::new(File::create(dir.join(name))?);
    out.write_all(&buf)?;
    out.flush()?;
    Ok(sha256_hex(&buf))
}

fn open(dir: &Path, name: &str) -> Result<Option<BufReader<File>>, IngestError> {
    let p = dir.join(name);
    if p.exists() {
        Ok(Some(BufReader::new(File::open(p)?)))
    } else {
        Ok(None)
    }
}

fn require(dir: &Path, name: &str) -> Result<BufReader<File>, IngestError> {
    open(dir, name)?.ok_or_else(|| IngestError::MissingFile(dir.join(name).display().to_string()))
}

impl Bundle {
    /// Labels the model should predict: the manifest's label list when
    /// present, otherwise every type seen in the split.
    pub fn labels(&self) -> Vec<String> {
        match self.manifest.get("labels") {
            Some(l) if !l.is_empty() => l.split(',').map(str::to_string).collect(),
            _ => self.split.labels(),
        }
    }

    /// Writes every table, then the manifest with one digest per file.
    /// Returns the manifest as written.
    pub fn write_dir(&self, dir: &Path) -> Result<KvDoc, IngestError> {
        std::fs::create_dir_all(dir)?;
        let mut digests = Vec::new();
        digests.push((
            TRIPLES_FILE,
            write_file(dir, TRIPLES_FILE, |b| write_triples(b, &self.triples))?,
        ));
        digests.push((
            NAMES_FILE,
            write_file(dir, NAMES_FILE, |b| write_text_table(b, &self.names))?,
        ));
        if !self.descriptions.text.is_empty() {
            let d = write_file(dir, DESCRIPTIONS_FILE, |b| {
                write_text_table(b, &self.descriptions.text)
            })?;
            digests.push((DESCRIPTIONS_FILE, d));
        }
        if let Some(v) = &self.descriptions.vectors {
            let d = write_file(dir, DESCRIPTION_VECTORS_FILE, |b| {
                v.write(b, VectorFormat::Tab)
            })?;
            digests.push((DESCRIPTION_VECTORS_FILE, d));
        }
        digests.push((
            HIERARCHY_FILE,
            write_file(dir, HIERARCHY_FILE, |b| self.hierarchy.write(b))?,
        ));
        digests.push((
            SPLIT_FILE,
            write_file(dir, SPLIT_FILE, |b| self.split.write(b))?,
        ));
        if let Some(t) = &self.truth {
            digests.push((TRUTH_FILE, write_file(dir, TRUTH_FILE, |b| t.write(b))?));
        }
        if let Some(w) = &self.words {
            digests.push((
                WORDS_FILE,
                write_file(dir, WORDS_FILE, |b| w.write(b, VectorFormat::Space))?,
            ));
        }
        if let Some(v) = &self.text_embeddings {
            let d = write_file(dir, TEXT_EMBEDDINGS_FILE, |b| v.write(b, VectorFormat::Tab))?;
            digests.push((TEXT_EMBEDDINGS_FILE, d));
        }
        if let Some(v) = &self.graph_embeddings {
            let d = write_file(dir, GRAPH_EMBEDDINGS_FILE, |b| {
                v.write(b, VectorFormat::Tab)
            })?;
            digests.push((GRAPH_EMBEDDINGS_FILE, d));
        }
        let mut manifest = self.manifest.clone();
        for (name, d) in digests {
            manifest.set(format!("file.{name}.sha256"), d);
        }
        let text = manifest.render();
        write_file(dir, MANIFEST_FILE, |b| b.write_all(text.as_bytes()))?;
        Ok(manifest)
    }

    pub fn read_dir(dir: &Path) -> Result<Self, IngestError> {
        let manifest_text = std::fs::read_to_string(dir.join(MANIFEST_FILE))
            .map_err(|_| IngestError::MissingFile(dir.join(MANIFEST_FILE).display().to_string()))?;
        let manifest = KvDoc::parse(&manifest_text, DATASET_MANIFEST_KIND, 1)?;
        let triples = parse_triples(require(dir, TRIPLES_FILE)?, OnMalformed::Abort)?.records;
        let names = read_text_table(require(dir, NAMES_FILE)?)?;
        let text = open(dir, DESCRIPTIONS_FILE)?
            .map(read_text_table)
            .transpose()?
            .unwrap_or_default();
        let vectors = open(dir, DESCRIPTION_VECTORS_FILE)?
            .map(|r| VectorTable::read(r, VectorFormat::Tab))
            .transpose()?;
        let descriptions = DescriptionStore { text, vectors };
        let hierarchy = TypeHierarchy::read(require(dir, HIERARCHY_FILE)?)?;
        let split = DatasetSplit::read(require(dir, SPLIT_FILE)?)?;
        let truth = open(dir, TRUTH_FILE)?.map(GroundTruth::read).transpose()?;
        let words = open(dir, WORDS_FILE)?
            .map(|r| VectorTable::read(r, VectorFormat::Space))
            .transpose()?;
        let text_embeddings = open(dir, TEXT_EMBEDDINGS_FILE)?
            .map(|r| VectorTable::read(r, VectorFormat::Tab))
            .transpose()?;
        let graph_embeddings = open(dir, GRAPH_EMBEDDINGS_FILE)?
            .map(|r| VectorTable::read(r, VectorFormat::Tab))
            .transpose()?;
        let store = build_entities(&triples, &names, &descriptions, TYPE_RELATION).store;
        Ok(Bundle {
            store,
            triples,
            names,
            descriptions,
            hierarchy,
            split,
            truth,
            words,
            text_embeddings,
            graph_embeddings,
            manifest,
        })
    }

    /// Digest identifying this dataset for ledgers and sessions: the hash of
    /// the split file contents.
    pub fn digest(&self) -> String {
        let mut buf = Vec::new();
        self.split.write(&mut buf).expect("in-memory write");
        sha256_hex(&buf)
    }
}
