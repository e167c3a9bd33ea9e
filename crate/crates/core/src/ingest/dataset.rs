//! Type assertions, dataset splits, hidden truth, and coarse-grained
//! dataset construction.

use std::collections::{BTreeSet, HashSet};
use std::io::{BufRead, Write};

use indexmap::{IndexMap, IndexSet};
use serde::{Deserialize, Serialize};

use super::hierarchy::TypeHierarchy;
use super::IngestError;
use crate::doc::{sha256_hex, KvDoc};
use crate::rng;

pub const OTHER_TYPE: &str = "Other";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Noisy,
    Gold,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Correct,
    Error,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Correct => "correct",
            Verdict::Error => "error",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "correct" => Some(Verdict::Correct),
            "error" => Some(Verdict::Error),
            _ => None,
        }
    }

    pub fn is_error(self) -> bool {
        self == Verdict::Error
    }
}

/// `(entity, type)` with provenance. Gold assertions carry a verdict and,
/// when the annotator supplied it, the correct type.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TypeAssertion {
    pub entity: String,
    pub type_id: String,
    pub provenance: Provenance,
    pub verdict: Option<Verdict>,
    pub gold_type: Option<String>,
}

impl TypeAssertion {
    pub fn noisy(entity: impl Into<String>, type_id: impl Into<String>) -> Self {
        Self {
            entity: entity.into(),
            type_id: type_id.into(),
            provenance: Provenance::Noisy,
            verdict: None,
            gold_type: None,
        }
    }

    pub fn gold(entity: impl Into<String>, type_id: impl Into<String>, verdict: Verdict) -> Self {
        Self {
            entity: entity.into(),
            type_id: type_id.into(),
            provenance: Provenance::Gold,
            verdict: Some(verdict),
            gold_type: None,
        }
    }

    pub fn with_gold_type(mut self, t: Option<String>) -> Self {
        self.gold_type = t;
        self
    }

    pub fn key(&self) -> (&str, &str) {
        (&self.entity, &self.type_id)
    }

    pub fn is_valid(&self) -> bool {
        match self.provenance {
            Provenance::Gold => self.verdict.is_some(),
            Provenance::Noisy => self.verdict.is_none() && self.gold_type.is_none(),
        }
    }
}

pub const SECTIONS: [&str; 4] = ["noisy_train", "gold_pool", "dev", "test"];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetSplit {
    pub noisy_train: Vec<TypeAssertion>,
    pub gold_pool: Vec<TypeAssertion>,
    pub dev: Vec<TypeAssertion>,
    pub test: Vec<TypeAssertion>,
    pub seed: u64,
}

impl DatasetSplit {
    pub fn section(&self, name: &str) -> &[TypeAssertion] {
        match name {
            "noisy_train" => &self.noisy_train,
            "gold_pool" => &self.gold_pool,
            "dev" => &self.dev,
            "test" => &self.test,
            _ => panic!("unknown section {name}"),
        }
    }

    fn section_mut(&mut self, name: &str) -> Option<&mut Vec<TypeAssertion>> {
        match name {
            "noisy_train" => Some(&mut self.noisy_train),
            "gold_pool" => Some(&mut self.gold_pool),
            "dev" => Some(&mut self.dev),
            "test" => Some(&mut self.test),
            _ => None,
        }
    }

    pub fn all(&self) -> impl Iterator<Item = &TypeAssertion> {
        SECTIONS.iter().flat_map(move |s| self.section(s).iter())
    }

    /// Sorted distinct type ids across every section.
    pub fn labels(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.all().map(|a| a.type_id.as_str()).collect();
        set.into_iter().map(str::to_string).collect()
    }

    /// Checks pairwise disjointness of `(entity, type)` pairs and the
    /// provenance/verdict invariant.
    pub fn validate(&self) -> Result<(), IngestError> {
        let mut seen: HashSet<(&str, &str)> = HashSet::new();
        for a in self.all() {
            if !a.is_valid() {
                return Err(IngestError::Split(format!(
                    "{} {}: provenance and verdict disagree",
                    a.entity, a.type_id
                )));
            }
            if !seen.insert(a.key()) {
                return Err(IngestError::Split(format!(
                    "pair ({}, {}) appears twice",
                    a.entity, a.type_id
                )));
            }
        }
        Ok(())
    }

    fn render_section(&self, name: &str) -> String {
        let mut out = String::new();
        for a in self.section(name) {
            let prov = match a.provenance {
                Provenance::Noisy => "noisy",
                Provenance::Gold => "gold",
            };
            let verdict = a.verdict.map_or("-", Verdict::as_str);
            let gold_type = a.gold_type.as_deref().unwrap_or("-");
            out.push_str(&format!(
                "{name}\t{}\t{}\t{prov}\t{verdict}\t{gold_type}\n",
                a.entity, a.type_id
            ));
        }
        out
    }

    pub fn section_digest(&self, name: &str) -> String {
        sha256_hex(self.render_section(name).as_bytes())
    }

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# kgtyper-split 1 seed={}", self.seed)?;
        for s in SECTIONS {
            w.write_all(self.render_section(s).as_bytes())?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self, IngestError> {
        let mut split = DatasetSplit::default();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let malformed = |m: &str| IngestError::Malformed {
                line: i + 1,
                message: m.to_string(),
            };
            if let Some(rest) = line.strip_prefix("# kgtyper-split 1") {
                let seed = rest
                    .trim()
                    .strip_prefix("seed=")
                    .ok_or_else(|| malformed("missing seed"))?;
                split.seed = seed.parse().map_err(|_| malformed("bad seed"))?;
                continue;
            }
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 6 {
                return Err(malformed("expected 6 fields"));
            }
            let provenance = match f[3] {
                "noisy" => Provenance::Noisy,
                "gold" => Provenance::Gold,
                _ => return Err(malformed("bad provenance")),
            };
            let verdict = match f[4] {
                "-" => None,
                v => Some(Verdict::parse(v).ok_or_else(|| malformed("bad verdict"))?),
            };
            let gold_type = (f[5] != "-").then(|| f[5].to_string());
            let a = TypeAssertion {
                entity: f[1].to_string(),
                type_id: f[2].to_string(),
                provenance,
                verdict,
                gold_type,
            };
            split
                .section_mut(f[0])
                .ok_or_else(|| malformed("unknown section"))?
                .push(a);
        }
        split.validate()?;
        Ok(split)
    }

    /// Adds counts and per-section digests to a manifest.
    pub fn describe(&self, doc: &mut KvDoc) {
        doc.set("seed", self.seed);
        for s in SECTIONS {
            doc.set(format!("split.{s}.count"), self.section(s).len());
            doc.set(format!("split.{s}.digest"), self.section_digest(s));
        }
    }
}

/// Hidden truth for synthetic or hand-checked data, keyed by the asserted
/// `(entity, type)` pair.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GroundTruth {
    records: IndexMap<(String, String), TruthRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TruthRecord {
    pub verdict: Verdict,
    pub true_type: String,
}

impl GroundTruth {
    pub fn insert(&mut self, entity: &str, type_id: &str, rec: TruthRecord) {
        self.records
            .insert((entity.to_string(), type_id.to_string()), rec);
    }

    pub fn get(&self, entity: &str, type_id: &str) -> Option<&TruthRecord> {
        self.records.get(&(entity.to_string(), type_id.to_string()))
    }

    pub fn verdict(&self, entity: &str, type_id: &str) -> Option<Verdict> {
        self.get(entity, type_id).map(|r| r.verdict)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, &TruthRecord)> {
        self.records
            .iter()
            .map(|((e, t), r)| (e.as_str(), t.as_str(), r))
    }

    pub fn error_count(&self) -> usize {
        self.records
            .values()
            .filter(|r| r.verdict.is_error())
            .count()
    }

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for ((e, t), r) in &self.records {
            writeln!(w, "{e}\t{t}\t{}\t{}", r.verdict.as_str(), r.true_type)?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self, IngestError> {
        let mut truth = GroundTruth::default();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            let verdict = (f.len() == 4).then(|| Verdict::parse(f[2])).flatten();
            let Some(verdict) = verdict else {
                return Err(IngestError::Malformed {
                    line: i + 1,
                    message: "expected entity, type, verdict, true type".into(),
                });
            };
            truth.insert(
                f[0],
                f[1],
                TruthRecord {
                    verdict,
                    true_type: f[3].to_string(),
                },
            );
        }
        Ok(truth)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoarseConfig {
    pub per_type_cap: usize,
    /// Types with fewer assertions than this are merged into `Other`.
    /// Defaults to the cap.
    pub minority_threshold: Option<usize>,
    pub final_size: Option<usize>,
    pub dev_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for CoarseConfig {
    fn default() -> Self {
        Self {
            per_type_cap: 10_000,
            minority_threshold: None,
            final_size: None,
            dev_fraction: 0.03,
            test_fraction: 0.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CoarseDataset {
    pub split: DatasetSplit,
    /// Assertion count per label after capping and the final subsample.
    pub label_counts: IndexMap<String, usize>,
    pub manifest: KvDoc,
}

/// Splits entities (never pairs) into train/dev/test so that no entity's
/// assertions straddle two sections.
pub fn split_by_entity(
    assertions: Vec<TypeAssertion>,
    dev_fraction: f64,
    test_fraction: f64,
    rng: &mut rng::Prng,
) -> Result<(Vec<TypeAssertion>, Vec<TypeAssertion>, Vec<TypeAssertion>), IngestError> {
    if !(0.0..=1.0).contains(&dev_fraction)
        || !(0.0..=1.0).contains(&test_fraction)
        || dev_fraction + test_fraction > 1.0
    {
        return Err(IngestError::Config(format!(
            "bad split fractions dev={dev_fraction} test={test_fraction}"
        )));
    }
    let entities: IndexSet<String> = assertions.iter().map(|a| a.entity.clone()).collect();
    let mut order: Vec<usize> = (0..entities.len()).collect();
    rng::shuffle(&mut order, rng);
    let n = entities.len() as f64;
    let n_test = (test_fraction * n).round() as usize;
    let n_dev = ((dev_fraction * n).round() as usize).min(entities.len() - n_test);
    // 0 = train, 1 = dev, 2 = test
    let mut section = vec![0u8; entities.len()];
    for (rank, &e) in order.iter().enumerate() {
        section[e] = if rank < n_test {
            2
        } else if rank < n_test + n_dev {
            1
        } else {
            0
        };
    }
    let (mut train, mut dev, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for a in assertions {
        match section[entities.get_index_of(&a.entity).expect("collected")] {
            0 => train.push(a),
            1 => dev.push(a),
            _ => test.push(a),
        }
    }
    Ok((train, dev, test))
}

/// Level-1 mapping, per-type capping, minority merge into `Other`, final
/// subsample, then an entity-level split. Capping counts `(entity, type)`
/// assertions, so an entity with two level-1 types counts once for each.
pub fn build_coarse_dataset(
    assertions: &[(String, String)],
    h: &TypeHierarchy,
    cfg: &CoarseConfig,
) -> Result<CoarseDataset, IngestError> {
    if cfg.per_type_cap == 0 {
        return Err(IngestError::Config("per_type_cap must be positive".into()));
    }
    let threshold = cfg.minority_threshold.unwrap_or(cfg.per_type_cap);
    let mut rng = rng::stream(cfg.seed, rng::streams::SAMPLING);

    // Level-1 types per entity, in first-seen entity order.
    let mut per_entity: IndexMap<&str, BTreeSet<String>> = IndexMap::new();
    for (e, t) in assertions {
        let coarse = if h.contains(t) {
            h.ancestor_at(t, 1)?.map(str::to_string)
        } else {
            log::debug!("type {t} not in hierarchy");
            None
        };
        let entry = per_entity.entry(e.as_str()).or_default();
        if let Some(c) = coarse {
            entry.insert(c);
        }
    }
    let mut by_type: IndexMap<String, Vec<String>> = IndexMap::new();
    for (e, types) in &per_entity {
        if types.is_empty() {
            by_type
                .entry(OTHER_TYPE.to_string())
                .or_default()
                .push(e.to_string());
        }
        for t in types {
            by_type.entry(t.clone()).or_default().push(e.to_string());
        }
    }
    by_type.sort_keys();

    let mut kept: Vec<(String, String)> = Vec::new();
    let mut other: IndexSet<String> = IndexSet::new();
    for (t, ents) in &by_type {
        if t == OTHER_TYPE || ents.len() < threshold {
            other.extend(ents.iter().cloned());
            continue;
        }
        let chosen = if ents.len() > cfg.per_type_cap {
            rng::subsample(ents, cfg.per_type_cap, &mut rng)
        } else {
            ents.clone()
        };
        kept.extend(chosen.into_iter().map(|e| (e, t.clone())));
    }
    let other: Vec<String> = other.into_iter().collect();
    let other = if other.len() > cfg.per_type_cap {
        rng::subsample(&other, cfg.per_type_cap, &mut rng)
    } else {
        other
    };
    kept.extend(other.into_iter().map(|e| (e, OTHER_TYPE.to_string())));

    let available = kept.len();
    if let Some(n) = cfg.final_size {
        if n > available {
            return Err(IngestError::TooSmall {
                requested: n,
                available,
            });
        }
        kept = rng::subsample(&kept, n, &mut rng);
    }
    let mut label_counts: IndexMap<String, usize> = IndexMap::new();
    for (_, t) in &kept {
        *label_counts.entry(t.clone()).or_default() += 1;
    }
    label_counts.sort_keys();

    let items = kept
        .into_iter()
        .map(|(e, t)| TypeAssertion::noisy(e, t))
        .collect();
    let (train, dev, test) = split_by_entity(items, cfg.dev_fraction, cfg.test_fraction, &mut rng)?;
    let split = DatasetSplit {
        noisy_train: train,
        gold_pool: Vec::new(),
        dev,
        test,
        seed: cfg.seed,
    };
    split.validate()?;

    let mut manifest = KvDoc::new(super::DATASET_MANIFEST_KIND, 1);
    manifest.set("source", "coarse");
    manifest.set("per_type_cap", cfg.per_type_cap);
    manifest.set("minority_threshold", threshold);
    manifest.set(
        "final_size",
        cfg.final_size.map_or("all".to_string(), |n| n.to_string()),
    );
    manifest.set("capping", "per-assertion");
    manifest.set(
        "fractions",
        format!("dev={} test={}", cfg.dev_fraction, cfg.test_fraction),
    );
    manifest.set(
        "labels",
        label_counts.keys().cloned().collect::<Vec<_>>().join(","),
    );
    for (t, c) in &label_counts {
        manifest.set(format!("label_count.{t}"), c);
    }
    split.describe(&mut manifest);
    Ok(CoarseDataset {
        split,
        label_counts,
        manifest,
    })
}
