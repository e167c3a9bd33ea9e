use std::collections::BTreeMap;

use indexmap::IndexMap;

use super::tables::VectorTable;
use super::triples::TripleRecord;

#[derive(Clone, Debug, PartialEq)]
pub struct EntityRecord {
    pub id: String,
    pub name: String,
    pub description_key: String,
    /// Outgoing relation ids with multiplicities (every count ≥ 1).
    pub relations: BTreeMap<String, u32>,
}

impl EntityRecord {
    pub fn relation_total(&self) -> usize {
        self.relations.values().map(|&c| c as usize).sum()
    }
}

/// Description features keyed by entity id: raw text for the hashed-token
/// encoder and/or precomputed vectors for the file-vector encoder.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DescriptionStore {
    pub text: IndexMap<String, String>,
    pub vectors: Option<VectorTable>,
}

impl DescriptionStore {
    pub fn has(&self, key: &str) -> bool {
        self.text.contains_key(key) || self.vectors.as_ref().is_some_and(|v| v.contains(key))
    }
}

/// Immutable after construction; safe to share across threads.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EntityStore {
    entities: IndexMap<String, EntityRecord>,
}

impl EntityStore {
    pub fn get(&self, id: &str) -> Option<&EntityRecord> {
        self.entities.get(id)
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.entities.get_index_of(id)
    }

    pub fn by_index(&self, i: usize) -> &EntityRecord {
        &self.entities[i]
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &EntityRecord> {
        self.entities.values()
    }

    pub fn from_records(records: impl IntoIterator<Item = EntityRecord>) -> Self {
        Self {
            entities: records.into_iter().map(|r| (r.id.clone(), r)).collect(),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct BuiltEntities {
    pub store: EntityStore,
    /// `(entity, type)` pairs taken from the typing relation, in input order,
    /// duplicates removed.
    pub type_assertions: Vec<(String, String)>,
    pub missing_names: usize,
    pub missing_descriptions: usize,
}

/// Groups triples by head. Every head becomes an entity; typing triples
/// become assertions and are left out of the relation multiset.
pub fn build_entities(
    triples: &[TripleRecord],
    names: &IndexMap<String, String>,
    descriptions: &DescriptionStore,
    typing_relation: &str,
) -> BuiltEntities {
    let mut records: IndexMap<String, EntityRecord> = IndexMap::new();
    let mut assertions = indexmap::IndexSet::new();
    for t in triples {
        let rec = records
            .entry(t.head.clone())
            .or_insert_with(|| EntityRecord {
                id: t.head.clone(),
                name: String::new(),
                description_key: t.head.clone(),
                relations: BTreeMap::new(),
            });
        if t.relation == typing_relation {
            assertions.insert((t.head.clone(), t.tail.clone()));
        } else {
            *rec.relations.entry(t.relation.clone()).or_insert(0) += 1;
        }
    }
    let mut missing_names = 0;
    let mut missing_descriptions = 0;
    for rec in records.values_mut() {
        match names.get(&rec.id) {
            Some(n) if !n.trim().is_empty() => rec.name = n.clone(),
            _ => {
                missing_names += 1;
                rec.name = rec.id.clone();
            }
        }
        if !descriptions.has(&rec.description_key) {
            missing_descriptions += 1;
        }
    }
    if missing_names > 0 {
        log::warn!("{missing_names} entities have no name; using their ids");
    }
    if missing_descriptions > 0 {
        log::warn!("{missing_descriptions} entities have no description features");
    }
    BuiltEntities {
        store: EntityStore { entities: records },
        type_assertions: assertions.into_iter().collect(),
        missing_names,
        missing_descriptions,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::TYPE_RELATION;

    fn t(h: &str, r: &str, x: &str) -> TripleRecord {
        TripleRecord::new(h, r, x)
    }

    #[test]
    fn relations_exclude_typing_and_count_duplicates() {
        let triples = vec![
            t("dbr:JavaScript", "rdf:type", "dbo:ProgrammingLanguage"),
            t("dbr:JavaScript", "dbo:designer", "dbr:Brendan_Eich"),
            t("dbr:JavaScript", "dbo:influenced", "dbr:TypeScript"),
            t("dbr:JavaScript", "dbo:fileExt", "\".js\""),
            t("dbr:E", "dbo:r", "dbr:T1"),
            t("dbr:E", "dbo:r", "dbr:T2"),
            t("dbr:Lonely", "rdf:type", "dbo:Thing"),
        ];
        let mut names = IndexMap::new();
        names.insert("dbr:JavaScript".to_string(), "JavaScript".to_string());
        let built = build_entities(
            &triples,
            &names,
            &DescriptionStore::default(),
            TYPE_RELATION,
        );
        let js = built.store.get("dbr:JavaScript").unwrap();
        assert_eq!(js.relation_total(), 3);
        assert_eq!(js.name, "JavaScript");
        assert_eq!(built.store.get("dbr:E").unwrap().relations["dbo:r"], 2);
        let lonely = built.store.get("dbr:Lonely").unwrap();
        assert!(lonely.relations.is_empty());
        assert_eq!(lonely.name, "dbr:Lonely");
        assert_eq!(built.missing_names, 2);
        assert_eq!(built.type_assertions.len(), 2);
    }
}
