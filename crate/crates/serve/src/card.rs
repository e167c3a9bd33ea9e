//! What an annotator sees for one queried assertion.

use kgtyper_core::ingest::Bundle;
use kgtyper_core::trainer::Query;
use serde::{Deserialize, Serialize};

/// Characters of description text shown on a card.
pub const DESCRIPTION_SNIPPET_CHARS: usize = 280;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationCount {
    pub relation: String,
    pub count: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Card {
    pub card_id: String,
    pub entity: String,
    pub name: String,
    pub description: String,
    pub description_truncated: bool,
    pub relations: Vec<RelationCount>,
    pub type_id: String,
    /// Model belief that the queried type is correct.
    pub score: f64,
}

fn snippet(text: &str) -> (String, bool) {
    match text.char_indices().nth(DESCRIPTION_SNIPPET_CHARS) {
        Some((cut, _)) => (text[..cut].to_string(), true),
        None => (text.to_string(), false),
    }
}

/// Builds the card for `query` from the entity store. Entities missing from
/// the store get a card with the bare id.
pub fn build_card(bundle: &Bundle, card_id: String, query: &Query) -> Card {
    let rec = bundle.store.get(&query.entity);
    let (description, description_truncated) = rec
        .and_then(|r| bundle.descriptions.text.get(&r.description_key))
        .map_or((String::new(), false), |t| snippet(t));
    Card {
        card_id,
        entity: query.entity.clone(),
        name: rec.map_or_else(|| query.entity.clone(), |r| r.name.clone()),
        description,
        description_truncated,
        relations: rec.map_or_else(Vec::new, |r| {
            r.relations
                .iter()
                .map(|(relation, &count)| RelationCount {
                    relation: relation.clone(),
                    count,
                })
                .collect()
        }),
        type_id: query.type_id.clone(),
        score: query.score,
    }
}
