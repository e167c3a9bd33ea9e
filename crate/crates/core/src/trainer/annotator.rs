//! The interface between the training loop and whoever supplies gold
//! labels: a human behind the annotation service or a scripted oracle.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{GroundTruth, Verdict};

/// One assertion sent for annotation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub entity: String,
    pub type_id: String,
    /// Current model belief `Pr(z_type | e)`.
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Response {
    Label {
        verdict: Verdict,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        true_type: Option<String>,
    },
    Skip,
}

#[derive(Debug, Error)]
pub enum AnnotatorError {
    #[error("annotator timed out")]
    Timeout,
    #[error("annotator unavailable: {0}")]
    Unavailable(String),
    #[error("annotator returned {got} responses for {want} queries")]
    Arity { want: usize, got: usize },
}

pub trait Annotator {
    /// One response per query, in order.
    fn annotate(&mut self, queries: &[Query]) -> Result<Vec<Response>, AnnotatorError>;

    fn id(&self) -> &str {
        "annotator"
    }
}

/// Answers from the hidden ground truth. Assertions unknown to the truth
/// file are skipped.
#[derive(Clone, Debug)]
pub struct OracleAnnotator {
    truth: GroundTruth,
    pub supply_true_type: bool,
}

impl OracleAnnotator {
    pub fn new(truth: GroundTruth, supply_true_type: bool) -> Self {
        Self {
            truth,
            supply_true_type,
        }
    }
}

impl Annotator for OracleAnnotator {
    fn annotate(&mut self, queries: &[Query]) -> Result<Vec<Response>, AnnotatorError> {
        Ok(queries
            .iter()
            .map(|q| match self.truth.get(&q.entity, &q.type_id) {
                Some(rec) => Response::Label {
                    verdict: rec.verdict,
                    true_type: (self.supply_true_type && rec.verdict == Verdict::Error)
                        .then(|| rec.true_type.clone()),
                },
                None => Response::Skip,
            })
            .collect())
    }

    fn id(&self) -> &str {
        "oracle"
    }
}

/// Never labels anything.
#[derive(Clone, Copy, Debug, Default)]
pub struct NullAnnotator;

impl Annotator for NullAnnotator {
    fn annotate(&mut self, queries: &[Query]) -> Result<Vec<Response>, AnnotatorError> {
        Ok(vec![Response::Skip; queries.len()])
    }
}

impl<A: Annotator + ?Sized> Annotator for &mut A {
    fn annotate(&mut self, queries: &[Query]) -> Result<Vec<Response>, AnnotatorError> {
        (**self).annotate(queries)
    }

    fn id(&self) -> &str {
        (**self).id()
    }
}
