//! Choosing which noisy assertions to send for annotation, and moving the
//! answers from the noisy pool `S` into the gold set `Ŝ`.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ingest::Verdict;
use crate::network::{predict, TypingModel};
use crate::rng::{self, Prng};
use crate::tensor::{GradientSet, Graph, GraphError, Tensor};
use crate::trainer::annotator::{Annotator, AnnotatorError, Query, Response};
use crate::trainer::loss::{combined_loss, GoldLabel, LossOptions, TrainItem, VatInput};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Us,
    Err,
    Random,
}

impl std::str::FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "us" => Ok(Strategy::Us),
            "err" => Ok(Strategy::Err),
            "random" => Ok(Strategy::Random),
            _ => Err(format!("unknown strategy {s:?} (us, err, random)")),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::Us => "us",
            Strategy::Err => "err",
            Strategy::Random => "random",
        })
    }
}

/// How the unknown verdict of a candidate is integrated out.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrExpectation {
    /// Weight the verdicts by the model's `Pr(z_type | e)`.
    Model,
    /// Take the larger of the two gradient changes.
    Pessimistic,
}

impl std::str::FromStr for ErrExpectation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "model" => Ok(ErrExpectation::Model),
            "pessimistic" => Ok(ErrExpectation::Pessimistic),
            _ => Err(format!("unknown expectation {s:?} (model, pessimistic)")),
        }
    }
}

impl std::fmt::Display for ErrExpectation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ErrExpectation::Model => "model",
            ErrExpectation::Pessimistic => "pessimistic",
        })
    }
}

const CLAMP: f64 = 1e-12;

/// Binary entropy in nats.
pub fn binary_entropy(p: f64) -> f64 {
    let p = p.clamp(CLAMP, 1.0 - CLAMP);
    -(p * p.ln() + (1.0 - p) * (1.0 - p).ln())
}

/// Summed binary entropy of the per-type probabilities, with compensated
/// summation so a sum of `T` equal terms is the correctly rounded product.
pub fn uncertainty_score(probs: &[f64]) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for &p in probs {
        let x = binary_entropy(p);
        let t = sum + x;
        comp += if sum.abs() >= x.abs() {
            (sum - t) + x
        } else {
            (x - t) + sum
        };
        sum = t;
    }
    sum + comp
}

/// Positions of the `k` largest scores, earlier positions first among ties.
/// Returned in selection order.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k.min(scores.len()));
    idx
}

pub fn select_us(probs: &[Vec<f64>], k: usize) -> Vec<usize> {
    let scores: Vec<f64> = probs.iter().map(|p| uncertainty_score(p)).collect();
    top_k(&scores, k)
}

fn trainable_grads<M: TypingModel + ?Sized>(
    model: &M,
    items: &[&TrainItem],
    opts: LossOptions,
    vat: VatInput<'_>,
) -> Result<GradientSet, GraphError> {
    let params = model.params();
    let mut g = Graph::new();
    let b = params.bind(&mut g);
    let parts = combined_loss(model, &mut g, &b, items, opts, vat)?;
    let grads = g.backward(parts.total)?;
    let mut gs = GradientSet::collect(params, &b, &grads);
    gs.retain(|n| params.is_trainable(n));
    Ok(gs)
}

fn as_gold(c: &TrainItem, verdict: Verdict) -> TrainItem {
    let mut g = c.clone();
    g.gold = Some(GoldLabel::new(verdict, None, c.type_idx));
    g
}

fn combine(
    diff_correct: &GradientSet,
    diff_error: &GradientSet,
    p_correct: f64,
    how: ErrExpectation,
) -> f64 {
    match how {
        ErrExpectation::Model => {
            let mut d = diff_correct.clone();
            d.axpy(p_correct - 1.0, diff_correct);
            d.axpy(1.0 - p_correct, diff_error);
            d.norm()
        }
        ErrExpectation::Pessimistic => diff_correct.norm().max(diff_error.norm()),
    }
}

fn candidate_p_correct<M: TypingModel + ?Sized>(model: &M, c: &TrainItem) -> f64 {
    predict(model, &[c.entity]).z[0][c.type_idx]
}

/// Norm of the change in the gradient of the batch loss when the candidate
/// moves from the noisy pool to the gold set, with the unknown verdict
/// integrated out. Loss terms of the other batch members, and the smoothing
/// term, are label-independent and cancel, so only the candidate's own
/// terms are differentiated; `batch_len` sets the `1/(|B| + 1)` averaging.
/// Gold candidates score 0; a non-finite gradient scores −∞.
pub fn err_score<M: TypingModel + ?Sized>(
    model: &M,
    candidate: &TrainItem,
    batch_len: usize,
    opts: LossOptions,
    how: ErrExpectation,
) -> f64 {
    if candidate.is_gold() {
        return 0.0;
    }
    let run = || -> Result<f64, GraphError> {
        let noisy = trainable_grads(model, &[candidate], opts, VatInput::Off)?;
        let mut diffs = Vec::with_capacity(2);
        for v in [Verdict::Correct, Verdict::Error] {
            let mut d = noisy.clone();
            d.axpy(
                -1.0,
                &trainable_grads(model, &[&as_gold(candidate, v)], opts, VatInput::Off)?,
            );
            diffs.push(d);
        }
        let p = candidate_p_correct(model, candidate);
        Ok(combine(&diffs[0], &diffs[1], p, how) / (batch_len + 1) as f64)
    };
    match run() {
        Ok(s) if s.is_finite() => s,
        _ => f64::NEG_INFINITY,
    }
}

/// Reference computation: differentiate the full loss over `batch ∪ {c}`
/// under each labelling of the candidate, smoothing term included with a
/// fixed perturbation.
pub fn err_score_brute_force<M: TypingModel + ?Sized>(
    model: &M,
    candidate: &TrainItem,
    batch: &[&TrainItem],
    opts: LossOptions,
    how: ErrExpectation,
    vat: Option<(f64, &Tensor)>,
) -> Result<f64, GraphError> {
    if candidate.is_gold() {
        return Ok(0.0);
    }
    let with = |c: &TrainItem| -> Result<GradientSet, GraphError> {
        let mut items: Vec<&TrainItem> = batch.to_vec();
        items.push(c);
        let v = match vat {
            Some((weight, r)) => VatInput::Fixed { weight, r },
            None => VatInput::Off,
        };
        trainable_grads(model, &items, opts, v)
    };
    let base = with(candidate)?;
    let mut diffs = Vec::with_capacity(2);
    for v in [Verdict::Correct, Verdict::Error] {
        let mut d = base.clone();
        d.axpy(-1.0, &with(&as_gold(candidate, v))?);
        diffs.push(d);
    }
    let p = candidate_p_correct(model, candidate);
    Ok(combine(&diffs[0], &diffs[1], p, how))
}

/// One annotation committed to the gold set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub entity: String,
    pub type_id: String,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_type: Option<String>,
    pub annotator: String,
}

/// The noisy pool `S` and gold set `Ŝ` as flags over one item list.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnotationState {
    pub items: Vec<TrainItem>,
    pub labels: Vec<String>,
    /// Item indices in the order they entered `Ŝ`.
    pub annotated: Vec<usize>,
    /// Items an annotator declined; they stay in `S` but are not re-queried.
    pub skipped: BTreeSet<usize>,
}

impl AnnotationState {
    pub fn new(items: Vec<TrainItem>, labels: Vec<String>) -> Self {
        let annotated = items
            .iter()
            .enumerate()
            .filter(|(_, it)| it.is_gold())
            .map(|(i, _)| i)
            .collect();
        Self {
            items,
            labels,
            annotated,
            skipped: BTreeSet::new(),
        }
    }

    pub fn noisy_len(&self) -> usize {
        self.items.len() - self.annotated.len()
    }

    pub fn gold_len(&self) -> usize {
        self.annotated.len()
    }

    /// Items of `S` still eligible for selection, in item order.
    pub fn query_pool(&self) -> Vec<usize> {
        (0..self.items.len())
            .filter(|i| !self.items[*i].is_gold() && !self.skipped.contains(i))
            .collect()
    }

    pub fn find(&self, entity: &str, type_id: &str) -> Option<usize> {
        self.items
            .iter()
            .position(|it| it.entity_id == entity && it.type_id == type_id)
    }

    /// Moves an item into `Ŝ`. Returns false when it already was gold.
    pub fn commit(&mut self, idx: usize, verdict: Verdict, true_type: Option<&str>) -> bool {
        let it = &mut self.items[idx];
        if it.is_gold() {
            return false;
        }
        let tt = true_type.and_then(|t| self.labels.iter().position(|l| l == t));
        it.gold = Some(GoldLabel::new(verdict, tt, it.type_idx));
        self.annotated.push(idx);
        self.skipped.remove(&idx);
        true
    }

    pub fn apply(&mut self, rec: &AnnotationRecord) -> bool {
        match self.find(&rec.entity, &rec.type_id) {
            Some(i) => self.commit(i, rec.verdict, rec.true_type.as_deref()),
            None => false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SelectionRequest {
    pub k: usize,
    pub strategy: Strategy,
    pub err_pool_subsample: usize,
    pub err_batch_len: usize,
    pub err_expectation: ErrExpectation,
    pub loss: LossOptions,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RoundOutcome {
    pub queried: Vec<usize>,
    pub committed: Vec<AnnotationRecord>,
    pub skipped: usize,
}

/// Scores the selection pool and returns up to `k` item indices in
/// selection order.
pub fn select<M: TypingModel + ?Sized>(
    model: &M,
    state: &AnnotationState,
    req: &SelectionRequest,
    rng: &mut Prng,
) -> Vec<usize> {
    let pool = state.query_pool();
    let k = req.k.min(pool.len());
    if k == 0 {
        return Vec::new();
    }
    match req.strategy {
        Strategy::Us => {
            let ents: Vec<usize> = pool.iter().map(|&i| state.items[i].entity).collect();
            let preds = predict(model, &ents);
            select_us(&preds.y, k)
                .into_iter()
                .map(|p| pool[p])
                .collect()
        }
        Strategy::Err => {
            let m = req.err_pool_subsample.clamp(k, pool.len());
            let cands = rng::subsample(&pool, m, rng);
            let scores: Vec<f64> = cands
                .par_iter()
                .map(|&i| {
                    err_score(
                        model,
                        &state.items[i],
                        req.err_batch_len,
                        req.loss,
                        req.err_expectation,
                    )
                })
                .collect();
            top_k(&scores, k).into_iter().map(|p| cands[p]).collect()
        }
        Strategy::Random => {
            let picks = rng::sample_indices(pool.len(), k, rng);
            picks.into_iter().map(|p| pool[p]).collect()
        }
    }
}

/// Selects, asks the annotator, and commits the labelled answers.
pub fn run_selection_round<M: TypingModel + ?Sized, A: Annotator + ?Sized>(
    model: &M,
    state: &mut AnnotationState,
    req: &SelectionRequest,
    annotator: &mut A,
    rng: &mut Prng,
) -> Result<RoundOutcome, AnnotatorError> {
    let chosen = select(model, state, req, rng);
    if chosen.is_empty() {
        return Ok(RoundOutcome::default());
    }
    let ents: Vec<usize> = chosen.iter().map(|&i| state.items[i].entity).collect();
    let z = predict(model, &ents).z;
    let queries: Vec<Query> = chosen
        .iter()
        .zip(&z)
        .map(|(&i, z)| {
            let it = &state.items[i];
            Query {
                entity: it.entity_id.clone(),
                type_id: it.type_id.clone(),
                score: z[it.type_idx],
            }
        })
        .collect();
    let responses = annotator.annotate(&queries)?;
    if responses.len() != queries.len() {
        return Err(AnnotatorError::Arity {
            want: queries.len(),
            got: responses.len(),
        });
    }
    let mut out = RoundOutcome {
        queried: chosen.clone(),
        ..Default::default()
    };
    for (&i, resp) in chosen.iter().zip(responses) {
        match resp {
            Response::Label { verdict, true_type } => {
                if state.commit(i, verdict, true_type.as_deref()) {
                    let it = &state.items[i];
                    out.committed.push(AnnotationRecord {
                        entity: it.entity_id.clone(),
                        type_id: it.type_id.clone(),
                        verdict,
                        true_type,
                        annotator: annotator.id().to_string(),
                    });
                }
            }
            Response::Skip => {
                state.skipped.insert(i);
                out.skipped += 1;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
