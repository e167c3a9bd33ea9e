//! The hand-off between a training thread and HTTP annotators: at most one
//! published round at a time, with label commits written to the session
//! ledger before they are acknowledged.

use std::collections::BTreeSet;
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use kgtyper_core::active::AnnotationRecord;
use kgtyper_core::ingest::{Bundle, Verdict};
use kgtyper_core::ledger::{LedgerError, LedgerWriter};
use kgtyper_core::trainer::{Annotator, AnnotatorError, Query, Response};
use serde::{Deserialize, Serialize};

use crate::card::{build_card, Card};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Running,
    Complete,
    Failed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelVerdict {
    Correct,
    Error,
    Skip,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelInput {
    pub card_id: String,
    pub verdict: LabelVerdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_type: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub card_id: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Accepted {
    pub card_id: String,
    /// Ledger sequence number; absent for skips.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq: Option<u64>,
}

#[derive(Debug)]
pub enum CommitError {
    /// Nothing was written.
    Rejected(Vec<Rejection>),
    /// The ledger failed after `accepted` records were written.
    Ledger {
        accepted: Vec<Accepted>,
        error: LedgerError,
    },
}

struct PendingRound {
    id: u64,
    cards: Vec<Card>,
    responses: Vec<Option<Response>>,
}

impl PendingRound {
    fn answered(&self) -> usize {
        self.responses.iter().filter(|r| r.is_some()).count()
    }
}

/// Counters reported by the progress endpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub status: RunStatus,
    pub budget: usize,
    /// Labels in the ledger, including replayed ones.
    pub committed: usize,
    pub budget_remaining: usize,
    /// `|S|` and `|Ŝ|` as of the last round boundary.
    pub noisy: usize,
    pub gold: usize,
    pub rounds: u64,
    pub pending_cards: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

struct State {
    round: Option<PendingRound>,
    rounds: u64,
    status: RunStatus,
    error: Option<String>,
    budget: usize,
    committed: usize,
    noisy: usize,
    gold: usize,
    ledger: LedgerWriter,
}

pub struct Mailbox {
    state: Mutex<State>,
    changed: Condvar,
    bundle: Arc<Bundle>,
    labels: Vec<String>,
    timeout: Duration,
}

/// A snapshot of the cards still awaiting a verdict.
#[derive(Clone, Debug, PartialEq)]
pub struct QueueView {
    pub round: Option<u64>,
    pub cards: Vec<Card>,
    pub complete: bool,
}

impl Mailbox {
    pub fn new(
        bundle: Arc<Bundle>,
        ledger: LedgerWriter,
        budget: usize,
        committed: usize,
        pool: (usize, usize),
        timeout: Duration,
    ) -> Self {
        let labels = bundle.labels();
        Self {
            state: Mutex::new(State {
                round: None,
                rounds: 0,
                status: RunStatus::Running,
                error: None,
                budget,
                committed,
                noisy: pool.0,
                gold: pool.1,
                ledger,
            }),
            changed: Condvar::new(),
            bundle,
            labels,
            timeout,
        }
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn queue(&self) -> QueueView {
        let s = self.lock();
        let complete = s.status != RunStatus::Running || s.committed >= s.budget;
        match &s.round {
            Some(r) => QueueView {
                round: Some(r.id),
                cards: r
                    .cards
                    .iter()
                    .zip(&r.responses)
                    .filter(|(_, resp)| resp.is_none())
                    .map(|(c, _)| c.clone())
                    .collect(),
                complete,
            },
            None => QueueView {
                round: None,
                cards: Vec::new(),
                complete,
            },
        }
    }

    pub fn progress(&self) -> Progress {
        let s = self.lock();
        Progress {
            status: s.status.clone(),
            budget: s.budget,
            committed: s.committed,
            budget_remaining: s.budget.saturating_sub(s.committed),
            noisy: s.noisy,
            gold: s.gold,
            rounds: s.rounds,
            pending_cards: s.round.as_ref().map_or(0, |r| r.cards.len() - r.answered()),
            error: s.error.clone(),
        }
    }

    /// Validates every label first; on any rejection nothing is written.
    /// Accepted labels are appended to the ledger and fsynced before the
    /// call returns.
    pub fn commit(
        &self,
        annotator: &str,
        labels: &[LabelInput],
    ) -> Result<Vec<Accepted>, CommitError> {
        let mut s = self.lock();
        let mut rejected = Vec::new();
        let mut seen = BTreeSet::new();
        let mut slots = Vec::with_capacity(labels.len());
        for l in labels {
            let reject = |reason: &str| Rejection {
                card_id: l.card_id.clone(),
                reason: reason.into(),
            };
            let slot = s.round.as_ref().and_then(|r| {
                r.cards
                    .iter()
                    .position(|c| c.card_id == l.card_id)
                    .map(|i| (i, r.responses[i].is_some()))
            });
            match slot {
                None => rejected.push(reject("unknown card")),
                Some((_, true)) => rejected.push(reject("already committed")),
                Some(_) if !seen.insert(l.card_id.as_str()) => {
                    rejected.push(reject("repeated in request"))
                }
                Some(_) if l.true_type.is_some() && l.verdict != LabelVerdict::Error => {
                    rejected.push(reject("true type is only accepted with an error verdict"))
                }
                Some(_)
                    if l.true_type
                        .as_ref()
                        .is_some_and(|t| !self.labels.contains(t)) =>
                {
                    rejected.push(reject("unknown true type"))
                }
                Some((i, false)) => slots.push(i),
            }
        }
        if !rejected.is_empty() {
            return Err(CommitError::Rejected(rejected));
        }
        let mut accepted = Vec::with_capacity(labels.len());
        for (l, i) in labels.iter().zip(slots) {
            let card = &s.round.as_ref().expect("validated").cards[i];
            let verdict = match l.verdict {
                LabelVerdict::Correct => Some(Verdict::Correct),
                LabelVerdict::Error => Some(Verdict::Error),
                LabelVerdict::Skip => None,
            };
            let (response, seq) = match verdict {
                Some(verdict) => {
                    let rec = AnnotationRecord {
                        entity: card.entity.clone(),
                        type_id: card.type_id.clone(),
                        verdict,
                        true_type: l.true_type.clone(),
                        annotator: annotator.to_string(),
                    };
                    match s.ledger.append(&rec) {
                        Ok(written) => (
                            Response::Label {
                                verdict,
                                true_type: l.true_type.clone(),
                            },
                            Some(written.seq),
                        ),
                        Err(error) => {
                            self.changed.notify_all();
                            return Err(CommitError::Ledger { accepted, error });
                        }
                    }
                }
                None => (Response::Skip, None),
            };
            if seq.is_some() {
                s.committed += 1;
            }
            s.round.as_mut().expect("validated").responses[i] = Some(response);
            accepted.push(Accepted {
                card_id: l.card_id.clone(),
                seq,
            });
        }
        self.changed.notify_all();
        Ok(accepted)
    }

    /// Marks the run finished and wakes any waiters.
    pub fn finish(&self, result: Result<(), String>) {
        let mut s = self.lock();
        s.round = None;
        match result {
            Ok(()) => s.status = RunStatus::Complete,
            Err(e) => {
                s.status = RunStatus::Failed;
                s.error = Some(e);
            }
        }
        self.changed.notify_all();
    }

    pub fn set_pool(&self, noisy: usize, gold: usize) {
        let mut s = self.lock();
        s.noisy = noisy;
        s.gold = gold;
    }

    /// Blocks until the run is no longer running or `timeout` passes.
    pub fn wait_finished(&self, timeout: Duration) -> RunStatus {
        let s = self.lock();
        let (s, _) = self
            .changed
            .wait_timeout_while(s, timeout, |s| s.status == RunStatus::Running)
            .unwrap_or_else(|p| p.into_inner());
        s.status.clone()
    }

    /// Publishes one round and waits for it to be answered. On timeout the
    /// answered part is returned with skips for the rest; a round with no
    /// answers at all is a timeout.
    fn publish_and_wait(&self, queries: &[Query]) -> Result<Vec<Response>, AnnotatorError> {
        let mut s = self.lock();
        s.rounds += 1;
        let id = s.rounds;
        let cards = queries
            .iter()
            .enumerate()
            .map(|(i, q)| build_card(&self.bundle, format!("r{id}c{i}"), q))
            .collect();
        s.round = Some(PendingRound {
            id,
            cards,
            responses: vec![None; queries.len()],
        });
        self.changed.notify_all();
        let deadline = Instant::now() + self.timeout;
        loop {
            let r = s
                .round
                .as_ref()
                .expect("round stays published while waiting");
            if r.answered() == r.cards.len() {
                break;
            }
            let now = Instant::now();
            if now >= deadline {
                break;
            }
            s = self
                .changed
                .wait_timeout(s, deadline - now)
                .unwrap_or_else(|p| p.into_inner())
                .0;
        }
        let round = s.round.take().expect("round present");
        if round.answered() == 0 {
            return Err(AnnotatorError::Timeout);
        }
        let responses: Vec<Response> = round
            .responses
            .into_iter()
            .map(|r| r.unwrap_or(Response::Skip))
            .collect();
        let labelled = responses
            .iter()
            .filter(|r| matches!(r, Response::Label { .. }))
            .count();
        s.gold += labelled;
        s.noisy = s.noisy.saturating_sub(labelled);
        Ok(responses)
    }
}

/// The trainer-facing side of a [`Mailbox`].
#[derive(Clone)]
pub struct MailboxAnnotator {
    mailbox: Arc<Mailbox>,
}

impl MailboxAnnotator {
    pub fn new(mailbox: Arc<Mailbox>) -> Self {
        Self { mailbox }
    }
}

impl Annotator for MailboxAnnotator {
    fn annotate(&mut self, queries: &[Query]) -> Result<Vec<Response>, AnnotatorError> {
        if queries.is_empty() {
            return Ok(Vec::new());
        }
        self.mailbox.publish_and_wait(queries)
    }

    fn id(&self) -> &str {
        "service"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use kgtyper_core::ingest::{generate_synthetic_kg, SyntheticConfig};
    use kgtyper_core::ledger::{read_ledger, Clock};

    fn mailbox(dir: &std::path::Path, timeout: Duration) -> Arc<Mailbox> {
        let bundle = generate_synthetic_kg(&SyntheticConfig {
            n_entities: 60,
            n_types: 2,
            ..Default::default()
        })
        .unwrap();
        let ledger =
            LedgerWriter::create(&dir.join("l.jsonl"), &bundle.digest(), Clock::Logical).unwrap();
        Arc::new(Mailbox::new(
            Arc::new(bundle),
            ledger,
            10,
            0,
            (50, 0),
            timeout,
        ))
    }

    fn queries(mb: &Mailbox, n: usize) -> Vec<Query> {
        mb.bundle.split.noisy_train[..n]
            .iter()
            .map(|a| Query {
                entity: a.entity.clone(),
                type_id: a.type_id.clone(),
                score: 0.5,
            })
            .collect()
    }

    fn wait_for_cards(mb: &Mailbox) -> Vec<Card> {
        loop {
            let q = mb.queue();
            if !q.cards.is_empty() {
                return q.cards;
            }
            std::thread::yield_now();
        }
    }

    #[test]
    fn partial_answers_are_kept_on_timeout() {
        let dir = tempfile::tempdir().unwrap();
        let mb = mailbox(dir.path(), Duration::from_millis(100));
        let qs = queries(&mb, 4);
        let worker = {
            let mb = mb.clone();
            std::thread::spawn(move || MailboxAnnotator::new(mb).annotate(&qs))
        };
        let cards = wait_for_cards(&mb);
        let label = LabelInput {
            card_id: cards[1].card_id.clone(),
            verdict: LabelVerdict::Correct,
            true_type: None,
        };
        mb.commit("a", &[label]).unwrap();
        let out = worker.join().unwrap().unwrap();
        assert_eq!(out.len(), 4);
        assert!(matches!(
            out[1],
            Response::Label {
                verdict: Verdict::Correct,
                ..
            }
        ));
        assert!([0, 2, 3].iter().all(|&i| out[i] == Response::Skip));
        let p = mb.progress();
        assert_eq!(
            (p.committed, p.gold, p.noisy, p.pending_cards),
            (1, 1, 49, 0)
        );
        assert_eq!(
            read_ledger(&dir.path().join("l.jsonl"))
                .unwrap()
                .records
                .len(),
            1
        );
        // the closed round no longer accepts labels
        let late = LabelInput {
            card_id: cards[0].card_id.clone(),
            verdict: LabelVerdict::Correct,
            true_type: None,
        };
        assert!(matches!(
            mb.commit("a", &[late]),
            Err(CommitError::Rejected(_))
        ));
    }

    #[test]
    fn unanswered_round_is_a_timeout() {
        let dir = tempfile::tempdir().unwrap();
        let mb = mailbox(dir.path(), Duration::from_millis(10));
        let qs = queries(&mb, 2);
        let res = MailboxAnnotator::new(mb.clone()).annotate(&qs);
        assert!(matches!(res, Err(AnnotatorError::Timeout)));
        assert!(mb.queue().cards.is_empty());
        mb.finish(Ok(()));
        assert!(mb.queue().complete);
        assert_eq!(mb.wait_finished(Duration::ZERO), RunStatus::Complete);
    }
}
