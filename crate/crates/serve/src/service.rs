//! Session registry: creates, resumes and tracks annotation sessions.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};
use std::thread::JoinHandle;
use std::time::Duration;

use kgtyper_core::ingest::Bundle;
use kgtyper_core::ledger::{Clock, LedgerError, LedgerWriter};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::launcher::{Launcher, RunOutput};
use crate::mailbox::{Mailbox, MailboxAnnotator, RunStatus};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(300);

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("invalid session id {0:?}")]
    BadId(String),
    #[error("session {0} is already running")]
    Running(String),
    #[error("no session {0}")]
    NotFound(String),
    #[error("cannot start session: {0}")]
    Launch(String),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    /// One ledger per session: `{ledger_dir}/{id}.jsonl`.
    pub ledger_dir: PathBuf,
    pub timeout: Duration,
    pub clock: Clock,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CreateSession {
    #[serde(default)]
    pub id: Option<String>,
    #[serde(default)]
    pub timeout_ms: Option<u64>,
    /// Training settings applied over the server defaults.
    #[serde(default)]
    pub config: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session: String,
    pub dataset_digest: String,
    pub budget: usize,
    /// Labels replayed from an existing ledger.
    pub resumed: usize,
}

pub struct Session {
    pub id: String,
    pub mailbox: Arc<Mailbox>,
    output: Arc<Mutex<Option<Result<RunOutput, String>>>>,
    worker: Mutex<Option<JoinHandle<()>>>,
}

impl Session {
    /// Waits for the training thread and returns its output.
    pub fn join(&self) -> Option<Result<RunOutput, String>> {
        let handle = self.worker.lock().unwrap_or_else(|p| p.into_inner()).take();
        if let Some(h) = handle {
            let _ = h.join();
        }
        self.output
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .clone()
    }

    pub fn is_running(&self) -> bool {
        self.mailbox.progress().status == RunStatus::Running
    }
}

pub struct Service {
    pub cfg: ServiceConfig,
    pub bundle: Arc<Bundle>,
    digest: String,
    launcher: Arc<dyn Launcher>,
    sessions: RwLock<BTreeMap<String, Arc<Session>>>,
    /// Serializes session creation so an id is never started twice.
    creating: Mutex<u64>,
}

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 64
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

impl Service {
    pub fn new(cfg: ServiceConfig, bundle: Arc<Bundle>, launcher: Arc<dyn Launcher>) -> Self {
        let digest = bundle.digest();
        Self {
            cfg,
            bundle,
            digest,
            launcher,
            sessions: RwLock::new(BTreeMap::new()),
            creating: Mutex::new(0),
        }
    }

    pub fn dataset_digest(&self) -> &str {
        &self.digest
    }

    pub fn ledger_path(&self, id: &str) -> PathBuf {
        self.cfg.ledger_dir.join(format!("{id}.jsonl"))
    }

    pub fn session(&self, id: &str) -> Option<Arc<Session>> {
        self.sessions
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .get(id)
            .cloned()
    }

    /// Starts a session, resuming from its ledger when one exists.
    pub fn create(&self, req: &CreateSession) -> Result<SessionCreated, ServiceError> {
        let mut counter = self.creating.lock().unwrap_or_else(|p| p.into_inner());
        let id = match &req.id {
            Some(id) if !valid_id(id) => return Err(ServiceError::BadId(id.clone())),
            Some(id) => id.clone(),
            None => loop {
                *counter += 1;
                let id = format!("s{}", *counter);
                if self.session(&id).is_none() && !self.ledger_path(&id).exists() {
                    break id;
                }
            },
        };
        if self.session(&id).is_some_and(|s| s.is_running()) {
            return Err(ServiceError::Running(id));
        }
        let (ledger, records) =
            LedgerWriter::open_or_create(&self.ledger_path(&id), &self.digest, self.cfg.clock)?;
        let resume: Vec<_> = records.iter().map(|r| r.annotation()).collect();
        let run = self
            .launcher
            .prepare(&id, &req.config, &resume)
            .map_err(ServiceError::Launch)?;
        let budget = run.budget();
        let timeout = req
            .timeout_ms
            .map_or(self.cfg.timeout, Duration::from_millis);
        let mailbox = Arc::new(Mailbox::new(
            self.bundle.clone(),
            ledger,
            budget,
            records.len(),
            run.pool(),
            timeout,
        ));
        let output = Arc::new(Mutex::new(None));
        let worker = {
            let mailbox = mailbox.clone();
            let output = output.clone();
            std::thread::Builder::new()
                .name(format!("train-{id}"))
                .spawn(move || {
                    let mut annotator = MailboxAnnotator::new(mailbox.clone());
                    let result = run.run(&mut annotator);
                    let status = result.as_ref().map(|_| ()).map_err(Clone::clone);
                    *output.lock().unwrap_or_else(|p| p.into_inner()) = Some(result);
                    mailbox.finish(status);
                })
                .map_err(|e| ServiceError::Launch(e.to_string()))?
        };
        let session = Arc::new(Session {
            id: id.clone(),
            mailbox,
            output,
            worker: Mutex::new(Some(worker)),
        });
        self.sessions
            .write()
            .unwrap_or_else(|p| p.into_inner())
            .insert(id.clone(), session);
        Ok(SessionCreated {
            session: id,
            dataset_digest: self.digest.clone(),
            budget,
            resumed: records.len(),
        })
    }
}
