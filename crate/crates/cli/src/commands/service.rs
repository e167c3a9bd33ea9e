//! Annotation service subcommands: `annotate-serve` runs the HTTP service,
//! `annotate-oracle` answers a session from the bundle's hidden truth.

use std::collections::BTreeMap;
use std::net::TcpListener;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use kgtyper_core::active::AnnotationRecord;
use kgtyper_core::ingest::{GroundTruth, Verdict};
use kgtyper_core::ledger::Clock;
use kgtyper_core::pipeline::{eval_set, prior_belief};
use kgtyper_core::trainer::Annotator;
use kgtyper_serve::api::{LabelsAck, LabelsRequest, QueueResponse, RETRY_AFTER_MS};
use kgtyper_serve::{
    CreateSession, LabelInput, LabelVerdict, Launcher, RunOutput, Service, ServiceConfig,
    SessionCreated, TrainerLauncher, TrainingRun,
};

use super::{
    encoder_defaults, network, read_bundle, train_config, train_defaults, ENCODER_KEYS, TRAIN_KEYS,
};
use crate::error::CliError;
use crate::manifest::RunManifest;
use crate::settings::{Key, Settings, Spec};

const SERVE_KEYS: &[Key] = &[
    Key::new("bundle", "Dataset bundle directory"),
    Key::new(
        "checkpoint",
        "Start sessions from this checkpoint; otherwise from a fresh network",
    ),
    Key::new("prior", "Weight noisy items by the name-suffix prior"),
    Key::new("addr", "Listen address"),
    Key::new("ledger_dir", "Session ledgers; defaults to OUT/ledgers"),
    Key::new(
        "timeout_ms",
        "How long a round waits for answers before training moves on",
    ),
    Key::new("clock", "Ledger timestamps: wall or logical"),
];

pub fn serve_spec() -> Spec {
    let mut s = Spec::new(
        "annotate-serve",
        "Serve annotation rounds over HTTP while sessions train",
    );
    s.add(
        SERVE_KEYS,
        &[
            ("prior", "true".to_string()),
            ("addr", "127.0.0.1:8080".to_string()),
            (
                "timeout_ms",
                kgtyper_serve::service::DEFAULT_TIMEOUT
                    .as_millis()
                    .to_string(),
            ),
            ("clock", "wall".to_string()),
        ],
    );
    s.add_doc(TRAIN_KEYS, &train_defaults());
    s.add_doc(ENCODER_KEYS, &encoder_defaults());
    s
}

/// Writes each finished session's checkpoint and report under
/// `{dir}/{session}/`.
struct SavingLauncher {
    inner: TrainerLauncher,
    dir: PathBuf,
}

struct SavingRun {
    run: Box<dyn TrainingRun>,
    dir: PathBuf,
}

impl Launcher for SavingLauncher {
    fn prepare(
        &self,
        session: &str,
        overrides: &BTreeMap<String, String>,
        resume: &[AnnotationRecord],
    ) -> Result<Box<dyn TrainingRun>, String> {
        let run = self.inner.prepare(session, overrides, resume)?;
        Ok(Box::new(SavingRun {
            run,
            dir: self.dir.join(session),
        }))
    }
}

impl TrainingRun for SavingRun {
    fn budget(&self) -> usize {
        self.run.budget()
    }

    fn pool(&self) -> (usize, usize) {
        self.run.pool()
    }

    fn run(self: Box<Self>, annotator: &mut dyn Annotator) -> Result<RunOutput, String> {
        let out = self.run.run(annotator)?;
        let save = || -> std::io::Result<()> {
            std::fs::create_dir_all(&self.dir)?;
            std::fs::write(
                self.dir.join(super::model::CHECKPOINT_FILE),
                &out.checkpoint,
            )?;
            std::fs::write(self.dir.join("train.report"), out.report.render())
        };
        save().map_err(|e| format!("saving {}: {e}", self.dir.display()))?;
        log::info!("session outputs written to {}", self.dir.display());
        Ok(out)
    }
}

pub fn serve(s: &Settings, m: &mut RunManifest) -> Result<(), CliError> {
    let train = train_config(s)?;
    let clock = match s.get("clock") {
        "wall" => Clock::Wall,
        "logical" => Clock::Logical,
        other => {
            return Err(CliError::Usage(format!(
                "--clock: expected wall or logical, got {other:?}"
            )))
        }
    };
    let timeout = Duration::from_millis(s.parse("timeout_ms")?);
    let threads: usize = s.parse("threads")?;
    let bundle = Arc::new(read_bundle(s, "bundle", m)?);
    let net = network(s, &bundle, train.use_noise_model, m)?;
    let prior = if s.parse("prior")? {
        prior_belief(&bundle)
    } else {
        None
    };
    let eval = eval_set(&net, &bundle.split.test, bundle.truth.as_ref());
    let calibration = eval_set(&net, &bundle.split.dev, bundle.truth.as_ref());
    let out = s.out();
    let ledger_dir = if s.is_set("ledger_dir") {
        PathBuf::from(s.get("ledger_dir"))
    } else {
        out.join("ledgers")
    };
    std::fs::create_dir_all(&ledger_dir)?;
    let sessions = out.join("sessions");
    let launcher = SavingLauncher {
        inner: TrainerLauncher {
            bundle: bundle.clone(),
            network: net,
            prior,
            train,
            eval,
            calibration,
        },
        dir: sessions.clone(),
    };
    let cfg = ServiceConfig {
        ledger_dir: ledger_dir.clone(),
        timeout,
        clock,
    };
    let svc = Arc::new(Service::new(cfg, bundle, Arc::new(launcher)));
    let listener = TcpListener::bind(s.get("addr"))
        .map_err(|e| CliError::Usage(format!("--addr {}: {e}", s.get("addr"))))?;
    let addr = listener.local_addr()?;
    m.output("ledgers", &ledger_dir);
    m.output("sessions", &sessions);
    m.result("addr", addr);
    m.result("dataset_digest", svc.dataset_digest());
    // The service runs until stopped, so the manifest is written up front.
    m.write()?;
    println!("listening on http://{addr}");
    kgtyper_serve::serve_on(svc, listener, threads)?;
    Ok(())
}

const ORACLE_KEYS: &[Key] = &[
    Key::new("url", "Service base URL"),
    Key::new("session", "Session id"),
    Key::new("bundle", "Bundle whose hidden truth supplies the answers"),
    Key::new("create", "Create (or resume) the session before answering"),
    Key::new("annotator", "Annotator id recorded in the ledger"),
    Key::new(
        "supply_true_type",
        "Give the true type with each error verdict",
    ),
    Key::new(
        "session_timeout_ms",
        "Round timeout requested for the session; server default when unset",
    ),
    Key::new("max_wait_ms", "Give up after this long without a new round"),
];

pub fn oracle_spec() -> Spec {
    let mut s = Spec::new(
        "annotate-oracle",
        "Answer a session's rounds from the bundle's hidden truth",
    );
    s.add(
        ORACLE_KEYS,
        &[
            ("url", "http://127.0.0.1:8080"),
            ("session", "oracle"),
            ("create", "true"),
            ("annotator", "oracle"),
            ("supply_true_type", "true"),
            ("max_wait_ms", "600000"),
        ],
    );
    s
}

fn answer(truth: &GroundTruth, q: &QueueResponse, supply_true_type: bool) -> Vec<LabelInput> {
    q.cards
        .iter()
        .map(|c| {
            let rec = truth.get(&c.entity, &c.type_id);
            let verdict = match rec.map(|r| r.verdict) {
                Some(Verdict::Correct) => LabelVerdict::Correct,
                Some(Verdict::Error) => LabelVerdict::Error,
                None => LabelVerdict::Skip,
            };
            let true_type = rec
                .filter(|r| {
                    supply_true_type && r.verdict == Verdict::Error && r.true_type != c.type_id
                })
                .map(|r| r.true_type.clone());
            LabelInput {
                card_id: c.card_id.clone(),
                verdict,
                true_type,
            }
        })
        .collect()
}

fn http_err(what: &str, e: impl std::fmt::Display) -> CliError {
    CliError::Run(format!("{what}: {e}"))
}

pub fn oracle(s: &Settings, m: &mut RunManifest) -> Result<(), CliError> {
    let bundle = read_bundle(s, "bundle", m)?;
    let truth = bundle
        .truth
        .ok_or_else(|| CliError::Usage("annotate-oracle needs a bundle with truth".into()))?;
    let base = s.get("url").trim_end_matches('/').to_string();
    let id = s.get("session").to_string();
    let supply: bool = s.parse("supply_true_type")?;
    let max_wait = Duration::from_millis(s.parse("max_wait_ms")?);
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .http_status_as_error(false)
        .build()
        .into();

    if s.parse("create")? {
        let req = CreateSession {
            id: Some(id.clone()),
            timeout_ms: s.optional("session_timeout_ms")?,
            config: BTreeMap::new(),
        };
        let mut r = agent
            .post(format!("{base}/session"))
            .send_json(&req)
            .map_err(|e| http_err("create session", e))?;
        let body = r
            .body_mut()
            .read_to_string()
            .map_err(|e| http_err("create session", e))?;
        if r.status().as_u16() != 201 {
            return Err(CliError::Run(format!(
                "create session: {} {body}",
                r.status()
            )));
        }
        let created: SessionCreated = serde_json_from(&body)?;
        log::info!(
            "session {} budget {} resumed {}",
            created.session,
            created.budget,
            created.resumed
        );
        m.result("resumed", created.resumed);
    }

    let (mut rounds, mut committed, mut skipped) = (0usize, 0usize, 0usize);
    let mut last_progress = Instant::now();
    loop {
        let q: QueueResponse = agent
            .get(format!("{base}/session/{id}/queue"))
            .call()
            .map_err(|e| http_err("queue", e))
            .and_then(|mut r| {
                let status = r.status().as_u16();
                let body = r
                    .body_mut()
                    .read_to_string()
                    .map_err(|e| http_err("queue", e))?;
                if status != 200 {
                    return Err(CliError::Run(format!("queue: {status} {body}")));
                }
                serde_json_from(&body)
            })?;
        if q.cards.is_empty() {
            if q.complete {
                break;
            }
            if last_progress.elapsed() > max_wait {
                return Err(CliError::Run(format!(
                    "no round published within {max_wait:?}"
                )));
            }
            std::thread::sleep(Duration::from_millis(
                q.retry_after_ms.unwrap_or(RETRY_AFTER_MS).min(50),
            ));
            continue;
        }
        let labels = answer(&truth, &q, supply);
        skipped += labels
            .iter()
            .filter(|l| l.verdict == LabelVerdict::Skip)
            .count();
        let req = LabelsRequest {
            annotator: s.get("annotator").to_string(),
            labels,
        };
        let mut r = agent
            .post(format!("{base}/session/{id}/labels"))
            .send_json(&req)
            .map_err(|e| http_err("labels", e))?;
        let body = r
            .body_mut()
            .read_to_string()
            .map_err(|e| http_err("labels", e))?;
        if r.status().as_u16() != 200 {
            return Err(CliError::Run(format!("labels: {} {body}", r.status())));
        }
        let ack: LabelsAck = serde_json_from(&body)?;
        committed += ack.accepted.iter().filter(|a| a.seq.is_some()).count();
        rounds += 1;
        last_progress = Instant::now();
    }
    m.result("rounds", rounds);
    m.result("committed", committed);
    m.result("skipped", skipped);
    println!("session {id}: {committed} labels over {rounds} rounds ({skipped} skipped)");
    Ok(())
}

fn serde_json_from<T: serde::de::DeserializeOwned>(body: &str) -> Result<T, CliError> {
    serde_json::from_str(body)
        .map_err(|e| CliError::Run(format!("unexpected response {body:?}: {e}")))
}
