//! HTTP annotation service. A session runs one training loop on its own
//! thread; the loop publishes selection rounds into a mailbox that HTTP
//! clients drain and answer. Every label is fsynced to the session ledger
//! before it is acknowledged, and a restarted session replays its ledger.

pub mod api;
pub mod card;
pub mod launcher;
pub mod mailbox;
pub mod service;

use std::sync::Arc;

pub use api::router;
pub use card::Card;
pub use launcher::{Launcher, RunOutput, TrainerLauncher, TrainingRun};
pub use mailbox::{LabelInput, LabelVerdict, Mailbox, MailboxAnnotator, Progress, RunStatus};
pub use service::{CreateSession, Service, ServiceConfig, ServiceError, SessionCreated};

/// Serves on `listener` until the process is stopped, using `threads`
/// runtime workers.
pub fn serve_on(
    svc: Arc<Service>,
    listener: std::net::TcpListener,
    threads: usize,
) -> std::io::Result<()> {
    listener.set_nonblocking(true)?;
    let rt = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(threads.max(1))
        .enable_all()
        .build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::from_std(listener)?;
        log::info!("annotation service listening on {}", listener.local_addr()?);
        axum::serve(listener, router(svc)).await
    })
}
