//! The run manifest written by every subcommand to `{out}/{command}.manifest`.
//!
//! ```text
//! kgtyper-manifest 1
//! command=train
//! config.seed=7
//! ...
//! config_digest=9a1e...
//! input.bundle.path=data
//! input.bundle.sha256=4f1c...
//! output.checkpoint.path=out/model.ckpt
//! output.checkpoint.sha256=c0de...
//! timing.wall_ms=5123
//! ```
//!
//! `timing.*` entries are the only ones that vary between identical runs.

use std::path::{Path, PathBuf};
use std::time::Instant;

use kgtyper_core::doc::{sha256_hex, KvDoc};
use kgtyper_core::ingest::bundle::MANIFEST_FILE;

use crate::error::CliError;
use crate::settings::Settings;

pub const MANIFEST_KIND: &str = "kgtyper-manifest";
pub const MANIFEST_VERSION: u32 = 1;

/// Digest of a file, or of a bundle directory's dataset manifest (which in
/// turn lists a digest per file).
pub fn path_digest(p: &Path) -> Result<String, CliError> {
    let target = if p.is_dir() {
        p.join(MANIFEST_FILE)
    } else {
        p.to_path_buf()
    };
    let bytes =
        std::fs::read(&target).map_err(|e| CliError::Io(format!("{}: {e}", target.display())))?;
    Ok(sha256_hex(&bytes))
}

pub fn manifest_path(out: &Path, command: &str) -> PathBuf {
    out.join(format!("{command}.manifest"))
}

#[derive(Debug)]
pub struct RunManifest {
    settings: Settings,
    inputs: Vec<(String, PathBuf)>,
    outputs: Vec<(String, PathBuf)>,
    results: Vec<(String, String)>,
    timings: Vec<(String, u128)>,
    started: Instant,
}

impl RunManifest {
    pub fn new(settings: &Settings) -> Self {
        Self {
            settings: settings.clone(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            results: Vec::new(),
            timings: Vec::new(),
            started: Instant::now(),
        }
    }

    pub fn input(&mut self, name: &str, path: &Path) {
        self.inputs.push((name.to_string(), path.to_path_buf()));
    }

    /// Records an output file; it is hashed when the manifest is written.
    pub fn output(&mut self, name: &str, path: &Path) {
        self.outputs.push((name.to_string(), path.to_path_buf()));
    }

    /// A summary value worth keeping next to the config.
    pub fn result(&mut self, key: &str, value: impl ToString) {
        self.results.push((key.to_string(), value.to_string()));
    }

    /// Milliseconds since `since`, under `timing.{phase}_ms`.
    pub fn phase(&mut self, phase: &str, since: Instant) {
        self.timings
            .push((phase.to_string(), since.elapsed().as_millis()));
    }

    pub fn config_digest(&self) -> String {
        let mut text = String::new();
        for (k, v) in &self.settings.values {
            text.push_str(&format!("{k}={v}\n"));
        }
        sha256_hex(text.as_bytes())
    }

    pub fn render(&self) -> Result<KvDoc, CliError> {
        let mut doc = KvDoc::new(MANIFEST_KIND, MANIFEST_VERSION);
        doc.set("command", self.settings.command);
        for (k, v) in &self.settings.values {
            doc.set(format!("config.{k}"), v);
        }
        doc.set("config_digest", self.config_digest());
        doc.set("seeds", self.settings.get("seed"));
        for (name, p) in &self.inputs {
            doc.set(format!("input.{name}.path"), p.display());
            doc.set(format!("input.{name}.sha256"), path_digest(p)?);
        }
        for (name, p) in &self.outputs {
            doc.set(format!("output.{name}.path"), p.display());
            if p.is_file() || p.join(MANIFEST_FILE).is_file() {
                doc.set(format!("output.{name}.sha256"), path_digest(p)?);
            }
        }
        for (k, v) in &self.results {
            doc.set(format!("result.{k}"), v);
        }
        for (k, ms) in &self.timings {
            doc.set(format!("timing.{k}_ms"), ms);
        }
        doc.set("timing.wall_ms", self.started.elapsed().as_millis());
        Ok(doc)
    }

    /// Writes the manifest into the output directory and returns its path.
    pub fn write(&self) -> Result<PathBuf, CliError> {
        let out = self.settings.out();
        std::fs::create_dir_all(&out)?;
        let path = manifest_path(&out, self.settings.command);
        std::fs::write(&path, self.render()?.render())?;
        Ok(path)
    }
}
