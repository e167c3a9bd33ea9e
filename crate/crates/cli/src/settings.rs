//! Per-command settings. Each subcommand declares a table of keys; values
//! resolve as flags over a config file over built-in defaults, and the
//! effective map is echoed into the run manifest.

use std::path::PathBuf;
use std::str::FromStr;

use clap::{Arg, ArgAction, ArgMatches, Command};
use indexmap::IndexMap;
use kgtyper_core::doc::KvDoc;

use crate::error::CliError;
use crate::manifest::MANIFEST_KIND;

/// One configurable value. The flag is `--name` with `.` and `_` replaced
/// by `-`, unless `flag` overrides it.
#[derive(Clone, Copy, Debug)]
pub struct Key {
    pub name: &'static str,
    pub flag: Option<&'static str>,
    pub help: &'static str,
}

impl Key {
    pub const fn new(name: &'static str, help: &'static str) -> Self {
        Self {
            name,
            flag: None,
            help,
        }
    }

    pub const fn flag(name: &'static str, flag: &'static str, help: &'static str) -> Self {
        Self {
            name,
            flag: Some(flag),
            help,
        }
    }

    pub fn long(&self) -> String {
        match self.flag {
            Some(f) => f.to_string(),
            None => self.name.replace(['.', '_'], "-"),
        }
    }
}

pub const COMMON_KEYS: &[Key] = &[
    Key::new("seed", "Seed for every random stream"),
    Key::new("threads", "Worker threads; 1 keeps runs reproducible"),
    Key::new("out", "Output directory; the run manifest is written here"),
];

/// A subcommand's key table with defaults. Keys with an empty default are
/// unset until given.
#[derive(Clone, Debug)]
pub struct Spec {
    pub name: &'static str,
    pub about: &'static str,
    pub keys: Vec<Key>,
    pub defaults: IndexMap<String, String>,
}

impl Spec {
    pub fn new(name: &'static str, about: &'static str) -> Self {
        let mut spec = Self {
            name,
            about,
            keys: Vec::new(),
            defaults: IndexMap::new(),
        };
        spec.add(
            COMMON_KEYS,
            &[("seed", "0"), ("threads", "1"), ("out", ".")],
        );
        spec
    }

    /// Adds keys with defaults from `defaults` (missing ones default to
    /// empty). A key already present keeps its first definition.
    pub fn add<V: ToString>(&mut self, keys: &[Key], defaults: &[(&str, V)]) -> &mut Self {
        for k in keys {
            if self.defaults.contains_key(k.name) {
                continue;
            }
            let d = defaults
                .iter()
                .find(|(n, _)| *n == k.name)
                .map_or_else(String::new, |(_, v)| v.to_string());
            self.keys.push(*k);
            self.defaults.insert(k.name.to_string(), d);
        }
        self
    }

    /// Adds keys whose defaults come from a document such as a core
    /// config's `describe` output.
    pub fn add_doc(&mut self, keys: &[Key], doc: &KvDoc) -> &mut Self {
        let defaults: Vec<(&str, &str)> = doc.iter().collect();
        self.add(keys, &defaults)
    }

    fn is_bool(&self, key: &str) -> bool {
        matches!(
            self.defaults.get(key).map(String::as_str),
            Some("true" | "false")
        )
    }

    pub fn command(&self) -> Command {
        let mut cmd = Command::new(self.name).about(self.about).arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .help("key=value file or run manifest; flags override it"),
        );
        for k in &self.keys {
            let d = &self.defaults[k.name];
            let help = if d.is_empty() {
                k.help.to_string()
            } else {
                format!("{} [default: {d}]", k.help)
            };
            let mut arg = Arg::new(k.name)
                .long(k.long())
                .value_name("VALUE")
                .help(help)
                .action(ArgAction::Set);
            if self.is_bool(k.name) {
                arg = arg
                    .num_args(0..=1)
                    .require_equals(false)
                    .default_missing_value("true")
                    .value_parser(["true", "false"]);
            }
            cmd = cmd.arg(arg);
        }
        cmd
    }

    /// Defaults, then the config file, then flags.
    pub fn resolve(&self, matches: &ArgMatches) -> Result<Settings, CliError> {
        let mut values = self.defaults.clone();
        if let Some(path) = matches.get_one::<String>("config") {
            for (k, v) in read_config(path, self.name)? {
                match values.get_mut(&k) {
                    Some(slot) => *slot = v,
                    None => log::warn!("{path}: ignoring unknown key {k}"),
                }
            }
        }
        for k in &self.keys {
            if let Some(v) = matches.get_one::<String>(k.name) {
                values.insert(k.name.to_string(), v.clone());
            }
        }
        Ok(Settings {
            command: self.name,
            values,
        })
    }
}

/// Reads a config file: flat `key=value` lines, or a run manifest of the
/// same command, whose `config.*` keys are used.
pub fn read_config(path: &str, command: &str) -> Result<Vec<(String, String)>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("config {path}: {e}")))?;
    let first = text
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('#'));
    if first.is_none_or(|l| l.contains('=')) {
        let mut out = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("{path}:{}: expected key=value", i + 1)))?;
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        return Ok(out);
    }
    let doc =
        KvDoc::parse_any(&text).map_err(|e| CliError::Usage(format!("config {path}: {e}")))?;
    if doc.kind != MANIFEST_KIND {
        return Err(CliError::Usage(format!(
            "config {path}: cannot use a {} document",
            doc.kind
        )));
    }
    match doc.get("command") {
        Some(c) if c == command => {}
        other => {
            return Err(CliError::Usage(format!(
                "config {path}: manifest is for {}, not {command}",
                other.unwrap_or("no command")
            )))
        }
    }
    Ok(doc
        .iter()
        .filter_map(|(k, v)| {
            k.strip_prefix("config.")
                .map(|k| (k.to_string(), v.to_string()))
        })
        .collect())
}

/// Effective values of one run.
#[derive(Clone, Debug)]
pub struct Settings {
    pub command: &'static str,
    pub values: IndexMap<String, String>,
}

impl Settings {
    pub fn get(&self, key: &str) -> &str {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("{} has no key {key}", self.command))
    }

    pub fn is_set(&self, key: &str) -> bool {
        !self.get(key).is_empty()
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<T, CliError> {
        let v = self.get(key);
        v.trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("{key}: cannot parse {v:?}")))
    }

    /// `None` when the key is empty or `none`.
    pub fn optional<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        match self.get(key) {
            "" | "none" => Ok(None),
            _ => self.parse(key).map(Some),
        }
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        self.parse("seed")
    }

    pub fn out(&self) -> PathBuf {
        PathBuf::from(self.get("out"))
    }

    /// An input path that must exist.
    pub fn input(&self, key: &str) -> Result<PathBuf, CliError> {
        let v = self.get(key);
        if v.is_empty() {
            return Err(CliError::Usage(format!(
                "{}: missing --{}",
                self.command,
                key.replace(['.', '_'], "-")
            )));
        }
        let p = PathBuf::from(v);
        if !p.exists() {
            return Err(CliError::Usage(format!(
                "{}: {} does not exist",
                self.command,
                p.display()
            )));
        }
        Ok(p)
    }

    /// An optional input path; must exist when given.
    pub fn optional_input(&self, key: &str) -> Result<Option<PathBuf>, CliError> {
        if self.is_set(key) {
            self.input(key).map(Some)
        } else {
            Ok(None)
        }
    }
}
