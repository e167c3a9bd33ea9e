//! Versioned key=value text documents (dataset manifests, run reports,
//! metric reports).
//!
//! ```text
//! kgtyper-dataset 1
//! seed=7
//! split.test.digest=4f1c...
//! ```
//!
//! Lines starting with `#` are comments; keys keep their insertion order.

use indexmap::IndexMap;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DocError {
    #[error("expected a `{want}` document, found {found:?}")]
    Kind { want: String, found: String },
    #[error("unsupported {kind} version {version}")]
    Version { kind: String, version: u32 },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("missing key {0}")]
    Missing(String),
    #[error("key {key}: cannot parse {value:?}")]
    Value { key: String, value: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct KvDoc {
    pub kind: String,
    pub version: u32,
    entries: IndexMap<String, String>,
}

impl KvDoc {
    pub fn new(kind: &str, version: u32) -> Self {
        Self {
            kind: kind.to_string(),
            version,
            entries: IndexMap::new(),
        }
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) -> &mut Self {
        let key = key.into();
        debug_assert!(!key.contains(['=', '\n']), "bad key {key}");
        let value = value.to_string().replace('\n', " ");
        self.entries.insert(key, value);
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str, DocError> {
        self.get(key)
            .ok_or_else(|| DocError::Missing(key.to_string()))
    }

    pub fn parse_value<T: std::str::FromStr>(&self, key: &str) -> Result<T, DocError> {
        let v = self.require(key)?;
        v.parse().map_err(|_| DocError::Value {
            key: key.to_string(),
            value: v.to_string(),
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn render(&self) -> String {
        let mut out = format!("{} {}\n", self.kind, self.version);
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    /// Parses any document, whatever its kind.
    pub fn parse_any(text: &str) -> Result<Self, DocError> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
        let (_, head) = lines.next().ok_or(DocError::Malformed {
            line: 1,
            message: "empty document".into(),
        })?;
        let (kind, version) = head.rsplit_once(' ').ok_or(DocError::Malformed {
            line: 1,
            message: "missing version".into(),
        })?;
        let version = version.trim().parse().map_err(|_| DocError::Malformed {
            line: 1,
            message: format!("bad version {version:?}"),
        })?;
        let mut doc = KvDoc::new(kind.trim(), version);
        for (i, line) in lines {
            let (k, v) = line.split_once('=').ok_or(DocError::Malformed {
                line: i + 1,
                message: format!("expected key=value, got {line:?}"),
            })?;
            doc.entries
                .insert(k.trim().to_string(), v.trim_end().to_string());
        }
        Ok(doc)
    }

    pub fn parse(text: &str, kind: &str, version: u32) -> Result<Self, DocError> {
        let doc = Self::parse_any(text)?;
        if doc.kind != kind {
            return Err(DocError::Kind {
                want: kind.to_string(),
                found: doc.kind,
            });
        }
        if doc.version != version {
            return Err(DocError::Version {
                kind: doc.kind,
                version: doc.version,
            });
        }
        Ok(doc)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_parse_round_trip() {
        let mut d = KvDoc::new("kgtyper-report", 1);
        d.set("seed", 7)
            .set("noise.p.dbo:Place", 0.93)
            .set("note", "a b=c");
        let text = d.render();
        let back = KvDoc::parse(&text, "kgtyper-report", 1).unwrap();
        assert_eq!(back, d);
        assert_eq!(back.parse_value::<u64>("seed").unwrap(), 7);
        assert_eq!(back.get("note"), Some("a b=c"));
    }

    #[test]
    fn wrong_kind_or_version_is_rejected() {
        let text = KvDoc::new("a", 1).render();
        assert!(matches!(
            KvDoc::parse(&text, "b", 1),
            Err(DocError::Kind { .. })
        ));
        assert!(matches!(
            KvDoc::parse(&text, "a", 2),
            Err(DocError::Version { .. })
        ));
    }

    #[test]
    fn digest_is_stable() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
