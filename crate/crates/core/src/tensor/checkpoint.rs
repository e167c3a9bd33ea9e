//! Checkpoint file: a text manifest followed by a little-endian `f64` payload.
//!
//! ```text
//! kgtyper-checkpoint 1
//! meta seed=7
//! param head.weight trainable=1 shape=420x17 offset=0 count=7140
//! ...
//! payload 57120
//! end
//! <raw little-endian f64 values, in manifest order>
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use super::{ParamStore, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &str = "kgtyper-checkpoint";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("invalid name or meta entry {0:?}")]
    InvalidKey(String),
}

/// Parameters plus string metadata (hyper-parameters, seed, vocabularies).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub params: ParamStore,
    pub meta: BTreeMap<String, String>,
}

fn malformed(msg: impl Into<String>) -> CheckpointError {
    CheckpointError::Malformed(msg.into())
}

impl Checkpoint {
    pub fn new(params: ParamStore) -> Self {
        Self {
            params,
            meta: BTreeMap::new(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, CheckpointError> {
        let mut header = format!("{MAGIC} {CHECKPOINT_VERSION}\n");
        for (k, v) in &self.meta {
            if k.is_empty() || k.contains(['=', '\n', ' ']) || v.contains('\n') {
                return Err(CheckpointError::InvalidKey(k.clone()));
            }
            header.push_str(&format!("meta {k}={v}\n"));
        }
        let mut payload = Vec::with_capacity(self.params.num_values() * 8);
        for (name, t) in self.params.iter() {
            if name.is_empty() || name.contains(char::is_whitespace) {
                return Err(CheckpointError::InvalidKey(name.to_string()));
            }
            let shape = t
                .shape()
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join("x");
            header.push_str(&format!(
                "param {name} trainable={} shape={shape} offset={} count={}\n",
                u8::from(self.params.is_trainable(name)),
                payload.len(),
                t.len()
            ));
            for v in t.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        header.push_str(&format!("payload {}\nend\n", payload.len()));
        let mut out = header.into_bytes();
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let marker = b"\nend\n";
        let split = bytes
            .windows(marker.len())
            .position(|w| w == marker)
            .ok_or_else(|| malformed("missing end of manifest"))?;
        let header =
            std::str::from_utf8(&bytes[..split]).map_err(|_| malformed("manifest is not UTF-8"))?;
        let payload = &bytes[split + marker.len()..];

        let mut lines = header.lines();
        let first = lines.next().ok_or_else(|| malformed("empty"))?;
        let version = first
            .strip_prefix(MAGIC)
            .map(str::trim)
            .ok_or_else(|| malformed("bad magic"))?
            .parse::<u32>()
            .map_err(|_| malformed("bad version"))?;
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version(version));
        }

        let mut ckpt = Checkpoint::default();
        let mut declared_payload = None;
        for line in lines {
            let (kind, rest) = line.split_once(' ').ok_or_else(|| malformed(line))?;
            match kind {
                "meta" => {
                    let (k, v) = rest.split_once('=').ok_or_else(|| malformed(line))?;
                    ckpt.meta.insert(k.to_string(), v.to_string());
                }
                "param" => {
                    let mut fields = rest.split(' ');
                    let name = fields.next().ok_or_else(|| malformed(line))?;
                    let mut kv = BTreeMap::new();
                    for f in fields {
                        let (k, v) = f.split_once('=').ok_or_else(|| malformed(line))?;
                        kv.insert(k, v);
                    }
                    let get = |k: &str| {
                        kv.get(k)
                            .copied()
                            .ok_or_else(|| malformed(format!("{line}: missing {k}")))
                    };
                    let shape = get("shape")?
                        .split('x')
                        .map(|d| d.parse::<usize>().map_err(|_| malformed(line)))
                        .collect::<Result<Vec<_>, _>>()?;
                    let offset: usize = get("offset")?.parse().map_err(|_| malformed(line))?;
                    let count: usize = get("count")?.parse().map_err(|_| malformed(line))?;
                    let end = offset + count * 8;
                    if end > payload.len() {
                        return Err(malformed(format!("{name}: payload too short")));
                    }
                    let data = payload[offset..end]
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                        .collect();
                    let t = Tensor::new(shape, data).map_err(|e| malformed(e.to_string()))?;
                    if get("trainable")? == "1" {
                        ckpt.params.insert(name, t);
                    } else {
                        ckpt.params.insert_frozen(name, t);
                    }
                }
                "payload" => {
                    declared_payload = Some(rest.parse::<usize>().map_err(|_| malformed(line))?);
                }
                _ => return Err(malformed(line)),
            }
        }
        if declared_payload != Some(payload.len()) {
            return Err(malformed("payload length mismatch"));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}
