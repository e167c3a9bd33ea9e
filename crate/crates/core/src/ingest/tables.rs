//! Side tables keyed by entity or token: names, description texts, and
//! fixed-dimension vectors.

use std::io::{BufRead, Write};

use indexmap::IndexMap;

use super::IngestError;

/// `id ␉ text` lines. Later duplicates overwrite earlier ones.
pub fn read_text_table<R: BufRead>(reader: R) -> Result<IndexMap<String, String>, IngestError> {
    let mut out = IndexMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        let (id, text) = line
            .split_once('\t')
            .ok_or_else(|| IngestError::Malformed {
                line: i + 1,
                message: "expected id<TAB>text".into(),
            })?;
        out.insert(id.to_string(), text.to_string());
    }
    Ok(out)
}

pub fn write_text_table<W: Write>(
    mut w: W,
    table: &IndexMap<String, String>,
) -> std::io::Result<()> {
    for (id, text) in table {
        writeln!(w, "{id}\t{}", text.replace(['\t', '\n'], " "))?;
    }
    Ok(())
}

/// Dense vectors of one fixed dimension.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct VectorTable {
    dim: usize,
    rows: IndexMap<String, Vec<f64>>,
}

/// Separator between the key and the values on each line.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VectorFormat {
    /// `id ␉ v1 v2 ...` (entity-keyed files).
    Tab,
    /// `token v1 v2 ...` (word-embedding files).
    Space,
}

impl VectorTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            rows: IndexMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, key: &str) -> Option<&[f64]> {
        self.rows.get(key).map(Vec::as_slice)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.rows.contains_key(key)
    }

    pub fn insert(&mut self, key: impl Into<String>, v: Vec<f64>) {
        assert_eq!(v.len(), self.dim, "vector dimension");
        self.rows.insert(key.into(), v);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.rows.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn read<R: BufRead>(reader: R, format: VectorFormat) -> Result<Self, IngestError> {
        let mut table = VectorTable::default();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            let split = match format {
                VectorFormat::Tab => line.split_once('\t'),
                VectorFormat::Space => line.split_once(' '),
            };
            let malformed = |message: String| IngestError::Malformed {
                line: i + 1,
                message,
            };
            let (key, rest) =
                split.ok_or_else(|| malformed("expected a key followed by values".into()))?;
            let values = rest
                .split_whitespace()
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|_| malformed(format!("bad number {t:?}")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            if values.is_empty() {
                return Err(malformed("no values".into()));
            }
            if table.rows.is_empty() {
                table.dim = values.len();
            } else if values.len() != table.dim {
                return Err(malformed(format!(
                    "dimension {} differs from {}",
                    values.len(),
                    table.dim
                )));
            }
            table.rows.insert(key.to_string(), values);
        }
        Ok(table)
    }

    pub fn write<W: Write>(&self, mut w: W, format: VectorFormat) -> std::io::Result<()> {
        let sep = match format {
            VectorFormat::Tab => '\t',
            VectorFormat::Space => ' ',
        };
        for (k, v) in &self.rows {
            let vals: Vec<String> = v.iter().map(|x| format!("{x}")).collect();
            writeln!(w, "{k}{sep}{}", vals.join(" "))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vector_round_trip() {
        let mut t = VectorTable::new(3);
        t.insert("dbr:A", vec![0.1, -2.0, 3.5e-7]);
        t.insert("dbr:B", vec![1.0, 0.0, f64::MAX]);
        for fmt in [VectorFormat::Tab, VectorFormat::Space] {
            let mut buf = Vec::new();
            t.write(&mut buf, fmt).unwrap();
            assert_eq!(VectorTable::read(buf.as_slice(), fmt).unwrap(), t);
        }
    }

    #[test]
    fn ragged_vectors_are_rejected() {
        let text = "a 1 2\nb 1 2 3\n";
        match VectorTable::read(text.as_bytes(), VectorFormat::Space) {
            Err(IngestError::Malformed { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn text_table_keeps_spaces() {
        let t = read_text_table("dbr:A\tAda Lovelace\n\ndbr:B\tB\n".as_bytes()).unwrap();
        assert_eq!(t["dbr:A"], "Ada Lovelace");
        assert_eq!(t.len(), 2);
    }
}
