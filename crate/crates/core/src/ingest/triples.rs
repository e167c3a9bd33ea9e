//! Triple files: three tab-separated columns per line, or N-Triples.

use std::io::{BufRead, Write};

use super::IngestError;

pub const TYPE_RELATION: &str = "rdf:type";

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TripleRecord {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

impl TripleRecord {
    pub fn new(
        head: impl Into<String>,
        relation: impl Into<String>,
        tail: impl Into<String>,
    ) -> Self {
        Self {
            head: head.into(),
            relation: relation.into(),
            tail: tail.into(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum OnMalformed {
    #[default]
    Skip,
    Abort,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnostic {
    /// 1-based line number.
    pub line: usize,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParsedTriples {
    pub records: Vec<TripleRecord>,
    pub diagnostics: Vec<Diagnostic>,
}

fn parse_tsv_line(line: &str) -> Result<TripleRecord, String> {
    let line = line.strip_suffix('\r').unwrap_or(line);
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 3 {
        return Err(format!(
            "expected 3 tab-separated fields, found {}",
            fields.len()
        ));
    }
    if fields[0].trim().is_empty() {
        return Err("empty head".into());
    }
    if fields[1].trim().is_empty() {
        return Err("empty relation".into());
    }
    Ok(TripleRecord::new(
        fields[0],
        fields[1],
        fields[2].trim_end(),
    ))
}

fn parse_lines<R, F>(
    reader: R,
    mode: OnMalformed,
    mut parse: F,
) -> Result<ParsedTriples, IngestError>
where
    R: BufRead,
    F: FnMut(&str) -> Result<Option<TripleRecord>, String>,
{
    let mut out = ParsedTriples::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match parse(&line) {
            Ok(Some(rec)) => out.records.push(rec),
            Ok(None) => {}
            Err(message) => {
                if mode == OnMalformed::Abort {
                    return Err(IngestError::Malformed {
                        line: i + 1,
                        message,
                    });
                }
                log::warn!("skipping line {}: {message}", i + 1);
                out.diagnostics.push(Diagnostic {
                    line: i + 1,
                    message,
                });
            }
        }
    }
    Ok(out)
}

/// Reads tab-separated triples. Blank lines are ignored.
pub fn parse_triples<R: BufRead>(
    reader: R,
    mode: OnMalformed,
) -> Result<ParsedTriples, IngestError> {
    parse_lines(reader, mode, |l| parse_tsv_line(l).map(Some))
}

pub fn parse_triples_str(text: &str, mode: OnMalformed) -> Result<ParsedTriples, IngestError> {
    parse_triples(text.as_bytes(), mode)
}

pub fn write_triples<W: Write>(mut w: W, records: &[TripleRecord]) -> std::io::Result<()> {
    for r in records {
        writeln!(w, "{}\t{}\t{}", r.head, r.relation, r.tail)?;
    }
    Ok(())
}

const PREFIXES: &[(&str, &str)] = &[
    ("http://www.w3.org/1999/02/22-rdf-syntax-ns#", "rdf:"),
    ("http://www.w3.org/2000/01/rdf-schema#", "rdfs:"),
    ("http://dbpedia.org/resource/", "dbr:"),
    ("http://dbpedia.org/ontology/", "dbo:"),
    ("http://dbpedia.org/property/", "dbp:"),
    ("http://www.w3.org/2002/07/owl#", "owl:"),
];

/// Shortens well-known IRIs to their conventional prefixes.
pub fn compact_iri(iri: &str) -> String {
    for (long, short) in PREFIXES {
        if let Some(rest) = iri.strip_prefix(long) {
            return format!("{short}{rest}");
        }
    }
    iri.to_string()
}

/// Splits off one N-Triples term, returning it and the remainder.
fn next_term(s: &str) -> Result<(String, &str), String> {
    let s = s.trim_start();
    if let Some(rest) = s.strip_prefix('<') {
        let end = rest.find('>').ok_or("unterminated IRI")?;
        Ok((compact_iri(&rest[..end]), &rest[end + 1..]))
    } else if s.starts_with('"') {
        let bytes = s.as_bytes();
        let mut i = 1;
        while i < bytes.len() {
            match bytes[i] {
                b'\\' => i += 2,
                b'"' => break,
                _ => i += 1,
            }
        }
        if i >= bytes.len() {
            return Err("unterminated literal".into());
        }
        // keep datatype or language tag with the literal
        let end = s[i + 1..]
            .find(char::is_whitespace)
            .map_or(s.len(), |j| i + 1 + j);
        Ok((s[..end].to_string(), &s[end..]))
    } else if s.starts_with("_:") {
        let end = s.find(char::is_whitespace).unwrap_or(s.len());
        Ok((s[..end].to_string(), &s[end..]))
    } else {
        Err(format!(
            "unexpected term at {:?}",
            s.chars().take(20).collect::<String>()
        ))
    }
}

fn parse_nt_line(line: &str) -> Result<Option<TripleRecord>, String> {
    let trimmed = line.trim();
    if trimmed.starts_with('#') {
        return Ok(None);
    }
    let (head, rest) = next_term(trimmed)?;
    let (relation, rest) = next_term(rest)?;
    let (tail, rest) = next_term(rest)?;
    if rest.trim() != "." {
        return Err("expected terminating '.'".into());
    }
    Ok(Some(TripleRecord {
        head,
        relation,
        tail,
    }))
}

/// Reads N-Triples, compacting common IRIs (`rdf:`, `dbr:`, `dbo:`, ...).
pub fn parse_ntriples<R: BufRead>(
    reader: R,
    mode: OnMalformed,
) -> Result<ParsedTriples, IngestError> {
    parse_lines(reader, mode, parse_nt_line)
}
