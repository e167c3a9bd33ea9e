use std::io::{BufRead, Write};

use indexmap::{IndexMap, IndexSet};

use super::IngestError;

/// Rooted type tree. Levels count edges from the root (root = 0).
#[derive(Clone, Debug, PartialEq)]
pub struct TypeHierarchy {
    root: String,
    nodes: IndexSet<String>,
    parent: IndexMap<String, String>,
}

impl TypeHierarchy {
    pub fn new(root: impl Into<String>) -> Self {
        let root = root.into();
        let mut nodes = IndexSet::new();
        nodes.insert(root.clone());
        Self {
            root,
            nodes,
            parent: IndexMap::new(),
        }
    }

    /// Builds and validates a tree from `(child, parent)` edges.
    pub fn from_edges(root: &str, edges: &[(String, String)]) -> Result<Self, IngestError> {
        let mut h = Self::new(root);
        for (child, parent) in edges {
            if child == root {
                return Err(IngestError::Hierarchy(format!("root {root} has a parent")));
            }
            if let Some(old) = h.parent.get(child) {
                if old != parent {
                    return Err(IngestError::Hierarchy(format!("{child} has two parents")));
                }
            }
            h.nodes.insert(child.clone());
            h.nodes.insert(parent.clone());
            h.parent.insert(child.clone(), parent.clone());
        }
        for n in &h.nodes {
            h.level_of(n)?;
        }
        Ok(h)
    }

    /// Adds `child` under an existing `parent`.
    pub fn add(&mut self, child: impl Into<String>, parent: &str) -> Result<(), IngestError> {
        let child = child.into();
        if !self.nodes.contains(parent) {
            return Err(IngestError::UnknownType(parent.to_string()));
        }
        if self.nodes.contains(&child) {
            return Err(IngestError::Hierarchy(format!("{child} already present")));
        }
        self.nodes.insert(child.clone());
        self.parent.insert(child, parent.to_string());
        Ok(())
    }

    pub fn root(&self) -> &str {
        &self.root
    }

    pub fn contains(&self, t: &str) -> bool {
        self.nodes.contains(t)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &str> {
        self.nodes.iter().map(String::as_str)
    }

    pub fn parent(&self, t: &str) -> Option<&str> {
        self.parent.get(t).map(String::as_str)
    }

    pub fn children<'a>(&'a self, t: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.parent
            .iter()
            .filter(move |(_, p)| p.as_str() == t)
            .map(|(c, _)| c.as_str())
    }

    fn level_of(&self, t: &str) -> Result<usize, IngestError> {
        let mut cur = t;
        let mut level = 0;
        while cur != self.root {
            cur = self
                .parent
                .get(cur)
                .ok_or_else(|| IngestError::Hierarchy(format!("{t} does not reach the root")))?;
            level += 1;
            if level > self.nodes.len() {
                return Err(IngestError::Hierarchy(format!("cycle through {t}")));
            }
        }
        Ok(level)
    }

    pub fn type_level(&self, t: &str) -> Result<usize, IngestError> {
        if !self.nodes.contains(t) {
            return Err(IngestError::UnknownType(t.to_string()));
        }
        self.level_of(t)
    }

    /// The ancestor of `t` (or `t` itself) at `level`; `None` when `t` is
    /// shallower than `level`.
    pub fn ancestor_at(&self, t: &str, level: usize) -> Result<Option<&str>, IngestError> {
        let mut depth = self.type_level(t)?;
        if depth < level {
            return Ok(None);
        }
        let mut cur = self.nodes.get(t).expect("checked").as_str();
        while depth > level {
            cur = self.parent.get(cur).expect("validated").as_str();
            depth -= 1;
        }
        Ok(Some(cur))
    }

    /// Reads `child ␉ parent` lines; the root is the one parent that is
    /// never a child.
    pub fn read<R: BufRead>(reader: R) -> Result<Self, IngestError> {
        let mut edges = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (c, p) = line
                .split_once('\t')
                .ok_or_else(|| IngestError::Malformed {
                    line: i + 1,
                    message: "expected child<TAB>parent".into(),
                })?;
            edges.push((c.to_string(), p.to_string()));
        }
        let children: IndexSet<&str> = edges.iter().map(|(c, _)| c.as_str()).collect();
        let roots: IndexSet<&str> = edges
            .iter()
            .map(|(_, p)| p.as_str())
            .filter(|p| !children.contains(p))
            .collect();
        if roots.len() != 1 {
            return Err(IngestError::Hierarchy(format!(
                "expected one root, found {}",
                roots.len()
            )));
        }
        let root = roots[0].to_string();
        Self::from_edges(&root, &edges)
    }

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (c, p) in &self.parent {
            writeln!(w, "{c}\t{p}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> TypeHierarchy {
        let mut h = TypeHierarchy::new("owl:Thing");
        h.add("dbo:Agent", "owl:Thing").unwrap();
        h.add("dbo:Person", "dbo:Agent").unwrap();
        h.add("dbo:Place", "owl:Thing").unwrap();
        h
    }

    #[test]
    fn levels() {
        let h = fixture();
        assert_eq!(h.type_level("owl:Thing").unwrap(), 0);
        assert_eq!(h.type_level("dbo:Agent").unwrap(), 1);
        assert_eq!(h.type_level("dbo:Person").unwrap(), 2);
        assert!(matches!(
            h.type_level("dbo:Nope"),
            Err(IngestError::UnknownType(_))
        ));
        for n in h.nodes() {
            if let Some(p) = h.parent(n) {
                assert_eq!(h.type_level(n).unwrap(), h.type_level(p).unwrap() + 1);
            }
        }
    }

    #[test]
    fn ancestors() {
        let h = fixture();
        assert_eq!(h.ancestor_at("dbo:Person", 1).unwrap(), Some("dbo:Agent"));
        assert_eq!(h.ancestor_at("dbo:Place", 1).unwrap(), Some("dbo:Place"));
        assert_eq!(h.ancestor_at("owl:Thing", 1).unwrap(), None);
    }

    #[test]
    fn file_round_trip_and_cycles() {
        let h = fixture();
        let mut buf = Vec::new();
        h.write(&mut buf).unwrap();
        assert_eq!(TypeHierarchy::read(buf.as_slice()).unwrap(), h);
        let cyclic = vec![
            ("a".to_string(), "b".to_string()),
            ("b".to_string(), "a".to_string()),
        ];
        assert!(TypeHierarchy::from_edges("r", &cyclic).is_err());
    }
}
