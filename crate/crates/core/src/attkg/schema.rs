use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use crate::error::{Error, Result};

/// A named set of mutually exclusive attributes, e.g. age classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeGroup {
    pub name: String,
    pub members: Vec<usize>,
}

/// Ordered attribute names plus optional exclusive groups.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeSchema {
    names: Vec<String>,
    groups: Vec<AttributeGroup>,
}

impl AttributeSchema {
    pub fn new(names: Vec<String>) -> Result<Self> {
        Self::with_groups(names, Vec::new())
    }

    pub fn with_groups(names: Vec<String>, groups: Vec<AttributeGroup>) -> Result<Self> {
        if names.len() < 2 {
            return Err(Error::Schema(format!(
                "need at least 2 attributes, got {}",
                names.len()
            )));
        }
        let mut seen = HashSet::new();
        for n in &names {
            if n.is_empty() {
                return Err(Error::Schema("empty attribute name".into()));
            }
            if !seen.insert(n.as_str()) {
                return Err(Error::Schema(format!("duplicate attribute name {n:?}")));
            }
        }
        let mut covered = HashSet::new();
        for g in &groups {
            for &i in &g.members {
                if i >= names.len() {
                    return Err(Error::Schema(format!(
                        "group {:?} references index {i} beyond {} attributes",
                        g.name,
                        names.len()
                    )));
                }
                if !covered.insert(i) {
                    return Err(Error::Schema(format!(
                        "attribute {:?} belongs to more than one group",
                        names[i]
                    )));
                }
            }
        }
        Ok(Self { names, groups })
    }

    /// Generic `attr0..attr{c-1}` schema without groups.
    pub fn numbered(c: usize) -> Result<Self> {
        Self::new((0..c).map(|i| format!("attr{i}")).collect())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn groups(&self) -> &[AttributeGroup] {
        &self.groups
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Group index of each attribute, `None` for ungrouped ones.
    pub fn group_of(&self) -> Vec<Option<usize>> {
        let mut out = vec![None; self.names.len()];
        for (gi, g) in self.groups.iter().enumerate() {
            for &i in &g.members {
                out[i] = Some(gi);
            }
        }
        out
    }

    /// Parses the `name[:group]` line format. Blank lines and `#` comments
    /// are skipped. Groups are ordered by first appearance.
    pub fn parse(text: &str) -> Result<Self> {
        let mut names = Vec::new();
        let mut group_order: Vec<String> = Vec::new();
        let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (name, group) = match line.split_once(':') {
                Some((n, g)) => (n.trim(), Some(g.trim())),
                None => (line, None),
            };
            if name.is_empty() {
                return Err(Error::Schema(format!("line {}: empty name", lineno + 1)));
            }
            if let Some(g) = group {
                if g.is_empty() {
                    return Err(Error::Schema(format!(
                        "line {}: empty group after ':'",
                        lineno + 1
                    )));
                }
                let gi = match group_order.iter().position(|x| x == g) {
                    Some(gi) => gi,
                    None => {
                        group_order.push(g.to_string());
                        group_order.len() - 1
                    }
                };
                members.entry(gi).or_default().push(names.len());
            }
            names.push(name.to_string());
        }
        let groups = group_order
            .into_iter()
            .enumerate()
            .map(|(gi, name)| AttributeGroup {
                name,
                members: members.remove(&gi).unwrap_or_default(),
            })
            .collect();
        Self::with_groups(names, groups)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let group_of = self.group_of();
        let mut out = String::new();
        for (i, n) in self.names.iter().enumerate() {
            out.push_str(n);
            if let Some(g) = group_of[i] {
                out.push(':');
                out.push_str(&self.groups[g].name);
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_groups_in_order() {
        let s = AttributeSchema::parse(
            "# pedestrian\nyoung:age\nteen:age\nbackpack\n\nup_black:upcolor\nadult:age\n",
        )
        .unwrap();
        assert_eq!(s.len(), 5);
        assert_eq!(s.groups().len(), 2);
        assert_eq!(s.groups()[0].name, "age");
        assert_eq!(s.groups()[0].members, vec![0, 1, 4]);
        assert_eq!(s.groups()[1].members, vec![3]);
        assert_eq!(s.group_of()[2], None);
        assert_eq!(AttributeSchema::parse(&s.to_text()).unwrap(), s);
    }

    #[test]
    fn rejects_duplicates_and_tiny_schemas() {
        assert!(AttributeSchema::parse("a\nb\na\n").is_err());
        assert!(AttributeSchema::parse("only\n").is_err());
        assert!(AttributeSchema::parse("a:\nb\n").is_err());
    }
}
