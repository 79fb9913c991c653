use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

/// Lowercase, with every run of non-alphanumeric characters collapsed to a
/// single underscore: `"Dense Residential"` → `"dense_residential"`.
pub fn canonical_name(name: &str) -> String {
    let mut out = String::with_capacity(name.len());
    let mut pending_sep = false;
    for ch in name.chars() {
        if ch.is_alphanumeric() {
            if pending_sep && !out.is_empty() {
                out.push('_');
            }
            pending_sep = false;
            out.extend(ch.to_lowercase());
        } else {
            pending_sep = true;
        }
    }
    out
}

/// Key used for matching: the canonical name with separators removed, so
/// `dense_residential` and `denseresidential` compare equal.
pub fn match_key(name: &str) -> String {
    canonical_name(name).replace('_', "")
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassEntry {
    /// Name as written in the manifest; also the class directory name.
    pub name: String,
    pub canonical: String,
    pub aliases: Vec<String>,
    pub sample_count: Option<usize>,
}

impl ClassEntry {
    pub fn new(name: &str, aliases: Vec<String>, sample_count: Option<usize>) -> Self {
        ClassEntry {
            name: name.to_string(),
            canonical: canonical_name(name),
            aliases,
            sample_count,
        }
    }
}

/// Ordered list of classes with unique canonical names.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ClassCatalog {
    entries: Vec<ClassEntry>,
}

impl ClassCatalog {
    pub fn new(entries: Vec<ClassEntry>) -> Result<Self> {
        let mut seen = BTreeMap::new();
        for e in &entries {
            if e.canonical.is_empty() {
                return Err(Error::Validation(format!("class name `{}` has no alphanumeric characters", e.name)));
            }
            if let Some(prev) = seen.insert(match_key(&e.canonical), e.name.clone()) {
                return Err(Error::Validation(format!(
                    "duplicate class: `{}` and `{}` have the same canonical name",
                    prev, e.name
                )));
            }
        }
        Ok(ClassCatalog { entries })
    }

    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        ClassCatalog::new(names.iter().map(|n| ClassEntry::new(n.as_ref(), Vec::new(), None)).collect())
    }

    pub fn entries(&self) -> &[ClassEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.name.clone()).collect()
    }

    /// Resolved match keys of one class: its own name and its aliases,
    /// each passed through `aliases`.
    fn keys(entry: &ClassEntry, aliases: &AliasMap) -> BTreeSet<String> {
        std::iter::once(&entry.canonical)
            .chain(&entry.aliases)
            .map(|n| aliases.resolve(n))
            .collect()
    }
}

/// Synonym table mapping an alias to the class name it stands for.
///
/// File format: one `alias  target` pair per line separated by whitespace
/// (names may not contain spaces; use underscores), `#` starts a comment.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AliasMap {
    map: BTreeMap<String, String>,
}

impl AliasMap {
    pub fn new() -> Self {
        AliasMap::default()
    }

    pub fn insert(&mut self, alias: &str, target: &str) -> Result<()> {
        let (a, t) = (match_key(alias), match_key(target));
        if a == t {
            return Err(Error::Validation(format!("alias `{alias}` maps to itself")));
        }
        if let Some(existing) = self.map.get(&a) {
            if *existing != t {
                return Err(Error::Validation(format!(
                    "alias `{alias}` maps to both `{existing}` and `{t}`"
                )));
            }
            return Ok(());
        }
        if let Some((other, _)) = self.map.iter().find(|(_, target)| **target == t) {
            return Err(Error::Validation(format!(
                "aliases `{other}` and `{alias}` both map to `{t}`; the map must be one-to-one"
            )));
        }
        self.map.insert(a, t);
        Ok(())
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut map = AliasMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() != 2 {
                return Err(Error::Parse {
                    path: origin.to_path_buf(),
                    message: format!("line {}: expected two columns, found {}", lineno + 1, cols.len()),
                });
            }
            map.insert(cols[0], cols[1]).map_err(|e| Error::Parse {
                path: origin.to_path_buf(),
                message: format!("line {}: {e}", lineno + 1),
            })?;
        }
        Ok(map)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        AliasMap::parse(&text, path)
    }

    /// Match key of `name` after one alias lookup.
    pub fn resolve(&self, name: &str) -> String {
        let key = match_key(name);
        self.map.get(&key).cloned().unwrap_or(key)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimilarityReport {
    /// Downstream classes that also occur in the pre-training catalog.
    pub matched: Vec<String>,
    pub downstream_classes: usize,
    /// `matched / downstream_classes`, in `[0, 1]`.
    pub fraction: f64,
}

impl SimilarityReport {
    pub fn percent(&self) -> f64 {
        self.fraction * 100.0
    }
}

/// Fraction of downstream classes that also appear, after alias resolution,
/// in the pre-training catalog. The denominator is the downstream class count,
/// so the measure is not symmetric.
pub fn class_similarity(pretrain: &ClassCatalog, downstream: &ClassCatalog, aliases: &AliasMap) -> Result<SimilarityReport> {
    if downstream.is_empty() {
        return Err(Error::Empty("downstream class catalog is empty".into()));
    }
    if pretrain.is_empty() {
        return Err(Error::Empty("pre-training class catalog is empty".into()));
    }
    let source: BTreeSet<String> = pretrain
        .entries()
        .iter()
        .flat_map(|e| ClassCatalog::keys(e, aliases))
        .collect();
    let matched: Vec<String> = downstream
        .entries()
        .iter()
        .filter(|e| !ClassCatalog::keys(e, aliases).is_disjoint(&source))
        .map(|e| e.name.clone())
        .collect();
    Ok(SimilarityReport {
        fraction: matched.len() as f64 / downstream.len() as f64,
        downstream_classes: downstream.len(),
        matched,
    })
}
