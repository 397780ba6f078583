//! Hierarchical discourse trees and their flattened section list.
//!
//! A [`Document`] is a forest of [`SectionNode`]s. Each node owns the
//! paragraphs that sit directly under its heading; paragraphs of
//! sub-sections belong to the children. Reading order is pre-order with a
//! node's own paragraphs preceding those of its children.

use std::collections::{BTreeMap, HashSet};

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Separator placed between ancestor names in a flattened section path.
pub const PATH_SEPARATOR: &str = " > ";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DocumentError {
    #[error("section path must contain at least one name")]
    EmptyPath,
    #[error("section path component {0} is empty")]
    EmptyPathComponent(usize),
    #[error("structural error: {0}")]
    Structure(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Paragraph {
    /// 0-based reading-order index within the document.
    pub id: u32,
    pub text: String,
    /// Ancestor section names, root first.
    pub section_path: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionNode {
    pub name: String,
    pub children: Vec<SectionNode>,
    /// Paragraphs directly under this heading, excluding descendants'.
    pub paragraphs: Vec<Paragraph>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    pub roots: Vec<SectionNode>,
}

/// One entry of the pre-order flattened document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlatSection {
    pub path_name: String,
    pub paragraphs: Vec<Paragraph>,
}

impl FlatSection {
    /// The last component of the path, i.e. the section's own heading.
    pub fn leaf_name(&self) -> &str {
        self.path_name.rsplit(PATH_SEPARATOR).next().unwrap_or(&self.path_name)
    }
}

/// Joins ancestor names into a single path name.
pub fn section_path_name<S: AsRef<str>>(node_path: &[S]) -> Result<String, DocumentError> {
    if node_path.is_empty() {
        return Err(DocumentError::EmptyPath);
    }
    let mut parts = Vec::with_capacity(node_path.len());
    for (i, name) in node_path.iter().enumerate() {
        let collapsed = collapse_whitespace(name.as_ref());
        if collapsed.is_empty() {
            return Err(DocumentError::EmptyPathComponent(i));
        }
        parts.push(collapsed);
    }
    Ok(parts.join(PATH_SEPARATOR))
}

pub(crate) fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Flattens the discourse tree in pre-order.
///
/// Sections that own no paragraphs are kept so their names still reach the
/// model; they simply contribute nothing to a candidate pool.
pub fn flatten_preorder(doc: &Document) -> Result<Vec<FlatSection>, DocumentError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    let mut path = Vec::new();
    for root in &doc.roots {
        flatten_node(root, &mut path, &mut seen, &mut out)?;
    }
    Ok(out)
}

fn flatten_node(
    node: &SectionNode,
    path: &mut Vec<String>,
    seen: &mut HashSet<u32>,
    out: &mut Vec<FlatSection>,
) -> Result<(), DocumentError> {
    path.push(node.name.clone());
    let path_name = section_path_name(path)
        .map_err(|e| DocumentError::Structure(format!("invalid section name under {:?}: {e}", path)))?;
    for p in &node.paragraphs {
        if !seen.insert(p.id) {
            return Err(DocumentError::Structure(format!(
                "paragraph {} owned by more than one section",
                p.id
            )));
        }
    }
    out.push(FlatSection {
        path_name,
        paragraphs: node.paragraphs.clone(),
    });
    for child in &node.children {
        flatten_node(child, path, seen, out)?;
    }
    path.pop();
    Ok(())
}

impl Document {
    /// Builds a document from nested `(name, paragraph texts, children)`
    /// outlines, assigning paragraph ids in reading order.
    pub fn from_outline(doc_id: &str, title: &str, roots: Vec<OutlineNode>) -> Self {
        let mut next_id = 0u32;
        let mut path = Vec::new();
        let roots = roots
            .into_iter()
            .map(|n| n.into_section(&mut path, &mut next_id))
            .collect();
        Document {
            doc_id: doc_id.to_string(),
            title: title.to_string(),
            roots,
        }
    }

    /// All paragraphs in reading order.
    pub fn paragraphs(&self) -> Vec<&Paragraph> {
        fn walk<'a>(node: &'a SectionNode, out: &mut Vec<&'a Paragraph>) {
            out.extend(node.paragraphs.iter());
            for c in &node.children {
                walk(c, out);
            }
        }
        let mut out = Vec::new();
        for r in &self.roots {
            walk(r, &mut out);
        }
        out
    }

    pub fn paragraph_count(&self) -> usize {
        self.paragraphs().len()
    }

    pub fn paragraph(&self, id: u32) -> Option<&Paragraph> {
        self.paragraphs().into_iter().find(|p| p.id == id)
    }

    /// Parses the canonical JSON layout
    /// `{doc_id, title, sections: [{name, paragraphs: [string], children}]}`.
    pub fn from_canonical_json(bytes: &[u8]) -> Result<Self, serde_json::Error> {
        let raw: CanonicalDocument = serde_json::from_slice(bytes)?;
        Ok(raw.into_document())
    }

    pub fn to_canonical(&self) -> CanonicalDocument {
        fn node(n: &SectionNode) -> CanonicalSection {
            CanonicalSection {
                name: n.name.clone(),
                paragraphs: n.paragraphs.iter().map(|p| p.text.clone()).collect(),
                children: n.children.iter().map(node).collect(),
            }
        }
        CanonicalDocument {
            doc_id: self.doc_id.clone(),
            title: self.title.clone(),
            sections: self.roots.iter().map(node).collect(),
        }
    }

    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_canonical()).expect("canonical document serializes")
    }
}

/// Builder input for [`Document::from_outline`].
#[derive(Debug, Clone)]
pub struct OutlineNode {
    pub name: String,
    pub paragraphs: Vec<String>,
    pub children: Vec<OutlineNode>,
}

impl OutlineNode {
    pub fn new(name: impl Into<String>, paragraphs: Vec<String>) -> Self {
        OutlineNode {
            name: name.into(),
            paragraphs,
            children: Vec::new(),
        }
    }

    pub fn with_children(mut self, children: Vec<OutlineNode>) -> Self {
        self.children = children;
        self
    }

    fn into_section(self, path: &mut Vec<String>, next_id: &mut u32) -> SectionNode {
        path.push(self.name.clone());
        let paragraphs = self
            .paragraphs
            .into_iter()
            .map(|text| {
                let p = Paragraph {
                    id: *next_id,
                    text,
                    section_path: path.clone(),
                };
                *next_id += 1;
                p
            })
            .collect();
        let children = self
            .children
            .into_iter()
            .map(|c| c.into_section(path, next_id))
            .collect();
        path.pop();
        SectionNode {
            name: self.name,
            children,
            paragraphs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonicalDocument {
    pub doc_id: String,
    #[serde(default)]
    pub title: String,
    pub sections: Vec<CanonicalSection>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonicalSection {
    pub name: String,
    #[serde(default)]
    pub paragraphs: Vec<String>,
    #[serde(default)]
    pub children: Vec<CanonicalSection>,
}

impl CanonicalSection {
    fn into_outline(self) -> OutlineNode {
        OutlineNode {
            name: self.name,
            paragraphs: self.paragraphs,
            children: self.children.into_iter().map(|c| c.into_outline()).collect(),
        }
    }
}

impl CanonicalDocument {
    pub fn into_document(self) -> Document {
        let roots = self.sections.into_iter().map(|s| s.into_outline()).collect();
        Document::from_outline(&self.doc_id, &self.title, roots)
    }
}

/// Checks every document invariant and reports violations as data.
pub fn validate_document(doc: &Document) -> Vec<String> {
    let mut violations = Vec::new();
    let mut seen = BTreeMap::new();
    let mut order = Vec::new();

    fn walk(
        node: &SectionNode,
        path: &mut Vec<String>,
        seen: &mut BTreeMap<u32, usize>,
        order: &mut Vec<u32>,
        violations: &mut Vec<String>,
    ) {
        path.push(node.name.clone());
        if node.name.trim().is_empty() {
            violations.push(format!("empty section name at {:?}", path));
        }
        for p in &node.paragraphs {
            *seen.entry(p.id).or_insert(0) += 1;
            order.push(p.id);
            if p.text.trim().is_empty() {
                violations.push(format!("empty paragraph text {}", p.id));
            }
            if &p.section_path != path {
                violations.push(format!(
                    "paragraph {} section path {:?} does not match owner {:?}",
                    p.id, p.section_path, path
                ));
            }
        }
        for c in &node.children {
            walk(c, path, seen, order, violations);
        }
        path.pop();
    }

    let mut path = Vec::new();
    for r in &doc.roots {
        walk(r, &mut path, &mut seen, &mut order, &mut violations);
    }
    for (id, count) in &seen {
        if *count > 1 {
            violations.push(format!("duplicate id {id}"));
        }
    }
    let contiguous = seen.keys().copied().eq(0..seen.len() as u32);
    if !contiguous {
        violations.push("non-contiguous ids".to_string());
    } else if order.windows(2).any(|w| w[0] > w[1]) {
        violations.push("ids out of reading order".to_string());
    }
    violations
}

/// Replaces every section name with a seeded 128-bit hex identifier.
///
/// Tree shape, paragraph ids and paragraph texts are unchanged; the same
/// seed always yields the same names.
pub fn anonymize_section_names(doc: &Document, seed: u64) -> Document {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut path = Vec::new();
    let roots = doc
        .roots
        .iter()
        .map(|r| anonymize_node(r, &mut rng, &mut path))
        .collect();
    Document {
        doc_id: doc.doc_id.clone(),
        title: doc.title.clone(),
        roots,
    }
}

fn anonymize_node(node: &SectionNode, rng: &mut ChaCha8Rng, path: &mut Vec<String>) -> SectionNode {
    let hi = rng.next_u64() as u128;
    let lo = rng.next_u64() as u128;
    let name = format!("{:032x}", (hi << 64) | lo);
    path.push(name.clone());
    let paragraphs = node
        .paragraphs
        .iter()
        .map(|p| Paragraph {
            id: p.id,
            text: p.text.clone(),
            section_path: path.clone(),
        })
        .collect();
    let children = node.children.iter().map(|c| anonymize_node(c, rng, path)).collect();
    path.pop();
    SectionNode {
        name,
        children,
        paragraphs,
    }
}
