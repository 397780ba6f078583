//! Paragraph identifiers and evidence sets.
//!
//! Single-document ids print as the bare paragraph index (`"3"`); ids drawn
//! from a document pair are namespaced by document (`"docA:3"`).

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EvidenceId {
    pub doc: Option<String>,
    pub paragraph: u32,
}

impl EvidenceId {
    pub fn local(paragraph: u32) -> Self {
        EvidenceId { doc: None, paragraph }
    }

    pub fn namespaced(doc: &str, paragraph: u32) -> Self {
        EvidenceId {
            doc: Some(doc.to_string()),
            paragraph,
        }
    }
}

impl fmt::Display for EvidenceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.doc {
            Some(doc) => write!(f, "{doc}:{}", self.paragraph),
            None => write!(f, "{}", self.paragraph),
        }
    }
}

impl FromStr for EvidenceId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (doc, pid) = match s.rsplit_once(':') {
            Some((doc, pid)) => (Some(doc.to_string()), pid),
            None => (None, s),
        };
        let paragraph = pid.trim().parse().map_err(|_| format!("invalid evidence id {s:?}"))?;
        Ok(EvidenceId { doc, paragraph })
    }
}

impl Serialize for EvidenceId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for EvidenceId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EvidenceSet {
    pub ids: BTreeSet<EvidenceId>,
}

impl EvidenceSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_local<I: IntoIterator<Item = u32>>(ids: I) -> Self {
        EvidenceSet {
            ids: ids.into_iter().map(EvidenceId::local).collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn contains_local(&self, paragraph: u32) -> bool {
        self.ids.contains(&EvidenceId::local(paragraph))
    }

    pub fn insert(&mut self, id: EvidenceId) -> bool {
        self.ids.insert(id)
    }

    pub fn extend(&mut self, other: EvidenceSet) {
        self.ids.extend(other.ids);
    }

    pub fn is_subset(&self, other: &EvidenceSet) -> bool {
        self.ids.is_subset(&other.ids)
    }

    pub fn intersection_len(&self, other: &EvidenceSet) -> usize {
        self.ids.intersection(&other.ids).count()
    }

    /// Paragraph indices of the un-namespaced ids, ascending.
    pub fn local_ids(&self) -> Vec<u32> {
        self.ids
            .iter()
            .filter(|id| id.doc.is_none())
            .map(|id| id.paragraph)
            .collect()
    }

    /// Re-labels local ids as belonging to `doc`.
    pub fn namespaced(&self, doc: &str) -> EvidenceSet {
        EvidenceSet {
            ids: self
                .ids
                .iter()
                .map(|id| EvidenceId::namespaced(id.doc.as_deref().unwrap_or(doc), id.paragraph))
                .collect(),
        }
    }
}

impl FromIterator<EvidenceId> for EvidenceSet {
    fn from_iter<T: IntoIterator<Item = EvidenceId>>(iter: T) -> Self {
        EvidenceSet {
            ids: iter.into_iter().collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_print_and_parse() {
        assert_eq!(EvidenceId::local(3).to_string(), "3");
        assert_eq!(EvidenceId::namespaced("Bonn", 4).to_string(), "Bonn:4");
        assert_eq!(
            "Bonn:4".parse::<EvidenceId>().unwrap(),
            EvidenceId::namespaced("Bonn", 4)
        );
        assert_eq!("7".parse::<EvidenceId>().unwrap(), EvidenceId::local(7));
        assert!("x".parse::<EvidenceId>().is_err());
    }

    #[test]
    fn serializes_as_string_list() {
        let mut set = EvidenceSet::from_local([2, 0]);
        set.insert(EvidenceId::namespaced("a", 1));
        let json = serde_json::to_string(&set).unwrap();
        assert_eq!(json, r#"["0","2","a:1"]"#);
        let back: EvidenceSet = serde_json::from_str(&json).unwrap();
        assert_eq!(back, set);
    }
}
