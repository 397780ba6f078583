//! Section summaries and the condensed document rendering.

use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::discourse::{flatten_preorder, Document};
use crate::error::Result;
use crate::gateway::{Gateway, GatewayError, Tokenizer, UsageLedger, STAGE_SUMMARIZE};
use crate::prompts::{summarize_prompt, SECTION_HEADER_PREFIX};

/// Summary length used when none is configured.
pub const DEFAULT_SECTION_BUDGET: usize = 60;

pub trait Summarizer: Send + Sync {
    /// Identifies the summarizer in cache keys and reports.
    fn tag(&self) -> String;

    /// Summarizes the concatenated paragraphs within `budget_tokens`.
    fn summarize(
        &self,
        paragraphs: &[&str],
        budget_tokens: usize,
        ledger: &mut UsageLedger,
    ) -> Result<String, GatewayError>;
}

/// Leading-sentence extractive summarizer.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExtractiveSummarizer {
    pub tokenizer: Tokenizer,
}

impl Summarizer for ExtractiveSummarizer {
    fn tag(&self) -> String {
        "extractive".to_string()
    }

    fn summarize(
        &self,
        paragraphs: &[&str],
        budget_tokens: usize,
        _: &mut UsageLedger,
    ) -> Result<String, GatewayError> {
        Ok(summarize_extractive(paragraphs, budget_tokens, self.tokenizer))
    }
}

fn sentence_ends(text: &str) -> Vec<usize> {
    let mut ends = Vec::new();
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?') {
            let end = i + c.len_utf8();
            match chars.peek() {
                Some((_, next)) if next.is_whitespace() => ends.push(end),
                None => ends.push(end),
                _ => {}
            }
        }
    }
    if ends.last() != Some(&text.len()) {
        ends.push(text.len());
    }
    ends
}

/// Leading sentences of the joined text, added greedily while the total
/// stays within `budget_tokens`. A first sentence that alone overflows is
/// cut at the budget.
pub fn summarize_extractive(paragraphs: &[&str], budget_tokens: usize, tokenizer: Tokenizer) -> String {
    let text = paragraphs
        .iter()
        .map(|p| p.trim())
        .filter(|p| !p.is_empty())
        .collect::<Vec<_>>()
        .join(" ");
    if tokenizer.count(&text) <= budget_tokens {
        return text;
    }
    let mut best = None;
    for end in sentence_ends(&text) {
        if tokenizer.count(&text[..end]) <= budget_tokens {
            best = Some(end);
        } else {
            break;
        }
    }
    match best {
        Some(end) => text[..end].trim_end().to_string(),
        None => tokenizer.truncate(&text, budget_tokens).trim_end().to_string(),
    }
}

/// Summarizer backed by a chat model.
#[derive(Clone)]
pub struct LlmSummarizer {
    pub gateway: Gateway,
}

impl Summarizer for LlmSummarizer {
    fn tag(&self) -> String {
        format!("llm:{}", self.gateway.model_tag)
    }

    fn summarize(
        &self,
        paragraphs: &[&str],
        budget_tokens: usize,
        ledger: &mut UsageLedger,
    ) -> Result<String, GatewayError> {
        summarize_llm(&self.gateway, paragraphs, budget_tokens, ledger)
    }
}

/// One completion asking for a summary within budget; overlong replies are
/// truncated. Empty input makes no call.
pub fn summarize_llm(
    gateway: &Gateway,
    paragraphs: &[&str],
    budget_tokens: usize,
    ledger: &mut UsageLedger,
) -> Result<String, GatewayError> {
    let text = paragraphs
        .iter()
        .map(|p| p.trim())
        .filter(|p| !p.is_empty())
        .collect::<Vec<_>>()
        .join("\n");
    if text.is_empty() {
        return Ok(String::new());
    }
    let req = gateway.request(summarize_prompt(&text, budget_tokens), budget_tokens.max(1));
    let resp = gateway.complete(&req, ledger, STAGE_SUMMARIZE)?;
    let reply = resp.text.trim();
    Ok(gateway.tokenizer.truncate(reply, budget_tokens).trim_end().to_string())
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
struct SummaryKey {
    doc_id: String,
    path: String,
    tag: String,
    budget: usize,
}

#[derive(Serialize, Deserialize)]
struct SummaryLine {
    doc_id: String,
    path: String,
    tag: String,
    budget: usize,
    summary: String,
}

/// Summaries keyed by `(doc_id, section path, summarizer tag, budget)`,
/// optionally persisted as JSON lines.
#[derive(Default)]
pub struct SummaryCache {
    entries: Mutex<HashMap<SummaryKey, String>>,
    file: Mutex<Option<File>>,
}

impl SummaryCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn open(path: &Path) -> std::io::Result<Self> {
        let mut entries = HashMap::new();
        if path.exists() {
            for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<SummaryLine>(&line) {
                    Ok(l) => {
                        entries.insert(
                            SummaryKey {
                                doc_id: l.doc_id,
                                path: l.path,
                                tag: l.tag,
                                budget: l.budget,
                            },
                            l.summary,
                        );
                    }
                    Err(e) => tracing::warn!(line = i + 1, error = %e, "skipping corrupt summary cache line"),
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(SummaryCache {
            entries: Mutex::new(entries),
            file: Mutex::new(Some(file)),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Returns the cached summary or computes and stores it.
    pub fn get_or_compute(
        &self,
        doc_id: &str,
        path: &str,
        tag: &str,
        budget: usize,
        compute: impl FnOnce() -> Result<String, GatewayError>,
    ) -> Result<String, GatewayError> {
        let key = SummaryKey {
            doc_id: doc_id.to_string(),
            path: path.to_string(),
            tag: tag.to_string(),
            budget,
        };
        if let Some(hit) = self.entries.lock().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        let summary = compute()?;
        let mut entries = self.entries.lock().unwrap();
        let slot = match entries.entry(key) {
            Entry::Occupied(e) => return Ok(e.get().clone()),
            Entry::Vacant(e) => e,
        };
        if let Some(f) = self.file.lock().unwrap().as_mut() {
            let key = slot.key();
            let line = serde_json::to_string(&SummaryLine {
                doc_id: key.doc_id.clone(),
                path: key.path.clone(),
                tag: key.tag.clone(),
                budget,
                summary: summary.clone(),
            })
            .expect("summary line serializes");
            if let Err(e) = writeln!(f, "{line}") {
                tracing::warn!(error = %e, "failed to persist summary");
            }
        }
        slot.insert(summary.clone());
        Ok(summary)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CondensedEntry {
    pub path_name: String,
    pub summary: String,
}

/// Section headers with their summaries, in flattened order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CondensedDoc {
    pub entries: Vec<CondensedEntry>,
    pub token_count: usize,
}

impl CondensedDoc {
    pub fn from_entries(entries: Vec<CondensedEntry>, tokenizer: Tokenizer) -> Self {
        let mut doc = CondensedDoc {
            entries,
            token_count: 0,
        };
        doc.token_count = tokenizer.count(&doc.render());
        doc
    }

    /// `* Section: {path}` then the summary line, per section. A section
    /// with an empty summary contributes only its header line.
    pub fn render(&self) -> String {
        let mut lines = Vec::with_capacity(self.entries.len() * 2);
        for e in &self.entries {
            lines.push(format!("{SECTION_HEADER_PREFIX}{}", e.path_name));
            if !e.summary.is_empty() {
                lines.push(e.summary.clone());
            }
        }
        lines.join("\n")
    }
}

/// Summarizes every flattened section and renders the condensed view.
pub fn build_condensed_representation(
    doc: &Document,
    summarizer: &dyn Summarizer,
    budget_per_section: usize,
    tokenizer: Tokenizer,
    cache: Option<&SummaryCache>,
    ledger: &mut UsageLedger,
) -> Result<CondensedDoc> {
    let tag = summarizer.tag();
    let mut entries = Vec::new();
    for section in flatten_preorder(doc)? {
        let texts: Vec<&str> = section.paragraphs.iter().map(|p| p.text.as_str()).collect();
        let mut compute = || summarizer.summarize(&texts, budget_per_section, ledger);
        let summary = match cache {
            Some(c) => c.get_or_compute(&doc.doc_id, &section.path_name, &tag, budget_per_section, compute)?,
            None => compute()?,
        };
        entries.push(CondensedEntry {
            path_name: section.path_name,
            summary,
        });
    }
    Ok(CondensedDoc::from_entries(entries, tokenizer))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discourse::OutlineNode;
    use crate::gateway::{ScriptRule, ScriptedBackend};
    use std::sync::Arc;

    fn sentence(word: &str) -> String {
        // nine words and a period: 10 tokens
        format!("{}.", [word; 9].join(" "))
    }

    #[test]
    fn extractive_within_budget_is_verbatim() {
        let t = Tokenizer::Default;
        assert_eq!(summarize_extractive(&["Short text here."], 10, t), "Short text here.");
        assert_eq!(summarize_extractive(&[], 10, t), "");
    }

    #[test]
    fn extractive_greedy_sentences() {
        let text: Vec<String> = ["a", "b", "c", "d", "e"].iter().map(|w| sentence(w)).collect();
        let joined = text.join(" ");
        let got = summarize_extractive(&[joined.as_str()], 25, Tokenizer::Default);
        assert_eq!(got, format!("{} {}", text[0], text[1]));
    }

    #[test]
    fn extractive_truncates_oversized_first_sentence() {
        let got = summarize_extractive(&["one two three four five six."], 3, Tokenizer::Default);
        assert_eq!(got, "one two three");
    }

    #[test]
    fn extractive_is_idempotent() {
        let text: Vec<String> = ["a", "b", "c"].iter().map(|w| sentence(w)).collect();
        let joined = text.join(" ");
        let once = summarize_extractive(&[joined.as_str()], 25, Tokenizer::Default);
        let twice = summarize_extractive(&[once.as_str()], 25, Tokenizer::Default);
        assert_eq!(once, twice);
    }

    fn gateway(reply: &str) -> (Arc<ScriptedBackend>, Gateway) {
        let b = Arc::new(ScriptedBackend::new(vec![ScriptRule::Default { reply: reply.into() }]));
        (b.clone(), Gateway::new(b))
    }

    #[test]
    fn llm_summarizer_counts_and_truncates() {
        let (_, gw) = gateway("S.");
        let mut ledger = UsageLedger::new();
        assert_eq!(summarize_llm(&gw, &["Some text."], 5, &mut ledger).unwrap(), "S.");
        assert_eq!(ledger.stage(STAGE_SUMMARIZE).api_calls, 1);

        let (_, gw) = gateway("one two three four five six");
        assert_eq!(summarize_llm(&gw, &["x"], 3, &mut ledger).unwrap(), "one two three");
    }

    fn doc(k: usize) -> Document {
        let roots = (0..k)
            .map(|i| OutlineNode::new(format!("S{i}"), vec![format!("Body of section {i}.")]))
            .collect();
        Document::from_outline("d", "t", roots)
    }

    #[test]
    fn llm_condensing_makes_one_call_per_section() {
        let (b, gw) = gateway("sum");
        let mut ledger = UsageLedger::new();
        let s = LlmSummarizer { gateway: gw };
        let c = build_condensed_representation(&doc(4), &s, 10, Tokenizer::Default, None, &mut ledger).unwrap();
        assert_eq!(c.entries.len(), 4);
        assert_eq!(b.invocations(), 4);
        assert_eq!(ledger.stage(STAGE_SUMMARIZE).api_calls, 4);
    }

    #[test]
    fn rendering_layout() {
        let c = CondensedDoc::from_entries(
            vec![
                CondensedEntry {
                    path_name: "A".into(),
                    summary: "sA".into(),
                },
                CondensedEntry {
                    path_name: "B".into(),
                    summary: "sB".into(),
                },
            ],
            Tokenizer::Default,
        );
        assert_eq!(c.render(), "* Section: A\nsA\n* Section: B\nsB");
        assert_eq!(c.token_count, Tokenizer::Default.count(&c.render()));

        let empty = CondensedDoc::from_entries(vec![], Tokenizer::Default);
        assert_eq!((empty.render().as_str(), empty.token_count), ("", 0));
    }

    #[test]
    fn empty_sections_keep_their_header() {
        let d = Document::from_outline(
            "d",
            "t",
            vec![OutlineNode::new("Parent", vec![]).with_children(vec![OutlineNode::new("Kid", vec!["Text.".into()])])],
        );
        let c = build_condensed_representation(
            &d,
            &ExtractiveSummarizer::default(),
            60,
            Tokenizer::Default,
            None,
            &mut UsageLedger::new(),
        )
        .unwrap();
        assert_eq!(c.render(), "* Section: Parent\n* Section: Parent > Kid\nText.");
    }

    #[test]
    fn condensed_is_smaller_than_full_text() {
        // 10 sections of 50 tokens each, 15-token summaries
        let roots = (0..10)
            .map(|i| {
                let sentences: Vec<String> = (0..5).map(|j| sentence(&format!("w{i}x{j}"))).collect();
                OutlineNode::new(format!("S{i}"), vec![sentences.join(" ")])
            })
            .collect();
        let d = Document::from_outline("d", "t", roots);
        let full: usize = d.paragraphs().iter().map(|p| Tokenizer::Default.count(&p.text)).sum();
        assert_eq!(full, 500);
        let c = build_condensed_representation(
            &d,
            &ExtractiveSummarizer::default(),
            15,
            Tokenizer::Default,
            None,
            &mut UsageLedger::new(),
        )
        .unwrap();
        assert!(c.token_count < full, "{} vs {full}", c.token_count);
    }

    #[test]
    fn summary_cache_computes_once() {
        let cache = SummaryCache::in_memory();
        let (b, gw) = gateway("sum");
        let s = LlmSummarizer { gateway: gw };
        let mut ledger = UsageLedger::new();
        for _ in 0..2 {
            build_condensed_representation(&doc(3), &s, 10, Tokenizer::Default, Some(&cache), &mut ledger).unwrap();
        }
        assert_eq!(b.invocations(), 3);
        assert_eq!(cache.len(), 3);
    }

    #[test]
    fn summary_cache_persists() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("summaries.jsonl");
        {
            let cache = SummaryCache::open(&path).unwrap();
            cache.get_or_compute("d", "A", "t", 5, || Ok("x".into())).unwrap();
        }
        let cache = SummaryCache::open(&path).unwrap();
        let got = cache.get_or_compute("d", "A", "t", 5, || panic!("should hit")).unwrap();
        assert_eq!(got, "x");
    }
}
