//! Offline backend driven by a rule script.
//!
//! Scripts are JSON-lines files, one rule per line, evaluated in order; the
//! first rule that produces a reply wins and an unmatched prompt gets an
//! empty reply:
//!
//! ```text
//! {"type":"exact","prompt_hash":"<sha256 hex>","reply":"Methods"}
//! {"type":"contains","all":["Follow up: Who"],"none":["Intermediate answer: 1998"],"reply":"..."}
//! {"type":"keyword_oracle","keywords":["zebrafish"],"answer":"42"}
//! {"type":"default","reply":""}
//! ```
//!
//! `keyword_oracle` understands the pipeline's own prompts and answers them
//! from document content only: it names sections whose summary mentions a
//! keyword, lists paragraph ids whose text does, and so on. It never looks
//! at the question, so it is blind to section names and question wording.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Backend, BackendError, ChatRequest, ChatResponse, Tokenizer, DEFAULT_CONTEXT_LIMIT};
use crate::prompts::*;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ScriptRule {
    Exact {
        prompt_hash: String,
        reply: String,
    },
    Contains {
        all: Vec<String>,
        #[serde(default)]
        none: Vec<String>,
        reply: String,
    },
    KeywordOracle {
        keywords: Vec<String>,
        #[serde(default)]
        answer: Option<String>,
    },
    Default {
        reply: String,
    },
}

/// SHA-256 hex digest identifying a request's prompt text.
pub fn prompt_hash(req: &ChatRequest) -> String {
    let mut h = Sha256::new();
    if let Some(system) = &req.system {
        h.update(system.as_bytes());
        h.update([0u8]);
    }
    h.update(req.user.as_bytes());
    hex::encode(h.finalize())
}

pub struct ScriptedBackend {
    rules: Vec<ScriptRule>,
    tokenizer: Tokenizer,
    context_limit: usize,
    invocations: AtomicUsize,
}

impl ScriptedBackend {
    pub fn new(rules: Vec<ScriptRule>) -> Self {
        ScriptedBackend {
            rules,
            tokenizer: Tokenizer::Default,
            context_limit: DEFAULT_CONTEXT_LIMIT,
            invocations: AtomicUsize::new(0),
        }
    }

    pub fn with_context_limit(mut self, limit: usize) -> Self {
        self.context_limit = limit;
        self
    }

    pub fn with_tokenizer(mut self, tokenizer: Tokenizer) -> Self {
        self.tokenizer = tokenizer;
        self
    }

    pub fn parse_jsonl(text: &str) -> Result<Self, String> {
        let mut rules = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let rule = serde_json::from_str(line).map_err(|e| format!("script line {}: {e}", i + 1))?;
            rules.push(rule);
        }
        Ok(Self::new(rules))
    }

    pub fn from_jsonl_file(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse_jsonl(&text)
    }

    /// Number of `complete` calls served so far.
    pub fn invocations(&self) -> usize {
        self.invocations.load(Ordering::SeqCst)
    }

    fn reply_for(&self, req: &ChatRequest) -> String {
        for rule in &self.rules {
            let reply = match rule {
                ScriptRule::Exact { prompt_hash: h, reply } => (*h == prompt_hash(req)).then(|| reply.clone()),
                ScriptRule::Contains { all, none, reply } => (all.iter().all(|s| req.user.contains(s.as_str()))
                    && !none.iter().any(|s| req.user.contains(s.as_str())))
                .then(|| reply.clone()),
                ScriptRule::KeywordOracle { keywords, answer } => {
                    keyword_oracle(&req.user, keywords, answer.as_deref())
                }
                ScriptRule::Default { reply } => Some(reply.clone()),
            };
            if let Some(r) = reply {
                return r;
            }
        }
        String::new()
    }
}

impl Backend for ScriptedBackend {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        self.invocations.fetch_add(1, Ordering::SeqCst);
        let text = self.reply_for(req);
        Ok(ChatResponse {
            prompt_tokens: req.prompt_tokens(self.tokenizer) as u64,
            completion_tokens: self.tokenizer.count(&text) as u64,
            text,
        })
    }

    fn context_limit(&self) -> usize {
        self.context_limit
    }
}

fn mentions(text: &str, keywords: &[String]) -> bool {
    let lower = text.to_lowercase();
    keywords.iter().any(|k| lower.contains(&k.to_lowercase()))
}

/// The document part of a prompt: everything before the final question block.
fn document_part<'a>(prompt: &'a str, head: &str) -> Option<&'a str> {
    let body = prompt.strip_prefix(head)?;
    let end = body.rfind(&format!("\n{QUESTION_HEAD}\n"))?;
    Some(&body[..end])
}

fn keyword_oracle(prompt: &str, keywords: &[String], answer: Option<&str>) -> Option<String> {
    if prompt.ends_with(SECTION_INSTRUCTION) {
        let structure = document_part(prompt, &format!("{SECTION_STRUCTURE_HEAD}\n"))?;
        let mut names = Vec::new();
        for entry in split_entries(structure, |l| l.starts_with(SECTION_HEADER_PREFIX)) {
            let (head, body) = entry.split_once('\n').unwrap_or((entry.as_str(), ""));
            if mentions(body, keywords) {
                names.push(head[SECTION_HEADER_PREFIX.len()..].trim().to_string());
            }
        }
        return Some(names.join(", "));
    }
    if prompt.ends_with(BASE_INSTRUCTION) {
        let annotated = document_part(prompt, "")?;
        let mut ids = Vec::new();
        for entry in split_entries(annotated, |l| annotated_id(l).is_some()) {
            if let Some((id, text)) = annotated_id(&entry) {
                if mentions(text, keywords) {
                    ids.push(id.to_string());
                }
            }
        }
        return Some(ids.join(", "));
    }
    if prompt.ends_with(BOOLEAN_INSTRUCTION) {
        let paragraph = document_part(prompt, &format!("{PARAGRAPH_HEAD}\n"))?;
        return Some(if mentions(paragraph, keywords) { "Yes" } else { "No" }.to_string());
    }
    if prompt.ends_with(ANSWER_INSTRUCTION) {
        let evidence = document_part(prompt, &format!("{EVIDENCE_HEAD}\n"))?;
        if !mentions(evidence, keywords) {
            return Some("Unanswerable".to_string());
        }
        return Some(match answer {
            Some(a) => a.to_string(),
            None => evidence
                .lines()
                .find(|l| mentions(l, keywords))
                .unwrap_or_default()
                .to_string(),
        });
    }
    if prompt.starts_with(SUMMARIZE_HEAD) && prompt.ends_with(SUMMARY_TAIL) {
        let text = prompt.split_once("\nText:\n")?.1;
        return Some(text[..text.len() - SUMMARY_TAIL.len()].trim().to_string());
    }
    None
}

fn annotated_id(line: &str) -> Option<(u32, &str)> {
    let rest = line.strip_prefix('[')?;
    let (id, text) = rest.split_once(']')?;
    Some((id.parse().ok()?, text))
}

/// Groups lines into entries that each start at a line satisfying `is_head`.
fn split_entries(text: &str, is_head: impl Fn(&str) -> bool) -> Vec<String> {
    let mut entries: Vec<String> = Vec::new();
    for line in text.lines() {
        if is_head(line) || entries.is_empty() {
            entries.push(line.to_string());
        } else if let Some(last) = entries.last_mut() {
            last.push('\n');
            last.push_str(line);
        }
    }
    entries
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(user: &str) -> ChatRequest {
        ChatRequest::new("scripted", user, 16)
    }

    #[test]
    fn exact_rule_by_prompt_hash() {
        let r = req("Which section?");
        let b = ScriptedBackend::new(vec![ScriptRule::Exact {
            prompt_hash: prompt_hash(&r),
            reply: "Methods".into(),
        }]);
        assert_eq!(b.complete(&r).unwrap().text, "Methods");
        assert_eq!(b.complete(&req("other")).unwrap().text, "");
        assert_eq!(b.invocations(), 2);
    }

    #[test]
    fn rules_are_ordered() {
        let b = ScriptedBackend::parse_jsonl(
            r#"{"type":"contains","all":["b"],"none":["c"],"reply":"1"}
               {"type":"contains","all":["a"],"reply":"2"}
               {"type":"default","reply":"3"}"#,
        )
        .unwrap();
        assert_eq!(b.complete(&req("ab")).unwrap().text, "1");
        assert_eq!(b.complete(&req("abc")).unwrap().text, "2");
        assert_eq!(b.complete(&req("z")).unwrap().text, "3");
    }

    #[test]
    fn token_counts_follow_tokenizer() {
        let b = ScriptedBackend::new(vec![ScriptRule::Default {
            reply: "two words".into(),
        }]);
        let resp = b.complete(&req("one two three")).unwrap();
        assert_eq!((resp.prompt_tokens, resp.completion_tokens), (3, 2));
    }

    #[test]
    fn oracle_reads_only_document_content() {
        let kw = vec!["zebra".to_string()];
        let p = section_prompt(
            "* Section: Zebra facts\nNothing here.\n* Section: B\nA zebra runs.",
            "zebra?",
        );
        assert_eq!(keyword_oracle(&p, &kw, None).unwrap(), "B");

        let p = base_prompt("[3] the zebra\n[5] a horse\n[9] Zebra again", "zebra?");
        assert_eq!(keyword_oracle(&p, &kw, None).unwrap(), "3, 9");

        let p = boolean_prompt("no stripes", "zebra?");
        assert_eq!(keyword_oracle(&p, &kw, None).unwrap(), "No");

        let p = answer_prompt("a zebra has stripes", "what?");
        assert_eq!(keyword_oracle(&p, &kw, Some("stripes")).unwrap(), "stripes");
        let p = answer_prompt("", "zebra?");
        assert_eq!(keyword_oracle(&p, &kw, Some("stripes")).unwrap(), "Unanswerable");

        assert_eq!(keyword_oracle("hello", &kw, None), None);
    }
}
