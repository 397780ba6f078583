//! Comparison systems that skip the section stage: per-paragraph boolean
//! prompting, fixed-size chunks, chunk-then-reduce, and whole-document
//! reranking.

use crate::discourse::{Document, Paragraph};
use crate::error::{Error, Result};
use crate::evidence::{EvidenceId, EvidenceSet};
use crate::fine_retrieval::{
    base_call, pack_into_calls, rerank_topk, restrict, retrieve_base_in_stage, ParagraphScorer, RetrievalDeps,
};
use crate::gateway::{Gateway, UsageLedger, STAGE_CHUNK, STAGE_MRO_REDUCE, STAGE_PARAGRAPH};
use crate::prompts::boolean_prompt;

pub const DEFAULT_CHUNK_SIZE: usize = 3500;
/// The boolean reply only needs a word or two.
pub const BOOLEAN_REPLY_TOKENS: usize = 8;

fn owned_paragraphs(doc: &Document) -> Vec<Paragraph> {
    doc.paragraphs().into_iter().cloned().collect()
}

/// A reply counts as relevant when it starts with "yes", any case.
pub fn is_affirmative(reply: &str) -> bool {
    reply
        .trim_start()
        .get(..3)
        .is_some_and(|head| head.eq_ignore_ascii_case("yes"))
}

/// One boolean relevance call per paragraph.
pub fn retrieve_paragraph_boolean(
    question: &str,
    doc: &Document,
    gateway: &Gateway,
    ledger: &mut UsageLedger,
) -> Result<EvidenceSet> {
    let mut out = EvidenceSet::new();
    for p in doc.paragraphs() {
        let req = gateway.request(boolean_prompt(&p.text, question), BOOLEAN_REPLY_TOKENS);
        let resp = gateway
            .complete(&req, ledger, STAGE_PARAGRAPH)
            .map_err(|source| Error::AtCall {
                stage: STAGE_PARAGRAPH.to_string(),
                index: p.id as usize,
                source,
            })?;
        if is_affirmative(&resp.text) {
            out.insert(EvidenceId::local(p.id));
        }
    }
    Ok(out)
}

/// Whole-paragraph chunks of at most `chunk_size` annotated tokens, with
/// the identifier prompt applied to each.
pub fn retrieve_chunk(
    question: &str,
    doc: &Document,
    deps: &RetrievalDeps,
    ledger: &mut UsageLedger,
    chunk_size: usize,
) -> Result<EvidenceSet> {
    if chunk_size == 0 {
        return Err(Error::Config("chunk size must be at least 1".into()));
    }
    let paragraphs = owned_paragraphs(doc);
    let chunks = pack_into_calls(&paragraphs, chunk_size, 0, deps.gateway.tokenizer)
        .map_err(|e| Error::Config(e.to_string()))?;
    let mut out = EvidenceSet::new();
    for (index, chunk) in chunks.iter().enumerate() {
        let parsed = base_call(
            question,
            chunk,
            &deps.gateway,
            deps.settings.reply_tokens,
            ledger,
            STAGE_CHUNK,
        )
        .map_err(|source| Error::AtCall {
            stage: STAGE_CHUNK.to_string(),
            index,
            source,
        })?;
        out.extend(parsed.evidence);
    }
    Ok(out)
}

/// Number of chunks [`retrieve_chunk`] would send.
pub fn chunk_count(doc: &Document, chunk_size: usize, deps: &RetrievalDeps) -> Result<usize> {
    let paragraphs = owned_paragraphs(doc);
    pack_into_calls(&paragraphs, chunk_size, 0, deps.gateway.tokenizer)
        .map(|c| c.len())
        .map_err(|e| Error::Config(e.to_string()))
}

/// Chunk retrieval, then the identifier prompt again over the survivors.
/// The result is always a subset of the chunk result.
pub fn retrieve_map_reduce_optimized(
    question: &str,
    doc: &Document,
    deps: &RetrievalDeps,
    ledger: &mut UsageLedger,
    chunk_size: usize,
) -> Result<EvidenceSet> {
    let phase1 = retrieve_chunk(question, doc, deps, ledger, chunk_size)?;
    if phase1.is_empty() {
        return Ok(phase1);
    }
    let survivors = restrict(&owned_paragraphs(doc), &phase1);
    retrieve_base_in_stage(question, &survivors, deps, ledger, STAGE_MRO_REDUCE)
}

/// Reranks every paragraph of the document and keeps the top `k`.
pub fn rerank_full_document(
    question: &str,
    doc: &Document,
    scorer: &dyn ParagraphScorer,
    k: usize,
) -> Result<EvidenceSet> {
    rerank_topk(question, &owned_paragraphs(doc), scorer, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::condenser::ExtractiveSummarizer;
    use crate::discourse::OutlineNode;
    use crate::fine_retrieval::LexicalScorer;
    use crate::gateway::{ScriptRule, ScriptedBackend};
    use crate::prompts::BOOLEAN_INSTRUCTION;
    use std::sync::Arc;

    fn doc(paras: &[&str]) -> Document {
        let paras = paras.iter().map(|s| s.to_string()).collect();
        Document::from_outline("d", "t", vec![OutlineNode::new("S", paras)])
    }

    fn contains(all: &[&str], reply: &str) -> ScriptRule {
        ScriptRule::Contains {
            all: all.iter().map(|s| s.to_string()).collect(),
            none: vec![],
            reply: reply.into(),
        }
    }

    fn default(reply: &str) -> ScriptRule {
        ScriptRule::Default { reply: reply.into() }
    }

    fn deps(rules: Vec<ScriptRule>) -> (Arc<ScriptedBackend>, RetrievalDeps) {
        let b = Arc::new(ScriptedBackend::new(rules));
        let d = RetrievalDeps::new(
            Gateway::new(b.clone()),
            Arc::new(ExtractiveSummarizer::default()),
            Arc::new(LexicalScorer),
        );
        (b, d)
    }

    #[test]
    fn boolean_prompt_is_frozen() {
        assert_eq!(
            boolean_prompt("Some text.", "Why?"),
            "Paragraph:\nSome text.\nQuestion:\nWhy?\nIs this paragraph relevant for answering the question? Answer Yes or No."
        );
        assert!(boolean_prompt("", "").ends_with(BOOLEAN_INSTRUCTION));
    }

    #[test]
    fn affirmative_prefix_rule() {
        assert!(is_affirmative("Yes, because it says so"));
        assert!(is_affirmative("  yes"));
        assert!(is_affirmative("YES."));
        assert!(!is_affirmative("No"));
        assert!(!is_affirmative("ye"));
        assert!(!is_affirmative("Maybe yes"));
    }

    #[test]
    fn paragraph_boolean_one_call_each() {
        let d = doc(&["alpha", "beta", "gamma", "delta"]);
        let (b, deps) = deps(vec![contains(&["gamma"], "Yes, because..."), default("No")]);
        let mut ledger = UsageLedger::new();
        let got = retrieve_paragraph_boolean("q?", &d, &deps.gateway, &mut ledger).unwrap();
        assert_eq!(got, EvidenceSet::from_local([2]));
        assert_eq!(ledger.stage(STAGE_PARAGRAPH).api_calls, 4);
        assert_eq!(b.invocations(), 4);

        let (_, deps) = super::tests::deps(vec![default("No")]);
        let got = retrieve_paragraph_boolean("q?", &d, &deps.gateway, &mut UsageLedger::new()).unwrap();
        assert!(got.is_empty());
    }

    fn words(n: usize, tag: &str) -> String {
        vec![tag; n].join(" ")
    }

    #[test]
    fn chunk_call_counts() {
        // each annotated paragraph: "[", id, "]" plus 997 words = 1000 tokens
        let paras: Vec<String> = (0..7).map(|i| words(997, &format!("w{i}"))).collect();
        let d = doc(&paras.iter().map(String::as_str).collect::<Vec<_>>());
        let (_, deps) = deps(vec![default("")]);
        assert_eq!(chunk_count(&d, 3500, &deps).unwrap(), 3);
        assert_eq!(chunk_count(&d, 7000, &deps).unwrap(), 1);
        let mut ledger = UsageLedger::new();
        retrieve_chunk("q?", &d, &deps, &mut ledger, 3500).unwrap();
        assert_eq!(ledger.stage(STAGE_CHUNK).api_calls, 3);
        assert!(retrieve_chunk("q?", &d, &deps, &mut ledger, 0).is_err());
    }

    #[test]
    fn chunk_of_whole_document_is_one_call() {
        let d = doc(&["a b c", "d e f"]);
        let (b, deps) = deps(vec![default("1")]);
        let got = retrieve_chunk("q?", &d, &deps, &mut UsageLedger::new(), DEFAULT_CHUNK_SIZE).unwrap();
        assert_eq!(got, EvidenceSet::from_local([1]));
        assert_eq!(b.invocations(), 1);
    }

    #[test]
    fn map_reduce_narrows_the_chunk_result() {
        let paras: Vec<String> = (0..10).map(|i| format!("para{i} text")).collect();
        let d = doc(&paras.iter().map(String::as_str).collect::<Vec<_>>());
        // phase 1 sees all paragraphs; phase 2 only sees 0, 3 and 8
        let rules = vec![contains(&["[1] para1"], "0, 3, 8"), default("3,8")];
        let (_, deps) = deps(rules);
        let mut ledger = UsageLedger::new();
        let chunk = retrieve_chunk("q?", &d, &deps, &mut UsageLedger::new(), DEFAULT_CHUNK_SIZE).unwrap();
        let mro = retrieve_map_reduce_optimized("q?", &d, &deps, &mut ledger, DEFAULT_CHUNK_SIZE).unwrap();
        assert_eq!(chunk, EvidenceSet::from_local([0, 3, 8]));
        assert_eq!(mro, EvidenceSet::from_local([3, 8]));
        assert!(mro.is_subset(&chunk));
        assert_eq!(ledger.stage(STAGE_CHUNK).api_calls, 1);
        assert_eq!(ledger.stage(STAGE_MRO_REDUCE).api_calls, 1);
    }

    #[test]
    fn map_reduce_skips_phase_two_when_empty() {
        let d = doc(&["a", "b"]);
        let (b, deps) = deps(vec![default("")]);
        let mut ledger = UsageLedger::new();
        let got = retrieve_map_reduce_optimized("q?", &d, &deps, &mut ledger, 100).unwrap();
        assert!(got.is_empty());
        assert_eq!(b.invocations(), 1);
        assert_eq!(ledger.stage(STAGE_MRO_REDUCE).api_calls, 0);
    }

    #[test]
    fn full_document_rerank() {
        let d = doc(&["the model", "zebrafish embryos were imaged", "results", "more results"]);
        let top = rerank_full_document("how were zebrafish imaged?", &d, &LexicalScorer, 1).unwrap();
        assert_eq!(top, EvidenceSet::from_local([1]));
        let all = rerank_full_document("x", &d, &LexicalScorer, 4).unwrap();
        assert_eq!(all, EvidenceSet::from_local([0, 1, 2, 3]));
        assert_eq!(
            top,
            rerank_full_document("how were zebrafish imaged?", &d, &LexicalScorer, 1).unwrap()
        );
        assert!(rerank_full_document("x", &d, &LexicalScorer, 0).is_err());
    }
}
