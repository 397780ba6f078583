//! Browser bindings: condense a markdown document, pack its paragraphs into
//! calls, and rerank paragraphs against a question. Every export returns a
//! JSON string.

use ddrill::condenser::{build_condensed_representation, ExtractiveSummarizer};
use ddrill::discourse::Document;
use ddrill::fine_retrieval::{pack_into_calls, rerank_topk, LexicalScorer, ParagraphScorer};
use ddrill::gateway::{Tokenizer, UsageLedger};
use ddrill::ingest::parse_markdown_document;
use serde::Serialize;
use wasm_bindgen::prelude::*;

const DOC_ID: &str = "input";

#[derive(Serialize)]
struct Section {
    path_name: String,
    summary: String,
}

#[derive(Serialize)]
struct Condensed {
    sections: Vec<Section>,
    rendered: String,
    condensed_tokens: usize,
    full_tokens: usize,
}

#[derive(Serialize)]
struct Call {
    ids: Vec<u32>,
    token_count: usize,
    truncated: bool,
}

#[derive(Serialize)]
struct Ranked {
    id: u32,
    score: f64,
    section: String,
    text: String,
}

fn full_tokens(doc: &Document) -> usize {
    doc.paragraphs().iter().map(|p| Tokenizer::Default.count(&p.text)).sum()
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("serializable")
}

/// Section headers with extractive summaries of at most `budget` tokens each.
pub fn condense(markdown: &str, budget: usize) -> Result<String, String> {
    let doc = parse_markdown_document(markdown, DOC_ID);
    let summarizer = ExtractiveSummarizer {
        tokenizer: Tokenizer::Default,
    };
    let condensed = build_condensed_representation(
        &doc,
        &summarizer,
        budget,
        Tokenizer::Default,
        None,
        &mut UsageLedger::new(),
    )
    .map_err(|e| e.to_string())?;
    Ok(to_json(&Condensed {
        rendered: condensed.render(),
        condensed_tokens: condensed.token_count,
        full_tokens: full_tokens(&doc),
        sections: condensed
            .entries
            .into_iter()
            .map(|e| Section {
                path_name: e.path_name,
                summary: e.summary,
            })
            .collect(),
    }))
}

/// Paragraph ids grouped into calls of at most `budget` tokens, counting
/// `overhead` tokens of prompt per call.
pub fn pack(markdown: &str, budget: usize, overhead: usize) -> Result<String, String> {
    let doc = parse_markdown_document(markdown, DOC_ID);
    let paragraphs: Vec<_> = doc.paragraphs().into_iter().cloned().collect();
    let calls = pack_into_calls(&paragraphs, budget, overhead, Tokenizer::Default).map_err(|e| e.to_string())?;
    let calls: Vec<Call> = calls
        .iter()
        .map(|c| Call {
            ids: c.paragraphs.iter().map(|p| p.id).collect(),
            token_count: c.token_count,
            truncated: c.truncated,
        })
        .collect();
    Ok(to_json(&calls))
}

/// The `k` paragraphs with the highest lexical score for `question`.
pub fn rerank(markdown: &str, question: &str, k: usize) -> Result<String, String> {
    let doc = parse_markdown_document(markdown, DOC_ID);
    let paragraphs: Vec<_> = doc.paragraphs().into_iter().cloned().collect();
    let top = rerank_topk(question, &paragraphs, &LexicalScorer, k).map_err(|e| e.to_string())?;
    let scores = LexicalScorer.score(question, &paragraphs).map_err(|e| e.to_string())?;
    let mut ranked: Vec<Ranked> = paragraphs
        .iter()
        .zip(scores)
        .filter(|(p, _)| top.contains_local(p.id))
        .map(|(p, score)| Ranked {
            id: p.id,
            score,
            section: p.section_path.join(" ::: "),
            text: p.text.clone(),
        })
        .collect();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id)));
    Ok(to_json(&ranked))
}

#[wasm_bindgen]
pub fn condense_markdown(markdown: &str, budget: usize) -> Result<String, JsError> {
    condense(markdown, budget).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn pack_markdown(markdown: &str, budget: usize, overhead: usize) -> Result<String, JsError> {
    pack(markdown, budget, overhead).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn rerank_markdown(markdown: &str, question: &str, k: usize) -> Result<String, JsError> {
    rerank(markdown, question, k).map_err(|e| JsError::new(&e))
}
