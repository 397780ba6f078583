//! First retrieval stage: ask the model which sections matter, then pool
//! their paragraphs.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::condenser::{build_condensed_representation, CondensedDoc, Summarizer, SummaryCache};
use crate::discourse::{collapse_whitespace, flatten_preorder, Document, FlatSection, Paragraph};
use crate::error::Result;
use crate::gateway::{Gateway, GatewayError, UsageLedger, STAGE_SECTION_SELECT};
use crate::prompts::{section_prompt, SECTION_HEADER_PREFIX};

/// Output budget for the section-name reply.
pub const SECTION_REPLY_TOKENS: usize = 256;
/// How many times the summary budget is halved before giving up on a
/// condensed prompt that does not fit.
pub const MAX_BUDGET_HALVINGS: usize = 2;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionSelection {
    pub selected: Vec<FlatSection>,
    pub unmatched_names: Vec<String>,
}

pub fn render_section_prompt(condensed: &CondensedDoc, question: &str) -> String {
    section_prompt(&condensed.render(), question)
}

fn normalize_name(s: &str) -> String {
    collapse_whitespace(s).to_lowercase()
}

/// Strips list bullets, quotes and an echoed `* Section:` prefix.
fn clean_item(item: &str) -> &str {
    let mut s = item.trim();
    if let Some(rest) = s.strip_prefix(SECTION_HEADER_PREFIX.trim_end()) {
        s = rest.trim();
    }
    s = s.trim_start_matches(['-', '*', '•']).trim();
    s.trim_matches(['"', '\'', '`']).trim()
}

/// Resolves a reply to flattened sections.
///
/// Items are lines, or comma-separated parts of a line when the whole line
/// names no section. An item matches a section case-insensitively on its
/// full path or its own heading. Unknown names are reported, never guessed.
pub fn parse_section_response(reply: &str, sections: &[FlatSection]) -> SectionSelection {
    let paths: Vec<String> = sections.iter().map(|s| normalize_name(&s.path_name)).collect();
    let leaves: Vec<String> = sections.iter().map(|s| normalize_name(s.leaf_name())).collect();
    let lookup = |item: &str| -> Vec<usize> {
        let key = normalize_name(clean_item(item));
        if key.is_empty() {
            return Vec::new();
        }
        let by_path: Vec<usize> = (0..sections.len()).filter(|&i| paths[i] == key).collect();
        if !by_path.is_empty() {
            return by_path;
        }
        (0..sections.len()).filter(|&i| leaves[i] == key).collect()
    };

    let mut chosen = BTreeSet::new();
    let mut unmatched = Vec::new();
    for line in reply.lines() {
        if clean_item(line).is_empty() {
            continue;
        }
        let whole = lookup(line);
        if !whole.is_empty() {
            chosen.extend(whole);
            continue;
        }
        for item in line.split(',') {
            let cleaned = clean_item(item);
            if cleaned.is_empty() {
                continue;
            }
            let hits = lookup(item);
            if hits.is_empty() {
                unmatched.push(cleaned.to_string());
            } else {
                chosen.extend(hits);
            }
        }
    }
    SectionSelection {
        selected: chosen.into_iter().map(|i| sections[i].clone()).collect(),
        unmatched_names: unmatched,
    }
}

/// Condenses `doc`, asks for relevant sections and parses the reply.
///
/// When the condensed prompt does not fit the context window the summary
/// budget is halved and the document re-condensed, at most
/// [`MAX_BUDGET_HALVINGS`] times.
pub fn select_relevant_sections(
    doc: &Document,
    question: &str,
    gateway: &Gateway,
    summarizer: &dyn Summarizer,
    budget_per_section: usize,
    cache: Option<&SummaryCache>,
    ledger: &mut UsageLedger,
) -> Result<SectionSelection> {
    let sections = flatten_preorder(doc)?;
    let mut budget = budget_per_section;
    let mut halvings = 0;
    let prompt = loop {
        let condensed = build_condensed_representation(doc, summarizer, budget, gateway.tokenizer, cache, ledger)?;
        let prompt = render_section_prompt(&condensed, question);
        if gateway.fits(&prompt, SECTION_REPLY_TOKENS) {
            break prompt;
        }
        if halvings == MAX_BUDGET_HALVINGS || budget <= 1 {
            return Err(GatewayError::Overflow {
                prompt_tokens: gateway.count(&prompt),
                max_output_tokens: SECTION_REPLY_TOKENS,
                limit: gateway.context_limit(),
            }
            .into());
        }
        halvings += 1;
        budget = (budget / 2).max(1);
        tracing::debug!(doc = %doc.doc_id, budget, "condensed prompt overflows, shrinking summaries");
    };
    let req = gateway.request(prompt, SECTION_REPLY_TOKENS);
    let resp = gateway.complete(&req, ledger, STAGE_SECTION_SELECT)?;
    Ok(parse_section_response(&resp.text, &sections))
}

/// The candidate pool: paragraphs of the selected sections, deduplicated,
/// in document order.
pub fn gather_candidate_paragraphs(selection: &SectionSelection) -> Vec<Paragraph> {
    let mut seen = BTreeSet::new();
    let mut out: Vec<Paragraph> = selection
        .selected
        .iter()
        .flat_map(|s| s.paragraphs.iter())
        .filter(|p| seen.insert(p.id))
        .cloned()
        .collect();
    out.sort_by_key(|p| p.id);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::condenser::{CondensedEntry, ExtractiveSummarizer};
    use crate::discourse::OutlineNode;
    use crate::gateway::{ScriptRule, ScriptedBackend, Tokenizer};
    use std::sync::Arc;

    fn flat(names: &[&str]) -> Vec<FlatSection> {
        let mut next = 0;
        names
            .iter()
            .map(|n| {
                let p = Paragraph {
                    id: next,
                    text: format!("text {n}"),
                    section_path: vec![n.to_string()],
                };
                next += 1;
                FlatSection {
                    path_name: n.to_string(),
                    paragraphs: vec![p],
                }
            })
            .collect()
    }

    fn names(sel: &SectionSelection) -> Vec<&str> {
        sel.selected.iter().map(|s| s.path_name.as_str()).collect()
    }

    #[test]
    fn empty_reply_selects_nothing() {
        let sel = parse_section_response("", &flat(&["Intro"]));
        assert!(sel.selected.is_empty() && sel.unmatched_names.is_empty());
    }

    #[test]
    fn comma_separated_names() {
        let sel = parse_section_response("Methods, Results", &flat(&["Intro", "Methods", "Results"]));
        assert_eq!(names(&sel), vec!["Methods", "Results"]);
    }

    #[test]
    fn case_insensitive_path_and_leaf_match() {
        let sections = flat(&["Intro", "Methods > Setup", "Results"]);
        assert_eq!(
            names(&parse_section_response("methods > setup", &sections)),
            vec!["Methods > Setup"]
        );
        assert_eq!(
            names(&parse_section_response("SETUP", &sections)),
            vec!["Methods > Setup"]
        );
    }

    #[test]
    fn document_order_dedup_and_unmatched() {
        let sections = flat(&["Intro", "Methods", "Results"]);
        let sel = parse_section_response("Results\n- Intro, Results, Appendix Z\n\"Intro\"", &sections);
        assert_eq!(names(&sel), vec!["Intro", "Results"]);
        assert_eq!(sel.unmatched_names, vec!["Appendix Z"]);
    }

    #[test]
    fn names_containing_commas_match_whole_line() {
        let sections = flat(&["Results, Discussion", "Other"]);
        assert_eq!(
            names(&parse_section_response("Results, Discussion", &sections)),
            vec!["Results, Discussion"]
        );
    }

    #[test]
    fn prompt_golden_single_section() {
        let c = CondensedDoc::from_entries(
            vec![CondensedEntry {
                path_name: "Data".into(),
                summary: "We use SQuAD.".into(),
            }],
            Tokenizer::Default,
        );
        let want = "Document section structure:\n* Section: Data\nWe use SQuAD.\nQuestion:\nWhat dataset?\nList all section names that may be relevant for answering the question. Respond with comma-separated section name list. Provide an empty response if none of the sections are relevant.";
        assert_eq!(render_section_prompt(&c, "What dataset?"), want);

        let empty = CondensedDoc::from_entries(vec![], Tokenizer::Default);
        assert!(render_section_prompt(&empty, "q").starts_with("Document section structure:\n\nQuestion:\nq\n"));
    }

    #[test]
    fn prompt_tokens_are_additive() {
        let t = Tokenizer::Default;
        let c = CondensedDoc::from_entries(
            vec![CondensedEntry {
                path_name: "Data".into(),
                summary: "We use SQuAD.".into(),
            }],
            t,
        );
        let q = "What dataset is used?";
        let template = t.count(&crate::prompts::section_prompt("", ""));
        assert_eq!(
            t.count(&render_section_prompt(&c, q)),
            template + c.token_count + t.count(q)
        );
    }

    fn three_section_doc() -> Document {
        Document::from_outline(
            "d",
            "t",
            vec![
                OutlineNode::new("S1", vec!["a".into()]),
                OutlineNode::new("S2", vec!["b".into(), "c".into()]),
                OutlineNode::new("S3", vec!["d".into()]),
            ],
        )
    }

    #[test]
    fn scripted_selection_makes_one_call() {
        let b = Arc::new(ScriptedBackend::new(vec![ScriptRule::Default { reply: "S2".into() }]));
        let gw = Gateway::new(b.clone());
        let mut ledger = UsageLedger::new();
        let sel = select_relevant_sections(
            &three_section_doc(),
            "q",
            &gw,
            &ExtractiveSummarizer::default(),
            60,
            None,
            &mut ledger,
        )
        .unwrap();
        assert_eq!(names(&sel), vec!["S2"]);
        assert_eq!(ledger.stage(STAGE_SECTION_SELECT).api_calls, 1);
        assert_eq!(
            gather_candidate_paragraphs(&sel)
                .iter()
                .map(|p| p.id)
                .collect::<Vec<_>>(),
            vec![1, 2]
        );
    }

    #[test]
    fn overflow_shrinks_budget_then_errors() {
        let long = vec!["word ".repeat(200)];
        let d = Document::from_outline(
            "d",
            "t",
            vec![OutlineNode::new("A", long.clone()), OutlineNode::new("B", long)],
        );
        let template = Tokenizer::Default.count(&section_prompt("* Section: A\n* Section: B", "q"));

        // fits only once each summary is at most 50 tokens: 200 -> 100 -> 50
        let limit = template + 2 * 50 + SECTION_REPLY_TOKENS;
        let b =
            Arc::new(ScriptedBackend::new(vec![ScriptRule::Default { reply: "A".into() }]).with_context_limit(limit));
        let sel = select_relevant_sections(
            &d,
            "q",
            &Gateway::new(b),
            &ExtractiveSummarizer::default(),
            200,
            None,
            &mut UsageLedger::new(),
        )
        .unwrap();
        assert_eq!(names(&sel), vec!["A"]);

        let b = Arc::new(ScriptedBackend::new(vec![]).with_context_limit(limit - 1));
        let err = select_relevant_sections(
            &d,
            "q",
            &Gateway::new(b.clone()),
            &ExtractiveSummarizer::default(),
            200,
            None,
            &mut UsageLedger::new(),
        )
        .unwrap_err();
        assert!(
            matches!(err, crate::Error::Gateway(GatewayError::Overflow { .. })),
            "{err}"
        );
        assert_eq!(b.invocations(), 0);
    }

    #[test]
    fn candidate_pool_union() {
        assert!(gather_candidate_paragraphs(&SectionSelection::default()).is_empty());
        let sections = flat(&["A", "B", "C", "D", "E"]);
        let sel = SectionSelection {
            selected: vec![sections[1].clone(), sections[4].clone(), sections[1].clone()],
            unmatched_names: vec![],
        };
        let ids: Vec<u32> = gather_candidate_paragraphs(&sel).iter().map(|p| p.id).collect();
        assert_eq!(ids, vec![1, 4]);
    }
}
