//! Reading stage: answer a question from retrieved evidence paragraphs.

pub mod selfask;

use serde::{Deserialize, Serialize};

use crate::discourse::{collapse_whitespace, Paragraph};
use crate::error::{Error, Result};
use crate::gateway::{Gateway, UsageLedger, STAGE_ANSWER};
use crate::prompts::answer_prompt;

pub use selfask::{
    selfask_run, selfask_step, Retrieved, SelfAskState, SelfAskStep, SelfAskTrace, SubQuestionRetriever, Termination,
    DEFAULT_MAX_HOPS,
};

pub const ANSWER_REPLY_TOKENS: usize = 128;
pub const UNANSWERABLE: &str = "Unanswerable";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerKind {
    Extractive,
    Abstractive,
    Yes,
    No,
    Unanswerable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    pub text: String,
    pub kind: AnswerKind,
    /// Set when evidence had to be cut to fit the context window.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub evidence_truncated: bool,
}

impl Answer {
    pub fn unanswerable() -> Self {
        Answer {
            text: UNANSWERABLE.to_string(),
            kind: AnswerKind::Unanswerable,
            evidence_truncated: false,
        }
    }
}

fn bare(reply: &str) -> String {
    reply.trim().trim_end_matches(['.', '!']).trim().to_lowercase()
}

/// Classifies a reply by its surface form. Yes/no/unanswerable replies are
/// canonicalized; otherwise the reply is extractive when it occurs verbatim
/// (ignoring case and spacing) in the evidence.
pub fn classify_answer(reply: &str, evidence_text: &str) -> Answer {
    let head = bare(reply);
    let canonical = |text: &str, kind| Answer {
        text: text.to_string(),
        kind,
        evidence_truncated: false,
    };
    match head.as_str() {
        "" | "unanswerable" => return Answer::unanswerable(),
        "yes" => return canonical("Yes", AnswerKind::Yes),
        "no" => return canonical("No", AnswerKind::No),
        _ => {}
    }
    let text = reply.trim().to_string();
    let needle = collapse_whitespace(&text).to_lowercase();
    let haystack = collapse_whitespace(evidence_text).to_lowercase();
    let kind = if haystack.contains(&needle) {
        AnswerKind::Extractive
    } else {
        AnswerKind::Abstractive
    };
    Answer {
        text,
        kind,
        evidence_truncated: false,
    }
}

pub fn evidence_text(paragraphs: &[Paragraph]) -> String {
    paragraphs
        .iter()
        .map(|p| p.text.as_str())
        .collect::<Vec<_>>()
        .join("\n")
}

/// Fits evidence into the context window, dropping paragraphs from the end
/// and cutting the first one if it alone is too long.
fn fit_evidence(question: &str, paragraphs: &[Paragraph], gateway: &Gateway) -> (String, bool) {
    let room = gateway
        .context_limit()
        .saturating_sub(ANSWER_REPLY_TOKENS + gateway.count(&answer_prompt("", question)));
    let mut kept: Vec<&str> = Vec::new();
    let mut used = 0;
    for p in paragraphs {
        let n = gateway.count(&p.text);
        if used + n > room {
            if kept.is_empty() {
                kept.push(gateway.tokenizer.truncate(&p.text, room));
            }
            return (kept.join("\n"), true);
        }
        used += n;
        kept.push(&p.text);
    }
    (kept.join("\n"), false)
}

/// One completion over the evidence followed by the question.
pub fn answer_question(
    question: &str,
    evidence: &[Paragraph],
    gateway: &Gateway,
    ledger: &mut UsageLedger,
) -> Result<Answer> {
    let (text, truncated) = fit_evidence(question, evidence, gateway);
    if truncated {
        tracing::warn!(question, "evidence truncated to fit the context window");
    }
    let req = gateway.request(answer_prompt(&text, question), ANSWER_REPLY_TOKENS);
    let resp = gateway
        .complete(&req, ledger, STAGE_ANSWER)
        .map_err(|source| Error::AtCall {
            stage: STAGE_ANSWER.to_string(),
            index: 0,
            source,
        })?;
    let mut answer = classify_answer(&resp.text, &text);
    answer.evidence_truncated = truncated;
    Ok(answer)
}

fn is_article(t: &str) -> bool {
    matches!(t, "a" | "an" | "the")
}

/// Lowercases, strips ASCII punctuation and articles, and splits on
/// whitespace.
pub fn normalize_answer(text: &str) -> Vec<String> {
    let lowered = text.to_lowercase();
    let stripped: String = lowered.chars().filter(|c| !c.is_ascii_punctuation()).collect();
    stripped
        .split_whitespace()
        .filter(|t| !is_article(t))
        .map(str::to_string)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{ScriptRule, ScriptedBackend};
    use proptest::prelude::*;
    use std::sync::Arc;

    fn p(id: u32, text: &str) -> Paragraph {
        Paragraph {
            id,
            text: text.into(),
            section_path: vec![],
        }
    }

    fn gateway(reply: &str, limit: usize) -> (Arc<ScriptedBackend>, Gateway) {
        let b =
            Arc::new(ScriptedBackend::new(vec![ScriptRule::Default { reply: reply.into() }]).with_context_limit(limit));
        (b.clone(), Gateway::new(b))
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_answer("The Cat."), vec!["cat"]);
        assert!(normalize_answer("").is_empty());
        assert_eq!(normalize_answer("an apple, a pear"), vec!["apple", "pear"]);
    }

    #[test]
    fn classification() {
        assert_eq!(classify_answer("Yes", "").kind, AnswerKind::Yes);
        assert_eq!(classify_answer("no.", "").text, "No");
        assert_eq!(classify_answer("Unanswerable", "x"), Answer::unanswerable());
        assert_eq!(classify_answer("  ", "x"), Answer::unanswerable());
        let a = classify_answer("CNN/Daily-Mail", "We train on the CNN/Daily-Mail corpus.");
        assert_eq!((a.kind, a.text.as_str()), (AnswerKind::Extractive, "CNN/Daily-Mail"));
        assert_eq!(
            classify_answer("a news corpus", "We train on CNN.").kind,
            AnswerKind::Abstractive
        );
    }

    #[test]
    fn answer_with_scripted_backend() {
        let (_, g) = gateway("Yes", 4096);
        let mut ledger = UsageLedger::new();
        let a = answer_question("Is it?", &[p(0, "It is.")], &g, &mut ledger).unwrap();
        assert_eq!(a.kind, AnswerKind::Yes);
        assert_eq!(ledger.stage(STAGE_ANSWER).api_calls, 1);

        let (_, g) = gateway("Unanswerable", 4096);
        let a = answer_question("Why?", &[], &g, &mut UsageLedger::new()).unwrap();
        assert_eq!(a, Answer::unanswerable());
    }

    #[test]
    fn oversized_evidence_is_cut_from_the_end() {
        let (_, g) = gateway("x", 400);
        let long = vec!["w"; 200].join(" ");
        let paras = vec![p(0, &long), p(1, &long)];
        let a = answer_question("q?", &paras, &g, &mut UsageLedger::new()).unwrap();
        assert!(a.evidence_truncated);
        let (text, cut) = fit_evidence("q?", &paras, &g);
        assert!(cut);
        assert_eq!(text, long);

        let (text, cut) = fit_evidence("q?", &[p(0, &vec!["w"; 500].join(" "))], &g);
        assert!(cut && g.count(&text) < 300);
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(s in "[A-Za-z .,'!-]{0,40}") {
            let once = normalize_answer(&s);
            prop_assert_eq!(normalize_answer(&once.join(" ")), once);
        }

        #[test]
        fn classification_is_total_and_canonical(reply in ".{0,30}", ev in ".{0,30}") {
            let a = classify_answer(&reply, &ev);
            prop_assert_eq!(a.kind == AnswerKind::Unanswerable, a.text == UNANSWERABLE);
            prop_assert_eq!(classify_answer(&reply, &ev), a);
        }
    }
}
