use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::discourse::Paragraph;
use crate::gateway::Tokenizer;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("call budget {budget} must exceed prompt overhead {overhead}")]
pub struct PackingError {
    pub budget: usize,
    pub overhead: usize,
}

/// Paragraphs sent together in one model call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackedCall {
    pub paragraphs: Vec<Paragraph>,
    /// Identifier-annotated rendering of `paragraphs`.
    pub rendered: String,
    /// Tokens of `rendered` plus the prompt overhead.
    pub token_count: usize,
    /// Set when a single paragraph exceeded the budget and was cut.
    pub truncated: bool,
}

pub fn annotate_paragraph(p: &Paragraph) -> String {
    format!("[{}] {}", p.id, p.text)
}

/// `[id] text` per paragraph, newline separated, keeping document ids.
pub fn annotate_with_ids(paragraphs: &[Paragraph]) -> String {
    paragraphs.iter().map(annotate_paragraph).collect::<Vec<_>>().join("\n")
}

/// Greedy first-fit packing of whole paragraphs in document order.
///
/// A call closes when the next annotated paragraph would push it past
/// `call_budget_tokens - overhead_tokens`. A paragraph that exceeds that
/// room on its own gets a call to itself with its text cut to fit.
pub fn pack_into_calls(
    paragraphs: &[Paragraph],
    call_budget_tokens: usize,
    overhead_tokens: usize,
    tokenizer: Tokenizer,
) -> Result<Vec<PackedCall>, PackingError> {
    if call_budget_tokens <= overhead_tokens {
        return Err(PackingError {
            budget: call_budget_tokens,
            overhead: overhead_tokens,
        });
    }
    let room = call_budget_tokens - overhead_tokens;
    let mut calls = Vec::new();
    let mut current: Vec<Paragraph> = Vec::new();
    let mut used = 0;

    let close = |current: &mut Vec<Paragraph>, used: usize, calls: &mut Vec<PackedCall>| {
        if !current.is_empty() {
            let paragraphs = std::mem::take(current);
            calls.push(PackedCall {
                rendered: annotate_with_ids(&paragraphs),
                paragraphs,
                token_count: used + overhead_tokens,
                truncated: false,
            });
        }
    };

    for p in paragraphs {
        let cost = tokenizer.count(&annotate_paragraph(p));
        if cost > room {
            close(&mut current, used, &mut calls);
            used = 0;
            let prefix_cost = tokenizer.count(&format!("[{}]", p.id));
            let keep = room.saturating_sub(prefix_cost);
            let cut = Paragraph {
                text: tokenizer.truncate(&p.text, keep).to_string(),
                ..p.clone()
            };
            let rendered = annotate_paragraph(&cut);
            calls.push(PackedCall {
                token_count: tokenizer.count(&rendered) + overhead_tokens,
                rendered,
                paragraphs: vec![cut],
                truncated: true,
            });
            continue;
        }
        if used + cost > room {
            close(&mut current, used, &mut calls);
            used = 0;
        }
        current.push(p.clone());
        used += cost;
    }
    close(&mut current, used, &mut calls);
    Ok(calls)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Paragraph whose annotated form costs exactly `tokens` (>= 4).
    pub(crate) fn para(id: u32, tokens: usize) -> Paragraph {
        // "[", id, "]" are three tokens for ids < 10^k without separators
        let words = vec!["w"; tokens - 3].join(" ");
        Paragraph {
            id,
            text: words,
            section_path: vec!["S".into()],
        }
    }

    fn ids(calls: &[PackedCall]) -> Vec<Vec<u32>> {
        calls
            .iter()
            .map(|c| c.paragraphs.iter().map(|p| p.id).collect())
            .collect()
    }

    #[test]
    fn annotation() {
        let p0 = Paragraph {
            id: 0,
            text: "alpha".into(),
            section_path: vec![],
        };
        let p3 = Paragraph {
            id: 3,
            text: "beta".into(),
            section_path: vec![],
        };
        assert_eq!(annotate_with_ids(std::slice::from_ref(&p0)), "[0] alpha");
        assert_eq!(annotate_with_ids(&[p0, p3]), "[0] alpha\n[3] beta");
        assert_eq!(annotate_with_ids(&[]), "");
    }

    #[test]
    fn greedy_example() {
        let ps = vec![para(0, 40), para(1, 40), para(2, 40)];
        let calls = pack_into_calls(&ps, 100, 10, Tokenizer::Default).unwrap();
        assert_eq!(ids(&calls), vec![vec![0, 1], vec![2]]);
        assert_eq!(calls[0].token_count, 90);
        assert_eq!(calls[1].token_count, 50);
    }

    #[test]
    fn everything_fits_in_one_call() {
        let ps = vec![para(0, 10), para(1, 10)];
        assert_eq!(pack_into_calls(&ps, 100, 10, Tokenizer::Default).unwrap().len(), 1);
        assert!(pack_into_calls(&[], 100, 10, Tokenizer::Default).unwrap().is_empty());
    }

    #[test]
    fn oversized_paragraph_gets_own_truncated_call() {
        let ps = vec![para(0, 10), para(1, 200), para(2, 10)];
        let calls = pack_into_calls(&ps, 100, 0, Tokenizer::Default).unwrap();
        assert_eq!(ids(&calls), vec![vec![0], vec![1], vec![2]]);
        assert!(calls[1].truncated && !calls[0].truncated);
        assert!(calls[1].token_count <= 100);
        assert_eq!(calls[1].token_count, 100);
    }

    #[test]
    fn budget_must_exceed_overhead() {
        assert_eq!(
            pack_into_calls(&[], 10, 10, Tokenizer::Default),
            Err(PackingError {
                budget: 10,
                overhead: 10
            })
        );
    }
}
