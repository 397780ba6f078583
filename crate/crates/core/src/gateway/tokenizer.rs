//! Deterministic token counting.
//!
//! The `default` rule: whitespace separates tokens, a maximal run of
//! alphanumeric characters is one token, and every other character is a
//! token of its own. `"don't stop."` therefore counts as
//! `don ' t stop .` = 5 tokens.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::GatewayError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tokenizer {
    #[default]
    Default,
    Whitespace,
}

impl Tokenizer {
    pub fn tag(&self) -> &'static str {
        match self {
            Tokenizer::Default => "default",
            Tokenizer::Whitespace => "whitespace",
        }
    }

    /// Byte ranges of each token in `text`.
    pub fn spans(&self, text: &str) -> Vec<Range<usize>> {
        match self {
            Tokenizer::Default => default_spans(text),
            Tokenizer::Whitespace => {
                let mut out = Vec::new();
                let mut start = None;
                for (i, c) in text.char_indices() {
                    match (c.is_whitespace(), start) {
                        (true, Some(s)) => {
                            out.push(s..i);
                            start = None;
                        }
                        (false, None) => start = Some(i),
                        _ => {}
                    }
                }
                if let Some(s) = start {
                    out.push(s..text.len());
                }
                out
            }
        }
    }

    pub fn count(&self, text: &str) -> usize {
        match self {
            Tokenizer::Default => {
                let mut n = 0;
                let mut in_word = false;
                for c in text.chars() {
                    if c.is_alphanumeric() {
                        if !in_word {
                            n += 1;
                            in_word = true;
                        }
                    } else {
                        in_word = false;
                        if !c.is_whitespace() {
                            n += 1;
                        }
                    }
                }
                n
            }
            Tokenizer::Whitespace => text.split_whitespace().count(),
        }
    }

    /// The longest prefix of `text` holding at most `max_tokens` tokens,
    /// cut at a token boundary.
    pub fn truncate<'a>(&self, text: &'a str, max_tokens: usize) -> &'a str {
        if max_tokens == 0 {
            return "";
        }
        let spans = self.spans(text);
        if spans.len() <= max_tokens {
            return text;
        }
        &text[..spans[max_tokens - 1].end]
    }
}

fn default_spans(text: &str) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut word_start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if c.is_alphanumeric() {
            if word_start.is_none() {
                word_start = Some(i);
            }
            continue;
        }
        if let Some(s) = word_start.take() {
            out.push(s..i);
        }
        if !c.is_whitespace() {
            out.push(i..i + c.len_utf8());
        }
    }
    if let Some(s) = word_start {
        out.push(s..text.len());
    }
    out
}

impl fmt::Display for Tokenizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Tokenizer {
    type Err = GatewayError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "default" => Ok(Tokenizer::Default),
            "whitespace" => Ok(Tokenizer::Whitespace),
            other => Err(GatewayError::UnknownTokenizer(other.to_string())),
        }
    }
}

/// Counts tokens of `text` under a registered tokenizer tag.
pub fn count_tokens(text: &str, tokenizer_tag: &str) -> Result<usize, GatewayError> {
    Ok(tokenizer_tag.parse::<Tokenizer>()?.count(text))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn golden_counts() {
        assert_eq!(count_tokens("", "default").unwrap(), 0);
        assert_eq!(count_tokens("hello world", "default").unwrap(), 2);
        assert_eq!(count_tokens("don't stop.", "default").unwrap(), 5);
        assert_eq!(count_tokens("don't stop.", "whitespace").unwrap(), 2);
        assert_eq!(count_tokens("[12] Température: 3.5°C", "default").unwrap(), 10);
        assert!(matches!(
            count_tokens("x", "bpe"),
            Err(GatewayError::UnknownTokenizer(_))
        ));
    }

    #[test]
    fn truncation_cuts_on_token_boundary() {
        let t = Tokenizer::Default;
        assert_eq!(t.truncate("one two, three", 3), "one two,");
        assert_eq!(t.truncate("one two", 5), "one two");
        assert_eq!(t.truncate("one two", 0), "");
    }

    proptest! {
        #[test]
        fn spans_agree_with_count(s in "\\PC{0,60}") {
            for t in [Tokenizer::Default, Tokenizer::Whitespace] {
                prop_assert_eq!(t.spans(&s).len(), t.count(&s));
            }
        }

        #[test]
        fn truncate_respects_budget(s in "[a-z ,.']{0,80}", n in 0usize..20) {
            let t = Tokenizer::Default;
            let cut = t.truncate(&s, n);
            prop_assert!(t.count(cut) <= n);
            prop_assert!(s.starts_with(cut));
        }
    }
}
