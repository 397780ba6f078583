use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::discourse::Paragraph;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScorerError {
    #[error("scorer transport: {0}")]
    Transport(String),
    #[error("scorer returned {got} scores for {expected} paragraphs")]
    Length { expected: usize, got: usize },
    #[error("scorer returned a non-finite score at position {0}")]
    NonFinite(usize),
}

/// Relevance scores for paragraphs, higher is more relevant.
///
/// Scores are computed for a whole candidate pool at once so that pool
/// statistics (document frequencies) and remote batch rerankers fit the
/// same interface.
pub trait ParagraphScorer: Send + Sync {
    fn tag(&self) -> String;

    fn score(&self, question: &str, paragraphs: &[Paragraph]) -> Result<Vec<f64>, ScorerError>;
}

pub(crate) fn terms(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

/// Term-overlap scorer: for each distinct query term, its frequency in the
/// paragraph times an idf weight computed over the candidate pool.
#[derive(Debug, Clone, Copy, Default)]
pub struct LexicalScorer;

impl LexicalScorer {
    pub fn idf(pool_size: usize, doc_freq: usize) -> f64 {
        let n = pool_size as f64;
        let df = doc_freq as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }
}

impl ParagraphScorer for LexicalScorer {
    fn tag(&self) -> String {
        "lexical".to_string()
    }

    fn score(&self, question: &str, paragraphs: &[Paragraph]) -> Result<Vec<f64>, ScorerError> {
        let query: BTreeSet<String> = terms(question).into_iter().collect();
        let bags: Vec<BTreeMap<String, usize>> = paragraphs
            .iter()
            .map(|p| {
                let mut bag = BTreeMap::new();
                for t in terms(&p.text) {
                    *bag.entry(t).or_insert(0) += 1;
                }
                bag
            })
            .collect();
        let idf: BTreeMap<&String, f64> = query
            .iter()
            .map(|t| {
                let df = bags.iter().filter(|b| b.contains_key(t)).count();
                (t, Self::idf(paragraphs.len(), df))
            })
            .collect();
        Ok(bags
            .iter()
            .map(|bag| {
                query
                    .iter()
                    .map(|t| bag.get(t).copied().unwrap_or(0) as f64 * idf[t])
                    .sum()
            })
            .collect())
    }
}

/// Scores paragraphs through an HTTP endpoint accepting
/// `{question, paragraphs: [string]}` and returning `{scores: [number]}`.
#[cfg(feature = "http")]
pub struct RemoteScorer {
    url: String,
    agent: ureq::Agent,
}

#[cfg(feature = "http")]
impl RemoteScorer {
    pub fn new(url: &str) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(std::time::Duration::from_secs(120)))
            .build()
            .into();
        RemoteScorer {
            url: url.to_string(),
            agent,
        }
    }
}

#[cfg(feature = "http")]
impl ParagraphScorer for RemoteScorer {
    fn tag(&self) -> String {
        format!("remote:{}", self.url)
    }

    fn score(&self, question: &str, paragraphs: &[Paragraph]) -> Result<Vec<f64>, ScorerError> {
        #[derive(serde::Deserialize)]
        struct Reply {
            scores: Vec<f64>,
        }
        let texts: Vec<&str> = paragraphs.iter().map(|p| p.text.as_str()).collect();
        let body = serde_json::json!({"question": question, "paragraphs": texts});
        let reply: Reply = self
            .agent
            .post(&self.url)
            .send_json(body)
            .and_then(|mut r| r.body_mut().read_json())
            .map_err(|e| ScorerError::Transport(e.to_string()))?;
        check_scores(paragraphs.len(), reply.scores)
    }
}

pub(crate) fn check_scores(expected: usize, scores: Vec<f64>) -> Result<Vec<f64>, ScorerError> {
    if scores.len() != expected {
        return Err(ScorerError::Length {
            expected,
            got: scores.len(),
        });
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(ScorerError::NonFinite(i));
    }
    Ok(scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(id: u32, text: &str) -> Paragraph {
        Paragraph {
            id,
            text: text.into(),
            section_path: vec![],
        }
    }

    #[test]
    fn planted_term_scores_highest() {
        let pool = vec![
            p(0, "the model is trained"),
            p(1, "we evaluate on zebrafish data"),
            p(2, "results are good"),
        ];
        let s = LexicalScorer.score("which zebrafish data?", &pool).unwrap();
        assert!(s[1] > s[0] && s[1] > s[2], "{s:?}");
        assert_eq!(s[2], 0.0);
    }

    #[test]
    fn score_validation() {
        assert_eq!(
            check_scores(2, vec![1.0]),
            Err(ScorerError::Length { expected: 2, got: 1 })
        );
        assert_eq!(check_scores(2, vec![1.0, f64::NAN]), Err(ScorerError::NonFinite(1)));
    }

    proptest! {
        #[test]
        fn lexical_scores_are_deterministic_and_order_free(
            q in "[a-c ]{1,12}",
            texts in proptest::collection::vec("[a-d ]{0,20}", 1..6),
        ) {
            let pool: Vec<Paragraph> = texts.iter().enumerate().map(|(i, t)| p(i as u32, t)).collect();
            let a = LexicalScorer.score(&q, &pool).unwrap();
            let b = LexicalScorer.score(&q, &pool).unwrap();
            prop_assert_eq!(&a, &b);
            let mut rev = pool.clone();
            rev.reverse();
            let mut r = LexicalScorer.score(&q, &rev).unwrap();
            r.reverse();
            prop_assert_eq!(a.clone(), r);
            prop_assert!(a.iter().all(|s| s.is_finite() && *s >= 0.0));
        }
    }
}
