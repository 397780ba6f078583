use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Ledger stage for condensing sections with an LLM summarizer.
pub const STAGE_SUMMARIZE: &str = "summarize";
pub const STAGE_SECTION_SELECT: &str = "section_select";
pub const STAGE_FINE_RETRIEVAL: &str = "fine_retrieval";
pub const STAGE_PARAGRAPH: &str = "paragraph";
pub const STAGE_CHUNK: &str = "chunk";
pub const STAGE_MRO_REDUCE: &str = "mro_reduce";
pub const STAGE_ANSWER: &str = "answer";
pub const STAGE_SELFASK: &str = "selfask";

/// Stages counted as evidence retrieval cost.
pub const RETRIEVAL_STAGES: &[&str] = &[
    STAGE_SECTION_SELECT,
    STAGE_FINE_RETRIEVAL,
    STAGE_PARAGRAPH,
    STAGE_CHUNK,
    STAGE_MRO_REDUCE,
];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageUsage {
    pub tokens_processed: u64,
    pub api_calls: u64,
}

/// Tokens processed and API calls, per pipeline stage.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UsageLedger {
    stages: BTreeMap<String, StageUsage>,
}

impl UsageLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, stage: &str, prompt_tokens: u64, completion_tokens: u64) {
        let entry = self.stages.entry(stage.to_string()).or_default();
        entry.api_calls += 1;
        entry.tokens_processed += prompt_tokens + completion_tokens;
    }

    pub fn stage(&self, stage: &str) -> StageUsage {
        self.stages.get(stage).copied().unwrap_or_default()
    }

    pub fn stages(&self) -> impl Iterator<Item = (&str, &StageUsage)> {
        self.stages.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    pub fn absorb(&mut self, other: &UsageLedger) {
        for (stage, usage) in &other.stages {
            let entry = self.stages.entry(stage.clone()).or_default();
            entry.tokens_processed += usage.tokens_processed;
            entry.api_calls += usage.api_calls;
        }
    }

    pub fn total(&self) -> StageUsage {
        self.sum_where(|_| true)
    }

    /// Sum over [`RETRIEVAL_STAGES`].
    pub fn retrieval(&self) -> StageUsage {
        self.sum_where(|s| RETRIEVAL_STAGES.contains(&s))
    }

    fn sum_where(&self, keep: impl Fn(&str) -> bool) -> StageUsage {
        self.stages
            .iter()
            .filter(|(k, _)| keep(k))
            .fold(StageUsage::default(), |acc, (_, u)| StageUsage {
                tokens_processed: acc.tokens_processed + u.tokens_processed,
                api_calls: acc.api_calls + u.api_calls,
            })
    }
}

/// Per-stage element-wise sum.
pub fn merge_ledgers(a: &UsageLedger, b: &UsageLedger) -> UsageLedger {
    let mut out = a.clone();
    out.absorb(b);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ledger(entries: &[(&str, u64, u64)]) -> UsageLedger {
        let mut l = UsageLedger::new();
        for &(s, tokens, calls) in entries {
            for i in 0..calls {
                l.record(s, if i == 0 { tokens } else { 0 }, 0);
            }
        }
        l
    }

    #[test]
    fn record_counts_calls_and_tokens() {
        let mut l = UsageLedger::new();
        l.record("retrieval", 120, 5);
        assert_eq!(
            l.stage("retrieval"),
            StageUsage {
                tokens_processed: 125,
                api_calls: 1
            }
        );
        l.record("retrieval", 1, 1);
        assert_eq!(l.stage("retrieval").api_calls, 2);
    }

    #[test]
    fn merge_examples() {
        let a = ledger(&[("r", 100, 1)]);
        let b = ledger(&[("r", 50, 1)]);
        assert_eq!(
            merge_ledgers(&a, &b).stage("r"),
            StageUsage {
                tokens_processed: 150,
                api_calls: 2
            }
        );
        assert_eq!(merge_ledgers(&a, &UsageLedger::new()), a);
    }

    #[test]
    fn retrieval_excludes_answer() {
        let l = ledger(&[
            (STAGE_SECTION_SELECT, 10, 1),
            (STAGE_FINE_RETRIEVAL, 20, 1),
            (STAGE_ANSWER, 5, 1),
        ]);
        assert_eq!(
            l.retrieval(),
            StageUsage {
                tokens_processed: 30,
                api_calls: 2
            }
        );
        assert_eq!(
            l.total(),
            StageUsage {
                tokens_processed: 35,
                api_calls: 3
            }
        );
    }

    fn arb_ledger() -> impl Strategy<Value = UsageLedger> {
        proptest::collection::vec(("[abc]", 0u64..1000, 0u64..1000), 0..6).prop_map(|v| {
            let mut l = UsageLedger::new();
            for (s, p, c) in v {
                l.record(&s, p, c);
            }
            l
        })
    }

    proptest! {
        #[test]
        fn merge_is_a_commutative_monoid(a in arb_ledger(), b in arb_ledger(), c in arb_ledger()) {
            prop_assert_eq!(merge_ledgers(&a, &b), merge_ledgers(&b, &a));
            prop_assert_eq!(
                merge_ledgers(&merge_ledgers(&a, &b), &c),
                merge_ledgers(&a, &merge_ledgers(&b, &c))
            );
            prop_assert_eq!(merge_ledgers(&a, &UsageLedger::new()), a);
        }
    }
}
