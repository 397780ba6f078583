//! Second retrieval stage: pick evidence paragraphs out of a candidate pool.
//!
//! Strategies: identifier prompting over packed calls (`base`), the same
//! over per-paragraph summaries followed by the originals (`hierbase`),
//! and score-based reranking (`rerank`). Strategies chain, each stage
//! narrowing the previous stage's output.

mod packing;
mod scorer;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

pub use packing::{annotate_paragraph, annotate_with_ids, pack_into_calls, PackedCall, PackingError};
#[cfg(feature = "http")]
pub use scorer::RemoteScorer;
pub use scorer::{LexicalScorer, ParagraphScorer, ScorerError};

use crate::condenser::{Summarizer, SummaryCache};
use crate::discourse::Paragraph;
use crate::error::{Error, Result};
use crate::evidence::EvidenceSet;
use crate::gateway::{Gateway, UsageLedger, STAGE_FINE_RETRIEVAL};
use crate::prompts::base_prompt;

/// Tokens held back from the context window for instructions and reply.
pub const CALL_RESERVE_TOKENS: usize = 512;
pub const ID_REPLY_TOKENS: usize = 256;
pub const DEFAULT_RERANK_K: usize = 5;
pub const DEFAULT_PARAGRAPH_SUMMARY_BUDGET: usize = 30;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetrievalSettings {
    /// Per-call token budget; `None` means context limit minus
    /// [`CALL_RESERVE_TOKENS`].
    pub call_budget: Option<usize>,
    pub reply_tokens: usize,
    pub rerank_k: usize,
    pub paragraph_summary_budget: usize,
}

impl Default for RetrievalSettings {
    fn default() -> Self {
        RetrievalSettings {
            call_budget: None,
            reply_tokens: ID_REPLY_TOKENS,
            rerank_k: DEFAULT_RERANK_K,
            paragraph_summary_budget: DEFAULT_PARAGRAPH_SUMMARY_BUDGET,
        }
    }
}

/// Everything a retrieval strategy may call out to.
#[derive(Clone)]
pub struct RetrievalDeps {
    pub gateway: Gateway,
    pub summarizer: Arc<dyn Summarizer>,
    pub scorer: Arc<dyn ParagraphScorer>,
    pub summary_cache: Option<Arc<SummaryCache>>,
    pub settings: RetrievalSettings,
}

impl RetrievalDeps {
    pub fn new(gateway: Gateway, summarizer: Arc<dyn Summarizer>, scorer: Arc<dyn ParagraphScorer>) -> Self {
        RetrievalDeps {
            gateway,
            summarizer,
            scorer,
            summary_cache: None,
            settings: RetrievalSettings::default(),
        }
    }

    pub fn call_budget(&self) -> usize {
        self.settings
            .call_budget
            .unwrap_or_else(|| self.gateway.context_limit().saturating_sub(CALL_RESERVE_TOKENS))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdParse {
    pub evidence: EvidenceSet,
    /// Items that were not a valid candidate id.
    pub dropped: usize,
}

/// Extracts paragraph ids from a comma or whitespace separated reply.
/// Non-numeric and out-of-pool items are dropped and counted.
pub fn parse_id_list(reply: &str, valid_ids: &BTreeSet<u32>) -> IdParse {
    let mut out = IdParse::default();
    for item in reply.split(|c: char| c == ',' || c == ';' || c.is_whitespace()) {
        let item = item.trim_matches(|c: char| !c.is_alphanumeric());
        if item.is_empty() {
            continue;
        }
        match item.parse::<u32>() {
            Ok(id) if valid_ids.contains(&id) => {
                out.evidence.insert(crate::evidence::EvidenceId::local(id));
            }
            _ => out.dropped += 1,
        }
    }
    out
}

/// Sends one packed call with the identifier prompt and parses the reply.
pub fn base_call(
    question: &str,
    call: &PackedCall,
    gateway: &Gateway,
    reply_tokens: usize,
    ledger: &mut UsageLedger,
    stage: &str,
) -> Result<IdParse, crate::gateway::GatewayError> {
    let req = gateway.request(base_prompt(&call.rendered, question), reply_tokens);
    let resp = gateway.complete(&req, ledger, stage)?;
    let valid: BTreeSet<u32> = call.paragraphs.iter().map(|p| p.id).collect();
    let parsed = parse_id_list(&resp.text, &valid);
    if parsed.dropped > 0 {
        tracing::debug!(dropped = parsed.dropped, "ignored invalid ids in reply");
    }
    Ok(parsed)
}

/// Tokens of the identifier prompt around an empty paragraph block.
pub fn base_overhead(question: &str, gateway: &Gateway) -> usize {
    gateway.count(&base_prompt("", question))
}

/// Identifier prompting over `candidates`, packed into as few calls as the
/// budget allows. Stage is booked under `stage`.
pub fn retrieve_base_in_stage(
    question: &str,
    candidates: &[Paragraph],
    deps: &RetrievalDeps,
    ledger: &mut UsageLedger,
    stage: &str,
) -> Result<EvidenceSet> {
    if candidates.is_empty() {
        return Ok(EvidenceSet::new());
    }
    let overhead = base_overhead(question, &deps.gateway);
    let calls = pack_into_calls(candidates, deps.call_budget(), overhead, deps.gateway.tokenizer)
        .map_err(|e| Error::Config(e.to_string()))?;
    let mut out = EvidenceSet::new();
    for (index, call) in calls.iter().enumerate() {
        let parsed =
            base_call(question, call, &deps.gateway, deps.settings.reply_tokens, ledger, stage).map_err(|source| {
                Error::AtCall {
                    stage: stage.to_string(),
                    index,
                    source,
                }
            })?;
        out.extend(parsed.evidence);
    }
    Ok(out)
}

pub fn retrieve_base(
    question: &str,
    candidates: &[Paragraph],
    deps: &RetrievalDeps,
    ledger: &mut UsageLedger,
) -> Result<EvidenceSet> {
    retrieve_base_in_stage(question, candidates, deps, ledger, STAGE_FINE_RETRIEVAL)
}

/// Base over per-paragraph summaries, then Base again over the original
/// text of the survivors.
pub fn retrieve_hierbase(
    question: &str,
    candidates: &[Paragraph],
    deps: &RetrievalDeps,
    doc_id: &str,
    ledger: &mut UsageLedger,
) -> Result<EvidenceSet> {
    if candidates.is_empty() {
        return Ok(EvidenceSet::new());
    }
    let budget = deps.settings.paragraph_summary_budget;
    let tag = deps.summarizer.tag();
    let mut summarized = Vec::with_capacity(candidates.len());
    for p in candidates {
        let mut compute = || deps.summarizer.summarize(&[p.text.as_str()], budget, &mut *ledger);
        let summary = match &deps.summary_cache {
            Some(cache) => cache.get_or_compute(doc_id, &format!("paragraph:{}", p.id), &tag, budget, compute)?,
            None => compute()?,
        };
        let text = if summary.trim().is_empty() {
            p.text.clone()
        } else {
            summary
        };
        summarized.push(Paragraph { text, ..p.clone() });
    }
    let coarse = retrieve_base(question, &summarized, deps, ledger)?;
    let survivors = restrict(candidates, &coarse);
    retrieve_base(question, &survivors, deps, ledger)
}

/// Top `k` candidates by score, ties broken by lower paragraph id.
pub fn rerank_topk(
    question: &str,
    candidates: &[Paragraph],
    scorer: &dyn ParagraphScorer,
    k: usize,
) -> Result<EvidenceSet> {
    if k == 0 {
        return Err(Error::Config("rerank k must be at least 1".into()));
    }
    if candidates.is_empty() {
        return Ok(EvidenceSet::new());
    }
    let scores = scorer.score(question, candidates)?;
    let scores = scorer::check_scores(candidates.len(), scores)?;
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then(candidates[a].id.cmp(&candidates[b].id))
    });
    Ok(EvidenceSet::from_local(
        order.into_iter().take(k).map(|i| candidates[i].id),
    ))
}

/// Candidates whose id is in `keep`, order preserved.
pub fn restrict(candidates: &[Paragraph], keep: &EvidenceSet) -> Vec<Paragraph> {
    candidates
        .iter()
        .filter(|p| keep.contains_local(p.id))
        .cloned()
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FineStage {
    Base,
    HierBase,
    /// Score-based top-k; `None` takes k from the settings.
    Rerank(Option<usize>),
}

impl fmt::Display for FineStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FineStage::Base => f.write_str("base"),
            FineStage::HierBase => f.write_str("hierbase"),
            FineStage::Rerank(None) => f.write_str("rerank"),
            FineStage::Rerank(Some(k)) => write!(f, "rerank:{k}"),
        }
    }
}

impl FromStr for FineStage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(FineStage::Base),
            "hierbase" => Ok(FineStage::HierBase),
            "rerank" | "monot5" => Ok(FineStage::Rerank(None)),
            other => match other.strip_prefix("rerank:").map(str::parse::<usize>) {
                Some(Ok(k)) if k >= 1 => Ok(FineStage::Rerank(Some(k))),
                _ => Err(Error::Config(format!("unknown fine retrieval stage {other:?}"))),
            },
        }
    }
}

/// Parses `base+rerank`-style chains.
pub fn parse_stages(spec: &str) -> Result<Vec<FineStage>> {
    let stages = spec.split('+').map(|s| s.trim().parse()).collect::<Result<Vec<_>>>()?;
    if stages.is_empty() {
        return Err(Error::Config("empty stage chain".into()));
    }
    Ok(stages)
}

/// Runs `stages` in order, each over the previous stage's output.
pub fn chain_strategies(
    question: &str,
    candidates: &[Paragraph],
    stages: &[FineStage],
    deps: &RetrievalDeps,
    doc_id: &str,
    ledger: &mut UsageLedger,
) -> Result<EvidenceSet> {
    if stages.is_empty() {
        return Err(Error::Config("empty stage chain".into()));
    }
    let mut pool = candidates.to_vec();
    let mut result = EvidenceSet::from_local(pool.iter().map(|p| p.id));
    for stage in stages {
        result = match stage {
            FineStage::Base => retrieve_base(question, &pool, deps, ledger)?,
            FineStage::HierBase => retrieve_hierbase(question, &pool, deps, doc_id, ledger)?,
            FineStage::Rerank(k) => rerank_topk(
                question,
                &pool,
                deps.scorer.as_ref(),
                k.unwrap_or(deps.settings.rerank_k),
            )?,
        };
        pool = restrict(&pool, &result);
    }
    Ok(result)
}
