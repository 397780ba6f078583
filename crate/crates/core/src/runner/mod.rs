//! Executes a strategy over a dataset and writes the run directory.

mod ablate;
mod config;

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

pub use ablate::{anonymize_ablation, anonymize_tasks, chunk_sweep, AnonymizeOutcome, SweepPoint, DEFAULT_CHUNK_GRID};
pub use config::{BackendProfile, RunConfig, Strategy, DEFAULT_OPENAI_URL};

use crate::baselines::{
    rerank_full_document, retrieve_chunk, retrieve_map_reduce_optimized, retrieve_paragraph_boolean,
};
use crate::condenser::{build_condensed_representation, ExtractiveSummarizer, LlmSummarizer, Summarizer, SummaryCache};
use crate::discourse::{Document, Paragraph};
use crate::error::{Error, Result};
use crate::eval::{aggregate_report, BucketBoundaries, QuestionRecord, RunReport};
use crate::evidence::EvidenceSet;
use crate::fine_retrieval::{
    chain_strategies, restrict, FineStage, LexicalScorer, ParagraphScorer, RetrievalDeps, RetrievalSettings,
};
use crate::gateway::{
    merge_ledgers, Backend, CachingBackend, Gateway, ResponseCache, ScriptedBackend, Tokenizer, UsageLedger,
};
use crate::ingest::{detect_format, load_dataset, DatasetFormat, LoadWarning, Task};
use crate::qa::{answer_question, selfask_run, Answer, Retrieved, SelfAskTrace, SubQuestionRetriever};
use crate::section_select::{gather_candidate_paragraphs, select_relevant_sections};

/// Shared, immutable state of one run.
pub struct RunContext {
    pub config: RunConfig,
    pub strategy: Strategy,
    pub boundaries: BucketBoundaries,
    pub deps: RetrievalDeps,
    summary_cache: Arc<SummaryCache>,
    scripted: Option<Arc<ScriptedBackend>>,
}

impl RunContext {
    /// Builds the backend stack described by the config: the base backend,
    /// the response cache around it, then summarizer and scorer.
    pub fn from_config(config: &RunConfig) -> Result<Self> {
        let tokenizer: Tokenizer = config
            .tokenizer
            .parse()
            .map_err(|e: crate::gateway::GatewayError| Error::Config(e.to_string()))?;
        let profile: BackendProfile = config.backend.parse()?;
        let (backend, scripted, model_tag): (Arc<dyn Backend>, _, String) = match &profile {
            BackendProfile::Scripted(path) => {
                let mut b = ScriptedBackend::from_jsonl_file(path)
                    .map_err(Error::Config)?
                    .with_tokenizer(tokenizer);
                if let Some(limit) = config.context_limit {
                    b = b.with_context_limit(limit);
                }
                let b = Arc::new(b);
                (b.clone(), Some(b), "scripted".to_string())
            }
            BackendProfile::OpenAi { model, base_url } => {
                (open_ai(base_url, config.context_limit)?, None, model.clone())
            }
        };
        let backend: Arc<dyn Backend> = match &config.cache {
            Some(path) => {
                let cache = ResponseCache::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
                Arc::new(CachingBackend::new(backend, Arc::new(cache)))
            }
            None => backend,
        };
        let gateway = Gateway::new(backend)
            .with_tokenizer(tokenizer)
            .with_model_tag(model_tag);
        Self::with_gateway(config, gateway, scripted)
    }

    /// Builds a context around an existing gateway. `scripted`, when given,
    /// is the innermost backend whose invocations are reported.
    pub fn with_gateway(config: &RunConfig, gateway: Gateway, scripted: Option<Arc<ScriptedBackend>>) -> Result<Self> {
        let strategy = config.parsed_strategy()?;
        let boundaries = config.boundaries()?;
        let summarizer: Arc<dyn Summarizer> = match config.summarizer.as_str() {
            "extractive" => Arc::new(ExtractiveSummarizer {
                tokenizer: gateway.tokenizer,
            }),
            "llm" => Arc::new(LlmSummarizer {
                gateway: gateway.clone(),
            }),
            other => return Err(Error::Config(format!("unknown summarizer {other:?}"))),
        };
        let scorer = make_scorer(&config.scorer)?;
        let summary_cache = match &config.summary_cache {
            Some(path) => SummaryCache::open(path).map_err(|e| Error::io(path.display().to_string(), e))?,
            None => SummaryCache::in_memory(),
        };
        let summary_cache = Arc::new(summary_cache);
        let mut deps = RetrievalDeps::new(gateway, summarizer, scorer);
        deps.summary_cache = Some(summary_cache.clone());
        deps.settings = RetrievalSettings {
            rerank_k: config.rerank_k,
            ..RetrievalSettings::default()
        };
        Ok(RunContext {
            config: config.clone(),
            strategy,
            boundaries,
            deps,
            summary_cache,
            scripted,
        })
    }

    pub fn gateway(&self) -> &Gateway {
        &self.deps.gateway
    }

    /// Calls that reached the scripted backend (cache hits excluded).
    pub fn backend_invocations(&self) -> Option<usize> {
        self.scripted.as_ref().map(|b| b.invocations())
    }
}

#[cfg(feature = "http")]
fn open_ai(base_url: &str, limit: Option<usize>) -> Result<Arc<dyn Backend>> {
    let mut b = crate::gateway::OpenAiBackend::new(base_url);
    if let Some(limit) = limit {
        b = b.with_context_limit(limit);
    }
    Ok(Arc::new(b))
}

#[cfg(not(feature = "http"))]
fn open_ai(_base_url: &str, _limit: Option<usize>) -> Result<Arc<dyn Backend>> {
    Err(Error::Config("built without HTTP support".into()))
}

fn make_scorer(tag: &str) -> Result<Arc<dyn ParagraphScorer>> {
    if tag == "lexical" {
        return Ok(Arc::new(LexicalScorer));
    }
    #[cfg(feature = "http")]
    if let Some(url) = tag.strip_prefix("remote:") {
        return Ok(Arc::new(crate::fine_retrieval::RemoteScorer::new(url)));
    }
    Err(Error::Config(format!("unknown scorer {tag:?}")))
}

/// Retrieval result for one document.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DocRetrieval {
    pub doc_id: String,
    /// Sections named by the selector, for section-based strategies.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selected_sections: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub unmatched_section_names: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub candidate_count: Option<usize>,
    pub evidence: EvidenceSet,
}

fn retrieve_one_doc(
    strategy: &Strategy,
    question: &str,
    doc: &Document,
    ctx: &RunContext,
    ledger: &mut UsageLedger,
) -> Result<(DocRetrieval, Vec<Paragraph>)> {
    let deps = &ctx.deps;
    let mut out = DocRetrieval {
        doc_id: doc.doc_id.clone(),
        ..DocRetrieval::default()
    };
    let evidence = match strategy {
        Strategy::D3(stages) => {
            let selection = select_relevant_sections(
                doc,
                question,
                &deps.gateway,
                deps.summarizer.as_ref(),
                ctx.config.summary_budget,
                Some(ctx.summary_cache.as_ref()),
                ledger,
            )?;
            let candidates = gather_candidate_paragraphs(&selection);
            out.selected_sections = Some(selection.selected.iter().map(|s| s.path_name.clone()).collect());
            out.unmatched_section_names = selection.unmatched_names.clone();
            out.candidate_count = Some(candidates.len());
            if candidates.is_empty() {
                EvidenceSet::new()
            } else {
                chain_strategies(question, &candidates, stages, deps, &doc.doc_id, ledger)?
            }
        }
        Strategy::Chunk => retrieve_chunk(question, doc, deps, ledger, ctx.config.chunk_size)?,
        Strategy::Paragraph => retrieve_paragraph_boolean(question, doc, &deps.gateway, ledger)?,
        Strategy::MapReduce => retrieve_map_reduce_optimized(question, doc, deps, ledger, ctx.config.chunk_size)?,
        Strategy::RerankFull => rerank_full_document(question, doc, deps.scorer.as_ref(), ctx.config.rerank_k)?,
        Strategy::SelfAsk(_) => return Err(Error::Config("self-ask cannot be nested".into())),
    };
    let all: Vec<Paragraph> = doc.paragraphs().into_iter().cloned().collect();
    let paragraphs = restrict(&all, &evidence);
    out.evidence = evidence;
    Ok((out, paragraphs))
}

/// Runs `strategy` over every document. With more than one document the
/// evidence ids are namespaced by document id.
pub fn retrieve_in_documents(
    strategy: &Strategy,
    question: &str,
    docs: &[Document],
    ctx: &RunContext,
    ledger: &mut UsageLedger,
) -> Result<(Vec<DocRetrieval>, Retrieved)> {
    let mut per_doc = Vec::with_capacity(docs.len());
    let mut merged = Retrieved::default();
    for doc in docs {
        let (mut r, paragraphs) = retrieve_one_doc(strategy, question, doc, ctx, ledger)?;
        if docs.len() > 1 {
            r.evidence = r.evidence.namespaced(&doc.doc_id);
        }
        merged.evidence.extend(r.evidence.clone());
        merged.paragraphs.extend(paragraphs);
        per_doc.push(r);
    }
    Ok((per_doc, merged))
}

struct DocsRetriever<'a> {
    strategy: &'a Strategy,
    docs: &'a [Document],
    ctx: &'a RunContext,
    log: Mutex<Vec<(String, Vec<DocRetrieval>)>>,
}

impl SubQuestionRetriever for DocsRetriever<'_> {
    fn retrieve(&self, question: &str, ledger: &mut UsageLedger) -> Result<Retrieved> {
        let (per_doc, merged) = retrieve_in_documents(self.strategy, question, self.docs, self.ctx, ledger)?;
        self.log.lock().unwrap().push((question.to_string(), per_doc));
        Ok(merged)
    }
}

/// Per-question record of everything the pipeline did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionTrace {
    pub question_id: String,
    pub question: String,
    pub strategy: String,
    pub doc_ids: Vec<String>,
    pub retrieval: Vec<DocRetrieval>,
    pub predicted_evidence: EvidenceSet,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub answer: Option<Answer>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selfask: Option<SelfAskTrace>,
    /// Retrieval of each self-ask sub-question, in order.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub sub_question_retrieval: Vec<SubQuestionRetrieval>,
    pub ledger: UsageLedger,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubQuestionRetrieval {
    pub question: String,
    pub retrieval: Vec<DocRetrieval>,
}

fn doc_tokens(docs: &[Document], tokenizer: Tokenizer) -> usize {
    docs.iter()
        .flat_map(|d| d.paragraphs())
        .map(|p| tokenizer.count(&p.text))
        .sum()
}

/// Runs one question end to end.
pub fn run_question(task: &Task, ctx: &RunContext) -> Result<(QuestionRecord, QuestionTrace)> {
    let record = &task.record;
    let question = record.question.text.as_str();
    let gateway = ctx.gateway();
    let mut ledger = UsageLedger::new();
    let mut trace = QuestionTrace {
        question_id: record.question.id.clone(),
        question: question.to_string(),
        strategy: ctx.strategy.to_string(),
        doc_ids: record.doc_ids.clone(),
        retrieval: Vec::new(),
        predicted_evidence: EvidenceSet::new(),
        answer: None,
        selfask: None,
        sub_question_retrieval: Vec::new(),
        ledger: UsageLedger::new(),
    };
    let predicted_answer = match &ctx.strategy {
        Strategy::SelfAsk(inner) => {
            let retriever = DocsRetriever {
                strategy: inner,
                docs: &task.documents,
                ctx,
                log: Mutex::new(Vec::new()),
            };
            let sa = selfask_run(question, gateway, &retriever, ctx.config.max_hops)?;
            ledger = sa.ledger.clone();
            trace.predicted_evidence = sa.evidence();
            trace.sub_question_retrieval = retriever
                .log
                .into_inner()
                .unwrap()
                .into_iter()
                .map(|(question, retrieval)| SubQuestionRetrieval { question, retrieval })
                .collect();
            let text = sa.final_answer.text.clone();
            trace.answer = Some(sa.final_answer.clone());
            trace.selfask = Some(sa);
            Some(text)
        }
        strategy => {
            let (per_doc, found) = retrieve_in_documents(strategy, question, &task.documents, ctx, &mut ledger)?;
            trace.retrieval = per_doc;
            trace.predicted_evidence = found.evidence;
            if ctx.config.answer {
                let a = answer_question(question, &found.paragraphs, gateway, &mut ledger)?;
                let text = a.text.clone();
                trace.answer = Some(a);
                Some(text)
            } else {
                None
            }
        }
    };
    trace.ledger = ledger.clone();
    let scored = QuestionRecord::scored(
        &record.question.id,
        record.category,
        doc_tokens(&task.documents, gateway.tokenizer),
        &ctx.boundaries,
        trace.predicted_evidence.clone(),
        record.gold_evidence.clone(),
        predicted_answer,
        record.gold_answers.clone(),
        ledger,
    );
    Ok((scored, trace))
}

/// Condensed views and paragraph summaries are computed once per document
/// before any question runs, so their cost is booked here rather than on
/// whichever question happens to come first.
pub fn preprocess(tasks: &[Task], ctx: &RunContext) -> Result<UsageLedger> {
    let mut ledger = UsageLedger::new();
    let strategy = ctx.strategy.retrieval();
    let Strategy::D3(stages) = strategy else {
        return Ok(ledger);
    };
    let hier = stages.contains(&FineStage::HierBase);
    let deps = &ctx.deps;
    let mut seen = BTreeSet::new();
    for doc in tasks.iter().flat_map(|t| t.documents.iter()) {
        if !seen.insert(doc.doc_id.clone()) {
            continue;
        }
        build_condensed_representation(
            doc,
            deps.summarizer.as_ref(),
            ctx.config.summary_budget,
            deps.gateway.tokenizer,
            Some(ctx.summary_cache.as_ref()),
            &mut ledger,
        )?;
        if hier {
            let budget = deps.settings.paragraph_summary_budget;
            let tag = deps.summarizer.tag();
            for p in doc.paragraphs() {
                ctx.summary_cache
                    .get_or_compute(&doc.doc_id, &format!("paragraph:{}", p.id), &tag, budget, || {
                        deps.summarizer.summarize(&[p.text.as_str()], budget, &mut ledger)
                    })?;
            }
        }
    }
    Ok(ledger)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub report: RunReport,
    pub traces: Vec<QuestionTrace>,
    pub preprocessing: UsageLedger,
}

/// Runs every task, `workers` at a time. Results do not depend on the
/// worker count.
type Scored = (QuestionRecord, QuestionTrace);

pub fn execute(tasks: &[Task], ctx: &RunContext) -> Result<RunOutput> {
    if tasks.is_empty() {
        return Err(Error::Config("dataset has no questions".into()));
    }
    let preprocessing = preprocess(tasks, ctx)?;
    let workers = ctx.config.workers.clamp(1, tasks.len());
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<Scored>>>> = Mutex::new((0..tasks.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(task) = tasks.get(i) else { break };
                let result = run_question(task, ctx);
                let failed = result.is_err();
                slots.lock().unwrap()[i] = Some(result);
                if failed {
                    // stop handing out work; the first error is reported
                    next.store(tasks.len(), Ordering::SeqCst);
                }
            });
        }
    });
    let mut records = Vec::with_capacity(tasks.len());
    let mut traces = Vec::with_capacity(tasks.len());
    for (task, slot) in tasks.iter().zip(slots.into_inner().unwrap()) {
        match slot {
            Some(Ok((r, t))) => {
                records.push(r);
                traces.push(t);
            }
            Some(Err(e)) => {
                return Err(Error::Config(format!("question {}: {e}", task.record.question.id)));
            }
            None => {}
        }
    }
    traces.sort_by(|a, b| a.question_id.cmp(&b.question_id));
    let report = aggregate_report(&ctx.strategy.to_string(), records, &ctx.boundaries)?;
    Ok(RunOutput {
        report,
        traces,
        preprocessing,
    })
}

/// Reads every dataset of the config into tasks, honoring `limit`.
pub fn load_tasks(config: &RunConfig) -> Result<(Vec<Task>, Vec<LoadWarning>)> {
    let mut tasks = Vec::new();
    let mut warnings = Vec::new();
    for path in &config.datasets {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let format: DatasetFormat = match &config.format {
            Some(f) => f.parse()?,
            None => detect_format(&bytes)?,
        };
        let ds = load_dataset(&bytes, format)?;
        tasks.extend(ds.tasks);
        warnings.extend(ds.warnings);
    }
    let mut ids = BTreeSet::new();
    for t in &tasks {
        if !ids.insert(t.record.question.id.as_str()) {
            return Err(Error::Config(format!("duplicate question id {}", t.record.question.id)));
        }
    }
    if let Some(n) = config.limit {
        tasks.truncate(n);
    }
    Ok((tasks, warnings))
}

/// File-system safe name for a question id; distinct ids stay distinct.
pub fn trace_file_name(question_id: &str, taken: &mut BTreeSet<String>) -> String {
    let base: String = question_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect();
    let base = base.trim_start_matches('.').to_string();
    let mut name = format!("{base}.json");
    let mut n = 1;
    while !taken.insert(name.clone()) {
        n += 1;
        name = format!("{base}~{n}.json");
    }
    name
}

#[derive(Serialize)]
struct LedgerFile<'a> {
    preprocessing: &'a UsageLedger,
    questions: UsageLedger,
    total: UsageLedger,
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path.display().to_string(), e))
}

fn pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

/// Writes `report.json`, `report.csv`, `ledger.json`, `config.json` and
/// `traces/*.json` under `dir`.
pub fn write_run_dir(dir: &Path, output: &RunOutput, config: &RunConfig) -> Result<()> {
    let traces_dir = dir.join("traces");
    std::fs::create_dir_all(&traces_dir).map_err(|e| Error::io(traces_dir.display().to_string(), e))?;
    write_file(&dir.join("report.json"), &output.report.to_json())?;
    write_file(&dir.join("report.csv"), &output.report.to_csv())?;
    let questions = output
        .report
        .records
        .iter()
        .fold(UsageLedger::new(), |acc, r| merge_ledgers(&acc, &r.ledger));
    let total = merge_ledgers(&output.preprocessing, &questions);
    write_file(
        &dir.join("ledger.json"),
        &pretty(&LedgerFile {
            preprocessing: &output.preprocessing,
            questions,
            total,
        }),
    )?;
    write_file(&dir.join("config.json"), &pretty(config))?;
    let mut taken = BTreeSet::new();
    for t in &output.traces {
        let name = trace_file_name(&t.question_id, &mut taken);
        write_file(&traces_dir.join(name), &pretty(t))?;
    }
    Ok(())
}

/// Summary of a finished run for the caller.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub report: RunReport,
    pub warnings: usize,
    pub backend_invocations: Option<usize>,
}

/// Validates the config, runs it over its datasets and writes `out_dir`.
pub fn run_command(config: &RunConfig, out_dir: &Path) -> Result<RunSummary> {
    config.validate()?;
    let (tasks, warnings) = load_tasks(config)?;
    for w in &warnings {
        tracing::warn!(record = %w.record, "{}", w.message);
    }
    let ctx = RunContext::from_config(config)?;
    let output = execute(&tasks, &ctx)?;
    write_run_dir(out_dir, &output, config)?;
    Ok(RunSummary {
        report: output.report,
        warnings: warnings.len(),
        backend_invocations: ctx.backend_invocations(),
    })
}
