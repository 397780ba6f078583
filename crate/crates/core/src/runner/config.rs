use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::DEFAULT_CHUNK_SIZE;
use crate::condenser::DEFAULT_SECTION_BUDGET;
use crate::error::{Error, Result};
use crate::eval::{BucketBoundaries, DEFAULT_BUCKET_BOUNDARIES};
use crate::fine_retrieval::{parse_stages, FineStage, DEFAULT_RERANK_K};
use crate::qa::DEFAULT_MAX_HOPS;

/// A retrieval approach, as named by its tag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Strategy {
    /// Section selection followed by the given fine-retrieval chain.
    D3(Vec<FineStage>),
    Chunk,
    Paragraph,
    MapReduce,
    RerankFull,
    /// Self-ask agent whose sub-questions use the inner strategy.
    SelfAsk(Box<Strategy>),
}

impl Strategy {
    pub fn is_selfask(&self) -> bool {
        matches!(self, Strategy::SelfAsk(_))
    }

    /// The strategy that does the retrieval itself.
    pub fn retrieval(&self) -> &Strategy {
        match self {
            Strategy::SelfAsk(inner) => inner,
            s => s,
        }
    }

    pub fn uses_sections(&self) -> bool {
        matches!(self.retrieval(), Strategy::D3(_))
    }

    pub fn uses_chunks(&self) -> bool {
        matches!(self.retrieval(), Strategy::Chunk | Strategy::MapReduce)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::D3(stages) => {
                let chain: Vec<String> = stages.iter().map(|s| s.to_string()).collect();
                write!(f, "d3-{}", chain.join("+"))
            }
            Strategy::Chunk => f.write_str("chunk"),
            Strategy::Paragraph => f.write_str("paragraph"),
            Strategy::MapReduce => f.write_str("mro"),
            Strategy::RerankFull => f.write_str("rerank-full"),
            Strategy::SelfAsk(inner) => write!(f, "selfask:{inner}"),
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let unknown = || Error::Config(format!("unknown strategy {s:?}"));
        match s {
            "chunk" => Ok(Strategy::Chunk),
            "paragraph" => Ok(Strategy::Paragraph),
            "mro" => Ok(Strategy::MapReduce),
            "rerank-full" => Ok(Strategy::RerankFull),
            _ => {
                if let Some(inner) = s.strip_prefix("selfask:") {
                    let inner: Strategy = inner.parse().map_err(|_| unknown())?;
                    if inner.is_selfask() {
                        return Err(unknown());
                    }
                    return Ok(Strategy::SelfAsk(Box::new(inner)));
                }
                let chain = s.strip_prefix("d3-").ok_or_else(unknown)?;
                parse_stages(chain).map(Strategy::D3).map_err(|_| unknown())
            }
        }
    }
}

/// Where completions come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendProfile {
    /// Rules from a JSONL script file; never touches the network.
    Scripted(PathBuf),
    /// OpenAI-compatible server.
    OpenAi { model: String, base_url: String },
}

pub const DEFAULT_OPENAI_URL: &str = "https://api.openai.com";

impl FromStr for BackendProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(path) = s.strip_prefix("scripted:") {
            if path.is_empty() {
                return Err(Error::Config("scripted backend needs a script path".into()));
            }
            return Ok(BackendProfile::Scripted(PathBuf::from(path)));
        }
        if let Some(rest) = s.strip_prefix("openai:") {
            let (model, url) = rest.split_once('@').unwrap_or((rest, DEFAULT_OPENAI_URL));
            if model.is_empty() {
                return Err(Error::Config("openai backend needs a model name".into()));
            }
            return Ok(BackendProfile::OpenAi {
                model: model.to_string(),
                base_url: url.to_string(),
            });
        }
        Err(Error::Config(format!(
            "unknown backend profile {s:?} (expected scripted:<path> or openai:<model>[@url])"
        )))
    }
}

/// Everything a run depends on. Stored as JSON; command-line flags
/// override individual fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub strategy: String,
    pub backend: String,
    /// `extractive` or `llm`.
    pub summarizer: String,
    pub summary_budget: usize,
    pub chunk_size: usize,
    pub rerank_k: usize,
    /// `lexical` or `remote:<url>`.
    pub scorer: String,
    pub cache: Option<PathBuf>,
    pub summary_cache: Option<PathBuf>,
    pub datasets: Vec<PathBuf>,
    /// `qasper` or `hotpot`; detected from the file when absent.
    pub format: Option<String>,
    pub bucket_boundaries: Vec<usize>,
    pub seed: u64,
    /// Run the reader on retrieved evidence.
    pub answer: bool,
    pub max_hops: usize,
    pub context_limit: Option<usize>,
    pub tokenizer: String,
    pub workers: usize,
    /// Only the first `n` questions, in dataset order.
    pub limit: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            strategy: "d3-base".into(),
            backend: String::new(),
            summarizer: "extractive".into(),
            summary_budget: DEFAULT_SECTION_BUDGET,
            chunk_size: DEFAULT_CHUNK_SIZE,
            rerank_k: DEFAULT_RERANK_K,
            scorer: "lexical".into(),
            cache: None,
            summary_cache: None,
            datasets: Vec::new(),
            format: None,
            bucket_boundaries: DEFAULT_BUCKET_BOUNDARIES.to_vec(),
            seed: 0,
            answer: true,
            max_hops: DEFAULT_MAX_HOPS,
            context_limit: None,
            tokenizer: "default".into(),
            workers: 1,
            limit: None,
        }
    }
}

impl RunConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn parsed_strategy(&self) -> Result<Strategy> {
        self.strategy.parse()
    }

    pub fn boundaries(&self) -> Result<BucketBoundaries> {
        BucketBoundaries::new(self.bucket_boundaries.clone())
    }

    /// Checks tags, numeric ranges and that referenced inputs exist.
    pub fn validate(&self) -> Result<()> {
        self.parsed_strategy()?;
        if self.backend.is_empty() {
            return Err(Error::Config("no backend profile given".into()));
        }
        if let BackendProfile::Scripted(path) = self.backend.parse()? {
            require_file(&path, "backend script")?;
        }
        if !matches!(self.summarizer.as_str(), "extractive" | "llm") {
            return Err(Error::Config(format!("unknown summarizer {:?}", self.summarizer)));
        }
        if self.scorer != "lexical" && !self.scorer.starts_with("remote:") {
            return Err(Error::Config(format!("unknown scorer {:?}", self.scorer)));
        }
        for (name, v) in [
            ("summary_budget", self.summary_budget),
            ("chunk_size", self.chunk_size),
            ("rerank_k", self.rerank_k),
            ("max_hops", self.max_hops),
            ("workers", self.workers),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        self.tokenizer
            .parse::<crate::gateway::Tokenizer>()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.boundaries()?;
        if self.datasets.is_empty() {
            return Err(Error::Config("no dataset given".into()));
        }
        for d in &self.datasets {
            require_file(d, "dataset")?;
        }
        if let Some(f) = &self.format {
            f.parse::<crate::ingest::DatasetFormat>()?;
        }
        Ok(())
    }
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} {} does not exist", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategy_tags_round_trip() {
        for tag in [
            "d3-base",
            "d3-hierbase",
            "d3-rerank",
            "d3-base+rerank:3",
            "chunk",
            "paragraph",
            "mro",
            "rerank-full",
            "selfask:d3-base",
            "selfask:chunk",
        ] {
            let s: Strategy = tag.parse().unwrap();
            assert_eq!(s.to_string(), tag);
        }
        for bad in ["d3-", "d3-foo", "selfask:selfask:chunk", "bm25", "selfask:"] {
            assert!(bad.parse::<Strategy>().is_err(), "{bad}");
        }
        assert_eq!(
            "d3-monot5".parse::<Strategy>().unwrap(),
            Strategy::D3(vec![FineStage::Rerank(None)])
        );
    }

    #[test]
    fn backend_profiles() {
        assert_eq!(
            "scripted:a.jsonl".parse::<BackendProfile>().unwrap(),
            BackendProfile::Scripted("a.jsonl".into())
        );
        assert_eq!(
            "openai:gpt-x@http://localhost:8000".parse::<BackendProfile>().unwrap(),
            BackendProfile::OpenAi {
                model: "gpt-x".into(),
                base_url: "http://localhost:8000".into()
            }
        );
        assert!(matches!(
            "openai:m".parse::<BackendProfile>().unwrap(),
            BackendProfile::OpenAi { base_url, .. } if base_url == DEFAULT_OPENAI_URL
        ));
        assert!("local".parse::<BackendProfile>().is_err());
    }

    #[test]
    fn config_json_defaults_and_unknown_fields() {
        let c: RunConfig = serde_json::from_str(r#"{"strategy": "chunk", "chunk_size": 1000}"#).unwrap();
        assert_eq!((c.chunk_size, c.rerank_k, c.workers), (1000, 5, 1));
        assert!(serde_json::from_str::<RunConfig>(r#"{"api_key": "x"}"#).is_err());
        let err = RunConfig {
            backend: "scripted:/nonexistent".into(),
            ..RunConfig::default()
        }
        .validate();
        assert!(matches!(err, Err(Error::Config(_))));
    }
}
