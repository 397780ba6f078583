//! Benchmark and plain-text loaders producing [`Document`]s and
//! [`QaRecord`]s.

mod markdown;

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use markdown::{parse_markdown_document, to_markdown, PREAMBLE_SECTION, UNTITLED_SECTION};

use crate::discourse::{collapse_whitespace, CanonicalDocument, Document, OutlineNode};
use crate::evidence::{EvidenceId, EvidenceSet};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IngestError {
    #[error("invalid JSON: {0}")]
    Json(String),
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("format error: {0}")]
    Format(String),
}

fn schema(path: &str, message: impl Into<String>) -> IngestError {
    IngestError::Schema {
        path: path.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Extractive,
    Abstractive,
    YesNo,
    Unanswerable,
    MultiHop,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::Extractive,
        Category::Abstractive,
        Category::YesNo,
        Category::Unanswerable,
        Category::MultiHop,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Category::Extractive => "extractive",
            Category::Abstractive => "abstractive",
            Category::YesNo => "yes_no",
            Category::Unanswerable => "unanswerable",
            Category::MultiHop => "multi_hop",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaRecord {
    pub question: Question,
    pub doc_ids: Vec<String>,
    pub gold_answers: Vec<String>,
    /// One evidence set per annotator reference.
    pub gold_evidence: Vec<EvidenceSet>,
    pub category: Category,
}

/// A recoverable problem found while loading, e.g. evidence that names no
/// paragraph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadWarning {
    pub record: String,
    pub message: String,
}

fn normalize_text(s: &str) -> String {
    collapse_whitespace(s)
}

/// Paragraph lookup by normalized text.
struct TextIndex(HashMap<String, u32>);

impl TextIndex {
    fn new(doc: &Document) -> Self {
        let mut map = HashMap::new();
        for p in doc.paragraphs() {
            map.entry(normalize_text(&p.text)).or_insert(p.id);
        }
        TextIndex(map)
    }

    fn find(&self, text: &str) -> Option<u32> {
        self.0.get(&normalize_text(text)).copied()
    }
}

fn parse_json(bytes: &[u8]) -> Result<Value, IngestError> {
    serde_json::from_slice(bytes).map_err(|e| IngestError::Json(e.to_string()))
}

fn field<'a>(obj: &'a Value, key: &str, path: &str) -> Result<&'a Value, IngestError> {
    obj.get(key)
        .ok_or_else(|| schema(path, format!("missing field {key:?}")))
}

fn array<'a>(v: &'a Value, path: &str) -> Result<&'a Vec<Value>, IngestError> {
    v.as_array().ok_or_else(|| schema(path, "expected an array"))
}

fn string<'a>(v: &'a Value, path: &str) -> Result<&'a str, IngestError> {
    v.as_str().ok_or_else(|| schema(path, "expected a string"))
}

fn strings(v: &Value, path: &str) -> Result<Vec<String>, IngestError> {
    array(v, path)?
        .iter()
        .enumerate()
        .map(|(i, s)| string(s, &format!("{path}[{i}]")).map(str::to_string))
        .collect()
}

/// A QASPER paper after loading: its document and all of its questions.
#[derive(Debug, Clone, PartialEq)]
pub struct QasperPaper {
    pub document: Document,
    pub records: Vec<QaRecord>,
    pub warnings: Vec<LoadWarning>,
}

/// Accepts either one paper object or the published `{paper_id: paper}`
/// map and returns `(paper_id, paper)` pairs in key order.
fn qasper_papers(root: &Value) -> Result<Vec<(String, &Value)>, IngestError> {
    let obj = root.as_object().ok_or_else(|| schema("$", "expected an object"))?;
    if obj.contains_key("full_text") {
        let id = obj
            .get("id")
            .or_else(|| obj.get("paper_id"))
            .and_then(Value::as_str)
            .unwrap_or("paper")
            .to_string();
        return Ok(vec![(id, root)]);
    }
    let mut papers: Vec<(String, &Value)> = obj.iter().map(|(k, v)| (k.clone(), v)).collect();
    papers.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(papers)
}

fn load_qasper_paper_value(paper_id: &str, paper: &Value) -> Result<QasperPaper, IngestError> {
    let base = format!("$.{paper_id}");
    let mut warnings = Vec::new();
    let title = paper.get("title").and_then(Value::as_str).unwrap_or_default();
    let full_text_path = format!("{base}.full_text");
    let mut roots = Vec::new();
    for (i, section) in array(field(paper, "full_text", &base)?, &full_text_path)?
        .iter()
        .enumerate()
    {
        let spath = format!("{full_text_path}[{i}]");
        let name = match section.get("section_name") {
            None | Some(Value::Null) => UNTITLED_SECTION.to_string(),
            Some(v) => {
                let s = collapse_whitespace(string(v, &format!("{spath}.section_name"))?);
                if s.is_empty() {
                    UNTITLED_SECTION.to_string()
                } else {
                    s
                }
            }
        };
        let paragraphs: Vec<String> = strings(field(section, "paragraphs", &spath)?, &format!("{spath}.paragraphs"))?
            .into_iter()
            .filter(|p| !p.trim().is_empty())
            .collect();
        roots.push(OutlineNode::new(name, paragraphs));
    }
    let document = Document::from_outline(paper_id, title, roots);
    let index = TextIndex::new(&document);

    let qas_path = format!("{base}.qas");
    let mut records = Vec::new();
    for (qi, qa) in array(field(paper, "qas", &base)?, &qas_path)?.iter().enumerate() {
        let qpath = format!("{qas_path}[{qi}]");
        let text = string(field(qa, "question", &qpath)?, &format!("{qpath}.question"))?.to_string();
        let id = qa
            .get("question_id")
            .and_then(Value::as_str)
            .map(str::to_string)
            .unwrap_or_else(|| format!("{paper_id}#{qi}"));
        let mut gold_answers = Vec::new();
        let mut gold_evidence = Vec::new();
        let mut category = None;
        let answers_path = format!("{qpath}.answers");
        for (ai, wrapper) in array(field(qa, "answers", &qpath)?, &answers_path)?.iter().enumerate() {
            let apath = format!("{answers_path}[{ai}]");
            let answer = wrapper.get("answer").unwrap_or(wrapper);
            let unanswerable = answer.get("unanswerable").and_then(Value::as_bool).unwrap_or(false);
            let spans = match answer.get("extractive_spans") {
                Some(v) => strings(v, &format!("{apath}.extractive_spans"))?,
                None => Vec::new(),
            };
            let yes_no = answer.get("yes_no").and_then(Value::as_bool);
            let free_form = answer
                .get("free_form_answer")
                .and_then(Value::as_str)
                .unwrap_or_default()
                .trim()
                .to_string();
            let (cat, gold) = if unanswerable {
                (Category::Unanswerable, "Unanswerable".to_string())
            } else if !spans.is_empty() {
                (Category::Extractive, spans.join(", "))
            } else if let Some(b) = yes_no {
                (Category::YesNo, if b { "Yes" } else { "No" }.to_string())
            } else {
                (Category::Abstractive, free_form)
            };
            category.get_or_insert(cat);
            if !gold.is_empty() {
                gold_answers.push(gold);
            }

            let mut set = EvidenceSet::new();
            if !unanswerable {
                let evidence = match answer.get("evidence") {
                    Some(v) => strings(v, &format!("{apath}.evidence"))?,
                    None => Vec::new(),
                };
                for ev in evidence {
                    if ev.trim_start().starts_with("FLOAT SELECTED") {
                        warnings.push(LoadWarning {
                            record: id.clone(),
                            message: format!("dropped figure/table evidence: {}", preview(&ev)),
                        });
                        continue;
                    }
                    match index.find(&ev) {
                        Some(pid) => {
                            set.insert(EvidenceId::local(pid));
                        }
                        None => warnings.push(LoadWarning {
                            record: id.clone(),
                            message: format!("unresolved evidence: {}", preview(&ev)),
                        }),
                    }
                }
            }
            gold_evidence.push(set);
        }
        let category = category.unwrap_or(Category::Unanswerable);
        if gold_evidence.is_empty() {
            gold_evidence.push(EvidenceSet::new());
        }
        if gold_answers.is_empty() {
            if category != Category::Unanswerable {
                warnings.push(LoadWarning {
                    record: id.clone(),
                    message: "question has no gold answer text".into(),
                });
            }
            gold_answers.push("Unanswerable".into());
        }
        records.push(QaRecord {
            question: Question { id, text },
            doc_ids: vec![paper_id.to_string()],
            gold_answers,
            gold_evidence,
            category,
        });
    }
    Ok(QasperPaper {
        document,
        records,
        warnings,
    })
}

fn preview(s: &str) -> String {
    let s = collapse_whitespace(s);
    match s.char_indices().nth(80) {
        Some((i, _)) => format!("{}...", &s[..i]),
        None => s,
    }
}

/// Loads every paper of a QASPER file (single paper or `{id: paper}` map).
pub fn load_qasper_dataset(bytes: &[u8]) -> Result<Vec<QasperPaper>, IngestError> {
    let root = parse_json(bytes)?;
    qasper_papers(&root)?
        .into_iter()
        .map(|(id, v)| load_qasper_paper_value(&id, v))
        .collect()
}

/// Loads one question of a single-paper QASPER record.
pub fn load_qasper_record(
    bytes: &[u8],
    question_index: usize,
) -> Result<(Document, QaRecord, Vec<LoadWarning>), IngestError> {
    let mut papers = load_qasper_dataset(bytes)?;
    if papers.len() != 1 {
        return Err(IngestError::Format(format!(
            "expected one paper, found {}",
            papers.len()
        )));
    }
    let paper = papers.remove(0);
    let n = paper.records.len();
    let record =
        paper.records.into_iter().nth(question_index).ok_or_else(|| {
            IngestError::Format(format!("question index {question_index} out of range ({n} questions)"))
        })?;
    let warnings = paper
        .warnings
        .into_iter()
        .filter(|w| w.record == record.question.id)
        .collect();
    Ok((paper.document, record, warnings))
}

#[derive(Debug, Clone, PartialEq)]
pub struct HotpotPair {
    pub documents: [Document; 2],
    pub record: QaRecord,
    pub warnings: Vec<LoadWarning>,
}

fn load_hotpot_value(v: &Value, path: &str) -> Result<HotpotPair, IngestError> {
    let id = v
        .get("id")
        .and_then(Value::as_str)
        .ok_or_else(|| schema(path, "missing field \"id\""))?
        .to_string();
    let question = string(field(v, "question", path)?, &format!("{path}.question"))?.to_string();
    let gold_answers = match (v.get("answers"), v.get("answer")) {
        (Some(a), _) => strings(a, &format!("{path}.answers"))?,
        (None, Some(a)) => vec![string(a, &format!("{path}.answer"))?.to_string()],
        (None, None) => return Err(schema(path, "missing field \"answer\"")),
    };
    let docs_path = format!("{path}.documents");
    let raw_docs = array(field(v, "documents", path)?, &docs_path)?;
    if raw_docs.len() != 2 {
        return Err(IngestError::Format(format!(
            "record {id} references {} documents, expected 2",
            raw_docs.len()
        )));
    }
    let mut docs = Vec::with_capacity(2);
    for (i, d) in raw_docs.iter().enumerate() {
        let canon: CanonicalDocument =
            serde_json::from_value(d.clone()).map_err(|e| schema(&format!("{docs_path}[{i}]"), e.to_string()))?;
        docs.push(canon.into_document());
    }
    if docs[0].doc_id == docs[1].doc_id {
        return Err(IngestError::Format(format!("record {id} uses the same doc_id twice")));
    }
    let mut warnings = Vec::new();
    let mut set = EvidenceSet::new();
    let ev_path = format!("{path}.supporting_evidence");
    let evidence = match v.get("supporting_evidence") {
        Some(e) => array(e, &ev_path)?.as_slice(),
        None => &[],
    };
    for (i, ev) in evidence.iter().enumerate() {
        let epath = format!("{ev_path}[{i}]");
        let doc_id = string(field(ev, "doc_id", &epath)?, &format!("{epath}.doc_id"))?;
        let text = string(field(ev, "text", &epath)?, &format!("{epath}.text"))?;
        let Some(doc) = docs.iter().find(|d| d.doc_id == doc_id) else {
            warnings.push(LoadWarning {
                record: id.clone(),
                message: format!("evidence names unknown document {doc_id:?}"),
            });
            continue;
        };
        match TextIndex::new(doc).find(text) {
            Some(pid) => {
                set.insert(EvidenceId::namespaced(doc_id, pid));
            }
            None => warnings.push(LoadWarning {
                record: id.clone(),
                message: format!("unresolved evidence in {doc_id}: {}", preview(text)),
            }),
        }
    }
    let doc_ids = docs.iter().map(|d| d.doc_id.clone()).collect();
    let documents: [Document; 2] = docs.try_into().expect("two documents");
    Ok(HotpotPair {
        documents,
        record: QaRecord {
            question: Question { id, text: question },
            doc_ids,
            gold_answers,
            gold_evidence: vec![set],
            category: Category::MultiHop,
        },
        warnings,
    })
}

/// Loads one HotpotQA-Doc record:
/// `{id, question, answer, documents: [doc, doc], supporting_evidence: [{doc_id, text}]}`
/// with documents in the canonical document layout.
pub fn load_hotpot_pair(bytes: &[u8]) -> Result<HotpotPair, IngestError> {
    load_hotpot_value(&parse_json(bytes)?, "$")
}

/// Loads a JSON array of HotpotQA-Doc records (a lone record is accepted).
pub fn load_hotpot_dataset(bytes: &[u8]) -> Result<Vec<HotpotPair>, IngestError> {
    let root = parse_json(bytes)?;
    match &root {
        Value::Array(items) => items
            .iter()
            .enumerate()
            .map(|(i, v)| load_hotpot_value(v, &format!("$[{i}]")))
            .collect(),
        _ => Ok(vec![load_hotpot_value(&root, "$")?]),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFormat {
    Qasper,
    Hotpot,
}

impl std::str::FromStr for DatasetFormat {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "qasper" => Ok(DatasetFormat::Qasper),
            "hotpot" | "hotpotqa-doc" => Ok(DatasetFormat::Hotpot),
            other => Err(IngestError::Format(format!("unknown dataset format {other:?}"))),
        }
    }
}

/// Guesses the dataset format from the JSON shape.
pub fn detect_format(bytes: &[u8]) -> Result<DatasetFormat, IngestError> {
    let root = parse_json(bytes)?;
    let looks_hotpot = |v: &Value| v.get("documents").is_some();
    match &root {
        Value::Array(items) if items.first().is_none_or(looks_hotpot) => Ok(DatasetFormat::Hotpot),
        v if looks_hotpot(v) => Ok(DatasetFormat::Hotpot),
        Value::Object(_) => Ok(DatasetFormat::Qasper),
        _ => Err(IngestError::Format("cannot detect dataset format".into())),
    }
}

/// One question together with the documents it is asked over.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub documents: Vec<Document>,
    pub record: QaRecord,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub tasks: Vec<Task>,
    pub warnings: Vec<LoadWarning>,
}

pub fn load_dataset(bytes: &[u8], format: DatasetFormat) -> Result<Dataset, IngestError> {
    let mut out = Dataset::default();
    match format {
        DatasetFormat::Qasper => {
            for paper in load_qasper_dataset(bytes)? {
                out.warnings.extend(paper.warnings);
                for record in paper.records {
                    out.tasks.push(Task {
                        documents: vec![paper.document.clone()],
                        record,
                    });
                }
            }
        }
        DatasetFormat::Hotpot => {
            for pair in load_hotpot_dataset(bytes)? {
                out.warnings.extend(pair.warnings);
                out.tasks.push(Task {
                    documents: pair.documents.to_vec(),
                    record: pair.record,
                });
            }
        }
    }
    Ok(out)
}
