//! Paired and swept runs: anonymized section names and chunk-size grids.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{execute, write_run_dir, RunContext, RunOutput};
use crate::discourse::{anonymize_section_names, flatten_preorder, Document};
use crate::error::{Error, Result};
use crate::eval::{cost_ratio_report, CostRatios};
use crate::ingest::Task;

pub const DEFAULT_CHUNK_GRID: [usize; 4] = [500, 1000, 2000, 3500];

/// Paragraph ids grouped by section, in flattened order.
fn partition(doc: &Document) -> Result<Vec<Vec<u32>>> {
    Ok(flatten_preorder(doc)?
        .into_iter()
        .map(|s| s.paragraphs.iter().map(|p| p.id).collect())
        .collect())
}

fn same_content(a: &Document, b: &Document) -> Result<bool> {
    let texts = |d: &Document| {
        d.paragraphs()
            .into_iter()
            .map(|p| (p.id, p.text.clone()))
            .collect::<Vec<_>>()
    };
    Ok(a.doc_id == b.doc_id && texts(a) == texts(b) && partition(a)? == partition(b)?)
}

pub fn anonymize_tasks(tasks: &[Task], seed: u64) -> Vec<Task> {
    tasks
        .iter()
        .map(|t| Task {
            documents: t.documents.iter().map(|d| anonymize_section_names(d, seed)).collect(),
            record: t.record.clone(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnonymizeOutcome {
    pub seed: u64,
    pub ratios: CostRatios,
    #[serde(skip)]
    pub original: Option<RunOutput>,
    #[serde(skip)]
    pub anonymized: Option<RunOutput>,
}

/// Runs the tasks as given and with every section renamed to a random
/// identifier, writing `original/`, `anonymized/` and `ablation.json`.
pub fn anonymize_ablation(tasks: &[Task], ctx: &RunContext, out_dir: &Path) -> Result<AnonymizeOutcome> {
    let seed = ctx.config.seed;
    let renamed = anonymize_tasks(tasks, seed);
    for (a, b) in tasks.iter().zip(&renamed) {
        for (da, db) in a.documents.iter().zip(&b.documents) {
            if !same_content(da, db)? {
                return Err(Error::Config(format!(
                    "anonymization changed the content of {}",
                    da.doc_id
                )));
            }
        }
    }
    let original = execute(tasks, ctx)?;
    let anonymized = execute(&renamed, ctx)?;
    let ratios = cost_ratio_report(&anonymized.report, &original.report)?;
    write_run_dir(&out_dir.join("original"), &original, &ctx.config)?;
    write_run_dir(&out_dir.join("anonymized"), &anonymized, &ctx.config)?;
    let outcome = AnonymizeOutcome {
        seed,
        ratios,
        original: Some(original),
        anonymized: Some(anonymized),
    };
    let mut json = serde_json::to_string_pretty(&outcome).expect("serializable");
    json.push('\n');
    let path = out_dir.join("ablation.json");
    std::fs::write(&path, json).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub chunk_size: usize,
    pub evidence_precision: f64,
    pub evidence_recall: f64,
    pub evidence_f1: f64,
    pub mean_api_calls: f64,
    pub mean_tokens: f64,
}

/// One run per chunk size, written to `chunk-<size>/`, plus `sweep.csv`.
pub fn chunk_sweep(tasks: &[Task], ctx: &RunContext, grid: &[usize], out_dir: &Path) -> Result<Vec<SweepPoint>> {
    if !ctx.strategy.uses_chunks() {
        return Err(Error::Config(format!(
            "chunk sweep needs a chunk-based strategy, not {}",
            ctx.strategy
        )));
    }
    if grid.is_empty() || grid.contains(&0) {
        return Err(Error::Config("chunk grid must be non-empty and positive".into()));
    }
    let mut points = Vec::with_capacity(grid.len());
    for &size in grid {
        let mut config = ctx.config.clone();
        config.chunk_size = size;
        let sized = RunContext::with_gateway(&config, ctx.deps.gateway.clone(), ctx.scripted.clone())?;
        let output = execute(tasks, &sized)?;
        write_run_dir(&out_dir.join(format!("chunk-{size}")), &output, &config)?;
        let m = &output.report.aggregates.overall;
        points.push(SweepPoint {
            chunk_size: size,
            evidence_precision: m.evidence_precision,
            evidence_recall: m.evidence_recall,
            evidence_f1: m.evidence_f1,
            mean_api_calls: m.mean_api_calls,
            mean_tokens: m.mean_tokens,
        });
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for p in &points {
        w.serialize(p).expect("in-memory write");
    }
    let csv = String::from_utf8(w.into_inner().expect("flush")).expect("utf-8");
    let path = out_dir.join("sweep.csv");
    std::fs::write(&path, csv).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(points)
}
