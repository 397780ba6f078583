//! Metrics, per-category and per-length aggregation, and cost ratios.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evidence::EvidenceSet;
use crate::gateway::UsageLedger;
use crate::ingest::Category;
use crate::qa::normalize_answer;

pub const DEFAULT_BUCKET_BOUNDARIES: [usize; 3] = [2000, 4000, 6000];

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    fn perfect() -> Self {
        Prf {
            precision: 1.0,
            recall: 1.0,
            f1: 1.0,
        }
    }
}

fn prf_single(pred: &EvidenceSet, gold: &EvidenceSet) -> Prf {
    match (pred.is_empty(), gold.is_empty()) {
        (true, true) => return Prf::perfect(),
        (true, false) | (false, true) => return Prf::default(),
        _ => {}
    }
    let hit = pred.intersection_len(gold);
    let (np, ng) = (pred.len() as f64, gold.len() as f64);
    Prf {
        precision: hit as f64 / np,
        recall: hit as f64 / ng,
        // harmonic mean in closed form, rounded once
        f1: (2 * hit) as f64 / (np + ng),
    }
}

/// Set precision/recall/F1 against the reference with the highest F1
/// (first one on ties). No references counts as one empty reference.
pub fn evidence_prf1(pred: &EvidenceSet, gold_refs: &[EvidenceSet]) -> Prf {
    if gold_refs.is_empty() {
        return prf_single(pred, &EvidenceSet::new());
    }
    let mut best = prf_single(pred, &gold_refs[0]);
    for gold in &gold_refs[1..] {
        let cand = prf_single(pred, gold);
        if cand.f1 > best.f1 {
            best = cand;
        }
    }
    best
}

fn token_f1(pred: &[String], gold: &[String]) -> f64 {
    if pred.is_empty() || gold.is_empty() {
        return if pred.is_empty() && gold.is_empty() { 1.0 } else { 0.0 };
    }
    let mut counts: BTreeMap<&str, i64> = BTreeMap::new();
    for t in gold {
        *counts.entry(t).or_insert(0) += 1;
    }
    let mut common = 0usize;
    for t in pred {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    (2 * common) as f64 / (pred.len() + gold.len()) as f64
}

/// Token F1 over normalized answers, maximized over the gold answers.
pub fn answer_token_f1(pred: &str, golds: &[String]) -> f64 {
    let p = normalize_answer(pred);
    golds
        .iter()
        .map(|g| token_f1(&p, &normalize_answer(g)))
        .fold(0.0, f64::max)
}

/// Strictly increasing length boundaries; `n` boundaries give `n + 1`
/// left-closed buckets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct BucketBoundaries(Vec<usize>);

impl BucketBoundaries {
    pub fn new(bounds: Vec<usize>) -> Result<Self> {
        if bounds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "bucket boundaries must be strictly increasing: {bounds:?}"
            )));
        }
        Ok(BucketBoundaries(bounds))
    }

    pub fn labels(&self) -> Vec<String> {
        let mut lower = 0;
        let mut out = Vec::with_capacity(self.0.len() + 1);
        for &b in &self.0 {
            out.push(format!("{lower}–{b}"));
            lower = b;
        }
        out.push(format!("{lower}+"));
        out
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }
}

impl Default for BucketBoundaries {
    fn default() -> Self {
        BucketBoundaries(DEFAULT_BUCKET_BOUNDARIES.to_vec())
    }
}

impl TryFrom<Vec<usize>> for BucketBoundaries {
    type Error = Error;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<BucketBoundaries> for Vec<usize> {
    fn from(b: BucketBoundaries) -> Self {
        b.0
    }
}

/// Label of the bucket holding a document of `doc_tokens` tokens.
pub fn bucket_by_length(doc_tokens: usize, boundaries: &BucketBoundaries) -> String {
    let idx = boundaries.0.iter().take_while(|&&b| doc_tokens >= b).count();
    boundaries.labels().swap_remove(idx)
}

/// Outcome of one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub question_id: String,
    pub category: Category,
    pub doc_tokens: usize,
    pub length_bucket: String,
    pub predicted_evidence: EvidenceSet,
    pub gold_evidence: Vec<EvidenceSet>,
    pub predicted_answer: Option<String>,
    pub gold_answers: Vec<String>,
    pub ledger: UsageLedger,
    pub evidence: Prf,
    pub answer_f1: Option<f64>,
}

impl QuestionRecord {
    /// Builds a record and scores it.
    #[allow(clippy::too_many_arguments)]
    pub fn scored(
        question_id: &str,
        category: Category,
        doc_tokens: usize,
        boundaries: &BucketBoundaries,
        predicted_evidence: EvidenceSet,
        gold_evidence: Vec<EvidenceSet>,
        predicted_answer: Option<String>,
        gold_answers: Vec<String>,
        ledger: UsageLedger,
    ) -> Self {
        let evidence = evidence_prf1(&predicted_evidence, &gold_evidence);
        let answer_f1 = predicted_answer.as_deref().map(|a| answer_token_f1(a, &gold_answers));
        QuestionRecord {
            question_id: question_id.to_string(),
            category,
            doc_tokens,
            length_bucket: bucket_by_length(doc_tokens, boundaries),
            predicted_evidence,
            gold_evidence,
            predicted_answer,
            gold_answers,
            ledger,
            evidence,
            answer_f1,
        }
    }
}

/// Unweighted means over a group of records. Tokens and calls count the
/// retrieval stages only; `mean_total_tokens` counts every stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub count: usize,
    pub answer_f1: Option<f64>,
    pub evidence_precision: f64,
    pub evidence_recall: f64,
    pub evidence_f1: f64,
    pub mean_tokens: f64,
    pub mean_api_calls: f64,
    pub mean_total_tokens: f64,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn metrics(records: &[&QuestionRecord]) -> Metrics {
    let answered: Vec<f64> = records.iter().filter_map(|r| r.answer_f1).collect();
    Metrics {
        count: records.len(),
        answer_f1: (!answered.is_empty()).then(|| mean(answered.into_iter())),
        evidence_precision: mean(records.iter().map(|r| r.evidence.precision)),
        evidence_recall: mean(records.iter().map(|r| r.evidence.recall)),
        evidence_f1: mean(records.iter().map(|r| r.evidence.f1)),
        mean_tokens: mean(records.iter().map(|r| r.ledger.retrieval().tokens_processed as f64)),
        mean_api_calls: mean(records.iter().map(|r| r.ledger.retrieval().api_calls as f64)),
        mean_total_tokens: mean(records.iter().map(|r| r.ledger.total().tokens_processed as f64)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub name: String,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub overall: Metrics,
    pub by_category: Vec<GroupMetrics>,
    pub by_length: Vec<GroupMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub strategy: String,
    pub bucket_boundaries: BucketBoundaries,
    pub records: Vec<QuestionRecord>,
    pub aggregates: Aggregates,
}

/// Aggregates records (sorted by question id, so input order is irrelevant)
/// into overall, per-category and per-length-bucket means.
pub fn aggregate_report(
    strategy: &str,
    mut records: Vec<QuestionRecord>,
    boundaries: &BucketBoundaries,
) -> Result<RunReport> {
    if records.is_empty() {
        return Err(Error::Config("cannot aggregate an empty run".into()));
    }
    records.sort_by(|a, b| a.question_id.cmp(&b.question_id));
    let aggregates = compute_aggregates(&records, boundaries);
    Ok(RunReport {
        strategy: strategy.to_string(),
        bucket_boundaries: boundaries.clone(),
        records,
        aggregates,
    })
}

fn compute_aggregates(records: &[QuestionRecord], boundaries: &BucketBoundaries) -> Aggregates {
    let all: Vec<&QuestionRecord> = records.iter().collect();
    let by_category = Category::ALL
        .iter()
        .filter_map(|c| {
            let group: Vec<&QuestionRecord> = records.iter().filter(|r| r.category == *c).collect();
            (!group.is_empty()).then(|| GroupMetrics {
                name: c.to_string(),
                metrics: metrics(&group),
            })
        })
        .collect();
    let by_length = boundaries
        .labels()
        .into_iter()
        .filter_map(|label| {
            let group: Vec<&QuestionRecord> = records.iter().filter(|r| r.length_bucket == label).collect();
            (!group.is_empty()).then(|| GroupMetrics {
                name: label,
                metrics: metrics(&group),
            })
        })
        .collect();
    Aggregates {
        overall: metrics(&all),
        by_category,
        by_length,
    }
}

impl RunReport {
    /// Checks that the stored aggregates follow from the records.
    pub fn verify(&self) -> Result<()> {
        let recomputed = compute_aggregates(&self.records, &self.bucket_boundaries);
        if recomputed != self.aggregates {
            return Err(Error::Config("report aggregates do not match its records".into()));
        }
        Ok(())
    }

    pub fn question_ids(&self) -> BTreeSet<&str> {
        self.records.iter().map(|r| r.question_id.as_str()).collect()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: RunReport =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid report: {e}")))?;
        report.verify()?;
        Ok(report)
    }

    /// Aggregates grid, one row per group.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "group",
            "name",
            "count",
            "answer_f1",
            "evidence_precision",
            "evidence_recall",
            "evidence_f1",
            "mean_tokens",
            "mean_api_calls",
            "mean_total_tokens",
        ])
        .expect("in-memory write");
        let rows = std::iter::once(("overall", "all", &self.aggregates.overall))
            .chain(
                self.aggregates
                    .by_category
                    .iter()
                    .map(|g| ("category", g.name.as_str(), &g.metrics)),
            )
            .chain(
                self.aggregates
                    .by_length
                    .iter()
                    .map(|g| ("length", g.name.as_str(), &g.metrics)),
            );
        for (group, name, m) in rows {
            w.write_record([
                group.to_string(),
                name.to_string(),
                m.count.to_string(),
                m.answer_f1.map(|f| f.to_string()).unwrap_or_default(),
                m.evidence_precision.to_string(),
                m.evidence_recall.to_string(),
                m.evidence_f1.to_string(),
                m.mean_tokens.to_string(),
                m.mean_api_calls.to_string(),
                m.mean_total_tokens.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}

/// `a` relative to `b`. A ratio with a zero denominator is `None` unless
/// both sides are zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRatios {
    pub questions: usize,
    pub token_ratio: Option<f64>,
    pub call_ratio: Option<f64>,
    pub f1_retention: Option<f64>,
    pub a: Metrics,
    pub b: Metrics,
}

fn ratio(a: f64, b: f64) -> Option<f64> {
    if b == 0.0 {
        (a == 0.0).then_some(1.0)
    } else {
        Some(a / b)
    }
}

pub fn cost_ratio_report(a: &RunReport, b: &RunReport) -> Result<CostRatios> {
    let (qa, qb) = (a.question_ids(), b.question_ids());
    if qa != qb {
        let only_a = qa.difference(&qb).count();
        let only_b = qb.difference(&qa).count();
        return Err(Error::QuestionSetMismatch(format!(
            "{only_a} question(s) only in {}, {only_b} only in {}",
            a.strategy, b.strategy
        )));
    }
    let (ma, mb) = (&a.aggregates.overall, &b.aggregates.overall);
    Ok(CostRatios {
        questions: qa.len(),
        token_ratio: ratio(ma.mean_tokens, mb.mean_tokens),
        call_ratio: ratio(ma.mean_api_calls, mb.mean_api_calls),
        f1_retention: ratio(ma.evidence_f1, mb.evidence_f1),
        a: ma.clone(),
        b: mb.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::STAGE_FINE_RETRIEVAL;
    use proptest::prelude::*;

    fn set(ids: &[u32]) -> EvidenceSet {
        EvidenceSet::from_local(ids.iter().copied())
    }

    #[test]
    fn evidence_examples() {
        let got = evidence_prf1(&set(&[1, 2]), &[set(&[2, 3])]);
        assert_eq!(
            got,
            Prf {
                precision: 0.5,
                recall: 0.5,
                f1: 0.5
            }
        );
        assert_eq!(evidence_prf1(&set(&[]), &[set(&[])]), Prf::perfect());
        assert_eq!(evidence_prf1(&set(&[1]), &[set(&[1]), set(&[2, 3])]), Prf::perfect());
        assert_eq!(evidence_prf1(&set(&[]), &[set(&[4])]), Prf::default());
    }

    #[test]
    fn answer_examples() {
        let g = |s: &str| vec![s.to_string()];
        assert_eq!(answer_token_f1("The cat", &g("the cat")), 1.0);
        assert_eq!(answer_token_f1("the cat sat", &g("cat sat down")), 0.8);
        assert_eq!(answer_token_f1("Unanswerable", &g("Unanswerable")), 1.0);
        assert_eq!(answer_token_f1("", &g("a")), 1.0);
        assert_eq!(answer_token_f1("x", &["y".into(), "x".into()]), 1.0);
    }

    #[test]
    fn buckets() {
        let b = BucketBoundaries::default();
        assert_eq!(bucket_by_length(1500, &b), "0–2000");
        assert_eq!(bucket_by_length(2000, &b), "2000–4000");
        assert_eq!(bucket_by_length(9000, &b), "6000+");
        assert_eq!(b.labels().len(), 4);
        assert!(BucketBoundaries::new(vec![5, 5]).is_err());
        assert!(serde_json::from_str::<BucketBoundaries>("[3, 1]").is_err());
    }

    fn record(id: &str, cat: Category, pred: &[u32], gold: &[u32], tokens: u64) -> QuestionRecord {
        let mut ledger = UsageLedger::new();
        ledger.record(STAGE_FINE_RETRIEVAL, tokens, 0);
        QuestionRecord::scored(
            id,
            cat,
            tokens as usize,
            &BucketBoundaries::default(),
            set(pred),
            vec![set(gold)],
            None,
            vec![],
            ledger,
        )
    }

    #[test]
    fn aggregation_means_and_partitions() {
        let recs = vec![
            record("q2", Category::Extractive, &[1, 2, 3, 4, 5], &[1, 2], 3000),
            record("q1", Category::YesNo, &[1], &[1], 1000),
            record("q3", Category::YesNo, &[], &[1], 100),
        ];
        let report = aggregate_report("s", recs, &BucketBoundaries::default()).unwrap();
        assert_eq!(report.records[0].question_id, "q1");
        let counts: usize = report.aggregates.by_category.iter().map(|g| g.metrics.count).sum();
        assert_eq!(counts, 3);
        assert_eq!(report.aggregates.by_length[0].name, "0–2000");
        assert_eq!(report.aggregates.overall.mean_tokens, 4100.0 / 3.0);
        assert_eq!(report.aggregates.overall.answer_f1, None);

        let back = RunReport::from_json(&report.to_json()).unwrap();
        assert_eq!(back, report);
        assert!(report.to_csv().starts_with("group,name,count"));
        assert_eq!(report.to_csv().lines().count(), 1 + 1 + 2 + 2);
    }

    #[test]
    fn two_question_mean() {
        let recs = vec![
            record("a", Category::Extractive, &[1, 2], &[1, 2, 3, 4, 5, 6, 7, 8], 0),
            record("b", Category::Extractive, &[1, 2, 3], &[1, 2, 3, 4, 5, 6, 7], 0),
        ];
        let r = aggregate_report("s", recs, &BucketBoundaries::default()).unwrap();
        assert_eq!(r.records[0].evidence.f1, 0.4);
        assert_eq!(r.records[1].evidence.f1, 0.6);
        assert_eq!(r.aggregates.overall.evidence_f1, 0.5);
    }

    #[test]
    fn ratios() {
        let a = aggregate_report(
            "a",
            vec![record("q", Category::Extractive, &[1], &[1], 10)],
            &BucketBoundaries::default(),
        )
        .unwrap();
        let same = cost_ratio_report(&a, &a).unwrap();
        assert_eq!(
            (same.token_ratio, same.call_ratio, same.f1_retention),
            (Some(1.0), Some(1.0), Some(1.0))
        );
        let other = aggregate_report(
            "b",
            vec![record("z", Category::Extractive, &[1], &[1], 10)],
            &BucketBoundaries::default(),
        )
        .unwrap();
        assert!(matches!(
            cost_ratio_report(&a, &other),
            Err(Error::QuestionSetMismatch(_))
        ));
        assert_eq!(ratio(0.0, 0.0), Some(1.0));
        assert_eq!(ratio(1.0, 0.0), None);
    }

    fn small_set() -> impl Strategy<Value = Vec<u32>> {
        proptest::collection::btree_set(0u32..6, 0..6).prop_map(|s| s.into_iter().collect())
    }

    proptest! {
        #[test]
        fn precision_recall_swap(pred in small_set(), gold in small_set()) {
            let ab = evidence_prf1(&set(&pred), &[set(&gold)]);
            let ba = evidence_prf1(&set(&gold), &[set(&pred)]);
            prop_assert_eq!(ab.precision, ba.recall);
            prop_assert_eq!(ab.recall, ba.precision);
        }

        #[test]
        fn answer_f1_range(a in "[a-c ]{0,12}", b in "[a-c ]{0,12}") {
            let f = answer_token_f1(&a, std::slice::from_ref(&b));
            prop_assert!((0.0..=1.0).contains(&f));
            let mut na = normalize_answer(&a);
            let mut nb = normalize_answer(&b);
            na.sort();
            nb.sort();
            prop_assert_eq!(f == 1.0, na == nb);
        }

        #[test]
        fn aggregation_is_permutation_invariant(seed in any::<u64>()) {
            use rand_chacha::rand_core::{RngCore, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut recs: Vec<QuestionRecord> = (0..8)
                .map(|i| record(&format!("q{i}"), Category::ALL[i % 5], &[i as u32 % 3], &[1], (i * 900) as u64))
                .collect();
            let base = aggregate_report("s", recs.clone(), &BucketBoundaries::default()).unwrap();
            for i in (1..recs.len()).rev() {
                let j = (rng.next_u32() as usize) % (i + 1);
                recs.swap(i, j);
            }
            prop_assert_eq!(aggregate_report("s", recs, &BucketBoundaries::default()).unwrap(), base);
        }
    }
}
