//! Hierarchy-aware NDCG@k, MRR and end-to-end scoring.
//!
//! A predicted type earns gain `1 / (1 + d)` where `d` is its undirected
//! distance in the type hierarchy to the closest gold type; disconnected
//! types earn 0. An exact string match always earns 1, so gold types the KG
//! does not know can still be credited. NDCG is clamped to [0, 1] because
//! partial credit can push DCG above the exact-match ideal.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{CoarseCategory, Question, QuestionDataset};
use crate::kg_store::TypeSystem;
use crate::ranker::Submission;

pub const NDCG_KS: [usize; 3] = [3, 5, 10];
pub const GAIN_FUNCTION_ID: &str = "inverse_distance";
/// Largest tolerated fraction of ids present in only one of the two files.
pub const MAX_ID_MISMATCH: f64 = 0.05;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(
        "{unknown} prediction ids are not in the gold set and {missing} gold ids have no prediction \
         ({:.1}% mismatch); are the files paired correctly?",
        rate * 100.0
    )]
    IdMismatch { unknown: usize, missing: usize, rate: f64 },
    #[error("no questions to evaluate in {0} mode")]
    NothingToEvaluate(EvalMode),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    TypeOnly,
    EndToEnd,
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalMode::TypeOnly => "type_only",
            EvalMode::EndToEnd => "end_to_end",
        })
    }
}

impl FromStr for EvalMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "type_only" => Ok(EvalMode::TypeOnly),
            "end_to_end" => Ok(EvalMode::EndToEnd),
            other => Err(format!("unknown mode `{other}` (expected type_only or end_to_end)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Ndcg,
    Mrr,
}

impl Metric {
    /// Column names in report order.
    pub fn columns(self) -> Vec<String> {
        match self {
            Metric::Ndcg => NDCG_KS.iter().map(|k| format!("ndcg@{k}")).collect(),
            Metric::Mrr => vec!["mrr".into()],
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Ndcg => "ndcg",
            Metric::Mrr => "mrr",
        })
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ndcg" => Ok(Metric::Ndcg),
            "mrr" => Ok(Metric::Mrr),
            other => Err(format!("unknown metric `{other}` (expected ndcg or mrr)")),
        }
    }
}

/// Gains against one gold set, with hierarchy distances computed once.
pub struct GainTable<'a> {
    ts: &'a TypeSystem,
    gold: &'a [String],
    distances: Vec<Vec<Option<usize>>>,
}

impl<'a> GainTable<'a> {
    pub fn new(ts: &'a TypeSystem, gold: &'a [String]) -> Self {
        let distances = gold.iter().filter_map(|g| ts.distances_from(g).ok()).collect();
        Self { ts, gold, distances }
    }

    pub fn gain(&self, predicted: &str) -> f64 {
        if self.gold.iter().any(|g| g == predicted) {
            return 1.0;
        }
        let Some(p) = self.ts.position(predicted) else { return 0.0 };
        self.distances
            .iter()
            .filter_map(|d| d[p])
            .map(|d| 1.0 / (1.0 + d as f64))
            .fold(0.0, f64::max)
    }
}

pub fn gain(ts: &TypeSystem, predicted: &str, gold: &[String]) -> f64 {
    GainTable::new(ts, gold).gain(predicted)
}

/// `None` when the gold list is empty.
pub fn ndcg_at_k(ts: &TypeSystem, predicted: &[String], gold: &[String], k: usize) -> Option<f64> {
    ndcg_with(&GainTable::new(ts, gold), predicted, k)
}

fn discount(rank: usize) -> f64 {
    1.0 / ((rank + 1) as f64).log2()
}

fn ndcg_with(table: &GainTable<'_>, predicted: &[String], k: usize) -> Option<f64> {
    let distinct_gold: HashSet<&String> = table.gold.iter().collect();
    if distinct_gold.is_empty() {
        return None;
    }
    let dcg: f64 = predicted
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, t)| table.gain(t) * discount(i + 1))
        .sum();
    let idcg: f64 = (1..=k.min(distinct_gold.len())).map(discount).sum();
    if idcg == 0.0 {
        return Some(0.0);
    }
    Some((dcg / idcg).clamp(0.0, 1.0))
}

/// Reciprocal rank of the first exact gold hit, 0 when there is none.
pub fn mrr(predicted: &[String], gold: &[String]) -> f64 {
    predicted
        .iter()
        .position(|t| gold.contains(t))
        .map_or(0.0, |i| 1.0 / (i + 1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: EvalMode,
    pub metric: Metric,
    pub gain_function: String,
    pub ks: Vec<usize>,
    /// Column name → mean over evaluated questions.
    pub means: BTreeMap<String, f64>,
    pub question_ids: Vec<String>,
    /// Column name → score per entry of `question_ids`.
    pub per_question: BTreeMap<String, Vec<f64>>,
    /// Gold category → number of evaluated questions.
    pub category_counts: BTreeMap<String, usize>,
    /// Fraction of evaluated questions whose predicted category matches gold.
    pub category_accuracy: f64,
    pub skipped_empty_gold: usize,
    pub missing_predictions: usize,
    pub unknown_predictions: usize,
}

impl EvalReport {
    pub fn mean(&self, column: &str) -> Option<f64> {
        self.means.get(column).copied()
    }

    pub fn headline(&self) -> f64 {
        match self.metric {
            Metric::Ndcg => self.means["ndcg@3"],
            Metric::Mrr => self.means["mrr"],
        }
    }
}

fn score_question(
    ts: &TypeSystem,
    q: &Question,
    pred: Option<&Submission>,
    mode: EvalMode,
    metric: Metric,
) -> Vec<f64> {
    let columns = metric.columns().len();
    let Some(pred) = pred else { return vec![0.0; columns] };
    if mode == EvalMode::EndToEnd {
        if pred.category != q.category {
            return vec![0.0; columns];
        }
        if !q.is_resource() {
            return vec![1.0; columns];
        }
    }
    match metric {
        Metric::Ndcg => {
            let table = GainTable::new(ts, &q.gold_types);
            NDCG_KS
                .iter()
                .map(|&k| ndcg_with(&table, &pred.types, k).unwrap_or(0.0))
                .collect()
        }
        Metric::Mrr => vec![mrr(&pred.types, &q.gold_types)],
    }
}

pub fn evaluate_run(
    ts: &TypeSystem,
    predictions: &[Submission],
    gold: &QuestionDataset,
    mode: EvalMode,
    metric: Metric,
) -> Result<EvalReport, EvalError> {
    let by_id: HashMap<&str, &Submission> = predictions.iter().map(|p| (p.id.as_str(), p)).collect();
    let gold_ids: HashSet<&str> = gold.questions().iter().map(|q| q.id.as_str()).collect();
    let unknown = by_id.keys().filter(|id| !gold_ids.contains(*id)).count();
    let missing = gold_ids.iter().filter(|id| !by_id.contains_key(*id)).count();
    let union = gold_ids.len() + unknown;
    let rate = if union == 0 {
        0.0
    } else {
        (unknown + missing) as f64 / union as f64
    };
    if rate > MAX_ID_MISMATCH {
        return Err(EvalError::IdMismatch { unknown, missing, rate });
    }
    if unknown > 0 || missing > 0 {
        log::warn!("{unknown} unknown prediction ids ignored, {missing} questions without predictions score 0");
    }

    let mut skipped_empty_gold = 0;
    let evaluated: Vec<&Question> = gold
        .questions()
        .iter()
        .filter(|q| match q.category {
            Some(CoarseCategory::Resource) if q.gold_types.is_empty() => {
                skipped_empty_gold += 1;
                false
            }
            Some(CoarseCategory::Resource) => true,
            Some(_) => mode == EvalMode::EndToEnd,
            None => false,
        })
        .collect();
    if evaluated.is_empty() {
        return Err(EvalError::NothingToEvaluate(mode));
    }

    let scores: Vec<Vec<f64>> = evaluated
        .par_iter()
        .map(|q| score_question(ts, q, by_id.get(q.id.as_str()).copied(), mode, metric))
        .collect();

    let columns = metric.columns();
    let mut per_question = BTreeMap::new();
    let mut means = BTreeMap::new();
    for (c, name) in columns.iter().enumerate() {
        let col: Vec<f64> = scores.iter().map(|s| s[c]).collect();
        means.insert(name.clone(), col.iter().sum::<f64>() / col.len() as f64);
        per_question.insert(name.clone(), col);
    }
    let mut category_counts = BTreeMap::new();
    for q in &evaluated {
        if let Some(c) = q.category {
            *category_counts.entry(c.as_str().to_string()).or_insert(0) += 1;
        }
    }
    let category_hits = evaluated
        .iter()
        .filter(|q| by_id.get(q.id.as_str()).is_some_and(|p| p.category == q.category))
        .count();

    Ok(EvalReport {
        mode,
        metric,
        gain_function: GAIN_FUNCTION_ID.into(),
        ks: match metric {
            Metric::Ndcg => NDCG_KS.to_vec(),
            Metric::Mrr => vec![],
        },
        means,
        question_ids: evaluated.iter().map(|q| q.id.clone()).collect(),
        per_question,
        category_counts,
        category_accuracy: category_hits as f64 / evaluated.len() as f64,
        skipped_empty_gold,
        missing_predictions: missing,
        unknown_predictions: unknown,
    })
}

/// One line of the results table.
pub struct TableRow<'a> {
    pub method: String,
    pub type_only: Option<&'a EvalReport>,
    pub end_to_end: Option<&'a EvalReport>,
}

/// Aligned text table: one row per method, a type prediction block and an
/// end-to-end block of metric columns.
pub fn render_table(metric: Metric, rows: &[TableRow<'_>]) -> String {
    let columns = metric.columns();
    let method_w = rows.iter().map(|r| r.method.len()).max().unwrap_or(0).max(6);
    let col_w = 9;
    let block_w = col_w * columns.len();
    let mut out = String::new();
    let _ = writeln!(out, "{:method_w$}  {:<block_w$}  {:<block_w$}", "", "Type prediction", "End-to-end");
    let _ = write!(out, "{:method_w$}", "Method");
    for _ in 0..2 {
        out.push_str("  ");
        for c in &columns {
            let _ = write!(out, "{:>col_w$}", c.to_uppercase());
        }
    }
    out.push('\n');
    for r in rows {
        let _ = write!(out, "{:method_w$}", r.method);
        for block in [r.type_only, r.end_to_end] {
            out.push_str("  ");
            for c in &columns {
                match block.and_then(|b| b.mean(c)) {
                    Some(v) => {
                        let _ = write!(out, "{:>col_w$.3}", v);
                    }
                    None => {
                        let _ = write!(out, "{:>col_w$}", "-");
                    }
                }
            }
        }
        out.push('\n');
    }
    out
}
