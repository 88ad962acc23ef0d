//! Cluster matching: per-cluster confidence m(q, c).
//!
//! The built-in matcher is one-vs-rest logistic regression over TF-IDF
//! question features. Scores from an external model (e.g. a fine-tuned
//! transformer) can be imported from a score file instead.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::ClusterModel;
use crate::dataset::{Question, QuestionDataset};
use crate::linear::{train_binary, BinaryLogistic, ModelError, TrainParams};
use crate::text::{QuestionFeaturizer, SparseVec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatcherModel {
    pub k: usize,
    pub classifiers: Vec<BinaryLogistic>,
    pub params: TrainParams,
}

/// Cluster ids holding any of the question's gold types, sorted.
pub fn gold_clusters(q: &Question, cm: &ClusterModel) -> Result<Vec<usize>, ModelError> {
    let mut out = q
        .gold_types
        .iter()
        .map(|t| cm.cluster_of(t).ok_or_else(|| ModelError::UnassignedType(t.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

/// A question is a positive for cluster c iff one of its gold types lies in c.
pub fn train_matcher(
    pool: &[&Question],
    cm: &ClusterModel,
    featurizer: &QuestionFeaturizer,
    params: &TrainParams,
) -> Result<MatcherModel, ModelError> {
    let features: Vec<SparseVec> = pool.iter().map(|q| featurizer.featurize(&q.text)).collect();
    let labels = pool
        .iter()
        .map(|q| gold_clusters(q, cm))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(train_matcher_on(&features, &labels, cm.k, featurizer.dim(), params))
}

/// Training on precomputed features; `labels[i]` lists the positive clusters
/// of example i.
pub fn train_matcher_on(
    features: &[SparseVec],
    labels: &[Vec<usize>],
    k: usize,
    dim: usize,
    params: &TrainParams,
) -> MatcherModel {
    let refs: Vec<&SparseVec> = features.iter().collect();
    let classifiers = (0..k)
        .into_par_iter()
        .map(|c| {
            let ys: Vec<bool> = labels.iter().map(|l| l.contains(&c)).collect();
            if !ys.iter().any(|&y| y) {
                log::warn!("cluster {c} has no positive training questions; it will score low everywhere");
            }
            train_binary(&refs, &ys, dim, params).0
        })
        .collect();
    MatcherModel {
        k,
        classifiers,
        params: *params,
    }
}

impl MatcherModel {
    pub fn score_features(&self, x: &SparseVec) -> Vec<f64> {
        self.classifiers.iter().map(|c| c.score(x)).collect()
    }
}

/// m(q, c) for every cluster: independent sigmoids, not a softmax.
pub fn score_clusters(mm: &MatcherModel, featurizer: &QuestionFeaturizer, q: &Question) -> Vec<f64> {
    mm.score_features(&featurizer.featurize(&q.text))
}

/// Per-question cluster scores loaded from a score file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExternalScores {
    pub k: usize,
    pub scores: BTreeMap<String, Vec<f64>>,
}

impl ExternalScores {
    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.scores.get(id).map(Vec::as_slice)
    }
}

/// Reads a score file. Rows for ids outside `dataset` are dropped with a
/// warning.
pub fn import_external_scores(path: &Path, dataset: &QuestionDataset) -> Result<ExternalScores, ModelError> {
    let text = fs::read_to_string(path).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut scores = parse_score_file(&text)?;
    let before = scores.scores.len();
    scores.scores.retain(|id, _| dataset.get(id).is_some());
    if scores.scores.len() < before {
        log::warn!("ignored {} score rows for unknown question ids", before - scores.scores.len());
    }
    Ok(scores)
}

pub fn parse_score_file(text: &str) -> Result<ExternalScores, ModelError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let err = |line: usize, reason: String| ModelError::ScoreFile { line, reason };
    let (_, header) = lines.next().ok_or_else(|| err(1, "empty score file".into()))?;
    let k = match header.split_whitespace().collect::<Vec<_>>().as_slice() {
        ["#k", k] => k.parse::<usize>().map_err(|_| err(1, format!("bad k `{k}`")))?,
        _ => return Err(err(1, "expected header `#k <k>`".into())),
    };
    let mut scores = BTreeMap::new();
    for (i, line) in lines {
        let line_no = i + 1;
        if line.starts_with('#') {
            continue;
        }
        let mut parts = line.trim_end_matches('\r').split('\t');
        let id = parts.next().unwrap_or_default().trim().to_string();
        let values: Vec<f64> = parts
            .map(|v| v.trim().parse::<f64>().map_err(|_| err(line_no, format!("bad score `{v}`"))))
            .collect::<Result<_, _>>()?;
        if values.len() != k {
            return Err(err(line_no, format!("expected {k} scores, found {}", values.len())));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(err(line_no, format!("score {v} outside [0, 1]")));
        }
        if scores.insert(id.clone(), values).is_some() {
            return Err(err(line_no, format!("duplicate question id `{id}`")));
        }
    }
    Ok(ExternalScores { k, scores })
}

pub fn render_score_file<'a>(k: usize, rows: impl IntoIterator<Item = (&'a str, &'a [f64])>) -> String {
    let mut out = format!("#k {k}\n");
    for (id, values) in rows {
        out.push_str(id);
        for v in values {
            let _ = write!(out, "\t{v}");
        }
        out.push('\n');
    }
    out
}
